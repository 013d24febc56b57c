//! Attack inputs: the target object, scene images with their cameras, and
//! the content/style images for the patch. Loadable from disk or generated
//! synthetically for desk-scale runs.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::asset_io::config::{AssetKind, AssetsConfig};
use crate::asset_io::{load_image, load_mask, AssetError, BinaryMask, ImageRGB};
use crate::geometry::{CameraModel, PhysicalObject};
use crate::resample::Resampler;
use crate::pseudolidar::Intrinsics;

/// Contents of `camera.json`. The principal point defaults to the image
/// centre when absent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraFile {
    pub f: f64,
    pub tan_alpha: f64,
    pub h_cam: f64,
    #[serde(default)]
    pub cx: Option<f64>,
    #[serde(default)]
    pub cy: Option<f64>,
}

impl CameraFile {
    pub fn load(path: &Path) -> Result<Self, AssetError> {
        let text = fs::read_to_string(path).map_err(|e| AssetError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| AssetError::Metadata {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
    }

    pub fn camera(&self) -> Result<CameraModel, AssetError> {
        CameraModel::new(self.f, self.tan_alpha, self.h_cam).map_err(|e| AssetError::Metadata {
            path: PathBuf::from("camera.json"),
            detail: e.to_string(),
        })
    }

    /// `(fx, fy, cx, cy)` for an image of the given size.
    pub fn intrinsics(&self, height: usize, width: usize) -> Intrinsics {
        Intrinsics {
            fx: self.f,
            fy: self.f,
            cx: self.cx.unwrap_or((width as f64 - 1.0) / 2.0),
            cy: self.cy.unwrap_or((height as f64 - 1.0) / 2.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SceneAsset {
    pub id: String,
    pub image: ImageRGB,
    pub camera: CameraModel,
}

#[derive(Debug, Clone)]
pub struct AttackAssets {
    pub object: PhysicalObject,
    pub scenes: Vec<SceneAsset>,
    /// Initial patch content, resized to the object frame.
    pub content: ImageRGB,
    pub style: ImageRGB,
    pub shape: Option<BinaryMask>,
}

/// Bilinear resize of an image to `(h, w)`.
pub fn resize_image(img: &ImageRGB, h: usize, w: usize) -> ImageRGB {
    if (img.height(), img.width()) == (h, w) {
        return img.clone();
    }
    ImageRGB::clamped(Resampler::resize(img.height(), img.width(), h, w).apply(img.tensor()))
}

fn is_image(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

/// Every PNG/JPEG in `dir` (sorted by file name) with the shared
/// `camera.json` from the same directory.
pub fn load_scenes(dir: &Path) -> Result<(Vec<SceneAsset>, CameraFile), AssetError> {
    let cam_file = CameraFile::load(&dir.join("camera.json"))?;
    let camera = cam_file.camera()?;
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| AssetError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image(p))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(AssetError::Metadata {
            path: dir.to_path_buf(),
            detail: "no scene images found".into(),
        });
    }
    let scenes = paths
        .iter()
        .map(|p| {
            Ok(SceneAsset {
                id: p.file_stem().and_then(|s| s.to_str()).unwrap_or("scene").to_string(),
                image: load_image(p)?,
                camera,
            })
        })
        .collect::<Result<_, AssetError>>()?;
    Ok((scenes, cam_file))
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, AssetError> {
    p.as_deref().ok_or_else(|| AssetError::Metadata {
        path: PathBuf::from(key),
        detail: "path not configured".into(),
    })
}

impl AttackAssets {
    /// Loads or generates the assets described by the config. `seed` drives
    /// the synthetic generator only.
    pub fn from_config(cfg: &AssetsConfig, seed: u64) -> Result<Self, AssetError> {
        match cfg.kind {
            AssetKind::Synthetic => Ok(synthetic_assets(cfg, seed)),
            AssetKind::Files => {
                let image = load_image(required(&cfg.object_image, "assets.object_image")?)?;
                let mask = load_mask(required(&cfg.object_mask, "assets.object_mask")?)?;
                let object = PhysicalObject::new(image, mask, cfg.object_height_m)
                    .map_err(|e| AssetError::InvalidImage(e.to_string()))?;
                let (scenes, _) = load_scenes(required(&cfg.scenes_dir, "assets.scenes_dir")?)?;
                let style = load_image(required(&cfg.style_image, "assets.style_image")?)?;
                let content = match &cfg.content_image {
                    Some(p) => load_image(p)?,
                    None => object.image.clone(),
                };
                let content = resize_image(&content, object.image.height(), object.image.width());
                let shape = cfg.shape_mask.as_deref().map(load_mask).transpose()?;
                Ok(Self {
                    object,
                    scenes,
                    content,
                    style,
                    shape,
                })
            }
        }
    }
}

/// Camera used by the synthetic scenes: the horizon sits at mid-height.
pub fn synthetic_camera(scene_h: usize) -> CameraFile {
    CameraFile {
        f: scene_h as f64,
        tan_alpha: 2.0,
        h_cam: 1.5,
        cx: None,
        cy: None,
    }
}

/// A sky/road scene with lane markings and seeded clutter.
pub fn synthetic_scene(h: usize, w: usize, rng: &mut impl Rng) -> ImageRGB {
    let horizon = h / 2;
    let sky = [rng.random_range(0.55..0.75), rng.random_range(0.65..0.8), rng.random_range(0.8..0.95)];
    let road = rng.random_range(0.3..0.45);
    let lane_phase = rng.random_range(0..4usize);
    let trees: Vec<(usize, f64)> = (0..w).map(|_| (rng.random_range(0..3usize), rng.random_range(0.15..0.4))).collect();
    let grain: Vec<f64> = (0..h * w).map(|_| rng.random_range(-0.03..0.03)).collect();
    ImageRGB::from_fn(h, w, |y, x| {
        let n = grain[y * w + x];
        let px = if y < horizon {
            let (height, g) = trees[x];
            if y + height + 1 >= horizon {
                [0.2 * g + n, g + 0.2 + n, 0.2 * g + n]
            } else {
                let t = y as f64 / horizon.max(1) as f64;
                [sky[0] - 0.1 * t + n, sky[1] - 0.05 * t + n, sky[2] + n]
            }
        } else {
            let depth = (y - horizon) as f64 / (h - horizon).max(1) as f64;
            let centre = w as f64 / 2.0;
            let half = 0.5 + depth * centre * 0.15;
            let lane = ((x as f64 - centre).abs() < half) && (y + lane_phase) % 4 < 2;
            if lane {
                [0.9 + n, 0.9 + n, 0.85 + n]
            } else {
                let v = road + 0.1 * depth + n;
                [v, v, v + 0.02]
            }
        };
        [px[0].clamp(0.0, 1.0), px[1].clamp(0.0, 1.0), px[2].clamp(0.0, 1.0)]
    })
}

/// A boxy vehicle rear: body, rear window, two lights and a bumper. The mask
/// cuts the two top corners.
pub fn synthetic_object(h: usize, w: usize, rng: &mut impl Rng) -> (ImageRGB, BinaryMask) {
    let body = [rng.random_range(0.5..0.8), rng.random_range(0.1..0.3), rng.random_range(0.1..0.3)];
    let img = ImageRGB::from_fn(h, w, |y, x| {
        let fy = y as f64 / h as f64;
        let fx = x as f64 / w as f64;
        if fy < 0.4 && (0.2..0.8).contains(&fx) {
            [0.15, 0.2, 0.3]
        } else if (0.5..0.7).contains(&fy) && !(0.2..0.8).contains(&fx) {
            [0.95, 0.85, 0.2]
        } else if fy >= 0.85 {
            [0.1, 0.1, 0.1]
        } else {
            body
        }
    });
    let mask = BinaryMask::from_fn(h, w, |y, x| !(y == 0 && (x == 0 || x + 1 == w)));
    (img, mask)
}

/// Patch content: a smooth colour field.
pub fn synthetic_content(h: usize, w: usize, rng: &mut impl Rng) -> ImageRGB {
    let a = rng.random_range(0.0..std::f64::consts::TAU);
    ImageRGB::from_fn(h, w, |y, x| {
        let t = (y as f64 * a.cos() + x as f64 * a.sin()) / (h + w) as f64;
        [0.4 + 0.3 * t, 0.5 - 0.2 * t, 0.45]
    })
}

/// Style exemplar: rust-like blotches.
pub fn synthetic_style(h: usize, w: usize, rng: &mut impl Rng) -> ImageRGB {
    let noise: Vec<f64> = (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect();
    ImageRGB::from_fn(h, w, |y, x| {
        let v = noise[y * w + x];
        [0.45 + 0.35 * v, 0.25 + 0.2 * v, 0.1 + 0.1 * v]
    })
}

fn synthetic_assets(cfg: &AssetsConfig, seed: u64) -> AttackAssets {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [sh, sw] = cfg.synthetic_scene_size;
    let [oh, ow] = cfg.synthetic_object_size;
    let camera = synthetic_camera(sh).camera().expect("synthetic camera is valid");
    let (image, mask) = synthetic_object(oh, ow, &mut rng);
    let object = PhysicalObject::new(image, mask, cfg.object_height_m).expect("synthetic object is valid");
    let scenes = (0..cfg.synthetic_scenes.max(1))
        .map(|i| SceneAsset {
            id: format!("synthetic_{i:03}"),
            image: synthetic_scene(sh, sw, &mut rng),
            camera,
        })
        .collect();
    AttackAssets {
        object,
        scenes,
        content: synthetic_content(oh, ow, &mut rng),
        style: synthetic_style(16, 16, &mut rng),
        shape: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asset_io::save_image;

    #[test]
    fn synthetic_assets_are_seeded() {
        let cfg = AssetsConfig {
            kind: AssetKind::Synthetic,
            ..AssetsConfig::default()
        };
        let a = AttackAssets::from_config(&cfg, 5).unwrap();
        let b = AttackAssets::from_config(&cfg, 5).unwrap();
        assert_eq!(a.scenes.len(), 4);
        assert_eq!(a.scenes[2].image, b.scenes[2].image);
        assert_eq!(a.object, b.object);
        assert_eq!((a.content.height(), a.content.width()), (8, 8));
    }

    #[test]
    fn scene_directory_needs_a_camera() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        save_image(&synthetic_scene(8, 8, &mut rng), dir.path().join("a.png")).unwrap();
        assert!(matches!(load_scenes(dir.path()), Err(AssetError::MissingFile(_))));
        let cam = synthetic_camera(8);
        fs::write(dir.path().join("camera.json"), serde_json::to_string(&cam).unwrap()).unwrap();
        let (scenes, file) = load_scenes(dir.path()).unwrap();
        assert_eq!(scenes.len(), 1);
        assert_eq!(file, cam);
        assert_eq!(file.intrinsics(8, 8), Intrinsics { fx: 8.0, fy: 8.0, cx: 3.5, cy: 3.5 });
    }
}

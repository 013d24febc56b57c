//! Input-transformation defenses applied in front of the depth model, and
//! the benign-versus-attack error table used to compare them.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::asset_io::{from_rgb8, to_rgb8, ImageRGB};
use crate::assets::AttackAssets;
use crate::attack_loss::{patched_object, LossError};
use crate::geometry::{apply_transform, paste, PhysicalObject, TransformSpec};
use crate::metrics::{mean_depth_error, MetricsError, PatchSpec};
use crate::mde::{predict_depth, DepthModel, MdeError};
use crate::nn::{NetworkError, Sequential};
use crate::tensor::Tensor3;

pub const JPEG_QUALITY: [u8; 2] = [20, 90];
pub const BITS: [u8; 2] = [2, 5];
pub const MEDIAN_KERNEL: [usize; 2] = [5, 25];
pub const NOISE_SIGMA: [f64; 2] = [0.01, 0.1];

#[derive(Debug, thiserror::Error)]
pub enum DefenseError {
    #[error("invalid defense {0}")]
    Invalid(String),
    #[error("autoencoder model not found at {0}")]
    AutoencoderMissing(PathBuf),
    #[error("autoencoder: {0}")]
    Autoencoder(String),
    #[error("jpeg codec: {0}")]
    Codec(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Depth(#[from] MdeError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DefenseSpec {
    /// Passes images through unchanged; the reference row of a table.
    None,
    Jpeg { quality: u8 },
    BitDepth { bits: u8 },
    MedianBlur { kernel: usize },
    GaussianNoise { sigma: f64 },
    /// Reconstruction through an external model; `None` means no model was
    /// given and the image passes through with a warning.
    Autoencoder { model: Option<PathBuf> },
}

impl DefenseSpec {
    pub fn validate(&self) -> Result<(), DefenseError> {
        let bad = |what: String| Err(DefenseError::Invalid(what));
        match *self {
            DefenseSpec::Jpeg { quality } if !(JPEG_QUALITY[0]..=JPEG_QUALITY[1]).contains(&quality) => {
                bad(format!("jpeg quality {quality} outside {JPEG_QUALITY:?}"))
            }
            DefenseSpec::BitDepth { bits } if !(BITS[0]..=BITS[1]).contains(&bits) => {
                bad(format!("bit depth {bits} outside {BITS:?}"))
            }
            DefenseSpec::MedianBlur { kernel }
                if kernel % 2 == 0 || !(MEDIAN_KERNEL[0]..=MEDIAN_KERNEL[1]).contains(&kernel) =>
            {
                bad(format!("median kernel {kernel} must be odd in {MEDIAN_KERNEL:?}"))
            }
            DefenseSpec::GaussianNoise { sigma } if !(NOISE_SIGMA[0]..=NOISE_SIGMA[1]).contains(&sigma) => {
                bad(format!("noise sigma {sigma} outside {NOISE_SIGMA:?}"))
            }
            _ => Ok(()),
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            DefenseSpec::None => "none",
            DefenseSpec::Jpeg { .. } => "jpeg",
            DefenseSpec::BitDepth { .. } => "bits",
            DefenseSpec::MedianBlur { .. } => "median",
            DefenseSpec::GaussianNoise { .. } => "noise",
            DefenseSpec::Autoencoder { .. } => "autoencoder",
        }
    }

    pub fn param(&self) -> String {
        match self {
            DefenseSpec::None => String::new(),
            DefenseSpec::Jpeg { quality } => quality.to_string(),
            DefenseSpec::BitDepth { bits } => bits.to_string(),
            DefenseSpec::MedianBlur { kernel } => kernel.to_string(),
            DefenseSpec::GaussianNoise { sigma } => sigma.to_string(),
            DefenseSpec::Autoencoder { model } => model.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
        }
    }
}

impl fmt::Display for DefenseSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.param().as_str() {
            "" => f.write_str(self.family()),
            p => write!(f, "{}:{p}", self.family()),
        }
    }
}

/// Parses `jpeg:50`, `bits:3`, `median:5`, `noise:0.05`, `autoencoder`,
/// `autoencoder:<dir>` or `none`, and validates the parameter range.
impl FromStr for DefenseSpec {
    type Err = DefenseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (family, param) = match s.split_once(':') {
            Some((f, p)) => (f.trim(), Some(p.trim())),
            None => (s.trim(), None),
        };
        let need = || param.ok_or_else(|| DefenseError::Invalid(format!("{family} needs a parameter, e.g. {family}:N")));
        let num = |p: &str| -> Result<f64, DefenseError> {
            p.parse().map_err(|_| DefenseError::Invalid(format!("{s}: {p:?} is not a number")))
        };
        let int = |p: &str| -> Result<usize, DefenseError> {
            p.parse().map_err(|_| DefenseError::Invalid(format!("{s}: {p:?} is not an integer")))
        };
        let spec = match family {
            "none" => DefenseSpec::None,
            "jpeg" => DefenseSpec::Jpeg {
                quality: u8::try_from(int(need()?)?).map_err(|_| DefenseError::Invalid(s.into()))?,
            },
            "bits" | "bit_depth" => DefenseSpec::BitDepth {
                bits: u8::try_from(int(need()?)?).map_err(|_| DefenseError::Invalid(s.into()))?,
            },
            "median" | "median_blur" => DefenseSpec::MedianBlur { kernel: int(need()?)? },
            "noise" | "gaussian_noise" => DefenseSpec::GaussianNoise { sigma: num(need()?)? },
            "autoencoder" => DefenseSpec::Autoencoder {
                model: param.filter(|p| !p.is_empty()).map(PathBuf::from),
            },
            other => return Err(DefenseError::Invalid(format!("unknown defense family {other:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Uniform quantization to `bits` per channel. Any width from 1 to 16 is
/// accepted here; the configured defense range is narrower.
pub fn bit_depth(image: &ImageRGB, bits: u8) -> ImageRGB {
    assert!((1..=16).contains(&bits), "bit depth must be in 1..=16");
    let levels = ((1u32 << bits) - 1) as f64;
    ImageRGB::clamped(image.tensor().map(|v| (v * levels).round() / levels))
}

/// Per-channel median over a `k x k` window with replicated edges.
pub fn median_blur(image: &ImageRGB, kernel: usize) -> ImageRGB {
    assert!(kernel % 2 == 1, "median kernel must be odd");
    let t = image.tensor();
    let (c, h, w) = t.shape();
    let r = (kernel / 2) as isize;
    let mut window = Vec::with_capacity(kernel * kernel);
    let mut out = Tensor3::zeros(c, h, w);
    for ch in 0..c {
        let plane = t.plane(ch);
        for y in 0..h {
            for x in 0..w {
                window.clear();
                for dy in -r..=r {
                    let sy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    for dx in -r..=r {
                        let sx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                        window.push(plane[sy * w + sx]);
                    }
                }
                let mid = window.len() / 2;
                let (_, m, _) = window.select_nth_unstable_by(mid, f64::total_cmp);
                out.set(ch, y, x, *m);
            }
        }
    }
    ImageRGB::clamped(out)
}

pub fn gaussian_noise(image: &ImageRGB, sigma: f64, seed: u64) -> ImageRGB {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and non-negative");
    let mut t = image.tensor().clone();
    for v in t.as_mut_slice() {
        *v += normal.sample(&mut rng);
    }
    ImageRGB::clamped(t)
}

/// Baseline JPEG encode at `quality`, then decode.
pub fn jpeg(image: &ImageRGB, quality: u8) -> Result<ImageRGB, DefenseError> {
    let mut bytes = Vec::new();
    image::codecs::jpeg::JpegEncoder::new_with_quality(&mut bytes, quality)
        .encode_image(&to_rgb8(image))
        .map_err(|e| DefenseError::Codec(e.to_string()))?;
    let decoded = image::load_from_memory_with_format(&bytes, image::ImageFormat::Jpeg)
        .map_err(|e| DefenseError::Codec(e.to_string()))?;
    Ok(from_rgb8(&decoded.to_rgb8()))
}

/// Reconstruction slot for autoencoder defenses.
pub trait Reconstructor {
    fn reconstruct(&self, image: &ImageRGB) -> Result<ImageRGB, DefenseError>;
}

/// A convolutional autoencoder stored as `network.json` plus `weights.f32`
/// in one directory. Output is clamped to `[0, 1]`.
pub struct ConvAutoencoder {
    net: Sequential,
}

impl ConvAutoencoder {
    pub fn load(dir: &Path) -> Result<Self, DefenseError> {
        let json = dir.join("network.json");
        if !json.exists() {
            return Err(DefenseError::AutoencoderMissing(dir.to_path_buf()));
        }
        let net = Sequential::load(&json, &dir.join("weights.f32"))
            .map_err(|e: NetworkError| DefenseError::Autoencoder(e.to_string()))?;
        Ok(Self { net })
    }

    pub fn from_network(net: Sequential) -> Self {
        Self { net }
    }
}

impl Reconstructor for ConvAutoencoder {
    fn reconstruct(&self, image: &ImageRGB) -> Result<ImageRGB, DefenseError> {
        let acts = self
            .net
            .forward(image.tensor())
            .map_err(|e| DefenseError::Autoencoder(e.to_string()))?;
        let out = acts.last();
        if out.shape() != image.tensor().shape() {
            return Err(DefenseError::Autoencoder(format!(
                "output shape {:?} differs from input {:?}",
                out.shape(),
                image.tensor().shape()
            )));
        }
        Ok(ImageRGB::clamped(out.clone()))
    }
}

/// A spec paired with whatever it needs at run time, so a loaded
/// autoencoder is reused across images.
pub struct Defense {
    spec: DefenseSpec,
    reconstructor: Option<Box<dyn Reconstructor>>,
}

impl Defense {
    pub fn new(spec: DefenseSpec) -> Result<Self, DefenseError> {
        spec.validate()?;
        let reconstructor = match &spec {
            DefenseSpec::Autoencoder { model: Some(dir) } => {
                Some(Box::new(ConvAutoencoder::load(dir)?) as Box<dyn Reconstructor>)
            }
            DefenseSpec::Autoencoder { model: None } => {
                warn!("autoencoder defense requested without a model; images pass through unchanged");
                None
            }
            _ => None,
        };
        Ok(Self { spec, reconstructor })
    }

    /// Autoencoder defense backed by a caller-provided model.
    pub fn with_reconstructor(reconstructor: Box<dyn Reconstructor>) -> Self {
        Self {
            spec: DefenseSpec::Autoencoder { model: None },
            reconstructor: Some(reconstructor),
        }
    }

    pub fn spec(&self) -> &DefenseSpec {
        &self.spec
    }

    pub fn apply(&self, image: &ImageRGB, seed: u64) -> Result<ImageRGB, DefenseError> {
        Ok(match self.spec {
            DefenseSpec::None => image.clone(),
            DefenseSpec::Jpeg { quality } => jpeg(image, quality)?,
            DefenseSpec::BitDepth { bits } => bit_depth(image, bits),
            DefenseSpec::MedianBlur { kernel } => median_blur(image, kernel),
            DefenseSpec::GaussianNoise { sigma } => gaussian_noise(image, sigma, seed),
            DefenseSpec::Autoencoder { .. } => match &self.reconstructor {
                Some(r) => r.reconstruct(image)?,
                None => image.clone(),
            },
        })
    }
}

/// One-shot convenience over [`Defense::apply`].
pub fn apply_defense(image: &ImageRGB, spec: &DefenseSpec, seed: u64) -> Result<ImageRGB, DefenseError> {
    Defense::new(spec.clone())?.apply(image, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseRow {
    pub family: String,
    pub param: String,
    #[serde(rename = "benign_E_d")]
    pub benign_e_d: f64,
    #[serde(rename = "attack_E_d")]
    pub attack_e_d: f64,
}

/// For every defense: benign error is the depth change the defense alone
/// causes on the unpatched composite, attack error is the remaining gap
/// between defended benign and defended adversarial composites. Both are
/// averaged over `draws`. Noise seeds depend on the draw index only, so the
/// benign and adversarial images of a draw see the same noise.
pub fn defense_eval(
    assets: &AttackAssets,
    patch: PatchSpec<'_>,
    model: &dyn DepthModel,
    draws: &[(usize, TransformSpec)],
    defenses: &[Defense],
    seed: u64,
) -> Result<Vec<DefenseRow>, DefenseError> {
    if draws.is_empty() {
        return Err(MetricsError::NoScenes.into());
    }
    let adv_obj = patched_object(&assets.object, patch.patch, patch.regions, patch.steepness, patch.shape)?;
    let mut composites = Vec::with_capacity(draws.len());
    for (i, spec) in draws {
        let scene = &assets.scenes[*i];
        let bounds = (scene.image.height(), scene.image.width());
        let place = |o: &PhysicalObject| -> Result<_, LossError> {
            let (t, _) = apply_transform(o, spec, bounds)?;
            Ok(paste(&scene.image, &t, &scene.camera, spec.horizontal_col)?)
        };
        let benign = place(&assets.object)?;
        let adv = place(&adv_obj)?;
        let clean_depth = predict_depth(model, &benign.scene_adv)?;
        composites.push((benign, adv, clean_depth));
    }
    let n = draws.len() as f64;
    defenses
        .iter()
        .map(|d| {
            let (mut benign_e, mut attack_e) = (0.0, 0.0);
            for (k, (benign, adv, clean)) in composites.iter().enumerate() {
                let s = seed.wrapping_add(k as u64);
                let db = predict_depth(model, &d.apply(&benign.scene_adv, s)?)?;
                let da = predict_depth(model, &d.apply(&adv.scene_adv, s)?)?;
                benign_e += mean_depth_error(clean, &db, &benign.scene_mask)?;
                attack_e += mean_depth_error(&db, &da, &benign.scene_mask)?;
            }
            Ok(DefenseRow {
                family: d.spec().family().to_string(),
                param: d.spec().param(),
                benign_e_d: benign_e / n,
                attack_e_d: attack_e / n,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn img(h: usize, w: usize, f: impl Fn(usize, usize, usize) -> f64) -> ImageRGB {
        ImageRGB::clamped(Tensor3::from_fn(3, h, w, f))
    }

    fn eight_bit(seed: u64) -> ImageRGB {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals: Vec<f64> = (0..3 * 6 * 7).map(|_| rng.random_range(0..=255u32) as f64 / 255.0).collect();
        ImageRGB::clamped(Tensor3::from_vec(3, 6, 7, vals))
    }

    #[test]
    fn parse_and_validate() {
        assert_eq!("jpeg:50".parse::<DefenseSpec>().unwrap(), DefenseSpec::Jpeg { quality: 50 });
        assert_eq!("bits:3".parse::<DefenseSpec>().unwrap(), DefenseSpec::BitDepth { bits: 3 });
        assert_eq!("median:5".parse::<DefenseSpec>().unwrap(), DefenseSpec::MedianBlur { kernel: 5 });
        assert_eq!(
            "noise:0.05".parse::<DefenseSpec>().unwrap(),
            DefenseSpec::GaussianNoise { sigma: 0.05 }
        );
        assert_eq!(
            "autoencoder".parse::<DefenseSpec>().unwrap(),
            DefenseSpec::Autoencoder { model: None }
        );
        for bad in ["jpeg:10", "jpeg:95", "bits:1", "bits:6", "median:4", "median:27", "noise:0.2", "blur:3", "jpeg"] {
            assert!(bad.parse::<DefenseSpec>().is_err(), "{bad}");
        }
        assert_eq!(DefenseSpec::MedianBlur { kernel: 7 }.to_string(), "median:7");
    }

    #[test]
    fn bit_depth_examples() {
        let p = img(1, 1, |_, _, _| 0.40);
        assert!((bit_depth(&p, 2).get(0, 0, 0) - 1.0 / 3.0).abs() < 1e-15);
        let x = eight_bit(1);
        assert_eq!(bit_depth(&x, 8), x);
    }

    #[test]
    fn median_blur_of_constant_is_identity() {
        let c = ImageRGB::filled(9, 11, [0.2, 0.5, 0.9]);
        for k in [5, 7, 25] {
            assert_eq!(median_blur(&c, k), c);
        }
    }

    #[test]
    fn median_blur_removes_an_isolated_spike() {
        let mut t = Tensor3::filled(3, 7, 7, 0.3);
        t.set(1, 3, 3, 1.0);
        let out = median_blur(&ImageRGB::clamped(t), 5);
        assert_eq!(out.get(1, 3, 3), 0.3);
    }

    #[test]
    fn noise_is_seeded() {
        let x = eight_bit(2);
        assert_eq!(gaussian_noise(&x, 0.05, 9), gaussian_noise(&x, 0.05, 9));
        assert_ne!(gaussian_noise(&x, 0.05, 9), gaussian_noise(&x, 0.05, 10));
    }

    #[test]
    fn jpeg_reconstruction_is_bounded() {
        let x = img(16, 16, |c, y, x| 0.2 + 0.05 * c as f64 + 0.02 * (y + x) as f64);
        for q in [20, 50, 90] {
            let out = jpeg(&x, q).unwrap();
            let err = x
                .tensor()
                .as_slice()
                .iter()
                .zip(out.tensor().as_slice())
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / x.tensor().as_slice().len() as f64;
            assert!(err < 0.05, "quality {q}: mean error {err}");
        }
    }

    #[test]
    fn autoencoder_without_model_is_identity_and_missing_model_fails() {
        let x = eight_bit(3);
        let d = Defense::new(DefenseSpec::Autoencoder { model: None }).unwrap();
        assert_eq!(d.apply(&x, 0).unwrap(), x);
        let missing = DefenseSpec::Autoencoder {
            model: Some(PathBuf::from("/nonexistent/autoencoder")),
        };
        assert!(matches!(Defense::new(missing), Err(DefenseError::AutoencoderMissing(_))));
    }

    #[test]
    fn autoencoder_loads_from_disk() {
        use crate::nn::LayerSpec;
        let specs = [LayerSpec::Conv {
            in_channels: 3,
            out_channels: 3,
            kernel: 3,
            dilation: 1,
            padding: crate::nn::Padding::Replicate,
        }];
        let net = Sequential::seeded(&specs, 4, 1.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        net.save(&dir.path().join("network.json"), &dir.path().join("weights.f32")).unwrap();
        let spec = DefenseSpec::Autoencoder {
            model: Some(dir.path().to_path_buf()),
        };
        let x = eight_bit(5);
        let out = apply_defense(&x, &spec, 0).unwrap();
        assert_eq!(out.tensor().shape(), x.tensor().shape());
        assert!(out.tensor().as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    proptest! {
        #[test]
        fn defenses_keep_images_valid(seed in 0u64..1000, bits in 2u8..=5, k in prop::sample::select(vec![5usize, 7, 9]), sigma in 0.01f64..0.1) {
            let x = eight_bit(seed);
            let q = bit_depth(&x, bits);
            prop_assert_eq!(bit_depth(&q, bits), q.clone());
            prop_assert_eq!(median_blur(&x, k), median_blur(&x, k));
            let outs = [
                q,
                median_blur(&x, k),
                gaussian_noise(&x, sigma, seed),
                jpeg(&x, 20 + (seed % 71) as u8).unwrap(),
            ];
            for o in outs {
                prop_assert!(o.tensor().as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }
}

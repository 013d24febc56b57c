//! Attack evaluation: depth error, affected ratio, geometric ground truth,
//! placement sweeps and detection bookkeeping.

use serde::{Deserialize, Serialize};

use crate::asset_io::config::EvalConfig;
use crate::asset_io::{BinaryMask, DepthGrid};
use crate::assets::AttackAssets;
use crate::attack_loss::{patched_object, LossError};
use crate::geometry::{apply_transform, paste, CameraModel, GeometryError, PhysicalObject, TransformSpec};
use crate::mask::RegionParams;
use crate::mde::{predict_depth, DepthModel, MdeError};
use crate::tensor::Tensor3;

/// Pixels whose error is at least this many meters count as affected.
pub const DEFAULT_THRESHOLD_M: f64 = 10.0;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("object mask is empty")]
    EmptyMask,
    #[error("grids are {benign:?} and {adv:?}, mask is {mask:?}")]
    Misaligned {
        benign: (usize, usize),
        adv: (usize, usize),
        mask: (usize, usize),
    },
    #[error("pixel height must be positive")]
    ZeroHeight,
    #[error("no detection outcomes")]
    NoOutcomes,
    #[error("no scenes to evaluate")]
    NoScenes,
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Depth(#[from] MdeError),
}

fn masked_abs_errors<'a>(
    benign: &'a DepthGrid,
    adv: &'a DepthGrid,
    mask: &'a BinaryMask,
) -> Result<impl Iterator<Item = f64> + 'a, MetricsError> {
    let b = (benign.height(), benign.width());
    let a = (adv.height(), adv.width());
    let m = (mask.height(), mask.width());
    if a != b || m != b {
        return Err(MetricsError::Misaligned { benign: b, adv: a, mask: m });
    }
    if mask.is_empty() {
        return Err(MetricsError::EmptyMask);
    }
    Ok(benign
        .values()
        .as_slice()
        .iter()
        .zip(adv.values().as_slice())
        .zip(mask.bits())
        .filter(|(_, &on)| on)
        .map(|((x, y), _)| (x - y).abs()))
}

/// Mean absolute depth difference over the object mask, in meters.
pub fn mean_depth_error(benign: &DepthGrid, adv: &DepthGrid, mask: &BinaryMask) -> Result<f64, MetricsError> {
    let n = mask.count() as f64;
    Ok(masked_abs_errors(benign, adv, mask)?.sum::<f64>() / n)
}

/// Fraction of object pixels whose depth moved by at least `threshold`.
pub fn affected_ratio(
    benign: &DepthGrid,
    adv: &DepthGrid,
    mask: &BinaryMask,
    threshold: f64,
) -> Result<f64, MetricsError> {
    let n = mask.count() as f64;
    let hit = masked_abs_errors(benign, adv, mask)?.filter(|&e| e >= threshold).count();
    Ok(hit as f64 / n)
}

/// Pinhole range of an upright object of known height spanning `s` rows.
pub fn depth_from_height(cam: &CameraModel, height_m: f64, s: f64) -> Result<f64, MetricsError> {
    if s <= 0.0 || !s.is_finite() {
        return Err(MetricsError::ZeroHeight);
    }
    Ok(cam.f * height_m / s)
}

pub fn detection_rate(outcomes: &[bool]) -> Result<f64, MetricsError> {
    if outcomes.is_empty() {
        return Err(MetricsError::NoOutcomes);
    }
    Ok(outcomes.iter().filter(|&&d| d).count() as f64 / outcomes.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub scene: String,
    pub distance_m: f64,
    pub lateral_m: f64,
    pub e_d: f64,
    pub r_a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedCell {
    pub scene: String,
    pub distance_m: f64,
    pub lateral_m: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceSummary {
    pub distance_m: f64,
    pub mean_e_d: f64,
    pub mean_r_a: f64,
    pub cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSummary {
    pub scene: String,
    pub mean_e_d: f64,
    pub mean_r_a: f64,
    pub cells: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionCounts {
    pub detected: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean over evaluated cells.
    pub e_d: f64,
    pub r_a: f64,
    pub threshold_m: f64,
    pub distances_m: Vec<f64>,
    pub laterals_m: Vec<f64>,
    pub cells: Vec<SweepCell>,
    pub skipped: Vec<SkippedCell>,
    pub per_distance: Vec<DistanceSummary>,
    pub per_scene: Vec<SceneSummary>,
    pub detection: Option<DetectionCounts>,
    /// Per-pixel absolute errors over every evaluated object pixel, for CDFs.
    #[serde(skip)]
    pub pixel_errors: Vec<f64>,
}

/// The placement for an object at longitudinal `z` and lateral `x` meters:
/// scale so its height matches the pinhole projection, column so its centre
/// lands at `cx + f x / z`.
pub fn sweep_transform(
    cam: &CameraModel,
    object: &PhysicalObject,
    scene_w: usize,
    z: f64,
    x: f64,
) -> Result<TransformSpec, String> {
    let px = object.pixel_height() as f64;
    let scale = cam.f * object.height_m / (z * px);
    let mut spec = TransformSpec::identity(0);
    spec.scale = scale;
    let (_, w) = spec.scaled_dims(object.image.height(), object.image.width());
    let centre = scene_w as f64 / 2.0 + cam.f * x / z;
    let left = (centre - w as f64 / 2.0).round();
    if left < 0.0 || left + w as f64 > scene_w as f64 {
        return Err(format!("object columns [{left}, {}) leave a {scene_w}-wide frame", left + w as f64));
    }
    spec.horizontal_col = left as usize;
    Ok(spec)
}

fn mean(v: impl Iterator<Item = f64>) -> (f64, usize) {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (if n == 0 { 0.0 } else { s / n as f64 }, n)
}

/// The patch as evaluated: pixels, regions and the settings that turn them
/// into a printed object.
#[derive(Debug, Clone, Copy)]
pub struct PatchSpec<'a> {
    pub patch: &'a Tensor3,
    pub regions: &'a [RegionParams],
    pub steepness: f64,
    pub shape: Option<&'a BinaryMask>,
}

/// Composes benign and patched objects into every scene at every grid point
/// under the same transform and compares the predicted depths. Cells where
/// the object would leave the frame are recorded in `skipped`.
pub fn placement_sweep(
    assets: &AttackAssets,
    patch: PatchSpec<'_>,
    model: &dyn DepthModel,
    eval: &EvalConfig,
) -> Result<EvalReport, MetricsError> {
    let scenes = &assets.scenes[..eval.scenes.min(assets.scenes.len())];
    if scenes.is_empty() {
        return Err(MetricsError::NoScenes);
    }
    let benign_obj = &assets.object;
    let adv_obj = patched_object(benign_obj, patch.patch, patch.regions, patch.steepness, patch.shape)?;
    let mut cells = Vec::new();
    let mut skipped = Vec::new();
    let mut pixel_errors = Vec::new();

    for scene in scenes {
        let (sh, sw) = (scene.image.height(), scene.image.width());
        for &z in &eval.distances_m {
            for &x in &eval.laterals_m {
                let skip = |reason: String| SkippedCell {
                    scene: scene.id.clone(),
                    distance_m: z,
                    lateral_m: x,
                    reason,
                };
                let spec = match sweep_transform(&scene.camera, benign_obj, sw, z, x) {
                    Ok(s) => s,
                    Err(r) => {
                        skipped.push(skip(r));
                        continue;
                    }
                };
                let place = |o: &PhysicalObject| -> Result<_, GeometryError> {
                    let (t, _) = apply_transform(o, &spec, (sh, sw))?;
                    paste(&scene.image, &t, &scene.camera, spec.horizontal_col)
                };
                let (benign, adv) = match (place(benign_obj), place(&adv_obj)) {
                    (Ok(b), Ok(a)) => (b, a),
                    (Err(e), _) | (_, Err(e)) => {
                        skipped.push(skip(e.to_string()));
                        continue;
                    }
                };
                if benign.scene_mask.is_empty() {
                    skipped.push(skip("object has no visible pixels".into()));
                    continue;
                }
                let d_b = predict_depth(model, &benign.scene_adv)?;
                let d_a = predict_depth(model, &adv.scene_adv)?;
                let m = &benign.scene_mask;
                pixel_errors.extend(masked_abs_errors(&d_b, &d_a, m)?);
                cells.push(SweepCell {
                    scene: scene.id.clone(),
                    distance_m: z,
                    lateral_m: x,
                    e_d: mean_depth_error(&d_b, &d_a, m)?,
                    r_a: affected_ratio(&d_b, &d_a, m, eval.threshold_m)?,
                });
            }
        }
    }

    let per_distance = eval
        .distances_m
        .iter()
        .map(|&z| {
            let at = || cells.iter().filter(move |c| c.distance_m == z);
            let (mean_e_d, n) = mean(at().map(|c| c.e_d));
            let (mean_r_a, _) = mean(at().map(|c| c.r_a));
            DistanceSummary {
                distance_m: z,
                mean_e_d,
                mean_r_a,
                cells: n,
            }
        })
        .collect();
    let per_scene = scenes
        .iter()
        .map(|s| {
            let at = || cells.iter().filter(|c| c.scene == s.id);
            let (mean_e_d, n) = mean(at().map(|c| c.e_d));
            let (mean_r_a, _) = mean(at().map(|c| c.r_a));
            SceneSummary {
                scene: s.id.clone(),
                mean_e_d,
                mean_r_a,
                cells: n,
            }
        })
        .collect();
    let (e_d, _) = mean(cells.iter().map(|c| c.e_d));
    let (r_a, _) = mean(cells.iter().map(|c| c.r_a));
    Ok(EvalReport {
        e_d,
        r_a,
        threshold_m: eval.threshold_m,
        distances_m: eval.distances_m.clone(),
        laterals_m: eval.laterals_m.clone(),
        cells,
        skipped,
        per_distance,
        per_scene,
        detection: None,
        pixel_errors,
    })
}

/// Mean E_d and R_a of a patch over explicit (scene index, transform) draws.
pub fn errors_on_draws(
    assets: &AttackAssets,
    patch: PatchSpec<'_>,
    model: &dyn DepthModel,
    draws: &[(usize, TransformSpec)],
    threshold: f64,
) -> Result<(f64, f64), MetricsError> {
    if draws.is_empty() {
        return Err(MetricsError::NoScenes);
    }
    let adv_obj = patched_object(&assets.object, patch.patch, patch.regions, patch.steepness, patch.shape)?;
    let (mut e, mut r) = (0.0, 0.0);
    for (i, spec) in draws {
        let scene = &assets.scenes[*i];
        let bounds = (scene.image.height(), scene.image.width());
        let place = |o: &PhysicalObject| -> Result<_, MetricsError> {
            let (t, _) = apply_transform(o, spec, bounds).map_err(LossError::from)?;
            Ok(paste(&scene.image, &t, &scene.camera, spec.horizontal_col).map_err(LossError::from)?)
        };
        let (b, a) = (place(&assets.object)?, place(&adv_obj)?);
        let d_b = predict_depth(model, &b.scene_adv)?;
        let d_a = predict_depth(model, &a.scene_adv)?;
        e += mean_depth_error(&d_b, &d_a, &b.scene_mask)?;
        r += affected_ratio(&d_b, &d_a, &b.scene_mask, threshold)?;
    }
    let n = draws.len() as f64;
    Ok((e / n, r / n))
}

impl EvalReport {
    /// Attaches detector outcomes from an external callback.
    pub fn with_detections(mut self, outcomes: &[bool]) -> Self {
        self.detection = Some(DetectionCounts {
            detected: outcomes.iter().filter(|&&d| d).count(),
            total: outcomes.len(),
        });
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asset_io::config::RunConfig;
    use crate::mde::ToyDepthModel;
    use crate::tensor::Grid;
    use proptest::prelude::*;

    fn dg(h: usize, w: usize, v: Vec<f64>) -> DepthGrid {
        DepthGrid::new(Grid::from_vec(h, w, v), "test").unwrap()
    }

    #[test]
    fn hand_examples() {
        let a = dg(1, 3, vec![5.0, 5.0, 5.0]);
        let m = BinaryMask::full(1, 3);
        assert_eq!(mean_depth_error(&a, &a, &m).unwrap(), 0.0);
        let b = dg(1, 3, vec![11.0, 11.0, 11.0]);
        assert_eq!(mean_depth_error(&a, &b, &m).unwrap(), 6.0);
        let c = dg(1, 3, vec![5.0, 14.0, 35.0]);
        assert_eq!(mean_depth_error(&a, &c, &m).unwrap(), 13.0);

        let z = dg(1, 4, vec![20.0; 4]);
        let e = dg(1, 4, vec![29.99, 30.0, 30.01, 20.0]);
        let m4 = BinaryMask::full(1, 4);
        assert_eq!(affected_ratio(&z, &e, &m4, 10.0).unwrap(), 0.5);
        let far = dg(1, 4, vec![70.0; 4]);
        assert_eq!(affected_ratio(&z, &far, &m4, 10.0).unwrap(), 1.0);
    }

    #[test]
    fn empty_and_misaligned_inputs_fail() {
        let a = dg(2, 2, vec![1.0; 4]);
        assert!(matches!(
            mean_depth_error(&a, &a, &BinaryMask::empty(2, 2)),
            Err(MetricsError::EmptyMask)
        ));
        assert!(matches!(
            affected_ratio(&a, &a, &BinaryMask::full(2, 3), 1.0),
            Err(MetricsError::Misaligned { .. })
        ));
    }

    #[test]
    fn depth_from_height_examples() {
        let cam = CameraModel::new(100.0, 2.0, 1.5).unwrap();
        assert_eq!(depth_from_height(&cam, 2.0, 50.0).unwrap(), 4.0);
        assert_eq!(depth_from_height(&cam, 2.0, 100.0).unwrap(), 2.0);
        let z = depth_from_height(&cam, 1.7, 37.0).unwrap();
        assert!((z * 37.0 / 100.0 - 1.7).abs() < 1e-12);
        assert!(matches!(depth_from_height(&cam, 2.0, 0.0), Err(MetricsError::ZeroHeight)));
    }

    #[test]
    fn detection_rates() {
        assert_eq!(detection_rate(&[true; 5]).unwrap(), 1.0);
        let mut v = vec![true; 469];
        v.extend([false; 8]);
        assert!((detection_rate(&v).unwrap() * 100.0 - 98.32).abs() < 5e-3);
        let mut v = vec![true; 45];
        v.extend([false; 423]);
        assert!((detection_rate(&v).unwrap() * 100.0 - 9.62).abs() < 5e-3);
        assert!(detection_rate(&[]).is_err());
    }

    #[test]
    fn sweep_counts_and_zero_perturbation() {
        let mut cfg = RunConfig::with_seed(3);
        cfg.assets.kind = crate::asset_io::config::AssetKind::Synthetic;
        let assets = AttackAssets::from_config(&cfg.assets, 3).unwrap();
        let model = ToyDepthModel::new(0);
        let regions = [RegionParams::full(8, 8)];
        let patch = assets.object.image.tensor().clone();
        let spec = PatchSpec {
            patch: &patch,
            regions: &regions,
            steepness: 1.0,
            shape: None,
        };
        let mut eval = cfg.eval.clone();
        eval.scenes = 2;
        let r = placement_sweep(&assets, spec, &model, &eval).unwrap();
        assert_eq!(r.cells.len() + r.skipped.len(), 2 * 15);
        assert!(r.cells.iter().all(|c| c.e_d <= 0.05), "{:?}", r.cells);
        for d in &r.per_distance {
            assert!(d.cells >= 1, "{d:?}");
        }
    }

    proptest! {
        #[test]
        fn matches_pixel_loops(
            b in prop::collection::vec(0.1f64..80.0, 64),
            a in prop::collection::vec(0.1f64..80.0, 64),
            bits in prop::collection::vec(any::<bool>(), 64),
            t in 0.0f64..40.0,
        ) {
            prop_assume!(bits.iter().any(|&x| x));
            let (gb, ga) = (dg(8, 8, b.clone()), dg(8, 8, a.clone()));
            let m = BinaryMask::from_bits(8, 8, bits.clone());
            let mut sum = 0.0;
            let mut hit = 0usize;
            let mut n = 0usize;
            for y in 0..8 {
                for x in 0..8 {
                    if bits[y * 8 + x] {
                        let e = (b[y * 8 + x] - a[y * 8 + x]).abs();
                        sum += e;
                        n += 1;
                        if e >= t {
                            hit += 1;
                        }
                    }
                }
            }
            prop_assert_eq!(mean_depth_error(&gb, &ga, &m).unwrap(), sum / n as f64);
            prop_assert_eq!(affected_ratio(&gb, &ga, &m, t).unwrap(), hit as f64 / n as f64);
            prop_assert_eq!(mean_depth_error(&gb, &ga, &m).unwrap(), mean_depth_error(&ga, &gb, &m).unwrap());
            prop_assert!(affected_ratio(&gb, &ga, &m, t + 1.0).unwrap() <= affected_ratio(&gb, &ga, &m, t).unwrap());
        }
    }
}

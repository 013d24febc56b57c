//! Object-oriented adversarial loss over randomized composites and the
//! total objective `L_a + L_m + lambda * L_st`.
//!
//! The forward path for one sample is
//! patch blend -> object mask -> scale/rotate/photometric -> paste -> depth,
//! and [`Objective::evaluate`] walks it backwards to get gradients for the
//! patch pixels and every region's four edges.

pub use crate::asset_io::config::LossRegion;

use crate::asset_io::{BinaryMask, DepthGrid, ImageRGB};
use crate::geometry::{apply_transform, paste, CameraModel, Composite, GeometryError, PhysicalObject, TransformSpec};
use crate::mask::{mask_loss, mask_loss_grad, MaskError, PatchMask, RegionParams};
use crate::mde::{DepthModel, MdeError};
use crate::styleloss::{StyleBreakdown, StyleContext, StyleError};
use crate::tensor::{Grid, Tensor3};

#[derive(Debug, thiserror::Error)]
pub enum LossError {
    #[error("loss mask of sample {0} is empty")]
    EmptyMask(usize),
    #[error("sample {sample} has a non-positive depth at pixel {index}")]
    NonPositiveDepth { sample: usize, index: usize },
    #[error("batch has {depths} depth grids but {masks} masks")]
    BatchMismatch { depths: usize, masks: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("patch is {found:?}, object is {expected:?}")]
    PatchShape {
        expected: (usize, usize, usize),
        found: (usize, usize, usize),
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Depth(#[from] MdeError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Style(#[from] StyleError),
}

/// Mean of `1 / D^2` over the masked pixels of one depth grid.
fn scene_loss(sample: usize, depth: &DepthGrid, mask: &BinaryMask) -> Result<f64, LossError> {
    let n = mask.count();
    if n == 0 {
        return Err(LossError::EmptyMask(sample));
    }
    let mut acc = 0.0;
    for (index, (d, m)) in depth.values().as_slice().iter().zip(mask.bits()).enumerate() {
        if !*m {
            continue;
        }
        if !(*d > 0.0) {
            return Err(LossError::NonPositiveDepth { sample, index });
        }
        acc += 1.0 / (d * d);
    }
    Ok(acc / n as f64)
}

/// Per-scene reciprocal-square depth over each mask, averaged over the batch.
pub fn adversarial_loss(depths: &[DepthGrid], masks: &[BinaryMask]) -> Result<f64, LossError> {
    Ok(adversarial_terms(depths, masks)?.0)
}

/// Batch loss plus the individual scene losses.
pub fn adversarial_terms(depths: &[DepthGrid], masks: &[BinaryMask]) -> Result<(f64, Vec<f64>), LossError> {
    if depths.len() != masks.len() {
        return Err(LossError::BatchMismatch {
            depths: depths.len(),
            masks: masks.len(),
        });
    }
    if depths.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let per: Vec<f64> = depths
        .iter()
        .zip(masks)
        .enumerate()
        .map(|(i, (d, m))| scene_loss(i, d, m))
        .collect::<Result<_, _>>()?;
    let mean = per.iter().sum::<f64>() / per.len() as f64;
    Ok((mean, per))
}

/// `d(batch loss) / dD` for one scene of a batch of `batch` scenes.
fn scene_loss_grad(depth: &DepthGrid, mask: &BinaryMask, batch: usize) -> Grid {
    let scale = -2.0 / (mask.count() as f64 * batch as f64);
    let (h, w) = (depth.height(), depth.width());
    Grid::from_fn(h, w, |y, x| {
        if mask.get(y, x) {
            let d = depth.get(y, x);
            scale / (d * d * d)
        } else {
            0.0
        }
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossBreakdown {
    pub adv: f64,
    pub mask: f64,
    /// Weighted style-transfer sum before the `lambda` factor.
    pub style_total: f64,
    pub style_terms: StyleBreakdown,
    pub total: f64,
    pub per_scene: Vec<f64>,
}

/// One composite to evaluate: a scene, its camera and a transform draw.
#[derive(Debug, Clone, Copy)]
pub struct SampleSpec<'a> {
    pub scene: &'a ImageRGB,
    pub camera: &'a CameraModel,
    pub transform: TransformSpec,
}

/// Forward products of one sample, kept for artifacts and diagnostics.
#[derive(Debug, Clone)]
pub struct SampleOutput {
    pub composite: Composite,
    pub depth: DepthGrid,
    pub loss_mask: BinaryMask,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub breakdown: LossBreakdown,
    pub grad_patch: Tensor3,
    pub grad_regions: Vec<[f64; 4]>,
    pub samples: Vec<SampleOutput>,
}

/// Fixed parts of the objective for one run.
pub struct Objective<'a> {
    pub model: &'a dyn DepthModel,
    pub object: &'a PhysicalObject,
    pub style: Option<&'a StyleContext>,
    pub lambda: f64,
    pub steepness: f64,
    pub shape: Option<&'a BinaryMask>,
    pub region: LossRegion,
}

/// `O' = O (1 - m) + x' m`, then restricted to the object mask.
pub fn blend_patch(object: &PhysicalObject, patch: &Tensor3, mask: &Grid) -> Tensor3 {
    let o = object.image.tensor();
    let (c, h, w) = o.shape();
    Tensor3::from_fn(c, h, w, |ch, y, x| {
        if !object.mask.get(y, x) {
            return 0.0;
        }
        let m = mask.get(y, x);
        o.get(ch, y, x) * (1.0 - m) + patch.get(ch, y, x) * m
    })
}

/// The object with the patch blended in under the soft region mask, as it
/// would be printed and placed.
pub fn patched_object(
    object: &PhysicalObject,
    patch: &Tensor3,
    regions: &[RegionParams],
    steepness: f64,
    shape: Option<&BinaryMask>,
) -> Result<PhysicalObject, LossError> {
    let (oh, ow) = (object.image.height(), object.image.width());
    if patch.shape() != (3, oh, ow) {
        return Err(LossError::PatchShape {
            expected: (3, oh, ow),
            found: patch.shape(),
        });
    }
    let pm = PatchMask::build(regions, ow, oh, steepness, shape)?;
    Ok(PhysicalObject {
        image: ImageRGB::clamped(blend_patch(object, patch, &pm.values)),
        mask: object.mask.clone(),
        height_m: object.height_m,
    })
}

impl Objective<'_> {
    /// Loss mask inside the scene for one pasted sample.
    fn loss_mask(
        &self,
        composite: &Composite,
        transformed: &PhysicalObject,
        patch_mask: &Grid,
        spec: &TransformSpec,
        bounds: (usize, usize),
    ) -> Result<BinaryMask, LossError> {
        match self.region {
            LossRegion::Object => Ok(composite.scene_mask.clone()),
            LossRegion::Patch => {
                let obj = self.object;
                let ind = BinaryMask::from_fn(obj.mask.height(), obj.mask.width(), |y, x| {
                    obj.mask.get(y, x) && patch_mask.get(y, x) >= 0.5
                });
                let carrier = PhysicalObject {
                    image: obj.image.clone(),
                    mask: ind,
                    height_m: obj.height_m,
                };
                let (warped, _) = apply_transform(&carrier, spec, bounds)?;
                let (sh, sw) = bounds;
                let col = composite.placement.1;
                let mut out = BinaryMask::empty(sh, sw);
                for y in 0..warped.mask.height() {
                    let sy = composite.origin_row + y as i64;
                    if sy < 0 || sy >= sh as i64 {
                        continue;
                    }
                    for x in 0..warped.mask.width() {
                        let on = warped.mask.get(y, x) && transformed.mask.get(y, x);
                        if on {
                            out.set(sy as usize, col + x, true);
                        }
                    }
                }
                Ok(out)
            }
        }
    }

    /// Forward and backward pass of the full objective on one batch.
    pub fn evaluate(
        &self,
        patch: &Tensor3,
        regions: &[RegionParams],
        batch: &[SampleSpec<'_>],
    ) -> Result<Evaluation, LossError> {
        let obj = self.object;
        let (oh, ow) = (obj.image.height(), obj.image.width());
        if patch.shape() != (3, oh, ow) {
            return Err(LossError::PatchShape {
                expected: (3, oh, ow),
                found: patch.shape(),
            });
        }
        if batch.is_empty() {
            return Err(LossError::EmptyBatch);
        }
        let pm = PatchMask::build(regions, ow, oh, self.steepness, self.shape)?;
        let blended = blend_patch(obj, patch, &pm.values);
        let carrier = PhysicalObject {
            image: ImageRGB::clamped(blended),
            mask: obj.mask.clone(),
            height_m: obj.height_m,
        };

        let mut samples = Vec::with_capacity(batch.len());
        let mut tapes = Vec::with_capacity(batch.len());
        for s in batch {
            let bounds = (s.scene.height(), s.scene.width());
            let (transformed, ttape) = apply_transform(&carrier, &s.transform, bounds)?;
            let composite = paste(s.scene, &transformed, s.camera, s.transform.horizontal_col)?;
            let inference = self.model.forward(&composite.scene_adv)?;
            let loss_mask = self.loss_mask(&composite, &transformed, &pm.values, &s.transform, bounds)?;
            samples.push(SampleOutput {
                composite,
                depth: inference.depth().clone(),
                loss_mask,
            });
            tapes.push((transformed, ttape, inference));
        }
        let depths: Vec<DepthGrid> = samples.iter().map(|s| s.depth.clone()).collect();
        let masks: Vec<BinaryMask> = samples.iter().map(|s| s.loss_mask.clone()).collect();
        let (adv, per_scene) = adversarial_terms(&depths, &masks)?;

        // Gradient w.r.t. the blended, object-masked image O' * M_o.
        let mut g_blend = Tensor3::zeros(3, oh, ow);
        for (s, (transformed, ttape, inference)) in samples.iter().zip(&tapes) {
            let up = scene_loss_grad(&s.depth, &s.loss_mask, batch.len());
            let g_scene = self.model.backward(inference, &up)?;
            let g_canvas = s.composite.backward(transformed, &g_scene);
            g_blend.axpy(1.0, &ttape.backward(&g_canvas));
        }
        let o = obj.image.tensor();
        let mut grad_patch = Tensor3::zeros(3, oh, ow);
        let mut grad_mask = Grid::zeros(oh, ow);
        for y in 0..oh {
            for x in 0..ow {
                if !obj.mask.get(y, x) {
                    continue;
                }
                let m = pm.values.get(y, x);
                let mut gm = 0.0;
                for c in 0..3 {
                    let g = g_blend.get(c, y, x);
                    grad_patch.set(c, y, x, g * m);
                    gm += g * (patch.get(c, y, x) - o.get(c, y, x));
                }
                grad_mask.set(y, x, gm);
            }
        }
        let mut grad_regions = pm.backward(&grad_mask);
        let lm = mask_loss(regions, ow, oh);
        let lm_grad = mask_loss_grad(ow, oh);
        for g in &mut grad_regions {
            for e in 0..4 {
                g[e] += lm_grad[e];
            }
        }

        let (style_terms, style_total) = match self.style {
            Some(ctx) if self.lambda != 0.0 => {
                let (b, g) = ctx.evaluate(patch)?;
                grad_patch.axpy(self.lambda, &g);
                (b, b.total)
            }
            _ => (StyleBreakdown::default(), 0.0),
        };
        let total = adv + lm + self.lambda * style_total;
        Ok(Evaluation {
            breakdown: LossBreakdown {
                adv,
                mask: lm,
                style_total,
                style_terms,
                total,
                per_scene,
            },
            grad_patch,
            grad_regions,
            samples,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mde::ToyDepthModel;

    fn depth(h: usize, w: usize, v: f64) -> DepthGrid {
        DepthGrid::new(Grid::filled(h, w, v), "cam").unwrap()
    }

    #[test]
    fn constant_depth_examples() {
        let m = BinaryMask::from_fn(4, 4, |y, _| y >= 2);
        let l = adversarial_loss(&[depth(4, 4, 10.0)], std::slice::from_ref(&m)).unwrap();
        assert!((l - 0.01).abs() < 1e-15);
        let far = adversarial_loss(&[depth(4, 4, 1e6)], std::slice::from_ref(&m)).unwrap();
        assert!(far < 1e-11);
        let d3 = depth(4, 4, 1.0 / 0.03f64.sqrt());
        let (b, per) = adversarial_terms(&[depth(4, 4, 10.0), d3], &[m.clone(), m]).unwrap();
        assert!((per[1] - 0.03).abs() < 1e-15);
        assert!((b - 0.02).abs() < 1e-15);
    }

    #[test]
    fn empty_mask_and_misaligned_batches_fail() {
        assert!(matches!(
            adversarial_loss(&[depth(2, 2, 1.0)], &[BinaryMask::empty(2, 2)]),
            Err(LossError::EmptyMask(0))
        ));
        assert!(matches!(
            adversarial_loss(&[depth(2, 2, 1.0)], &[]),
            Err(LossError::BatchMismatch { .. })
        ));
    }

    #[test]
    fn scaling_depth_up_lowers_the_loss() {
        let m = BinaryMask::full(3, 3);
        let base = DepthGrid::new(Grid::from_fn(3, 3, |y, x| 1.0 + (y * 3 + x) as f64), "c").unwrap();
        let l0 = adversarial_loss(std::slice::from_ref(&base), std::slice::from_ref(&m)).unwrap();
        let l1 = adversarial_loss(&[base.scaled(1.5)], &[m]).unwrap();
        assert!(l1 < l0);
    }

    fn fixture() -> (PhysicalObject, ImageRGB, CameraModel, Tensor3) {
        let obj_img = ImageRGB::from_fn(8, 8, |y, x| [0.2 + 0.05 * y as f64, 0.6 - 0.04 * x as f64, 0.4]);
        let mask = BinaryMask::from_fn(8, 8, |y, x| (1..8).contains(&y) && (1..7).contains(&x));
        let obj = PhysicalObject::new(obj_img, mask, 1.5).unwrap();
        let scene = ImageRGB::from_fn(16, 16, |y, x| [0.3 + 0.02 * y as f64, 0.5, 0.4 + 0.01 * x as f64]);
        let cam = CameraModel::new(8.0, 1.0, 1.5).unwrap();
        let patch = Tensor3::from_fn(3, 8, 8, |c, y, x| 0.5 + 0.3 * ((c * 5 + y * 3 + x * 7) as f64 * 0.4).sin());
        (obj, scene, cam, patch)
    }

    #[test]
    fn lambda_zero_total_is_adv_plus_mask() {
        let (obj, scene, cam, patch) = fixture();
        let model = ToyDepthModel::new(0);
        let objective = Objective {
            model: &model,
            object: &obj,
            style: None,
            lambda: 0.0,
            steepness: 1.0,
            shape: None,
            region: LossRegion::Object,
        };
        let regions = [RegionParams::new(2.0, 6.0, 2.0, 6.0)];
        let batch = [SampleSpec {
            scene: &scene,
            camera: &cam,
            transform: TransformSpec::identity(4),
        }];
        let e = objective.evaluate(&patch, &regions, &batch).unwrap();
        assert_eq!(e.breakdown.total, e.breakdown.adv + e.breakdown.mask);
        assert_eq!(e.breakdown.mask, mask_loss(&regions, 8, 8));
    }

    #[test]
    fn adversarial_gradient_matches_finite_differences() {
        let (obj, scene, cam, patch) = fixture();
        let model = ToyDepthModel::new(4);
        for region in [LossRegion::Object, LossRegion::Patch] {
            let objective = Objective {
                model: &model,
                object: &obj,
                style: None,
                lambda: 0.0,
                steepness: 1.0,
                shape: None,
                region,
            };
            let regions = [RegionParams::new(1.4, 6.3, 1.2, 6.6)];
            let mut t = TransformSpec::identity(3);
            t.brightness_delta = 0.05;
            t.saturation_factor = 0.9;
            t.rotation_deg = 3.0;
            let batch = [
                SampleSpec {
                    scene: &scene,
                    camera: &cam,
                    transform: t,
                },
                SampleSpec {
                    scene: &scene,
                    camera: &cam,
                    transform: TransformSpec::identity(6),
                },
            ];
            let e = objective.evaluate(&patch, &regions, &batch).unwrap();
            let adv = |p: &Tensor3, r: &[RegionParams]| objective.evaluate(p, r, &batch).unwrap().breakdown.adv;
            let h = 1e-6;
            let (mut err, mut norm) = (0.0f64, 0.0f64);
            for i in 0..patch.as_slice().len() {
                let mut p = patch.clone();
                p.as_mut_slice()[i] += h;
                let mut q = patch.clone();
                q.as_mut_slice()[i] -= h;
                let fd = (adv(&p, &regions) - adv(&q, &regions)) / (2.0 * h);
                err += (fd - e.grad_patch.as_slice()[i]).powi(2);
                norm += fd * fd;
            }
            assert!(norm > 0.0);
            assert!(err.sqrt() / norm.sqrt() <= 1e-3, "{region:?}: {}", err.sqrt() / norm.sqrt());
            if region == LossRegion::Object {
                let lm = mask_loss_grad(8, 8);
                for edge in 0..4 {
                    let mut a = regions[0].as_array();
                    a[edge] += h;
                    let p = [RegionParams::from_array(a)];
                    a[edge] -= 2.0 * h;
                    let q = [RegionParams::from_array(a)];
                    let fd = (adv(&patch, &p) - adv(&patch, &q)) / (2.0 * h);
                    let analytic = e.grad_regions[0][edge] - lm[edge];
                    assert!((fd - analytic).abs() <= 1e-3 * fd.abs().max(1e-6), "edge {edge}: {fd} vs {analytic}");
                }
            }
        }
    }
}

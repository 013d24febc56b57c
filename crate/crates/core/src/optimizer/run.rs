//! The attack loop and its on-disk artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::asset_io::{save_image, AssetError, ImageRGB, RunConfig};
use crate::assets::AttackAssets;
use crate::attack_loss::{Evaluation, LossBreakdown, LossError, Objective, SampleSpec};
use crate::geometry::{apply_transform, paste, sample_transform, EotRanges, GeometryError, TransformSpec};
use crate::mask::{project_params, region_ratio, MaskError, RegionParams};
use crate::mde::DepthModel;
use crate::styleloss::{StyleContext, StyleError};
use crate::tensor::Tensor3;

use super::{Lbfgs, RegionAdam};

/// Placement retries per sample before the iteration fails.
pub const PLACEMENT_RETRIES: usize = 10;

/// Stream offset for the fixed evaluation batch, so it never overlaps the
/// training draws.
const EVAL_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, thiserror::Error)]
pub enum AttackError {
    #[error("invalid attack setup: {0}")]
    Setup(String),
    #[error("no valid placement after {attempts} attempts: {last}")]
    Placement { attempts: usize, last: GeometryError },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Style(#[from] StyleError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Asset(#[from] AssetError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization failed: {0}")]
    Serialize(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AttackError + '_ {
    move |source| AttackError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One row of `loss_log.csv`, recorded before the update of that iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: usize,
    pub adv: f64,
    pub mask: f64,
    pub style: f64,
    pub total: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone)]
pub struct AttackState {
    pub patch: Tensor3,
    pub regions: Vec<RegionParams>,
    pub iteration: usize,
    /// First iteration at which the region ratio was at or below target.
    pub frozen_at: Option<usize>,
    pub skipped_updates: usize,
    lbfgs: Lbfgs,
    adam: RegionAdam,
}

impl AttackState {
    pub fn initial(cfg: &RunConfig, assets: &AttackAssets) -> Self {
        let (h, w) = (assets.object.image.height(), assets.object.image.width());
        let [rows, cols] = cfg.mask.initial_grid;
        let regions = if let Some(explicit) = &cfg.mask.initial_regions {
            explicit.iter().map(|r| project_params(r, w, h)).collect()
        } else if rows * cols == 1 {
            vec![RegionParams::full(w, h)]
        } else {
            RegionParams::grid(rows, cols, w, h)
        };
        let o = &cfg.optimizer;
        Self {
            patch: assets.content.tensor().clone(),
            adam: RegionAdam::new(regions.len(), o.region_step, o.beta1, o.beta2, o.adam_eps),
            regions,
            iteration: 0,
            frozen_at: None,
            skipped_updates: 0,
            lbfgs: Lbfgs::new(o.history, o.content_step),
        }
    }

    pub fn patch_image(&self) -> ImageRGB {
        ImageRGB::clamped(self.patch.clone())
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen_at.is_some()
    }
}

/// Draws scene indices and EoT transforms, retrying infeasible placements.
pub struct Sampler<'a> {
    assets: &'a AttackAssets,
    ranges: Vec<EotRanges>,
    rng: ChaCha8Rng,
}

impl<'a> Sampler<'a> {
    pub fn new(cfg: &RunConfig, assets: &'a AttackAssets, seed: u64) -> Result<Self, AttackError> {
        if assets.scenes.is_empty() {
            return Err(AttackError::Setup("no scenes".into()));
        }
        let px = assets.object.pixel_height();
        let e = &cfg.eot;
        let ranges = assets
            .scenes
            .iter()
            .map(|s| EotRanges {
                scale: e.scale.unwrap_or_else(|| {
                    EotRanges::scale_for_distances(&s.camera, assets.object.height_m, px, e.distance_m)
                }),
                rotation_deg: e.rotation_deg,
                brightness: e.brightness,
                saturation: e.saturation,
            })
            .collect();
        Ok(Self {
            assets,
            ranges,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    fn feasible(&self, scene: usize, spec: &TransformSpec) -> Result<(), GeometryError> {
        let s = &self.assets.scenes[scene];
        let bounds = (s.image.height(), s.image.width());
        let (obj, _) = apply_transform(&self.assets.object, spec, bounds)?;
        paste(&s.image, &obj, &s.camera, spec.horizontal_col).map(|_| ())
    }

    pub fn draw_one(&mut self) -> Result<(usize, TransformSpec), AttackError> {
        let dims = (self.assets.object.image.height(), self.assets.object.image.width());
        let mut last = None;
        for _ in 0..PLACEMENT_RETRIES {
            let scene = self.rng.random_range(0..self.assets.scenes.len());
            let s = &self.assets.scenes[scene];
            let drawn = sample_transform(&mut self.rng, &self.ranges[scene], dims, (s.image.height(), s.image.width()))
                .and_then(|spec| self.feasible(scene, &spec).map(|_| spec));
            match drawn {
                Ok(spec) => return Ok((scene, spec)),
                Err(e) => last = Some(e),
            }
        }
        Err(AttackError::Placement {
            attempts: PLACEMENT_RETRIES,
            last: last.expect("at least one attempt"),
        })
    }

    pub fn draw(&mut self, n: usize) -> Result<Vec<(usize, TransformSpec)>, AttackError> {
        (0..n).map(|_| self.draw_one()).collect()
    }
}

/// Fixed evaluation draws shared by the loop's snapshot and by callers that
/// compare patches on identical composites.
pub fn evaluation_draws(
    cfg: &RunConfig,
    assets: &AttackAssets,
    n: usize,
) -> Result<Vec<(usize, TransformSpec)>, AttackError> {
    Sampler::new(cfg, assets, cfg.seed() ^ EVAL_STREAM)?.draw(n)
}

pub fn sample_specs<'a>(assets: &'a AttackAssets, draws: &[(usize, TransformSpec)]) -> Vec<SampleSpec<'a>> {
    draws
        .iter()
        .map(|(i, t)| SampleSpec {
            scene: &assets.scenes[*i].image,
            camera: &assets.scenes[*i].camera,
            transform: *t,
        })
        .collect()
}

/// Builds the style objective from the run's content and style images.
pub fn style_context(cfg: &RunConfig, assets: &AttackAssets) -> Result<Option<StyleContext>, AttackError> {
    if cfg.lambda == 0.0 {
        return Ok(None);
    }
    let ctx = StyleContext::from_config(
        &cfg.style,
        &cfg.loss,
        cfg.model.weights_dir.as_deref(),
        assets.content.tensor(),
        assets.style.tensor(),
    )?;
    Ok(Some(ctx))
}

pub fn objective<'a>(
    cfg: &RunConfig,
    assets: &'a AttackAssets,
    model: &'a dyn DepthModel,
    style: Option<&'a StyleContext>,
) -> Objective<'a> {
    Objective {
        model,
        object: &assets.object,
        style,
        lambda: cfg.lambda,
        steepness: cfg.mask.steepness,
        shape: assets.shape.as_ref(),
        region: cfg.loss.region,
    }
}

#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub state: AttackState,
    pub log: Vec<LogRow>,
    /// Objective of the initial and final state on the fixed evaluation draws.
    pub initial_eval: LossBreakdown,
    pub final_eval: LossBreakdown,
    pub eval_draws: Vec<(usize, TransformSpec)>,
}

/// Size of the fixed evaluation batch.
pub fn eval_batch_size(cfg: &RunConfig) -> usize {
    cfg.batch_size.max(cfg.composite_samples).max(8)
}

/// Runs the full optimization for `cfg.iterations` iterations.
pub fn run_attack(
    cfg: &RunConfig,
    assets: &AttackAssets,
    model: &dyn DepthModel,
) -> Result<AttackOutcome, AttackError> {
    if cfg.batch_size == 0 {
        return Err(AttackError::Setup("batch_size must be >= 1".into()));
    }
    let style = style_context(cfg, assets)?;
    let obj = objective(cfg, assets, model, style.as_ref());
    let (oh, ow) = (assets.object.image.height(), assets.object.image.width());
    let mut sampler = Sampler::new(cfg, assets, cfg.seed())?;
    let eval_draws = evaluation_draws(cfg, assets, eval_batch_size(cfg))?;
    let eval_specs = sample_specs(assets, &eval_draws);

    let mut state = AttackState::initial(cfg, assets);
    let initial_eval = obj.evaluate(&state.patch, &state.regions, &eval_specs)?.breakdown;
    let mut log = Vec::with_capacity(cfg.iterations);
    // Point, regions, draws and gradient of the previous iteration. Curvature
    // pairs are measured on that same batch and region set, so batch-to-batch
    // noise does not leak into the inverse-Hessian estimate.
    let mut prev: Option<(Tensor3, Vec<RegionParams>, Vec<(usize, TransformSpec)>, Tensor3)> = None;

    for it in 0..cfg.iterations {
        let ratio = region_ratio(&state.regions, &assets.object.mask)?;
        if state.frozen_at.is_none() && ratio <= cfg.target_ratio {
            info!("region ratio {ratio:.4} reached target at iteration {it}; freezing regions");
            state.frozen_at = Some(it);
        }
        if let Some((px, pregions, pdraws, pg)) = prev.take() {
            let g = obj.evaluate(&state.patch, &pregions, &sample_specs(assets, &pdraws))?.grad_patch;
            if g.is_finite() {
                let s = state.patch.as_slice().iter().zip(px.as_slice()).map(|(a, b)| a - b).collect();
                let y = g.as_slice().iter().zip(pg.as_slice()).map(|(a, b)| a - b).collect();
                state.lbfgs.push_pair(s, y);
            }
        }
        let draws = sampler.draw(cfg.batch_size)?;
        let batch = sample_specs(assets, &draws);
        let Evaluation {
            breakdown,
            grad_patch,
            grad_regions,
            ..
        } = obj.evaluate(&state.patch, &state.regions, &batch)?;
        log.push(LogRow {
            iteration: it,
            adv: breakdown.adv,
            mask: breakdown.mask,
            style: breakdown.style_total,
            total: breakdown.total,
            ratio,
        });
        let before = state.patch.clone();
        match state.lbfgs.descend(state.patch.as_mut_slice(), grad_patch.as_slice()) {
            Ok(()) => {
                if log::log_enabled!(log::Level::Debug) {
                    let moved: f64 = state.patch.as_slice().iter().zip(before.as_slice()).map(|(a, b)| (a - b).powi(2)).sum();
                    log::debug!("iter {it}: |dx| {:.3e} |g| {:.3e} pairs {}", moved.sqrt(), grad_patch.sum_sq().sqrt(), state.lbfgs.stored_pairs());
                }
                prev = Some((before, state.regions.clone(), draws, grad_patch))
            }
            Err(e) => {
                warn!("iteration {it}: {e}; update skipped");
                state.skipped_updates += 1;
                state.iteration = it + 1;
                continue;
            }
        }
        if state.frozen_at.is_none() {
            if grad_regions.iter().flatten().all(|g| g.is_finite()) {
                state.adam.step(&mut state.regions, &grad_regions, ow, oh);
            } else {
                warn!("iteration {it}: non-finite region gradient; region update skipped");
                state.skipped_updates += 1;
            }
        }
        state.iteration = it + 1;
        if it % 50 == 0 {
            info!(
                "iter {it}: adv {:.6} mask {:.4} style {:.4} total {:.6} ratio {ratio:.4}",
                breakdown.adv, breakdown.mask, breakdown.style_total, breakdown.total
            );
        }
    }
    if state.frozen_at.is_none() && region_ratio(&state.regions, &assets.object.mask)? <= cfg.target_ratio {
        state.frozen_at = Some(cfg.iterations);
    }
    let final_eval = obj.evaluate(&state.patch, &state.regions, &eval_specs)?.breakdown;
    Ok(AttackOutcome {
        state,
        log,
        initial_eval,
        final_eval,
        eval_draws,
    })
}

/// Contents of `theta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaFile {
    pub regions: Vec<RegionParams>,
    pub region_ratio: f64,
    pub frozen_at: Option<usize>,
    pub iterations: usize,
    pub steepness: f64,
}

impl ThetaFile {
    pub fn load(path: &Path) -> Result<Self, AttackError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| AttackError::Serialize(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Serialize)]
struct EvalSnapshot<'a> {
    initial: Snapshot<'a>,
    r#final: Snapshot<'a>,
    draws: Vec<DrawRecord>,
}

#[derive(Debug, Clone, Serialize)]
struct Snapshot<'a> {
    adv: f64,
    mask: f64,
    style_total: f64,
    total: f64,
    per_scene: &'a [f64],
}

impl<'a> From<&'a LossBreakdown> for Snapshot<'a> {
    fn from(b: &'a LossBreakdown) -> Self {
        Self {
            adv: b.adv,
            mask: b.mask,
            style_total: b.style_total,
            total: b.total,
            per_scene: &b.per_scene,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct DrawRecord {
    scene: String,
    transform: TransformSpec,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), AttackError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| AttackError::Serialize(e.to_string()))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

/// Writes `patch.png`, `theta.json`, `loss_log.csv`, `eval_snapshot.json`
/// and `composite_samples/*.png`. Returns every file written.
pub fn write_artifacts(
    outcome: &AttackOutcome,
    cfg: &RunConfig,
    assets: &AttackAssets,
    model: &dyn DepthModel,
    out: &Path,
) -> Result<Vec<PathBuf>, AttackError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let mut written = Vec::new();

    let patch = out.join("patch.png");
    save_image(&outcome.state.patch_image(), &patch)?;
    written.push(patch);

    let theta = out.join("theta.json");
    write_json(
        &theta,
        &ThetaFile {
            regions: outcome.state.regions.clone(),
            region_ratio: region_ratio(&outcome.state.regions, &assets.object.mask)?,
            frozen_at: outcome.state.frozen_at,
            iterations: outcome.state.iteration,
            steepness: cfg.mask.steepness,
        },
    )?;
    written.push(theta);

    let log_path = out.join("loss_log.csv");
    let mut wtr = csv::Writer::from_path(&log_path).map_err(|e| AttackError::Serialize(e.to_string()))?;
    if outcome.log.is_empty() {
        wtr.write_record(["iteration", "adv", "mask", "style", "total", "ratio"])
            .map_err(|e| AttackError::Serialize(e.to_string()))?;
    }
    for row in &outcome.log {
        wtr.serialize(row).map_err(|e| AttackError::Serialize(e.to_string()))?;
    }
    wtr.flush().map_err(io_err(&log_path))?;
    written.push(log_path);

    let snap = out.join("eval_snapshot.json");
    write_json(
        &snap,
        &EvalSnapshot {
            initial: (&outcome.initial_eval).into(),
            r#final: (&outcome.final_eval).into(),
            draws: outcome
                .eval_draws
                .iter()
                .map(|(i, t)| DrawRecord {
                    scene: assets.scenes[*i].id.clone(),
                    transform: *t,
                })
                .collect(),
        },
    )?;
    written.push(snap);

    let samples_dir = out.join("composite_samples");
    fs::create_dir_all(&samples_dir).map_err(io_err(&samples_dir))?;
    let n = cfg.composite_samples.min(outcome.eval_draws.len());
    if n > 0 {
        let style = None;
        let mut obj = objective(cfg, assets, model, style);
        obj.lambda = 0.0;
        let specs = sample_specs(assets, &outcome.eval_draws[..n]);
        let e = obj.evaluate(&outcome.state.patch, &outcome.state.regions, &specs)?;
        for (i, s) in e.samples.iter().enumerate() {
            let p = samples_dir.join(format!("sample_{i:03}.png"));
            save_image(&s.composite.scene_adv, &p)?;
            written.push(p);
        }
    }
    Ok(written)
}

//! Run configuration: a TOML file with nested sections.
//!
//! Every field other than `seed` has a default. Unknown keys are rejected so
//! that typos cannot silently fall back to defaults. The fully resolved
//! configuration is echoed by [`RunConfig::snapshot`] and written next to the
//! run artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("unknown config key: {0}")]
    UnknownKey(String),
    #[error("`seed` must be set explicitly so that sampling is replayable")]
    MissingSeed,
    #[error("{key} = {value} is out of range: {expected}")]
    OutOfRange {
        key: &'static str,
        value: String,
        expected: &'static str,
    },
    #[error("required path `{0}` is missing")]
    MissingPath(&'static str),
    #[error("invalid override `{0}`: expected key=value")]
    BadOverride(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothnessForm {
    /// Differences between the optimized patch and its content image
    /// neighbours, exactly as the loss is usually printed.
    Mixed,
    /// Conventional total variation of the optimized patch alone.
    TotalVariation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossRegion {
    /// Reciprocal depth over the whole pasted object.
    Object,
    /// Reciprocal depth over the patch pixels only (baseline comparison).
    Patch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub style: f64,
    pub content: f64,
    pub smoothness: f64,
    pub photorealism: f64,
    pub smoothness_form: SmoothnessForm,
    pub region: LossRegion,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            style: 1e2,
            content: 1.0,
            smoothness: 1e-2,
            photorealism: 1e-4,
            smoothness_form: SmoothnessForm::Mixed,
            region: LossRegion::Object,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskConfig {
    pub steepness: f64,
    /// Initial sub-region layout `[rows, cols]`; `[1, 1]` is a single
    /// full-frame region.
    pub initial_grid: [usize; 2],
    /// Explicit starting regions in object-frame pixels; replaces
    /// `initial_grid` when set. A region whose ratio is already at or below
    /// the target stays fixed for the whole run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_regions: Option<Vec<crate::mask::RegionParams>>,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            steepness: 1.0,
            initial_grid: [1, 1],
            initial_regions: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EotConfig {
    /// Longitudinal distance band in meters; converted to a scale range via
    /// the camera model when `scale` is absent.
    pub distance_m: [f64; 2],
    pub scale: Option<[f64; 2]>,
    pub rotation_deg: [f64; 2],
    pub brightness: [f64; 2],
    pub saturation: [f64; 2],
}

impl Default for EotConfig {
    fn default() -> Self {
        Self {
            distance_m: [7.0, 35.0],
            scale: None,
            rotation_deg: [-5.0, 5.0],
            brightness: [-0.1, 0.1],
            saturation: [0.9, 1.1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub content_step: f64,
    pub history: usize,
    pub region_step: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            content_step: 0.1,
            history: 10,
            region_step: 0.5,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StyleConfig {
    /// `toy` or the name of a backbone under the weights directory.
    pub extractor: String,
    pub extractor_seed: u64,
    pub matting_eps: f64,
    pub style_taps: Option<Vec<usize>>,
    pub content_taps: Option<Vec<usize>>,
}

impl Default for StyleConfig {
    fn default() -> Self {
        Self {
            extractor: "toy".into(),
            extractor_seed: 0,
            matting_eps: 1e-5,
            style_taps: None,
            content_taps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub backend: String,
    pub toy_seed: u64,
    pub weights_dir: Option<PathBuf>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backend: "toy".into(),
            toy_seed: 0,
            weights_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssetKind {
    Files,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssetsConfig {
    pub kind: AssetKind,
    pub object_image: Option<PathBuf>,
    pub object_mask: Option<PathBuf>,
    pub object_height_m: f64,
    /// Directory of scene images plus a `camera.json`.
    pub scenes_dir: Option<PathBuf>,
    pub style_image: Option<PathBuf>,
    /// Defaults to the object image.
    pub content_image: Option<PathBuf>,
    pub shape_mask: Option<PathBuf>,
    pub synthetic_scenes: usize,
    pub synthetic_scene_size: [usize; 2],
    pub synthetic_object_size: [usize; 2],
}

impl Default for AssetsConfig {
    fn default() -> Self {
        Self {
            kind: AssetKind::Files,
            object_image: None,
            object_mask: None,
            object_height_m: 1.5,
            scenes_dir: None,
            style_image: None,
            content_image: None,
            shape_mask: None,
            synthetic_scenes: 4,
            synthetic_scene_size: [32, 32],
            synthetic_object_size: [8, 8],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub distances_m: Vec<f64>,
    pub laterals_m: Vec<f64>,
    pub threshold_m: f64,
    /// Upper bound on scenes used per sweep cell.
    pub scenes: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            distances_m: vec![7.0, 14.0, 21.0, 28.0, 35.0],
            laterals_m: vec![-1.0, 0.0, 1.0],
            threshold_m: 10.0,
            scenes: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub iterations: usize,
    pub batch_size: usize,
    pub target_ratio: f64,
    pub lambda: f64,
    pub composite_samples: usize,
    pub loss: LossConfig,
    pub mask: MaskConfig,
    pub eot: EotConfig,
    pub optimizer: OptimizerConfig,
    pub style: StyleConfig,
    pub model: ModelConfig,
    pub assets: AssetsConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            iterations: 5000,
            batch_size: 4,
            target_ratio: 1.0 / 9.0,
            lambda: 1.0,
            composite_samples: 4,
            loss: LossConfig::default(),
            mask: MaskConfig::default(),
            eot: EotConfig::default(),
            optimizer: OptimizerConfig::default(),
            style: StyleConfig::default(),
            model: ModelConfig::default(),
            assets: AssetsConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn range_err(key: &'static str, value: impl ToString, expected: &'static str) -> ConfigError {
    ConfigError::OutOfRange {
        key,
        value: value.to_string(),
        expected,
    }
}

fn check_interval(key: &'static str, v: [f64; 2]) -> Result<(), ConfigError> {
    if !(v[0].is_finite() && v[1].is_finite() && v[0] <= v[1]) {
        return Err(range_err(key, format!("{v:?}"), "finite [lo, hi] with lo <= hi"));
    }
    Ok(())
}

impl RunConfig {
    /// A config with every default and the given seed.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed: Some(seed),
            ..Self::default()
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.expect("validated config carries a seed")
    }

    /// Checks seed, numeric ranges and required paths, in that order.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seed.is_none() {
            return Err(ConfigError::MissingSeed);
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(range_err("lambda", self.lambda, ">= 0"));
        }
        if !(self.target_ratio > 0.0 && self.target_ratio <= 1.0) {
            return Err(range_err("target_ratio", self.target_ratio, "in (0, 1]"));
        }
        if self.iterations < 1 {
            return Err(range_err("iterations", self.iterations, ">= 1"));
        }
        if self.batch_size < 1 {
            return Err(range_err("batch_size", self.batch_size, ">= 1"));
        }
        let l = &self.loss;
        for (key, v) in [
            ("loss.style", l.style),
            ("loss.content", l.content),
            ("loss.smoothness", l.smoothness),
            ("loss.photorealism", l.photorealism),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(range_err(key, v, ">= 0"));
            }
        }
        if !(self.mask.steepness > 0.0) {
            return Err(range_err("mask.steepness", self.mask.steepness, "> 0"));
        }
        if self.mask.initial_grid.contains(&0) {
            return Err(range_err(
                "mask.initial_grid",
                format!("{:?}", self.mask.initial_grid),
                "both entries >= 1",
            ));
        }
        if let Some(regions) = &self.mask.initial_regions {
            let bad = regions.iter().find(|r| {
                let a = r.as_array();
                !(a.iter().all(|v| v.is_finite() && *v >= 0.0) && r.l <= r.r && r.t <= r.b)
            });
            if regions.is_empty() || bad.is_some() {
                return Err(range_err(
                    "mask.initial_regions",
                    format!("{regions:?}"),
                    "non-empty, finite, 0 <= l <= r and 0 <= t <= b",
                ));
            }
        }
        let e = &self.eot;
        check_interval("eot.distance_m", e.distance_m)?;
        if e.distance_m[0] <= 0.0 {
            return Err(range_err("eot.distance_m", e.distance_m[0], "> 0"));
        }
        if let Some(s) = e.scale {
            check_interval("eot.scale", s)?;
            if s[0] <= 0.0 {
                return Err(range_err("eot.scale", s[0], "> 0"));
            }
        }
        check_interval("eot.rotation_deg", e.rotation_deg)?;
        check_interval("eot.brightness", e.brightness)?;
        check_interval("eot.saturation", e.saturation)?;
        if e.saturation[0] < 0.0 {
            return Err(range_err("eot.saturation", e.saturation[0], ">= 0"));
        }
        let o = &self.optimizer;
        if !(o.content_step > 0.0) {
            return Err(range_err("optimizer.content_step", o.content_step, "> 0"));
        }
        if !(o.region_step > 0.0) {
            return Err(range_err("optimizer.region_step", o.region_step, "> 0"));
        }
        if !(0.0..1.0).contains(&o.beta1) {
            return Err(range_err("optimizer.beta1", o.beta1, "in [0, 1)"));
        }
        if !(0.0..1.0).contains(&o.beta2) {
            return Err(range_err("optimizer.beta2", o.beta2, "in [0, 1)"));
        }
        if !(self.style.matting_eps > 0.0) {
            return Err(range_err("style.matting_eps", self.style.matting_eps, "> 0"));
        }
        if !(self.assets.object_height_m > 0.0) {
            return Err(range_err("assets.object_height_m", self.assets.object_height_m, "> 0"));
        }
        if !(self.eval.threshold_m >= 0.0) {
            return Err(range_err("eval.threshold_m", self.eval.threshold_m, ">= 0"));
        }
        if self.eval.distances_m.iter().any(|d| !(*d > 0.0)) {
            return Err(range_err("eval.distances_m", format!("{:?}", self.eval.distances_m), "all > 0"));
        }
        if self.assets.kind == AssetKind::Files {
            let a = &self.assets;
            if a.object_image.is_none() {
                return Err(ConfigError::MissingPath("assets.object_image"));
            }
            if a.object_mask.is_none() {
                return Err(ConfigError::MissingPath("assets.object_mask"));
            }
            if a.scenes_dir.is_none() {
                return Err(ConfigError::MissingPath("assets.scenes_dir"));
            }
            if a.style_image.is_none() {
                return Err(ConfigError::MissingPath("assets.style_image"));
            }
        }
        Ok(())
    }

    /// Fully resolved configuration as TOML text.
    pub fn snapshot(&self) -> String {
        toml::to_string_pretty(self).expect("RunConfig serializes")
    }

    /// Applies dotted `key=value` overrides, e.g. `optimizer.content_step=0.05`.
    /// Values are parsed as TOML literals; bare words fall back to strings.
    pub fn apply_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self, ConfigError> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut doc: toml::Table =
            toml::from_str(&self.snapshot()).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for raw in overrides {
            let raw = raw.as_ref();
            let (key, value) = raw
                .split_once('=')
                .ok_or_else(|| ConfigError::BadOverride(raw.to_owned()))?;
            let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {value}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(value.trim().to_owned()));
            let parts: Vec<&str> = key.trim().split('.').collect();
            let (last, parents) = parts.split_last().expect("split yields one part");
            let mut table = &mut doc;
            for p in parents {
                table = table
                    .entry(p.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| ConfigError::UnknownKey(key.to_owned()))?;
            }
            table.insert(last.to_string(), value);
        }
        let text = toml::to_string(&doc).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let cfg = parse_run_config(&text)?;
        Ok(cfg)
    }

    /// Resolves relative asset paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let a = &mut self.assets;
        for p in [
            &mut a.object_image,
            &mut a.object_mask,
            &mut a.scenes_dir,
            &mut a.style_image,
            &mut a.content_image,
            &mut a.shape_mask,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(p) = &mut self.model.weights_dir {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

/// Parses and validates config text.
pub fn parse_run_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| {
        let msg = e.message().to_owned();
        if msg.contains("unknown field") {
            ConfigError::UnknownKey(msg)
        } else {
            ConfigError::Parse(e.to_string())
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads, validates and echoes a run configuration. Relative asset paths are
/// resolved against the config file's directory.
pub fn load_run_config(path: impl AsRef<Path>) -> Result<RunConfig, ConfigError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let mut cfg = parse_run_config(&text)?;
    if let Some(base) = path.parent() {
        cfg.resolve_paths(base);
    }
    log::info!("resolved run config from {}:\n{}", path.display(), cfg.snapshot());
    Ok(cfg)
}

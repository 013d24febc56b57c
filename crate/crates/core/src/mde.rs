//! Depth-inference backends behind one differentiable contract.
//!
//! Every backend maps an RGB image to a metric depth grid of the same size
//! and can return the vector-Jacobian product of that grid with respect to
//! the input pixels. The forward pass hands back an [`Inference`] carrying an
//! opaque tape; the backward pass needs that tape and fails cleanly without it.

use std::any::Any;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::asset_io::{DepthGrid, ImageRGB};
use crate::nn::{Activations, Conv2d, Layer, LayerSpec, NetworkError, Padding, Sequential};
use crate::resample::Resampler;
use crate::tensor::{Grid, Tensor3};

/// Environment variable consulted when no weights directory is configured.
pub const WEIGHTS_ENV: &str = "DEPTHPATCH_WEIGHTS";

/// Pretrained backends the loader knows by name.
pub const KNOWN_BACKENDS: [&str; 3] = ["monodepth2", "depthhints", "manydepth"];

#[derive(Debug, thiserror::Error)]
pub enum MdeError {
    #[error("depth backend '{name}' unavailable: {reason}")]
    BackendUnavailable { name: String, reason: String },
    #[error("resolution {height}x{width} unsupported: {detail}")]
    ResolutionUnsupported {
        height: usize,
        width: usize,
        detail: String,
    },
    #[error("gradient requested without a matching forward pass ({0})")]
    MissingForward(String),
    #[error("upstream gradient is {found:?}, depth grid is {expected:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("invalid model description: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Result of one forward pass.
pub struct Inference {
    depth: DepthGrid,
    model: String,
    tape: Option<Box<dyn Any + Send + Sync>>,
}

impl Inference {
    pub fn new(depth: DepthGrid, model: impl Into<String>, tape: Box<dyn Any + Send + Sync>) -> Self {
        Self {
            depth,
            model: model.into(),
            tape: Some(tape),
        }
    }

    /// An inference with no recorded tape. Calling backward on it fails.
    pub fn detached(depth: DepthGrid, model: impl Into<String>) -> Self {
        Self {
            depth,
            model: model.into(),
            tape: None,
        }
    }

    pub fn depth(&self) -> &DepthGrid {
        &self.depth
    }

    pub fn into_depth(self) -> DepthGrid {
        self.depth
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    /// Downcasts the tape for the backend that produced it.
    pub fn tape<T: 'static>(&self) -> Option<&T> {
        self.tape.as_ref()?.downcast_ref::<T>()
    }
}

impl std::fmt::Debug for Inference {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Inference")
            .field("model", &self.model)
            .field("dims", &(self.depth.height(), self.depth.width()))
            .field("has_tape", &self.tape.is_some())
            .finish()
    }
}

pub trait DepthModel: Send + Sync {
    fn name(&self) -> &str;

    /// Fixed network input size, if the backend resizes internally.
    fn input_resolution(&self) -> Option<(usize, usize)>;

    /// `(d_min, d_max)` in meters.
    fn depth_range(&self) -> (f64, f64);

    fn forward(&self, image: &ImageRGB) -> Result<Inference, MdeError>;

    /// Vector-Jacobian product of the depth grid with `upstream`.
    fn backward(&self, inference: &Inference, upstream: &Grid) -> Result<Tensor3, MdeError>;
}

pub fn predict_depth(model: &dyn DepthModel, image: &ImageRGB) -> Result<DepthGrid, MdeError> {
    model.forward(image).map(Inference::into_depth)
}

pub fn depth_gradient(
    model: &dyn DepthModel,
    inference: &Inference,
    upstream: &Grid,
) -> Result<Tensor3, MdeError> {
    model.backward(inference, upstream)
}

/// Output nonlinearity applied after the row prior.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// The network already ends in its own activation.
    #[default]
    Identity,
    Sigmoid,
    Softplus,
}

impl Head {
    fn eval(self, x: f64) -> (f64, f64) {
        match self {
            Head::Identity => (x, 1.0),
            Head::Sigmoid => {
                let s = crate::nn::sigmoid(x);
                (s, s * (1.0 - s))
            }
            Head::Softplus => (crate::nn::softplus(x), crate::nn::sigmoid(x)),
        }
    }
}

/// Disparity-to-meters conversion: `depth = scale / (offset + gain * a + eps)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    pub scale: f64,
    #[serde(default)]
    pub eps: f64,
    #[serde(default)]
    pub disp_offset: f64,
    #[serde(default = "unit")]
    pub disp_gain: f64,
    #[serde(default = "min_depth")]
    pub min_depth: f64,
    #[serde(default = "max_depth")]
    pub max_depth: f64,
    #[serde(default)]
    pub head: Head,
}

fn unit() -> f64 {
    1.0
}
fn min_depth() -> f64 {
    0.1
}
fn max_depth() -> f64 {
    100.0
}

impl Calibration {
    fn validate(&self) -> Result<(), MdeError> {
        let ok = self.scale.is_finite()
            && self.scale > 0.0
            && self.eps.is_finite()
            && self.disp_offset.is_finite()
            && self.disp_gain.is_finite()
            && self.min_depth > 0.0
            && self.max_depth > self.min_depth
            && self.max_depth.is_finite();
        if ok {
            Ok(())
        } else {
            Err(MdeError::InvalidModel(format!("bad calibration {self:?}")))
        }
    }

    /// Depth and its derivative with respect to the pre-head value.
    fn convert(&self, pre: f64) -> (f64, f64) {
        let (a, da) = self.head.eval(pre);
        let denom = self.disp_offset + self.disp_gain * a + self.eps;
        if !(denom > 0.0) {
            return (self.max_depth, 0.0);
        }
        let raw = self.scale / denom;
        if raw <= self.min_depth {
            (self.min_depth, 0.0)
        } else if raw >= self.max_depth {
            (self.max_depth, 0.0)
        } else {
            (raw, -self.scale * self.disp_gain * da / (denom * denom))
        }
    }
}

/// Additive pre-activation bias that varies linearly from the top row to the
/// bottom row. A larger bottom value makes lower rows nearer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowPrior {
    pub top: f64,
    pub bottom: f64,
}

impl RowPrior {
    fn at(&self, row: usize, height: usize) -> f64 {
        if height <= 1 {
            return self.bottom;
        }
        let t = row as f64 / (height - 1) as f64;
        self.top + (self.bottom - self.top) * t
    }
}

/// On-disk description stored as `model.json` in a backend directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDescription {
    #[serde(default)]
    pub input_size: Option<[usize; 2]>,
    pub calibration: Calibration,
    #[serde(default)]
    pub row_prior: Option<RowPrior>,
    pub layers: Vec<LayerSpec>,
    #[serde(default = "default_weights_file")]
    pub weights: String,
}

fn default_weights_file() -> String {
    "weights.f32".to_string()
}

struct Letterbox {
    into: Resampler,
    back: Resampler,
}

impl Letterbox {
    fn new(h: usize, w: usize, ih: usize, iw: usize) -> Self {
        let s = (ih as f64 / h as f64).min(iw as f64 / w as f64);
        let nh = ((h as f64 * s).round() as usize).clamp(1, ih);
        let nw = ((w as f64 * s).round() as usize).clamp(1, iw);
        let (oy, ox) = ((ih - nh) / 2, (iw - nw) / 2);
        let (ry, rx) = (h as f64 / nh as f64, w as f64 / nw as f64);
        let into = Resampler::bilinear(h, w, ih, iw, |y, x| {
            let inside = (oy..oy + nh).contains(&y) && (ox..ox + nw).contains(&x);
            if !inside {
                return (f64::NAN, f64::NAN);
            }
            (
                (((y - oy) as f64 + 0.5) * ry - 0.5).clamp(0.0, (h - 1) as f64),
                (((x - ox) as f64 + 0.5) * rx - 0.5).clamp(0.0, (w - 1) as f64),
            )
        });
        let back = Resampler::bilinear(ih, iw, h, w, |y, x| {
            (
                (oy as f64 + (y as f64 + 0.5) / ry - 0.5).clamp(oy as f64, (oy + nh - 1) as f64),
                (ox as f64 + (x as f64 + 0.5) / rx - 0.5).clamp(ox as f64, (ox + nw - 1) as f64),
            )
        });
        Self { into, back }
    }
}

struct ConvTape {
    acts: Activations,
    /// d depth / d pre-head value, per output pixel.
    slope: Grid,
    letterbox: Option<Letterbox>,
}

/// A [`Sequential`] disparity network with calibration, optional row prior
/// and optional fixed input size (inputs are letterboxed to fit).
pub struct ConvDepthModel {
    name: String,
    net: Sequential,
    calibration: Calibration,
    row_prior: Option<RowPrior>,
    input_size: Option<(usize, usize)>,
}

impl ConvDepthModel {
    pub fn new(
        name: impl Into<String>,
        net: Sequential,
        calibration: Calibration,
        row_prior: Option<RowPrior>,
        input_size: Option<(usize, usize)>,
    ) -> Result<Self, MdeError> {
        calibration.validate()?;
        if net.input_channels().is_some_and(|c| c != 3) {
            return Err(MdeError::InvalidModel("network must take 3 input channels".into()));
        }
        if input_size.is_some_and(|(h, w)| h == 0 || w == 0) {
            return Err(MdeError::InvalidModel("input size must be positive".into()));
        }
        Ok(Self {
            name: name.into(),
            net,
            calibration,
            row_prior,
            input_size,
        })
    }

    pub fn network(&self) -> &Sequential {
        &self.net
    }

    pub fn calibration(&self) -> &Calibration {
        &self.calibration
    }

    /// Loads `<dir>/model.json` and its weight blob.
    pub fn load_dir(name: &str, dir: &Path) -> Result<Self, MdeError> {
        let unavailable = |reason: String| MdeError::BackendUnavailable {
            name: name.to_string(),
            reason,
        };
        let json_path = dir.join("model.json");
        let text = fs::read_to_string(&json_path)
            .map_err(|e| unavailable(format!("cannot read {}: {e}", json_path.display())))?;
        let desc: ModelDescription = serde_json::from_str(&text)
            .map_err(|e| MdeError::InvalidModel(format!("{}: {e}", json_path.display())))?;
        let weights = dir.join(&desc.weights);
        if !weights.is_file() {
            return Err(unavailable(format!("missing weights {}", weights.display())));
        }
        let net = Sequential::load_weights_for(&desc.layers, &weights)?;
        Self::new(
            name,
            net,
            desc.calibration,
            desc.row_prior,
            desc.input_size.map(|[h, w]| (h, w)),
        )
    }

    /// Writes this model in the format read by [`ConvDepthModel::load_dir`].
    pub fn save_dir(&self, dir: &Path) -> Result<(), MdeError> {
        fs::create_dir_all(dir).map_err(|source| NetworkError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let desc = ModelDescription {
            input_size: self.input_size.map(|(h, w)| [h, w]),
            calibration: self.calibration.clone(),
            row_prior: self.row_prior,
            layers: self.net.specs(),
            weights: default_weights_file(),
        };
        let json_path = dir.join("model.json");
        let text = serde_json::to_string_pretty(&desc).map_err(|e| MdeError::InvalidModel(e.to_string()))?;
        fs::write(&json_path, text).map_err(|source| NetworkError::Io {
            path: json_path.clone(),
            source,
        })?;
        let bytes: Vec<u8> = self
            .net
            .parameters()
            .iter()
            .flat_map(|v| (*v as f32).to_le_bytes())
            .collect();
        let wpath = dir.join(&desc.weights);
        fs::write(&wpath, bytes).map_err(|source| NetworkError::Io { path: wpath, source })?;
        Ok(())
    }
}

impl DepthModel for ConvDepthModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn input_resolution(&self) -> Option<(usize, usize)> {
        self.input_size
    }

    fn depth_range(&self) -> (f64, f64) {
        (self.calibration.min_depth, self.calibration.max_depth)
    }

    fn forward(&self, image: &ImageRGB) -> Result<Inference, MdeError> {
        let (h, w) = (image.height(), image.width());
        let letterbox = match self.input_size {
            Some((ih, iw)) if (ih, iw) != (h, w) => Some(Letterbox::new(h, w, ih, iw)),
            _ => None,
        };
        let input = match &letterbox {
            Some(lb) => lb.into.apply(image.tensor()),
            None => image.tensor().clone(),
        };
        let acts = self.net.forward(&input)?;
        let out = acts.last();
        if out.channels() != 1 || (out.height(), out.width()) != (input.height(), input.width()) {
            return Err(MdeError::ResolutionUnsupported {
                height: h,
                width: w,
                detail: format!(
                    "network produced {:?} from a {}x{} input",
                    out.shape(),
                    input.height(),
                    input.width()
                ),
            });
        }
        let z = match &letterbox {
            Some(lb) => lb.back.apply(out),
            None => out.clone(),
        };
        let mut depth = Grid::zeros(h, w);
        let mut slope = Grid::zeros(h, w);
        for y in 0..h {
            let bias = self.row_prior.map_or(0.0, |p| p.at(y, h));
            for x in 0..w {
                let (d, s) = self.calibration.convert(z.get(0, y, x) + bias);
                depth.set(y, x, d);
                slope.set(y, x, s);
            }
        }
        let tape = ConvTape {
            acts,
            slope,
            letterbox,
        };
        Ok(Inference::new(
            DepthGrid::new(depth, self.name.clone()).expect("clamped depths are positive"),
            self.name.clone(),
            Box::new(tape),
        ))
    }

    fn backward(&self, inference: &Inference, upstream: &Grid) -> Result<Tensor3, MdeError> {
        if inference.model() != self.name {
            return Err(MdeError::MissingForward(format!(
                "inference came from '{}', not '{}'",
                inference.model(),
                self.name
            )));
        }
        let tape = inference
            .tape::<ConvTape>()
            .ok_or_else(|| MdeError::MissingForward("inference carries no tape".into()))?;
        let (h, w) = tape.slope.dims();
        if upstream.dims() != (h, w) {
            return Err(MdeError::ShapeMismatch {
                expected: (h, w),
                found: upstream.dims(),
            });
        }
        let g_pre = Tensor3::from_vec(
            1,
            h,
            w,
            upstream
                .as_slice()
                .iter()
                .zip(tape.slope.as_slice())
                .map(|(u, s)| u * s)
                .collect(),
        );
        let g_out = match &tape.letterbox {
            Some(lb) => lb.back.transpose(&g_pre),
            None => g_pre,
        };
        let last = self.net.len().checked_sub(1);
        let g_in = match last {
            Some(idx) => self.net.backward(&tape.acts, &[(idx, g_out)]),
            None => g_out,
        };
        Ok(match &tape.letterbox {
            Some(lb) => lb.into.transpose(&g_in),
            None => g_in,
        })
    }
}

/// Seeded three-layer dilated convolution stack with a depth-from-row prior.
/// Weights are fixed at construction.
///
/// First-layer kernels are zero-mean, so a uniform brightness change inside
/// a flat area does not move the prediction, and the disparity map passes
/// through two fixed 3x3 box filters so an object reads as one coherent
/// depth rather than a per-pixel field.
pub struct ToyDepthModel {
    inner: ConvDepthModel,
}

impl ToyDepthModel {
    pub const NAME: &'static str = "toy";

    pub fn new(seed: u64) -> Self {
        Self::with_gain(seed, 1.0)
    }

    /// Same architecture with a different weight initialization gain.
    pub fn with_gain(seed: u64, gain: f64) -> Self {
        let conv = |i, o, d| LayerSpec::Conv {
            in_channels: i,
            out_channels: o,
            kernel: 3,
            dilation: d,
            padding: Padding::Replicate,
        };
        let specs = [
            conv(3, 8, 1),
            LayerSpec::Tanh,
            conv(8, 8, 2),
            LayerSpec::Tanh,
            conv(8, 1, 4),
        ];
        let net = Sequential::seeded(&specs, seed, gain).expect("static layer list is consistent");
        let mut layers = net.layers().to_vec();
        if let Some(Layer::Conv(c)) = layers.first_mut() {
            let per = c.in_channels * c.kernel * c.kernel;
            for w in c.weight.chunks_mut(per) {
                let m = w.iter().sum::<f64>() / per as f64;
                w.iter_mut().for_each(|v| *v -= m);
            }
        }
        for _ in 0..2 {
            layers.push(Layer::Conv(Conv2d {
                in_channels: 1,
                out_channels: 1,
                kernel: 3,
                dilation: 1,
                padding: Padding::Replicate,
                weight: vec![1.0 / 9.0; 9],
                bias: vec![0.0],
            }));
        }
        let net = Sequential::new(layers).expect("smoothing keeps one channel");
        let calibration = Calibration {
            scale: 10.0,
            eps: 1e-3,
            disp_offset: 0.0,
            disp_gain: 1.0,
            min_depth: 0.1,
            max_depth: 100.0,
            head: Head::Softplus,
        };
        let prior = RowPrior {
            top: -1.0,
            bottom: 2.0,
        };
        let inner = ConvDepthModel::new(Self::NAME, net, calibration, Some(prior), None)
            .expect("static calibration is valid");
        Self { inner }
    }

    pub fn as_conv(&self) -> &ConvDepthModel {
        &self.inner
    }
}

impl DepthModel for ToyDepthModel {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn input_resolution(&self) -> Option<(usize, usize)> {
        None
    }
    fn depth_range(&self) -> (f64, f64) {
        self.inner.depth_range()
    }
    fn forward(&self, image: &ImageRGB) -> Result<Inference, MdeError> {
        self.inner.forward(image)
    }
    fn backward(&self, inference: &Inference, upstream: &Grid) -> Result<Tensor3, MdeError> {
        self.inner.backward(inference, upstream)
    }
}

/// Resolves the weights directory: explicit value first, then [`WEIGHTS_ENV`].
pub fn weights_dir(explicit: Option<&Path>) -> Option<PathBuf> {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(WEIGHTS_ENV).map(PathBuf::from))
}

/// Looks a backend up by name. `"toy"` is always available; anything else
/// must exist as `<weights_dir>/<name>/model.json`.
pub fn load_backend(
    name: &str,
    weights: Option<&Path>,
    toy_seed: u64,
) -> Result<Box<dyn DepthModel>, MdeError> {
    if name == ToyDepthModel::NAME {
        return Ok(Box::new(ToyDepthModel::new(toy_seed)));
    }
    let Some(root) = weights_dir(weights) else {
        return Err(MdeError::BackendUnavailable {
            name: name.to_string(),
            reason: format!("no weights directory configured (set model.weights_dir or {WEIGHTS_ENV})"),
        });
    };
    let dir = root.join(name);
    if !dir.is_dir() {
        let hint = if KNOWN_BACKENDS.contains(&name) {
            "export the pretrained network there"
        } else {
            "unknown backend name"
        };
        return Err(MdeError::BackendUnavailable {
            name: name.to_string(),
            reason: format!("{} does not exist; {hint}", dir.display()),
        });
    }
    Ok(Box::new(ConvDepthModel::load_dir(name, &dir)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(h: usize, w: usize) -> ImageRGB {
        ImageRGB::filled(h, w, [0.5, 0.5, 0.5])
    }

    fn textured(h: usize, w: usize) -> ImageRGB {
        ImageRGB::from_fn(h, w, |y, x| {
            let t = (y * 7 + x * 3) as f64;
            [
                0.5 + 0.4 * (t * 0.37).sin(),
                0.5 + 0.4 * (t * 0.23 + 1.0).cos(),
                0.5 + 0.3 * ((y as f64) * 0.9 - x as f64 * 0.4).sin(),
            ]
        })
    }

    #[test]
    fn output_dims_match_and_depths_are_in_range() {
        let m = ToyDepthModel::new(0);
        for (h, w) in [(32, 32), (32, 64), (64, 32)] {
            let d = predict_depth(&m, &textured(h, w)).unwrap();
            assert_eq!((d.height(), d.width()), (h, w));
            let (lo, hi) = d.values().min_max();
            assert!(lo >= 0.1 && hi <= 100.0, "{lo} {hi}");
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let m = ToyDepthModel::new(3);
        let img = textured(16, 16);
        let a = predict_depth(&m, &img).unwrap();
        let b = predict_depth(&ToyDepthModel::new(3), &img).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn row_prior_orders_rows_on_blank_images() {
        for seed in 0..8 {
            let m = ToyDepthModel::new(seed);
            for img in [gray(32, 32), ImageRGB::filled(32, 32, [0.0; 3]), ImageRGB::filled(32, 32, [1.0; 3])] {
                let d = predict_depth(&m, &img).unwrap();
                let row_mean = |y: usize| (0..32).map(|x| d.get(y, x)).sum::<f64>() / 32.0;
                for y in 1..32 {
                    assert!(row_mean(y - 1) > row_mean(y), "seed {seed} row {y}");
                }
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let m = ToyDepthModel::new(0);
        let inf = m.forward(&textured(8, 8)).unwrap();
        let g = depth_gradient(&m, &inf, &Grid::zeros(8, 8)).unwrap();
        assert_eq!(g.shape(), (3, 8, 8));
        assert!(g.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gradient_without_tape_is_an_error() {
        let m = ToyDepthModel::new(0);
        let d = predict_depth(&m, &gray(4, 4)).unwrap();
        let inf = Inference::detached(d, "toy");
        assert!(matches!(
            m.backward(&inf, &Grid::zeros(4, 4)),
            Err(MdeError::MissingForward(_))
        ));
    }

    #[test]
    fn finite_difference_matches_vjp() {
        let m = ToyDepthModel::new(1);
        let img = textured(8, 8);
        let up = Grid::from_fn(8, 8, |y, x| ((y * 5 + x * 3) % 7) as f64 / 7.0 - 0.4);
        let inf = m.forward(&img).unwrap();
        let g = m.backward(&inf, &up).unwrap();
        let objective = |t: &Tensor3| {
            let d = predict_depth(&m, &ImageRGB::clamped(t.clone())).unwrap();
            d.values().as_slice().iter().zip(up.as_slice()).map(|(a, b)| a * b).sum::<f64>()
        };
        let h = 1e-6;
        let mut num = Vec::new();
        for idx in 0..img.tensor().as_slice().len() {
            let mut p = img.tensor().clone();
            p.as_mut_slice()[idx] += h;
            let mut q = img.tensor().clone();
            q.as_mut_slice()[idx] -= h;
            num.push((objective(&p) - objective(&q)) / (2.0 * h));
        }
        let diff: f64 = num.iter().zip(g.as_slice()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = num.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(norm > 0.0);
        assert!(diff / norm <= 1e-3, "relative error {}", diff / norm);
    }

    #[test]
    fn letterboxed_backend_round_trips_through_disk() {
        let toy = ToyDepthModel::new(2);
        let conv = toy.as_conv();
        let boxed = ConvDepthModel::new(
            "monodepth2",
            conv.network().clone(),
            conv.calibration().clone(),
            None,
            Some((16, 32)),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        boxed.save_dir(&dir.path().join("monodepth2")).unwrap();
        let loaded = load_backend("monodepth2", Some(dir.path()), 0).unwrap();
        assert_eq!(loaded.input_resolution(), Some((16, 32)));
        let img = textured(12, 12);
        let inf = loaded.forward(&img).unwrap();
        assert_eq!((inf.depth().height(), inf.depth().width()), (12, 12));
        let g = loaded.backward(&inf, &Grid::filled(12, 12, 1.0)).unwrap();
        assert_eq!(g.shape(), (3, 12, 12));
        assert!(g.is_finite());
    }

    #[test]
    fn missing_backend_is_reported_not_substituted() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_backend("manydepth", Some(dir.path()), 0).err().unwrap();
        assert!(matches!(err, MdeError::BackendUnavailable { .. }));
    }
}

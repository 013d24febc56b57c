//! Minimal sequential convolution networks with hand-written backward passes.
//!
//! Used for the seeded toy depth model, the toy feature extractor and for
//! externally exported networks described by a JSON layer list plus a raw
//! little-endian `f32` weight blob.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor3;

#[derive(Debug, thiserror::Error)]
pub enum NetworkError {
    #[error("layer {index} expects {expected} input channels, got {found}")]
    ChannelMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("weight blob holds {found} values, layers need {expected}")]
    WeightCount { expected: usize, found: usize },
    #[error("invalid network description: {0}")]
    Spec(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        dilation: usize,
        #[serde(default)]
        padding: Padding,
    },
    Relu,
    Tanh,
    Sigmoid,
    Elu,
    Softplus,
    MaxPool2,
    Upsample2,
}

fn one() -> usize {
    1
}

/// Border handling for "same"-size convolutions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    #[default]
    Zero,
    Replicate,
    Reflect,
}

impl Padding {
    /// Source index for a possibly out-of-range coordinate.
    fn resolve(self, i: isize, n: usize) -> Option<usize> {
        let n = n as isize;
        if (0..n).contains(&i) {
            return Some(i as usize);
        }
        match self {
            Padding::Zero => None,
            Padding::Replicate => Some(i.clamp(0, n - 1) as usize),
            Padding::Reflect => {
                if n == 1 {
                    return Some(0);
                }
                let period = 2 * (n - 1);
                let mut m = i.rem_euclid(period);
                if m >= n {
                    m = period - m;
                }
                Some(m as usize)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub padding: Padding,
    /// `[out][in][ky][kx]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    fn pad(&self) -> isize {
        (self.dilation * (self.kernel / 2)) as isize
    }

    #[inline]
    fn w(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.weight[((o * self.in_channels + i) * self.kernel + ky) * self.kernel + kx]
    }

    /// Per kernel offset, the source index of every output coordinate.
    fn taps(&self, n: usize) -> Vec<Vec<Option<usize>>> {
        let pad = self.pad();
        let dil = self.dilation as isize;
        (0..self.kernel)
            .map(|k| {
                let off = k as isize * dil - pad;
                (0..n)
                    .map(|i| self.padding.resolve(i as isize + off, n))
                    .collect()
            })
            .collect()
    }

    fn forward(&self, x: &Tensor3) -> Tensor3 {
        let (_, h, w) = x.shape();
        let mut out = Tensor3::zeros(self.out_channels, h, w);
        let (rows, cols) = (self.taps(h), self.taps(w));
        for o in 0..self.out_channels {
            let plane = out.plane_mut(o);
            plane.iter_mut().for_each(|v| *v = self.bias[o]);
            for i in 0..self.in_channels {
                let src = x.plane(i);
                for (ky, row_map) in rows.iter().enumerate() {
                    for (kx, col_map) in cols.iter().enumerate() {
                        let wt = self.w(o, i, ky, kx);
                        if wt == 0.0 {
                            continue;
                        }
                        for (y, sy) in row_map.iter().enumerate() {
                            let Some(sy) = *sy else { continue };
                            let srow = &src[sy * w..(sy + 1) * w];
                            let drow = &mut plane[y * w..(y + 1) * w];
                            for (d, sx) in drow.iter_mut().zip(col_map) {
                                if let Some(sx) = *sx {
                                    *d += wt * srow[sx];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn backward_input(&self, upstream: &Tensor3) -> Tensor3 {
        let (_, h, w) = upstream.shape();
        let mut g = Tensor3::zeros(self.in_channels, h, w);
        let (rows, cols) = (self.taps(h), self.taps(w));
        for o in 0..self.out_channels {
            let up = upstream.plane(o);
            for i in 0..self.in_channels {
                let dst = g.plane_mut(i);
                for (ky, row_map) in rows.iter().enumerate() {
                    for (kx, col_map) in cols.iter().enumerate() {
                        let wt = self.w(o, i, ky, kx);
                        if wt == 0.0 {
                            continue;
                        }
                        for (y, sy) in row_map.iter().enumerate() {
                            let Some(sy) = *sy else { continue };
                            let urow = &up[y * w..(y + 1) * w];
                            for (u, sx) in urow.iter().zip(col_map) {
                                if let Some(sx) = *sx {
                                    dst[sy * w + sx] += wt * u;
                                }
                            }
                        }
                    }
                }
            }
        }
        g
    }

    fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(Conv2d),
    Relu,
    Tanh,
    Sigmoid,
    Elu,
    Softplus,
    MaxPool2,
    Upsample2,
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Layer {
    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv(c) => LayerSpec::Conv {
                in_channels: c.in_channels,
                out_channels: c.out_channels,
                kernel: c.kernel,
                dilation: c.dilation,
                padding: c.padding,
            },
            Layer::Relu => LayerSpec::Relu,
            Layer::Tanh => LayerSpec::Tanh,
            Layer::Sigmoid => LayerSpec::Sigmoid,
            Layer::Elu => LayerSpec::Elu,
            Layer::Softplus => LayerSpec::Softplus,
            Layer::MaxPool2 => LayerSpec::MaxPool2,
            Layer::Upsample2 => LayerSpec::Upsample2,
        }
    }

    fn forward(&self, x: &Tensor3) -> Tensor3 {
        match self {
            Layer::Conv(c) => c.forward(x),
            Layer::Relu => x.map(|v| v.max(0.0)),
            Layer::Tanh => x.map(f64::tanh),
            Layer::Sigmoid => x.map(sigmoid),
            Layer::Elu => x.map(|v| if v > 0.0 { v } else { v.exp_m1() }),
            Layer::Softplus => x.map(softplus),
            Layer::MaxPool2 => {
                let (c, h, w) = x.shape();
                let (oh, ow) = ((h / 2).max(1), (w / 2).max(1));
                Tensor3::from_fn(c, oh, ow, |ch, y, xx| {
                    let mut m = f64::NEG_INFINITY;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let (sy, sx) = (2 * y + dy, 2 * xx + dx);
                            if sy < h && sx < w {
                                m = m.max(x.get(ch, sy, sx));
                            }
                        }
                    }
                    m
                })
            }
            Layer::Upsample2 => {
                let (c, h, w) = x.shape();
                Tensor3::from_fn(c, 2 * h, 2 * w, |ch, y, xx| x.get(ch, y / 2, xx / 2))
            }
        }
    }

    fn backward(&self, input: &Tensor3, output: &Tensor3, upstream: &Tensor3) -> Tensor3 {
        let elementwise = |d: &dyn Fn(f64, f64) -> f64| {
            let mut g = upstream.clone();
            for ((gv, &xi), &yo) in g
                .as_mut_slice()
                .iter_mut()
                .zip(input.as_slice())
                .zip(output.as_slice())
            {
                *gv *= d(xi, yo);
            }
            g
        };
        match self {
            Layer::Conv(c) => c.backward_input(upstream),
            Layer::Relu => elementwise(&|x, _| if x > 0.0 { 1.0 } else { 0.0 }),
            Layer::Tanh => elementwise(&|_, y| 1.0 - y * y),
            Layer::Sigmoid => elementwise(&|_, y| y * (1.0 - y)),
            Layer::Elu => elementwise(&|x, y| if x > 0.0 { 1.0 } else { y + 1.0 }),
            Layer::Softplus => elementwise(&|x, _| sigmoid(x)),
            Layer::MaxPool2 => {
                let (c, h, w) = input.shape();
                let mut g = Tensor3::zeros(c, h, w);
                for ch in 0..c {
                    for y in 0..output.height() {
                        for xx in 0..output.width() {
                            let target = output.get(ch, y, xx);
                            // first maximal element receives the gradient
                            'win: for dy in 0..2 {
                                for dx in 0..2 {
                                    let (sy, sx) = (2 * y + dy, 2 * xx + dx);
                                    if sy < h && sx < w && input.get(ch, sy, sx) == target {
                                        g.add_at(ch, sy, sx, upstream.get(ch, y, xx));
                                        break 'win;
                                    }
                                }
                            }
                        }
                    }
                }
                g
            }
            Layer::Upsample2 => {
                let (c, h, w) = input.shape();
                let mut g = Tensor3::zeros(c, h, w);
                for ch in 0..c {
                    for y in 0..upstream.height() {
                        for xx in 0..upstream.width() {
                            g.add_at(ch, y / 2, xx / 2, upstream.get(ch, y, xx));
                        }
                    }
                }
                g
            }
        }
    }
}

/// Output of every layer from one forward pass; index `i` is after layer `i`.
#[derive(Debug, Clone)]
pub struct Activations {
    pub input: Tensor3,
    pub outputs: Vec<Tensor3>,
}

impl Activations {
    pub fn last(&self) -> &Tensor3 {
        self.outputs.last().unwrap_or(&self.input)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequential {
    layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Result<Self, NetworkError> {
        let net = Self { layers };
        net.check_channels()?;
        Ok(net)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    fn check_channels(&self) -> Result<(), NetworkError> {
        let mut ch: Option<usize> = None;
        for (index, layer) in self.layers.iter().enumerate() {
            if let Layer::Conv(c) = layer {
                if let Some(found) = ch {
                    if found != c.in_channels {
                        return Err(NetworkError::ChannelMismatch {
                            index,
                            expected: c.in_channels,
                            found,
                        });
                    }
                }
                ch = Some(c.out_channels);
            }
        }
        Ok(())
    }

    pub fn input_channels(&self) -> Option<usize> {
        self.layers.iter().find_map(|l| match l {
            Layer::Conv(c) => Some(c.in_channels),
            _ => None,
        })
    }

    pub fn forward(&self, input: &Tensor3) -> Result<Activations, NetworkError> {
        if let Some(expected) = self.input_channels() {
            if expected != input.channels() {
                return Err(NetworkError::ChannelMismatch {
                    index: 0,
                    expected,
                    found: input.channels(),
                });
            }
        }
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut cur = input;
        for layer in &self.layers {
            outputs.push(layer.forward(cur));
            cur = outputs.last().expect("just pushed");
        }
        Ok(Activations {
            input: input.clone(),
            outputs,
        })
    }

    /// Gradient w.r.t. the input, given gradients injected at any subset of
    /// layer outputs.
    pub fn backward(&self, acts: &Activations, injected: &[(usize, Tensor3)]) -> Tensor3 {
        let n = self.layers.len();
        let mut grad: Option<Tensor3> = None;
        for idx in (0..n).rev() {
            for (at, g) in injected.iter().filter(|(at, _)| *at == idx) {
                debug_assert_eq!(*at, idx);
                match &mut grad {
                    Some(acc) => acc.axpy(1.0, g),
                    None => grad = Some(g.clone()),
                }
            }
            if let Some(g) = grad.take() {
                let input = if idx == 0 { &acts.input } else { &acts.outputs[idx - 1] };
                grad = Some(self.layers[idx].backward(input, &acts.outputs[idx], &g));
            }
        }
        grad.unwrap_or_else(|| {
            let (c, h, w) = acts.input.shape();
            Tensor3::zeros(c, h, w)
        })
    }

    /// Seeded initialization from a layer list: uniform weights scaled by
    /// `gain / sqrt(fan_in)`, small uniform biases.
    pub fn seeded(specs: &[LayerSpec], seed: u64, gain: f64) -> Result<Self, NetworkError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = specs
            .iter()
            .map(|s| match *s {
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    dilation,
                    padding,
                } => {
                    let fan_in = (in_channels * kernel * kernel) as f64;
                    let a = gain * (3.0 / fan_in).sqrt();
                    let weight = (0..out_channels * in_channels * kernel * kernel)
                        .map(|_| rng.random_range(-a..a))
                        .collect();
                    let bias = (0..out_channels).map(|_| rng.random_range(-0.1..0.1)).collect();
                    Layer::Conv(Conv2d {
                        in_channels,
                        out_channels,
                        kernel,
                        dilation,
                        padding,
                        weight,
                        bias,
                    })
                }
                ref other => simple_layer(other),
            })
            .collect();
        Self::new(layers)
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    /// Flattened parameters in file order: each conv's weights, then biases.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            if let Layer::Conv(c) = l {
                out.extend_from_slice(&c.weight);
                out.extend_from_slice(&c.bias);
            }
        }
        out
    }

    pub fn from_parameters(specs: &[LayerSpec], params: &[f64]) -> Result<Self, NetworkError> {
        let expected: usize = specs
            .iter()
            .map(|s| match *s {
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => out_channels * in_channels * kernel * kernel + out_channels,
                _ => 0,
            })
            .sum();
        if expected != params.len() {
            return Err(NetworkError::WeightCount {
                expected,
                found: params.len(),
            });
        }
        let mut cursor = 0;
        let mut layers = Vec::with_capacity(specs.len());
        for s in specs {
            layers.push(match *s {
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    dilation,
                    padding,
                } => {
                    if kernel % 2 == 0 || dilation == 0 {
                        return Err(NetworkError::Spec(format!(
                            "conv kernel must be odd and dilation >= 1, got {kernel}/{dilation}"
                        )));
                    }
                    let nw = out_channels * in_channels * kernel * kernel;
                    let weight = params[cursor..cursor + nw].to_vec();
                    cursor += nw;
                    let bias = params[cursor..cursor + out_channels].to_vec();
                    cursor += out_channels;
                    Layer::Conv(Conv2d {
                        in_channels,
                        out_channels,
                        kernel,
                        dilation,
                        padding,
                        weight,
                        bias,
                    })
                }
                ref other => simple_layer(other),
            });
        }
        Self::new(layers)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Conv(c) => c.param_count(),
                _ => 0,
            })
            .sum()
    }

    /// Writes `<stem>.json` (layer list) and `<stem>.f32` (weights).
    pub fn save(&self, json_path: &Path, weights_path: &Path) -> Result<(), NetworkError> {
        let text = serde_json::to_string_pretty(&self.specs()).expect("specs serialize");
        fs::write(json_path, text).map_err(|source| NetworkError::Io {
            path: json_path.to_path_buf(),
            source,
        })?;
        let bytes: Vec<u8> = self
            .parameters()
            .iter()
            .flat_map(|&v| (v as f32).to_le_bytes())
            .collect();
        fs::write(weights_path, bytes).map_err(|source| NetworkError::Io {
            path: weights_path.to_path_buf(),
            source,
        })
    }

    pub fn load(json_path: &Path, weights_path: &Path) -> Result<Self, NetworkError> {
        let text = fs::read_to_string(json_path).map_err(|source| NetworkError::Io {
            path: json_path.to_path_buf(),
            source,
        })?;
        let specs: Vec<LayerSpec> =
            serde_json::from_str(&text).map_err(|e| NetworkError::Spec(e.to_string()))?;
        Self::load_weights_for(&specs, weights_path)
    }

    pub fn load_weights_for(specs: &[LayerSpec], weights_path: &Path) -> Result<Self, NetworkError> {
        let bytes = fs::read(weights_path).map_err(|source| NetworkError::Io {
            path: weights_path.to_path_buf(),
            source,
        })?;
        if bytes.len() % 4 != 0 {
            return Err(NetworkError::Spec("weight blob length is not a multiple of 4".into()));
        }
        let params: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Self::from_parameters(specs, &params)
    }
}

fn simple_layer(spec: &LayerSpec) -> Layer {
    match spec {
        LayerSpec::Relu => Layer::Relu,
        LayerSpec::Tanh => Layer::Tanh,
        LayerSpec::Sigmoid => Layer::Sigmoid,
        LayerSpec::Elu => Layer::Elu,
        LayerSpec::Softplus => Layer::Softplus,
        LayerSpec::MaxPool2 => Layer::MaxPool2,
        LayerSpec::Upsample2 => Layer::Upsample2,
        LayerSpec::Conv { .. } => unreachable!("conv layers carry weights"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_input(c: usize, h: usize, w: usize) -> Tensor3 {
        Tensor3::from_fn(c, h, w, |ch, y, x| {
            (((ch * 7 + y * 13 + x * 29) % 17) as f64 / 17.0) - 0.3
        })
    }

    fn fd_check(net: &Sequential, input: &Tensor3, taps: &[usize]) {
        // loss = sum over taps of <probe, output>
        let acts = net.forward(input).unwrap();
        let probes: Vec<(usize, Tensor3)> = taps
            .iter()
            .map(|&t| {
                let o = &acts.outputs[t];
                let (c, h, w) = o.shape();
                (t, Tensor3::from_fn(c, h, w, |a, b, d| ((a + 2 * b + 3 * d) % 5) as f64 - 2.0))
            })
            .collect();
        let loss = |x: &Tensor3| {
            let a = net.forward(x).unwrap();
            probes.iter().map(|(t, p)| a.outputs[*t].dot(p)).sum::<f64>()
        };
        let grad = net.backward(&acts, &probes);
        let eps = 1e-6;
        for idx in (0..input.as_slice().len()).step_by(7) {
            let mut plus = input.clone();
            plus.as_mut_slice()[idx] += eps;
            let mut minus = input.clone();
            minus.as_mut_slice()[idx] -= eps;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * eps);
            let an = grad.as_slice()[idx];
            assert!(
                (fd - an).abs() <= 1e-5 * (1.0 + fd.abs()),
                "index {idx}: fd {fd} vs analytic {an}"
            );
        }
    }

    #[test]
    fn conv_stack_gradient_matches_finite_differences() {
        let specs = [
            LayerSpec::Conv { in_channels: 3, out_channels: 4, kernel: 3, dilation: 1, padding: Padding::Zero },
            LayerSpec::Tanh,
            LayerSpec::Conv { in_channels: 4, out_channels: 3, kernel: 3, dilation: 2, padding: Padding::Reflect },
            LayerSpec::Softplus,
            LayerSpec::Conv { in_channels: 3, out_channels: 2, kernel: 1, dilation: 1, padding: Padding::Zero },
            LayerSpec::Sigmoid,
        ];
        let net = Sequential::seeded(&specs, 11, 1.0).unwrap();
        fd_check(&net, &sample_input(3, 7, 6), &[1, 5]);
    }

    #[test]
    fn pool_and_upsample_gradients() {
        let specs = [
            LayerSpec::Conv { in_channels: 2, out_channels: 3, kernel: 3, dilation: 1, padding: Padding::Zero },
            LayerSpec::Elu,
            LayerSpec::MaxPool2,
            LayerSpec::Upsample2,
            LayerSpec::Conv { in_channels: 3, out_channels: 1, kernel: 3, dilation: 1, padding: Padding::Zero },
        ];
        let net = Sequential::seeded(&specs, 5, 1.0).unwrap();
        fd_check(&net, &sample_input(2, 8, 6), &[2, 4]);
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let specs = [
            LayerSpec::Conv { in_channels: 3, out_channels: 4, kernel: 3, dilation: 1, padding: Padding::Zero },
            LayerSpec::Conv { in_channels: 5, out_channels: 1, kernel: 3, dilation: 1, padding: Padding::Zero },
        ];
        assert!(matches!(
            Sequential::seeded(&specs, 0, 1.0),
            Err(NetworkError::ChannelMismatch { index: 1, .. })
        ));
    }

    #[test]
    fn save_load_round_trip() {
        let specs = [
            LayerSpec::Conv { in_channels: 3, out_channels: 2, kernel: 3, dilation: 1, padding: Padding::Zero },
            LayerSpec::Relu,
        ];
        let net = Sequential::seeded(&specs, 1, 1.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (j, w) = (dir.path().join("n.json"), dir.path().join("n.f32"));
        net.save(&j, &w).unwrap();
        let back = Sequential::load(&j, &w).unwrap();
        assert_eq!(back.specs(), net.specs());
        for (a, b) in back.parameters().iter().zip(net.parameters()) {
            assert_eq!(*a, b as f32 as f64);
        }
        std::fs::write(&w, [0u8; 12]).unwrap();
        assert!(matches!(
            Sequential::load(&j, &w),
            Err(NetworkError::WeightCount { .. })
        ));
    }
}

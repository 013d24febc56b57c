//! Feature extractors: a convolution stack plus the activations it exposes.
//!
//! Taps are indices into the activation list of a [`Sequential`] forward
//! pass: tap 0 is the (normalized) input itself and tap `k` is the output of
//! layer `k - 1`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::nn::{Activations, LayerSpec, Padding, Sequential};
use crate::tensor::Tensor3;

use super::StyleError;

#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    net: Sequential,
    style_taps: Vec<usize>,
    content_taps: Vec<usize>,
    mean: [f64; 3],
    std: [f64; 3],
}

/// Forward record needed to backpropagate tap gradients to pixels.
#[derive(Debug, Clone)]
pub struct FeatureTape {
    acts: Activations,
}

impl FeatureTape {
    pub fn tap(&self, index: usize) -> &Tensor3 {
        if index == 0 {
            &self.acts.input
        } else {
            &self.acts.outputs[index - 1]
        }
    }
}

/// JSON description of an exported backbone (`extractor.json`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractorDescription {
    pub layers: Vec<LayerSpec>,
    pub style_taps: Vec<usize>,
    pub content_taps: Vec<usize>,
    #[serde(default = "zero3")]
    pub mean: [f64; 3],
    #[serde(default = "one3")]
    pub std: [f64; 3],
    #[serde(default = "weights_name")]
    pub weights: String,
}

fn zero3() -> [f64; 3] {
    [0.0; 3]
}
fn one3() -> [f64; 3] {
    [1.0; 3]
}
fn weights_name() -> String {
    "weights.f32".into()
}

impl FeatureExtractor {
    pub fn new(
        net: Sequential,
        style_taps: Vec<usize>,
        content_taps: Vec<usize>,
    ) -> Result<Self, StyleError> {
        let n = net.len();
        if style_taps.is_empty() && content_taps.is_empty() {
            return Err(StyleError::Extractor("at least one tap is required".into()));
        }
        if let Some(bad) = style_taps.iter().chain(&content_taps).find(|t| **t > n) {
            return Err(StyleError::Extractor(format!("tap {bad} exceeds layer count {n}")));
        }
        Ok(Self {
            net,
            style_taps,
            content_taps,
            mean: [0.0; 3],
            std: [1.0; 3],
        })
    }

    /// Raw pixels as the only feature map, used for both style and content.
    pub fn identity() -> Self {
        Self::new(Sequential::new(Vec::new()).expect("empty network"), vec![0], vec![0])
            .expect("tap 0 always exists")
    }

    /// Deterministic random convolutions. Style is read after each
    /// nonlinearity, content after the last.
    pub fn toy(seed: u64) -> Self {
        let conv = |i, o| LayerSpec::Conv {
            in_channels: i,
            out_channels: o,
            kernel: 3,
            dilation: 1,
            padding: Padding::Reflect,
        };
        let specs = [conv(3, 6), LayerSpec::Tanh, conv(6, 8), LayerSpec::Tanh];
        let net = Sequential::seeded(&specs, seed ^ 0x5eed_f00d, 1.0).expect("static layers");
        Self::new(net, vec![2, 4], vec![4]).expect("static taps")
    }

    /// Loads `<dir>/extractor.json` plus its weight blob.
    pub fn load_dir(dir: &Path) -> Result<Self, StyleError> {
        let path = dir.join("extractor.json");
        let text = fs::read_to_string(&path)
            .map_err(|e| StyleError::Extractor(format!("cannot read {}: {e}", path.display())))?;
        let desc: ExtractorDescription = serde_json::from_str(&text)
            .map_err(|e| StyleError::Extractor(format!("{}: {e}", path.display())))?;
        let net = Sequential::load_weights_for(&desc.layers, &dir.join(&desc.weights))
            .map_err(|e| StyleError::Extractor(e.to_string()))?;
        let mut ex = Self::new(net, desc.style_taps, desc.content_taps)?;
        if desc.std.iter().any(|s| !(*s > 0.0)) {
            return Err(StyleError::Extractor("normalization std must be positive".into()));
        }
        ex.mean = desc.mean;
        ex.std = desc.std;
        Ok(ex)
    }

    /// Overrides the tap lists; `None` keeps the current list.
    pub fn with_taps(mut self, style: Option<Vec<usize>>, content: Option<Vec<usize>>) -> Result<Self, StyleError> {
        let style = style.unwrap_or_else(|| self.style_taps.clone());
        let content = content.unwrap_or_else(|| self.content_taps.clone());
        let (mean, std) = (self.mean, self.std);
        self = Self::new(self.net, style, content)?;
        self.mean = mean;
        self.std = std;
        Ok(self)
    }

    pub fn style_taps(&self) -> &[usize] {
        &self.style_taps
    }

    pub fn content_taps(&self) -> &[usize] {
        &self.content_taps
    }

    pub fn forward(&self, image: &Tensor3) -> Result<FeatureTape, StyleError> {
        let norm = Tensor3::from_fn(image.channels(), image.height(), image.width(), |c, y, x| {
            let k = c.min(2);
            (image.get(c, y, x) - self.mean[k]) / self.std[k]
        });
        let acts = self
            .net
            .forward(&norm)
            .map_err(|e| StyleError::Extractor(e.to_string()))?;
        Ok(FeatureTape { acts })
    }

    /// Pixel gradient from per-tap gradients `(tap, grad)`.
    pub fn backward(&self, tape: &FeatureTape, grads: Vec<(usize, Tensor3)>) -> Tensor3 {
        let (c, h, w) = tape.acts.input.shape();
        let mut at_input = Tensor3::zeros(c, h, w);
        let mut injected = Vec::with_capacity(grads.len());
        for (tap, g) in grads {
            if tap == 0 {
                at_input.axpy(1.0, &g);
            } else {
                injected.push((tap - 1, g));
            }
        }
        if !injected.is_empty() {
            at_input.axpy(1.0, &self.net.backward(&tape.acts, &injected));
        }
        for ch in 0..c {
            let s = self.std[ch.min(2)];
            at_input.plane_mut(ch).iter_mut().for_each(|v| *v /= s);
        }
        at_input
    }
}

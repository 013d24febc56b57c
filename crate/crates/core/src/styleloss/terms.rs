//! Style, content and smoothness terms with their pixel gradients.

use nalgebra::DMatrix;

use crate::asset_io::config::SmoothnessForm;
use crate::tensor::Tensor3;

use super::extractor::{FeatureExtractor, FeatureTape};
use super::StyleError;

fn as_matrix(f: &Tensor3) -> DMatrix<f64> {
    let (c, h, w) = f.shape();
    DMatrix::from_row_slice(c, h * w, f.as_slice())
}

/// `F F^T / (C * P)` for a `C x H x W` feature map with `P = H * W`.
pub fn gram(features: &Tensor3) -> DMatrix<f64> {
    let (c, h, w) = features.shape();
    let f = as_matrix(features);
    (&f * f.transpose()) / (c * h * w) as f64
}

/// Per-tap Gram matrices of the style image.
#[derive(Debug, Clone)]
pub struct StyleTarget {
    grams: Vec<(usize, DMatrix<f64>)>,
}

impl StyleTarget {
    pub fn new(extractor: &FeatureExtractor, style: &Tensor3) -> Result<Self, StyleError> {
        let tape = extractor.forward(style)?;
        Ok(Self::from_tape(extractor, &tape))
    }

    pub(crate) fn from_tape(extractor: &FeatureExtractor, tape: &FeatureTape) -> Self {
        let grams = extractor
            .style_taps()
            .iter()
            .map(|&t| (t, gram(tape.tap(t))))
            .collect();
        Self { grams }
    }

    pub fn grams(&self) -> impl Iterator<Item = &DMatrix<f64>> {
        self.grams.iter().map(|(_, g)| g)
    }

    /// Loss and per-tap feature gradients for an already extracted image.
    pub(crate) fn loss_on_tape(&self, tape: &FeatureTape) -> Result<(f64, Vec<(usize, Tensor3)>), StyleError> {
        let mut loss = 0.0;
        let mut grads = Vec::with_capacity(self.grams.len());
        for (tap, target) in &self.grams {
            let feats = tape.tap(*tap);
            let (c, h, w) = feats.shape();
            if target.nrows() != c {
                return Err(StyleError::Dimension(format!(
                    "tap {tap} has {c} channels, style target has {}",
                    target.nrows()
                )));
            }
            let f = as_matrix(feats);
            let n = (c * h * w) as f64;
            let g = (&f * f.transpose()) / n;
            let diff = &g - target;
            loss += diff.norm_squared();
            let df = (&diff * &f) * (4.0 / n);
            let data: Vec<f64> = df.transpose().as_slice().to_vec();
            grads.push((*tap, Tensor3::from_vec(c, h, w, data)));
        }
        Ok((loss, grads))
    }
}

/// `sum_l ||G(F_l(x_s)) - G(F_l(x'))||^2` with its gradient in `x'`.
pub fn style_loss(
    x_adv: &Tensor3,
    target: &StyleTarget,
    extractor: &FeatureExtractor,
) -> Result<(f64, Tensor3), StyleError> {
    let tape = extractor.forward(x_adv)?;
    let (loss, grads) = target.loss_on_tape(&tape)?;
    Ok((loss, extractor.backward(&tape, grads)))
}

pub(crate) fn content_on_tape(
    tape: &FeatureTape,
    reference: &[(usize, Tensor3)],
) -> Result<(f64, Vec<(usize, Tensor3)>), StyleError> {
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(reference.len());
    for (tap, r) in reference {
        let f = tape.tap(*tap);
        if f.shape() != r.shape() {
            return Err(StyleError::Dimension(format!(
                "content tap {tap}: {:?} vs {:?}",
                f.shape(),
                r.shape()
            )));
        }
        let mut d = f.clone();
        d.axpy(-1.0, r);
        loss += d.sum_sq();
        d.scale(2.0);
        grads.push((*tap, d));
    }
    Ok((loss, grads))
}

/// `sum_l ||F_l(x) - F_l(x')||^2` with its gradient in `x'`.
pub fn content_loss(
    x_adv: &Tensor3,
    x: &Tensor3,
    extractor: &FeatureExtractor,
) -> Result<(f64, Tensor3), StyleError> {
    if x_adv.shape() != x.shape() {
        return Err(StyleError::Dimension(format!("{:?} vs {:?}", x_adv.shape(), x.shape())));
    }
    let reference_tape = extractor.forward(x)?;
    let reference: Vec<_> = extractor
        .content_taps()
        .iter()
        .map(|&t| (t, reference_tape.tap(t).clone()))
        .collect();
    let tape = extractor.forward(x_adv)?;
    let (loss, grads) = content_on_tape(&tape, &reference)?;
    Ok((loss, extractor.backward(&tape, grads)))
}

/// Neighbour-difference penalty summed over every pixel that has both a lower
/// and a right neighbour.
///
/// `Mixed` compares `x'[i,j]` against the neighbours of the content image
/// `x`; `TotalVariation` compares `x'` against its own neighbours.
pub fn smoothness_loss(
    x_adv: &Tensor3,
    x: &Tensor3,
    form: SmoothnessForm,
) -> Result<(f64, Tensor3), StyleError> {
    if x_adv.shape() != x.shape() {
        return Err(StyleError::Dimension(format!("{:?} vs {:?}", x_adv.shape(), x.shape())));
    }
    let (c, h, w) = x_adv.shape();
    let mut grad = Tensor3::zeros(c, h, w);
    let mut loss = 0.0;
    let nb = match form {
        SmoothnessForm::Mixed => x,
        SmoothnessForm::TotalVariation => x_adv,
    };
    for ch in 0..c {
        for i in 0..h.saturating_sub(1) {
            for j in 0..w.saturating_sub(1) {
                let p = x_adv.get(ch, i, j);
                let dv = p - nb.get(ch, i + 1, j);
                let dh = p - nb.get(ch, i, j + 1);
                let r = (dv * dv + dh * dh).sqrt();
                loss += r;
                if r == 0.0 {
                    continue;
                }
                grad.add_at(ch, i, j, (dv + dh) / r);
                if form == SmoothnessForm::TotalVariation {
                    grad.add_at(ch, i + 1, j, -dv / r);
                    grad.add_at(ch, i, j + 1, -dh / r);
                }
            }
        }
    }
    Ok((loss, grad))
}

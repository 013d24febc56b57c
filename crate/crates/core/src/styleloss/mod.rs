//! Style-transfer regularizers on the patch content: Gram-matrix style
//! distance, feature content distance, a neighbour smoothness penalty and
//! the matting-Laplacian photorealism term.

mod extractor;
mod matting;
mod terms;

pub use extractor::{ExtractorDescription, FeatureExtractor, FeatureTape};
pub use matting::{photorealism_loss, MattingLaplacian};
pub use terms::{content_loss, gram, smoothness_loss, style_loss, StyleTarget};

use crate::asset_io::config::{LossConfig, SmoothnessForm, StyleConfig};
use crate::tensor::Tensor3;

#[derive(Debug, thiserror::Error)]
pub enum StyleError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("feature extractor: {0}")]
    Extractor(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StyleWeights {
    pub style: f64,
    pub content: f64,
    pub smoothness: f64,
    pub photorealism: f64,
}

impl Default for StyleWeights {
    fn default() -> Self {
        Self {
            style: 1e2,
            content: 1.0,
            smoothness: 1e-2,
            photorealism: 1e-4,
        }
    }
}

impl StyleWeights {
    pub fn from_config(loss: &LossConfig) -> Self {
        Self {
            style: loss.style,
            content: loss.content,
            smoothness: loss.smoothness,
            photorealism: loss.photorealism,
        }
    }

    pub fn scaled(self, k: f64) -> Self {
        Self {
            style: self.style * k,
            content: self.content * k,
            smoothness: self.smoothness * k,
            photorealism: self.photorealism * k,
        }
    }
}

/// Unweighted terms plus their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StyleBreakdown {
    pub style: f64,
    pub content: f64,
    pub smoothness: f64,
    pub photorealism: f64,
    pub total: f64,
}

/// Everything about the style objective that stays fixed during a run.
#[derive(Debug, Clone)]
pub struct StyleContext {
    extractor: FeatureExtractor,
    target: StyleTarget,
    content_image: Tensor3,
    content_features: Vec<(usize, Tensor3)>,
    laplacian: MattingLaplacian,
    form: SmoothnessForm,
    weights: StyleWeights,
}

impl StyleContext {
    pub fn new(
        extractor: FeatureExtractor,
        content: &Tensor3,
        style: &Tensor3,
        matting_eps: f64,
        form: SmoothnessForm,
        weights: StyleWeights,
    ) -> Result<Self, StyleError> {
        let target = StyleTarget::new(&extractor, style)?;
        let tape = extractor.forward(content)?;
        let content_features = extractor
            .content_taps()
            .iter()
            .map(|&t| (t, tape.tap(t).clone()))
            .collect();
        let laplacian = MattingLaplacian::build(content, matting_eps)?;
        Ok(Self {
            extractor,
            target,
            content_image: content.clone(),
            content_features,
            laplacian,
            form,
            weights,
        })
    }

    /// Builds the extractor named in the config and the fixed targets.
    /// `"toy"` and `"identity"` are built in; any other name is looked up as
    /// `<weights>/<name>/extractor.json`.
    pub fn from_config(
        cfg: &StyleConfig,
        loss: &LossConfig,
        weights: Option<&std::path::Path>,
        content: &Tensor3,
        style: &Tensor3,
    ) -> Result<Self, StyleError> {
        let base = match cfg.extractor.as_str() {
            "toy" => FeatureExtractor::toy(cfg.extractor_seed),
            "identity" => FeatureExtractor::identity(),
            name => {
                let root = crate::mde::weights_dir(weights).ok_or_else(|| {
                    StyleError::Extractor(format!("extractor '{name}' needs a weights directory"))
                })?;
                FeatureExtractor::load_dir(&root.join(name))?
            }
        };
        let extractor = base.with_taps(cfg.style_taps.clone(), cfg.content_taps.clone())?;
        Self::new(
            extractor,
            content,
            style,
            cfg.matting_eps,
            loss.smoothness_form,
            StyleWeights::from_config(loss),
        )
    }

    pub fn weights(&self) -> StyleWeights {
        self.weights
    }

    pub fn content_image(&self) -> &Tensor3 {
        &self.content_image
    }

    pub fn laplacian(&self) -> &MattingLaplacian {
        &self.laplacian
    }

    /// Weighted sum of the four terms and its gradient with respect to `x'`.
    pub fn evaluate(&self, x_adv: &Tensor3) -> Result<(StyleBreakdown, Tensor3), StyleError> {
        self.evaluate_with(x_adv, self.weights)
    }

    pub fn evaluate_with(
        &self,
        x_adv: &Tensor3,
        w: StyleWeights,
    ) -> Result<(StyleBreakdown, Tensor3), StyleError> {
        if x_adv.shape() != self.content_image.shape() {
            return Err(StyleError::Dimension(format!(
                "patch {:?} vs content {:?}",
                x_adv.shape(),
                self.content_image.shape()
            )));
        }
        let tape = self.extractor.forward(x_adv)?;
        let (style, style_grads) = self.target.loss_on_tape(&tape)?;
        let (content, content_grads) = terms::content_on_tape(&tape, &self.content_features)?;
        let mut tap_grads = Vec::with_capacity(style_grads.len() + content_grads.len());
        for (t, mut g) in style_grads {
            g.scale(w.style);
            tap_grads.push((t, g));
        }
        for (t, mut g) in content_grads {
            g.scale(w.content);
            tap_grads.push((t, g));
        }
        let mut grad = self.extractor.backward(&tape, tap_grads);
        let (smoothness, g_t) = smoothness_loss(x_adv, &self.content_image, self.form)?;
        let (photorealism, g_r) = photorealism_loss(x_adv, &self.laplacian)?;
        grad.axpy(w.smoothness, &g_t);
        grad.axpy(w.photorealism, &g_r);
        let total = w.style * style + w.content * content + w.smoothness * smoothness + w.photorealism * photorealism;
        Ok((
            StyleBreakdown {
                style,
                content,
                smoothness,
                photorealism,
                total,
            },
            grad,
        ))
    }
}

/// One-shot evaluation of the weighted style objective.
pub fn style_transfer_loss(
    x_adv: &Tensor3,
    x: &Tensor3,
    x_style: &Tensor3,
    extractor: &FeatureExtractor,
    weights: StyleWeights,
    form: SmoothnessForm,
    matting_eps: f64,
) -> Result<(StyleBreakdown, Tensor3), StyleError> {
    StyleContext::new(extractor.clone(), x, x_style, matting_eps, form, weights)?.evaluate(x_adv)
}

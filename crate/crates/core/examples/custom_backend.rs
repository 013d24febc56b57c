//! Plugging a hand-written depth model into the attack. The model predicts
//! a ground-plane depth per row and shrinks it where the image is bright;
//! implementing `DepthModel` (forward plus a vector-Jacobian product) is all
//! the optimizer needs.
//!
//! cargo run --release --example custom_backend -- [iterations]

use depthpatch::asset_io::config::{AssetKind, RunConfig};
use depthpatch::asset_io::{DepthGrid, ImageRGB};
use depthpatch::assets::AttackAssets;
use depthpatch::mde::{DepthModel, Inference, MdeError};
use depthpatch::optimizer::run_attack;
use depthpatch::tensor::{Grid, Tensor3};

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

struct BrightnessDepth;

impl BrightnessDepth {
    fn base(y: usize, h: usize) -> f64 {
        // 40 m at the top row falling to 2 m at the bottom.
        40.0 - 38.0 * y as f64 / (h - 1).max(1) as f64
    }

    fn luma(img: &ImageRGB, y: usize, x: usize) -> f64 {
        (0..3).map(|c| LUMA[c] * img.get(c, y, x)).sum()
    }
}

impl DepthModel for BrightnessDepth {
    fn name(&self) -> &str {
        "brightness"
    }

    fn input_resolution(&self) -> Option<(usize, usize)> {
        None
    }

    fn depth_range(&self) -> (f64, f64) {
        (1.0, 40.0)
    }

    fn forward(&self, image: &ImageRGB) -> Result<Inference, MdeError> {
        let h = image.height();
        let g = Grid::from_fn(h, image.width(), |y, x| Self::base(y, h) / (0.5 + Self::luma(image, y, x)));
        let depth = DepthGrid::new(g, "custom").map_err(|e| MdeError::InvalidModel(e.to_string()))?;
        Ok(Inference::new(depth, self.name(), Box::new(image.clone())))
    }

    fn backward(&self, inference: &Inference, upstream: &Grid) -> Result<Tensor3, MdeError> {
        let image = inference
            .tape::<ImageRGB>()
            .ok_or_else(|| MdeError::MissingForward(self.name().into()))?;
        let (h, w) = upstream.dims();
        Ok(Tensor3::from_fn(3, h, w, |c, y, x| {
            let denom = 0.5 + Self::luma(image, y, x);
            -upstream.get(y, x) * Self::base(y, h) * LUMA[c] / (denom * denom)
        }))
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let iterations = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(50);
    let mut cfg = RunConfig::with_seed(1);
    cfg.iterations = iterations;
    cfg.lambda = 0.0;
    cfg.assets.kind = AssetKind::Synthetic;
    let assets = AttackAssets::from_config(&cfg.assets, cfg.seed())?;
    let outcome = run_attack(&cfg, &assets, &BrightnessDepth)?;
    println!(
        "adversarial loss {:.5} -> {:.5} after {} iterations",
        outcome.initial_eval.adv, outcome.final_eval.adv, outcome.state.iteration
    );
    let mean: f64 = outcome.state.patch.sum() / outcome.state.patch.as_slice().len() as f64;
    println!("mean patch intensity {mean:.3} (darker reads as farther)");
    Ok(())
}

//! Camouflage objective on its own: starting from the content image, a few
//! gradient steps pull the patch's feature statistics towards the style
//! image while the content, smoothness and photorealism terms hold it back.
//!
//! cargo run --release --example style_loss -- [steps]

use depthpatch::asset_io::config::{AssetKind, AssetsConfig, RunConfig};
use depthpatch::assets::AttackAssets;
use depthpatch::styleloss::StyleContext;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(20);
    let mut cfg = RunConfig::with_seed(4);
    cfg.assets = AssetsConfig {
        kind: AssetKind::Synthetic,
        synthetic_object_size: [16, 16],
        ..AssetsConfig::default()
    };
    let assets = AttackAssets::from_config(&cfg.assets, cfg.seed())?;
    let content = assets.content.tensor();
    let style = assets.style.tensor();
    let ctx = StyleContext::from_config(&cfg.style, &cfg.loss, None, content, style)?;
    let w = ctx.weights();
    println!(
        "weights: style {}, content {}, smoothness {}, photorealism {}",
        w.style, w.content, w.smoothness, w.photorealism
    );

    let mut x = content.clone();
    let lr = 5e-3;
    for i in 0..=steps {
        let (b, g) = ctx.evaluate(&x)?;
        if i % 5 == 0 || i == steps {
            println!(
                "step {i:>3}: total {:.5}  style {:.5}  content {:.5}  smooth {:.5}  photo {:.5}",
                b.total, b.style, b.content, b.smoothness, b.photorealism
            );
        }
        x.axpy(-lr, &g);
        x = x.map(|v| v.clamp(0.0, 1.0));
    }
    Ok(())
}

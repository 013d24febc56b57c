//! Runs the full attack against the seeded toy depth model on synthetic
//! assets and compares the optimized patch with a random one.
//!
//! cargo run --release --example toy_attack -- [iterations] [out_dir]

use depthpatch::asset_io::config::{AssetKind, RunConfig};
use depthpatch::assets::AttackAssets;
use depthpatch::metrics::{errors_on_draws, PatchSpec};
use depthpatch::mde::ToyDepthModel;
use depthpatch::optimizer::{run_attack, write_artifacts};
use depthpatch::tensor::Tensor3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let iterations = args.next().map(|s| s.parse()).transpose()?.unwrap_or(200);
    let out = args.next();

    let mut cfg = RunConfig::with_seed(7);
    cfg.iterations = iterations;
    cfg.assets.kind = AssetKind::Synthetic;
    cfg.eot.scale = Some([0.75, 1.25]);
    // Camouflage off: on 8x8 synthetic patches the style gradient swamps
    // the depth gradient.
    cfg.lambda = 0.0;
    let assets = AttackAssets::from_config(&cfg.assets, cfg.seed())?;
    let model = ToyDepthModel::new(cfg.model.toy_seed);

    let outcome = run_attack(&cfg, &assets, &model)?;
    println!(
        "adversarial loss {:.6} -> {:.6}, region ratio {:.3}, frozen at {:?}",
        outcome.initial_eval.adv,
        outcome.final_eval.adv,
        outcome.log.last().map_or(f64::NAN, |r| r.ratio),
        outcome.state.frozen_at
    );

    let regions = &outcome.state.regions;
    let optimized = PatchSpec {
        patch: &outcome.state.patch,
        regions,
        steepness: cfg.mask.steepness,
        shape: assets.shape.as_ref(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed() + 1);
    let (h, w) = (assets.object.image.height(), assets.object.image.width());
    let noise = Tensor3::from_fn(3, h, w, |_, _, _| rng.random::<f64>());
    let random = PatchSpec { patch: &noise, ..optimized };
    let t = cfg.eval.threshold_m;
    let (e_opt, r_opt) = errors_on_draws(&assets, optimized, &model, &outcome.eval_draws, t)?;
    let (e_rand, r_rand) = errors_on_draws(&assets, random, &model, &outcome.eval_draws, t)?;
    println!("E_d optimized {e_opt:.4} m (R_a {r_opt:.3}), random {e_rand:.4} m (R_a {r_rand:.3})");

    if let Some(dir) = out {
        let files = write_artifacts(&outcome, &cfg, &assets, &model, dir.as_ref())?;
        println!("wrote {} files to {dir}", files.len());
    }
    Ok(())
}

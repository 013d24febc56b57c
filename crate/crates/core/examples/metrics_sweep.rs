//! Placement sweep for a uniform-noise patch against the toy depth model:
//! mean depth error and affected-pixel ratio per distance and lateral
//! offset.
//!
//! cargo run --release --example metrics_sweep

use depthpatch::asset_io::config::{AssetKind, RunConfig};
use depthpatch::assets::AttackAssets;
use depthpatch::mask::RegionParams;
use depthpatch::mde::ToyDepthModel;
use depthpatch::metrics::{placement_sweep, PatchSpec};
use depthpatch::tensor::Tensor3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = RunConfig::with_seed(2);
    cfg.assets.kind = AssetKind::Synthetic;
    cfg.eval.threshold_m = 0.5;
    let assets = AttackAssets::from_config(&cfg.assets, cfg.seed())?;
    let model = ToyDepthModel::new(cfg.model.toy_seed);

    let (h, w) = (assets.object.image.height(), assets.object.image.width());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let noise = Tensor3::from_fn(3, h, w, |_, _, _| rng.random::<f64>());
    let regions = [RegionParams::full(w, h)];
    let patch = PatchSpec {
        patch: &noise,
        regions: &regions,
        steepness: cfg.mask.steepness,
        shape: None,
    };
    let report = placement_sweep(&assets, patch, &model, &cfg.eval)?;
    println!("{:>10} {:>8} {:>10} {:>8}", "distance", "lateral", "E_d (m)", "R_a");
    for c in &report.cells {
        println!("{:>10.1} {:>8.1} {:>10.4} {:>8.3}", c.distance_m, c.lateral_m, c.e_d, c.r_a);
    }
    for s in &report.skipped {
        println!("skipped {} at {} m / {} m: {}", s.scene, s.distance_m, s.lateral_m, s.reason);
    }
    println!("overall E_d {:.4} m, R_a {:.3} (threshold {} m)", report.e_d, report.r_a, report.threshold_m);
    Ok(())
}

//! Input-transformation defenses: how much each one changes a clean
//! scene, and benign versus attack depth error for a noise patch.
//!
//! cargo run --release --example defenses

use depthpatch::asset_io::config::{AssetKind, RunConfig};
use depthpatch::assets::AttackAssets;
use depthpatch::defenses::{apply_defense, defense_eval, Defense, DefenseSpec};
use depthpatch::mask::RegionParams;
use depthpatch::mde::ToyDepthModel;
use depthpatch::metrics::PatchSpec;
use depthpatch::optimizer::evaluation_draws;
use depthpatch::tensor::Tensor3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = RunConfig::with_seed(6);
    cfg.assets.kind = AssetKind::Synthetic;
    cfg.eot.scale = Some([0.75, 1.25]);
    let assets = AttackAssets::from_config(&cfg.assets, cfg.seed())?;
    let model = ToyDepthModel::new(cfg.model.toy_seed);
    let specs: Vec<DefenseSpec> = ["none", "jpeg:30", "bits:3", "median:5", "median:25", "noise:0.05"]
        .iter()
        .map(|s| s.parse())
        .collect::<Result<_, _>>()?;

    let scene = &assets.scenes[0].image;
    for spec in &specs {
        let out = apply_defense(scene, spec, 0)?;
        let (a, b) = (scene.tensor(), out.tensor());
        let mse = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.as_slice().len() as f64;
        println!("{spec:<12} pixel RMS change {:.4}", mse.sqrt());
    }

    let (h, w) = (assets.object.image.height(), assets.object.image.width());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let noise = Tensor3::from_fn(3, h, w, |_, _, _| rng.random::<f64>());
    let regions = [RegionParams::full(w, h)];
    let patch = PatchSpec {
        patch: &noise,
        regions: &regions,
        steepness: cfg.mask.steepness,
        shape: None,
    };
    let draws = evaluation_draws(&cfg, &assets, 8)?;
    let defenses = specs.into_iter().map(Defense::new).collect::<Result<Vec<_>, _>>()?;
    println!("\n{:<8} {:>6} {:>12} {:>12}", "family", "param", "benign E_d", "attack E_d");
    for row in defense_eval(&assets, patch, &model, &draws, &defenses, cfg.seed())? {
        println!("{:<8} {:>6} {:>12.4} {:>12.4}", row.family, row.param, row.benign_e_d, row.attack_e_d);
    }
    Ok(())
}

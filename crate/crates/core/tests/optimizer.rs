//! Attack loop behavior on small synthetic runs.

use depthpatch::asset_io::config::{AssetKind, RunConfig};
use depthpatch::assets::AttackAssets;
use depthpatch::mde::ToyDepthModel;
use depthpatch::optimizer::{run_attack, write_artifacts, ThetaFile};

fn small(seed: u64, iterations: usize) -> RunConfig {
    let mut cfg = RunConfig::with_seed(seed);
    cfg.iterations = iterations;
    cfg.lambda = 0.0;
    cfg.composite_samples = 1;
    cfg.assets.kind = AssetKind::Synthetic;
    cfg.assets.synthetic_scenes = 2;
    cfg
}

#[test]
fn zero_budget_still_writes_every_artifact() {
    let cfg = small(4, 0);
    let assets = AttackAssets::from_config(&cfg.assets, cfg.seed()).unwrap();
    let model = ToyDepthModel::new(cfg.model.toy_seed);
    let outcome = run_attack(&cfg, &assets, &model).unwrap();
    assert!(outcome.log.is_empty());
    assert_eq!(outcome.initial_eval.total, outcome.final_eval.total);

    let tmp = tempfile::tempdir().unwrap();
    let written = write_artifacts(&outcome, &cfg, &assets, &model, tmp.path()).unwrap();
    for f in ["patch.png", "theta.json", "loss_log.csv", "eval_snapshot.json"] {
        assert!(written.contains(&tmp.path().join(f)), "{f}");
    }
    let theta = ThetaFile::load(&tmp.path().join("theta.json")).unwrap();
    assert_eq!(theta.iterations, 0);
    assert_eq!(theta.regions, outcome.state.regions);
    let log = std::fs::read_to_string(tmp.path().join("loss_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1, "header only");
}

#[test]
fn regions_stay_fixed_once_frozen() {
    let mut cfg = small(5, 40);
    // Reachable within a few region steps.
    cfg.target_ratio = 0.9;
    cfg.optimizer.region_step = 1.0;
    let assets = AttackAssets::from_config(&cfg.assets, cfg.seed()).unwrap();
    let model = ToyDepthModel::new(cfg.model.toy_seed);
    let outcome = run_attack(&cfg, &assets, &model).unwrap();
    let frozen = outcome.state.frozen_at.expect("target ratio reached");
    assert!(frozen < cfg.iterations);
    let at_freeze = outcome.log[frozen].ratio;
    assert!(at_freeze <= cfg.target_ratio);
    assert!(outcome.log[frozen..].iter().all(|r| r.ratio.to_bits() == at_freeze.to_bits()));

    let mut short = cfg.clone();
    short.iterations = frozen;
    let early = run_attack(&short, &assets, &model).unwrap();
    assert_eq!(early.state.regions, outcome.state.regions);
}

#[test]
fn same_seed_same_patch_different_seed_different_patch() {
    let model = ToyDepthModel::new(0);
    let run = |seed| {
        let cfg = small(seed, 6);
        let assets = AttackAssets::from_config(&cfg.assets, cfg.seed()).unwrap();
        run_attack(&cfg, &assets, &model).unwrap().state
    };
    let (a, b, c) = (run(9), run(9), run(10));
    assert_eq!(a.patch.as_slice(), b.patch.as_slice());
    assert_eq!(a.regions, b.regions);
    assert_ne!(a.patch.as_slice(), c.patch.as_slice());
}

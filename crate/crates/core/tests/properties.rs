//! Property tests over randomized inputs for geometry, masks, the
//! adversarial loss, region updates and the toy depth model.

use depthpatch::asset_io::{BinaryMask, DepthGrid, ImageRGB};
use depthpatch::attack_loss::adversarial_loss;
use depthpatch::geometry::{paste, vertical_position, CameraModel, PhysicalObject};
use depthpatch::mask::{
    compose_shape, hard_mask, mask_loss_grad, region_ratio, soft_mask, union_masks, RegionParams,
};
use depthpatch::mde::{predict_depth, ToyDepthModel};
use depthpatch::optimizer::RegionAdam;
use depthpatch::tensor::{Grid, Tensor3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn image(h: usize, w: usize, seed: u64) -> ImageRGB {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    ImageRGB::new(Tensor3::from_fn(3, h, w, |_, _, _| r.random::<f64>())).unwrap()
}

fn blob(h: usize, w: usize, seed: u64) -> BinaryMask {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut m = BinaryMask::from_fn(h, w, |_, _| r.random::<f64>() < 0.7);
    // Anchor the bounding box to the full canvas.
    m.set(0, 0, true);
    m.set(h - 1, w - 1, true);
    m
}

fn region(w: usize, h: usize) -> impl Strategy<Value = RegionParams> {
    let (wf, hf) = (w as f64, h as f64);
    (0.0..wf, 0.0..wf, 0.0..hf, 0.0..hf)
        .prop_map(|(a, b, c, d)| RegionParams::new(a.min(b), a.max(b), c.min(d), c.max(d)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn vertical_position_strictly_decreases_in_size(
        f in 100.0..2000.0f64,
        tan_alpha in 0.0..0.2f64,
        h_cam in 1.5..3.0f64,
        height_m in 0.5..1.5f64,
        s in 1.0..200.0f64,
    ) {
        let cam = CameraModel::new(f, tan_alpha, h_cam).unwrap();
        prop_assert!(vertical_position(s + 1.0, &cam, height_m) < vertical_position(s, &cam, height_m));
    }

    #[test]
    fn paste_leaves_outside_pixels_untouched_and_is_idempotent(
        seed in 0u64..1000,
        oh in 3usize..10,
        ow in 3usize..10,
        col in 0usize..20,
    ) {
        let (sh, sw) = (48usize, 32usize);
        let scene = image(sh, sw, seed);
        let mask = blob(oh, ow, seed + 1);
        let obj = PhysicalObject::new(image(oh, ow, seed + 2), mask.clone(), 1.5).unwrap();
        let cam = CameraModel::new(40.0, 0.05, 1.6).unwrap();
        prop_assume!(col + ow <= sw);
        let Ok(comp) = paste(&scene, &obj, &cam, col) else { return Ok(()) };
        for c in 0..3 {
            for y in 0..sh {
                for x in 0..sw {
                    if !comp.scene_mask.get(y, x) {
                        prop_assert_eq!(comp.scene_adv.get(c, y, x).to_bits(), scene.get(c, y, x).to_bits());
                    }
                }
            }
        }
        // Cut the pasted object back out of the composite and paste it again.
        let cut = Tensor3::from_fn(3, oh, ow, |c, y, x| {
            let sy = comp.origin_row + y as i64;
            if (0..sh as i64).contains(&sy) { comp.scene_adv.get(c, sy as usize, col + x) } else { 0.0 }
        });
        let again = PhysicalObject::new(ImageRGB::new(cut).unwrap(), mask, 1.5).unwrap();
        let comp2 = paste(&comp.scene_adv, &again, &cam, col).unwrap();
        prop_assert_eq!(comp2.scene_adv, comp.scene_adv);
    }

    #[test]
    fn union_stays_in_unit_interval(
        thetas in prop::collection::vec(region(12, 9), 1..6),
        k in 0.2..6.0f64,
    ) {
        let masks: Vec<Grid> = thetas.iter().map(|t| soft_mask(t, 12, 9, k).values).collect();
        let u = union_masks(&masks).unwrap();
        prop_assert!(u.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn compose_shape_never_increases_a_pixel(
        theta in region(14, 10),
        k in 0.2..6.0f64,
        seed in 0u64..1000,
        sh in 2usize..8,
        sw in 2usize..8,
    ) {
        let soft = soft_mask(&theta, 14, 10, k);
        let shape = blob(sh, sw, seed);
        // Regions that rasterize to no pixel are rejected.
        let Ok(shaped) = compose_shape(&soft, &shape) else { return Ok(()) };
        for (a, b) in shaped.values.as_slice().iter().zip(soft.values.as_slice()) {
            prop_assert!(a <= b);
        }
    }

    #[test]
    fn soft_mask_gap_shrinks_with_steepness(theta in region(20, 16), k in 0.5..5.0f64) {
        prop_assume!(theta.width() >= 1.0 && theta.height() >= 1.0);
        let hard = hard_mask(&theta, 20, 16);
        // Only pixels at least 2 px from every region edge converge to the hard mask.
        let far = |v: usize, a: f64, b: f64| (v as f64 - a).abs() >= 2.0 && (v as f64 - b).abs() >= 2.0;
        let gap = |k: f64| {
            let s = soft_mask(&theta, 20, 16, k);
            let mut m: f64 = 0.0;
            for i in 0..16 {
                for j in 0..20 {
                    if far(i, theta.t, theta.b) && far(j, theta.l, theta.r) {
                        m = m.max((s.values.get(i, j) - hard.get(i, j)).abs());
                    }
                }
            }
            m
        };
        prop_assert!(gap(k + 1.0) <= gap(k));
    }

    #[test]
    fn scaling_depths_up_lowers_the_adversarial_loss(
        seed in 0u64..1000,
        c in 1.01..10.0f64,
        n in 1usize..4,
    ) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let depths: Vec<DepthGrid> = (0..n)
            .map(|_| DepthGrid::new(Grid::from_fn(6, 7, |_, _| r.random_range(0.5..80.0)), "cam").unwrap())
            .collect();
        let masks: Vec<BinaryMask> = (0..n).map(|i| blob(6, 7, seed + i as u64)).collect();
        let scaled: Vec<DepthGrid> = depths
            .iter()
            .map(|d| DepthGrid::new(d.values().map(|v| v * c), "cam").unwrap())
            .collect();
        prop_assert!(adversarial_loss(&scaled, &masks).unwrap() < adversarial_loss(&depths, &masks).unwrap());
    }

    #[test]
    fn mask_loss_steps_never_grow_the_region(
        thetas in prop::collection::vec(region(16, 12), 1..4),
        step in 0.05..3.0f64,
        steps in 1usize..40,
    ) {
        let object = BinaryMask::full(12, 16);
        let mut regions = thetas;
        let mut adam = RegionAdam::new(regions.len(), step, 0.9, 0.999, 1e-8);
        let grads = vec![mask_loss_grad(16, 12); regions.len()];
        let mut last = region_ratio(&regions, &object).unwrap();
        for _ in 0..steps {
            adam.step(&mut regions, &grads, 16, 12);
            let now = region_ratio(&regions, &object).unwrap();
            prop_assert!(now <= last);
            last = now;
        }
    }
}

#[test]
fn toy_model_is_deterministic_and_deeper_toward_the_top() {
    let model = ToyDepthModel::new(0);
    let img = image(32, 40, 5);
    let a = predict_depth(&model, &img).unwrap();
    let b = predict_depth(&ToyDepthModel::new(0), &img).unwrap();
    assert_eq!(a.values().as_slice(), b.values().as_slice());

    let blank = ImageRGB::new(Tensor3::filled(3, 32, 40, 0.5)).unwrap();
    let d = predict_depth(&model, &blank).unwrap();
    let row_means: Vec<f64> = (0..32).map(|y| (0..40).map(|x| d.get(y, x)).sum::<f64>() / 40.0).collect();
    assert!(row_means.windows(2).all(|w| w[0] > w[1]), "{row_means:?}");
}

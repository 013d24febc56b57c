//! Soft region masks: compares the tanh relaxation with its hard
//! rectangle, checks the analytic edge gradient against central differences
//! and shows how a predefined shape is stretched over the region.
//!
//! cargo run --example mask_playground

use depthpatch::asset_io::BinaryMask;
use depthpatch::mask::{hard_mask, mask_loss, soft_mask, soft_mask_vjp, PatchMask, RegionParams};
use depthpatch::tensor::Grid;

fn print_grid(name: &str, g: &Grid) {
    println!("{name}:");
    for y in 0..g.height() {
        let row: Vec<String> = (0..g.width()).map(|x| format!("{:4.2}", g.get(y, x))).collect();
        println!("  {}", row.join(" "));
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (w, h) = (12, 8);
    let theta = RegionParams::new(2.5, 8.5, 1.5, 5.5);
    print_grid("hard", &hard_mask(&theta, w, h));
    for k in [1.0, 4.0, 16.0] {
        let soft = soft_mask(&theta, w, h, k);
        let hard = hard_mask(&theta, w, h);
        let gap = soft
            .values
            .as_slice()
            .iter()
            .zip(hard.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        println!("k = {k:>4}: max |soft - hard| = {gap:.4}");
    }

    // Gradient of sum(mask * upstream) w.r.t. the four edges.
    let k = 2.0;
    let upstream = Grid::from_fn(h, w, |y, x| ((y * 7 + x * 3) % 5) as f64 - 2.0);
    let objective = |t: &RegionParams| {
        let m = soft_mask(t, w, h, k);
        m.values.as_slice().iter().zip(upstream.as_slice()).map(|(a, b)| a * b).sum::<f64>()
    };
    let analytic = soft_mask_vjp(&theta, k, &upstream);
    let eps = 1e-5;
    for (i, name) in ["l", "r", "t", "b"].iter().enumerate() {
        let mut hi = theta.as_array();
        let mut lo = theta.as_array();
        hi[i] += eps;
        lo[i] -= eps;
        let fd = (objective(&RegionParams::from_array(hi)) - objective(&RegionParams::from_array(lo))) / (2.0 * eps);
        println!("d/d{name}: analytic {:+.6}, central difference {fd:+.6}", analytic[i]);
    }
    println!("mask loss of the region: {:.4}", mask_loss(&[theta], w, h));

    // A diamond shape restricted to the region.
    let diamond = BinaryMask::from_fn(5, 5, |y, x| (y as i64 - 2).abs() + (x as i64 - 2).abs() <= 2);
    let pm = PatchMask::build(&[theta], w, h, 8.0, Some(&diamond))?;
    print_grid("shaped mask (k = 8)", &pm.values);
    Ok(())
}

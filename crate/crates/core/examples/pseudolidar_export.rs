//! Runs the toy depth model on a synthetic street scene and back-projects
//! the prediction to a camera-frame point cloud.
//!
//! cargo run --example pseudolidar_export -- [out.xyz]

use depthpatch::assets::{synthetic_camera, synthetic_scene};
use depthpatch::mde::{predict_depth, ToyDepthModel};
use depthpatch::pseudolidar::{depth_to_pointcloud, save_pointcloud};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (h, w) = (48, 80);
    let scene = synthetic_scene(h, w, &mut ChaCha8Rng::seed_from_u64(1));
    let depth = predict_depth(&ToyDepthModel::new(0), &scene)?;
    let k = synthetic_camera(h).intrinsics(h, w);
    let cloud = depth_to_pointcloud(&depth, &k);
    println!(
        "{} points ({} skipped), fx = {}, principal point ({}, {})",
        cloud.len(),
        cloud.skipped,
        k.fx,
        k.cx,
        k.cy
    );
    for v in [0, h / 2, h - 1] {
        let p = cloud.points[v * w + w / 2];
        println!("row {v:>2}, centre column: X {:+.2} Y {:+.2} Z {:.2}", p[0], p[1], p[2]);
    }
    if let Some(path) = std::env::args().nth(1) {
        save_pointcloud(&cloud, &path)?;
        println!("wrote {path}");
    }
    Ok(())
}

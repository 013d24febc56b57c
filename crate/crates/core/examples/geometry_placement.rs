//! Places an object in a scene at several scales, showing how the ground
//! contact row moves towards the horizon as the object shrinks, then draws a
//! few random transforms and writes the composites.
//!
//! cargo run --example geometry_placement -- [out_dir]

use depthpatch::asset_io::config::{AssetKind, AssetsConfig};
use depthpatch::asset_io::save_image;
use depthpatch::assets::AttackAssets;
use depthpatch::geometry::{apply_transform, paste, sample_transform, vertical_position, EotRanges, TransformSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1);
    let cfg = AssetsConfig {
        kind: AssetKind::Synthetic,
        synthetic_scenes: 1,
        synthetic_scene_size: [64, 96],
        synthetic_object_size: [16, 12],
        ..AssetsConfig::default()
    };
    let assets = AttackAssets::from_config(&cfg, 5)?;
    let scene = &assets.scenes[0];
    let obj = &assets.object;
    let cam = scene.camera;
    println!(
        "camera f = {} px, horizon at {:.1} rows above the bottom, h_cam = {} m",
        cam.f,
        cam.horizon(),
        cam.h_cam
    );

    for scale in [1.5, 1.0, 0.75, 0.5] {
        let spec = TransformSpec {
            scale,
            ..TransformSpec::identity(10)
        };
        let (t, _) = apply_transform(obj, &spec, (scene.image.height(), scene.image.width()))?;
        let s = t.pixel_height();
        let d = vertical_position(s as f64, &cam, t.height_m);
        let z = cam.f * t.height_m / s as f64;
        println!("scale {scale:>4}: {s:>2} px tall, contact row d = {d:>2}, distance ~ {z:.1} m");
    }

    let ranges = EotRanges {
        scale: [0.6, 1.4],
        rotation_deg: [-10.0, 10.0],
        brightness: [-0.15, 0.15],
        saturation: [0.7, 1.3],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dims = (scene.image.height(), scene.image.width());
    for i in 0..4 {
        let spec = sample_transform(&mut rng, &ranges, (obj.image.height(), obj.image.width()), dims)?;
        let (t, _) = apply_transform(obj, &spec, dims)?;
        match paste(&scene.image, &t, &cam, spec.horizontal_col) {
            Ok(c) => {
                println!(
                    "draw {i}: scale {:.2}, rot {:+.1} deg, placed at d = {}, col = {}",
                    spec.scale, spec.rotation_deg, c.placement.0, c.placement.1
                );
                if let Some(dir) = &out {
                    std::fs::create_dir_all(dir)?;
                    save_image(&c.scene_adv, format!("{dir}/composite_{i}.png"))?;
                }
            }
            Err(e) => println!("draw {i}: rejected ({e})"),
        }
    }
    Ok(())
}

//! Back-projection of depth maps to camera-frame point clouds.
//!
//! Axes follow the pinhole convention: X right, Y down, Z forward.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::asset_io::DepthGrid;

#[derive(Debug, thiserror::Error)]
pub enum PointCloudError {
    #[error("intrinsics must have positive focal lengths, got fx={fx} fy={fy}")]
    Intrinsics { fx: f64, fy: f64 },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Parse { path: PathBuf, line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, PointCloudError> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite() && cx.is_finite() && cy.is_finite()) {
            return Err(PointCloudError::Intrinsics { fx, fy });
        }
        Ok(Self { fx, fy, cx, cy })
    }

    /// Image coordinates `(u, v)` of a camera-frame point.
    pub fn project(&self, p: [f64; 3]) -> (f64, f64) {
        (self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    pub colors: Option<Vec<[f64; 3]>>,
    /// Source pixels dropped because their depth was not a positive finite
    /// number.
    pub skipped: usize,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// One point per valid pixel, emitted in row-major order.
pub fn depth_to_pointcloud(depth: &DepthGrid, k: &Intrinsics) -> PointCloud {
    let mut points = Vec::with_capacity(depth.height() * depth.width());
    let mut skipped = 0;
    for v in 0..depth.height() {
        for u in 0..depth.width() {
            let z = depth.get(v, u);
            if !(z.is_finite() && z > 0.0) {
                skipped += 1;
                continue;
            }
            points.push([(u as f64 - k.cx) * z / k.fx, (v as f64 - k.cy) * z / k.fy, z]);
        }
    }
    PointCloud {
        points,
        colors: None,
        skipped,
    }
}

const HEADER: &str = "# X Y Z (meters, camera frame: x right, y down, z forward)";

pub fn format_xyz(pc: &PointCloud) -> String {
    let mut out = String::with_capacity(HEADER.len() + 1 + pc.len() * 36);
    out.push_str(HEADER);
    out.push('\n');
    for p in &pc.points {
        // Writing into a String cannot fail.
        let _ = writeln!(out, "{:.6} {:.6} {:.6}", p[0], p[1], p[2]);
    }
    out
}

pub fn save_pointcloud(pc: &PointCloud, path: impl AsRef<Path>) -> Result<(), PointCloudError> {
    let path = path.as_ref();
    fs::write(path, format_xyz(pc)).map_err(|source| PointCloudError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a `.xyz` file; `#` lines and blank lines are ignored.
pub fn load_pointcloud(path: impl AsRef<Path>) -> Result<PointCloud, PointCloudError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| PointCloudError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |reason: String| PointCloudError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| parse_err(format!("{t:?}: {e}"))))
            .collect::<Result<_, _>>()?;
        let [x, y, z] = vals[..] else {
            return Err(parse_err(format!("expected 3 values, found {}", vals.len())));
        };
        points.push([x, y, z]);
    }
    Ok(PointCloud {
        points,
        colors: None,
        skipped: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Grid;
    use proptest::prelude::*;

    fn grid(h: usize, w: usize, f: impl FnMut(usize, usize) -> f64) -> DepthGrid {
        DepthGrid::new(Grid::from_fn(h, w, f), "cam").unwrap()
    }

    #[test]
    fn pinhole_hand_examples() {
        let k = Intrinsics::new(100.0, 100.0, 50.0, 50.0).unwrap();
        let d = grid(51, 151, |_, _| 10.0);
        let pc = depth_to_pointcloud(&d, &k);
        assert_eq!(pc.points[50 * 151 + 50], [0.0, 0.0, 10.0]);
        assert_eq!(pc.points[50 * 151 + 150], [10.0, 0.0, 10.0]);

        let pc = depth_to_pointcloud(&grid(4, 4, |_, _| 3.0), &k);
        assert_eq!(pc.len(), 16);
        assert!(pc.points.iter().all(|p| p[2] == 3.0));
    }

    #[test]
    fn invalid_depths_are_skipped_and_counted() {
        let mut g = Grid::filled(2, 3, 5.0);
        g.set(0, 1, f64::NAN);
        g.set(1, 2, f64::INFINITY);
        let d = DepthGrid::new_unchecked(g, "cam");
        let pc = depth_to_pointcloud(&d, &Intrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap());
        assert_eq!((pc.len(), pc.skipped), (4, 2));
        assert!(pc.points.iter().all(|p| p[2] > 0.0));
    }

    #[test]
    fn bad_intrinsics_are_rejected() {
        assert!(Intrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
        assert!(Intrinsics::new(1.0, -2.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn xyz_format_contract() {
        let empty = format_xyz(&PointCloud::default());
        assert_eq!(empty.lines().count(), 1);
        assert!(empty.starts_with('#'));
        let one = PointCloud {
            points: vec![[1.0, 2.0, 3.0]],
            ..Default::default()
        };
        assert_eq!(format_xyz(&one).lines().nth(1), Some("1.000000 2.000000 3.000000"));
    }

    #[test]
    fn xyz_round_trip_within_format_precision() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let pc = PointCloud {
            points: (0..10_000)
                .map(|_| [rng.random_range(-50.0..50.0), rng.random_range(-5.0..5.0), rng.random_range(0.1..100.0)])
                .collect(),
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cloud.xyz");
        save_pointcloud(&pc, &path).unwrap();
        let back = load_pointcloud(&path).unwrap();
        assert_eq!(back.len(), pc.len());
        let err = pc
            .points
            .iter()
            .zip(&back.points)
            .flat_map(|(a, b)| (0..3).map(move |i| (a[i] - b[i]).abs()))
            .fold(0.0, f64::max);
        assert!(err <= 5e-7, "{err}");
    }

    #[test]
    fn malformed_lines_report_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.xyz");
        fs::write(&path, "# h\n1 2 3\n1 2\n").unwrap();
        assert!(matches!(load_pointcloud(&path), Err(PointCloudError::Parse { line: 3, .. })));
    }

    proptest! {
        #[test]
        fn reprojection_recovers_pixel_centres(
            depths in prop::collection::vec(0.5f64..80.0, 30),
            fx in 20.0f64..400.0,
            fy in 20.0f64..400.0,
            cx in -5.0f64..10.0,
            cy in -5.0f64..10.0,
            c in 0.1f64..10.0,
        ) {
            let d = grid(5, 6, |y, x| depths[y * 6 + x]);
            let k = Intrinsics::new(fx, fy, cx, cy).unwrap();
            let pc = depth_to_pointcloud(&d, &k);
            for (i, p) in pc.points.iter().enumerate() {
                let (u, v) = k.project(*p);
                prop_assert!((u - (i % 6) as f64).abs() <= 0.5);
                prop_assert!((v - (i / 6) as f64).abs() <= 0.5);
            }
            let scaled = depth_to_pointcloud(&d.scaled(c), &k);
            for (a, b) in pc.points.iter().zip(&scaled.points) {
                for j in 0..3 {
                    prop_assert!((a[j] * c - b[j]).abs() <= 1e-12 * (1.0 + b[j].abs()));
                }
            }
        }
    }
}

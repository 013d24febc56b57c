use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AssetError, DepthGrid};
use crate::tensor::Grid;

/// JSON sidecar written next to every `.f32` depth payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthHeader {
    pub height: usize,
    pub width: usize,
    pub units: String,
    #[serde(default)]
    pub camera_id: String,
}

pub fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes row-major little-endian `f32` values plus a `{height, width, units}`
/// sidecar with the same stem.
pub fn save_depth(grid: &DepthGrid, path: impl AsRef<Path>) -> Result<(), AssetError> {
    let path = path.as_ref();
    let values = grid.values().as_slice();
    if let Some(index) = values.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(AssetError::InvalidDepth { index });
    }
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for &v in values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| AssetError::io(path, e))?;

    let header = DepthHeader {
        height: grid.height(),
        width: grid.width(),
        units: "m".into(),
        camera_id: grid.camera_id().to_owned(),
    };
    let side = sidecar(path);
    let text = serde_json::to_string_pretty(&header).expect("header serializes");
    fs::write(&side, text).map_err(|e| AssetError::io(&side, e))
}

pub fn load_depth(path: impl AsRef<Path>) -> Result<DepthGrid, AssetError> {
    let path = path.as_ref();
    let side = sidecar(path);
    let text = fs::read_to_string(&side).map_err(|e| AssetError::io(&side, e))?;
    let header: DepthHeader = serde_json::from_str(&text).map_err(|e| AssetError::Metadata {
        path: side.clone(),
        detail: e.to_string(),
    })?;
    if header.units != "m" {
        return Err(AssetError::Metadata {
            path: side,
            detail: format!("units must be \"m\", got {:?}", header.units),
        });
    }
    let bytes = fs::read(path).map_err(|e| AssetError::io(path, e))?;
    let expected = header.height * header.width;
    if bytes.len() % 4 != 0 || bytes.len() / 4 != expected {
        return Err(AssetError::SizeMismatch {
            height: header.height,
            width: header.width,
            found: bytes.len() / 4,
        });
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let grid = Grid::from_vec(header.height, header.width, values);
    // Files written by other tools may hold invalid pixels; surface them.
    if grid
        .as_slice()
        .iter()
        .any(|v| !(v.is_finite() && *v > 0.0))
    {
        return DepthGrid::new(grid, header.camera_id);
    }
    Ok(DepthGrid::new_unchecked(grid, header.camera_id))
}

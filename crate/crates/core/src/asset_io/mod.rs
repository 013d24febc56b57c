//! On-disk formats and the validated value types that cross the I/O boundary.
//!
//! Pixel data is normalized to `[0, 1]` on load and scaled back to 8 bits on
//! export. Depth is stored as raw little-endian `f32` with a JSON sidecar so
//! that metric values survive a round trip without quantization.

pub mod config;
mod depth;
mod images;

pub use config::{load_run_config, parse_run_config, ConfigError, RunConfig};
pub use depth::{load_depth, save_depth, sidecar as depth_sidecar, DepthHeader};
pub use images::{from_rgb8, load_image, load_mask, save_image, save_mask, to_rgb8};

use std::path::PathBuf;

use crate::tensor::{Grid, Tensor3};

#[derive(Debug, thiserror::Error)]
pub enum AssetError {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("unsupported bit depth in {path}: {detail}")]
    UnsupportedBitDepth { path: PathBuf, detail: String },
    #[error("corrupt or undecodable stream in {path}: {detail}")]
    CorruptStream { path: PathBuf, detail: String },
    #[error("depth payload holds {found} floats but header declares {height}x{width}")]
    SizeMismatch {
        height: usize,
        width: usize,
        found: usize,
    },
    #[error("depth grid contains a non-finite or non-positive value at index {index}")]
    InvalidDepth { index: usize },
    #[error("invalid image data: {0}")]
    InvalidImage(String),
    #[error("invalid asset metadata in {path}: {detail}")]
    Metadata { path: PathBuf, detail: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl AssetError {
    /// Stable numeric code, one per failure class.
    pub fn code(&self) -> u32 {
        match self {
            AssetError::MissingFile(_) => 10,
            AssetError::UnsupportedBitDepth { .. } => 11,
            AssetError::CorruptStream { .. } => 12,
            AssetError::SizeMismatch { .. } => 13,
            AssetError::InvalidDepth { .. } => 14,
            AssetError::InvalidImage(_) => 15,
            AssetError::Metadata { .. } => 16,
            AssetError::Io { .. } => 17,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            AssetError::MissingFile(path)
        } else {
            AssetError::Io { path, source }
        }
    }
}

/// RGB image with every channel value in `[0, 1]`, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRGB(Tensor3);

impl ImageRGB {
    pub fn new(tensor: Tensor3) -> Result<Self, AssetError> {
        let (c, h, w) = tensor.shape();
        if c != 3 || h == 0 || w == 0 {
            return Err(AssetError::InvalidImage(format!(
                "expected 3xHxW with H,W >= 1, got {c}x{h}x{w}"
            )));
        }
        if let Some(i) = tensor
            .as_slice()
            .iter()
            .position(|v| !(0.0..=1.0).contains(v))
        {
            return Err(AssetError::InvalidImage(format!(
                "value {} at index {i} outside [0,1]",
                tensor.as_slice()[i]
            )));
        }
        Ok(Self(tensor))
    }

    /// Clamps into `[0, 1]` (NaN becomes 0) instead of rejecting.
    pub fn clamped(mut tensor: Tensor3) -> Self {
        assert_eq!(tensor.channels(), 3, "ImageRGB requires three channels");
        assert!(tensor.height() > 0 && tensor.width() > 0);
        for v in tensor.as_mut_slice() {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self(tensor)
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        Self::clamped(Tensor3::from_fn(3, height, width, |c, _, _| rgb[c]))
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Self {
        let mut t = Tensor3::zeros(3, height, width);
        for y in 0..height {
            for x in 0..width {
                let px = f(y, x);
                for (c, v) in px.iter().enumerate() {
                    t.set(c, y, x, *v);
                }
            }
        }
        Self::clamped(t)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.0.height()
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.0.width()
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.0.get(c, y, x)
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        [self.0.get(0, y, x), self.0.get(1, y, x), self.0.get(2, y, x)]
    }

    pub fn tensor(&self) -> &Tensor3 {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor3 {
        self.0
    }
}

/// Binary `{0, 1}` mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            bits,
        }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), height * width, "mask buffer length mismatch");
        Self {
            height,
            width,
            bits,
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self::from_bits(height, width, vec![true; height * width])
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self::from_bits(height, width, vec![false; height * width])
    }

    /// Pixels with value `>= 0.5` become set.
    pub fn from_grid(grid: &Grid) -> Self {
        Self::from_fn(grid.height(), grid.width(), |y, x| grid.get(y, x) >= 0.5)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Inclusive `(top, bottom, left, right)` extent of the set pixels.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) {
                    bb = Some(match bb {
                        None => (y, y, x, x),
                        Some((t, b, l, r)) => (t.min(y), b.max(y), l.min(x), r.max(x)),
                    });
                }
            }
        }
        bb
    }

    pub fn to_grid(&self) -> Grid {
        Grid::from_fn(self.height, self.width, |y, x| {
            if self.get(y, x) {
                1.0
            } else {
                0.0
            }
        })
    }
}

/// Per-pixel metric depth in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthGrid {
    values: Grid,
    camera_id: String,
}

impl DepthGrid {
    pub fn new(values: Grid, camera_id: impl Into<String>) -> Result<Self, AssetError> {
        if let Some(index) = values
            .as_slice()
            .iter()
            .position(|v| !(v.is_finite() && *v > 0.0))
        {
            return Err(AssetError::InvalidDepth { index });
        }
        Ok(Self {
            values,
            camera_id: camera_id.into(),
        })
    }

    /// Skips validation; used by I/O paths that report bad pixels themselves.
    pub(crate) fn new_unchecked(values: Grid, camera_id: impl Into<String>) -> Self {
        Self {
            values,
            camera_id: camera_id.into(),
        }
    }

    pub fn values(&self) -> &Grid {
        &self.values
    }

    pub fn camera_id(&self) -> &str {
        &self.camera_id
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }

    pub fn width(&self) -> usize {
        self.values.width()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values.get(y, x)
    }

    /// Multiplies every value by `factor` (> 0).
    pub fn scaled(&self, factor: f64) -> Self {
        assert!(factor > 0.0);
        Self {
            values: self.values.map(|v| v * factor),
            camera_id: self.camera_id.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_rejects_out_of_range() {
        let t = Tensor3::filled(3, 2, 2, 1.5);
        assert!(matches!(ImageRGB::new(t), Err(AssetError::InvalidImage(_))));
        let t = Tensor3::filled(1, 2, 2, 0.5);
        assert!(ImageRGB::new(t).is_err());
    }

    #[test]
    fn depth_rejects_non_positive() {
        let g = Grid::from_vec(1, 3, vec![1.0, 0.0, 2.0]);
        assert!(matches!(
            DepthGrid::new(g, "cam"),
            Err(AssetError::InvalidDepth { index: 1 })
        ));
    }

    #[test]
    fn mask_bounding_box() {
        let m = BinaryMask::from_fn(6, 6, |y, x| (2..4).contains(&y) && (1..5).contains(&x));
        assert_eq!(m.bounding_box(), Some((2, 3, 1, 4)));
        assert_eq!(m.count(), 8);
        assert_eq!(BinaryMask::empty(3, 3).bounding_box(), None);
    }

    #[test]
    fn error_codes_are_distinct() {
        let p = PathBuf::from("x");
        let codes = [
            AssetError::MissingFile(p.clone()).code(),
            AssetError::UnsupportedBitDepth {
                path: p.clone(),
                detail: String::new(),
            }
            .code(),
            AssetError::CorruptStream {
                path: p,
                detail: String::new(),
            }
            .code(),
        ];
        assert_ne!(codes[0], codes[1]);
        assert_ne!(codes[1], codes[2]);
        assert_ne!(codes[0], codes[2]);
    }
}

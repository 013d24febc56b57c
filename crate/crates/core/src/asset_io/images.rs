use std::path::Path;

use image::{DynamicImage, ImageReader, Luma, Rgb};

use super::{AssetError, BinaryMask, ImageRGB};
use crate::tensor::Tensor3;

/// Loads an 8- or 16-bit PNG/JPEG and maps it linearly into `[0, 1]`.
///
/// Grayscale inputs are replicated to three channels; alpha is dropped.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageRGB, AssetError> {
    let path = path.as_ref();
    from_dynamic(path, decode(path)?)
}

fn from_dynamic(path: &Path, img: DynamicImage) -> Result<ImageRGB, AssetError> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let tensor = match img {
        DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageRgb8(_)
        | DynamicImage::ImageRgba8(_) => {
            let rgb = img.to_rgb8();
            Tensor3::from_fn(3, h, w, |c, y, x| {
                rgb.get_pixel(x as u32, y as u32)[c] as f64 / 255.0
            })
        }
        DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_)
        | DynamicImage::ImageRgb16(_)
        | DynamicImage::ImageRgba16(_) => {
            let rgb = img.to_rgb16();
            Tensor3::from_fn(3, h, w, |c, y, x| {
                rgb.get_pixel(x as u32, y as u32)[c] as f64 / 65535.0
            })
        }
        other => {
            return Err(AssetError::UnsupportedBitDepth {
                path: path.to_path_buf(),
                detail: format!("{:?}", other.color()),
            })
        }
    };
    ImageRGB::new(tensor)
}

/// Loads a mask image; pixels at or above half intensity are set.
pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask, AssetError> {
    let path = path.as_ref();
    let img = decode(path)?;
    let luma = img.to_luma16();
    let (w, h) = (luma.width() as usize, luma.height() as usize);
    Ok(BinaryMask::from_fn(h, w, |y, x| {
        luma.get_pixel(x as u32, y as u32)[0] >= 32768
    }))
}

/// Quantizes to an 8-bit buffer, rounding to the nearest level.
pub fn to_rgb8(image: &ImageRGB) -> image::RgbImage {
    let (h, w) = (image.height(), image.width());
    image::ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        Rgb([
            to_u8(image.get(0, y, x)),
            to_u8(image.get(1, y, x)),
            to_u8(image.get(2, y, x)),
        ])
    })
}

pub fn from_rgb8(buf: &image::RgbImage) -> ImageRGB {
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    ImageRGB::clamped(Tensor3::from_fn(3, h, w, |c, y, x| {
        buf.get_pixel(x as u32, y as u32)[c] as f64 / 255.0
    }))
}

/// Writes an 8-bit RGB image; the format follows the file extension.
pub fn save_image(image: &ImageRGB, path: impl AsRef<Path>) -> Result<(), AssetError> {
    let path = path.as_ref();
    to_rgb8(image).save(path).map_err(|e| encode_error(path, e))
}

pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<(), AssetError> {
    let path = path.as_ref();
    let buf = image::ImageBuffer::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        Luma([if mask.get(y as usize, x as usize) { 255u8 } else { 0 }])
    });
    buf.save(path).map_err(|e| encode_error(path, e))
}

pub(crate) fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn decode(path: &Path) -> Result<DynamicImage, AssetError> {
    if !path.exists() {
        return Err(AssetError::MissingFile(path.to_path_buf()));
    }
    let reader = ImageReader::open(path)
        .map_err(|e| AssetError::io(path, e))?
        .with_guessed_format()
        .map_err(|e| AssetError::io(path, e))?;
    reader.decode().map_err(|e| match e {
        image::ImageError::IoError(source) => AssetError::io(path, source),
        image::ImageError::Unsupported(u) => AssetError::UnsupportedBitDepth {
            path: path.to_path_buf(),
            detail: u.to_string(),
        },
        other => AssetError::CorruptStream {
            path: path.to_path_buf(),
            detail: other.to_string(),
        },
    })
}

fn encode_error(path: &Path, e: image::ImageError) -> AssetError {
    match e {
        image::ImageError::IoError(source) => AssetError::io(path, source),
        other => AssetError::InvalidImage(format!("{}: {other}", path.display())),
    }
}

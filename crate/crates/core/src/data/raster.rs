//! 8-bit grayscale PNG rasters and raw `HU16` Hounsfield grids.

use std::fs;
use std::path::Path;

use image::imageops::{self, FilterType};
use image::{GrayImage, ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const HU16_MAGIC: &[u8; 4] = b"HU16";

fn corrupt(path: &Path, reason: impl ToString) -> Error {
    Error::Corrupt {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        _ => Ok(()),
    }
}

pub fn write_gray_png(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    assert_eq!(pixels.len(), width * height);
    ensure_parent(path)?;
    let img = GrayImage::from_raw(width as u32, height as u32, pixels.to_vec()).expect("buffer matches size");
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => corrupt(path, other),
    })
}

/// Any PNG, converted to 8-bit luminance.
pub fn read_gray_png(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png).map_err(|e| corrupt(path, e))?;
    Ok(img.into_luma8())
}

pub fn write_hu16(path: &Path, width: usize, height: usize, hu: &[i16]) -> Result<()> {
    assert_eq!(hu.len(), width * height);
    ensure_parent(path)?;
    let mut buf = Vec::with_capacity(12 + 2 * hu.len());
    buf.extend_from_slice(HU16_MAGIC);
    buf.extend_from_slice(&(width as u32).to_le_bytes());
    buf.extend_from_slice(&(height as u32).to_le_bytes());
    for v in hu {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Returns `(width, height, values)`.
pub fn read_hu16(path: &Path) -> Result<(usize, usize, Vec<i16>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..4] != HU16_MAGIC {
        return Err(corrupt(path, "missing HU16 header"));
    }
    let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if w.checked_mul(h).and_then(|n| n.checked_mul(2)) != Some(body.len()) {
        return Err(corrupt(path, format!("{w}×{h} grid needs {} bytes, found {}", 2 * w * h, body.len())));
    }
    let hu = body.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect();
    Ok((w, h, hu))
}

/// Image `[3,H,W]` in [0,1] (gray replicated) and binary mask `[1,H,W]`.
///
/// With `size`, the image is resized bilinearly and the mask by nearest
/// neighbour, both to `size × size`.
pub fn load_pair<T: Scalar>(image: &Path, mask: &Path, size: Option<usize>) -> Result<(Tensor<T>, Tensor<T>)> {
    let img = read_gray_png(image)?;
    let msk = read_gray_png(mask)?;
    if img.dimensions() != msk.dimensions() {
        return Err(Error::Validation(format!(
            "image {} is {:?} but mask {} is {:?}",
            image.display(),
            img.dimensions(),
            mask.display(),
            msk.dimensions()
        )));
    }
    Ok((image_tensor(&img, size), mask_tensor(&msk, size)))
}

pub fn image_tensor<T: Scalar>(img: &GrayImage, size: Option<usize>) -> Tensor<T> {
    let (w, h) = img.dimensions();
    let unit: ImageBuffer<Luma<f32>, Vec<f32>> =
        ImageBuffer::from_fn(w, h, |x, y| Luma([img.get_pixel(x, y)[0] as f32 / 255.0]));
    let unit = match size {
        Some(s) if (s as u32, s as u32) != (w, h) => imageops::resize(&unit, s as u32, s as u32, FilterType::Triangle),
        _ => unit,
    };
    let (w, h) = unit.dimensions();
    let plane: Vec<T> = unit.pixels().map(|p| T::of(p[0] as f64)).collect();
    let mut data = Vec::with_capacity(3 * plane.len());
    for _ in 0..3 {
        data.extend_from_slice(&plane);
    }
    Tensor::new(&[3, h as usize, w as usize], data).expect("non-empty raster")
}

pub fn mask_tensor<T: Scalar>(msk: &GrayImage, size: Option<usize>) -> Tensor<T> {
    let (w, h) = msk.dimensions();
    let msk = match size {
        Some(s) if (s as u32, s as u32) != (w, h) => imageops::resize(msk, s as u32, s as u32, FilterType::Nearest),
        _ => msk.clone(),
    };
    let (w, h) = msk.dimensions();
    let data = msk.pixels().map(|p| if p[0] > 127 { T::one() } else { T::zero() }).collect();
    Tensor::new(&[1, h as usize, w as usize], data).expect("non-empty raster")
}

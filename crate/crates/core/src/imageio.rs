//! Grayscale image reading and writing.
//!
//! Inputs may be 8- or 16-bit PNG or PGM, single-channel or RGB; color
//! is collapsed with 0.299/0.587/0.114 luma weights. Outputs are 16-bit
//! grayscale PNG so the generators' (0,1) range survives quantization.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};

use crate::diffcore::Grid;
use crate::error::{Error, Result};

/// Load any supported image as a 1xHxW grid in [0,1].
pub fn load_gray(path: &Path) -> Result<Grid> {
    let img = image::open(path).map_err(|e| {
        Error::arg(format!("cannot read image {}: {e}", path.display()))
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::arg(format!("empty image {}", path.display())));
    }
    let data: Vec<f32> = match img {
        DynamicImage::ImageLuma8(buf) => buf.pixels().map(|p| p.0[0] as f32 / 255.0).collect(),
        DynamicImage::ImageLuma16(buf) => buf.pixels().map(|p| p.0[0] as f32 / 65535.0).collect(),
        DynamicImage::ImageRgb8(buf) => buf.pixels().map(|p| luma(p.0[0], p.0[1], p.0[2], 255.0)).collect(),
        DynamicImage::ImageRgba8(buf) => buf.pixels().map(|p| luma(p.0[0], p.0[1], p.0[2], 255.0)).collect(),
        DynamicImage::ImageRgb16(buf) => {
            buf.pixels().map(|p| luma(p.0[0], p.0[1], p.0[2], 65535.0)).collect()
        }
        other => {
            let buf = other.to_rgb8();
            buf.pixels().map(|p| luma(p.0[0], p.0[1], p.0[2], 255.0)).collect()
        }
    };
    Grid::new(1, h, w, data)
}

fn luma<T: Into<f32>>(r: T, g: T, b: T, max: f32) -> f32 {
    (0.299 * r.into() + 0.587 * g.into() + 0.114 * b.into()) / max
}

/// Write a single-channel grid as 16-bit grayscale PNG, clamped to [0,1].
pub fn save_gray16(path: &Path, grid: &Grid) -> Result<()> {
    let (c, h, w) = grid.shape();
    if c != 1 {
        return Err(Error::shape("save_gray16", "single channel", grid.shape_string()));
    }
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let v = grid.at(0, y as usize, x as usize).clamp(0.0, 1.0);
        Luma([(v * 65535.0).round() as u16])
    });
    buf.save(path)?;
    Ok(())
}

/// Write a single-channel grid as 8-bit grayscale PNG (contact sheets).
pub fn save_gray8(path: &Path, grid: &Grid) -> Result<()> {
    let (c, h, w) = grid.shape();
    if c != 1 {
        return Err(Error::shape("save_gray8", "single channel", grid.shape_string()));
    }
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let v = grid.at(0, y as usize, x as usize).clamp(0.0, 1.0);
        Luma([(v * 255.0).round() as u8])
    });
    buf.save(path)?;
    Ok(())
}

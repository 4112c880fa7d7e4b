//! Image and depth file formats.
//!
//! Color images are 8-bit sRGB PNG; in memory everything is linear RGB in
//! [0, 1]. Depth maps use a small raw format: the ASCII magic `FDEPTH1`,
//! width and height as little-endian u32, then row-major little-endian f32.

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

pub const FDEPTH_MAGIC: &[u8; 7] = b"FDEPTH1";
/// Color used for pixels without a defined depth.
pub const DEPTH_SENTINEL_COLOR: [u8; 3] = [255, 0, 255];

pub fn linear_to_srgb(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    if x <= 0.0031308 {
        12.92 * x
    } else {
        1.055 * x.powf(1.0 / 2.4) - 0.055
    }
}

pub fn srgb_to_linear(x: f64) -> f64 {
    if x <= 0.04045 {
        x / 12.92
    } else {
        ((x + 0.055) / 1.055).powf(2.4)
    }
}

fn quantize(x: f64) -> u8 {
    (linear_to_srgb(x) * 255.0).round() as u8
}

pub fn write_png(path: &Path, width: u32, height: u32, color: &[Vec3]) -> Result<()> {
    assert_eq!(color.len(), (width * height) as usize);
    let img = RgbImage::from_fn(width, height, |x, y| {
        let c = color[(y * width + x) as usize];
        Rgb([quantize(c.x), quantize(c.y), quantize(c.z)])
    });
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_png_rgb8(path: &Path, width: u32, height: u32, rgb: &[[u8; 3]]) -> Result<()> {
    assert_eq!(rgb.len(), (width * height) as usize);
    let img = RgbImage::from_fn(width, height, |x, y| Rgb(rgb[(y * width + x) as usize]));
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a PNG and returns `(width, height, linear colors)`.
pub fn read_png_linear(path: &Path) -> Result<(u32, u32, Vec<Vec3>)> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let lut: Vec<f64> = (0..256).map(|i| srgb_to_linear(i as f64 / 255.0)).collect();
    let color = img
        .pixels()
        .map(|p| Vec3::new(lut[p[0] as usize], lut[p[1] as usize], lut[p[2] as usize]))
        .collect();
    Ok((img.width(), img.height(), color))
}

pub fn write_fdepth(path: &Path, width: u32, height: u32, depth: &[f64]) -> Result<()> {
    assert_eq!(depth.len(), (width * height) as usize);
    let mut buf = Vec::with_capacity(15 + 4 * depth.len());
    buf.extend_from_slice(FDEPTH_MAGIC);
    buf.extend_from_slice(&width.to_le_bytes());
    buf.extend_from_slice(&height.to_le_bytes());
    for &d in depth {
        buf.extend_from_slice(&(d as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_fdepth(path: &Path) -> Result<(u32, u32, Vec<f32>)> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Data(format!("{}: {m}", path.display()));
    if buf.len() < 15 || &buf[..7] != FDEPTH_MAGIC {
        return Err(bad("not an FDEPTH1 file"));
    }
    let width = u32::from_le_bytes(buf[7..11].try_into().unwrap());
    let height = u32::from_le_bytes(buf[11..15].try_into().unwrap());
    let n = width as usize * height as usize;
    if buf.len() != 15 + 4 * n {
        return Err(bad("truncated depth data"));
    }
    let depth = buf[15..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((width, height, depth))
}

/// Maps valid depths to a grayscale ramp (near is bright) between the given
/// limits; negative depths get [`DEPTH_SENTINEL_COLOR`].
pub fn colorize_depth(depth: &[f64], near: f64, far: f64) -> Vec<[u8; 3]> {
    let span = (far - near).max(f64::MIN_POSITIVE);
    depth
        .iter()
        .map(|&d| {
            if d < 0.0 || !d.is_finite() {
                DEPTH_SENTINEL_COLOR
            } else {
                let v = (255.0 * (1.0 - ((d - near) / span).clamp(0.0, 1.0))).round() as u8;
                [v, v, v]
            }
        })
        .collect()
}

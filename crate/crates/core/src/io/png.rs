//! 8/16-bit PNG input and output for integer-valued images.
//!
//! PNG carries the wrapped measurements, which are integer DN values by
//! construction. Samples are rounded to the nearest integer on write and
//! must land inside the container range; reading yields reals equal to the
//! stored integers, so integer data round-trips exactly.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, Rgb};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::io::write_atomic;

fn quantize(img: &Image, bits: u32) -> Result<Vec<u64>> {
    let max = ((1u64 << bits) - 1) as f64;
    img.data()
        .iter()
        .map(|&v| {
            let r = v.round();
            if !(0.0..=max).contains(&r) {
                return Err(Error::RangeOverflow { value: v, bits });
            }
            Ok(r as u64)
        })
        .collect()
}

/// Interleaves a planar sample buffer into row-major channel-packed order.
fn interleave(vals: &[u64], h: usize, w: usize, c: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(vals.len());
    for i in 0..h {
        for j in 0..w {
            for ch in 0..c {
                out.push(vals[ch * h * w + i * w + j]);
            }
        }
    }
    out
}

/// Writes `img` as an 8- or 16-bit grayscale/RGB PNG.
pub fn write_png(path: &Path, img: &Image, bits: u32) -> Result<()> {
    if bits != 8 && bits != 16 {
        return Err(Error::UnsupportedBitDepth(bits));
    }
    let (h, w, c) = img.dims();
    let vals = interleave(&quantize(img, bits)?, h, w, c);
    let dyn_img = match (c, bits) {
        (1, 8) => DynamicImage::ImageLuma8(
            ImageBuffer::<Luma<u8>, _>::from_vec(w as u32, h as u32, vals.iter().map(|&v| v as u8).collect()).unwrap(),
        ),
        (3, 8) => DynamicImage::ImageRgb8(
            ImageBuffer::<Rgb<u8>, _>::from_vec(w as u32, h as u32, vals.iter().map(|&v| v as u8).collect()).unwrap(),
        ),
        (1, 16) => DynamicImage::ImageLuma16(
            ImageBuffer::<Luma<u16>, _>::from_vec(w as u32, h as u32, vals.iter().map(|&v| v as u16).collect()).unwrap(),
        ),
        _ => DynamicImage::ImageRgb16(
            ImageBuffer::<Rgb<u16>, _>::from_vec(w as u32, h as u32, vals.iter().map(|&v| v as u16).collect()).unwrap(),
        ),
    };
    let mut bytes = Cursor::new(Vec::new());
    dyn_img
        .write_to(&mut bytes, ImageFormat::Png)
        .map_err(|e| Error::Png(e.to_string()))?;
    write_atomic(path, &bytes.into_inner())
}

/// Reads an 8- or 16-bit grayscale/RGB PNG; sets `bit_depth_hint` to the
/// container depth.
pub fn read_png(path: &Path) -> Result<Image> {
    let bytes = fs::read(path)?;
    let decoded = image::load_from_memory_with_format(&bytes, ImageFormat::Png)
        .map_err(|e| Error::Png(e.to_string()))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let (hint, mut img) = match &decoded {
        DynamicImage::ImageLuma8(buf) => {
            (8, Image::from_fn(h, w, 1, |i, j, _| buf.get_pixel(j as u32, i as u32).0[0] as f64)?)
        }
        DynamicImage::ImageRgb8(buf) => {
            (8, Image::from_fn(h, w, 3, |i, j, ch| buf.get_pixel(j as u32, i as u32).0[ch] as f64)?)
        }
        DynamicImage::ImageLuma16(buf) => {
            (16, Image::from_fn(h, w, 1, |i, j, _| buf.get_pixel(j as u32, i as u32).0[0] as f64)?)
        }
        DynamicImage::ImageRgb16(buf) => {
            (16, Image::from_fn(h, w, 3, |i, j, ch| buf.get_pixel(j as u32, i as u32).0[ch] as f64)?)
        }
        other => {
            return Err(Error::Png(format!(
                "unsupported color type {:?} (expected 8/16-bit gray or RGB)",
                other.color()
            )))
        }
    };
    img.bit_depth_hint = Some(hint);
    Ok(img)
}

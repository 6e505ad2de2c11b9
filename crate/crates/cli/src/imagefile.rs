//! PNG image and mask files.
//!
//! Images are 8-bit RGB; pixel value v maps to `v / 127.5 - 1`. Masks are
//! 8-bit grayscale with exactly two legal values: 0 (keep) and 255 (hole);
//! anything else is rejected rather than thresholded.

use std::path::Path;

use anyhow::{bail, Context, Result};
use image::{GrayImage, RgbImage};
use latentfill_core::imaging::{Image, Mask};

/// 8-bit channel value to the [-1, 1] range.
pub fn u8_to_signed(v: u8) -> f32 {
    v as f32 / 127.5 - 1.0
}

/// [-1, 1] to the nearest 8-bit channel value.
pub fn signed_to_u8(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

pub fn load_image(path: &Path) -> Result<Image> {
    let img = image::open(path).with_context(|| format!("reading {}", path.display()))?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    if w != h {
        bail!(latentfill_core::Error::RejectedInput(format!(
            "{}: images must be square, got {w}x{h}",
            path.display()
        )));
    }
    let side = w as usize;
    let mut data = vec![0.0f32; 3 * side * side];
    for (x, y, p) in rgb.enumerate_pixels() {
        for c in 0..3 {
            data[(c * side + y as usize) * side + x as usize] = u8_to_signed(p.0[c]);
        }
    }
    Ok(Image::new(3, side, data).map_err(anyhow::Error::new)?)
}

pub fn save_image(image: &Image, path: &Path) -> Result<()> {
    if image.channels() != 3 {
        bail!(latentfill_core::Error::RejectedInput(format!(
            "only 3-channel images can be written, got {}",
            image.channels()
        )));
    }
    let side = image.side() as u32;
    let mut rgb = RgbImage::new(side, side);
    for y in 0..image.side() {
        for x in 0..image.side() {
            let px = [
                signed_to_u8(image.get(0, y, x)),
                signed_to_u8(image.get(1, y, x)),
                signed_to_u8(image.get(2, y, x)),
            ];
            rgb.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    rgb.save(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn load_mask(path: &Path) -> Result<Mask> {
    let img = image::open(path).with_context(|| format!("reading {}", path.display()))?;
    let gray = img.to_luma8();
    let (w, h) = gray.dimensions();
    if w != h {
        bail!(latentfill_core::Error::RejectedInput(format!(
            "{}: masks must be square, got {w}x{h}",
            path.display()
        )));
    }
    let side = w as usize;
    let mut values = vec![0u8; side * side];
    for (x, y, p) in gray.enumerate_pixels() {
        values[y as usize * side + x as usize] = match p.0[0] {
            0 => 0,
            255 => 1,
            other => bail!(latentfill_core::Error::RejectedInput(format!(
                "{}: mask value {other} at ({x},{y}); only 0 and 255 are allowed",
                path.display()
            ))),
        };
    }
    Ok(Mask::new(side, values).map_err(anyhow::Error::new)?)
}

pub fn save_mask(mask: &Mask, path: &Path) -> Result<()> {
    let side = mask.side() as u32;
    let mut gray = GrayImage::new(side, side);
    for y in 0..mask.side() {
        for x in 0..mask.side() {
            gray.put_pixel(
                x as u32,
                y as u32,
                image::Luma([if mask.get(y, x) == 1 { 255 } else { 0 }]),
            );
        }
    }
    gray.save(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

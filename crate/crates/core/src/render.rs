//! 8-bit slice renders with a fixed palette: intensities in [0, 1] map to
//! grey levels 16..=239, masked voxels are 0 and high-variation outlines 255.

use std::path::Path;

use image::GrayImage;

use crate::error::{Error, Result};
use crate::volume::Volume3D;

pub const MASK_LEVEL: u8 = 0;
pub const OUTLINE_LEVEL: u8 = 255;
const GREY_LO: f64 = 16.0;
const GREY_HI: f64 = 239.0;

/// Renders plane `z` (axis 0). `highlight` is a per-voxel region whose
/// in-plane 4-connected boundary is drawn on top of the mask.
pub fn render_slice(v: &Volume3D, z: usize, mask: Option<&Volume3D>, highlight: Option<&[bool]>) -> Result<GrayImage> {
    let [d0, rows, cols] = v.dims();
    if z >= d0 {
        return Err(Error::DimMismatch(format!("slice {z} out of range 0..{d0}")));
    }
    if let Some(m) = mask {
        v.same_dims(m, "render volume vs mask")?;
    }
    if let Some(h) = highlight {
        if h.len() != v.len() {
            return Err(Error::DimMismatch("render highlight length".into()));
        }
    }
    let hi_at = |r: isize, c: isize| {
        let h = highlight.unwrap();
        r >= 0 && c >= 0 && (r as usize) < rows && (c as usize) < cols && h[v.index(z, r as usize, c as usize)]
    };
    let mut img = GrayImage::new(cols as u32, rows as u32);
    for r in 0..rows {
        for c in 0..cols {
            let x = (v.get(z, r, c) as f64).clamp(0.0, 1.0);
            let mut level = (GREY_LO + x * (GREY_HI - GREY_LO)).round() as u8;
            if mask.is_some_and(|m| m.get(z, r, c) > 0.5) {
                level = MASK_LEVEL;
            }
            if highlight.is_some() {
                let (ri, ci) = (r as isize, c as isize);
                if hi_at(ri, ci) && !(hi_at(ri - 1, ci) && hi_at(ri + 1, ci) && hi_at(ri, ci - 1) && hi_at(ri, ci + 1)) {
                    level = OUTLINE_LEVEL;
                }
            }
            img.put_pixel(c as u32, r as u32, image::Luma([level]));
        }
    }
    Ok(img)
}

pub fn save_png(img: &GrayImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))
}

//! PNG heatmaps with a diverging blue–white–red palette centred at zero.

use std::path::Path;

use image::{Rgb, RgbImage};
use soir::image::Image2D;

use crate::CliError;

const NEGATIVE: [f64; 3] = [33.0, 102.0, 172.0];
const NEUTRAL: [f64; 3] = [247.0, 247.0, 247.0];
const POSITIVE: [f64; 3] = [178.0, 24.0, 43.0];

/// Colour for `v` on the symmetric scale `[−limit, limit]`.
pub fn colour(v: f64, limit: f64) -> [u8; 3] {
    let t = if limit > 0.0 && v.is_finite() {
        (v / limit).clamp(-1.0, 1.0)
    } else {
        0.0
    };
    let end = if t < 0.0 { NEGATIVE } else { POSITIVE };
    let a = t.abs();
    let mut out = [0u8; 3];
    for c in 0..3 {
        out[c] = (NEUTRAL[c] + a * (end[c] - NEUTRAL[c])).round() as u8;
    }
    out
}

/// Pixel `(0, 0)` is drawn top left. Each image pixel becomes a square
/// block so small grids stay legible.
pub fn render(img: &Image2D, target: u32) -> RgbImage {
    let (nx, ny) = (img.nx() as u32, img.ny() as u32);
    let scale = (target / nx.max(ny)).max(1);
    let limit = img
        .values()
        .iter()
        .filter(|v| v.is_finite())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    RgbImage::from_fn(nx * scale, ny * scale, |px, py| {
        Rgb(colour(
            img.get((px / scale) as usize, (py / scale) as usize),
            limit,
        ))
    })
}

pub fn save(img: &Image2D, path: &Path) -> Result<(), CliError> {
    render(img, 256)
        .save(path)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

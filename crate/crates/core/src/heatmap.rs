//! Portable pixmap (binary PPM) rendering of explanation maps.

use std::fs;
use std::path::Path;

use crate::attribution::ExplanationMap;
use crate::error::{Error, Result};
use crate::tensor::{dims3, Tensor};

#[derive(Debug, Clone, Copy)]
pub enum HeatmapStyle<'a> {
    /// Map value `v` becomes gray level `255 v`.
    Gray,
    /// Jet colormap blended over the image at 50% opacity.
    Overlay(&'a Tensor),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pixmap {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB triples.
    pub rgb: Vec<u8>,
}

impl Pixmap {
    pub fn pixel(&self, i: usize, j: usize) -> [u8; 3] {
        let p = 3 * (i * self.width + j);
        [self.rgb[p], self.rgb[p + 1], self.rgb[p + 2]]
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.rgb);
        out
    }
}

/// `255 v` rounded half-to-even and clamped to a byte.
pub fn quantize(v: f64) -> u8 {
    (255.0 * v).round_ties_even().clamp(0.0, 255.0) as u8
}

fn jet(v: f64) -> [f64; 3] {
    let ch = |center: f64| (1.5 - (4.0 * v - center).abs()).clamp(0.0, 1.0);
    [ch(3.0), ch(2.0), ch(1.0)]
}

/// Image scaled into `[0, 1]` as RGB; single-channel images become gray.
fn image_rgb(image: &Tensor, h: usize, w: usize) -> Result<Vec<[f64; 3]>> {
    let (c, ih, iw) = dims3("overlay", image)?;
    if (ih, iw) != (h, w) {
        return Err(Error::ShapeMismatch {
            op: "overlay",
            left: vec![h, w],
            right: image.shape().to_vec(),
        });
    }
    let lo = f64::from(image.min());
    let range = f64::from(image.max()) - lo;
    let scale = |v: f32| if range > 0.0 { (f64::from(v) - lo) / range } else { 0.0 };
    let plane = h * w;
    let d = image.data();
    Ok((0..plane)
        .map(|p| {
            if c >= 3 {
                [scale(d[p]), scale(d[plane + p]), scale(d[2 * plane + p])]
            } else {
                let g = scale(d[p]);
                [g, g, g]
            }
        })
        .collect())
}

pub fn render_heatmap(map: &ExplanationMap, style: HeatmapStyle<'_>) -> Result<Pixmap> {
    let (h, w) = map.size();
    let values = map.normalized.data();
    let mut rgb = Vec::with_capacity(3 * h * w);
    match style {
        HeatmapStyle::Gray => {
            for &v in values {
                let g = quantize(f64::from(v));
                rgb.extend_from_slice(&[g, g, g]);
            }
        }
        HeatmapStyle::Overlay(image) => {
            let base = image_rgb(image, h, w)?;
            for (&v, px) in values.iter().zip(&base) {
                let color = jet(f64::from(v));
                for c in 0..3 {
                    rgb.push(quantize(0.5 * px[c] + 0.5 * color[c]));
                }
            }
        }
    }
    Ok(Pixmap {
        width: w,
        height: h,
        rgb,
    })
}

pub fn emit_heatmap(map: &ExplanationMap, path: &Path, style: HeatmapStyle<'_>) -> Result<()> {
    let pix = render_heatmap(map, style)?;
    fs::write(path, pix.to_ppm()).map_err(|e| Error::io(path, e))
}

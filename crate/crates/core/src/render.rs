//! PNG overlays: leaves tinted by plant, stem base and tip markers.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scene::SegmentationResult;
use crate::tiling::RgbImage;
use crate::types::Point;

const BASE_COLOR: [u8; 3] = [230, 30, 30];
const TIP_COLOR: [u8; 3] = [40, 80, 240];
const FILL_ALPHA: f64 = 0.5;

fn hsv(h: f64, s: f64, v: f64) -> [u8; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - f * s), v * (1.0 - (1.0 - f) * s));
    let (r, g, b) = match i as i64 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [(r * 255.0).round() as u8, (g * 255.0).round() as u8, (b * 255.0).round() as u8]
}

/// Stable colour for a plant id (golden-ratio hue walk).
pub fn plant_color(id: u64) -> [u8; 3] {
    hsv((id as f64 * 0.618_033_988_749_895).fract(), 0.65, 0.95)
}

fn blend(dst: &mut [u8; 3], src: [u8; 3], alpha: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = (*d as f64 * (1.0 - alpha) + s as f64 * alpha).round() as u8;
    }
}

fn marker(img: &mut image::RgbImage, p: Point, color: [u8; 3]) {
    let (cx, cy) = (p.x.round() as i64, p.y.round() as i64);
    for d in -2..=2i64 {
        for (x, y) in [(cx + d, cy), (cx, cy + d)] {
            if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
                img.put_pixel(x as u32, y as u32, image::Rgb(color));
            }
        }
    }
}

pub fn render_overlay(result: &SegmentationResult, background: Option<&RgbImage>) -> Result<image::RgbImage> {
    let (w, h) = (result.image.width, result.image.height);
    let mut px: Vec<[u8; 3]> = match background {
        Some(bg) if bg.width != w || bg.height != h => {
            return Err(Error::DimensionMismatch(format!(
                "background is {}x{} but result is {w}x{h}",
                bg.width, bg.height
            )))
        }
        Some(bg) => bg.pixels.clone(),
        None => vec![[0, 0, 0]; (w * h) as usize],
    };
    for plant in &result.plants {
        let color = plant_color(plant.id);
        for (s, e) in plant.mask.intervals() {
            for p in &mut px[s as usize..e as usize] {
                blend(p, color, FILL_ALPHA);
            }
        }
    }
    // leaf contours
    for leaf in &result.leaves {
        let bits = leaf.mask.to_bitmap();
        for (y, s, e) in leaf.mask.row_spans() {
            for x in s..e {
                let at = |dx: i64, dy: i64| {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    nx >= 0 && ny >= 0 && nx < w as i64 && ny < h as i64 && bits[(ny * w as i64 + nx) as usize]
                };
                if !(at(-1, 0) && at(1, 0) && at(0, -1) && at(0, 1)) {
                    blend(&mut px[(y * w + x) as usize], [255, 255, 255], 0.6);
                }
            }
        }
    }
    let mut img = image::RgbImage::from_fn(w, h, |x, y| image::Rgb(px[(y * w + x) as usize]));
    for stem in &result.stems {
        marker(&mut img, stem.tip, TIP_COLOR);
        marker(&mut img, stem.base, BASE_COLOR);
    }
    Ok(img)
}

pub fn save_png(path: &Path, img: &image::RgbImage) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path)?.to_rgb8();
    let (width, height) = img.dimensions();
    let pixels = img.pixels().map(|p| p.0).collect();
    Ok(RgbImage { width, height, pixels })
}

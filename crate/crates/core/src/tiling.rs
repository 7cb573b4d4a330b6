//! Sliding windows, boundary rejection, leaf/soil filtering and mask NMS.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::types::{CandidateMask, ImageMeta, LeafInstance, PipelineConfig, GREEN_LEAF, SOIL};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub id: u32,
    pub x: u32,
    pub y: u32,
    /// Width and height; equal unless the image is smaller than the window.
    pub w: u32,
    pub h: u32,
}

/// Origins along one axis; the last window is shifted inward to stay full-size.
fn axis_origins(extent: u32, window: u32, stride: u32) -> Vec<u32> {
    if window >= extent {
        return vec![0];
    }
    let mut origins = Vec::new();
    let mut o = 0;
    loop {
        origins.push(o.min(extent - window));
        if o + window >= extent {
            break;
        }
        o += stride;
    }
    origins.dedup();
    origins
}

/// Row-major window layout. Window ids index into the returned vector.
pub fn plan_windows(meta: &ImageMeta, cfg: &PipelineConfig) -> Result<Vec<Window>> {
    if cfg.window == 0 {
        return Err(Error::Config("window must be positive".into()));
    }
    if cfg.window_overlap >= cfg.window {
        return Err(Error::Config(format!(
            "window_overlap {} must be smaller than window {}",
            cfg.window_overlap, cfg.window
        )));
    }
    let stride = cfg.window - cfg.window_overlap;
    let xs = axis_origins(meta.width, cfg.window, stride);
    let ys = axis_origins(meta.height, cfg.window, stride);
    let w = cfg.window.min(meta.width);
    let h = cfg.window.min(meta.height);
    let mut windows = Vec::with_capacity(xs.len() * ys.len());
    for &y in &ys {
        for &x in &xs {
            windows.push(Window { id: windows.len() as u32, x, y, w, h });
        }
    }
    Ok(windows)
}

/// Translates a window-local candidate to image coordinates, or drops it when
/// its foreground touches a window edge that is not also an image edge.
pub fn lift_and_reject(c: &CandidateMask, w: &Window, meta: &ImageMeta) -> Result<Option<CandidateMask>> {
    if c.mask.width() != w.w || c.mask.height() != w.h {
        return Err(Error::schema_for(
            c.id,
            format!(
                "mask is {}x{} but window {} is {}x{}",
                c.mask.width(),
                c.mask.height(),
                w.id,
                w.w,
                w.h
            ),
        ));
    }
    let touch = c.mask.edge_contact();
    let interior_left = w.x > 0;
    let interior_top = w.y > 0;
    let interior_right = w.x + w.w < meta.width;
    let interior_bottom = w.y + w.h < meta.height;
    if (touch.left && interior_left)
        || (touch.top && interior_top)
        || (touch.right && interior_right)
        || (touch.bottom && interior_bottom)
    {
        return Ok(None);
    }
    let mask = c.mask.embed(meta.width, meta.height, w.x as i64, w.y as i64);
    Ok(Some(CandidateMask { mask, ..c.clone() }))
}

/// Row-major RGB pixels of the whole image.
#[derive(Debug, Clone)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<[u8; 3]>,
}

/// Leaf/soil decision. Uses the text-prompt scores when both are present,
/// otherwise the mean excess-green index of the masked pixels, otherwise keeps
/// the candidate.
pub fn classify_leaf(c: &CandidateMask, pixels: Option<&RgbImage>) -> bool {
    if let (Some(leaf), Some(soil)) = (c.class_scores.get(GREEN_LEAF), c.class_scores.get(SOIL)) {
        return leaf > soil;
    }
    let Some(img) = pixels.filter(|img| img.width == c.mask.width() && img.height == c.mask.height()) else {
        return true;
    };
    let mut sum = 0i64;
    let mut n = 0i64;
    for (y, s, e) in c.mask.row_spans() {
        let row = (y * img.width) as usize;
        for px in &img.pixels[row + s as usize..row + e as usize] {
            sum += 2 * px[1] as i64 - px[0] as i64 - px[2] as i64;
            n += 1;
        }
    }
    n == 0 || sum > 0
}

struct Kept {
    id: u64,
    score: f64,
    mask: BinaryMask,
}

fn priority(a_score: f64, a_area: u64, a_id: u64, b_score: f64, b_area: u64, b_id: u64) -> Ordering {
    b_score.total_cmp(&a_score).then(b_area.cmp(&a_area)).then(a_id.cmp(&b_id))
}

fn overlaps(a: &BinaryMask, b: &BinaryMask) -> (f64, f64) {
    let inter = a.intersection_area(b);
    if inter == 0 {
        return (0.0, 0.0);
    }
    let (aa, ba) = (a.area(), b.area());
    let iou = inter as f64 / (aa + ba - inter) as f64;
    let containment = inter as f64 / aa.min(ba) as f64;
    (iou, containment)
}

/// Suppress-or-merge NMS over image-space candidates.
///
/// Candidates are visited by descending score, then area, then ascending id.
/// A candidate with IoU ≥ `nms_iou_threshold` against a kept instance is
/// dropped; one whose containment reaches `containment_merge_threshold` is
/// unioned into the best-containing kept instance (which then absorbs any
/// further kept instance it now overlaps past either threshold); anything
/// else becomes a new instance.
pub fn nms_merge(candidates: &[CandidateMask], cfg: &PipelineConfig) -> Vec<LeafInstance> {
    let mut order: Vec<&CandidateMask> = candidates.iter().filter(|c| !c.mask.is_empty()).collect();
    let areas: std::collections::HashMap<u64, u64> = order.iter().map(|c| (c.id, c.mask.area())).collect();
    order.sort_by(|a, b| priority(a.score, areas[&a.id], a.id, b.score, areas[&b.id], b.id));

    let mut kept: Vec<Kept> = Vec::new();
    'cand: for c in order {
        let mut best_merge: Option<(usize, f64)> = None;
        for (k, inst) in kept.iter().enumerate() {
            let (iou, containment) = overlaps(&c.mask, &inst.mask);
            if iou >= cfg.nms_iou_threshold {
                continue 'cand;
            }
            if containment >= cfg.containment_merge_threshold
                && best_merge.is_none_or(|(_, best)| containment > best)
            {
                best_merge = Some((k, containment));
            }
        }
        match best_merge {
            Some((k, _)) => {
                kept[k].mask = kept[k].mask.union(&c.mask);
                absorb_cascade(&mut kept, k, cfg);
            }
            None => kept.push(Kept { id: c.id, score: c.score, mask: c.mask.clone() }),
        }
    }

    let mut leaves: Vec<LeafInstance> =
        kept.into_iter().map(|k| LeafInstance { id: k.id, mask: k.mask, score: k.score }).collect();
    leaves.sort_by(|a, b| priority(a.score, a.mask.area(), a.id, b.score, b.mask.area(), b.id));
    leaves
}

/// After `kept[k]` grew, fold in every other kept instance it now overlaps
/// past either threshold, until nothing changes. The earlier-kept instance
/// keeps its identity.
fn absorb_cascade(kept: &mut Vec<Kept>, mut k: usize, cfg: &PipelineConfig) {
    loop {
        let hit = (0..kept.len()).filter(|&j| j != k).find(|&j| {
            let (iou, containment) = overlaps(&kept[k].mask, &kept[j].mask);
            iou >= cfg.nms_iou_threshold || containment >= cfg.containment_merge_threshold
        });
        let Some(j) = hit else { return };
        let (keep, drop) = if j < k { (j, k) } else { (k, j) };
        let absorbed = kept.remove(drop);
        kept[keep].mask = kept[keep].mask.union(&absorbed.mask);
        k = keep;
    }
}

//! Stem keypoints from per-leaf attention maps.
//!
//! Each leaf is cropped to a padded square, its attention levels are resized
//! to a common grid and averaged, a weighted least-squares line is fitted to
//! the grid, and the part of that line lying on the leaf gives the two
//! keypoints. The endpoint nearer the attention centroid is the base.
//!
//! Grid coordinates put cell centres at integer positions: cell `(x, y)` is
//! column `x`, row `y`.

use crate::error::{Error, Result};
use crate::mask::PixelRect;
use crate::types::{
    AttentionMap, CropTransform, Grid, LeafInstance, LineAxis, MultiResAttention, PipelineConfig, Point,
    StemLine, StemSegment,
};

/// Leaf mask resampled onto the attention grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskGrid {
    pub leaf_id: u64,
    pub size: usize,
    pub cells: Vec<bool>,
}

impl MaskGrid {
    pub fn get(&self, x: i64, y: i64) -> bool {
        let n = self.size as i64;
        x >= 0 && y >= 0 && x < n && y < n && self.cells[(y * n + x) as usize]
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    fn near_foreground(&self, x: i64, y: i64) -> bool {
        (-1..=1).any(|dy| (-1..=1).any(|dx| self.get(x + dx, y + dy)))
    }
}

/// Tight bbox padded to a square (extra padding pixel on the right/bottom),
/// scaled to `crop_size`, plus the mask resampled nearest-neighbour onto the
/// attention grid.
pub fn crop_leaf(leaf: &LeafInstance, cfg: &PipelineConfig) -> Result<(CropTransform, MaskGrid)> {
    let bbox = leaf.mask.bbox().ok_or_else(|| Error::Internal {
        stage: "stem-extraction",
        message: format!("leaf {} has an empty mask", leaf.id),
    })?;
    let side = bbox.w.max(bbox.h);
    let pad = ((side - bbox.w) / 2, (side - bbox.h) / 2);
    let transform = CropTransform { bbox, pad, scale: cfg.crop_size as f64 / side as f64, crop_size: cfg.crop_size };

    let local = leaf.mask.crop(bbox).to_bitmap();
    let g = cfg.attention_grid;
    let cell = side as f64 / g as f64;
    // square-local pixel index sampled by each grid column/row
    let pick = |i: usize, pad: u32, extent: u32| -> Option<usize> {
        let p = ((i as f64 + 0.5) * cell).floor() as i64 - pad as i64;
        (p >= 0 && p < extent as i64).then_some(p as usize)
    };
    let cols: Vec<Option<usize>> = (0..g).map(|i| pick(i, pad.0, bbox.w)).collect();
    let rows: Vec<Option<usize>> = (0..g).map(|i| pick(i, pad.1, bbox.h)).collect();
    let mut cells = vec![false; g * g];
    for (gy, row) in rows.iter().enumerate() {
        let Some(py) = row else { continue };
        for (gx, col) in cols.iter().enumerate() {
            if let Some(px) = col {
                cells[gy * g + gx] = local[py * bbox.w as usize + px];
            }
        }
    }
    Ok((transform, MaskGrid { leaf_id: leaf.id, size: g, cells }))
}

/// Bilinear resize with half-pixel centres (edges clamped).
pub fn resize_bilinear(grid: &Grid, out_rows: usize, out_cols: usize) -> Vec<f64> {
    let axis = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        let ratio = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * ratio - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, src - i0 as f64)
            })
            .collect()
    };
    let ys = axis(grid.rows, out_rows);
    let xs = axis(grid.cols, out_cols);
    let mut out = Vec::with_capacity(out_rows * out_cols);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = grid.get(y0, x0) as f64 * (1.0 - fx) + grid.get(y0, x1) as f64 * fx;
            let bottom = grid.get(y1, x0) as f64 * (1.0 - fx) + grid.get(y1, x1) as f64 * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Resizes every level to the attention grid, averages them element-wise and
/// min-max normalises the result to [0, 1].
pub fn aggregate_attention(m: &MultiResAttention, cfg: &PipelineConfig) -> Result<AttentionMap> {
    let g = cfg.attention_grid;
    if m.levels.is_empty() {
        return Err(Error::DegenerateAttention { leaf_id: m.leaf_id, reason: "no attention levels".into() });
    }
    let mut acc = vec![0f64; g * g];
    for level in &m.levels {
        for (a, v) in acc.iter_mut().zip(resize_bilinear(level, g, g)) {
            *a += v;
        }
    }
    let n = m.levels.len() as f64;
    acc.iter_mut().for_each(|v| *v /= n);

    let (lo, hi) = acc.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if range.is_nan() || range <= 0.0 || !range.is_finite() {
        return Err(Error::DegenerateAttention {
            leaf_id: m.leaf_id,
            reason: format!("aggregated map is constant ({lo})"),
        });
    }
    acc.iter_mut().for_each(|v| *v = (*v - lo) / range);
    Ok(AttentionMap { leaf_id: m.leaf_id, size: g, values: acc })
}

/// Value-weighted mean of cell coordinates.
pub fn weighted_centroid(f: &AttentionMap) -> Result<Point> {
    let (mut sx, mut sy, mut mass) = (0.0, 0.0, 0.0);
    for y in 0..f.size {
        for x in 0..f.size {
            let v = f.get(x, y);
            sx += v * x as f64;
            sy += v * y as f64;
            mass += v;
        }
    }
    if mass.is_nan() || mass <= 0.0 {
        return Err(Error::DegenerateAttention { leaf_id: f.leaf_id, reason: "zero total mass".into() });
    }
    Ok(Point::new(sx / mass, sy / mass))
}

/// One weighted sample `(a, b, w)`.
pub type WeightedSample = (f64, f64, f64);

/// Closed-form solution of `min ‖W^½ (A x − b)‖²` with `A = [1 a]`.
/// Returns `(intercept, slope, J)`, or `None` when `AᵀWA` is singular.
pub fn solve_wls(samples: &[WeightedSample]) -> Option<(f64, f64, f64)> {
    let (mut s0, mut sa, mut saa, mut sb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(a, b, w) in samples {
        s0 += w;
        sa += w * a;
        saa += w * a * a;
        sb += w * b;
        sab += w * a * b;
    }
    let det = s0 * saa - sa * sa;
    if det.is_nan() || det <= 1e-12 * s0 * saa {
        return None;
    }
    let intercept = (saa * sb - sa * sab) / det;
    let slope = (s0 * sab - sa * sb) / det;
    let j = samples.iter().map(|&(a, b, w)| w * (intercept + slope * a - b).powi(2)).sum();
    Some((intercept, slope, j))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub line: StemLine,
    pub residual: f64,
    /// Residual of the other orientation, when it was solvable.
    pub rejected_residual: Option<f64>,
}

/// Fits `y` on `x` and `x` on `y` over all positively weighted cells and
/// keeps the orientation with the smaller weighted residual.
pub fn fit_wls_line(f: &AttentionMap) -> Result<LineFit> {
    let mut yx = Vec::new();
    let mut xy = Vec::new();
    for y in 0..f.size {
        for x in 0..f.size {
            let w = f.get(x, y);
            if w > 0.0 {
                yx.push((x as f64, y as f64, w));
                xy.push((y as f64, x as f64, w));
            }
        }
    }
    let make = |axis, (intercept, slope, _)| StemLine { axis, intercept, slope };
    match (solve_wls(&yx), solve_wls(&xy)) {
        (None, None) => Err(Error::DegenerateAttention {
            leaf_id: f.leaf_id,
            reason: "weighted normal equations are singular in both orientations".into(),
        }),
        (Some(p), None) => Ok(LineFit { line: make(LineAxis::YOnX, p), residual: p.2, rejected_residual: None }),
        (None, Some(s)) => Ok(LineFit { line: make(LineAxis::XOnY, s), residual: s.2, rejected_residual: None }),
        (Some(p), Some(s)) if p.2 <= s.2 => {
            Ok(LineFit { line: make(LineAxis::YOnX, p), residual: p.2, rejected_residual: Some(s.2) })
        }
        (Some(p), Some(s)) => {
            Ok(LineFit { line: make(LineAxis::XOnY, s), residual: s.2, rejected_residual: Some(p.2) })
        }
    }
}

const CLIP_STEP: f64 = 0.25;

/// Parameter range where `anchor + t·dir` lies inside `[0, hi]²`.
fn box_interval(anchor: Point, dir: (f64, f64), hi: f64) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for (p, d) in [(anchor.x, dir.0), (anchor.y, dir.1)] {
        if d.abs() < 1e-15 {
            if p < 0.0 || p > hi {
                return None;
            }
        } else {
            let (a, b) = ((0.0 - p) / d, (hi - p) / d);
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
    }
    (t0 <= t1).then_some((t0, t1))
}

/// Walks the line across the grid in quarter-cell steps and returns the first
/// and last samples whose cell, or one of its 8 neighbours, is foreground.
pub fn clip_segment_to_mask(line: &StemLine, mask: &MaskGrid) -> Result<(Point, Point)> {
    let miss = || Error::StemMiss { leaf_id: mask.leaf_id };
    let dir = line.direction();
    let anchor = line.anchor();
    let (t0, t1) = box_interval(anchor, dir, (mask.size - 1) as f64).ok_or_else(miss)?;
    let at = |t: f64| Point::new(anchor.x + t * dir.0, anchor.y + t * dir.1);
    let hit = |p: &Point| mask.near_foreground((p.x + 0.5).floor() as i64, (p.y + 0.5).floor() as i64);

    let steps = ((t1 - t0) / CLIP_STEP).floor() as usize;
    let samples = (0..=steps).map(|i| t0 + i as f64 * CLIP_STEP).chain(std::iter::once(t1));
    let mut first = None;
    let mut last = None;
    for t in samples {
        let p = at(t);
        if hit(&p) {
            first.get_or_insert(p);
            last = Some(p);
        }
    }
    match (first, last) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(miss()),
    }
}

/// `(base, tip)`: the endpoint nearer the centroid is the base; on a tie the
/// endpoint with lower `(y, x)` wins.
pub fn select_base_point(e1: Point, e2: Point, centroid: Point) -> (Point, Point) {
    let d1 = e1.dist(&centroid);
    let d2 = e2.dist(&centroid);
    if d1 < d2 || (d1 == d2 && e1.cmp_yx(&e2).is_le()) {
        (e1, e2)
    } else {
        (e2, e1)
    }
}

/// Keypoints of one leaf in grid coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridKeypoints {
    pub base: Point,
    pub tip: Point,
    pub centroid: Point,
    pub fit: LineFit,
}

pub fn grid_keypoints(f: &AttentionMap, mask: &MaskGrid) -> Result<GridKeypoints> {
    let centroid = weighted_centroid(f)?;
    let fit = fit_wls_line(f)?;
    let (e1, e2) = clip_segment_to_mask(&fit.line, mask)?;
    if e1 == e2 {
        return Err(Error::StemMiss { leaf_id: mask.leaf_id });
    }
    let (base, tip) = select_base_point(e1, e2, centroid);
    Ok(GridKeypoints { base, tip, centroid, fit })
}

fn clamp_to(p: Point, r: &PixelRect) -> Point {
    Point::new(
        p.x.clamp(r.x as f64 - 1.0, r.right() as f64),
        p.y.clamp(r.y as f64 - 1.0, r.bottom() as f64),
    )
}

/// Full per-leaf stem extraction.
pub fn extract_stem(leaf: &LeafInstance, attention: &MultiResAttention, cfg: &PipelineConfig) -> Result<StemSegment> {
    let (transform, mask) = crop_leaf(leaf, cfg)?;
    let f = aggregate_attention(&MultiResAttention { leaf_id: leaf.id, ..attention.clone() }, cfg)?;
    let kp = grid_keypoints(&f, &mask)?;
    let g = cfg.attention_grid;
    let base = clamp_to(transform.to_global(kp.base, g), &transform.bbox);
    let tip = clamp_to(transform.to_global(kp.tip, g), &transform.bbox);
    if base == tip {
        return Err(Error::StemMiss { leaf_id: leaf.id });
    }
    Ok(StemSegment { leaf_id: leaf.id, base, tip, line: kp.fit.line, residual: kp.fit.residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::BinaryMask;

    fn cfg() -> PipelineConfig {
        PipelineConfig::default()
    }

    fn map(size: usize, cells: &[(usize, usize, f64)]) -> AttentionMap {
        let mut values = vec![0.0; size * size];
        for &(x, y, v) in cells {
            values[y * size + x] = v;
        }
        AttentionMap { leaf_id: 0, size, values }
    }

    fn leaf_from(w: u32, h: u32, on: impl Fn(u32, u32) -> bool) -> LeafInstance {
        let bits: Vec<bool> = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| on(x, y)).collect();
        LeafInstance { id: 1, mask: BinaryMask::from_bitmap(w, h, &bits).unwrap(), score: 1.0 }
    }

    #[test]
    fn crop_centered_square() {
        let leaf = leaf_from(1000, 1000, |x, y| (450..550).contains(&x) && (450..550).contains(&y));
        let (t, grid) = crop_leaf(&leaf, &cfg()).unwrap();
        assert_eq!(t.bbox, PixelRect { x: 450, y: 450, w: 100, h: 100 });
        assert_eq!(t.pad, (0, 0));
        assert_eq!(t.scale, 8.0);
        assert_eq!(grid.count(), 100 * 100);
    }

    #[test]
    fn crop_tall_blob_pads_horizontally() {
        // 20 wide, 60 tall
        let leaf = leaf_from(200, 200, |x, y| (10..30).contains(&x) && (50..110).contains(&y));
        let (t, grid) = crop_leaf(&leaf, &cfg()).unwrap();
        assert_eq!(t.pad, (20, 0));
        assert_eq!(t.side(), 60);
        assert!((t.scale - 800.0 / 60.0).abs() < 1e-12);
        // a third of the columns are foreground
        let fg_cols = (0..100).filter(|&x| grid.get(x, 50)).count();
        assert!((32..=35).contains(&fg_cols), "{fg_cols}");
    }

    #[test]
    fn crop_single_pixel() {
        let leaf = leaf_from(10, 10, |x, y| x == 3 && y == 7);
        let (t, grid) = crop_leaf(&leaf, &cfg()).unwrap();
        assert_eq!(t.bbox, PixelRect { x: 3, y: 7, w: 1, h: 1 });
        assert_eq!(t.scale, 800.0);
        // the single pixel fills the whole crop
        assert_eq!(grid.count(), 100 * 100);
    }

    #[test]
    fn aggregate_single_level_identity() {
        let mut values = vec![0f32; 100 * 100];
        values[5] = 2.0;
        values[17] = 1.0;
        let m = MultiResAttention { leaf_id: 3, levels: vec![Grid::new(100, 100, values).unwrap()] };
        let f = aggregate_attention(&m, &cfg()).unwrap();
        assert_eq!(f.values[5], 1.0);
        assert_eq!(f.values[17], 0.5);
        assert_eq!(f.values[0], 0.0);
    }

    #[test]
    fn aggregate_constant_levels_is_degenerate() {
        let m = MultiResAttention {
            leaf_id: 4,
            levels: vec![Grid::new(8, 8, vec![2.0; 64]).unwrap(), Grid::new(16, 16, vec![4.0; 256]).unwrap()],
        };
        assert!(matches!(aggregate_attention(&m, &cfg()), Err(Error::DegenerateAttention { leaf_id: 4, .. })));
    }

    #[test]
    fn resize_constant_and_upscale() {
        let g = Grid::new(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let out = resize_bilinear(&g, 4, 4);
        assert_eq!(&out[0..4], &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn centroid_cases() {
        assert_eq!(weighted_centroid(&map(100, &[(10, 20, 0.3)])).unwrap(), Point::new(10.0, 20.0));
        assert_eq!(weighted_centroid(&map(20, &[(0, 0, 1.0), (10, 0, 1.0)])).unwrap(), Point::new(5.0, 0.0));
        assert!(weighted_centroid(&map(5, &[])).is_err());
    }

    #[test]
    fn wls_exact_diagonal() {
        let cells: Vec<_> = (0..50).map(|i| (i, i, 1.0)).collect();
        let fit = fit_wls_line(&map(100, &cells)).unwrap();
        assert_eq!(fit.line.axis, LineAxis::YOnX);
        assert!((fit.line.slope - 1.0).abs() < 1e-12);
        assert!(fit.line.intercept.abs() < 1e-9);
        assert!(fit.residual < 1e-18);
    }

    #[test]
    fn wls_vertical_uses_swapped_axis() {
        let cells: Vec<_> = (10..80).map(|y| (30, y, 1.0)).collect();
        let fit = fit_wls_line(&map(100, &cells)).unwrap();
        assert_eq!(fit.line.axis, LineAxis::XOnY);
        assert_eq!(fit.line.slope, 0.0);
        assert_eq!(fit.line.intercept, 30.0);
        assert_eq!(fit.residual, 0.0);
        assert_eq!(fit.rejected_residual, None);
    }

    #[test]
    fn wls_single_cell_is_degenerate() {
        assert!(matches!(
            fit_wls_line(&map(10, &[(4, 4, 1.0)])),
            Err(Error::DegenerateAttention { .. })
        ));
    }

    fn full_mask(size: usize, on: impl Fn(usize, usize) -> bool) -> MaskGrid {
        let cells = (0..size * size).map(|i| on(i % size, i / size)).collect();
        MaskGrid { leaf_id: 9, size, cells }
    }

    #[test]
    fn clip_full_row() {
        let mask = full_mask(100, |_, y| y == 40);
        let line = StemLine { axis: LineAxis::YOnX, intercept: 40.0, slope: 0.0 };
        let (e1, e2) = clip_segment_to_mask(&line, &mask).unwrap();
        assert_eq!((e1, e2), (Point::new(0.0, 40.0), Point::new(99.0, 40.0)));
    }

    #[test]
    fn clip_disk() {
        let mask = full_mask(100, |x, y| {
            let (dx, dy) = (x as f64 - 49.5, y as f64 - 49.5);
            dx * dx + dy * dy <= 400.0
        });
        for slope in [0.0, 0.3, -1.0, 2.5] {
            let line = StemLine { axis: LineAxis::YOnX, intercept: 49.5 - slope * 49.5, slope };
            let (e1, e2) = clip_segment_to_mask(&line, &mask).unwrap();
            for e in [e1, e2] {
                let r = (e.x - 49.5).hypot(e.y - 49.5);
                assert!((r - 20.5).abs() <= 1.0, "slope {slope}: r {r}");
            }
        }
    }

    #[test]
    fn clip_miss() {
        let mask = full_mask(100, |x, y| x < 10 && y < 10);
        let line = StemLine { axis: LineAxis::YOnX, intercept: 80.0, slope: 0.0 };
        assert!(matches!(clip_segment_to_mask(&line, &mask), Err(Error::StemMiss { leaf_id: 9 })));
        let outside = StemLine { axis: LineAxis::YOnX, intercept: 300.0, slope: 0.0 };
        assert!(clip_segment_to_mask(&outside, &mask).is_err());
    }

    #[test]
    fn base_selection() {
        let c = Point::new(3.0, 3.0);
        let far = Point::new(50.0, 50.0);
        assert_eq!(select_base_point(c, far, c), (c, far));
        assert_eq!(select_base_point(far, c, c), (c, far));
        let a = Point::new(0.0, 10.0);
        let b = Point::new(10.0, 0.0);
        let mid = Point::new(5.0, 5.0);
        assert_eq!(select_base_point(a, b, mid), (b, a));
    }

    #[test]
    fn to_global_grid_round_trip() {
        let t = CropTransform {
            bbox: PixelRect { x: 37, y: 120, w: 23, h: 61 },
            pad: (19, 0),
            scale: 800.0 / 61.0,
            crop_size: 800,
        };
        for i in 0..100 {
            let p = Point::new(38.0 + (i as f64 * 0.37) % 21.0, 121.0 + (i as f64 * 1.3) % 59.0);
            let q = t.to_global(t.to_grid(p, 100), 100);
            assert!(p.dist(&q) < 0.5);
        }
    }

    #[test]
    fn extract_stem_on_horizontal_ridge() {
        let leaf = leaf_from(200, 100, |x, y| (40..140).contains(&x) && (45..55).contains(&y));
        let mut values = vec![0f32; 100 * 100];
        for x in 0..100 {
            // ridge along the middle row, strongest at the left end
            values[50 * 100 + x] = 1.0 - 0.6 * x as f32 / 99.0;
        }
        let att = MultiResAttention { leaf_id: 1, levels: vec![Grid::new(100, 100, values).unwrap()] };
        let stem = extract_stem(&leaf, &att, &cfg()).unwrap();
        assert!(stem.base.x < 45.0 && stem.tip.x > 134.0, "{stem:?}");
        assert!((stem.base.y - 50.0).abs() < 1.0);
    }
}

//! Run-length encoded binary masks.
//!
//! Runs are row-major and alternate background/foreground, starting with a
//! background run that may be zero. Every other run is strictly positive and
//! the runs sum to `width * height`. Note that COCO RLE is column-major; the
//! adapter transposes before writing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned pixel rectangle, `x`/`y` inclusive origin, `w`/`h` extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl PixelRect {
    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn intersects(&self, other: &PixelRect) -> bool {
        self.x < other.right()
            && other.x < self.right()
            && self.y < other.bottom()
            && other.y < self.bottom()
    }
}

/// Which borders of the mask grid carry at least one foreground pixel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EdgeContact {
    pub left: bool,
    pub right: bool,
    pub top: bool,
    pub bottom: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    runs: Vec<u32>,
}

impl BinaryMask {
    pub fn empty(width: u32, height: u32) -> Self {
        let total = width * height;
        BinaryMask { width, height, runs: vec![total] }
    }

    /// Validates `runs` against the encoding invariants.
    pub fn from_runs(width: u32, height: u32, runs: Vec<u32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::schema(format!("mask dimensions must be positive, got {width}x{height}")));
        }
        let total: u64 = runs.iter().map(|&r| r as u64).sum();
        let expected = width as u64 * height as u64;
        if total != expected {
            return Err(Error::schema(format!(
                "runs sum to {total}, expected {width}x{height} = {expected}"
            )));
        }
        if let Some(pos) = runs.iter().skip(1).position(|&r| r == 0) {
            return Err(Error::schema(format!("zero-length interior run at index {}", pos + 1)));
        }
        if runs.is_empty() {
            return Err(Error::schema("empty run list"));
        }
        Ok(BinaryMask { width, height, runs })
    }

    /// Encodes a row-major boolean grid.
    pub fn from_bitmap(width: u32, height: u32, bits: &[bool]) -> Result<Self> {
        if bits.len() as u64 != width as u64 * height as u64 || width == 0 || height == 0 {
            return Err(Error::schema(format!(
                "bitmap has {} cells, declared {width}x{height}",
                bits.len()
            )));
        }
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0u32;
        for &b in bits {
            if b != current {
                runs.push(len);
                current = b;
                len = 0;
            }
            len += 1;
        }
        runs.push(len);
        Ok(BinaryMask { width, height, runs })
    }

    /// Builds a mask from sorted linear foreground intervals `[start, end)`.
    /// Adjacent or overlapping intervals are coalesced.
    pub fn from_intervals<I>(width: u32, height: u32, intervals: I) -> Self
    where
        I: IntoIterator<Item = (u32, u32)>,
    {
        let total = width * height;
        let mut runs = Vec::new();
        let mut cursor = 0u32;
        let mut open: Option<(u32, u32)> = None;
        let flush = |(s, e): (u32, u32), runs: &mut Vec<u32>, cursor: &mut u32| {
            runs.push(s - *cursor);
            runs.push(e - s);
            *cursor = e;
        };
        for (s, e) in intervals {
            debug_assert!(s <= e && e <= total);
            if s == e {
                continue;
            }
            open = match open {
                Some((os, oe)) if s <= oe => Some((os, oe.max(e))),
                Some(prev) => {
                    flush(prev, &mut runs, &mut cursor);
                    Some((s, e))
                }
                None => Some((s, e)),
            };
        }
        if let Some(prev) = open {
            flush(prev, &mut runs, &mut cursor);
        }
        if cursor < total || runs.is_empty() {
            runs.push(total - cursor);
        }
        BinaryMask { width, height, runs }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn runs(&self) -> &[u32] {
        &self.runs
    }

    pub fn to_bitmap(&self) -> Vec<bool> {
        let mut bits = vec![false; (self.width * self.height) as usize];
        for (s, e) in self.intervals() {
            bits[s as usize..e as usize].fill(true);
        }
        bits
    }

    /// Linear foreground intervals `[start, end)` in row-major index space.
    pub fn intervals(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let mut pos = 0u32;
        self.runs.iter().enumerate().filter_map(move |(i, &r)| {
            let start = pos;
            pos += r;
            (i % 2 == 1).then_some((start, pos))
        })
    }

    /// Foreground spans per row as `(y, x_start, x_end)` with exclusive end.
    pub fn row_spans(&self) -> impl Iterator<Item = (u32, u32, u32)> + '_ {
        let w = self.width;
        self.intervals().flat_map(move |(s, e)| {
            let mut spans = Vec::new();
            let mut p = s;
            while p < e {
                let y = p / w;
                let row_end = ((y + 1) * w).min(e);
                spans.push((y, p - y * w, row_end - y * w));
                p = row_end;
            }
            spans
        })
    }

    pub fn area(&self) -> u64 {
        self.runs.iter().skip(1).step_by(2).map(|&r| r as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.len() < 2
    }

    pub fn same_dims(&self, other: &BinaryMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    fn check_dims(&self, other: &BinaryMask) -> Result<()> {
        if self.same_dims(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )))
        }
    }

    /// Pixel count of `self ∩ other`.
    ///
    /// # Panics
    /// If the masks have different dimensions.
    pub fn intersection_area(&self, other: &BinaryMask) -> u64 {
        assert!(self.same_dims(other), "intersection of masks with different dimensions");
        let mut a = self.intervals().peekable();
        let mut b = other.intervals().peekable();
        let mut acc = 0u64;
        while let (Some(&(s1, e1)), Some(&(s2, e2))) = (a.peek(), b.peek()) {
            let lo = s1.max(s2);
            let hi = e1.min(e2);
            if lo < hi {
                acc += (hi - lo) as u64;
            }
            if e1 <= e2 {
                a.next();
            } else {
                b.next();
            }
        }
        acc
    }

    pub fn iou(&self, other: &BinaryMask) -> Result<f64> {
        self.check_dims(other)?;
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union == 0 {
            return Err(Error::UndefinedIou);
        }
        Ok(inter as f64 / union as f64)
    }

    /// `|A∩B| / min(|A|, |B|)`, zero when either mask is empty.
    pub fn containment(&self, other: &BinaryMask) -> f64 {
        let smaller = self.area().min(other.area());
        if smaller == 0 {
            return 0.0;
        }
        self.intersection_area(other) as f64 / smaller as f64
    }

    /// # Panics
    /// If the masks have different dimensions.
    pub fn union(&self, other: &BinaryMask) -> BinaryMask {
        assert!(self.same_dims(other), "union of masks with different dimensions");
        let mut merged: Vec<(u32, u32)> = self.intervals().chain(other.intervals()).collect();
        merged.sort_unstable();
        BinaryMask::from_intervals(self.width, self.height, merged)
    }

    /// Tight bounding box of the foreground, `None` when empty.
    pub fn bbox(&self) -> Option<PixelRect> {
        let mut x0 = u32::MAX;
        let mut x1 = 0;
        let mut y0 = u32::MAX;
        let mut y1 = 0;
        for (y, s, e) in self.row_spans() {
            x0 = x0.min(s);
            x1 = x1.max(e);
            y0 = y0.min(y);
            y1 = y1.max(y + 1);
        }
        (x0 != u32::MAX).then(|| PixelRect { x: x0, y: y0, w: x1 - x0, h: y1 - y0 })
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        if x >= self.width || y >= self.height {
            return false;
        }
        let idx = y * self.width + x;
        self.intervals().take_while(|&(s, _)| s <= idx).any(|(s, e)| s <= idx && idx < e)
    }

    /// Mean pixel coordinate of the foreground.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut n) = (0f64, 0f64, 0f64);
        for (y, s, e) in self.row_spans() {
            let len = (e - s) as f64;
            sx += (s as f64 + e as f64 - 1.0) * 0.5 * len;
            sy += y as f64 * len;
            n += len;
        }
        (n > 0.0).then(|| (sx / n, sy / n))
    }

    pub fn edge_contact(&self) -> EdgeContact {
        let mut c = EdgeContact::default();
        for (y, s, e) in self.row_spans() {
            c.left |= s == 0;
            c.right |= e == self.width;
            c.top |= y == 0;
            c.bottom |= y + 1 == self.height;
        }
        c
    }

    /// Sub-mask covering `rect` (clipped to the grid), in rect-local coordinates.
    pub fn crop(&self, rect: PixelRect) -> BinaryMask {
        let intervals: Vec<(u32, u32)> = self
            .row_spans()
            .filter(|&(y, _, _)| y >= rect.y && y < rect.bottom())
            .filter_map(|(y, s, e)| {
                let s = s.max(rect.x);
                let e = e.min(rect.right());
                (s < e).then(|| {
                    let row = (y - rect.y) * rect.w;
                    (row + s - rect.x, row + e - rect.x)
                })
            })
            .collect();
        BinaryMask::from_intervals(rect.w, rect.h, intervals)
    }

    /// Places this mask into a `width`×`height` canvas at offset `(dx, dy)`.
    /// Pixels falling outside the canvas are dropped.
    pub fn embed(&self, width: u32, height: u32, dx: i64, dy: i64) -> BinaryMask {
        let intervals: Vec<(u32, u32)> = self
            .row_spans()
            .filter_map(|(y, s, e)| {
                let gy = y as i64 + dy;
                if gy < 0 || gy >= height as i64 {
                    return None;
                }
                let gs = (s as i64 + dx).max(0);
                let ge = (e as i64 + dx).min(width as i64);
                (gs < ge).then(|| {
                    let row = gy as u32 * width;
                    (row + gs as u32, row + ge as u32)
                })
            })
            .collect();
        BinaryMask::from_intervals(width, height, intervals)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(w: u32, h: u32, on: &[(u32, u32)]) -> BinaryMask {
        let mut bits = vec![false; (w * h) as usize];
        for &(x, y) in on {
            bits[(y * w + x) as usize] = true;
        }
        BinaryMask::from_bitmap(w, h, &bits).unwrap()
    }

    #[test]
    fn encodes_empty_and_full() {
        assert_eq!(BinaryMask::from_bitmap(2, 2, &[false; 4]).unwrap().runs(), &[4]);
        assert_eq!(BinaryMask::from_bitmap(2, 2, &[true; 4]).unwrap().runs(), &[0, 4]);
    }

    #[test]
    fn bitmap_length_mismatch_is_schema_error() {
        let err = BinaryMask::from_bitmap(3, 3, &[true; 4]).unwrap_err();
        assert!(matches!(err, Error::Schema { .. }));
    }

    #[test]
    fn rejects_bad_runs() {
        assert!(BinaryMask::from_runs(2, 2, vec![1, 2]).is_err());
        assert!(BinaryMask::from_runs(2, 2, vec![1, 0, 3]).is_err());
        assert!(BinaryMask::from_runs(2, 2, vec![0, 4]).is_ok());
    }

    #[test]
    fn iou_cases() {
        let a = mask(4, 1, &[(0, 0), (1, 0), (2, 0), (3, 0)]);
        let half = mask(4, 1, &[(0, 0), (1, 0)]);
        let other = mask(4, 1, &[(2, 0), (3, 0)]);
        assert_eq!(a.iou(&a).unwrap(), 1.0);
        assert_eq!(half.iou(&other).unwrap(), 0.0);
        assert_eq!(a.iou(&half).unwrap(), 0.5);
        assert_eq!(half.iou(&a).unwrap(), 0.5);
        let e = BinaryMask::empty(4, 1);
        assert!(matches!(e.iou(&e), Err(Error::UndefinedIou)));
        assert!(matches!(a.iou(&BinaryMask::empty(2, 2)), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn union_and_containment() {
        let a = mask(3, 3, &[(0, 0), (1, 1)]);
        let b = mask(3, 3, &[(1, 1), (2, 2)]);
        let u = a.union(&b);
        assert_eq!(u.area(), 3);
        assert!(u.contains(2, 2) && u.contains(0, 0) && !u.contains(1, 0));
        assert_eq!(a.containment(&u), 1.0);
        assert_eq!(a.containment(&b), 0.5);
    }

    #[test]
    fn bbox_crop_embed() {
        let m = mask(6, 5, &[(2, 1), (3, 1), (4, 3)]);
        let bb = m.bbox().unwrap();
        assert_eq!(bb, PixelRect { x: 2, y: 1, w: 3, h: 3 });
        let c = m.crop(bb);
        assert_eq!((c.width(), c.height(), c.area()), (3, 3, 3));
        assert!(c.contains(0, 0) && c.contains(2, 2));
        let back = c.embed(6, 5, 2, 1);
        assert_eq!(back, m);
        let shifted = c.embed(4, 4, 2, 2);
        assert_eq!(shifted.area(), 2);
    }

    #[test]
    fn edge_contact_and_centroid() {
        let m = mask(4, 4, &[(3, 1), (3, 2)]);
        let c = m.edge_contact();
        assert!(c.right && !c.left && !c.top && !c.bottom);
        assert_eq!(m.centroid(), Some((3.0, 1.5)));
        assert_eq!(BinaryMask::empty(2, 2).centroid(), None);
    }

    #[test]
    fn row_spans_split_wrapped_intervals() {
        // foreground wraps from the end of row 0 into row 1
        let m = mask(3, 2, &[(2, 0), (0, 1)]);
        let spans: Vec<_> = m.row_spans().collect();
        assert_eq!(spans, vec![(0, 2, 3), (1, 0, 1)]);
    }
}

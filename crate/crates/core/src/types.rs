//! Core domain types shared by every pipeline stage.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{BinaryMask, PixelRect};

pub const GREEN_LEAF: &str = "green leaf";
pub const SOIL: &str = "soil";

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Scan order used wherever ties must be broken deterministically.
    pub fn cmp_yx(&self, other: &Point) -> std::cmp::Ordering {
        self.y.total_cmp(&other.y).then(self.x.total_cmp(&other.x))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub width: u32,
    pub height: u32,
    pub source_id: String,
}

impl ImageMeta {
    pub fn new(width: u32, height: u32, source_id: impl Into<String>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::schema(format!("image dimensions must be positive, got {width}x{height}")));
        }
        Ok(ImageMeta { width, height, source_id: source_id.into() })
    }
}

/// A pre-NMS leaf candidate. The mask is window-local until lifted.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateMask {
    pub id: u64,
    pub mask: BinaryMask,
    pub score: f64,
    pub window_id: u32,
    pub class_scores: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeafInstance {
    pub id: u64,
    pub mask: BinaryMask,
    pub score: f64,
}

/// Square attention grid, row-major, `values[y * size + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub leaf_id: u64,
    pub size: usize,
    pub values: Vec<f64>,
}

impl AttentionMap {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.size + x]
    }
}

/// A dense non-negative grid, as stored in `.f32grid` files.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f32>,
}

impl Grid {
    pub fn new(rows: usize, cols: usize, values: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 || values.len() != rows * cols {
            return Err(Error::schema(format!(
                "grid {rows}x{cols} with {} values",
                values.len()
            )));
        }
        Ok(Grid { rows, cols, values })
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.cols + col]
    }
}

/// Attention grids for one leaf at several resolutions.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiResAttention {
    pub leaf_id: u64,
    pub levels: Vec<Grid>,
}

/// Mapping between global pixels and the square leaf crop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropTransform {
    pub bbox: PixelRect,
    /// Zero padding (left, top) added to make the bbox square, in bbox pixels.
    pub pad: (u32, u32),
    /// Crop pixels per global pixel.
    pub scale: f64,
    pub crop_size: u32,
}

impl CropTransform {
    /// Side of the padded square in global pixels.
    pub fn side(&self) -> u32 {
        self.bbox.w.max(self.bbox.h)
    }

    /// Grid point (cell centres at integer coordinates) to global pixel coordinates
    /// (pixel centres at integer coordinates).
    pub fn to_global(&self, grid: Point, grid_size: usize) -> Point {
        let cell = self.side() as f64 / grid_size as f64;
        Point {
            x: self.bbox.x as f64 - self.pad.0 as f64 + (grid.x + 0.5) * cell - 0.5,
            y: self.bbox.y as f64 - self.pad.1 as f64 + (grid.y + 0.5) * cell - 0.5,
        }
    }

    pub fn to_grid(&self, global: Point, grid_size: usize) -> Point {
        let cell = self.side() as f64 / grid_size as f64;
        Point {
            x: (global.x + 0.5 - self.bbox.x as f64 + self.pad.0 as f64) / cell - 0.5,
            y: (global.y + 0.5 - self.bbox.y as f64 + self.pad.1 as f64) / cell - 0.5,
        }
    }

    /// Global pixel coordinates to crop-image pixel coordinates.
    pub fn to_crop(&self, global: Point) -> Point {
        Point {
            x: (global.x + 0.5 - self.bbox.x as f64 + self.pad.0 as f64) * self.scale - 0.5,
            y: (global.y + 0.5 - self.bbox.y as f64 + self.pad.1 as f64) * self.scale - 0.5,
        }
    }

    pub fn crop_to_global(&self, crop: Point) -> Point {
        Point {
            x: (crop.x + 0.5) / self.scale + self.bbox.x as f64 - self.pad.0 as f64 - 0.5,
            y: (crop.y + 0.5) / self.scale + self.bbox.y as f64 - self.pad.1 as f64 - 0.5,
        }
    }
}

/// Which variable a fitted line treats as independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineAxis {
    /// `y = intercept + slope * x`
    YOnX,
    /// `x = intercept + slope * y`
    XOnY,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StemLine {
    pub axis: LineAxis,
    pub intercept: f64,
    pub slope: f64,
}

impl StemLine {
    /// Line through two distinct points, using whichever axis is better conditioned.
    pub fn through(a: Point, b: Point) -> Self {
        let (dx, dy) = (b.x - a.x, b.y - a.y);
        if dx.abs() >= dy.abs() {
            let slope = dy / dx;
            StemLine { axis: LineAxis::YOnX, intercept: a.y - slope * a.x, slope }
        } else {
            let slope = dx / dy;
            StemLine { axis: LineAxis::XOnY, intercept: a.x - slope * a.y, slope }
        }
    }

    /// Unit direction of the line, pointing along increasing independent variable.
    pub fn direction(&self) -> (f64, f64) {
        let n = self.slope.hypot(1.0);
        match self.axis {
            LineAxis::YOnX => (1.0 / n, self.slope / n),
            LineAxis::XOnY => (self.slope / n, 1.0 / n),
        }
    }

    /// A point on the line.
    pub fn anchor(&self) -> Point {
        match self.axis {
            LineAxis::YOnX => Point::new(0.0, self.intercept),
            LineAxis::XOnY => Point::new(self.intercept, 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StemSegment {
    pub leaf_id: u64,
    pub base: Point,
    pub tip: Point,
    /// Fitted line in attention-grid coordinates of the leaf crop.
    pub line: StemLine,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantInstance {
    pub id: u64,
    pub leaf_ids: BTreeSet<u64>,
    pub mask: BinaryMask,
    pub center: Point,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Sliding window side in pixels.
    pub window: u32,
    pub window_overlap: u32,
    /// Side of the square leaf crop fed to the attention model.
    pub crop_size: u32,
    pub nms_iou_threshold: f64,
    pub containment_merge_threshold: f64,
    pub attention_grid: usize,
    /// DBSCAN neighbourhood radius in global pixels.
    pub eps: f64,
    pub init_min_pts: usize,
    pub max_clusters: usize,
    pub mahalanobis_threshold: f64,
    /// Ridge added to cluster covariances, in px².
    pub covariance_ridge: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            window: 256,
            window_overlap: 96,
            crop_size: 800,
            nms_iou_threshold: 0.8,
            containment_merge_threshold: 0.9,
            attention_grid: 100,
            eps: 24.0,
            init_min_pts: 4,
            max_clusters: 64,
            mahalanobis_threshold: 3.0,
            covariance_ridge: 1.0,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.nms_iou_threshold > 0.0 && self.nms_iou_threshold <= 1.0) {
            return fail("nms_iou_threshold must lie in (0, 1]");
        }
        if !(self.containment_merge_threshold > 0.0 && self.containment_merge_threshold <= 1.0) {
            return fail("containment_merge_threshold must lie in (0, 1]");
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return fail("eps must be positive");
        }
        if self.init_min_pts < 2 {
            return fail("init_min_pts must be at least 2");
        }
        if self.max_clusters < 1 {
            return fail("max_clusters must be at least 1");
        }
        if self.covariance_ridge.is_nan() || self.covariance_ridge <= 0.0 {
            return fail("covariance_ridge must be positive");
        }
        if self.mahalanobis_threshold.is_nan() || self.mahalanobis_threshold < 0.0 {
            return fail("mahalanobis_threshold must be non-negative");
        }
        if self.window == 0 {
            return fail("window must be positive");
        }
        if self.window_overlap >= self.window {
            return fail("window_overlap must be smaller than window");
        }
        if self.crop_size == 0 || self.attention_grid == 0 {
            return fail("crop_size and attention_grid must be positive");
        }
        Ok(())
    }
}

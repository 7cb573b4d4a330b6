//! Procedural rosette scenes with known leaf, stem and plant ground truth.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::{PI, TAU};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{BinaryMask, PixelRect};
use crate::scene::{save_instances, save_scene, to_json_bytes, write_atomic, Scene, SegmentationResult};
use crate::stem::crop_leaf;
use crate::tiling::{lift_and_reject, plan_windows, Window};
use crate::types::{
    CandidateMask, Grid, ImageMeta, LeafInstance, MultiResAttention, PipelineConfig, PlantInstance, Point, StemLine,
    StemSegment, GREEN_LEAF, SOIL,
};

pub const GT_FILE: &str = "gt.json";
pub const SPEC_FILE: &str = "spec.json";

/// Attention level sides, finest first.
pub const LEVEL_SIZES: [usize; 4] = [64, 32, 16, 8];
/// Ridge width in attention-grid cells.
pub const RIDGE_SIGMA: f64 = 6.0;
/// Ridge amplitude at the tip relative to the base.
pub const TIP_AMPLITUDE: f64 = 0.4;
const MAX_PLACEMENT_ATTEMPTS: usize = 100_000;
const JITTER_PROBABILITY: f64 = 0.15;
const DUPLICATE_SCORE_FACTOR: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    pub plants: usize,
    /// Clustering radius the separation is expressed in.
    pub eps: f64,
    /// Minimum distance between plant centres, in units of `eps`.
    pub min_center_separation: f64,
    pub leaves_per_plant: (usize, usize),
    /// Full major axis of a leaf blade, pixels.
    pub leaf_length: (f64, f64),
    /// Full minor axis, pixels; capped at 0.6 × length.
    pub leaf_width: (f64, f64),
    pub petiole_length: (f64, f64),
    pub duplicate_probability: f64,
    pub boundary_mask_probability: f64,
    pub attention_noise: f64,
    /// Extra non-leaf candidates scored as soil.
    pub soil_masks: usize,
    pub window: u32,
    pub window_overlap: u32,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        let cfg = PipelineConfig::default();
        SceneSpec {
            width: 640,
            height: 640,
            plants: 10,
            eps: cfg.eps,
            min_center_separation: 4.0,
            leaves_per_plant: (3, 8),
            leaf_length: (24.0, 36.0),
            leaf_width: (10.0, 18.0),
            petiole_length: (4.0, 8.0),
            duplicate_probability: 0.0,
            boundary_mask_probability: 0.5,
            attention_noise: 0.0,
            soil_masks: 0,
            window: cfg.window,
            window_overlap: cfg.window_overlap,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        let range_ok = |(lo, hi): (f64, f64)| lo > 0.0 && lo <= hi && hi.is_finite();
        if self.width == 0 || self.height == 0 {
            return fail("image size must be positive");
        }
        if self.eps.is_nan() || self.eps <= 0.0 || self.min_center_separation.is_nan() || self.min_center_separation < 0.0 {
            return fail("eps must be positive and min_center_separation non-negative");
        }
        if self.leaves_per_plant.0 == 0 || self.leaves_per_plant.0 > self.leaves_per_plant.1 {
            return fail("leaves_per_plant must be a non-empty range starting at 1 or more");
        }
        if !range_ok(self.leaf_length) || !range_ok(self.leaf_width) || !range_ok(self.petiole_length) {
            return fail("leaf_length, leaf_width and petiole_length must be positive ranges");
        }
        for p in [self.duplicate_probability, self.boundary_mask_probability] {
            if !(0.0..=1.0).contains(&p) {
                return fail("probabilities must lie in [0, 1]");
            }
        }
        if !self.attention_noise.is_finite() || self.attention_noise < 0.0 {
            return fail("attention_noise must be non-negative");
        }
        self.pipeline_config().validate()
    }

    /// Pipeline settings the generated candidates are laid out for.
    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig { window: self.window, window_overlap: self.window_overlap, ..Default::default() }
    }

    /// Largest distance from a plant centre to any leaf pixel.
    pub fn max_plant_radius(&self) -> f64 {
        self.petiole_length.1 + self.leaf_length.1 + 1.0
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedScene {
    pub scene: Scene,
    pub ground_truth: SegmentationResult,
    /// Candidate id to the ground-truth leaf it was cut from. Soil candidates are absent.
    pub candidate_leaf: BTreeMap<u64, u64>,
}

impl GeneratedScene {
    /// Ground-truth plant of every leaf.
    pub fn leaf_plant(&self) -> BTreeMap<u64, u64> {
        self.ground_truth.plants.iter().flat_map(|p| p.leaf_ids.iter().map(move |&l| (l, p.id))).collect()
    }
}

struct TrueLeaf {
    mask: BinaryMask,
    base: Point,
    tip: Point,
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn sample_centers(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Point>> {
    if spec.plants == 0 {
        return Ok(Vec::new());
    }
    let margin = spec.max_plant_radius();
    let (w, h) = (spec.width as f64, spec.height as f64);
    if w - 1.0 <= 2.0 * margin || h - 1.0 <= 2.0 * margin {
        return Err(Error::Infeasible(format!("a {}x{} image cannot hold a plant of radius {margin}", spec.width, spec.height)));
    }
    let sep = spec.min_center_separation * spec.eps;
    let mut centers: Vec<Point> = Vec::with_capacity(spec.plants);
    let mut attempts = 0;
    while centers.len() < spec.plants {
        attempts += 1;
        if attempts > MAX_PLACEMENT_ATTEMPTS {
            return Err(Error::Infeasible(format!(
                "placed {} of {} plants at separation {sep} after {MAX_PLACEMENT_ATTEMPTS} attempts",
                centers.len(),
                spec.plants
            )));
        }
        let p = Point::new(rng.random_range(margin..w - 1.0 - margin), rng.random_range(margin..h - 1.0 - margin));
        if centers.iter().all(|c| c.dist(&p) >= sep) {
            centers.push(p);
        }
    }
    Ok(centers)
}

/// Ellipse by pixel centre: semi-axes `a` along `u`, `b` across, centred at `e`.
fn rasterize_ellipse(width: u32, height: u32, e: Point, u: (f64, f64), a: f64, b: f64) -> BinaryMask {
    let x0 = (e.x - a).floor().max(0.0) as u32;
    let x1 = ((e.x + a).ceil() as i64).min(width as i64 - 1);
    let y0 = (e.y - a).floor().max(0.0) as u32;
    let y1 = ((e.y + a).ceil() as i64).min(height as i64 - 1);
    let mut intervals = Vec::new();
    for y in y0 as i64..=y1 {
        let mut run: Option<u32> = None;
        for x in x0 as i64..=x1 + 1 {
            let inside = x <= x1 && {
                let (dx, dy) = (x as f64 - e.x, y as f64 - e.y);
                let s = dx * u.0 + dy * u.1;
                let t = -dx * u.1 + dy * u.0;
                (s / a).powi(2) + (t / b).powi(2) <= 1.0
            };
            let idx = y as u32 * width + x as u32;
            match (inside, run) {
                (true, None) => run = Some(idx),
                (false, Some(s)) => {
                    intervals.push((s, idx));
                    run = None;
                }
                _ => {}
            }
        }
    }
    BinaryMask::from_intervals(width, height, intervals)
}

fn mask_contains(mask: &BinaryMask, p: Point) -> bool {
    let (x, y) = (p.x.round(), p.y.round());
    x >= 0.0 && y >= 0.0 && mask.contains(x as u32, y as u32)
}

fn make_leaf(spec: &SceneSpec, rng: &mut ChaCha8Rng, center: Point, angle: f64) -> TrueLeaf {
    let a = uniform(rng, spec.leaf_length) / 2.0;
    let b = (uniform(rng, spec.leaf_width) / 2.0).min(0.6 * a);
    let petiole = uniform(rng, spec.petiole_length);
    let f = (a * a - b * b).sqrt();
    let u = (angle.cos(), angle.sin());
    let along = |d: f64| Point::new(center.x + d * u.0, center.y + d * u.1);
    let e = along(petiole + f);
    let mask = rasterize_ellipse(spec.width, spec.height, e, u, a, b);
    let inner = petiole + f - a;
    let mut step = 1.0;
    while !mask_contains(&mask, along(inner + step)) && step < a {
        step += 0.5;
    }
    TrueLeaf { mask, base: along(inner + step), tip: along(petiole + f + a) }
}

/// Toggles each boundary pixel (either side of the contour) with fixed probability.
fn jitter(mask: &BinaryMask, rng: &mut ChaCha8Rng) -> BinaryMask {
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let bits = mask.to_bitmap();
    let mut out = bits.clone();
    for y in 0..h {
        for x in 0..w {
            let v = bits[y * w + x];
            let differs = (x > 0 && bits[y * w + x - 1] != v)
                || (x + 1 < w && bits[y * w + x + 1] != v)
                || (y > 0 && bits[(y - 1) * w + x] != v)
                || (y + 1 < h && bits[(y + 1) * w + x] != v);
            if differs && rng.random_bool(JITTER_PROBABILITY) {
                out[y * w + x] = !v;
            }
        }
    }
    BinaryMask::from_bitmap(mask.width(), mask.height(), &out).expect("bitmap has mask dimensions")
}

fn leaf_scores(rng: &mut ChaCha8Rng) -> BTreeMap<String, f64> {
    BTreeMap::from([
        (GREEN_LEAF.to_string(), rng.random_range(0.6..0.95)),
        (SOIL.to_string(), rng.random_range(0.05..0.4)),
    ])
}

/// Attention levels for a leaf whose stem runs from `base` to `tip` in grid coordinates.
fn ridge_levels(
    base: Point,
    tip: Point,
    footprint: &crate::stem::MaskGrid,
    noise: Option<&Normal<f64>>,
    rng: &mut ChaCha8Rng,
) -> Vec<Grid> {
    let g = footprint.size as f64;
    let (dx, dy) = (tip.x - base.x, tip.y - base.y);
    let len2 = (dx * dx + dy * dy).max(f64::MIN_POSITIVE);
    LEVEL_SIZES
        .iter()
        .map(|&n| {
            let cell = g / n as f64;
            let mut values = Vec::with_capacity(n * n);
            for r in 0..n {
                for c in 0..n {
                    let q = Point::new((c as f64 + 0.5) * cell - 0.5, (r as f64 + 0.5) * cell - 0.5);
                    let t = (((q.x - base.x) * dx + (q.y - base.y) * dy) / len2).clamp(0.0, 1.0);
                    let d = q.dist(&Point::new(base.x + t * dx, base.y + t * dy));
                    let amp = 1.0 - (1.0 - TIP_AMPLITUDE) * t;
                    let mut v = amp * (-d * d / (2.0 * RIDGE_SIGMA * RIDGE_SIGMA)).exp();
                    if let Some(dist) = noise {
                        if footprint.get(q.x.round() as i64, q.y.round() as i64) {
                            v = (v + dist.sample(rng)).max(0.0);
                        }
                    }
                    values.push(v as f32);
                }
            }
            Grid::new(n, n, values).expect("level dimensions match")
        })
        .collect()
}

struct Emitter<'a> {
    cfg: &'a PipelineConfig,
    meta: &'a ImageMeta,
    noise: Option<Normal<f64>>,
    next_id: u64,
    candidates: Vec<CandidateMask>,
    attention: BTreeMap<u64, MultiResAttention>,
    candidate_leaf: BTreeMap<u64, u64>,
}

impl Emitter<'_> {
    /// Adds a window-local candidate; returns its id and whether it survives boundary rejection.
    fn push(
        &mut self,
        window: &Window,
        local: BinaryMask,
        score: f64,
        class_scores: BTreeMap<String, f64>,
        leaf: Option<(u64, &TrueLeaf)>,
        rng: &mut ChaCha8Rng,
    ) -> Result<bool> {
        let id = self.next_id;
        self.next_id += 1;
        let cand = CandidateMask { id, mask: local, score, window_id: window.id, class_scores };
        let lifted = lift_and_reject(&cand, window, self.meta)?;
        if let (Some((leaf_id, truth)), Some(lifted)) = (leaf, &lifted) {
            let inst = LeafInstance { id, mask: lifted.mask.clone(), score: 1.0 };
            let (t, footprint) = crop_leaf(&inst, self.cfg)?;
            let g = self.cfg.attention_grid;
            let levels =
                ridge_levels(t.to_grid(truth.base, g), t.to_grid(truth.tip, g), &footprint, self.noise.as_ref(), rng);
            self.attention.insert(id, MultiResAttention { leaf_id: id, levels });
            self.candidate_leaf.insert(id, leaf_id);
        } else if let Some((leaf_id, _)) = leaf {
            self.candidate_leaf.insert(id, leaf_id);
        }
        self.candidates.push(cand);
        Ok(lifted.is_some())
    }
}

fn window_rect(w: &Window) -> PixelRect {
    PixelRect { x: w.x, y: w.y, w: w.w, h: w.h }
}

pub fn generate_scene(spec: &SceneSpec) -> Result<GeneratedScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let meta = ImageMeta::new(spec.width, spec.height, format!("synthetic-{}", spec.seed))?;
    let cfg = spec.pipeline_config();

    let centers = sample_centers(spec, &mut rng)?;
    let mut leaves: Vec<TrueLeaf> = Vec::new();
    let mut plants = Vec::new();
    for (pid, &c) in centers.iter().enumerate() {
        let n = rng.random_range(spec.leaves_per_plant.0..=spec.leaves_per_plant.1);
        let phase = rng.random_range(0.0..TAU);
        let mut ids = BTreeSet::new();
        let mut mask = BinaryMask::empty(spec.width, spec.height);
        for k in 0..n {
            let jitter = rng.random_range(-0.25..0.25) * PI / n as f64;
            let leaf = make_leaf(spec, &mut rng, c, phase + TAU * k as f64 / n as f64 + jitter);
            mask = mask.union(&leaf.mask);
            ids.insert(leaves.len() as u64);
            leaves.push(leaf);
        }
        plants.push(PlantInstance { id: pid as u64, leaf_ids: ids, mask, center: c });
    }

    let noise = (spec.attention_noise > 0.0)
        .then(|| Normal::new(0.0, spec.attention_noise).map_err(|e| Error::Config(e.to_string())))
        .transpose()?;
    let windows = plan_windows(&meta, &cfg)?;
    let mut em = Emitter {
        cfg: &cfg,
        meta: &meta,
        noise,
        next_id: 0,
        candidates: Vec::new(),
        attention: BTreeMap::new(),
        candidate_leaf: BTreeMap::new(),
    };
    let mut duplicate_decided = vec![false; leaves.len()];
    for w in &windows {
        let rect = window_rect(w);
        for (lid, leaf) in leaves.iter().enumerate() {
            if !leaf.mask.bbox().is_some_and(|b| b.intersects(&rect)) {
                continue;
            }
            let local = leaf.mask.crop(rect);
            if local.is_empty() {
                continue;
            }
            let interior = lift_and_reject(
                &CandidateMask {
                    id: 0,
                    mask: local.clone(),
                    score: 0.0,
                    window_id: w.id,
                    class_scores: BTreeMap::new(),
                },
                w,
                &meta,
            )?
            .is_some();
            if !interior && !rng.random_bool(spec.boundary_mask_probability) {
                continue;
            }
            let score = rng.random_range(0.8..1.0);
            let scores = leaf_scores(&mut rng);
            em.push(w, local.clone(), score, scores.clone(), Some((lid as u64, leaf)), &mut rng)?;
            if interior && !duplicate_decided[lid] {
                duplicate_decided[lid] = true;
                if rng.random_bool(spec.duplicate_probability) {
                    let copy = jitter(&local, &mut rng);
                    if !copy.is_empty() {
                        em.push(w, copy, score * DUPLICATE_SCORE_FACTOR, scores, Some((lid as u64, leaf)), &mut rng)?;
                    }
                }
            }
        }
    }
    for _ in 0..spec.soil_masks {
        let w = windows[rng.random_range(0..windows.len())];
        let r: f64 = rng.random_range(4.0..10.0);
        let lo = r + 2.0;
        if (w.w as f64) <= 2.0 * lo || (w.h as f64) <= 2.0 * lo {
            continue;
        }
        let e = Point::new(rng.random_range(lo..w.w as f64 - lo), rng.random_range(lo..w.h as f64 - lo));
        let disk = rasterize_ellipse(w.w, w.h, e, (1.0, 0.0), r, r);
        let scores = BTreeMap::from([
            (GREEN_LEAF.to_string(), rng.random_range(0.05..0.4)),
            (SOIL.to_string(), rng.random_range(0.6..0.95)),
        ]);
        let score = rng.random_range(0.8..1.0);
        em.push(&w, disk, score, scores, None, &mut rng)?;
    }

    let g = cfg.attention_grid;
    let mut gt_leaves = Vec::with_capacity(leaves.len());
    let mut gt_stems = Vec::with_capacity(leaves.len());
    for (lid, leaf) in leaves.iter().enumerate() {
        let inst = LeafInstance { id: lid as u64, mask: leaf.mask.clone(), score: 1.0 };
        let (t, _) = crop_leaf(&inst, &cfg)?;
        gt_stems.push(StemSegment {
            leaf_id: lid as u64,
            base: leaf.base,
            tip: leaf.tip,
            line: StemLine::through(t.to_grid(leaf.base, g), t.to_grid(leaf.tip, g)),
            residual: 0.0,
        });
        gt_leaves.push(inst);
    }

    let (candidates, attention, candidate_leaf) = (em.candidates, em.attention, em.candidate_leaf);
    let scene = Scene { image: meta.clone(), candidates, attention };
    let ground_truth =
        SegmentationResult { image: meta, leaves: gt_leaves, stems: gt_stems, plants, stem_failures: Vec::new() };
    Ok(GeneratedScene { scene, ground_truth, candidate_leaf })
}

/// Writes the scene files, `gt.json` and the spec into `dir`.
pub fn write_generated(dir: &Path, spec: &SceneSpec, generated: &GeneratedScene) -> Result<()> {
    save_scene(dir, &generated.scene)?;
    save_instances(&dir.join(GT_FILE), &generated.ground_truth)?;
    write_atomic(&dir.join(SPEC_FILE), &to_json_bytes(spec))
}

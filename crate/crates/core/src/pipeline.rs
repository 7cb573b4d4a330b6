//! End-to-end segmentation: filter → NMS → stems → grouping.

use std::collections::BTreeMap;
use std::time::Instant;

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::{assign_outliers, form_plants, greedy_cluster};
use crate::scene::{Scene, SegmentationResult, StemFailure, StemFailureKind};
use crate::stem::extract_stem;
use crate::tiling::{classify_leaf, lift_and_reject, nms_merge, plan_windows, RgbImage};
use crate::types::{CandidateMask, PipelineConfig, Point};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageCounts {
    pub candidates: usize,
    pub boundary_rejected: usize,
    pub soil_rejected: usize,
    pub leaves: usize,
    pub stems: usize,
    pub stem_failures: usize,
    pub greedy_clusters: usize,
    pub plants: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub result: SegmentationResult,
    pub counts: StageCounts,
    pub timings: Vec<StageTiming>,
}

struct Timer {
    start: Instant,
    timings: Vec<StageTiming>,
}

impl Timer {
    fn new() -> Self {
        Timer { start: Instant::now(), timings: Vec::new() }
    }

    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.timings.push(StageTiming { stage: stage.into(), seconds: (now - self.start).as_secs_f64() });
        self.start = now;
    }
}

/// Lifts window-local candidates, drops boundary and non-leaf masks.
pub fn filter_candidates(
    scene: &Scene,
    cfg: &PipelineConfig,
    pixels: Option<&RgbImage>,
    counts: &mut StageCounts,
) -> Result<Vec<CandidateMask>> {
    let windows = plan_windows(&scene.image, cfg)?;
    let mut kept = Vec::new();
    for c in &scene.candidates {
        let window = windows.get(c.window_id as usize).ok_or_else(|| {
            Error::schema_for(c.id, format!("window_id {} out of range ({} windows)", c.window_id, windows.len()))
        })?;
        let Some(lifted) = lift_and_reject(c, window, &scene.image)? else {
            counts.boundary_rejected += 1;
            continue;
        };
        if !classify_leaf(&lifted, pixels) {
            counts.soil_rejected += 1;
            continue;
        }
        kept.push(lifted);
    }
    Ok(kept)
}

pub fn segment(scene: &Scene, cfg: &PipelineConfig, pixels: Option<&RgbImage>) -> Result<PipelineRun> {
    cfg.validate()?;
    let mut timer = Timer::new();
    let mut counts = StageCounts { candidates: scene.candidates.len(), ..Default::default() };

    let filtered = filter_candidates(scene, cfg, pixels, &mut counts)?;
    timer.lap("filter");

    let leaves = nms_merge(&filtered, cfg);
    counts.leaves = leaves.len();
    timer.lap("nms");
    debug!("{} candidates -> {} filtered -> {} leaves", counts.candidates, filtered.len(), leaves.len());

    let outcomes: Vec<std::result::Result<_, StemFailure>> = leaves
        .par_iter()
        .map(|leaf| {
            let fail = |kind| {
                let (x, y) = leaf.mask.centroid().unwrap_or_default();
                StemFailure { leaf_id: leaf.id, kind, pseudo_base: Point::new(x, y) }
            };
            let Some(att) = scene.attention.get(&leaf.id) else {
                return Err(fail(StemFailureKind::MissingAttention));
            };
            match extract_stem(leaf, att, cfg) {
                Ok(stem) => Ok(stem),
                Err(Error::StemMiss { .. }) => Err(fail(StemFailureKind::StemMiss)),
                Err(Error::DegenerateAttention { .. }) => Err(fail(StemFailureKind::DegenerateAttention)),
                Err(other) => {
                    debug!("stem extraction for leaf {} failed: {other}", leaf.id);
                    Err(fail(StemFailureKind::DegenerateAttention))
                }
            }
        })
        .collect();
    let mut stems = Vec::new();
    let mut stem_failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(s) => stems.push(s),
            Err(f) => stem_failures.push(f),
        }
    }
    counts.stems = stems.len();
    counts.stem_failures = stem_failures.len();
    timer.lap("stems");

    let base_points: BTreeMap<u64, Point> = stems.iter().map(|s| (s.leaf_id, s.base)).collect();
    let greedy = greedy_cluster(&base_points, cfg);
    counts.greedy_clusters = greedy.clusters.len();
    let mut outliers = greedy.outliers;
    outliers.extend(stem_failures.iter().map(|f| (f.leaf_id, f.pseudo_base)));
    let clusters = assign_outliers(&outliers, greedy.clusters, cfg);
    let plants = form_plants(&clusters, &leaves)?;
    counts.plants = plants.len();
    timer.lap("grouping");

    let result = SegmentationResult { image: scene.image.clone(), leaves, stems, plants, stem_failures };
    check_invariants(&result, cfg)?;
    Ok(PipelineRun { result, counts, timings: timer.timings })
}

/// Structural invariants of a segmentation result.
pub fn check_invariants(result: &SegmentationResult, cfg: &PipelineConfig) -> Result<()> {
    for (i, a) in result.leaves.iter().enumerate() {
        for b in &result.leaves[i + 1..] {
            if a.mask.iou(&b.mask)? >= cfg.nms_iou_threshold {
                return Err(Error::Internal {
                    stage: "tiling-filter",
                    message: format!("leaves {} and {} overlap at IoU ≥ {}", a.id, b.id, cfg.nms_iou_threshold),
                });
            }
        }
    }

    let grouping = |message: String| Error::Internal { stage: "plant-grouping", message };
    let mut owner = BTreeMap::new();
    for p in &result.plants {
        for &l in &p.leaf_ids {
            if owner.insert(l, p.id).is_some() {
                return Err(grouping(format!("leaf {l} assigned to more than one plant")));
            }
        }
    }
    if let Some(l) = result.leaves.iter().find(|l| !owner.contains_key(&l.id)) {
        return Err(grouping(format!("leaf {} assigned to no plant", l.id)));
    }

    let (w, h) = (result.image.width, result.image.height);
    let mut plant_cover = vec![0u8; (w * h) as usize];
    for p in &result.plants {
        for (s, e) in p.mask.intervals() {
            for c in &mut plant_cover[s as usize..e as usize] {
                if *c != 0 {
                    return Err(grouping(format!("plant {} overlaps another plant", p.id)));
                }
                *c = 1;
            }
        }
    }
    let mut leaf_cover = vec![0u8; (w * h) as usize];
    for l in &result.leaves {
        for (s, e) in l.mask.intervals() {
            leaf_cover[s as usize..e as usize].fill(1);
        }
    }
    if plant_cover != leaf_cover {
        return Err(grouping("union of plant masks differs from union of leaf masks".into()));
    }
    Ok(())
}

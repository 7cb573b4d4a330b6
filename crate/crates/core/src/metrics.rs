//! Instance-level evaluation at IoU 0.5: precision, recall, AP and PQ.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::scene::SegmentationResult;

/// Matching requires IoU strictly above this value.
pub const MATCH_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub pred: usize,
    pub gt: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Matching {
    pub matches: Vec<Match>,
    pub unmatched_pred: Vec<usize>,
    pub unmatched_gt: Vec<usize>,
}

impl Matching {
    pub fn tp(&self) -> usize {
        self.matches.len()
    }

    pub fn fp(&self) -> usize {
        self.unmatched_pred.len()
    }

    pub fn fn_(&self) -> usize {
        self.unmatched_gt.len()
    }
}

fn check_dims(masks: &[&BinaryMask]) -> Result<()> {
    if let Some(first) = masks.first() {
        if let Some(bad) = masks.iter().find(|m| !m.same_dims(first)) {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                first.width(),
                first.height(),
                bad.width(),
                bad.height()
            )));
        }
    }
    Ok(())
}

/// All-pairs matching at IoU > 0.5, which admits at most one partner per mask.
pub fn match_instances(pred: &[&BinaryMask], gt: &[&BinaryMask]) -> Result<Matching> {
    check_dims(&pred.iter().chain(gt).copied().collect::<Vec<_>>())?;
    let pred_boxes: Vec<_> = pred.iter().map(|m| m.bbox()).collect();
    let gt_boxes: Vec<_> = gt.iter().map(|m| m.bbox()).collect();
    let mut pred_hit = vec![false; pred.len()];
    let mut gt_hit = vec![false; gt.len()];
    let mut matches = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for (j, g) in gt.iter().enumerate() {
            let (Some(pb), Some(gb)) = (pred_boxes[i], gt_boxes[j]) else { continue };
            if !pb.intersects(&gb) {
                continue;
            }
            let inter = p.intersection_area(g);
            let union = p.area() + g.area() - inter;
            let iou = inter as f64 / union as f64;
            if iou > MATCH_IOU {
                matches.push(Match { pred: i, gt: j, iou });
                pred_hit[i] = true;
                gt_hit[j] = true;
            }
        }
    }
    Ok(Matching {
        matches,
        unmatched_pred: (0..pred.len()).filter(|&i| !pred_hit[i]).collect(),
        unmatched_gt: (0..gt.len()).filter(|&j| !gt_hit[j]).collect(),
    })
}

/// `(precision, recall, no_ground_truth)`.
pub fn precision_recall_50(m: &Matching) -> (f64, f64, bool) {
    let (tp, fp, fn_) = (m.tp() as f64, m.fp() as f64, m.fn_() as f64);
    let prec = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let rec = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    (prec, rec, tp + fn_ == 0.0)
}

/// `(pq, vacuous)`; vacuous when neither side has instances.
pub fn panoptic_quality(m: &Matching) -> (f64, bool) {
    let denom = m.tp() as f64 + 0.5 * m.fp() as f64 + 0.5 * m.fn_() as f64;
    if denom == 0.0 {
        return (0.0, true);
    }
    (m.matches.iter().map(|x| x.iou).sum::<f64>() / denom, false)
}

/// One scored prediction after per-image matching.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedPrediction {
    pub image: usize,
    pub score: f64,
    pub area: u64,
    pub is_tp: bool,
}

/// All-point interpolated AP over predictions pooled across images.
/// Returns `(ap, vacuous)`; vacuous when there is no ground truth.
pub fn average_precision_50(preds: &[RankedPrediction], total_gt: usize) -> (f64, bool) {
    if total_gt == 0 {
        return (0.0, true);
    }
    let mut order: Vec<&RankedPrediction> = preds.iter().collect();
    order.sort_by(|a, b| {
        b.score.total_cmp(&a.score).then(a.image.cmp(&b.image)).then(b.area.cmp(&a.area))
    });
    let mut tp = 0usize;
    let mut curve = Vec::with_capacity(order.len());
    for (k, p) in order.iter().enumerate() {
        if p.is_tp {
            tp += 1;
        }
        curve.push((tp as f64 / total_gt as f64, tp as f64 / (k + 1) as f64));
    }
    // monotone precision envelope from the right
    for k in (0..curve.len().saturating_sub(1)).rev() {
        curve[k].1 = curve[k].1.max(curve[k + 1].1);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (recall, precision) in curve {
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    (ap, false)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub prec50: f64,
    pub rec50: f64,
    pub ap50: f64,
    pub pq: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub no_ground_truth: bool,
    pub pq_vacuous: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImageReport {
    pub source_id: String,
    pub plant: LevelReport,
    pub leaf: LevelReport,
}

/// Pooled metrics. The top-level `prec50`/`rec50`/`ap50` refer to plants.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub prec50: f64,
    pub rec50: f64,
    pub ap50: f64,
    pub pq_plant: f64,
    pub pq_leaf: f64,
    pub plant: LevelReport,
    pub leaf: LevelReport,
    /// Mean of per-image AP50 for plants and leaves.
    pub mean_image_ap50_plant: f64,
    pub mean_image_ap50_leaf: f64,
    pub per_image: Vec<ImageReport>,
}

struct Scored<'a> {
    mask: &'a BinaryMask,
    /// `None` ranks by area.
    score: Option<f64>,
}

fn rank_score(s: &Scored) -> f64 {
    s.score.unwrap_or(s.mask.area() as f64)
}

struct LevelAccumulator {
    tp: usize,
    fp: usize,
    fn_: usize,
    iou_sum: f64,
    total_gt: usize,
    ranked: Vec<RankedPrediction>,
}

impl LevelAccumulator {
    fn new() -> Self {
        LevelAccumulator { tp: 0, fp: 0, fn_: 0, iou_sum: 0.0, total_gt: 0, ranked: Vec::new() }
    }

    fn add(&mut self, image: usize, pred: &[Scored], gt: &[&BinaryMask]) -> Result<LevelReport> {
        let masks: Vec<&BinaryMask> = pred.iter().map(|p| p.mask).collect();
        let m = match_instances(&masks, gt)?;
        let mut is_tp = vec![false; pred.len()];
        for x in &m.matches {
            is_tp[x.pred] = true;
        }
        let ranked: Vec<RankedPrediction> = pred
            .iter()
            .zip(&is_tp)
            .map(|(p, &is_tp)| RankedPrediction { image, score: rank_score(p), area: p.mask.area(), is_tp })
            .collect();
        self.tp += m.tp();
        self.fp += m.fp();
        self.fn_ += m.fn_();
        self.iou_sum += m.matches.iter().map(|x| x.iou).sum::<f64>();
        self.total_gt += gt.len();
        self.ranked.extend_from_slice(&ranked);

        let (prec50, rec50, no_gt) = precision_recall_50(&m);
        let (pq, vacuous) = panoptic_quality(&m);
        let (ap50, _) = average_precision_50(&ranked, gt.len());
        Ok(LevelReport { prec50, rec50, ap50, pq, tp: m.tp(), fp: m.fp(), fn_: m.fn_(), no_ground_truth: no_gt, pq_vacuous: vacuous })
    }

    fn finish(&self) -> LevelReport {
        let (tp, fp, fn_) = (self.tp as f64, self.fp as f64, self.fn_ as f64);
        let denom = tp + 0.5 * fp + 0.5 * fn_;
        let (ap50, _) = average_precision_50(&self.ranked, self.total_gt);
        LevelReport {
            prec50: if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 },
            rec50: if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 },
            ap50,
            pq: if denom > 0.0 { self.iou_sum / denom } else { 0.0 },
            tp: self.tp,
            fp: self.fp,
            fn_: self.fn_,
            no_ground_truth: self.total_gt == 0,
            pq_vacuous: denom == 0.0,
        }
    }
}

/// Evaluates `(prediction, ground truth)` pairs, one per image.
///
/// Leaves are ranked by score. Plants carry no score and are ranked by area.
pub fn evaluate(pairs: &[(&SegmentationResult, &SegmentationResult)]) -> Result<MetricsReport> {
    let mut plant = LevelAccumulator::new();
    let mut leaf = LevelAccumulator::new();
    let mut per_image = Vec::with_capacity(pairs.len());
    for (i, (pred, gt)) in pairs.iter().enumerate() {
        if pred.image.width != gt.image.width || pred.image.height != gt.image.height {
            return Err(Error::DimensionMismatch(format!(
                "prediction {}x{} vs ground truth {}x{} (image {i})",
                pred.image.width, pred.image.height, gt.image.width, gt.image.height
            )));
        }
        let pred_plants: Vec<Scored> = pred.plants.iter().map(|p| Scored { mask: &p.mask, score: None }).collect();
        let gt_plants: Vec<&BinaryMask> = gt.plants.iter().map(|p| &p.mask).collect();
        let pred_leaves: Vec<Scored> =
            pred.leaves.iter().map(|l| Scored { mask: &l.mask, score: Some(l.score) }).collect();
        let gt_leaves: Vec<&BinaryMask> = gt.leaves.iter().map(|l| &l.mask).collect();
        per_image.push(ImageReport {
            source_id: pred.image.source_id.clone(),
            plant: plant.add(i, &pred_plants, &gt_plants)?,
            leaf: leaf.add(i, &pred_leaves, &gt_leaves)?,
        });
    }
    let plant_report = plant.finish();
    let leaf_report = leaf.finish();
    let mean = |f: &dyn Fn(&ImageReport) -> f64| {
        if per_image.is_empty() {
            0.0
        } else {
            per_image.iter().map(f).sum::<f64>() / per_image.len() as f64
        }
    };
    Ok(MetricsReport {
        prec50: plant_report.prec50,
        rec50: plant_report.rec50,
        ap50: plant_report.ap50,
        pq_plant: plant_report.pq,
        pq_leaf: leaf_report.pq,
        mean_image_ap50_plant: mean(&|r| r.plant.ap50),
        mean_image_ap50_leaf: mean(&|r| r.leaf.ap50),
        plant: plant_report,
        leaf: leaf_report,
        per_image,
    })
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[u64], b: &[u64]) -> f64 {
    use std::collections::HashMap;
    assert_eq!(a.len(), b.len());
    let n = a.len();
    if n < 2 {
        return 1.0;
    }
    let choose2 = |k: usize| (k * k.saturating_sub(1)) as f64 / 2.0;
    let mut table: HashMap<(u64, u64), usize> = HashMap::new();
    let mut rows: HashMap<u64, usize> = HashMap::new();
    let mut cols: HashMap<u64, usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sum_a: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sum_b: f64 = cols.values().map(|&c| choose2(c)).sum();
    let expected = sum_a * sum_b / choose2(n);
    let max = 0.5 * (sum_a + sum_b);
    if (max - expected).abs() < 1e-12 {
        // both labelings are trivial (all-one-cluster or all-singletons)
        return if index == max { 1.0 } else { 0.0 };
    }
    (index - expected) / (max - expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 1-row masks with the given foreground columns.
    fn row(width: u32, cols: std::ops::Range<u32>) -> BinaryMask {
        let bits: Vec<bool> = (0..width).map(|x| cols.contains(&x)).collect();
        BinaryMask::from_bitmap(width, 1, &bits).unwrap()
    }

    #[test]
    fn identical_sets_match_fully() {
        let a = row(20, 0..5);
        let b = row(20, 10..15);
        let m = match_instances(&[&a, &b], &[&b, &a]).unwrap();
        assert_eq!(m.tp(), 2);
        assert!(m.matches.iter().all(|x| x.iou == 1.0));
        assert_eq!(precision_recall_50(&m), (1.0, 1.0, false));
        assert_eq!(panoptic_quality(&m), (1.0, false));
    }

    #[test]
    fn pred_straddling_two_gts_matches_neither() {
        // pred 0..10 vs gt 0..5 and 5..10 (+ shared halves): IoU 0.4 each
        let pred = row(20, 0..10);
        let g1 = row(20, 0..4);
        let g2 = row(20, 6..10);
        let m = match_instances(&[&pred], &[&g1, &g2]).unwrap();
        assert_eq!(m.tp(), 0);
    }

    /// IoU 0.6 pair (6 of 10 pixels shared), one stray pred, one missed GT.
    fn fixture() -> Matching {
        let gt = row(40, 0..8);
        let pred = row(40, 2..10); // |∩| = 6, |∪| = 10
        let stray = row(40, 20..24);
        let missed = row(40, 30..34);
        match_instances(&[&pred, &stray], &[&gt, &missed]).unwrap()
    }

    #[test]
    fn fixture_precision_recall() {
        let m = fixture();
        assert_eq!((m.tp(), m.fp(), m.fn_()), (1, 1, 1));
        assert!((m.matches[0].iou - 0.6).abs() < 1e-12);
        let (p, r, _) = precision_recall_50(&m);
        assert!((p - 0.5).abs() < 1e-12 && (r - 0.5).abs() < 1e-12);
    }

    #[test]
    fn fixture_pq() {
        let (pq, vacuous) = panoptic_quality(&fixture());
        assert!(!vacuous);
        assert!((pq - 0.3).abs() < 1e-12);
    }

    #[test]
    fn zero_predictions() {
        let g = row(5, 0..2);
        let m = match_instances(&[], &[&g]).unwrap();
        assert_eq!(precision_recall_50(&m), (0.0, 0.0, false));
        assert_eq!(panoptic_quality(&m), (0.0, false));
        let empty = match_instances(&[], &[]).unwrap();
        assert_eq!(panoptic_quality(&empty), (0.0, true));
        assert!(precision_recall_50(&empty).2);
    }

    #[test]
    fn ap_hand_sweep() {
        let p = |score, is_tp| RankedPrediction { image: 0, score, area: 1, is_tp };
        let (ap, _) = average_precision_50(&[p(0.8, false), p(0.9, true), p(0.7, true)], 2);
        assert!((ap - 5.0 / 6.0).abs() < 1e-12);
        let (perfect, _) = average_precision_50(&[p(0.9, true), p(0.1, true)], 2);
        assert_eq!(perfect, 1.0);
        assert_eq!(average_precision_50(&[], 0), (0.0, true));
    }

    #[test]
    fn ari_basics() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[5, 5, 7, 7]), 1.0);
        assert!(adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]) < 0.0);
        assert_eq!(adjusted_rand_index(&[1, 2, 3], &[4, 5, 6]), 1.0);
    }

    #[test]
    fn mismatched_dims_error() {
        let a = row(5, 0..2);
        let b = row(6, 0..2);
        assert!(matches!(match_instances(&[&a], &[&b]), Err(Error::DimensionMismatch(_))));
    }
}

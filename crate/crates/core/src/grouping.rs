//! Plant grouping: greedy DBSCAN over leaf base points, Mahalanobis-based
//! outlier assignment, and per-pixel majority voting between plants.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::types::{LeafInstance, PipelineConfig, PlantInstance, Point};

/// DBSCAN output as indices into the input slice.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DbscanOutput {
    /// Clusters in discovery order; members sorted by scan order.
    pub clusters: Vec<Vec<usize>>,
    pub noise: Vec<usize>,
}

/// Indices sorted by `(y, x, index)`.
pub fn scan_order(points: &[Point]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].cmp_yx(&points[b]).then(a.cmp(&b)));
    order
}

/// Classic DBSCAN. A core point has at least `min_pts` points (itself
/// included) within distance `eps`. Points are visited in `(y, x, index)`
/// order and each cluster is expanded breadth-first, so a border point
/// reachable from several clusters joins the one discovered first.
pub fn dbscan(points: &[Point], eps: f64, min_pts: usize) -> DbscanOutput {
    let n = points.len();
    let neighbours: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| points[i].dist(&points[j]) <= eps).collect())
        .collect();
    let is_core: Vec<bool> = neighbours.iter().map(|nb| nb.len() >= min_pts).collect();
    let order = scan_order(points);
    let mut rank = vec![0; n];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }

    let mut label: Vec<Option<usize>> = vec![None; n];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for &seed in &order {
        if label[seed].is_some() || !is_core[seed] {
            continue;
        }
        let cid = clusters.len();
        let mut members = vec![seed];
        label[seed] = Some(cid);
        let mut queue = VecDeque::from([seed]);
        while let Some(p) = queue.pop_front() {
            if !is_core[p] {
                continue;
            }
            let mut nb = neighbours[p].clone();
            nb.sort_by_key(|&q| rank[q]);
            for q in nb {
                if label[q].is_none() {
                    label[q] = Some(cid);
                    members.push(q);
                    queue.push_back(q);
                }
            }
        }
        members.sort_by_key(|&q| rank[q]);
        clusters.push(members);
    }
    let noise = order.into_iter().filter(|&i| label[i].is_none()).collect();
    DbscanOutput { clusters, noise }
}

/// A group of leaves with frozen point statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub id: usize,
    pub member_leaf_ids: BTreeSet<u64>,
    pub points: Vec<Point>,
    pub mean: Point,
    /// Sample covariance `[sxx, sxy, syy]`; zero for fewer than two points.
    pub covariance: [f64; 3],
}

impl Cluster {
    pub fn new(id: usize, members: Vec<(u64, Point)>) -> Self {
        let points: Vec<Point> = members.iter().map(|m| m.1).collect();
        let (mean, covariance) = point_stats(&points);
        Cluster { id, member_leaf_ids: members.iter().map(|m| m.0).collect(), points, mean, covariance }
    }
}

/// Mean and unbiased sample covariance.
pub fn point_stats(points: &[Point]) -> (Point, [f64; 3]) {
    let n = points.len() as f64;
    if points.is_empty() {
        return (Point::default(), [0.0; 3]);
    }
    let mean = Point::new(points.iter().map(|p| p.x).sum::<f64>() / n, points.iter().map(|p| p.y).sum::<f64>() / n);
    if points.len() < 2 {
        return (mean, [0.0; 3]);
    }
    let mut c = [0.0; 3];
    for p in points {
        let (dx, dy) = (p.x - mean.x, p.y - mean.y);
        c[0] += dx * dx;
        c[1] += dx * dy;
        c[2] += dy * dy;
    }
    c.iter_mut().for_each(|v| *v /= n - 1.0);
    (mean, c)
}

/// `sqrt((p−μ)ᵀ (Σ + λI)⁻¹ (p−μ))`.
pub fn mahalanobis(point: Point, cluster: &Cluster, ridge: f64) -> f64 {
    let a = cluster.covariance[0] + ridge;
    let b = cluster.covariance[1];
    let d = cluster.covariance[2] + ridge;
    let det = a * d - b * b;
    let (dx, dy) = (point.x - cluster.mean.x, point.y - cluster.mean.y);
    let q = (d * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det;
    q.max(0.0).sqrt()
}

/// Greedy phase output.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyClusters {
    pub clusters: Vec<Cluster>,
    /// Leaves left unclustered, in leaf-id order.
    pub outliers: Vec<(u64, Point)>,
}

/// Iterated DBSCAN that peels off the largest cluster per round, relaxing
/// `MinPts` by one per round down to a floor of 2.
///
/// Each leaf contributes exactly one base point, so removing the cluster's
/// points is the same as removing every keypoint of the leaves it touches.
pub fn greedy_cluster(base_points: &BTreeMap<u64, Point>, cfg: &PipelineConfig) -> GreedyClusters {
    let mut remaining: Vec<(u64, Point)> = base_points.iter().map(|(&id, &p)| (id, p)).collect();
    let mut clusters = Vec::new();
    let mut min_pts = cfg.init_min_pts.max(2);
    for _ in 0..cfg.max_clusters {
        let pts: Vec<Point> = remaining.iter().map(|r| r.1).collect();
        let out = dbscan(&pts, cfg.eps, min_pts);
        if out.clusters.is_empty() && min_pts == 2 {
            break;
        }
        // members are in scan order, so the first is the lowest (y, x) point
        let largest = out.clusters.iter().max_by(|a, b| {
            a.len().cmp(&b.len()).then_with(|| pts[b[0]].cmp_yx(&pts[a[0]]).then(b[0].cmp(&a[0])))
        });
        if let Some(members) = largest {
            let taken: BTreeSet<usize> = members.iter().copied().collect();
            let chosen: Vec<(u64, Point)> = members.iter().map(|&i| remaining[i]).collect();
            clusters.push(Cluster::new(clusters.len(), chosen));
            remaining = remaining.into_iter().enumerate().filter(|(i, _)| !taken.contains(i)).map(|(_, r)| r).collect();
        }
        if min_pts > 2 {
            min_pts -= 1;
        }
        if remaining.is_empty() {
            break;
        }
    }
    GreedyClusters { clusters, outliers: remaining }
}

/// Attaches each outlier to the Mahalanobis-nearest cluster when closer than
/// `mahalanobis_threshold`, otherwise opens a singleton cluster for it.
///
/// Statistics are frozen when a cluster is created; singletons opened during
/// the pass are visible to later outliers. Outliers are visited in
/// `(y, x, leaf_id)` order.
pub fn assign_outliers(outliers: &[(u64, Point)], clusters: Vec<Cluster>, cfg: &PipelineConfig) -> Vec<Cluster> {
    let mut clusters = clusters;
    let mut order: Vec<&(u64, Point)> = outliers.iter().collect();
    order.sort_by(|a, b| a.1.cmp_yx(&b.1).then(a.0.cmp(&b.0)));
    for &(leaf, p) in order {
        let nearest = clusters
            .iter()
            .enumerate()
            .map(|(i, c)| (i, mahalanobis(p, c, cfg.covariance_ridge)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        match nearest {
            Some((i, d)) if d < cfg.mahalanobis_threshold => {
                clusters[i].member_leaf_ids.insert(leaf);
                clusters[i].points.push(p);
            }
            _ => {
                let id = clusters.len();
                clusters.push(Cluster::new(id, vec![(leaf, p)]));
            }
        }
    }
    clusters
}

/// Plant masks as unions of member leaves; pixels claimed by several plants
/// go to the plant with the most covering leaves, then the plant whose centre
/// is nearest, then the lower plant id.
pub fn form_plants(clusters: &[Cluster], leaves: &[LeafInstance]) -> Result<Vec<PlantInstance>> {
    let Some(first) = leaves.first() else {
        return Ok(Vec::new());
    };
    let (w, h) = (first.mask.width(), first.mask.height());
    let mut owner: BTreeMap<u64, usize> = BTreeMap::new();
    for (ci, c) in clusters.iter().enumerate() {
        for &leaf in &c.member_leaf_ids {
            if owner.insert(leaf, ci).is_some() {
                return Err(Error::Internal {
                    stage: "plant-grouping",
                    message: format!("leaf {leaf} belongs to more than one cluster"),
                });
            }
        }
    }
    let leaf_by_id: BTreeMap<u64, &LeafInstance> = leaves.iter().map(|l| (l.id, l)).collect();
    for l in leaves {
        if !owner.contains_key(&l.id) {
            return Err(Error::Internal {
                stage: "plant-grouping",
                message: format!("leaf {} is not assigned to any cluster", l.id),
            });
        }
    }
    if let Some(id) = owner.keys().find(|id| !leaf_by_id.contains_key(id)) {
        return Err(Error::Internal { stage: "plant-grouping", message: format!("cluster references unknown leaf {id}") });
    }

    let npix = (w * h) as usize;
    let mut best_plant = vec![u32::MAX; npix];
    let mut best_votes = vec![0u32; npix];
    let centers: Vec<Point> = clusters.iter().map(|c| point_stats(&c.points).0).collect();

    for (ci, c) in clusters.iter().enumerate() {
        let members: Vec<&LeafInstance> = c.member_leaf_ids.iter().map(|id| leaf_by_id[id]).collect();
        let Some(bbox) = members.iter().filter_map(|l| l.mask.bbox()).reduce(|a, b| {
            let x = a.x.min(b.x);
            let y = a.y.min(b.y);
            crate::mask::PixelRect { x, y, w: a.right().max(b.right()) - x, h: a.bottom().max(b.bottom()) - y }
        }) else {
            continue;
        };
        let mut votes = vec![0u32; (bbox.w * bbox.h) as usize];
        for l in &members {
            for (y, s, e) in l.mask.row_spans() {
                let row = ((y - bbox.y) * bbox.w) as usize;
                for v in &mut votes[row + (s - bbox.x) as usize..row + (e - bbox.x) as usize] {
                    *v += 1;
                }
            }
        }
        for (k, &v) in votes.iter().enumerate() {
            if v == 0 {
                continue;
            }
            let (lx, ly) = (k as u32 % bbox.w, k as u32 / bbox.w);
            let (x, y) = (bbox.x + lx, bbox.y + ly);
            let idx = (y * w + x) as usize;
            let incumbent = best_plant[idx];
            let wins = if incumbent == u32::MAX || v > best_votes[idx] {
                true
            } else if v < best_votes[idx] {
                false
            } else {
                let px = Point::new(x as f64, y as f64);
                let mine = px.dist(&centers[ci]);
                let theirs = px.dist(&centers[incumbent as usize]);
                mine < theirs || (mine == theirs && ci < incumbent as usize)
            };
            if wins {
                best_plant[idx] = ci as u32;
                best_votes[idx] = v;
            }
        }
    }

    let mut spans: Vec<Vec<(u32, u32)>> = vec![Vec::new(); clusters.len()];
    let mut idx = 0usize;
    while idx < npix {
        let p = best_plant[idx];
        let start = idx;
        while idx < npix && best_plant[idx] == p {
            idx += 1;
        }
        if p != u32::MAX {
            spans[p as usize].push((start as u32, idx as u32));
        }
    }

    Ok(clusters
        .iter()
        .zip(spans)
        .enumerate()
        .map(|(ci, (c, s))| PlantInstance {
            id: ci as u64,
            leaf_ids: c.member_leaf_ids.clone(),
            mask: BinaryMask::from_intervals(w, h, s),
            center: centers[ci],
        })
        .collect())
}

//! Geometry and segmentation metrics on point samples of predicted and
//! ground-truth planes.

pub mod kdtree;
mod sampling;

pub use sampling::{face_rects, instance_rects, sample_rects, SampleRect};

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use kdtree::KdTree;

/// Label of ground-truth points with no prediction within the threshold.
pub const UNASSIGNED: u32 = u32::MAX;

/// Labeled point samples of a surface.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampledSurface {
    pub points: Vec<Vec3>,
    pub labels: Vec<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// F-score and label-transfer threshold, meters.
    pub fscore_tau: f64,
    /// Sample density, points per square meter.
    pub density: f64,
    pub top_k: usize,
    /// Distance charged to unmatched ground-truth planes, meters.
    pub unmatched_penalty: f64,
    pub seed: u64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            fscore_tau: 0.05,
            density: 400.0,
            top_k: 20,
            unmatched_penalty: 0.5,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryScores {
    /// Meters.
    pub chamfer: f64,
    pub precision: f64,
    pub recall: f64,
    /// Percent.
    pub fscore: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationScores {
    /// Nats.
    pub voi: f64,
    pub ri: f64,
    pub sc: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanarScores {
    pub fidelity: f64,
    pub accuracy: f64,
    pub chamfer: f64,
    pub evaluated: usize,
    pub matched: usize,
}

fn nearest_distances(from: &[Vec3], to: &KdTree) -> Vec<f64> {
    from.par_iter().map(|p| to.nearest(p).map_or(f64::INFINITY, |(_, d)| d)).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Symmetric Chamfer distance and F-score at threshold `tau`.
pub fn chamfer_fscore(pred: &[Vec3], gt: &[Vec3], tau: f64) -> Result<GeometryScores> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::InvalidInput("chamfer needs non-empty point sets".into()));
    }
    let to_gt = nearest_distances(pred, &KdTree::new(gt.to_vec()));
    let to_pred = nearest_distances(gt, &KdTree::new(pred.to_vec()));
    let precision = to_gt.iter().filter(|d| **d < tau).count() as f64 / pred.len() as f64;
    let recall = to_pred.iter().filter(|d| **d < tau).count() as f64 / gt.len() as f64;
    let fscore = if precision + recall > 0.0 {
        200.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(GeometryScores {
        chamfer: 0.5 * (mean(&to_gt) + mean(&to_pred)),
        precision,
        recall,
        fscore,
    })
}

/// Prediction label of every ground-truth point by nearest neighbour, or
/// [`UNASSIGNED`] beyond `tau`.
pub fn transfer_labels(pred: &SampledSurface, gt_points: &[Vec3], tau: f64) -> Vec<u32> {
    let tree = KdTree::new(pred.points.clone());
    gt_points
        .par_iter()
        .map(|p| match tree.nearest(p) {
            Some((i, d)) if d <= tau => pred.labels[i],
            _ => UNASSIGNED,
        })
        .collect()
}

fn entropy<'a>(counts: impl Iterator<Item = &'a usize>, n: f64) -> f64 {
    counts
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

fn pairs(c: usize) -> f64 {
    let c = c as f64;
    c * (c - 1.0) / 2.0
}

/// Variation of information (nats), Rand index and segmentation covering
/// of two labelings of the same points.
pub fn segmentation_metrics(pred: &[u32], gt: &[u32]) -> Result<SegmentationScores> {
    if pred.is_empty() || pred.len() != gt.len() {
        return Err(Error::InvalidInput(format!(
            "labelings must be non-empty and equal length ({} vs {})",
            pred.len(),
            gt.len()
        )));
    }
    let n = pred.len() as f64;
    let mut joint: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    let mut pc: BTreeMap<u32, usize> = BTreeMap::new();
    let mut gc: BTreeMap<u32, usize> = BTreeMap::new();
    for (&p, &g) in pred.iter().zip(gt) {
        *joint.entry((p, g)).or_default() += 1;
        *pc.entry(p).or_default() += 1;
        *gc.entry(g).or_default() += 1;
    }

    let h_p = entropy(pc.values(), n);
    let h_g = entropy(gc.values(), n);
    let mutual: f64 = joint
        .iter()
        .map(|(&(p, g), &c)| {
            let pij = c as f64 / n;
            pij * (pij * n * n / (pc[&p] as f64 * gc[&g] as f64)).ln()
        })
        .sum();
    let voi = (h_p + h_g - 2.0 * mutual).max(0.0);

    let total = pairs(pred.len());
    let same_both: f64 = joint.values().map(|&c| pairs(c)).sum();
    let same_p: f64 = pc.values().map(|&c| pairs(c)).sum();
    let same_g: f64 = gc.values().map(|&c| pairs(c)).sum();
    let ri = if total > 0.0 {
        (total + 2.0 * same_both - same_p - same_g) / total
    } else {
        1.0
    };

    let sc = gc
        .iter()
        .map(|(&g, &size_g)| {
            let best = joint
                .iter()
                .filter(|((_, jg), _)| *jg == g)
                .map(|(&(p, _), &inter)| inter as f64 / (size_g + pc[&p] - inter) as f64)
                .fold(0.0, f64::max);
            size_g as f64 / n * best
        })
        .sum();

    Ok(SegmentationScores { voi, ri, sc })
}

/// Top-k planar fidelity, accuracy and chamfer.
///
/// Ground-truth planes are ranked by `gt_area`; each is matched to the
/// prediction label covering most of its points after label transfer.
pub fn planar_metrics(
    pred: &SampledSurface,
    gt: &SampledSurface,
    gt_area: &HashMap<u32, f64>,
    cfg: &MetricsConfig,
) -> Result<PlanarScores> {
    if gt_area.is_empty() {
        return Err(Error::InvalidInput("planar metrics need at least one ground-truth plane".into()));
    }
    let mut ranked: Vec<(u32, f64)> = gt_area.iter().map(|(&l, &a)| (l, a)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(cfg.top_k);

    let transferred = transfer_labels(pred, &gt.points, cfg.fscore_tau);
    let group = |labels: &[u32], points: &[Vec3]| {
        let mut m: HashMap<u32, Vec<Vec3>> = HashMap::new();
        for (l, p) in labels.iter().zip(points) {
            m.entry(*l).or_default().push(*p);
        }
        m
    };
    let gt_groups = group(&gt.labels, &gt.points);
    let pred_groups = group(&pred.labels, &pred.points);

    let (mut fid, mut acc, mut matched) = (0.0, 0.0, 0usize);
    for (label, _) in &ranked {
        let mut overlap: BTreeMap<u32, usize> = BTreeMap::new();
        for (g, t) in gt.labels.iter().zip(&transferred) {
            if g == label && *t != UNASSIGNED {
                *overlap.entry(*t).or_default() += 1;
            }
        }
        let best = overlap.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(l, _)| *l);
        let (Some(p), Some(gpts)) = (best, gt_groups.get(label)) else {
            fid += cfg.unmatched_penalty;
            acc += cfg.unmatched_penalty;
            continue;
        };
        let ppts = &pred_groups[&p];
        fid += mean(&nearest_distances(gpts, &KdTree::new(ppts.clone())));
        acc += mean(&nearest_distances(ppts, &KdTree::new(gpts.clone())));
        matched += 1;
    }
    let k = ranked.len() as f64;
    let (fidelity, accuracy) = (fid / k, acc / k);
    Ok(PlanarScores {
        fidelity,
        accuracy,
        chamfer: 0.5 * (fidelity + accuracy),
        evaluated: ranked.len(),
        matched,
    })
}

/// Every metric of the evaluation protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub geometry: GeometryScores,
    pub segmentation: SegmentationScores,
    pub planar: PlanarScores,
    pub protocol: MetricsConfig,
}

/// Evaluate sampled predictions against sampled ground truth.
pub fn evaluate(
    pred: &SampledSurface,
    gt: &SampledSurface,
    gt_area: &HashMap<u32, f64>,
    cfg: &MetricsConfig,
) -> Result<MetricReport> {
    let geometry = chamfer_fscore(&pred.points, &gt.points, cfg.fscore_tau)?;
    let transferred = transfer_labels(pred, &gt.points, cfg.fscore_tau);
    let segmentation = segmentation_metrics(&transferred, &gt.labels)?;
    let planar = planar_metrics(pred, gt, gt_area, cfg)?;
    Ok(MetricReport {
        geometry,
        segmentation,
        planar,
        protocol: *cfg,
    })
}

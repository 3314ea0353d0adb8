//! Detection and distance-regression metrics with table output.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::scene::Category;

pub const DEFAULT_IOU_THRESHOLDS: [f64; 3] = [0.5, 0.75, 0.9];
pub const DEFAULT_DISTANCE_THRESHOLDS: [f64; 3] = [0.75, 0.5, 0.25];

/// Intersection over union; zero for disjoint or degenerate boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let (area_a, area_b) = (a.area(), b.area());
    if area_a <= 0.0 || area_b <= 0.0 {
        return 0.0;
    }
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (area_a + area_b - inter)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: u64,
    pub category: Category,
    pub bbox: BBox,
    pub score: f64,
    /// Estimated distance to the gate, if the predictor provides one.
    #[serde(default)]
    pub distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub image_id: u64,
    pub category: Category,
    pub bbox: BBox,
    #[serde(default)]
    pub distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryEval {
    pub category: Category,
    /// Number of ground-truth boxes.
    pub support: usize,
    pub detections: usize,
    /// One entry per IoU threshold.
    pub ap: Vec<f64>,
    pub ar: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou_thresholds: Vec<f64>,
    pub per_category: Vec<CategoryEval>,
    /// Mean AP over categories with at least one ground truth, per threshold.
    pub map: Vec<f64>,
}

impl EvalReport {
    pub fn category(&self, c: Category) -> Option<&CategoryEval> {
        self.per_category.iter().find(|e| e.category == c)
    }
}

/// Area under the precision envelope over the recall steps.
fn all_points_ap(precision: &[f64], recall: &[f64]) -> f64 {
    let mut envelope = precision.to_vec();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (r, p) in recall.iter().zip(&envelope) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

/// Greedy matching in descending confidence: each detection takes the unmatched
/// ground truth of its image with the highest IoU, provided it reaches
/// `threshold`. Returns the true-positive flag per detection in ranked order.
fn match_ranked(ranked: &[&Detection], gts: &BTreeMap<u64, Vec<&GroundTruth>>, threshold: f64) -> Vec<bool> {
    let mut used: BTreeMap<u64, Vec<bool>> = gts.iter().map(|(k, v)| (*k, vec![false; v.len()])).collect();
    ranked
        .iter()
        .map(|d| {
            let Some(cands) = gts.get(&d.image_id) else {
                return false;
            };
            let taken = used.get_mut(&d.image_id).expect("same keys");
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in cands.iter().enumerate() {
                if taken[j] {
                    continue;
                }
                let o = iou(&d.bbox, &g.bbox);
                if o >= threshold && best.is_none_or(|(_, bo)| o > bo) {
                    best = Some((j, o));
                }
            }
            match best {
                Some((j, _)) => {
                    taken[j] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// Average precision (all-points interpolation) and recall per category and IoU
/// threshold. Categories without ground truth report zeros and are left out of mAP.
pub fn evaluate_detections(
    dets: &[Detection],
    gts: &[GroundTruth],
    iou_thresholds: &[f64],
) -> Result<EvalReport> {
    if let Some(t) = iou_thresholds.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
        return Err(Error::Validation(format!("IoU threshold {t} is outside (0, 1]")));
    }
    if let Some(d) = dets.iter().find(|d| !(0.0..=1.0).contains(&d.score) || !d.bbox.is_valid()) {
        return Err(Error::Validation(format!(
            "invalid detection in image {} (score {}, bbox {:?})",
            d.image_id, d.score, d.bbox
        )));
    }

    let mut per_category = Vec::new();
    for category in Category::ALL {
        let mut by_image: BTreeMap<u64, Vec<&GroundTruth>> = BTreeMap::new();
        for g in gts.iter().filter(|g| g.category == category) {
            by_image.entry(g.image_id).or_default().push(g);
        }
        let support: usize = by_image.values().map(Vec::len).sum();
        let mut ranked: Vec<&Detection> = dets.iter().filter(|d| d.category == category).collect();
        // stable: equal scores keep input order
        ranked.sort_by(|a, b| b.score.total_cmp(&a.score));

        let mut ap = Vec::with_capacity(iou_thresholds.len());
        let mut ar = Vec::with_capacity(iou_thresholds.len());
        for &t in iou_thresholds {
            if support == 0 || ranked.is_empty() {
                ap.push(0.0);
                ar.push(0.0);
                continue;
            }
            let tp = match_ranked(&ranked, &by_image, t);
            let mut precision = Vec::with_capacity(tp.len());
            let mut recall = Vec::with_capacity(tp.len());
            let mut hits = 0usize;
            for (k, &is_tp) in tp.iter().enumerate() {
                hits += is_tp as usize;
                precision.push(hits as f64 / (k + 1) as f64);
                recall.push(hits as f64 / support as f64);
            }
            ap.push(all_points_ap(&precision, &recall));
            ar.push(hits as f64 / support as f64);
        }
        per_category.push(CategoryEval {
            category,
            support,
            detections: ranked.len(),
            ap,
            ar,
        });
    }

    let present: Vec<&CategoryEval> = per_category.iter().filter(|c| c.support > 0).collect();
    let map = (0..iou_thresholds.len())
        .map(|i| {
            if present.is_empty() {
                0.0
            } else {
                present.iter().map(|c| c.ap[i]).sum::<f64>() / present.len() as f64
            }
        })
        .collect();
    Ok(EvalReport {
        iou_thresholds: iou_thresholds.to_vec(),
        per_category,
        map,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub count: usize,
    /// Mean absolute error in meters.
    pub mae: f64,
    /// `(threshold, fraction of absolute errors <= threshold)`.
    pub accuracy: Vec<(f64, f64)>,
}

pub fn distance_report(pred: &[f64], truth: &[f64], thresholds: &[f64]) -> Result<DistanceReport> {
    if pred.len() != truth.len() {
        return Err(Error::Validation(format!(
            "{} predictions for {} ground-truth distances",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Validation("distance report needs at least one pair".into()));
    }
    let errors: Vec<f64> = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).collect();
    let n = errors.len() as f64;
    let mae = errors.iter().sum::<f64>() / n;
    let accuracy = thresholds
        .iter()
        .map(|&t| (t, errors.iter().filter(|&&e| e <= t).count() as f64 / n))
        .collect();
    Ok(DistanceReport {
        count: errors.len(),
        mae,
        accuracy,
    })
}

/// Pairs each ground truth of `category` carrying a distance with the
/// highest-scoring detection of the same category and image that carries one.
pub fn distance_pairs(dets: &[Detection], gts: &[GroundTruth], category: Category) -> (Vec<f64>, Vec<f64>) {
    let mut best: BTreeMap<u64, &Detection> = BTreeMap::new();
    for d in dets.iter().filter(|d| d.category == category && d.distance.is_some()) {
        let slot = best.entry(d.image_id).or_insert(d);
        if d.score > slot.score {
            *slot = d;
        }
    }
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for g in gts.iter().filter(|g| g.category == category) {
        if let (Some(t), Some(d)) = (g.distance, best.get(&g.image_id)) {
            pred.push(d.distance.expect("filtered above"));
            truth.push(t);
        }
    }
    (pred, truth)
}

/// AP/AR per IoU threshold for one class.
pub fn precision_recall_table(report: &EvalReport, category: Category) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Average precision and recall ({})", category.name());
    let _ = writeln!(s, "{:>13} | {:>5} | {:>5}", "IoU threshold", "AP", "AR");
    let _ = writeln!(s, "{:-<13}-+-{:-<5}-+-{:-<5}", "", "", "");
    if let Some(c) = report.category(category) {
        for (i, t) in report.iou_thresholds.iter().enumerate() {
            let _ = writeln!(s, "{:>13.2} | {:.3} | {:.3}", t, c.ap[i], c.ar[i]);
        }
    }
    s
}

/// AP per class and IoU threshold, followed by the mAP row.
pub fn class_table(report: &EvalReport) -> String {
    let mut s = String::new();
    let _ = write!(s, "{:<13}", "Class");
    for t in &report.iou_thresholds {
        let _ = write!(s, " | {:>7}", format!("AP_{t:.2}"));
    }
    s.push('\n');
    let _ = write!(s, "{:-<13}", "");
    for _ in &report.iou_thresholds {
        let _ = write!(s, "-+-{:-<7}", "");
    }
    s.push('\n');
    for c in &report.per_category {
        let _ = write!(s, "{:<13}", c.category.name());
        for v in &c.ap {
            let _ = write!(s, " | {v:>7.3}");
        }
        s.push('\n');
    }
    let _ = write!(s, "{:<13}", "mAP");
    for v in &report.map {
        let _ = write!(s, " | {v:>7.3}");
    }
    s.push('\n');
    s
}

/// MAE and accuracy per distance-error threshold (meters).
pub fn distance_table(report: &DistanceReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:>15} | {:>5} | {:>8}", "Error threshold", "MAE", "Accuracy");
    let _ = writeln!(s, "{:-<15}-+-{:-<5}-+-{:-<8}", "", "", "");
    for (t, acc) in &report.accuracy {
        let _ = writeln!(s, "{:>15.2} | {:.3} | {:>8.3}", t, report.mae, acc);
    }
    s
}

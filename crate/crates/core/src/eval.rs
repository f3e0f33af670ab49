//! Retrieval and localization metrics: truncated mAP, box IoU, mean IoU of
//! returned localizations, and recall of proposals across IoU thresholds.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_io::DatasetManifest;
use crate::geometry::BBox;
use crate::index::RankedResult;

pub const LOCALIZATION_IOU: f64 = 0.5;

/// Average precision of `ranking` against `relevant`.
///
/// Only hits within `cutoff` count. The denominator is
/// `min(|relevant|, cutoff)` under a cutoff and `|relevant|` otherwise.
/// Returns `Ok(None)` when `relevant` is empty.
pub fn average_precision<S: AsRef<str>>(
    ranking: &[S],
    relevant: &BTreeSet<String>,
    cutoff: Option<usize>,
) -> Result<Option<f64>> {
    if relevant.is_empty() {
        return Ok(None);
    }
    let mut seen = HashSet::with_capacity(ranking.len());
    for id in ranking {
        if !seen.insert(id.as_ref()) {
            return Err(Error::Validation(format!("duplicate id {:?} in ranking", id.as_ref())));
        }
    }
    let limit = cutoff.unwrap_or(ranking.len()).min(ranking.len());
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (pos, id) in ranking[..limit].iter().enumerate() {
        if relevant.contains(id.as_ref()) {
            hits += 1;
            sum += hits as f64 / (pos + 1) as f64;
        }
    }
    let denom = match cutoff {
        Some(c) => relevant.len().min(c),
        None => relevant.len(),
    };
    Ok(Some(if denom == 0 { 0.0 } else { sum / denom as f64 }))
}

/// Box intersection-over-union; 0 when either box has zero area.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    if a.is_degenerate() || b.is_degenerate() {
        return 0.0;
    }
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Recall of ground-truth boxes at each threshold.
///
/// Per image, all proposal/gt pairs are matched greedily one-to-one in
/// descending IoU order (ties: lower proposal index, then lower gt index).
/// A gt box counts as recalled at `t` when its match has IoU ≥ `t`. Since
/// the pairs with IoU ≥ `t` form a prefix of that order, one greedy pass
/// serves every threshold and the curve is non-increasing.
pub fn recall_at_iou(proposals: &[Vec<BBox>], gt: &[Vec<BBox>], thresholds: &[f64]) -> Result<Vec<(f64, f64)>> {
    if proposals.len() != gt.len() {
        return Err(Error::Validation(format!(
            "{} proposal lists for {} ground-truth lists",
            proposals.len(),
            gt.len()
        )));
    }
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Validation("thresholds must be ascending".into()));
    }
    let mut matched_ious = Vec::new();
    let mut total_gt = 0usize;
    for (props, gts) in proposals.iter().zip(gt) {
        total_gt += gts.len();
        let mut pairs = Vec::with_capacity(props.len() * gts.len());
        for (pi, p) in props.iter().enumerate() {
            for (gi, g) in gts.iter().enumerate() {
                pairs.push((iou(p, g), pi, gi));
            }
        }
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut p_used = vec![false; props.len()];
        let mut g_used = vec![false; gts.len()];
        for (v, pi, gi) in pairs {
            if !p_used[pi] && !g_used[gi] {
                p_used[pi] = true;
                g_used[gi] = true;
                matched_ious.push(v);
            }
        }
    }
    Ok(thresholds
        .iter()
        .map(|&t| {
            let recall = if total_gt == 0 {
                0.0
            } else {
                matched_ious.iter().filter(|&&v| v >= t).count() as f64 / total_gt as f64
            };
            (t, recall)
        })
        .collect())
}

/// Ground truth of one query.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct QueryGroundTruth {
    pub query_id: String,
    pub relevant_image_ids: BTreeSet<String>,
    pub gt_boxes: BTreeMap<String, BBox>,
}

/// Collects per-query ground truth from manifest annotations.
pub fn ground_truth_from_manifest(manifest: &DatasetManifest) -> BTreeMap<String, QueryGroundTruth> {
    let mut out: BTreeMap<String, QueryGroundTruth> = BTreeMap::new();
    for e in &manifest.entries {
        for g in e.ground_truth.iter().flatten() {
            let q = out.entry(g.query_id.clone()).or_insert_with(|| QueryGroundTruth {
                query_id: g.query_id.clone(),
                ..Default::default()
            });
            if g.relevant {
                q.relevant_image_ids.insert(e.image_id.clone());
                q.gt_boxes.insert(e.image_id.clone(), g.bbox);
            }
        }
    }
    out
}

/// Localization quality over relevant retrieved images.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LocalizationReport {
    /// Plain mean IoU over all scored pairs.
    pub miou: f64,
    /// Mean IoU over pairs with IoU ≥ 0.5.
    pub miou_above_threshold: f64,
    /// Fraction of pairs with IoU ≥ 0.5.
    pub hit_rate: f64,
    pub pairs: usize,
    pub missing_gt: usize,
    pub degenerate_boxes: usize,
}

/// IoUs between returned best boxes and ground truth for every relevant
/// image in each ranking.
pub fn localization_ious(
    results: &BTreeMap<String, RankedResult>,
    gt: &BTreeMap<String, QueryGroundTruth>,
) -> (Vec<f64>, usize, usize) {
    let mut ious = Vec::new();
    let (mut missing, mut degenerate) = (0, 0);
    for (qid, ranked) in results {
        let Some(q) = gt.get(qid) else { continue };
        for e in &ranked.entries {
            if !q.relevant_image_ids.contains(&e.image_id) {
                continue;
            }
            match q.gt_boxes.get(&e.image_id) {
                None => missing += 1,
                Some(g) => {
                    if g.is_degenerate() || e.best_bbox.is_degenerate() {
                        degenerate += 1;
                    }
                    ious.push(iou(&e.best_bbox, g));
                }
            }
        }
    }
    (ious, missing, degenerate)
}

pub fn localization_miou(
    results: &BTreeMap<String, RankedResult>,
    gt: &BTreeMap<String, QueryGroundTruth>,
) -> LocalizationReport {
    let (ious, missing_gt, degenerate_boxes) = localization_ious(results, gt);
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    let above: Vec<f64> = ious.iter().copied().filter(|&v| v >= LOCALIZATION_IOU).collect();
    LocalizationReport {
        miou: mean(&ious),
        miou_above_threshold: mean(&above),
        hit_rate: if ious.is_empty() { 0.0 } else { above.len() as f64 / ious.len() as f64 },
        pairs: ious.len(),
        missing_gt,
        degenerate_boxes,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryEval {
    pub query_id: String,
    pub relevant: usize,
    pub ap_50: f64,
    pub ap_100: f64,
    pub ap_all: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub ap_denominator: String,
    pub evaluated_queries: usize,
    pub skipped_queries: Vec<String>,
    pub map_50: f64,
    pub map_100: f64,
    pub map_all: f64,
    pub localization: LocalizationReport,
    pub recall_curve: Vec<(f64, f64)>,
    pub per_query: Vec<QueryEval>,
    pub notes: Vec<String>,
}

/// Thresholds 0.05, 0.10, ..., 0.95.
pub fn default_recall_thresholds() -> Vec<f64> {
    (1..=19).map(|k| k as f64 * 0.05).collect()
}

/// Scores every ranked query that has ground truth.
pub fn evaluate(
    results: &BTreeMap<String, RankedResult>,
    gt: &BTreeMap<String, QueryGroundTruth>,
    recall_curve: Vec<(f64, f64)>,
) -> Result<EvalReport> {
    let mut report = EvalReport {
        ap_denominator: "min(|relevant|, cutoff) under a cutoff, |relevant| otherwise".into(),
        recall_curve,
        ..Default::default()
    };
    for (qid, ranked) in results {
        let relevant = gt.get(qid).map(|q| &q.relevant_image_ids);
        let Some(relevant) = relevant.filter(|r| !r.is_empty()) else {
            report.skipped_queries.push(qid.clone());
            continue;
        };
        let ids = ranked.image_ids();
        let ap = |c| average_precision(&ids, relevant, c).map(|v| v.unwrap_or(0.0));
        report.per_query.push(QueryEval {
            query_id: qid.clone(),
            relevant: relevant.len(),
            ap_50: ap(Some(50))?,
            ap_100: ap(Some(100))?,
            ap_all: ap(None)?,
        });
    }
    let n = report.per_query.len();
    report.evaluated_queries = n;
    if n == 0 {
        report.notes.push("no queries with ground truth were evaluated; metrics are zero".into());
    } else {
        let mean = |f: fn(&QueryEval) -> f64| report.per_query.iter().map(f).sum::<f64>() / n as f64;
        report.map_50 = mean(|q| q.ap_50);
        report.map_100 = mean(|q| q.ap_100);
        report.map_all = mean(|q| q.ap_all);
    }
    report.localization = localization_miou(results, gt);
    Ok(report)
}

impl EvalReport {
    /// Aligned text table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "queries evaluated: {}  skipped: {}", self.evaluated_queries, self.skipped_queries.len());
        let _ = writeln!(s, "AP denominator: {}", self.ap_denominator);
        let _ = writeln!(s);
        let _ = writeln!(s, "{:>8} {:>8} {:>8}   {:>8} {:>10} {:>8}", "mAP-50", "mAP-100", "mAP-all", "mIoU", "mIoU>=0.5", "hit@0.5");
        let l = &self.localization;
        let _ = writeln!(
            s,
            "{:>8.3} {:>8.3} {:>8.3}   {:>8.3} {:>10.3} {:>8.3}",
            self.map_50, self.map_100, self.map_all, l.miou, l.miou_above_threshold, l.hit_rate
        );
        if !self.recall_curve.is_empty() {
            let _ = writeln!(s);
            let _ = writeln!(s, "{:>6} {:>8}", "IoU", "recall");
            for (t, r) in &self.recall_curve {
                let _ = writeln!(s, "{t:>6.2} {r:>8.3}");
            }
        }
        for n in &self.notes {
            let _ = writeln!(s, "note: {n}");
        }
        s
    }
}

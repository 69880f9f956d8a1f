//! Center-distance AP / mAP with range-binned breakdown.
//!
//! Detections are matched greedily by descending confidence to the nearest
//! unmatched ground truth within a distance threshold. For each threshold the
//! precision/recall curve is interpolated on a recall grid (precision at
//! recall `a` is the best precision reached at any recall `>= a`, or 0 if `a`
//! is never reached) and averaged; AP averages over thresholds and mAP over
//! classes with at least one ground truth.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Box3D, Detection};
use crate::range::{linf_range_xy, RangeBinning};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no ground truth: AP is undefined")]
    NoGroundTruth,
    #[error("invalid eval config: {0}")]
    InvalidConfig(&'static str),
}

/// Distance used to place objects into range columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeMetric {
    #[default]
    EuclideanXy,
    Linf,
}

impl RangeMetric {
    pub fn range_of(self, center: [f64; 3]) -> f64 {
        match self {
            RangeMetric::EuclideanXy => center[0].hypot(center[1]),
            RangeMetric::Linf => linf_range_xy(center[0], center[1]),
        }
    }
}

/// Distance used to match a detection to a ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchDistance {
    #[default]
    Center3d,
    CenterBev,
}

impl MatchDistance {
    pub fn distance(self, a: [f64; 3], b: [f64; 3]) -> f64 {
        let dx = a[0] - b[0];
        let dy = a[1] - b[1];
        match self {
            MatchDistance::Center3d => {
                let dz = a[2] - b[2];
                (dx * dx + dy * dy + dz * dz).sqrt()
            }
            MatchDistance::CenterBev => (dx * dx + dy * dy).sqrt(),
        }
    }
}

/// `{0.01, 0.02, ..., 1.00}`.
pub fn recall_grid_100() -> Vec<f64> {
    (1..=100).map(|i| i as f64 / 100.0).collect()
}

/// `{0, 0.05, ..., 1}`.
pub fn recall_grid_21() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

pub const DEFAULT_THRESHOLDS: [f64; 4] = [0.5, 1.0, 2.0, 4.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub distance_thresholds: Vec<f64>,
    pub recall_grid: Vec<f64>,
    pub eval_range: (f64, f64),
    pub range_metric: RangeMetric,
    #[serde(default)]
    pub match_distance: MatchDistance,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            distance_thresholds: DEFAULT_THRESHOLDS.to_vec(),
            recall_grid: recall_grid_100(),
            eval_range: (0.0, 250.0),
            range_metric: RangeMetric::EuclideanXy,
            match_distance: MatchDistance::Center3d,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        let t = &self.distance_thresholds;
        if t.is_empty() || t.iter().any(|d| !(*d > 0.0)) || t.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(EvalError::InvalidConfig(
                "thresholds must be positive and ascending",
            ));
        }
        let g = &self.recall_grid;
        if g.is_empty()
            || g.iter().any(|a| !(0.0..=1.0).contains(a))
            || g.windows(2).any(|w| !(w[0] < w[1]))
        {
            return Err(EvalError::InvalidConfig(
                "recall grid must be ascending within [0, 1]",
            ));
        }
        if !(self.eval_range.0 < self.eval_range.1) {
            return Err(EvalError::InvalidConfig("eval range must satisfy lo < hi"));
        }
        Ok(())
    }
}

/// Detection indices by descending confidence, ties by input order.
fn ranking(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .confidence
            .total_cmp(&dets[a].confidence)
            .then(a.cmp(&b))
    });
    order
}

fn match_ranked(
    gt: &[Box3D],
    dets: &[Detection],
    order: &[usize],
    d: f64,
    metric: MatchDistance,
) -> Vec<bool> {
    let mut taken = vec![false; gt.len()];
    let mut flags = vec![false; dets.len()];
    for &i in order {
        let c = dets[i].center();
        let mut best: Option<(f64, usize)> = None;
        for (j, g) in gt.iter().enumerate() {
            if taken[j] {
                continue;
            }
            let dist = metric.distance(c, g.center);
            if dist <= d && best.is_none_or(|(bd, _)| dist < bd) {
                best = Some((dist, j));
            }
        }
        if let Some((_, j)) = best {
            taken[j] = true;
            flags[i] = true;
        }
    }
    flags
}

/// TP/FP flag per detection, aligned with the input order of `dets`.
pub fn match_detections(gt: &[Box3D], dets: &[Detection], d: f64) -> Vec<bool> {
    match_ranked(gt, dets, &ranking(dets), d, MatchDistance::Center3d)
}

pub fn match_detections_with(
    gt: &[Box3D],
    dets: &[Detection],
    d: f64,
    metric: MatchDistance,
) -> Vec<bool> {
    match_ranked(gt, dets, &ranking(dets), d, metric)
}

/// Interpolated precision on `grid` from TP flags in ranked order.
pub fn interpolated_precision(ranked_tp: &[bool], num_gt: usize, grid: &[f64]) -> Vec<f64> {
    let mut precision = Vec::with_capacity(ranked_tp.len());
    let mut recall = Vec::with_capacity(ranked_tp.len());
    let mut tp = 0usize;
    for (k, &is_tp) in ranked_tp.iter().enumerate() {
        tp += is_tp as usize;
        precision.push(tp as f64 / (k + 1) as f64);
        recall.push(tp as f64 / num_gt as f64);
    }
    // Running max from the tail makes precision non-increasing in recall.
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    // Recall is non-decreasing; the first index reaching `a` carries the
    // best precision among all indices at recall >= a.
    grid.iter()
        .map(|&a| {
            let k = recall.partition_point(|&r| r < a);
            precision.get(k).copied().unwrap_or(0.0)
        })
        .collect()
}

/// Compensated (Neumaier) sum, so averages of many rational precision
/// values land on the nearest double.
fn accurate_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Interpolated precision on the recall grid, one row per threshold.
fn precision_table(
    gt: &[Box3D],
    dets: &[Detection],
    config: &EvalConfig,
) -> Result<Vec<Vec<f64>>, EvalError> {
    if gt.is_empty() {
        return Err(EvalError::NoGroundTruth);
    }
    let order = ranking(dets);
    Ok(config
        .distance_thresholds
        .iter()
        .map(|&d| {
            let flags = match_ranked(gt, dets, &order, d, config.match_distance);
            let ranked: Vec<bool> = order.iter().map(|&i| flags[i]).collect();
            interpolated_precision(&ranked, gt.len(), &config.recall_grid)
        })
        .collect())
}

/// Per-threshold AP values, in threshold order.
pub fn average_precision_per_threshold(
    gt: &[Box3D],
    dets: &[Detection],
    config: &EvalConfig,
) -> Result<Vec<f64>, EvalError> {
    Ok(precision_table(gt, dets, config)?
        .into_iter()
        .map(|p| accurate_sum(p.iter().copied()) / p.len() as f64)
        .collect())
}

/// Single-class AP averaged over the distance thresholds.
pub fn average_precision(
    gt: &[Box3D],
    dets: &[Detection],
    config: &EvalConfig,
) -> Result<f64, EvalError> {
    let table = precision_table(gt, dets, config)?;
    let cells = table.len() * config.recall_grid.len();
    Ok(accurate_sum(table.into_iter().flatten()) / cells as f64)
}

/// Per-class AP and their mean for one range column.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassSummary {
    pub per_class_ap: BTreeMap<u32, f64>,
    /// `None` when no class has ground truth.
    pub map: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinReport {
    pub lo: f64,
    pub hi: f64,
    pub label: String,
    pub per_class_ap: BTreeMap<u32, f64>,
    pub map: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub eval_range: (f64, f64),
    pub per_class_ap: BTreeMap<u32, f64>,
    pub map: Option<f64>,
    pub per_bin: Vec<BinReport>,
}

/// mAP over every class with at least one ground truth; detections of other
/// classes are ignored.
pub fn mean_ap(gt: &[Box3D], dets: &[Detection], config: &EvalConfig) -> ClassSummary {
    let classes: BTreeSet<u32> = gt.iter().map(|b| b.class_id).collect();
    let per_class_ap: BTreeMap<u32, f64> = classes
        .into_par_iter()
        .map(|c| {
            let g: Vec<Box3D> = gt.iter().filter(|b| b.class_id == c).copied().collect();
            let d: Vec<Detection> = dets
                .iter()
                .filter(|x| x.bbox.class_id == c)
                .copied()
                .collect();
            let ap = average_precision(&g, &d, config).expect("class has ground truth");
            (c, ap)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect();
    let map = (!per_class_ap.is_empty())
        .then(|| per_class_ap.values().sum::<f64>() / per_class_ap.len() as f64);
    ClassSummary { per_class_ap, map }
}

fn in_bin(range: f64, binning: &RangeBinning, b: usize) -> bool {
    binning.contains(range, b)
}

/// Restricts both sides to objects whose center range lies in `[lo, hi]`.
fn restrict(
    gt: &[Box3D],
    dets: &[Detection],
    metric: RangeMetric,
    keep: impl Fn(f64) -> bool,
) -> (Vec<Box3D>, Vec<Detection>) {
    (
        gt.iter()
            .filter(|b| keep(metric.range_of(b.center)))
            .copied()
            .collect(),
        dets.iter()
            .filter(|d| keep(metric.range_of(d.center())))
            .copied()
            .collect(),
    )
}

/// Overall column over `config.eval_range` plus one column per bin.
pub fn range_breakdown(
    gt: &[Box3D],
    dets: &[Detection],
    config: &EvalConfig,
    binning: &RangeBinning,
) -> EvalReport {
    let metric = config.range_metric;
    let (lo, hi) = config.eval_range;
    let (g, d) = restrict(gt, dets, metric, |r| lo <= r && r <= hi);
    let overall = mean_ap(&g, &d, config);
    let per_bin = (0..binning.num_bins())
        .into_par_iter()
        .map(|b| {
            let (g, d) = restrict(gt, dets, metric, |r| in_bin(r, binning, b));
            let s = mean_ap(&g, &d, config);
            let (blo, bhi) = binning.bounds(b);
            BinReport {
                lo: blo,
                hi: bhi,
                label: binning.label(b),
                per_class_ap: s.per_class_ap,
                map: s.map,
            }
        })
        .collect();
    EvalReport {
        eval_range: config.eval_range,
        per_class_ap: overall.per_class_ap,
        map: overall.map,
        per_bin,
    }
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}

fn fmt_range(r: f64) -> String {
    if r.fract() == 0.0 {
        format!("{}", r as i64)
    } else {
        format!("{r}")
    }
}

/// Fixed-width table: a header of range columns, one mAP row labeled
/// `method`, then one AP row per class. Unpopulated cells print `-`.
pub fn format_report_table(report: &EvalReport, method: &str) -> String {
    let mut out = String::new();
    let mut row = |label: &str, cells: Vec<String>| {
        let _ = write!(out, "{label:<12}");
        for c in cells {
            let _ = write!(out, "| {c:>7} ");
        }
        out.truncate(out.trim_end().len());
        out.push('\n');
    };
    let overall = format!(
        "{}-{}",
        fmt_range(report.eval_range.0),
        fmt_range(report.eval_range.1)
    );
    row(
        "Method",
        std::iter::once(overall)
            .chain(report.per_bin.iter().map(|b| b.label.clone()))
            .collect(),
    );
    row(
        method,
        std::iter::once(fmt_cell(report.map))
            .chain(report.per_bin.iter().map(|b| fmt_cell(b.map)))
            .collect(),
    );
    let classes: BTreeSet<u32> = report
        .per_class_ap
        .keys()
        .chain(report.per_bin.iter().flat_map(|b| b.per_class_ap.keys()))
        .copied()
        .collect();
    for c in classes {
        row(
            &format!("  AP[{c}]"),
            std::iter::once(fmt_cell(report.per_class_ap.get(&c).copied()))
                .chain(
                    report
                        .per_bin
                        .iter()
                        .map(|b| fmt_cell(b.per_class_ap.get(&c).copied())),
                )
                .collect(),
        );
    }
    out
}

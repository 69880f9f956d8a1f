//! Range computation, range thresholding, bin bookkeeping and range weights.
//!
//! Range here is the L-infinity plan distance `max(|x|, |y|)`: a threshold
//! `r` describes the axis-aligned square whose border sits `r` meters from
//! the ego vehicle along x or y. Bins are half-open `[lo, hi)` except the
//! last, which is closed at the top. Thresholding is closed `[r1, r2]` on
//! both ends, so a point exactly on a shared edge falls in both intervals.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Box3D, Point, PointCloud};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RangeError {
    #[error("invalid interval [{r1}, {r2}]: need r1 < r2")]
    InvalidInterval { r1: f64, r2: f64 },
    #[error("range {range} m outside binning span [{lo}, {hi}]")]
    OutOfRange { range: f64, lo: f64, hi: f64 },
    #[error("bin {bin} intersects the active range but holds no labels")]
    EmptyBin { bin: usize },
    #[error("expected {expected} bin counts, got {got}")]
    CountMismatch { expected: usize, got: usize },
    #[error("no bin intersects [{r1}, {r2}]")]
    NoActiveBins { r1: f64, r2: f64 },
    #[error("invalid binning: {0}")]
    InvalidBinning(&'static str),
    #[error("expert thresholds must be edges of the binning, got ({r1}, {r2})")]
    InvalidExpert { r1: f64, r2: f64 },
}

/// Default edges, 50 m apart out to 250 m.
pub const DEFAULT_EDGES: [f64; 6] = [0.0, 50.0, 100.0, 150.0, 200.0, 250.0];

/// Plan-view L-infinity distance from the ego origin; z is ignored.
pub fn linf_range(p: &Point) -> f64 {
    linf_range_xy(p.x, p.y)
}

pub fn linf_range_xy(x: f64, y: f64) -> f64 {
    x.abs().max(y.abs())
}

/// Keeps the points with `r1 <= linf_range(p) <= r2`, in input order.
pub fn threshold_cloud(cloud: &PointCloud, r1: f64, r2: f64) -> Result<PointCloud, RangeError> {
    if !(r1 < r2) {
        return Err(RangeError::InvalidInterval { r1, r2 });
    }
    Ok(cloud
        .iter()
        .filter(|p| {
            let r = linf_range(p);
            r1 <= r && r <= r2
        })
        .copied()
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct RangeBinning {
    edges: Vec<f64>,
}

impl Default for RangeBinning {
    fn default() -> Self {
        Self {
            edges: DEFAULT_EDGES.to_vec(),
        }
    }
}

impl TryFrom<Vec<f64>> for RangeBinning {
    type Error = RangeError;

    fn try_from(edges: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(edges)
    }
}

impl From<RangeBinning> for Vec<f64> {
    fn from(b: RangeBinning) -> Self {
        b.edges
    }
}

impl RangeBinning {
    pub fn new(edges: Vec<f64>) -> Result<Self, RangeError> {
        if edges.len() < 2 {
            return Err(RangeError::InvalidBinning("need at least two edges"));
        }
        if edges.iter().any(|e| !e.is_finite()) {
            return Err(RangeError::InvalidBinning("edges must be finite"));
        }
        if edges[0] < 0.0 {
            return Err(RangeError::InvalidBinning("first edge must be >= 0"));
        }
        if edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(RangeError::InvalidBinning(
                "edges must be strictly ascending",
            ));
        }
        Ok(Self { edges })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn num_bins(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn lo(&self) -> f64 {
        self.edges[0]
    }

    pub fn hi(&self) -> f64 {
        self.edges[self.edges.len() - 1]
    }

    /// `(lo, hi)` of bin `b`.
    pub fn bounds(&self, b: usize) -> (f64, f64) {
        (self.edges[b], self.edges[b + 1])
    }

    pub fn bins(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.edges.windows(2).map(|w| (w[0], w[1]))
    }

    /// Column label such as `50-100`.
    pub fn label(&self, b: usize) -> String {
        let (lo, hi) = self.bounds(b);
        format!("{}-{}", fmt_edge(lo), fmt_edge(hi))
    }

    pub fn contains(&self, range: f64, b: usize) -> bool {
        let (lo, hi) = self.bounds(b);
        lo <= range && (range < hi || (b + 1 == self.num_bins() && range == hi))
    }

    /// Bins with positive-length overlap with `[r1, r2]`.
    pub fn active_bins(&self, r1: f64, r2: f64) -> Vec<usize> {
        self.bins()
            .enumerate()
            .filter(|(_, (lo, hi))| *lo < r2 && *hi > r1)
            .map(|(b, _)| b)
            .collect()
    }
}

fn fmt_edge(e: f64) -> String {
    if e.fract() == 0.0 {
        format!("{}", e as i64)
    } else {
        format!("{e}")
    }
}

/// Index of the half-open bin containing `range`; the top edge maps to the
/// last bin.
pub fn bin_index(range: f64, binning: &RangeBinning) -> Result<usize, RangeError> {
    let edges = binning.edges();
    if !(range >= binning.lo() && range <= binning.hi()) {
        return Err(RangeError::OutOfRange {
            range,
            lo: binning.lo(),
            hi: binning.hi(),
        });
    }
    // Number of edges <= range, minus one, gives the bin.
    let k = edges.partition_point(|&e| e <= range);
    Ok((k - 1).min(binning.num_bins() - 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutOfRangePolicy {
    #[default]
    Fail,
    Skip,
}

/// Histogram of box-center L-infinity ranges over the bins.
pub fn count_labels_per_bin(
    boxes: &[Box3D],
    binning: &RangeBinning,
    policy: OutOfRangePolicy,
) -> Result<Vec<u64>, RangeError> {
    let mut counts = vec![0u64; binning.num_bins()];
    for b in boxes {
        match bin_index(linf_range_xy(b.center[0], b.center[1]), binning) {
            Ok(i) => counts[i] += 1,
            Err(e) if policy == OutOfRangePolicy::Fail => return Err(e),
            Err(_) => {}
        }
    }
    Ok(counts)
}

/// Per-bin loss weights of one range expert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeWeights {
    pub weights: Vec<f64>,
    pub active_range: (f64, f64),
}

impl RangeWeights {
    /// Weight 1 on every bin intersecting `[r1, r2]`, 0 elsewhere: the loss
    /// weighting of an expert trained without range weighing.
    pub fn uniform(binning: &RangeBinning, r1: f64, r2: f64) -> Result<Self, RangeError> {
        if !(r1 < r2) {
            return Err(RangeError::InvalidInterval { r1, r2 });
        }
        let mut weights = vec![0.0; binning.num_bins()];
        let active = binning.active_bins(r1, r2);
        if active.is_empty() {
            return Err(RangeError::NoActiveBins { r1, r2 });
        }
        for b in active {
            weights[b] = 1.0;
        }
        Ok(Self {
            weights,
            active_range: (r1, r2),
        })
    }

    pub fn weight(&self, bin: usize) -> f64 {
        self.weights[bin]
    }

    /// Weights keyed by bin edges, for JSON output.
    pub fn keyed(&self, binning: &RangeBinning) -> Vec<BinValue> {
        binning
            .bins()
            .zip(&self.weights)
            .map(|((lo, hi), &value)| BinValue { lo, hi, value })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinValue {
    pub lo: f64,
    pub hi: f64,
    pub value: f64,
}

/// `w_b = N / (n_b * B)` over the `B` bins intersecting `[r1, r2]`, with `N`
/// the label total of those bins; bins outside get weight 0.
pub fn compute_range_weights(
    counts: &[u64],
    r1: f64,
    r2: f64,
    binning: &RangeBinning,
) -> Result<RangeWeights, RangeError> {
    if !(r1 < r2) {
        return Err(RangeError::InvalidInterval { r1, r2 });
    }
    if counts.len() != binning.num_bins() {
        return Err(RangeError::CountMismatch {
            expected: binning.num_bins(),
            got: counts.len(),
        });
    }
    let active = binning.active_bins(r1, r2);
    if active.is_empty() {
        return Err(RangeError::NoActiveBins { r1, r2 });
    }
    if let Some(&bin) = active.iter().find(|&&b| counts[b] == 0) {
        return Err(RangeError::EmptyBin { bin });
    }
    let total: u64 = active.iter().map(|&b| counts[b]).sum();
    let num_active = active.len() as f64;
    let mut weights = vec![0.0; counts.len()];
    for b in active {
        weights[b] = total as f64 / (counts[b] as f64 * num_active);
    }
    Ok(RangeWeights {
        weights,
        active_range: (r1, r2),
    })
}

/// A range expert `F_{r1-r2}`, optionally trained with range weighing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpertSpec {
    pub r1: f64,
    pub r2: f64,
    pub weighted: bool,
}

impl ExpertSpec {
    pub fn new(r1: f64, r2: f64, weighted: bool) -> Self {
        Self { r1, r2, weighted }
    }

    /// The default mid-range expert, `F_{0-100}`.
    pub fn mid() -> Self {
        Self::new(0.0, 100.0, false)
    }

    /// The default long-range expert, range weighted `F_{50-250}`.
    pub fn long() -> Self {
        Self::new(50.0, 250.0, true)
    }

    /// The full-range baseline, `F_{0-250}`.
    pub fn baseline() -> Self {
        Self::new(0.0, 250.0, false)
    }

    /// Checks `r1 < r2` with both on edges of `binning`.
    pub fn validate(&self, binning: &RangeBinning) -> Result<(), RangeError> {
        if !(self.r1 < self.r2) {
            return Err(RangeError::InvalidInterval {
                r1: self.r1,
                r2: self.r2,
            });
        }
        let on_edge = |r: f64| binning.edges().contains(&r);
        if !(on_edge(self.r1) && on_edge(self.r2)) {
            return Err(RangeError::InvalidExpert {
                r1: self.r1,
                r2: self.r2,
            });
        }
        Ok(())
    }

    /// Label such as `F_0-100` or `Fw_50-250`.
    pub fn label(&self) -> String {
        let prefix = if self.weighted { "Fw" } else { "F" };
        format!("{prefix}_{}-{}", fmt_edge(self.r1), fmt_edge(self.r2))
    }

    /// Loss weights this expert trains with.
    pub fn loss_weights(
        &self,
        counts: &[u64],
        binning: &RangeBinning,
    ) -> Result<RangeWeights, RangeError> {
        if self.weighted {
            compute_range_weights(counts, self.r1, self.r2, binning)
        } else {
            RangeWeights::uniform(binning, self.r1, self.r2)
        }
    }
}

/// Renders weight rows in the `r1 r2 | per-bin weights` layout.
pub fn format_weights_table(rows: &[RangeWeights], binning: &RangeBinning) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:>5} {:>5} |", "r1", "r2");
    for b in 0..binning.num_bins() {
        let _ = write!(out, " {:>9}", binning.label(b));
    }
    out.push('\n');
    for row in rows {
        let _ = write!(
            out,
            "{:>5} {:>5} |",
            fmt_edge(row.active_range.0),
            fmt_edge(row.active_range.1)
        );
        for &w in &row.weights {
            let _ = write!(out, " {:>9}", fmt_weight(w));
        }
        out.push('\n');
    }
    out
}

/// Five significant figures; exact zero prints as `0`.
fn fmt_weight(w: f64) -> String {
    if w == 0.0 {
        return "0".to_string();
    }
    let digits = (4 - w.abs().log10().floor() as i32).max(0) as usize;
    format!("{w:.digits$}")
}

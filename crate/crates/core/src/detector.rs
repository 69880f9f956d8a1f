//! Non-learned clustering detector, range experts and late fusion.
//!
//! Points are voxelized, occupied voxels are joined into connected
//! components, and each component becomes an axis-aligned box. This stands
//! in for a learned backbone; range experts are the same detector applied to
//! a range-thresholded cloud.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{box_contains, Box3D, Detection, PointCloud};
use crate::range::{linf_range_xy, threshold_cloud, ExpertSpec, RangeError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectError {
    #[error("cluster is empty")]
    EmptyCluster,
    #[error("invalid cluster config: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Range(#[from] RangeError),
}

/// Class assigned when no class oracle is available.
pub const OBJECT_CLASS: u32 = 0;
/// Smallest box extent along any axis, meters.
pub const MIN_BOX_SIZE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    /// Face neighbors only.
    #[serde(rename = "6")]
    Six,
    /// Face, edge and corner neighbors.
    #[serde(rename = "26")]
    TwentySix,
}

impl Connectivity {
    /// Whether two distinct voxels differing by `d` are neighbors.
    pub fn adjacent(self, d: [i64; 3]) -> bool {
        let a = d.map(i64::abs);
        match self {
            Connectivity::Six => a[0] + a[1] + a[2] == 1,
            Connectivity::TwentySix => a.iter().all(|&x| x <= 1) && a != [0, 0, 0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub voxel_size: f64,
    pub min_points: usize,
    pub connectivity: Connectivity,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            voxel_size: 0.5,
            min_points: 1,
            connectivity: Connectivity::TwentySix,
        }
    }
}

/// Voxel edge for the long-range expert. Beyond 100 m the simulated surface
/// density falls to about 0.2 points per square meter, so returns from one
/// object sit roughly 2 m apart.
pub const LONG_RANGE_VOXEL: f64 = 2.0;

impl ClusterConfig {
    pub fn long_range() -> Self {
        Self {
            voxel_size: LONG_RANGE_VOXEL,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DetectError> {
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return Err(DetectError::InvalidConfig("voxel_size must be > 0"));
        }
        if self.min_points == 0 {
            return Err(DetectError::InvalidConfig("min_points must be >= 1"));
        }
        Ok(())
    }
}

pub fn voxel_key(p: [f64; 3], voxel_size: f64) -> [i64; 3] {
    p.map(|c| (c / voxel_size).floor() as i64)
}

/// Detections plus a label naming where they came from.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionSet {
    pub detections: Vec<Detection>,
    pub source: String,
}

#[derive(Serialize, Deserialize)]
struct DetectionRecord {
    center: [f64; 3],
    size: [f64; 3],
    yaw: f64,
    class_id: u32,
    confidence: f64,
    source: String,
}

impl DetectionSet {
    pub fn new(detections: Vec<Detection>, source: impl Into<String>) -> Self {
        Self {
            detections,
            source: source.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }
}

// On disk a set is a flat list of records, each carrying the set's source.
impl Serialize for DetectionSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let records: Vec<DetectionRecord> = self
            .detections
            .iter()
            .map(|d| DetectionRecord {
                center: d.bbox.center,
                size: d.bbox.size,
                yaw: d.bbox.yaw,
                class_id: d.bbox.class_id,
                confidence: d.confidence,
                source: self.source.clone(),
            })
            .collect();
        records.serialize(s)
    }
}

impl<'de> Deserialize<'de> for DetectionSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let records = Vec::<DetectionRecord>::deserialize(d)?;
        let source = match records.first() {
            None => String::new(),
            Some(first) if records.iter().all(|r| r.source == first.source) => first.source.clone(),
            Some(_) => "mixed".to_string(),
        };
        let detections = records
            .into_iter()
            .map(|r| Detection {
                bbox: Box3D {
                    center: r.center,
                    size: r.size,
                    yaw: r.yaw,
                    class_id: r.class_id,
                },
                confidence: r.confidence,
            })
            .collect();
        Ok(Self { detections, source })
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        // Lower root wins so roots stay deterministic.
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi] = lo;
    }
}

/// Connected components of occupied voxels, as ascending point-index lists.
///
/// Components with fewer than `min_points` points are dropped. Clusters are
/// ordered by their smallest point index.
pub fn cluster_points(cloud: &PointCloud, config: &ClusterConfig) -> Vec<Vec<usize>> {
    let mut voxel_ids: HashMap<[i64; 3], usize> = HashMap::new();
    let mut voxels: Vec<[i64; 3]> = Vec::new();
    let point_voxel: Vec<usize> = cloud
        .iter()
        .map(|p| {
            let key = voxel_key(p.xyz(), config.voxel_size);
            *voxel_ids.entry(key).or_insert_with(|| {
                voxels.push(key);
                voxels.len() - 1
            })
        })
        .collect();

    let mut parent: Vec<usize> = (0..voxels.len()).collect();
    for (a, key) in voxels.iter().enumerate() {
        for dx in -1..=1i64 {
            for dy in -1..=1i64 {
                for dz in -1..=1i64 {
                    let d = [dx, dy, dz];
                    if !config.connectivity.adjacent(d) {
                        continue;
                    }
                    let nb = [key[0] + dx, key[1] + dy, key[2] + dz];
                    if let Some(&b) = voxel_ids.get(&nb) {
                        union(&mut parent, a, b);
                    }
                }
            }
        }
    }

    // Voxel ids follow first occurrence, so iterating points in order emits
    // clusters sorted by smallest member.
    let mut slot_of_root: HashMap<usize, usize> = HashMap::new();
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for (i, &v) in point_voxel.iter().enumerate() {
        let root = find(&mut parent, v);
        let slot = *slot_of_root.entry(root).or_insert_with(|| {
            clusters.push(Vec::new());
            clusters.len() - 1
        });
        clusters[slot].push(i);
    }
    clusters.retain(|c| c.len() >= config.min_points);
    clusters
}

/// `n / (n + 10)` for a cluster of `n` points.
pub fn cluster_confidence(n: usize) -> f64 {
    n as f64 / (n as f64 + 10.0)
}

/// Axis-aligned box around the cluster, extents floored at [`MIN_BOX_SIZE`].
pub fn fit_box(cloud: &PointCloud, cluster: &[usize]) -> Result<Detection, DetectError> {
    fit_box_with_class(cloud, cluster, OBJECT_CLASS)
}

pub fn fit_box_with_class(
    cloud: &PointCloud,
    cluster: &[usize],
    class_id: u32,
) -> Result<Detection, DetectError> {
    if cluster.is_empty() {
        return Err(DetectError::EmptyCluster);
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in cluster {
        let p = cloud.points[i].xyz();
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let center = [0, 1, 2].map(|k| (lo[k] + hi[k]) / 2.0);
    let size = [0, 1, 2].map(|k| (hi[k] - lo[k]).max(MIN_BOX_SIZE));
    Ok(Detection {
        bbox: Box3D {
            center,
            size,
            yaw: 0.0,
            class_id,
        },
        confidence: cluster_confidence(cluster.len()),
    })
}

/// Labels clusters with a class.
pub trait ClassOracle: Sync {
    fn classify(&self, cloud: &PointCloud, cluster: &[usize]) -> u32;
}

/// Labels a cluster with the class of the ground-truth box holding most of
/// its points (boxes inflated by `margin`); clusters touching no box take
/// the class of the box whose center is nearest the cluster centroid.
pub struct BoxClassOracle<'a> {
    pub boxes: &'a [Box3D],
    pub margin: f64,
}

impl<'a> BoxClassOracle<'a> {
    pub fn new(boxes: &'a [Box3D]) -> Self {
        Self { boxes, margin: 0.5 }
    }
}

impl ClassOracle for BoxClassOracle<'_> {
    fn classify(&self, cloud: &PointCloud, cluster: &[usize]) -> u32 {
        if self.boxes.is_empty() || cluster.is_empty() {
            return OBJECT_CLASS;
        }
        let grown: Vec<Box3D> = self.boxes.iter().map(|b| b.inflated(self.margin)).collect();
        let mut votes = vec![0usize; grown.len()];
        for &i in cluster {
            if let Some(j) = grown.iter().position(|b| box_contains(b, &cloud.points[i])) {
                votes[j] += 1;
            }
        }
        // max_by_key keeps the last maximum; scan for the first instead.
        let (mut best, mut best_votes) = (0usize, 0usize);
        for (j, &v) in votes.iter().enumerate() {
            if v > best_votes {
                best = j;
                best_votes = v;
            }
        }
        if best_votes > 0 {
            return self.boxes[best].class_id;
        }
        let n = cluster.len() as f64;
        let mut c = [0.0; 3];
        for &i in cluster {
            let p = cloud.points[i].xyz();
            for k in 0..3 {
                c[k] += p[k] / n;
            }
        }
        let dist2 = |b: &Box3D| (0..3).map(|k| (b.center[k] - c[k]).powi(2)).sum::<f64>();
        let mut nearest = 0;
        for j in 1..self.boxes.len() {
            if dist2(&self.boxes[j]) < dist2(&self.boxes[nearest]) {
                nearest = j;
            }
        }
        self.boxes[nearest].class_id
    }
}

/// One detection per retained cluster, in cluster order.
pub fn detect(cloud: &PointCloud, config: &ClusterConfig) -> DetectionSet {
    detect_labeled(cloud, config, None, "detect")
}

pub fn detect_labeled(
    cloud: &PointCloud,
    config: &ClusterConfig,
    oracle: Option<&dyn ClassOracle>,
    source: &str,
) -> DetectionSet {
    let detections = cluster_points(cloud, config)
        .iter()
        .map(|c| {
            let class_id = oracle.map_or(OBJECT_CLASS, |o| o.classify(cloud, c));
            fit_box_with_class(cloud, c, class_id).expect("clusters are nonempty")
        })
        .collect();
    DetectionSet::new(detections, source)
}

/// Runs the detector on the cloud thresholded to the expert's interval.
pub fn run_expert(
    cloud: &PointCloud,
    spec: &ExpertSpec,
    config: &ClusterConfig,
) -> Result<DetectionSet, DetectError> {
    run_expert_labeled(cloud, spec, config, None)
}

pub fn run_expert_labeled(
    cloud: &PointCloud,
    spec: &ExpertSpec,
    config: &ClusterConfig,
    oracle: Option<&dyn ClassOracle>,
) -> Result<DetectionSet, DetectError> {
    config.validate()?;
    let sub = threshold_cloud(cloud, spec.r1, spec.r2)?;
    Ok(detect_labeled(&sub, config, oracle, &spec.label()))
}

/// Default mid/long split, meters.
pub const DEFAULT_BOUNDARY: f64 = 100.0;

fn center_linf(d: &Detection) -> f64 {
    linf_range_xy(d.bbox.center[0], d.bbox.center[1])
}

/// Mid-expert detections with center range below `boundary`, then
/// long-expert detections at or beyond it.
pub fn late_fuse(mid: &DetectionSet, long: &DetectionSet, boundary: f64) -> DetectionSet {
    let detections = mid
        .detections
        .iter()
        .filter(|d| center_linf(d) < boundary)
        .chain(
            long.detections
                .iter()
                .filter(|d| center_linf(d) >= boundary),
        )
        .copied()
        .collect();
    DetectionSet::new(detections, "fused")
}

/// Greedy suppression by descending confidence: a detection is dropped when
/// an already kept detection of the same class has its center within
/// `center_dist`. Survivors keep their input order.
pub fn dedupe_boundary(set: &DetectionSet, center_dist: f64) -> DetectionSet {
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by(|&a, &b| {
        set.detections[b]
            .confidence
            .total_cmp(&set.detections[a].confidence)
            .then(a.cmp(&b))
    });
    let limit = center_dist * center_dist;
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let d = &set.detections[i];
        let clash = kept.iter().any(|&k| {
            let o = &set.detections[k];
            o.bbox.class_id == d.bbox.class_id
                && (0..3)
                    .map(|a| (o.bbox.center[a] - d.bbox.center[a]).powi(2))
                    .sum::<f64>()
                    <= limit
        });
        if !clash {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    DetectionSet::new(
        kept.into_iter().map(|i| set.detections[i]).collect(),
        set.source.clone(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Point;

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        pts.iter().map(|p| Point::new(p[0], p[1], p[2])).collect()
    }

    fn det_at(x: f64, conf: f64) -> Detection {
        Detection::new(Box3D::new([x, 0.0, 0.0], [1.0; 3], 0.0, 0), conf)
    }

    #[test]
    fn single_voxel_cluster() {
        let pts: Vec<[f64; 3]> = (0..10).map(|i| [0.1 + 0.03 * i as f64, 0.2, 0.3]).collect();
        let clusters = cluster_points(&cloud(&pts), &ClusterConfig::default());
        assert_eq!(clusters, vec![(0..10).collect::<Vec<_>>()]);
    }

    #[test]
    fn separated_groups_and_ordering() {
        let c = cloud(&[
            [10.0, 0.0, 0.0],
            [0.0, 0.0, 0.0],
            [10.2, 0.1, 0.0],
            [0.3, 0.0, 0.0],
        ]);
        let clusters = cluster_points(&c, &ClusterConfig::default());
        assert_eq!(clusters, vec![vec![0, 2], vec![1, 3]]);
    }

    #[test]
    fn connectivity_matters_for_diagonals() {
        let c = cloud(&[[0.25, 0.25, 0.25], [0.75, 0.75, 0.25]]);
        let mut cfg = ClusterConfig::default();
        assert_eq!(cluster_points(&c, &cfg).len(), 1);
        cfg.connectivity = Connectivity::Six;
        assert_eq!(cluster_points(&c, &cfg).len(), 2);
    }

    #[test]
    fn min_points_drops_singletons() {
        let c = cloud(&[[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [20.0, 0.0, 0.0]]);
        let mut cfg = ClusterConfig::default();
        assert_eq!(cluster_points(&c, &cfg).len(), 2);
        cfg.min_points = 2;
        assert_eq!(cluster_points(&c, &cfg), vec![vec![0, 1]]);
    }

    #[test]
    fn box_fitting() {
        let c = cloud(&[[5.0, 5.0, 1.0]]);
        let d = fit_box(&c, &[0]).unwrap();
        assert_eq!(d.bbox.center, [5.0, 5.0, 1.0]);
        assert_eq!(d.bbox.size, [0.1, 0.1, 0.1]);
        assert_eq!(d.confidence, 1.0 / 11.0);

        let mut corners = Vec::new();
        for i in 0..8 {
            corners.push([
                (i & 1) as f64 * 2.0,
                ((i >> 1) & 1) as f64 * 2.0,
                ((i >> 2) & 1) as f64 * 2.0,
            ]);
        }
        let c = cloud(&corners);
        let d = fit_box(&c, &(0..8).collect::<Vec<_>>()).unwrap();
        assert_eq!(d.bbox.size, [2.0; 3]);
        assert_eq!(d.bbox.center, [1.0; 3]);
        assert_eq!(fit_box(&c, &[]), Err(DetectError::EmptyCluster));
    }

    #[test]
    fn confidence_grows_with_points() {
        assert!((cluster_confidence(1) - 0.090909).abs() < 1e-6);
        assert_eq!(cluster_confidence(90), 0.9);
        for n in 1..200 {
            assert!(cluster_confidence(n + 1) > cluster_confidence(n));
        }
    }

    #[test]
    fn detect_empty_and_blob() {
        let cfg = ClusterConfig::default();
        assert!(detect(&PointCloud::default(), &cfg).is_empty());
        let blob: Vec<[f64; 3]> = (0..30)
            .map(|i| {
                [
                    40.0 + 0.05 * (i % 5) as f64,
                    3.0 + 0.05 * (i / 5) as f64,
                    0.5,
                ]
            })
            .collect();
        let set = detect(&cloud(&blob), &cfg);
        assert_eq!(set.len(), 1);
        let b = set.detections[0].bbox;
        assert!(blob
            .iter()
            .all(|p| box_contains(&b, &Point::new(p[0], p[1], p[2]))));
    }

    #[test]
    fn experts_threshold_first() {
        let c = cloud(&[[30.0, 0.0, 0.0], [30.2, 0.0, 0.0]]);
        let cfg = ClusterConfig::default();
        assert!(run_expert(&c, &ExpertSpec::new(100.0, 250.0, false), &cfg)
            .unwrap()
            .is_empty());
        let base = run_expert(&c, &ExpertSpec::baseline(), &cfg).unwrap();
        assert_eq!(base.detections, detect(&c, &cfg).detections);
        assert_eq!(base.source, "F_0-250");
        assert!(run_expert(&c, &ExpertSpec::new(50.0, 50.0, false), &cfg).is_err());
    }

    #[test]
    fn fusion_rule() {
        let mid = DetectionSet::new(vec![det_at(50.0, 0.9), det_at(150.0, 0.8)], "mid");
        let long = DetectionSet::new(vec![det_at(150.0, 0.7)], "long");
        let fused = late_fuse(&mid, &long, DEFAULT_BOUNDARY);
        assert_eq!(
            fused.detections,
            vec![det_at(50.0, 0.9), det_at(150.0, 0.7)]
        );

        let only_mid = late_fuse(&mid, &DetectionSet::default(), 100.0);
        assert_eq!(only_mid.detections, vec![det_at(50.0, 0.9)]);

        let at_edge_mid = DetectionSet::new(vec![det_at(100.0, 0.9)], "mid");
        let at_edge_long = DetectionSet::new(vec![det_at(100.0, 0.5)], "long");
        let fused = late_fuse(&at_edge_mid, &at_edge_long, 100.0);
        assert_eq!(fused.detections, vec![det_at(100.0, 0.5)]);
    }

    #[test]
    fn dedupe_cases() {
        let dup = DetectionSet::new(vec![det_at(100.0, 0.8), det_at(100.0, 0.9)], "fused");
        assert_eq!(
            dedupe_boundary(&dup, 2.0).detections,
            vec![det_at(100.0, 0.9)]
        );
        let apart = DetectionSet::new(vec![det_at(100.0, 0.8), det_at(110.0, 0.9)], "fused");
        assert_eq!(dedupe_boundary(&apart, 2.0).len(), 2);
        let mut other_class = det_at(100.0, 0.5);
        other_class.bbox.class_id = 1;
        let mixed = DetectionSet::new(vec![det_at(100.0, 0.8), other_class], "fused");
        assert_eq!(dedupe_boundary(&mixed, 2.0).len(), 2);
    }

    #[test]
    fn detection_set_json() {
        let set = DetectionSet::new(vec![det_at(3.0, 0.25)], "Fw_50-250");
        let json = serde_json::to_value(&set).unwrap();
        assert_eq!(
            json,
            serde_json::json!([{
                "center": [3.0, 0.0, 0.0],
                "size": [1.0, 1.0, 1.0],
                "yaw": 0.0,
                "class_id": 0,
                "confidence": 0.25,
                "source": "Fw_50-250"
            }])
        );
        let back: DetectionSet = serde_json::from_value(json).unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn class_oracle_votes() {
        let boxes = [
            Box3D::new([10.0, 0.0, 0.0], [4.0, 2.0, 2.0], 0.0, 7),
            Box3D::new([30.0, 0.0, 0.0], [1.0, 1.0, 2.0], 0.0, 3),
        ];
        let c = cloud(&[[10.5, 0.2, 0.0], [28.8, 0.0, 0.0], [12.6, 0.0, 0.0]]);
        let oracle = BoxClassOracle::new(&boxes);
        assert_eq!(oracle.classify(&c, &[0, 2]), 7);
        // Outside every inflated box: nearest center wins.
        assert_eq!(oracle.classify(&c, &[1]), 3);
    }
}

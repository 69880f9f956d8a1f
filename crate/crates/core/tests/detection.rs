mod oracles;

use proptest::prelude::*;
use rangefusion_core::detector::{
    cluster_confidence, cluster_points, dedupe_boundary, detect, fit_box, late_fuse, run_expert,
    ClusterConfig, Connectivity, DetectionSet, MIN_BOX_SIZE,
};
use rangefusion_core::geom::{Box3D, Detection, Point, PointCloud};
use rangefusion_core::range::{linf_range_xy, ExpertSpec};

fn cloud_from(raw: &[(f64, f64, f64)]) -> PointCloud {
    raw.iter().map(|&(x, y, z)| Point::new(x, y, z)).collect()
}

fn det_at(x: f64, y: f64, conf: f64, class_id: u32) -> Detection {
    Detection::new(Box3D::new([x, y, 0.5], [1.0; 3], 0.0, class_id), conf)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn clusters_equal_pairwise_oracle(raw in prop::collection::vec((-4.0..4.0f64, -4.0..4.0f64, -1.0..1.0f64), 0..300),
                                      voxel in 0.2..1.0f64, six in any::<bool>(), min_points in 1usize..4) {
        let cloud = cloud_from(&raw);
        let config = ClusterConfig {
            voxel_size: voxel,
            min_points,
            connectivity: if six { Connectivity::Six } else { Connectivity::TwentySix },
        };
        let got = cluster_points(&cloud, &config);
        let expected = oracles::pairwise_clusters(&cloud, voxel, six, min_points);
        prop_assert_eq!(got, expected);
    }

    #[test]
    fn fused_centers_partition_at_boundary(mid in prop::collection::vec((-250.0..250.0f64, -250.0..250.0f64), 0..30),
                                           long in prop::collection::vec((-250.0..250.0f64, -250.0..250.0f64), 0..30),
                                           boundary in 10.0..200.0f64) {
        let mk = |v: &[(f64, f64)], src: &str| DetectionSet::new(v.iter().map(|&(x, y)| det_at(x, y, 0.5, 0)).collect(), src);
        let (m, l) = (mk(&mid, "mid"), mk(&long, "long"));
        let fused = late_fuse(&m, &l, boundary);
        let expect_mid: Vec<_> = m.detections.iter().filter(|d| linf_range_xy(d.bbox.center[0], d.bbox.center[1]) < boundary).copied().collect();
        let expect_long: Vec<_> = l.detections.iter().filter(|d| linf_range_xy(d.bbox.center[0], d.bbox.center[1]) >= boundary).copied().collect();
        prop_assert_eq!(fused.len(), expect_mid.len() + expect_long.len());
        prop_assert_eq!(&fused.detections[..expect_mid.len()], &expect_mid[..]);
        prop_assert_eq!(&fused.detections[expect_mid.len()..], &expect_long[..]);
    }

    #[test]
    fn boxes_enclose_their_clusters(raw in prop::collection::vec((-20.0..20.0f64, -20.0..20.0f64, 0.0..2.0f64), 1..120)) {
        let cloud = cloud_from(&raw);
        let config = ClusterConfig::default();
        let clusters = cluster_points(&cloud, &config);
        let set = detect(&cloud, &config);
        prop_assert_eq!(set.len(), clusters.len());
        for (c, d) in clusters.iter().zip(&set.detections) {
            prop_assert_eq!(d.confidence, cluster_confidence(c.len()));
            prop_assert_eq!(d.bbox.yaw, 0.0);
            for k in 0..3 {
                prop_assert!(d.bbox.size[k] >= MIN_BOX_SIZE);
            }
            for &i in c {
                let p = cloud.points[i].xyz();
                for (k, v) in p.iter().enumerate() {
                    prop_assert!((v - d.bbox.center[k]).abs() <= d.bbox.size[k] / 2.0 + 1e-9);
                }
            }
        }
    }
}

#[test]
fn tight_group_is_one_cluster_far_groups_are_two() {
    let one: PointCloud = (0..10)
        .map(|i| Point::new(0.1 + i as f64 * 0.01, 0.2, 0.3))
        .collect();
    let c = cluster_points(&one, &ClusterConfig::default());
    assert_eq!(c, vec![(0..10).collect::<Vec<_>>()]);

    let mut two = one.clone();
    two.points
        .extend((0..5).map(|i| Point::new(10.1 + i as f64 * 0.01, 0.2, 0.3)));
    assert_eq!(cluster_points(&two, &ClusterConfig::default()).len(), 2);
}

#[test]
fn min_points_two_drops_singletons() {
    let cloud = cloud_from(&[(0.0, 0.0, 0.0), (50.0, 0.0, 0.0), (50.1, 0.0, 0.0)]);
    let one = cluster_points(&cloud, &ClusterConfig::default());
    assert_eq!(one.len(), 2);
    let two = cluster_points(
        &cloud,
        &ClusterConfig {
            min_points: 2,
            ..ClusterConfig::default()
        },
    );
    assert_eq!(two, vec![vec![1, 2]]);
}

#[test]
fn single_point_box_has_floor_size() {
    let cloud = cloud_from(&[(3.0, 4.0, 5.0)]);
    let d = fit_box(&cloud, &[0]).unwrap();
    assert_eq!(d.bbox.center, [3.0, 4.0, 5.0]);
    assert_eq!(d.bbox.size, [MIN_BOX_SIZE; 3]);
    assert!(fit_box(&cloud, &[]).is_err());
}

#[test]
fn experts_see_only_their_interval() {
    let cloud = cloud_from(&[(10.0, 0.0, 0.5), (120.0, 0.0, 0.5), (-180.0, 30.0, 0.5)]);
    let cfg = ClusterConfig::default();
    let mid = run_expert(&cloud, &ExpertSpec::mid(), &cfg).unwrap();
    let long = run_expert(&cloud, &ExpertSpec::long(), &cfg).unwrap();
    assert_eq!(mid.len(), 1);
    assert_eq!(long.len(), 2);
    assert_eq!(mid.source, "F_0-100");
    assert_eq!(long.source, "Fw_50-250");
}

#[test]
fn fusion_boundary_examples() {
    let mid = DetectionSet::new(
        vec![det_at(80.0, 0.0, 0.9, 0), det_at(150.0, 0.0, 0.9, 0)],
        "mid",
    );
    let long = DetectionSet::new(
        vec![det_at(90.0, 0.0, 0.8, 0), det_at(150.0, 0.0, 0.8, 0)],
        "long",
    );
    let f = late_fuse(&mid, &long, 100.0);
    let xs: Vec<f64> = f.detections.iter().map(|d| d.bbox.center[0]).collect();
    assert_eq!(xs, vec![80.0, 150.0]);
    assert_eq!(f.detections[1].confidence, 0.8);

    let at = DetectionSet::new(vec![det_at(100.0, 0.0, 0.9, 0)], "x");
    assert_eq!(late_fuse(&at, &DetectionSet::default(), 100.0).len(), 0);
    assert_eq!(late_fuse(&DetectionSet::default(), &at, 100.0).len(), 1);
}

#[test]
fn dedupe_keeps_most_confident() {
    let set = DetectionSet::new(
        vec![
            det_at(99.5, 0.0, 0.4, 0),
            det_at(100.2, 0.0, 0.9, 0),
            det_at(100.0, 0.0, 0.7, 1),
        ],
        "fused",
    );
    let out = dedupe_boundary(&set, 1.0);
    let conf: Vec<f64> = out.detections.iter().map(|d| d.confidence).collect();
    assert_eq!(conf, vec![0.9, 0.7]);
}

#[test]
fn detection_set_json_round_trip() {
    let set = DetectionSet::new(
        vec![det_at(1.0, 2.0, 0.5, 3), det_at(-4.0, 0.25, 1.0 / 3.0, 0)],
        "F_0-100",
    );
    let json = serde_json::to_string(&set).unwrap();
    let back: DetectionSet = serde_json::from_str(&json).unwrap();
    assert_eq!(back, set);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    let rec = &v[0];
    for key in ["center", "size", "yaw", "class_id", "confidence", "source"] {
        assert!(rec.get(key).is_some(), "missing {key}");
    }
}

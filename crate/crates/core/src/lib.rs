//! Long-range LiDAR 3D detection toolkit.
//!
//! Range-specialized experts trained on thresholded clouds, inverse-frequency
//! range weights, virtual points from instance masks, a clustering detector
//! and range-binned AP evaluation, plus a deterministic scene simulator.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod detector;
pub mod eval;
pub mod geom;
pub mod io;
pub mod loss;
pub mod mvp;
pub mod range;
pub mod sim;

pub use detector::{
    late_fuse, run_expert, BoxClassOracle, ClassOracle, ClusterConfig, Connectivity, DetectError,
    DetectionSet,
};
pub use eval::{
    average_precision, mean_ap, range_breakdown, EvalConfig, EvalError, EvalReport, MatchDistance,
    RangeMetric,
};
pub use geom::{
    project, transform_point, unproject, Box3D, CameraModel, Detection, GeomError, Point,
    PointCloud, Pose, Projection, Provenance,
};
pub use io::IoError;
pub use loss::{focal_loss, l1_loss, range_weighted_loss, LossError, LossParams};
pub use mvp::{generate_virtual_points, InstanceMask, MvpConfig, MvpError};
pub use range::{
    compute_range_weights, linf_range, threshold_cloud, ExpertSpec, RangeBinning, RangeError,
    RangeWeights,
};
pub use sim::{generate_scene, Scene, SceneConfig, SimError};

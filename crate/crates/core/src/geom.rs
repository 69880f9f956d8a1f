//! Shared domain types and pinhole camera geometry.
//!
//! Frames: the ego frame has x forward, y left, z up. Camera frames have z
//! forward (optical axis), x right and y down.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Points at or below this camera depth cannot be projected.
pub const EPS_DEPTH: f64 = 1e-6;

const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("point is behind the camera (camera depth {depth})")]
    BehindCamera { depth: f64 },
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("rotation is not orthonormal with determinant +1")]
    InvalidRotation,
    #[error("invalid point: {0}")]
    InvalidPoint(&'static str),
    #[error("invalid box: {0}")]
    InvalidBox(&'static str),
    #[error("invalid camera: {0}")]
    InvalidCamera(&'static str),
}

/// Where a point came from: the sensor, or depth completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    #[default]
    Real,
    Virtual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
    #[serde(default)]
    pub provenance: Provenance,
}

impl Point {
    /// A real point with zero intensity.
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self {
            x,
            y,
            z,
            intensity: 0.0,
            provenance: Provenance::Real,
        }
    }

    pub fn with_intensity(mut self, intensity: f64) -> Self {
        self.intensity = intensity;
        self
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn xyz(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        if !(self.x.is_finite() && self.y.is_finite() && self.z.is_finite()) {
            return Err(GeomError::InvalidPoint("non-finite coordinate"));
        }
        if !(0.0..=1.0).contains(&self.intensity) {
            return Err(GeomError::InvalidPoint("intensity outside [0, 1]"));
        }
        Ok(())
    }

    pub fn is_virtual(&self) -> bool {
        self.provenance == Provenance::Virtual
    }
}

/// Ordered point set. Filtering operations keep the input order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point> {
        self.points.iter()
    }

    /// Number of (real, virtual) points.
    pub fn provenance_counts(&self) -> (usize, usize) {
        let virt = self.points.iter().filter(|p| p.is_virtual()).count();
        (self.points.len() - virt, virt)
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        self.points.iter().try_for_each(Point::validate)
    }
}

impl FromIterator<Point> for PointCloud {
    fn from_iter<I: IntoIterator<Item = Point>>(iter: I) -> Self {
        Self {
            points: iter.into_iter().collect(),
        }
    }
}

/// Wraps an angle into [-pi, pi).
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w >= PI {
        -PI
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    /// Center in the ego frame, meters.
    pub center: [f64; 3],
    /// (length, width, height), meters. Length runs along the heading.
    pub size: [f64; 3],
    /// Heading about +z, radians in [-pi, pi).
    pub yaw: f64,
    pub class_id: u32,
}

impl Box3D {
    pub fn new(center: [f64; 3], size: [f64; 3], yaw: f64, class_id: u32) -> Self {
        Self {
            center,
            size,
            yaw: wrap_angle(yaw),
            class_id,
        }
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        if self.size.iter().any(|s| !(*s > 0.0)) {
            return Err(GeomError::InvalidBox("size components must be > 0"));
        }
        if !(-std::f64::consts::PI..std::f64::consts::PI).contains(&self.yaw) {
            return Err(GeomError::InvalidBox("yaw outside [-pi, pi)"));
        }
        if self.center.iter().any(|c| !c.is_finite()) {
            return Err(GeomError::InvalidBox("non-finite center"));
        }
        Ok(())
    }

    /// Expresses an ego-frame position in the box frame (origin at center,
    /// x along the heading).
    pub fn to_local(&self, p: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        [c * dx + s * dy, -s * dx + c * dy, p[2] - self.center[2]]
    }

    /// Maps a box-frame position back into the ego frame.
    pub fn to_ego(&self, q: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        [
            self.center[0] + c * q[0] - s * q[1],
            self.center[1] + s * q[0] + c * q[1],
            self.center[2] + q[2],
        ]
    }

    /// The 8 corners in the ego frame.
    pub fn corners(&self) -> [[f64; 3]; 8] {
        let h = [self.size[0] / 2.0, self.size[1] / 2.0, self.size[2] / 2.0];
        let mut out = [[0.0; 3]; 8];
        for (i, corner) in out.iter_mut().enumerate() {
            let sx = if i & 1 == 0 { -1.0 } else { 1.0 };
            let sy = if i & 2 == 0 { -1.0 } else { 1.0 };
            let sz = if i & 4 == 0 { -1.0 } else { 1.0 };
            *corner = self.to_ego([sx * h[0], sy * h[1], sz * h[2]]);
        }
        out
    }

    /// Same box grown by `margin` on every face.
    pub fn inflated(&self, margin: f64) -> Self {
        Self {
            size: self.size.map(|s| s + 2.0 * margin),
            ..*self
        }
    }
}

/// Boundary-inclusive containment test in the box's yaw-rotated frame.
pub fn box_contains(b: &Box3D, p: &Point) -> bool {
    let q = b.to_local(p.xyz());
    q.iter()
        .zip(b.size.iter())
        .all(|(coord, size)| coord.abs() <= size / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(flatten)]
    pub bbox: Box3D,
    pub confidence: f64,
}

impl Detection {
    pub fn new(bbox: Box3D, confidence: f64) -> Self {
        Self { bbox, confidence }
    }

    pub fn center(&self) -> [f64; 3] {
        self.bbox.center
    }
}

/// Rigid transform `p -> rotation * p + translation`. Rotation is row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn new(rotation: [[f64; 3]; 3], translation: [f64; 3]) -> Result<Self, GeomError> {
        let pose = Self {
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn from_translation(translation: [f64; 3]) -> Self {
        Self {
            translation,
            ..Self::identity()
        }
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                if (dot - expected).abs() > ORTHONORMAL_TOL {
                    return Err(GeomError::InvalidRotation);
                }
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if (det - 1.0).abs() > ORTHONORMAL_TOL || self.translation.iter().any(|t| !t.is_finite()) {
            return Err(GeomError::InvalidRotation);
        }
        Ok(())
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + t[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + t[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + t[2],
        ]
    }

    /// `rotation^T * (p - translation)`.
    pub fn apply_inverse(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let d = [
            p[0] - self.translation[0],
            p[1] - self.translation[1],
            p[2] - self.translation[2],
        ];
        [
            r[0][0] * d[0] + r[1][0] * d[1] + r[2][0] * d[2],
            r[0][1] * d[0] + r[1][1] * d[1] + r[2][1] * d[2],
            r[0][2] * d[0] + r[1][2] * d[1] + r[2][2] * d[2],
        ]
    }

    pub fn inverse(&self) -> Self {
        let r = &self.rotation;
        let rt = [
            [r[0][0], r[1][0], r[2][0]],
            [r[0][1], r[1][1], r[2][1]],
            [r[0][2], r[1][2], r[2][2]],
        ];
        let t = self.translation;
        let neg_rt_t = [
            -(rt[0][0] * t[0] + rt[0][1] * t[1] + rt[0][2] * t[2]),
            -(rt[1][0] * t[0] + rt[1][1] * t[1] + rt[1][2] * t[2]),
            -(rt[2][0] * t[0] + rt[2][1] * t[1] + rt[2][2] * t[2]),
        ];
        Self {
            rotation: rt,
            translation: neg_rt_t,
        }
    }
}

/// Applies `pose` to the point's position; intensity and provenance carry over.
pub fn transform_point(pose: &Pose, p: &Point) -> Point {
    let [x, y, z] = pose.apply(p.xyz());
    Point { x, y, z, ..*p }
}

/// Pinhole camera without distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub ego_to_cam: Pose,
}

/// Pixel coordinates plus camera depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl CameraModel {
    pub fn validate(&self) -> Result<(), GeomError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeomError::InvalidCamera("focal lengths must be > 0"));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(GeomError::InvalidCamera("cx outside [0, width)"));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(GeomError::InvalidCamera("cy outside [0, height)"));
        }
        self.ego_to_cam.validate()
    }

    /// Camera mounted at `position` (ego frame), optical axis horizontal and
    /// pointing at heading `yaw`, image y pointing down.
    pub fn looking_along(
        yaw: f64,
        position: [f64; 3],
        focal: f64,
        width: u32,
        height: u32,
    ) -> Self {
        let (s, c) = yaw.sin_cos();
        // Rows are the camera axes expressed in the ego frame.
        let rotation = [[s, -c, 0.0], [0.0, 0.0, -1.0], [c, s, 0.0]];
        let mut pose = Pose {
            rotation,
            translation: [0.0; 3],
        };
        let rc = pose.apply(position);
        pose.translation = [-rc[0], -rc[1], -rc[2]];
        Self {
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            ego_to_cam: pose,
        }
    }

    /// Camera-frame depth of an ego-frame position.
    pub fn depth_of(&self, p: [f64; 3]) -> f64 {
        self.ego_to_cam.apply(p)[2]
    }

    pub fn project_xyz(&self, p_ego: [f64; 3]) -> Result<Projection, GeomError> {
        let pc = self.ego_to_cam.apply(p_ego);
        self.project_cam(pc)
    }

    /// Projects a point already expressed in the camera frame.
    pub fn project_cam(&self, pc: [f64; 3]) -> Result<Projection, GeomError> {
        if !(pc[2] > EPS_DEPTH) {
            return Err(GeomError::BehindCamera { depth: pc[2] });
        }
        Ok(Projection {
            u: self.fx * (pc[0] / pc[2]) + self.cx,
            v: self.fy * (pc[1] / pc[2]) + self.cy,
            depth: pc[2],
        })
    }

    pub fn in_image(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && u < self.width as f64 && v >= 0.0 && v < self.height as f64
    }
}

/// Projects an ego-frame point. Pixel coordinates outside the image are
/// returned as-is; callers clip.
pub fn project(camera: &CameraModel, p_ego: &Point) -> Result<Projection, GeomError> {
    camera.project_xyz(p_ego.xyz())
}

/// Lifts pixel `(u, v)` at camera depth `depth` back to an ego-frame point,
/// flagged virtual with zero intensity.
pub fn unproject(camera: &CameraModel, u: f64, v: f64, depth: f64) -> Result<Point, GeomError> {
    if !(depth > 0.0) {
        return Err(GeomError::NonPositiveDepth(depth));
    }
    let pc = [
        (u - camera.cx) / camera.fx * depth,
        (v - camera.cy) / camera.fy * depth,
        depth,
    ];
    let [x, y, z] = camera.ego_to_cam.apply_inverse(pc);
    Ok(Point {
        x,
        y,
        z,
        intensity: 0.0,
        provenance: Provenance::Virtual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn test_camera() -> CameraModel {
        CameraModel {
            fx: 100.0,
            fy: 100.0,
            cx: 50.0,
            cy: 50.0,
            width: 100,
            height: 100,
            ego_to_cam: Pose::identity(),
        }
    }

    #[test]
    fn identity_and_translation() {
        let p = Point::new(1.0, 2.0, 3.0);
        assert_eq!(
            transform_point(&Pose::identity(), &p).xyz(),
            [1.0, 2.0, 3.0]
        );
        let t = Pose::from_translation([0.0, 0.0, 5.0]);
        let q = transform_point(&t, &Point::new(0.0, 0.0, 0.0).with_intensity(0.3));
        assert_eq!(q.xyz(), [0.0, 0.0, 5.0]);
        assert_eq!(q.intensity, 0.3);
    }

    #[test]
    fn project_axis_and_offset() {
        let cam = test_camera();
        let pr = project(&cam, &Point::new(0.0, 0.0, 5.0)).unwrap();
        assert_eq!((pr.u, pr.v, pr.depth), (50.0, 50.0, 5.0));
        let pr = project(&cam, &Point::new(1.0, 0.0, 5.0)).unwrap();
        assert_eq!((pr.u, pr.v, pr.depth), (70.0, 50.0, 5.0));
        assert!(matches!(
            project(&cam, &Point::new(0.0, 0.0, -1.0)),
            Err(GeomError::BehindCamera { .. })
        ));
        assert!(project(&cam, &Point::new(0.0, 0.0, EPS_DEPTH)).is_err());
    }

    #[test]
    fn unproject_axis() {
        let cam = test_camera();
        let p = unproject(&cam, 50.0, 50.0, 5.0).unwrap();
        assert_eq!(p.xyz(), [0.0, 0.0, 5.0]);
        assert_eq!(p.provenance, Provenance::Virtual);
        assert_eq!(
            unproject(&cam, 1.0, 1.0, 0.0),
            Err(GeomError::NonPositiveDepth(0.0))
        );
    }

    #[test]
    fn containment_boundaries() {
        let cube = Box3D::new([0.0; 3], [1.0; 3], 0.0, 0);
        assert!(box_contains(&cube, &Point::new(0.0, 0.0, 0.0)));
        assert!(box_contains(&cube, &Point::new(0.5, 0.0, 0.0)));
        assert!(!box_contains(&cube, &Point::new(0.5001, 0.0, 0.0)));

        // Rotated by 90 degrees, the 2 m length runs along ego y.
        let b = Box3D::new([0.0; 3], [2.0, 1.0, 1.0], FRAC_PI_2, 0);
        assert!(box_contains(&b, &Point::new(0.4, 0.9, 0.0)));
        assert!(!box_contains(&b, &Point::new(0.9, 0.4, 0.0)));
    }

    #[test]
    fn looking_along_pose_is_valid() {
        for k in 0..8 {
            let cam =
                CameraModel::looking_along(k as f64 * 0.7, [0.3, -0.2, 1.6], 700.0, 1600, 900);
            cam.validate().unwrap();
        }
        // Camera facing +x sees an ego point ahead on its optical axis.
        let cam = CameraModel::looking_along(0.0, [0.0, 0.0, 1.6], 700.0, 1600, 900);
        let pr = cam.project_xyz([10.0, 0.0, 1.6]).unwrap();
        assert!((pr.u - 800.0).abs() < 1e-9 && (pr.v - 450.0).abs() < 1e-9);
        assert!((pr.depth - 10.0).abs() < 1e-12);
        // Point to the left (+y) lands left of center, point above lands higher.
        assert!(cam.project_xyz([10.0, 1.0, 1.6]).unwrap().u < 800.0);
        assert!(cam.project_xyz([10.0, 0.0, 2.6]).unwrap().v < 450.0);
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(std::f64::consts::PI), -std::f64::consts::PI);
        assert!((wrap_angle(3.0 * std::f64::consts::PI / 2.0) + FRAC_PI_2).abs() < 1e-12);
        assert_eq!(wrap_angle(0.25), 0.25);
    }

    #[test]
    fn validation_rejects_bad_values() {
        assert!(Point::new(f64::NAN, 0.0, 0.0).validate().is_err());
        assert!(Point::new(0.0, 0.0, 0.0)
            .with_intensity(1.5)
            .validate()
            .is_err());
        assert!(Box3D::new([0.0; 3], [1.0, 0.0, 1.0], 0.0, 0)
            .validate()
            .is_err());
        let mut cam = test_camera();
        cam.cx = 100.0;
        assert!(cam.validate().is_err());
        let skew = Pose {
            rotation: [[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        };
        assert_eq!(skew.validate(), Err(GeomError::InvalidRotation));
    }
}

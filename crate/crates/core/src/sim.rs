//! Deterministic synthetic scenes with range-dependent LiDAR sparsity.
//!
//! Objects are placed on squares around the ego vehicle with L-infinity
//! range drawn from a configurable law. Each object receives a Poisson
//! number of surface points with mean `density_k * A / r^2`, where `A` is
//! the area of its ego-facing vertical faces plus its top face and `r` is
//! its plan distance. Instance masks are the rasterized convex hulls of the
//! projected boxes; inter-object occlusion is not modeled.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Box3D, CameraModel, Point, PointCloud};
use crate::io::{self, IoError};
use crate::mvp::{InstanceMask, PixelRun};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("could not place object {index} without overlap after {retries} attempts")]
    PlacementFailure { index: usize, retries: usize },
    #[error("invalid scene config: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Distribution of object-center L-infinity range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RangeLaw {
    LogUniform { r_min: f64, r_max: f64 },
    Uniform { r_min: f64, r_max: f64 },
}

impl Default for RangeLaw {
    fn default() -> Self {
        RangeLaw::LogUniform {
            r_min: 5.0,
            r_max: 240.0,
        }
    }
}

impl RangeLaw {
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            RangeLaw::LogUniform { r_min, r_max } | RangeLaw::Uniform { r_min, r_max } => {
                (r_min, r_max)
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        match *self {
            RangeLaw::LogUniform { r_min, r_max } => (r_min.ln() + u * (r_max / r_min).ln()).exp(),
            RangeLaw::Uniform { r_min, r_max } => r_min + u * (r_max - r_min),
        }
    }
}

/// Size prior for one object class. Each dimension is scaled by an
/// independent factor in `[1 - jitter, 1 + jitter]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPrior {
    pub class_id: u32,
    pub name: String,
    /// (length, width, height), meters.
    pub size: [f64; 3],
    /// Relative sampling frequency.
    pub weight: f64,
    pub jitter: f64,
}

pub fn default_classes() -> Vec<ClassPrior> {
    let prior = |class_id, name: &str, size, weight| ClassPrior {
        class_id,
        name: name.to_string(),
        size,
        weight,
        jitter: 0.1,
    };
    vec![
        prior(0, "vehicle", [4.6, 1.9, 1.6], 0.6),
        prior(1, "pedestrian", [0.8, 0.8, 1.75], 0.25),
        prior(2, "bicyclist", [1.8, 0.8, 1.7], 0.15),
    ]
}

/// Four horizontal cameras at 1.6 m facing forward, left, back and right.
pub fn default_camera_rig() -> Vec<CameraModel> {
    (0..4)
        .map(|k| {
            CameraModel::looking_along(
                k as f64 * std::f64::consts::FRAC_PI_2,
                [0.0, 0.0, 1.6],
                700.0,
                1600,
                900,
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub seed: u64,
    pub n_objects: usize,
    pub range_law: RangeLaw,
    pub classes: Vec<ClassPrior>,
    /// Points per square meter at 1 m; falls off as `1 / r^2`.
    pub density_k: f64,
    /// Lower bound on the sampled point count of every object.
    pub min_pts_floor: usize,
    pub cameras: Vec<CameraModel>,
    /// Uniform ground points at `z = 0`; 0 disables ground.
    #[serde(default)]
    pub ground_points: usize,
    /// Clearance between object footprints, meters.
    #[serde(default = "default_clearance")]
    pub clearance: f64,
    #[serde(default = "default_retries")]
    pub max_retries: usize,
}

fn default_clearance() -> f64 {
    2.0
}

fn default_retries() -> usize {
    1000
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_objects: 40,
            range_law: RangeLaw::default(),
            classes: default_classes(),
            density_k: 2000.0,
            min_pts_floor: 0,
            cameras: default_camera_rig(),
            ground_points: 0,
            clearance: default_clearance(),
            max_retries: default_retries(),
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let (r_min, r_max) = self.range_law.bounds();
        if !(r_min > 0.0 && r_min <= r_max && r_max.is_finite()) {
            return Err(SimError::InvalidConfig(
                "range law needs 0 < r_min <= r_max",
            ));
        }
        if !(self.density_k > 0.0 && self.density_k.is_finite()) {
            return Err(SimError::InvalidConfig("density_k must be > 0"));
        }
        if self.n_objects > 0 && self.classes.is_empty() {
            return Err(SimError::InvalidConfig("no classes to draw objects from"));
        }
        if self.classes.iter().any(|c| {
            !(c.weight > 0.0)
                || c.size.iter().any(|s| !(*s > 0.0))
                || !(0.0..1.0).contains(&c.jitter)
        }) {
            return Err(SimError::InvalidConfig(
                "class priors need positive weight and size, jitter in [0, 1)",
            ));
        }
        if self.cameras.iter().any(|c| c.validate().is_err()) {
            return Err(SimError::InvalidConfig("invalid camera"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scene {
    pub gt: Vec<Box3D>,
    pub cloud: PointCloud,
    pub masks: Vec<InstanceMask>,
    pub cameras: Vec<CameraModel>,
}

/// Plan distance from the ego origin.
pub fn plan_distance(center: [f64; 3]) -> f64 {
    center[0].hypot(center[1])
}

/// One sampleable rectangle of a box surface: box-frame center plus the two
/// half-extent axes, and its area.
#[derive(Debug, Clone, Copy)]
struct Face {
    center: [f64; 3],
    axis_a: [f64; 3],
    axis_b: [f64; 3],
    area: f64,
}

/// Vertical faces whose outward normal points toward the ego origin, plus
/// the top face.
fn visible_faces(b: &Box3D) -> Vec<Face> {
    let [l, w, h] = b.size;
    let (hl, hw, hh) = (l / 2.0, w / 2.0, h / 2.0);
    // Ego origin in the box frame.
    let o = b.to_local([0.0, 0.0, 0.0]);
    let mut faces = Vec::with_capacity(3);
    for sign in [1.0, -1.0] {
        // Faces normal to the box x axis (front/back), area w * h.
        if sign * (o[0] - sign * hl) > 0.0 {
            faces.push(Face {
                center: [sign * hl, 0.0, 0.0],
                axis_a: [0.0, hw, 0.0],
                axis_b: [0.0, 0.0, hh],
                area: w * h,
            });
        }
    }
    for sign in [1.0, -1.0] {
        // Faces normal to the box y axis (sides), area l * h.
        if sign * (o[1] - sign * hw) > 0.0 {
            faces.push(Face {
                center: [0.0, sign * hw, 0.0],
                axis_a: [hl, 0.0, 0.0],
                axis_b: [0.0, 0.0, hh],
                area: l * h,
            });
        }
    }
    faces.push(Face {
        center: [0.0, 0.0, hh],
        axis_a: [hl, 0.0, 0.0],
        axis_b: [0.0, hw, 0.0],
        area: l * w,
    });
    faces
}

/// Area of the surface the sensor samples.
pub fn visible_area(b: &Box3D) -> f64 {
    visible_faces(b).iter().map(|f| f.area).sum()
}

/// Mean point count `density_k * A / range^2`.
pub fn expected_point_count(b: &Box3D, range: f64, density_k: f64) -> f64 {
    density_k * visible_area(b) / (range * range)
}

/// Poisson-many points spread uniformly over the visible faces.
pub fn sample_surface_points<R: Rng + ?Sized>(
    b: &Box3D,
    range: f64,
    density_k: f64,
    rng: &mut R,
) -> PointCloud {
    sample_surface_points_floored(b, range, density_k, 0, rng)
}

fn sample_surface_points_floored<R: Rng + ?Sized>(
    b: &Box3D,
    range: f64,
    density_k: f64,
    floor: usize,
    rng: &mut R,
) -> PointCloud {
    let faces = visible_faces(b);
    let total: f64 = faces.iter().map(|f| f.area).sum();
    let lambda = density_k * total / (range * range);
    let drawn = if lambda > 0.0 && lambda.is_finite() {
        Poisson::new(lambda)
            .map(|d| d.sample(rng) as usize)
            .unwrap_or(0)
    } else {
        0
    };
    let n = drawn.max(floor);
    (0..n)
        .map(|_| {
            let mut pick = rng.random::<f64>() * total;
            let mut face = faces[faces.len() - 1];
            for f in &faces {
                if pick < f.area {
                    face = *f;
                    break;
                }
                pick -= f.area;
            }
            let s = rng.random_range(-1.0..=1.0);
            let t = rng.random_range(-1.0..=1.0);
            let local = [0, 1, 2].map(|k| face.center[k] + s * face.axis_a[k] + t * face.axis_b[k]);
            let [x, y, z] = b.to_ego(local);
            Point::new(x, y, z).with_intensity(rng.random::<f64>())
        })
        .collect()
}

/// Near-plane distance used when clipping boxes for mask rendering.
const NEAR_PLANE: f64 = 0.01;

/// Convex hull, counter-clockwise (in image u/v axes), no collinear points.
pub fn convex_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * pts.len());
    let push = |hull: &mut Vec<(f64, f64)>, p: (f64, f64), floor: usize| {
        while hull.len() >= floor + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
        {
            hull.pop();
        }
        hull.push(p);
    };
    for &p in &pts {
        push(&mut hull, p, 0);
    }
    let lower = hull.len() - 1;
    for &p in pts.iter().rev().skip(1) {
        push(&mut hull, p, lower);
    }
    hull.pop();
    hull
}

/// Box outline in the image: corners in front of the near plane plus the
/// near-plane crossings of edges that straddle it. `None` when the box is
/// entirely behind the camera.
pub fn projected_hull(camera: &CameraModel, b: &Box3D) -> Option<Vec<(f64, f64)>> {
    let corners = b.corners().map(|c| camera.ego_to_cam.apply(c));
    let mut pts: Vec<[f64; 3]> = corners
        .iter()
        .filter(|c| c[2] >= NEAR_PLANE)
        .copied()
        .collect();
    if pts.is_empty() {
        return None;
    }
    // Corners differ in exactly one index bit along each of the 12 edges.
    for i in 0..8usize {
        for bit in [1usize, 2, 4] {
            let j = i | bit;
            if j == i {
                continue;
            }
            let (a, c) = (corners[i], corners[j]);
            if (a[2] < NEAR_PLANE) != (c[2] < NEAR_PLANE) {
                let t = (NEAR_PLANE - a[2]) / (c[2] - a[2]);
                pts.push([0, 1, 2].map(|k| a[k] + t * (c[k] - a[k])));
            }
        }
    }
    let uv: Vec<(f64, f64)> = pts
        .iter()
        .filter_map(|p| camera.project_cam(*p).ok())
        .map(|pr| (pr.u, pr.v))
        .collect();
    Some(convex_hull(&uv))
}

/// Pixels whose centers fall inside the convex polygon (boundary inclusive),
/// clipped to the image, as row runs.
pub fn rasterize_convex(hull: &[(f64, f64)], width: u32, height: u32) -> Vec<PixelRun> {
    if hull.len() < 3 {
        return Vec::new();
    }
    let vmin = hull.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let vmax = hull.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let row_lo = (vmin - 0.5).ceil().max(0.0);
    let row_hi = (vmax - 0.5).floor().min(height as f64 - 1.0);
    if row_lo > row_hi {
        return Vec::new();
    }
    let mut runs = Vec::new();
    for row in row_lo as u32..=row_hi as u32 {
        let y = row as f64 + 0.5;
        let mut xmin = f64::INFINITY;
        let mut xmax = f64::NEG_INFINITY;
        for k in 0..hull.len() {
            let (a, b) = (hull[k], hull[(k + 1) % hull.len()]);
            if y < a.1.min(b.1) || y > a.1.max(b.1) {
                continue;
            }
            if a.1 == b.1 {
                xmin = xmin.min(a.0.min(b.0));
                xmax = xmax.max(a.0.max(b.0));
            } else {
                let x = a.0 + (y - a.1) / (b.1 - a.1) * (b.0 - a.0);
                xmin = xmin.min(x);
                xmax = xmax.max(x);
            }
        }
        if xmin > xmax {
            continue;
        }
        let u_lo = (xmin - 0.5).ceil().max(0.0);
        let u_hi = (xmax - 0.5).floor().min(width as f64 - 1.0);
        if u_lo <= u_hi {
            runs.push(PixelRun {
                v: row,
                u0: u_lo as u32,
                len: (u_hi - u_lo) as u32 + 1,
            });
        }
    }
    runs
}

/// Instance mask of `b` in camera `camera_id`, or `None` if the box is
/// behind the camera or its outline misses the image.
pub fn render_mask(camera: &CameraModel, camera_id: usize, b: &Box3D) -> Option<InstanceMask> {
    let hull = projected_hull(camera, b)?;
    let runs = rasterize_convex(&hull, camera.width, camera.height);
    InstanceMask::from_runs(camera_id, b.class_id, runs).ok()
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Point on the square of L-infinity radius `r`, uniform along its perimeter.
fn point_on_square<R: Rng + ?Sized>(r: f64, rng: &mut R) -> (f64, f64) {
    let t = rng.random::<f64>() * 8.0 * r;
    let side = (t / (2.0 * r)).floor().min(3.0);
    let s = t - side * 2.0 * r - r;
    match side as u8 {
        0 => (r, s),
        1 => (-s, r),
        2 => (-r, -s),
        _ => (s, -r),
    }
}

fn footprint_radius(b: &Box3D) -> f64 {
    b.size[0].hypot(b.size[1]) / 2.0
}

fn place_objects(config: &SceneConfig) -> Result<Vec<Box3D>, SimError> {
    let mut rng = stream_rng(config.seed, 0);
    let total_weight: f64 = config.classes.iter().map(|c| c.weight).sum();
    let mut placed: Vec<Box3D> = Vec::with_capacity(config.n_objects);
    for index in 0..config.n_objects {
        let mut ok = None;
        for _ in 0..config.max_retries.max(1) {
            let mut pick = rng.random::<f64>() * total_weight;
            let mut prior = &config.classes[config.classes.len() - 1];
            for c in &config.classes {
                if pick < c.weight {
                    prior = c;
                    break;
                }
                pick -= c.weight;
            }
            let size = prior
                .size
                .map(|s| s * (1.0 + prior.jitter * rng.random_range(-1.0..=1.0)));
            let r = config.range_law.sample(&mut rng);
            let (x, y) = point_on_square(r, &mut rng);
            let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let candidate = Box3D::new([x, y, size[2] / 2.0], size, yaw, prior.class_id);
            let clear = placed.iter().all(|o| {
                let d = (o.center[0] - x).hypot(o.center[1] - y);
                d > footprint_radius(o) + footprint_radius(&candidate) + config.clearance
            });
            if clear {
                ok = Some(candidate);
                break;
            }
        }
        match ok {
            Some(b) => placed.push(b),
            None => {
                return Err(SimError::PlacementFailure {
                    index,
                    retries: config.max_retries,
                })
            }
        }
    }
    Ok(placed)
}

/// Builds a scene. Output is a pure function of `config`: objects are placed
/// from one RNG stream and each object's points come from its own stream,
/// so parallel sampling does not change the result.
pub fn generate_scene(config: &SceneConfig) -> Result<Scene, SimError> {
    config.validate()?;
    let gt = place_objects(config)?;

    let per_object: Vec<PointCloud> = gt
        .par_iter()
        .enumerate()
        .map(|(i, b)| {
            let mut rng = stream_rng(config.seed, i as u64 + 1);
            let range = plan_distance(b.center);
            sample_surface_points_floored(
                b,
                range,
                config.density_k,
                config.min_pts_floor,
                &mut rng,
            )
        })
        .collect();
    let mut cloud: PointCloud = per_object.into_iter().flat_map(|c| c.points).collect();

    if config.ground_points > 0 {
        let mut rng = stream_rng(config.seed, u64::MAX);
        let r = config.range_law.bounds().1;
        cloud.points.extend((0..config.ground_points).map(|_| {
            let x = rng.random_range(-r..=r);
            let y = rng.random_range(-r..=r);
            Point::new(x, y, 0.0).with_intensity(rng.random::<f64>())
        }));
    }
    io::quantize_cloud(&mut cloud);

    let masks = gt
        .par_iter()
        .map(|b| {
            config
                .cameras
                .iter()
                .enumerate()
                .filter_map(|(cam_id, cam)| render_mask(cam, cam_id, b))
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();

    Ok(Scene {
        gt,
        cloud,
        masks,
        cameras: config.cameras.clone(),
    })
}

pub const CLOUD_FILE: &str = "cloud.bin";
pub const GT_FILE: &str = "gt.json";
pub const MASKS_FILE: &str = "masks.json";
pub const CAMERAS_FILE: &str = "cameras.json";

/// Writes `cloud.bin`, `gt.json`, `masks.json` and `cameras.json` into `dir`.
pub fn write_scene_dir(dir: &Path, scene: &Scene) -> Result<(), SimError> {
    std::fs::create_dir_all(dir).map_err(|source| IoError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    io::write_cloud(&dir.join(CLOUD_FILE), &scene.cloud)?;
    io::write_json(&dir.join(GT_FILE), &scene.gt)?;
    io::write_json(&dir.join(MASKS_FILE), &scene.masks)?;
    io::write_json(&dir.join(CAMERAS_FILE), &scene.cameras)?;
    Ok(())
}

pub fn read_scene_dir(dir: &Path) -> Result<Scene, SimError> {
    Ok(Scene {
        cloud: io::read_cloud(&dir.join(CLOUD_FILE))?,
        gt: io::read_json(&dir.join(GT_FILE))?,
        masks: io::read_json(&dir.join(MASKS_FILE))?,
        cameras: io::read_json(&dir.join(CAMERAS_FILE))?,
    })
}

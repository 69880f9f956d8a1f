//! Multimodal virtual points: depth completion from instance masks.
//!
//! For each mask, LiDAR points are projected into the mask's camera and only
//! those landing on mask pixels are kept. `s` mask pixels are drawn without
//! replacement, each takes the depth of the nearest kept projection in pixel
//! space, and is lifted back to 3D at that depth.
//!
//! Pixel `(u, v)` covers the square `[u, u+1) x [v, v+1)`. A projection
//! belongs to the pixel containing it; a sampled pixel is represented by
//! its center `(u + 0.5, v + 0.5)`.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{self, CameraModel, Point, PointCloud};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MvpError {
    #[error("no LiDAR projection available to assign depth")]
    NoLidarInView,
    #[error("mask references camera {0}, which does not exist")]
    UnknownCamera(usize),
    #[error("invalid mask: {0}")]
    InvalidMask(&'static str),
    #[error("sample count must be >= 1")]
    InvalidSampleCount,
}

/// A horizontal run of mask pixels on row `v`, covering `u0 .. u0 + len`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PixelRun {
    pub v: u32,
    pub u0: u32,
    pub len: u32,
}

/// Pixel set of one object instance in one camera image.
///
/// Stored as sorted, disjoint, non-adjacent row runs; `pixels()` iterates in
/// row-major order, which is the canonical order sampling draws from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "MaskRecord", into = "MaskRecord")]
pub struct InstanceMask {
    pub camera_id: usize,
    pub class_id: u32,
    runs: Vec<PixelRun>,
    /// `offsets[i]` = pixels before run `i`; one extra trailing entry.
    offsets: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct MaskRecord {
    camera_id: usize,
    class_id: u32,
    /// `[v, u_start, length]` triples.
    rows: Vec<[u32; 3]>,
}

impl TryFrom<MaskRecord> for InstanceMask {
    type Error = MvpError;

    fn try_from(r: MaskRecord) -> Result<Self, Self::Error> {
        let runs = r
            .rows
            .into_iter()
            .map(|[v, u0, len]| PixelRun { v, u0, len })
            .collect();
        InstanceMask::from_runs(r.camera_id, r.class_id, runs)
    }
}

impl From<InstanceMask> for MaskRecord {
    fn from(m: InstanceMask) -> Self {
        MaskRecord {
            camera_id: m.camera_id,
            class_id: m.class_id,
            rows: m.runs.iter().map(|r| [r.v, r.u0, r.len]).collect(),
        }
    }
}

impl InstanceMask {
    /// Builds a mask from runs in any order; overlapping or touching runs on
    /// a row are merged. Fails if the result is empty.
    pub fn from_runs(
        camera_id: usize,
        class_id: u32,
        mut runs: Vec<PixelRun>,
    ) -> Result<Self, MvpError> {
        runs.retain(|r| r.len > 0);
        runs.sort();
        let mut merged: Vec<PixelRun> = Vec::with_capacity(runs.len());
        for r in runs {
            match merged.last_mut() {
                Some(last) if last.v == r.v && r.u0 <= last.u0 + last.len => {
                    let end = (last.u0 + last.len).max(r.u0 + r.len);
                    last.len = end - last.u0;
                }
                _ => merged.push(r),
            }
        }
        if merged.is_empty() {
            return Err(MvpError::InvalidMask("mask is empty"));
        }
        let mut offsets = Vec::with_capacity(merged.len() + 1);
        let mut acc = 0usize;
        for r in &merged {
            offsets.push(acc);
            acc += r.len as usize;
        }
        offsets.push(acc);
        Ok(Self {
            camera_id,
            class_id,
            runs: merged,
            offsets,
        })
    }

    pub fn from_pixels(
        camera_id: usize,
        class_id: u32,
        pixels: impl IntoIterator<Item = (u32, u32)>,
    ) -> Result<Self, MvpError> {
        let runs = pixels
            .into_iter()
            .map(|(u, v)| PixelRun { v, u0: u, len: 1 })
            .collect();
        Self::from_runs(camera_id, class_id, runs)
    }

    pub fn runs(&self) -> &[PixelRun] {
        &self.runs
    }

    pub fn len(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, u: u32, v: u32) -> bool {
        let i = self.runs.partition_point(|r| (r.v, r.u0) <= (v, u));
        i > 0 && {
            let r = self.runs[i - 1];
            r.v == v && u < r.u0 + r.len
        }
    }

    /// Whether the pixel holding real coordinates `(u, v)` is in the mask.
    pub fn contains_coord(&self, u: f64, v: f64) -> bool {
        u >= 0.0
            && v >= 0.0
            && u < u32::MAX as f64
            && v < u32::MAX as f64
            && self.contains(u.floor() as u32, v.floor() as u32)
    }

    /// The `k`-th pixel in row-major order.
    pub fn nth(&self, k: usize) -> Option<(u32, u32)> {
        if k >= self.len() {
            return None;
        }
        let i = self.offsets.partition_point(|&o| o <= k) - 1;
        let r = self.runs[i];
        Some((r.u0 + (k - self.offsets[i]) as u32, r.v))
    }

    pub fn pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.runs
            .iter()
            .flat_map(|r| (r.u0..r.u0 + r.len).map(move |u| (u, r.v)))
    }

    pub fn validate(&self, camera: &CameraModel) -> Result<(), MvpError> {
        let inside = self
            .runs
            .iter()
            .all(|r| r.v < camera.height && r.u0 as u64 + r.len as u64 <= camera.width as u64);
        if inside {
            Ok(())
        } else {
            Err(MvpError::InvalidMask("pixels outside the image"))
        }
    }
}

/// Center of pixel `(u, v)`.
pub fn pixel_center((u, v): (u32, u32)) -> (f64, f64) {
    (u as f64 + 0.5, v as f64 + 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedPoint {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    pub source_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MvpConfig {
    /// Pixels sampled per mask.
    pub s: usize,
    pub rng_seed: u64,
}

impl Default for MvpConfig {
    fn default() -> Self {
        Self { s: 50, rng_seed: 0 }
    }
}

/// Projections of every point in front of the camera that lands inside the
/// image, in cloud order.
pub fn project_cloud_to_image(camera: &CameraModel, cloud: &PointCloud) -> Vec<ProjectedPoint> {
    cloud
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let pr = geom::project(camera, p).ok()?;
            camera.in_image(pr.u, pr.v).then_some(ProjectedPoint {
                u: pr.u,
                v: pr.v,
                depth: pr.depth,
                source_index: i,
            })
        })
        .collect()
}

/// Draws `min(s, |mask|)` distinct pixels uniformly without replacement.
pub fn sample_mask_pixels<R: rand::Rng + ?Sized>(
    mask: &InstanceMask,
    s: usize,
    rng: &mut R,
) -> Vec<(u32, u32)> {
    let n = mask.len();
    if s >= n {
        return mask.pixels().collect();
    }
    index::sample(rng, n, s)
        .into_iter()
        .map(|k| mask.nth(k).expect("sampled index within mask"))
        .collect()
}

/// Nearest-neighbor depths by sweeping outward in `u` over projections
/// sorted by `u`. Ties in pixel distance go to the lowest source index.
pub fn assign_depth_nn(
    samples: &[(f64, f64)],
    projected: &[ProjectedPoint],
) -> Result<Vec<f64>, MvpError> {
    if projected.is_empty() {
        return Err(MvpError::NoLidarInView);
    }
    let mut by_u: Vec<&ProjectedPoint> = projected.iter().collect();
    by_u.sort_by(|a, b| {
        a.u.total_cmp(&b.u)
            .then(a.source_index.cmp(&b.source_index))
    });

    let better = |cand: (f64, usize), best: Option<(f64, usize)>| match best {
        None => true,
        Some((d, idx)) => cand.0 < d || (cand.0 == d && cand.1 < idx),
    };

    let depths = samples
        .iter()
        .map(|&(su, sv)| {
            let start = by_u.partition_point(|p| p.u < su);
            let mut best: Option<(f64, usize)> = None;
            let mut best_depth = f64::NAN;
            let mut visit = |p: &ProjectedPoint, best: &mut Option<(f64, usize)>| {
                let du = p.u - su;
                let dv = p.v - sv;
                let d2 = du * du + dv * dv;
                if better((d2, p.source_index), *best) {
                    *best = Some((d2, p.source_index));
                    best_depth = p.depth;
                }
            };
            for p in &by_u[start..] {
                let du = p.u - su;
                if best.is_some_and(|(d, _)| du * du > d) {
                    break;
                }
                visit(p, &mut best);
            }
            for p in by_u[..start].iter().rev() {
                let du = su - p.u;
                if best.is_some_and(|(d, _)| du * du > d) {
                    break;
                }
                visit(p, &mut best);
            }
            best_depth
        })
        .collect();
    Ok(depths)
}

/// Virtual points for a single mask, in sample order. A mask with no in-mask
/// LiDAR projection yields `NoLidarInView`.
pub fn virtual_points_for_mask<R: rand::Rng + ?Sized>(
    camera: &CameraModel,
    projected: &[ProjectedPoint],
    mask: &InstanceMask,
    s: usize,
    rng: &mut R,
) -> Result<Vec<Point>, MvpError> {
    let in_mask: Vec<ProjectedPoint> = projected
        .iter()
        .filter(|p| mask.contains_coord(p.u, p.v))
        .copied()
        .collect();
    if in_mask.is_empty() {
        return Err(MvpError::NoLidarInView);
    }
    let samples: Vec<(f64, f64)> = sample_mask_pixels(mask, s, rng)
        .into_iter()
        .map(pixel_center)
        .collect();
    let depths = assign_depth_nn(&samples, &in_mask)?;
    Ok(samples
        .iter()
        .zip(depths)
        .map(|(&(u, v), d)| geom::unproject(camera, u, v, d).expect("projected depth is positive"))
        .collect())
}

/// RNG for mask `mask_index`: one ChaCha stream per mask, so masks can be
/// processed in any order or in parallel with identical output.
pub fn mask_rng(seed: u64, mask_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(mask_index as u64);
    rng
}

/// Virtual points for all masks, concatenated in mask order then sample order.
pub fn generate_virtual_points(
    cameras: &[CameraModel],
    cloud: &PointCloud,
    masks: &[InstanceMask],
    config: &MvpConfig,
) -> Result<PointCloud, MvpError> {
    if config.s == 0 {
        return Err(MvpError::InvalidSampleCount);
    }
    if let Some(m) = masks.iter().find(|m| m.camera_id >= cameras.len()) {
        return Err(MvpError::UnknownCamera(m.camera_id));
    }
    let projections: Vec<Vec<ProjectedPoint>> = cameras
        .par_iter()
        .map(|cam| project_cloud_to_image(cam, cloud))
        .collect();

    let per_mask: Vec<Vec<Point>> = masks
        .par_iter()
        .enumerate()
        .map(|(i, mask)| {
            let mut rng = mask_rng(config.rng_seed, i);
            let cam = &cameras[mask.camera_id];
            match virtual_points_for_mask(
                cam,
                &projections[mask.camera_id],
                mask,
                config.s,
                &mut rng,
            ) {
                Ok(points) => Ok(points),
                Err(MvpError::NoLidarInView) => Ok(Vec::new()),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_, _>>()?;
    Ok(per_mask.into_iter().flatten().collect())
}

/// Real points first, then virtual, each in original order.
pub fn fuse_clouds(real: &PointCloud, virtual_pts: &PointCloud) -> PointCloud {
    real.iter().chain(virtual_pts.iter()).copied().collect()
}

//! Deliberately naive reference implementations used as test oracles.
#![allow(dead_code)]

use rangefusion_core::geom::{project, Box3D, CameraModel, Detection, PointCloud};
use rangefusion_core::mvp::InstanceMask;

/// AP for one class by definition: greedy matching in confidence order,
/// then for every recall level the best precision at any cutoff whose
/// recall reaches it, averaged over the grid and the thresholds.
pub fn brute_ap(gt: &[Box3D], dets: &[Detection], thresholds: &[f64], grid: &[f64]) -> f64 {
    assert!(!gt.is_empty());
    // Stable insertion sort by descending confidence.
    let mut order: Vec<usize> = Vec::new();
    for i in 0..dets.len() {
        let pos = order
            .iter()
            .position(|&j| dets[j].confidence < dets[i].confidence)
            .unwrap_or(order.len());
        order.insert(pos, i);
    }
    let mut total = 0.0;
    for &d in thresholds {
        let mut used = vec![false; gt.len()];
        let mut tp_flags = Vec::new();
        for &i in &order {
            let c = dets[i].bbox.center;
            let mut pick: Option<usize> = None;
            for j in 0..gt.len() {
                let g = gt[j].center;
                let dist =
                    ((c[0] - g[0]).powi(2) + (c[1] - g[1]).powi(2) + (c[2] - g[2]).powi(2)).sqrt();
                if used[j] || dist > d {
                    continue;
                }
                let better = match pick {
                    None => true,
                    Some(p) => {
                        let q = gt[p].center;
                        let pd =
                            ((c[0] - q[0]).powi(2) + (c[1] - q[1]).powi(2) + (c[2] - q[2]).powi(2))
                                .sqrt();
                        dist < pd
                    }
                };
                if better {
                    pick = Some(j);
                }
            }
            if let Some(j) = pick {
                used[j] = true;
            }
            tp_flags.push(pick.is_some());
        }
        let mut sum = 0.0;
        for &a in grid {
            let mut best = 0.0f64;
            for k in 1..=tp_flags.len() {
                let tp = tp_flags[..k].iter().filter(|&&t| t).count() as f64;
                let recall = tp / gt.len() as f64;
                let precision = tp / k as f64;
                if recall >= a && precision > best {
                    best = precision;
                }
            }
            sum += best;
        }
        total += sum / grid.len() as f64;
    }
    total / thresholds.len() as f64
}

/// Projections of `cloud` into `camera` that land in a mask pixel, as
/// `(u, v, depth, index)`.
pub fn in_mask_projections(
    camera: &CameraModel,
    cloud: &PointCloud,
    mask: &InstanceMask,
) -> Vec<(f64, f64, f64, usize)> {
    let pixels: std::collections::HashSet<(u32, u32)> = mask.pixels().collect();
    let mut out = Vec::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let Ok(pr) = project(camera, p) else { continue };
        if pr.u < 0.0 || pr.v < 0.0 || pr.u >= camera.width as f64 || pr.v >= camera.height as f64 {
            continue;
        }
        let (pu, pv) = (pr.u.floor() as u32, pr.v.floor() as u32);
        if pixels.contains(&(pu, pv)) {
            out.push((pr.u, pr.v, pr.depth, i));
        }
    }
    out
}

/// Depth of the projection nearest to `(su, sv)`; ties to the lowest index.
pub fn exhaustive_nn_depth(
    projections: &[(f64, f64, f64, usize)],
    su: f64,
    sv: f64,
) -> Option<f64> {
    let mut best: Option<(f64, usize, f64)> = None;
    for &(u, v, depth, idx) in projections {
        let d2 = (u - su) * (u - su) + (v - sv) * (v - sv);
        let take = match best {
            None => true,
            Some((bd, bi, _)) => d2 < bd || (d2 == bd && idx < bi),
        };
        if take {
            best = Some((d2, idx, depth));
        }
    }
    best.map(|b| b.2)
}

/// Connected components by comparing every pair of points: two points are
/// linked when their voxels are neighbors. Components are ordered by their
/// smallest index, members ascending, and small ones dropped.
pub fn pairwise_clusters(
    cloud: &PointCloud,
    voxel: f64,
    six: bool,
    min_points: usize,
) -> Vec<Vec<usize>> {
    let n = cloud.len();
    let keys: Vec<[i64; 3]> = cloud
        .points
        .iter()
        .map(|p| {
            [
                (p.x / voxel).floor() as i64,
                (p.y / voxel).floor() as i64,
                (p.z / voxel).floor() as i64,
            ]
        })
        .collect();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            let d: Vec<i64> = (0..3).map(|k| (keys[i][k] - keys[j][k]).abs()).collect();
            let linked = if six {
                d.iter().sum::<i64>() <= 1
            } else {
                d.iter().all(|&x| x <= 1)
            };
            if linked {
                let (a, b) = (root(&mut parent, i), root(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..n {
        let r = root(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    let mut out: Vec<Vec<usize>> = groups
        .into_values()
        .filter(|g| g.len() >= min_points)
        .collect();
    out.sort_by_key(|g| g[0]);
    out
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Whether `p` lies in the convex polygon, given in either orientation.
pub fn in_convex_polygon(poly: &[(f64, f64)], p: (f64, f64), tol: f64) -> bool {
    let mut pos = false;
    let mut neg = false;
    for k in 0..poly.len() {
        let (a, b) = (poly[k], poly[(k + 1) % poly.len()]);
        let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
        let cross = ((b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)) / len.max(1e-300);
        if cross > tol {
            pos = true;
        }
        if cross < -tol {
            neg = true;
        }
    }
    !(pos && neg)
}

/// Central finite difference.
pub fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

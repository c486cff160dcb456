//! Relative pose between consecutive scans.
//!
//! Keypoints are depth discontinuities in the range image: the nearer pixel
//! of every horizontally adjacent pair whose ranges differ by more than
//! `kappa`. Poses are estimated by trimmed point-to-point ICP on those
//! keypoints with a closed-form (SVD) alignment step.

use nalgebra::{Matrix3, Vector3};
use rstar::RTree;

use crate::error::{Error, Result};
use crate::pointcloud::{Point, PointCloud};
use crate::projection::{pixel_of, ProjectionParams};

/// Rigid transform mapping previous-frame points into the current frame:
/// `p' = R p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_axis_angle(axis: [f64; 3], angle: f64, translation: [f64; 3]) -> Self {
        let axis = nalgebra::Unit::new_normalize(Vector3::from(axis));
        Self {
            rotation: *nalgebra::Rotation3::from_axis_angle(&axis, angle).matrix(),
            translation: Vector3::from(translation),
        }
    }

    #[inline]
    pub fn apply(&self, p: &Point) -> Point {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)] * p[0] + r[(0, 1)] * p[1] + r[(0, 2)] * p[2] + t[0],
            r[(1, 0)] * p[0] + r[(1, 1)] * p[1] + r[(1, 2)] * p[2] + t[1],
            r[(2, 0)] * p[0] + r[(2, 1)] * p[1] + r[(2, 2)] * p[2] + t[2],
        ]
    }

    pub fn transform_cloud(&self, cloud: &PointCloud) -> PointCloud {
        PointCloud::new(cloud.points.iter().map(|p| self.apply(p)).collect())
    }

    /// Row-major rotation followed by translation, as 32-bit floats.
    pub fn to_f32_array(&self) -> [f32; 12] {
        let mut out = [0f32; 12];
        for r in 0..3 {
            for c in 0..3 {
                out[r * 3 + c] = self.rotation[(r, c)] as f32;
            }
            out[9 + r] = self.translation[r] as f32;
        }
        out
    }

    pub fn from_f32_array(v: &[f32; 12]) -> Self {
        Self {
            rotation: Matrix3::from_fn(|r, c| v[r * 3 + c] as f64),
            translation: Vector3::new(v[9] as f64, v[10] as f64, v[11] as f64),
        }
    }

    /// The pose exactly as a decoder sees it after transmission.
    pub fn quantized(&self) -> Self {
        Self::from_f32_array(&self.to_f32_array())
    }

    /// Orthonormality and handedness check.
    pub fn is_valid(&self, tol: f64) -> bool {
        let r = &self.rotation;
        let ortho = (r.transpose() * r - Matrix3::identity()).amax();
        r.iter().chain(self.translation.iter()).all(|v| v.is_finite())
            && ortho <= tol
            && (r.determinant() - 1.0).abs() <= tol
    }

    /// Rotation angle in radians.
    pub fn angle(&self) -> f64 {
        ((self.rotation.trace() - 1.0) * 0.5).clamp(-1.0, 1.0).acos()
    }

    /// `self` followed by `other`.
    pub fn then(&self, other: &Pose) -> Pose {
        Pose {
            rotation: other.rotation * self.rotation,
            translation: other.rotation * self.translation + other.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }
}

/// Parses a pose file: one line per frame with twelve whitespace-separated
/// numbers (row-major rotation, then translation). Blank lines and `#`
/// comments are skipped.
pub fn parse_pose_file(text: &str) -> Result<Vec<Pose>> {
    let mut poses = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let vals = line
            .split_whitespace()
            .map(|t| t.parse::<f32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Config(format!("pose line {}: {e}", lineno + 1)))?;
        let arr: [f32; 12] = vals
            .try_into()
            .map_err(|v: Vec<f32>| Error::Config(format!("pose line {}: expected 12 values, got {}", lineno + 1, v.len())))?;
        poses.push(Pose::from_f32_array(&arr));
    }
    Ok(poses)
}

pub fn format_pose_line(pose: &Pose) -> String {
    pose.to_f32_array().iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IcpConfig {
    /// Depth jump (m) between horizontal neighbours that marks a keypoint.
    pub kappa: f64,
    /// Fraction of correspondences kept each iteration, best first.
    pub keep_fraction: f64,
    pub max_iterations: usize,
    /// Stop once the mean residual improves by less than this fraction.
    pub rel_tolerance: f64,
    pub min_pairs: usize,
    /// Mean trimmed residual (m) above which the estimate is rejected.
    pub max_mean_residual: f64,
    /// Rounds of perturbed restarts; 0 runs plain ICP from the identity.
    pub restarts: usize,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            kappa: 0.5,
            keep_fraction: 0.8,
            max_iterations: 20,
            rel_tolerance: 1e-6,
            min_pairs: 30,
            max_mean_residual: 0.3,
            restarts: 3,
        }
    }
}

/// Depth-discontinuity keypoints of a cloud under a projection.
pub fn extract_keypoints(cloud: &PointCloud, params: &ProjectionParams, kappa: f64) -> Vec<Point> {
    let (rows, cols) = (params.rows, params.cols);
    let mut nearest: Vec<Option<(f32, usize)>> = vec![None; rows * cols];
    for (k, p) in cloud.points.iter().enumerate() {
        if let Some((r, c, v)) = pixel_of(p, params) {
            let slot = &mut nearest[r * cols + c];
            if slot.map_or(true, |(cur, _)| v < cur) {
                *slot = Some((v, k));
            }
        }
    }
    let mut picked = vec![false; rows * cols];
    let mut out = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let (i, j) = (r * cols + c, r * cols + (c + 1) % cols);
            if let (Some((a, ia)), Some((b, ib))) = (nearest[i], nearest[j]) {
                if ((a - b).abs() as f64) > kappa {
                    let (px, idx) = if a < b { (i, ia) } else { (j, ib) };
                    if !picked[px] {
                        picked[px] = true;
                        out.push(cloud.points[idx]);
                    }
                }
            }
        }
    }
    out
}

/// Least-squares rigid alignment of `src` onto `dst` (paired).
pub(crate) fn align(pairs: &[(Point, Point)]) -> Pose {
    let n = pairs.len() as f64;
    let mut cs = Vector3::zeros();
    let mut cd = Vector3::zeros();
    for (s, d) in pairs {
        cs += Vector3::from(*s);
        cd += Vector3::from(*d);
    }
    cs /= n;
    cd /= n;
    let mut h = Matrix3::zeros();
    for (s, d) in pairs {
        h += (Vector3::from(*s) - cs) * (Vector3::from(*d) - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let v = v_t.transpose();
    let flip = (v * u.transpose()).determinant().signum();
    let rotation = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, flip)) * u.transpose();
    Pose {
        rotation,
        translation: cd - rotation * cs,
    }
}

fn dist2(a: &Point, b: &Point) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Trimmed correspondences of `src` under `pose` against the tree, sorted
/// by distance and cut to the kept fraction.
fn correspond(src: &[Point], tree: &RTree<Point>, pose: &Pose, keep: f64) -> Vec<(f64, Point, Point)> {
    let mut pairs: Vec<(f64, Point, Point)> = src
        .iter()
        .filter_map(|p| {
            let tp = pose.apply(p);
            tree.nearest_neighbor(&tp).map(|q| (dist2(&tp, q), *p, *q))
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let kept = ((pairs.len() as f64) * keep).ceil() as usize;
    pairs.truncate(kept.min(pairs.len()));
    pairs
}

fn mean_distance(pairs: &[(f64, Point, Point)]) -> f64 {
    pairs.iter().map(|(d2, _, _)| d2.sqrt()).sum::<f64>() / pairs.len().max(1) as f64
}

/// Pose mapping `prev` into `cur`.
pub fn estimate_pose(prev: &PointCloud, cur: &PointCloud, params: &ProjectionParams, cfg: &IcpConfig) -> Result<Pose> {
    let src = extract_keypoints(prev, params, cfg.kappa);
    let dst = extract_keypoints(cur, params, cfg.kappa);
    if src.len().min(dst.len()) < cfg.min_pairs {
        return Err(Error::FewKeypoints(src.len().min(dst.len())));
    }
    estimate_pose_from_keypoints(&src, &dst, cfg)
}

fn icp_from(src: &[Point], tree: &RTree<Point>, init: Pose, cfg: &IcpConfig) -> Result<(Pose, f64)> {
    let mut pose = init;
    let mut last = f64::INFINITY;
    for _ in 0..cfg.max_iterations {
        let pairs = correspond(src, tree, &pose, cfg.keep_fraction);
        if pairs.len() < cfg.min_pairs {
            return Err(Error::FewKeypoints(pairs.len()));
        }
        let err = mean_distance(&pairs);
        if !err.is_finite() {
            return Err(Error::NonConvergent(err));
        }
        if err == 0.0 || (last.is_finite() && (last - err).abs() <= cfg.rel_tolerance * last) {
            break;
        }
        last = err;
        let matched: Vec<(Point, Point)> = pairs.iter().map(|(_, p, q)| (*p, *q)).collect();
        pose = align(&matched);
    }
    Ok((pose, mean_distance(&correspond(src, tree, &pose, cfg.keep_fraction))))
}

/// Restart offsets tried around the best estimate: `dz` in meters, then
/// pitch and roll in radians. Keypoints sit mostly on vertical edges, which
/// pin height and tilt only weakly.
const RESTARTS: [([f64; 3], f64, [f64; 3]); 8] = [
    ([0.0, 0.0, 1.0], 0.0, [0.0, 0.0, 0.15]),
    ([0.0, 0.0, 1.0], 0.0, [0.0, 0.0, -0.15]),
    ([0.0, 0.0, 1.0], 0.0, [0.0, 0.0, 0.3]),
    ([0.0, 0.0, 1.0], 0.0, [0.0, 0.0, -0.3]),
    ([0.0, 1.0, 0.0], 0.0087, [0.0; 3]),
    ([0.0, 1.0, 0.0], -0.0087, [0.0; 3]),
    ([1.0, 0.0, 0.0], 0.0087, [0.0; 3]),
    ([1.0, 0.0, 0.0], -0.0087, [0.0; 3]),
];

/// ICP on precomputed keypoint sets, starting from the identity and
/// restarted around the best estimate while that lowers the residual.
pub fn estimate_pose_from_keypoints(src: &[Point], dst: &[Point], cfg: &IcpConfig) -> Result<Pose> {
    let tree = RTree::bulk_load(dst.to_vec());
    let (mut pose, mut err) = icp_from(src, &tree, Pose::identity(), cfg)?;
    for _ in 0..cfg.restarts {
        let mut improved = false;
        for (axis, angle, t) in RESTARTS {
            let init = pose.then(&Pose::from_axis_angle(axis, angle, t));
            if let Ok((p, e)) = icp_from(src, &tree, init, cfg) {
                if e < err * (1.0 - 1e-9) {
                    (pose, err) = (p, e);
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    if !(err <= cfg.max_mean_residual) {
        return Err(Error::NonConvergent(err));
    }
    Ok(pose)
}

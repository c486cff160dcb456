//! Keyframe decision.

use crate::pointcloud::PointCloud;
use crate::prediction::inter::{co_masked_mean_abs, inter_residual, predict_image};
use crate::prediction::intra::{intra_predict, IntraConfig, IntraSideInfo};
use crate::prediction::pose::{estimate_pose, IcpConfig, Pose};
use crate::prediction::{Mode, ResidualImage};
use crate::projection::{back_project, RangeImage};
use crate::scalar::Real;

/// Where the inter-frame pose comes from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PoseSource {
    /// No pose available: every frame is a keyframe.
    Unavailable,
    /// Externally supplied (odometry, IMU, pose file).
    Given(Pose),
    /// Estimate with keypoint ICP against the previous reconstruction.
    Estimate,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModeConfig {
    /// Mean absolute inter residual (m) over co-occupied pixels above which
    /// the frame becomes a keyframe.
    pub t_key: f64,
    pub intra: IntraConfig,
    pub icp: IcpConfig,
}

impl Default for ModeConfig {
    fn default() -> Self {
        Self {
            t_key: 0.5,
            intra: IntraConfig::default(),
            icp: IcpConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SideInfo {
    Intra(IntraSideInfo),
    /// `pose` is already rounded to its transmitted precision and
    /// `predicted` was rendered with it.
    Inter { pose: Pose, predicted: RangeImage },
}

#[derive(Clone, Debug, PartialEq)]
pub enum KeyframeReason {
    NoReference,
    NoPose,
    PoseFailed(String),
    LargeResidual(f64),
    /// Periodic keyframe after `k_max` predicted frames.
    Forced,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModeDecision<T> {
    pub mode: Mode,
    pub residual: ResidualImage<T>,
    pub side: SideInfo,
    pub reason: Option<KeyframeReason>,
}

fn intra<T: Real>(cur: &RangeImage, cfg: &ModeConfig, reason: KeyframeReason) -> ModeDecision<T> {
    let (residual, side) = intra_predict(cur, &cfg.intra);
    ModeDecision {
        mode: Mode::Intra,
        residual,
        side: SideInfo::Intra(side),
        reason: Some(reason),
    }
}

pub fn select_mode<T: Real>(
    cur: &RangeImage,
    prev_recon: Option<&PointCloud>,
    source: PoseSource,
    cfg: &ModeConfig,
) -> ModeDecision<T> {
    let Some(prev) = prev_recon else {
        return intra(cur, cfg, KeyframeReason::NoReference);
    };
    let pose = match source {
        PoseSource::Unavailable => return intra(cur, cfg, KeyframeReason::NoPose),
        PoseSource::Given(p) => p,
        PoseSource::Estimate => match estimate_pose(prev, &back_project(cur), &cur.params, &cfg.icp) {
            Ok(p) => p,
            Err(e) => return intra(cur, cfg, KeyframeReason::PoseFailed(e.to_string())),
        },
    };
    let pose = pose.quantized();
    let predicted = predict_image(prev, &pose, &cur.params);
    let residual = inter_residual::<T>(cur, &predicted);
    match co_masked_mean_abs(&residual, &predicted).map(|m| m.to_f64_lossy()) {
        Some(m) if m <= cfg.t_key => ModeDecision {
            mode: Mode::Inter,
            residual,
            side: SideInfo::Inter { pose, predicted },
            reason: None,
        },
        // Nothing co-occupied means the reference is useless.
        other => intra(cur, cfg, KeyframeReason::LargeResidual(other.unwrap_or(f64::INFINITY))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::ProjectionParams;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scene(seed: u64, lo: f32, hi: f32) -> RangeImage {
        let params = ProjectionParams::new(32, 256, -20.0, 2.0, 100.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = RangeImage::empty(params);
        for i in 0..img.values.len() {
            img.values[i] = rng.gen_range(lo..hi);
            img.mask[i] = true;
        }
        img
    }

    #[test]
    fn first_frame_is_intra() {
        let cur = scene(1, 5.0, 50.0);
        let d = select_mode::<f64>(&cur, None, PoseSource::Given(Pose::identity()), &ModeConfig::default());
        assert_eq!(d.mode, Mode::Intra);
        assert_eq!(d.reason, Some(KeyframeReason::NoReference));
    }

    #[test]
    fn static_scene_is_inter() {
        let cur = scene(2, 5.0, 50.0);
        let prev = back_project(&cur);
        let d = select_mode::<f64>(&cur, Some(&prev), PoseSource::Given(Pose::identity()), &ModeConfig::default());
        assert_eq!(d.mode, Mode::Inter);
        assert!(d.residual.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unrelated_reference_forces_keyframe() {
        // Two disjoint range bands: every co-occupied difference exceeds 20 m.
        let cur = scene(3, 5.0, 10.0);
        let prev = back_project(&scene(4, 30.0, 40.0));
        let d = select_mode::<f64>(&cur, Some(&prev), PoseSource::Given(Pose::identity()), &ModeConfig::default());
        assert_eq!(d.mode, Mode::Intra);
        assert!(matches!(d.reason, Some(KeyframeReason::LargeResidual(m)) if m > 20.0));
    }

    #[test]
    fn no_pose_means_intra() {
        let cur = scene(5, 5.0, 50.0);
        let prev = back_project(&cur);
        let d = select_mode::<f64>(&cur, Some(&prev), PoseSource::Unavailable, &ModeConfig::default());
        assert_eq!(d.mode, Mode::Intra);
    }
}

//! Frame prediction: intra (gradient-guided delta coding), inter (rigid
//! transform of the previous reconstruction) and the keyframe decision.

pub mod inter;
pub mod intra;
pub mod mode;
pub mod pose;

pub use inter::{inter_predict, inter_residual, predict_image};
pub use intra::{
    dominant_direction, intra_predict, intra_reconstruct, intra_residual, pixel_gradients, Direction, IntraConfig,
    IntraSideInfo, QuadNode,
};
pub use mode::{select_mode, KeyframeReason, ModeConfig, ModeDecision, PoseSource, SideInfo};
pub use pose::{estimate_pose, extract_keypoints, IcpConfig, Pose};

use crate::projection::Mask;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Intra,
    Inter,
}

/// Signed prediction residual in meters. Empty pixels hold zero.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualImage<T> {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<T>,
    pub mask: Mask,
    pub mode: Mode,
}

impl<T: Real> ResidualImage<T> {
    /// Mean absolute residual over occupied pixels, or `None` if there are none.
    pub fn mean_abs(&self) -> Option<T> {
        let (sum, n) = self
            .values
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .fold((T::zero(), 0usize), |(s, n), (v, _)| (s + v.abs(), n + 1));
        (n > 0).then(|| sum / T::from(n).unwrap())
    }

    pub fn is_valid(&self) -> bool {
        self.values.len() == self.rows * self.cols
            && self.mask.len() == self.values.len()
            && self.values.iter().zip(&self.mask).all(|(v, &m)| m || v.is_zero())
    }
}

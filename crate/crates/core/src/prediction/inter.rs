//! Inter prediction from the previous reconstruction moved by a rigid pose.

use crate::pointcloud::PointCloud;
use crate::prediction::pose::Pose;
use crate::prediction::{Mode, ResidualImage};
use crate::projection::{pixel_of, ProjectionParams, RangeImage};
use crate::scalar::Real;

/// Range image of `prev_recon` after applying `pose`.
pub fn predict_image(prev_recon: &PointCloud, pose: &Pose, params: &ProjectionParams) -> RangeImage {
    let mut image = RangeImage::empty(params.clone());
    for p in &prev_recon.points {
        if let Some((r, c, v)) = pixel_of(&pose.apply(p), params) {
            let i = image.index(r, c);
            if !image.mask[i] || v < image.values[i] {
                image.values[i] = v;
                image.mask[i] = true;
            }
        }
    }
    image
}

/// `cur - predicted` where both are occupied; the raw current range where
/// only `cur` is occupied; zero where `cur` is empty.
pub fn inter_residual<T: Real>(cur: &RangeImage, predicted: &RangeImage) -> ResidualImage<T> {
    let values = cur
        .values
        .iter()
        .zip(&cur.mask)
        .zip(predicted.values.iter().zip(&predicted.mask))
        .map(|((&v, &m), (&p, &pm))| match (m, pm) {
            (true, true) => T::from(v).unwrap() - T::from(p).unwrap(),
            (true, false) => T::from(v).unwrap(),
            _ => T::zero(),
        })
        .collect();
    ResidualImage {
        rows: cur.rows(),
        cols: cur.cols(),
        values,
        mask: cur.mask.clone(),
        mode: Mode::Inter,
    }
}

pub fn inter_predict<T: Real>(
    prev_recon: &PointCloud,
    pose: &Pose,
    params: &ProjectionParams,
    cur: &RangeImage,
) -> ResidualImage<T> {
    inter_residual(cur, &predict_image(prev_recon, pose, params))
}

/// Mean absolute residual over pixels occupied in both images.
pub fn co_masked_mean_abs<T: Real>(residual: &ResidualImage<T>, predicted: &RangeImage) -> Option<T> {
    let (sum, n) = residual
        .values
        .iter()
        .zip(&residual.mask)
        .zip(&predicted.mask)
        .filter(|((_, &a), &b)| a && b)
        .fold((T::zero(), 0usize), |(s, n), ((v, _), _)| (s + v.abs(), n + 1));
    (n > 0).then(|| sum / T::from(n).unwrap())
}

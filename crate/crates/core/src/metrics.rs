//! Reconstruction quality and bitrate accuracy.

use crate::error::{Error, Result};
use crate::projection::RangeImage;
use crate::scalar::Real;

/// Mean squared range difference over pixels occupied in both images.
/// Zero when no pixel is shared.
pub fn mse<T: Real>(original: &RangeImage, reconstructed: &RangeImage) -> T {
    let (sum, n) = original
        .values
        .iter()
        .zip(&original.mask)
        .zip(reconstructed.values.iter().zip(&reconstructed.mask))
        .filter(|((_, &a), (_, &b))| a && b)
        .fold((T::zero(), 0usize), |(s, n), ((&a, _), (&b, _))| {
            let d = T::from(a).unwrap() - T::from(b).unwrap();
            (s + d * d, n + 1)
        });
    if n == 0 {
        T::zero()
    } else {
        sum / T::from(n).unwrap()
    }
}

/// `10 log10(d_m^2 / mse)`; `+inf` for a zero error.
pub fn psnr_from_mse<T: Real>(mse: T, peak: T) -> T {
    if mse <= T::zero() {
        return T::infinity();
    }
    T::lit(10.0) * (peak * peak / mse).log10()
}

/// PSNR with the projection's peak range as `d_m`.
pub fn psnr<T: Real>(original: &RangeImage, reconstructed: &RangeImage) -> T {
    psnr_from_mse(mse(original, reconstructed), T::lit(original.params.range_max))
}

/// Mean of `|real - target| / target`.
pub fn bitrate_error<T: Real>(targets: &[T], reals: &[T]) -> Result<T> {
    if targets.len() != reals.len() {
        return Err(Error::LengthMismatch(targets.len(), reals.len()));
    }
    if targets.is_empty() {
        return Ok(T::zero());
    }
    if let Some(t) = targets.iter().find(|t| !(**t > T::zero())) {
        return Err(Error::Config(format!("bitrate target {t} must be positive")));
    }
    let sum: T = targets.iter().zip(reals).map(|(&t, &r)| (r - t).abs() / t).sum();
    Ok(sum / T::from(targets.len()).unwrap())
}

/// Largest per-frame `|real - target| / target`.
pub fn peak_bitrate_error<T: Real>(targets: &[T], reals: &[T]) -> Result<T> {
    if targets.len() != reals.len() {
        return Err(Error::LengthMismatch(targets.len(), reals.len()));
    }
    Ok(targets
        .iter()
        .zip(reals)
        .map(|(&t, &r)| (r - t).abs() / t)
        .fold(T::zero(), |a, b| a.max(b)))
}

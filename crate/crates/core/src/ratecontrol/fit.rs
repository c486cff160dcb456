//! Least-squares fits of the D-Q and R-Q models.

use crate::error::{Error, Result};
use crate::scalar::Real;

fn check<T: Real>(samples: &[(T, T)], positive_y: bool) -> Result<()> {
    if samples.len() < 3 {
        return Err(Error::DegenerateFit(format!("need at least 3 samples, got {}", samples.len())));
    }
    if samples
        .iter()
        .any(|&(q, y)| !(q > T::zero()) || !y.is_finite() || if positive_y { !(y > T::zero()) } else { y < T::zero() })
    {
        return Err(Error::DegenerateFit("steps must be positive and values valid".into()));
    }
    let q0 = samples[0].0;
    if samples.iter().all(|&(q, _)| q == q0) {
        return Err(Error::DegenerateFit("all steps are equal".into()));
    }
    Ok(())
}

fn cod<T: Real>(ys: impl Iterator<Item = (T, T)> + Clone, n: usize) -> T {
    let mean = ys.clone().map(|(y, _)| y).sum::<T>() / T::from(n).unwrap();
    let ss_tot: T = ys.clone().map(|(y, _)| (y - mean) * (y - mean)).sum();
    let ss_res: T = ys.map(|(y, f)| (y - f) * (y - f)).sum();
    if ss_tot > T::zero() {
        T::one() - ss_res / ss_tot
    } else if ss_res == T::zero() {
        T::one()
    } else {
        T::zero()
    }
}

/// `D = a_D * Q^2` through the origin. Returns `(a_D, CoD)`.
pub fn fit_dq_model<T: Real>(samples: &[(T, T)]) -> Result<(T, T)> {
    check(samples, false)?;
    let num: T = samples.iter().map(|&(q, d)| q * q * d).sum();
    let den: T = samples.iter().map(|&(q, _)| q.powi(4)).sum();
    let a = num / den;
    let c = cod(samples.iter().map(|&(q, d)| (d, a * q * q)), samples.len());
    Ok((a, c))
}

/// `ln R = ln a_R - b_R ln Q` by linear regression. Returns
/// `(a_R, b_R, CoD)` with the CoD taken in log space.
pub fn fit_rq_model<T: Real>(samples: &[(T, T)]) -> Result<(T, T, T)> {
    check(samples, true)?;
    let n = T::from(samples.len()).unwrap();
    let pts: Vec<(T, T)> = samples.iter().map(|&(q, r)| (q.ln(), r.ln())).collect();
    let mx = pts.iter().map(|p| p.0).sum::<T>() / n;
    let my = pts.iter().map(|p| p.1).sum::<T>() / n;
    let sxx: T = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: T = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if !(sxx > T::zero()) {
        return Err(Error::DegenerateFit("all steps are equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let c = cod(pts.iter().map(|&(x, y)| (y, intercept + slope * x)), pts.len());
    Ok((intercept.exp(), -slope, c))
}

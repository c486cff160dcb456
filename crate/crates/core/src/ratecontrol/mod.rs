//! Rate control: block bit allocation, lambda estimation, the lambda-Q
//! solver and adaptive updates of its parameters.
//!
//! Models, with `Q` the base step of a block:
//!
//! ```text
//! D(Q) = a_D * Q^2                  distortion (MSE)
//! R(Q) = a_R * Q^-b_R               rate (bits per point)
//! lambda = alpha * Q * exp(beta*Q)  lambda-Q relation solved for Q*
//! ```

mod fit;
mod schedule;

pub use fit::{fit_dq_model, fit_rq_model};
pub use schedule::TargetSchedule;

use crate::adwt::StepLimits;
use crate::error::Error;
use crate::scalar::Real;
use std::str::FromStr;

/// D-Q and R-Q model constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RdModel<T> {
    pub a_d: T,
    pub a_r: T,
    pub b_r: T,
    /// Share of non-zero coefficients; informational.
    pub rho: T,
}

impl<T: Real> RdModel<T> {
    pub fn new(a_d: T, a_r: T, b_r: T) -> Self {
        Self {
            a_d,
            a_r,
            b_r,
            rho: T::lit(12.0) * a_d,
        }
    }

    pub fn for_dataset(d: Dataset) -> Self {
        match d {
            Dataset::Kitti => Self::new(T::lit(0.0100), T::lit(0.86), T::lit(0.277)),
            Dataset::NuScenes => Self::new(T::lit(0.0109), T::lit(1.82), T::lit(0.234)),
            Dataset::Waymo => Self::new(T::lit(0.0101), T::lit(0.72), T::lit(0.243)),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.a_d > T::zero() && self.a_r > T::zero() && self.b_r > T::zero()
    }

    /// `R(Q)` in bits per point.
    pub fn rate(&self, q: T) -> T {
        self.a_r * q.powf(-self.b_r)
    }

    pub fn distortion(&self, q: T) -> T {
        self.a_d * q * q
    }

    /// Step at which the R-Q model yields `r`.
    pub fn q_for_rate(&self, r: T) -> T {
        (self.a_r / r).powf(T::one() / self.b_r)
    }

    /// `-dD/dR` at step `q`.
    pub fn slope_at(&self, q: T) -> T {
        let two = T::lit(2.0);
        two * self.a_d / (self.a_r * self.b_r) * q.powf(self.b_r + two)
    }
}

impl<T: Real> Default for RdModel<T> {
    fn default() -> Self {
        Self::for_dataset(Dataset::Kitti)
    }
}

/// Source of the initial model constants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Dataset {
    #[default]
    Kitti,
    NuScenes,
    Waymo,
}

impl FromStr for Dataset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "kitti" => Ok(Self::Kitti),
            "nuscenes" => Ok(Self::NuScenes),
            "waymo" => Ok(Self::Waymo),
            other => Err(Error::Config(format!("unknown dataset `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RcConfig<T> {
    pub alpha0: T,
    pub beta0: T,
    pub delta_alpha: T,
    pub delta_beta: T,
    pub lambda_min: T,
    pub lambda_max: T,
    /// Clamp range of `alpha` and `beta` after an update.
    pub param_min: T,
    pub param_max: T,
    pub limits: StepLimits<T>,
    /// Floor of every block allocation, in bits.
    pub b_min: i64,
    pub dataset: Dataset,
    /// Frames between refits of the stream-level model.
    pub refit_interval: usize,
    /// Fit the R-Q model of each block from trial encodes of the current
    /// frame instead of relying on the stream-level model alone.
    pub local_refit: bool,
    /// Carry bit overshoot of a frame into the next frame's budget.
    pub carry_overshoot: bool,
    pub weight: BlockWeight,
}

/// What the per-block allocation weights `E_block` measure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BlockWeight {
    /// Sum of squared residuals.
    Energy,
    /// Coded size of the block at a common reference step.
    #[default]
    Complexity,
}

impl FromStr for BlockWeight {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "energy" => Ok(Self::Energy),
            "complexity" => Ok(Self::Complexity),
            other => Err(Error::Config(format!("unknown block weight `{other}`"))),
        }
    }
}

impl<T: Real> Default for RcConfig<T> {
    fn default() -> Self {
        Self {
            alpha0: T::lit(0.014),
            beta0: T::lit(0.91),
            delta_alpha: T::lit(0.4),
            delta_beta: T::lit(0.3),
            lambda_min: T::lit(1e-6),
            lambda_max: T::lit(1e6),
            param_min: T::lit(1e-4),
            param_max: T::lit(1e2),
            limits: StepLimits::default(),
            b_min: 64,
            dataset: Dataset::Kitti,
            refit_interval: 32,
            local_refit: true,
            carry_overshoot: true,
            weight: BlockWeight::default(),
        }
    }
}

/// Bits for the current frame and what is left of them.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameBudget {
    pub target: i64,
    pub remaining: i64,
    /// Spatial residual energy per block.
    pub energies: Vec<f64>,
    /// Bits consumed by each block once encoded.
    pub consumed: Vec<Option<i64>>,
}

impl FrameBudget {
    pub fn new(target: i64, energies: Vec<f64>) -> Self {
        let n = energies.len();
        Self {
            target,
            remaining: target,
            energies,
            consumed: vec![None; n],
        }
    }

    pub fn consume(&mut self, block: usize, bits: i64) {
        assert!(self.consumed[block].is_none(), "block {block} already encoded");
        self.consumed[block] = Some(bits);
        self.remaining -= bits;
    }

    pub fn consumed_total(&self) -> i64 {
        self.consumed.iter().flatten().sum()
    }
}

/// Energy-weighted share of the remaining bits for block `cur`, with a
/// uniform split when no energy is left and a floor of `b_min`.
pub fn allocate_block_bits(budget: &FrameBudget, cur: usize, b_min: i64) -> i64 {
    let pending: Vec<usize> = (0..budget.energies.len()).filter(|&i| budget.consumed[i].is_none()).collect();
    if budget.remaining <= 0 || pending.is_empty() {
        return b_min;
    }
    let total: f64 = pending.iter().map(|&i| budget.energies[i]).sum();
    let share = if total > 0.0 {
        budget.energies[cur] / total * budget.remaining as f64
    } else {
        budget.remaining as f64 / pending.len() as f64
    };
    (share.floor() as i64).max(b_min)
}

/// Lambda for a target rate: invert the R-Q model, then take the R-D
/// slope there. Clamped to `[lambda_min, lambda_max]`.
pub fn estimate_lambda<T: Real>(r_target: T, model: &RdModel<T>, cfg: &RcConfig<T>) -> T {
    let q_hint = model.q_for_rate(r_target);
    let l = model.slope_at(q_hint);
    if l.is_nan() {
        return cfg.lambda_max;
    }
    l.max(cfg.lambda_min).min(cfg.lambda_max)
}

/// `alpha * Q * exp(beta * Q)`.
pub fn lambda_of_q<T: Real>(q: T, alpha: T, beta: T) -> T {
    alpha * q * (beta * q).exp()
}

/// Root of `lambda - alpha * Q * exp(beta * Q) = 0` within the step limits.
pub fn solve_qstar<T: Real>(lambda: T, alpha: T, beta: T, limits: StepLimits<T>) -> T {
    let f = |q: T| lambda_of_q(q, alpha, beta) - lambda;
    let (mut lo, mut hi) = (limits.q_min, limits.q_max);
    if f(lo) >= T::zero() {
        return lo;
    }
    if f(hi) <= T::zero() {
        return hi;
    }
    for _ in 0..200 {
        let mid = (lo + hi) / T::lit(2.0);
        if f(mid) < T::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= T::epsilon() * hi {
            break;
        }
    }
    let mut q = (lo + hi) / T::lit(2.0);
    for _ in 0..3 {
        let d = alpha * (beta * q).exp() * (T::one() + beta * q);
        let next = q - f(q) / d;
        if next.is_finite() && next >= lo && next <= hi {
            q = next;
        }
    }
    limits.clamp(q)
}

/// Per-block-position controller state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockRcState<T> {
    pub alpha: T,
    pub beta: T,
    pub last_lambda: Option<T>,
    pub last_q: Option<T>,
    pub last_bits: Option<i64>,
}

impl<T: Real> BlockRcState<T> {
    pub fn new(cfg: &RcConfig<T>) -> Self {
        Self {
            alpha: cfg.alpha0,
            beta: cfg.beta0,
            last_lambda: None,
            last_q: None,
            last_bits: None,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.alpha > T::zero() && self.beta > T::zero()
    }
}

/// Least-mean-squares update of `(alpha, beta)` from the realized optimum
/// `q_a` and the estimate `q_hat`, both using the pre-update `beta`.
pub fn update_model<T: Real>(state: &mut BlockRcState<T>, q_a: T, q_hat: T, cfg: &RcConfig<T>) {
    let (a, b) = (state.alpha, state.beta);
    let denom = b * q_a + T::one();
    let err = q_a - q_hat;
    let alpha = a + cfg.delta_alpha * a * q_a * err / denom;
    let beta = b + cfg.delta_beta * q_a * q_a * err / denom;
    let clamp = |v: T| if v.is_nan() { cfg.param_min } else { v.max(cfg.param_min).min(cfg.param_max) };
    state.alpha = clamp(alpha);
    state.beta = clamp(beta);
}

/// `(alpha, beta)` for which `alpha * Q * exp(beta * Q)` touches the model's
/// lambda-Q curve at `q`: equal value and equal log-slope `b_R + 2`.
pub fn tangent_parameters<T: Real>(lambda: T, q: T, b_r: T, cfg: &RcConfig<T>) -> (T, T) {
    let beta = ((b_r + T::one()) / q).max(cfg.param_min).min(cfg.param_max);
    let alpha = lambda / (q * (beta * q).exp());
    (alpha, beta)
}

/// Bits per point for a rate target.
pub fn bits_for_bpp<T: Real>(bpp: T, points: usize) -> i64 {
    (bpp.to_f64_lossy() * points as f64).round() as i64
}

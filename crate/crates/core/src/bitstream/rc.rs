//! Encoder-side rate controller: picks the base step of each block.

use std::collections::VecDeque;

use crate::adwt::{quantize, BlockTransform, QuantMap, QuantizedPyramid, StepLimits, SubbandPyramid, COEFFS};
use crate::adwt::dequantize;
use crate::entropy::{CoeffContexts, COST_SHIFT};
use crate::prediction::Mode;
use crate::ratecontrol::{
    estimate_lambda, fit_dq_model, fit_rq_model, solve_qstar, tangent_parameters, update_model, BlockRcState,
    RcConfig, RdModel,
};
use crate::scalar::Real;

/// Quantizes one block at a trial step.
pub(crate) struct Trial<'a, T> {
    pub pyramid: &'a SubbandPyramid<T>,
    pub transform: BlockTransform,
    pub alpha: T,
    pub limits: StepLimits<T>,
    pub q_min: T,
    pub ctx: &'a CoeffContexts,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Sample<T> {
    pub q: T,
    pub bits: f64,
    pub d: T,
}

impl<T: Real> Trial<'_, T> {
    pub fn quantize(&self, q: T) -> (QuantMap<T>, QuantizedPyramid) {
        let map = self
            .transform
            .quant_map(self.pyramid, q, self.alpha, self.limits)
            .coded(self.q_min);
        let qp = quantize(self.pyramid, &map);
        (map, qp)
    }

    pub fn probe(&self, q: T) -> Sample<T> {
        let (map, qp) = self.quantize(q);
        let bits = self.ctx.cost(&qp) as f64 / (1u64 << COST_SHIFT) as f64;
        Sample {
            q,
            bits,
            d: coeff_mse(self.pyramid, &qp, &map),
        }
    }
}

/// Mean squared coefficient error; equals the spatial block MSE for the
/// orthonormal transforms.
pub(crate) fn coeff_mse<T: Real>(p: &SubbandPyramid<T>, qp: &QuantizedPyramid, map: &QuantMap<T>) -> T {
    let rec = dequantize(qp, map);
    let se: T = p.coeffs.iter().zip(&rec.coeffs).map(|(&a, &b)| (a - b) * (a - b)).sum();
    se / T::from(COEFFS).unwrap()
}

/// Step chosen for a block and the model state behind it.
#[derive(Clone, Copy, Debug)]
pub(crate) struct BlockPlan<T> {
    pub q: T,
    pub model: RdModel<T>,
}

pub(crate) struct RateController<T> {
    pub cfg: RcConfig<T>,
    pub model: RdModel<T>,
    grid: [Vec<BlockRcState<T>>; 2],
    samples: VecDeque<(usize, T, T, T)>,
    frames: usize,
    /// Bits owed by earlier frames.
    pub carry: i64,
    /// Mean step of the last rate-controlled frame per mode.
    reference: [Option<T>; 2],
}

fn grid_index(mode: Mode) -> usize {
    match mode {
        Mode::Intra => 0,
        Mode::Inter => 1,
    }
}

fn rel_eq(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

const PROBE_ROUNDS: usize = 4;
const PROBE_TOLERANCE: f64 = 0.02;

impl<T: Real> RateController<T> {
    pub fn new(cfg: RcConfig<T>, blocks: usize) -> Self {
        let st = BlockRcState::new(&cfg);
        Self {
            model: RdModel::for_dataset(cfg.dataset),
            grid: [vec![st; blocks], vec![st; blocks]],
            cfg,
            samples: VecDeque::new(),
            frames: 0,
            carry: 0,
            reference: [None; 2],
        }
    }

    pub fn reference_step(&self, mode: Mode) -> Option<T> {
        self.reference[grid_index(mode)]
    }

    pub fn set_reference_step(&mut self, mode: Mode, q: T) {
        self.reference[grid_index(mode)] = Some(q);
    }

    /// Step for a block given its bit allocation. `remaining` is the frame
    /// budget left before this block.
    pub fn plan(
        &mut self,
        mode: Mode,
        block: usize,
        trial: &Trial<T>,
        target_bits: i64,
        remaining: i64,
        occupied: usize,
        hint: Option<T>,
    ) -> BlockPlan<T> {
        let cfg = self.cfg;
        let lim = cfg.limits;
        if remaining <= 0 || trial.pyramid.coeffs.iter().all(|c| c.is_zero()) {
            return BlockPlan {
                q: lim.q_max,
                model: self.model,
            };
        }
        let n = T::from(occupied.max(1)).unwrap();
        let r_tar = T::from(target_bits.max(1)).unwrap() / n;
        let st = self.grid[grid_index(mode)][block];
        let (model, q_hat, alpha, beta) = if cfg.local_refit {
            let center = st
                .last_q
                .or(hint)
                .unwrap_or_else(|| lim.clamp(self.model.q_for_rate(r_tar)));
            let samples = search(trial, target_bits.max(1) as f64, center);
            let local = local_model(&samples, target_bits.max(1) as f64, n, self.model);
            let lambda = estimate_lambda(r_tar, &local, &cfg);
            let q_hint = lim.clamp(local.q_for_rate(r_tar));
            let q_hint = if q_hint.is_finite() { q_hint } else { closest(&samples, target_bits as f64).q };
            let (a, b) = tangent_parameters(lambda, q_hint, local.b_r, &cfg);
            (local, solve_qstar(lambda, a, b, lim), a, b)
        } else {
            let lambda = estimate_lambda(r_tar, &self.model, &cfg);
            (self.model, solve_qstar(lambda, st.alpha, st.beta, lim), st.alpha, st.beta)
        };
        let s = &mut self.grid[grid_index(mode)][block];
        s.alpha = alpha;
        s.beta = beta;
        s.last_lambda = Some(estimate_lambda(r_tar, &model, &cfg));
        BlockPlan { q: q_hat, model }
    }

    /// Feeds back the bits a planned block actually used.
    pub fn record(&mut self, mode: Mode, block: usize, plan: &BlockPlan<T>, bits: i64, d: T, occupied: usize) {
        let cfg = self.cfg;
        let r_real = T::from(bits.max(1)).unwrap() / T::from(occupied.max(1)).unwrap();
        let s = &mut self.grid[grid_index(mode)][block];
        let lambda_real = estimate_lambda(r_real, &plan.model, &cfg);
        let q_a = solve_qstar(lambda_real, s.alpha, s.beta, cfg.limits);
        update_model(s, q_a, plan.q, &cfg);
        s.last_q = Some(plan.q);
        s.last_bits = Some(bits);
        self.samples.push_back((self.frames, plan.q, d, r_real));
    }

    /// Closes a frame: refits the stream model every `refit_interval`
    /// frames from the samples of that window.
    pub fn end_frame(&mut self) {
        self.frames += 1;
        let window = self.cfg.refit_interval.max(1);
        while self.samples.front().is_some_and(|s| s.0 + window < self.frames) {
            self.samples.pop_front();
        }
        if self.frames % window != 0 {
            return;
        }
        let dq: Vec<(T, T)> = self.samples.iter().map(|s| (s.1, s.2)).collect();
        let rq: Vec<(T, T)> = self.samples.iter().map(|s| (s.1, s.3)).collect();
        if let (Ok((a_d, _)), Ok((a_r, b_r, _))) = (fit_dq_model(&dq), fit_rq_model(&rq)) {
            let m = RdModel::new(a_d, a_r, b_r);
            if m.is_valid() && a_r.is_finite() && b_r.is_finite() {
                self.model = m;
            }
        }
    }
}

fn closest<T: Real>(samples: &[Sample<T>], target: f64) -> Sample<T> {
    *samples
        .iter()
        .min_by(|a, b| {
            let da = (a.bits.ln() - target.ln()).abs();
            let db = (b.bits.ln() - target.ln()).abs();
            da.total_cmp(&db)
        })
        .expect("at least one sample")
}

/// Trial encodes around `center` until one lands within tolerance of
/// `target` bits or the round limit is hit.
fn search<T: Real>(trial: &Trial<T>, target: f64, center: T) -> Vec<Sample<T>> {
    let lim = trial.limits;
    let mut samples: Vec<Sample<T>> = Vec::with_capacity(3 + PROBE_ROUNDS);
    let add = |samples: &mut Vec<Sample<T>>, q: T| {
        let q = lim.clamp(q);
        if !samples.iter().any(|s| rel_eq(s.q.to_f64_lossy(), q.to_f64_lossy())) {
            samples.push(trial.probe(q));
            true
        } else {
            false
        }
    };
    for f in [0.5, 1.0, 2.0] {
        add(&mut samples, center * T::lit(f));
    }
    for _ in 0..PROBE_ROUNDS {
        let best = closest(&samples, target);
        if (best.bits - target).abs() <= PROBE_TOLERANCE * target {
            break;
        }
        let Some(q) = next_step(&samples, target) else { break };
        if !add(&mut samples, q) {
            break;
        }
    }
    samples
}

/// Log-log secant between the samples bracketing `target`, or a geometric
/// extrapolation when all samples are on one side.
fn next_step<T: Real>(samples: &[Sample<T>], target: f64) -> Option<T> {
    let mut s: Vec<(f64, f64)> = samples.iter().map(|s| (s.q.to_f64_lossy(), s.bits)).collect();
    s.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Bits fall as the step grows.
    let lt = target.ln();
    for w in s.windows(2) {
        let ((q1, b1), (q2, b2)) = (w[0], w[1]);
        if b1 >= target && target >= b2 {
            let q = if rel_eq(b1, b2) {
                (q1 * q2).sqrt()
            } else {
                (q1.ln() + (lt - b1.ln()) * (q2.ln() - q1.ln()) / (b2.ln() - b1.ln())).exp()
            };
            return Some(T::lit(q));
        }
    }
    let (first, last) = (s[0], s[s.len() - 1]);
    let slope = || {
        let (a, b) = if target > first.1 { (s[0], s[1.min(s.len() - 1)]) } else { (s[s.len().saturating_sub(2)], s[s.len() - 1]) };
        if rel_eq(a.0, b.0) || rel_eq(a.1, b.1) || b.1 > a.1 {
            None
        } else {
            Some((b.1.ln() - a.1.ln()) / (b.0.ln() - a.0.ln()))
        }
    };
    if target > first.1 {
        let q = match slope() {
            Some(k) => (first.0.ln() + (lt - first.1.ln()) / k).exp().max(first.0 / 8.0),
            None => first.0 / 4.0,
        };
        Some(T::lit(q))
    } else if target < last.1 {
        let q = match slope() {
            Some(k) => (last.0.ln() + (lt - last.1.ln()) / k).exp().min(last.0 * 8.0),
            None => last.0 * 4.0,
        };
        Some(T::lit(q))
    } else {
        None
    }
}

/// Block R-Q and D-Q models from the three samples nearest the target
/// rate, falling back to the stream model for anything that cannot be fit.
fn local_model<T: Real>(samples: &[Sample<T>], target: f64, n: T, fallback: RdModel<T>) -> RdModel<T> {
    let mut samples = samples.to_vec();
    samples.sort_by(|a, b| (a.bits.ln() - target.ln()).abs().total_cmp(&(b.bits.ln() - target.ln()).abs()));
    samples.truncate(3);
    let rq: Vec<(T, T)> = samples.iter().map(|s| (s.q, T::lit(s.bits) / n)).collect();
    let dq: Vec<(T, T)> = samples.iter().map(|s| (s.q, s.d)).collect();
    let a_d = match fit_dq_model(&dq) {
        Ok((a, _)) if a > T::zero() && a.is_finite() => a,
        _ => fallback.a_d,
    };
    match fit_rq_model(&rq) {
        Ok((a_r, b_r, _)) if a_r.is_finite() && b_r > T::lit(1e-3) && b_r.is_finite() => RdModel::new(a_d, a_r, b_r),
        _ => RdModel::new(a_d, fallback.a_r, fallback.b_r),
    }
}

//! Energy-driven step assignment and uniform scalar quantization.
//!
//! Starting from the base step of LL at level 3:
//!
//! ```text
//! q_HH = alpha * log2(E_LL / E_HH + 1) * q_LL
//! q_IJ = w_IJ * q_LL + (1 - w_IJ) * q_HH,   w_IJ = E_IJ / (E_HL + E_LH),  IJ in {HL, LH}
//! q_LL(k-1) = sum_IJ q_IJ(k) * E_IJ(k) / E_sum(k)
//! ```
//!
//! where `E_LL(k-1) = E_sum(k)`. Every step is clamped to
//! `[q_min, q_max]` as soon as it is computed.

use super::{Band, BandKind, SubbandPyramid, BANDS, COEFFS, LEVELS};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLimits<T> {
    pub q_min: T,
    pub q_max: T,
}

impl<T: Real> Default for StepLimits<T> {
    fn default() -> Self {
        Self {
            q_min: T::lit(0.001),
            q_max: T::lit(32.0),
        }
    }
}

impl<T: Real> StepLimits<T> {
    pub fn clamp(&self, q: T) -> T {
        q.max(self.q_min).min(self.q_max)
    }
}

/// Per-level subband energies, indexed `[level - 1][LL, HL, LH, HH]`.
/// For levels 1 and 2 the LL entry is the total energy of the level above.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubbandEnergies<T> {
    pub levels: [[T; 4]; LEVELS],
}

fn kind_index(kind: BandKind) -> usize {
    match kind {
        BandKind::LL => 0,
        BandKind::HL => 1,
        BandKind::LH => 2,
        BandKind::HH => 3,
    }
}

impl<T: Real> SubbandEnergies<T> {
    pub fn from_pyramid(p: &SubbandPyramid<T>) -> Self {
        let mut levels = [[T::zero(); 4]; LEVELS];
        for b in BANDS {
            levels[b.level - 1][kind_index(b.kind)] = p.band(b).map(|c| c * c).sum();
        }
        let mut e = Self { levels };
        for k in (1..LEVELS).rev() {
            e.levels[k - 1][0] = e.total(k + 1);
        }
        e
    }

    /// Level-3 energies with the derived LL entries filled in.
    pub fn from_level3(ll: T, hl: T, lh: T, hh: T, level2: [T; 3], level1: [T; 3]) -> Self {
        let mut e = Self {
            levels: [
                [T::zero(), level1[0], level1[1], level1[2]],
                [T::zero(), level2[0], level2[1], level2[2]],
                [ll, hl, lh, hh],
            ],
        };
        for k in (1..LEVELS).rev() {
            e.levels[k - 1][0] = e.total(k + 1);
        }
        e
    }

    pub fn get(&self, level: usize, kind: BandKind) -> T {
        self.levels[level - 1][kind_index(kind)]
    }

    /// `E_sum` of a level.
    pub fn total(&self, level: usize) -> T {
        self.levels[level - 1].iter().copied().sum()
    }
}

/// Quantization steps for one block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuantMap<T> {
    /// Steps per level, `[level - 1][LL, HL, LH, HH]`. LL at levels 1 and 2
    /// is the derived reference step and quantizes no coefficients.
    pub levels: [[T; 4]; LEVELS],
}

impl<T: Real> QuantMap<T> {
    pub fn uniform(q: T) -> Self {
        Self {
            levels: [[q; 4]; LEVELS],
        }
    }

    /// The externally supplied `q_LL` at level 3.
    pub fn base(&self) -> T {
        self.levels[LEVELS - 1][0]
    }

    pub fn step(&self, band: Band) -> T {
        self.levels[band.level - 1][kind_index(band.kind)]
    }

    /// Steps of the stored bands in [`BANDS`] order.
    pub fn band_steps(&self) -> [T; 10] {
        BANDS.map(|b| self.step(b))
    }

    pub fn from_band_steps(steps: [T; 10]) -> Self {
        let mut levels = [[T::zero(); 4]; LEVELS];
        for (b, q) in BANDS.iter().zip(steps) {
            levels[b.level - 1][kind_index(b.kind)] = q;
        }
        // Reference LL steps are not transmitted; mirror the base step so
        // every entry stays positive.
        levels[0][0] = steps[0];
        levels[1][0] = steps[0];
        Self { levels }
    }

    /// 16-bit log-scale codes, `step = q_min * 2^(code / 2048)`.
    pub fn to_codes(&self, q_min: T) -> [u16; 10] {
        self.band_steps().map(|q| step_to_code(q, q_min))
    }

    pub fn from_codes(codes: &[u16; 10], q_min: T) -> Self {
        Self::from_band_steps(codes.map(|c| code_to_step(c, q_min)))
    }

    /// The map after a round trip through its transmitted codes.
    pub fn coded(&self, q_min: T) -> Self {
        Self::from_codes(&self.to_codes(q_min), q_min)
    }
}

pub const STEP_CODE_SCALE: f64 = 2048.0;

pub fn step_to_code<T: Real>(q: T, q_min: T) -> u16 {
    let c = ((q / q_min).to_f64_lossy().log2() * STEP_CODE_SCALE).round();
    c.clamp(0.0, u16::MAX as f64) as u16
}

pub fn code_to_step<T: Real>(code: u16, q_min: T) -> T {
    q_min * T::lit((code as f64 / STEP_CODE_SCALE).exp2())
}

/// Adaptive steps from subband energies and the base step.
///
/// Zero-energy guards: an empty HH band takes `q_HH = q_LL`; an empty LL
/// band is floored to the smallest positive value; empty HL and LH bands
/// both take `(q_LL + q_HH) / 2`; an empty level propagates the plain mean
/// of its four steps.
pub fn assign_quant_steps<T: Real>(e: &SubbandEnergies<T>, q_ll3: T, alpha: T, limits: StepLimits<T>) -> QuantMap<T> {
    let two = T::lit(2.0);
    let mut levels = [[T::zero(); 4]; LEVELS];
    let mut q_ll = limits.clamp(q_ll3);
    for level in (1..=LEVELS).rev() {
        let [e_ll, e_hl, e_lh, e_hh] = e.levels[level - 1];
        let q_hh = if e_hh <= T::zero() {
            q_ll
        } else {
            let ratio = e_ll.max(T::min_positive_value()) / e_hh;
            limits.clamp(alpha * (ratio + T::one()).log2() * q_ll)
        };
        let mixed = e_hl + e_lh;
        let (q_hl, q_lh) = if mixed <= T::zero() {
            let m = (q_ll + q_hh) / two;
            (m, m)
        } else {
            let w_hl = e_hl / mixed;
            let w_lh = e_lh / mixed;
            (
                limits.clamp(w_hl * q_ll + (T::one() - w_hl) * q_hh),
                limits.clamp(w_lh * q_ll + (T::one() - w_lh) * q_hh),
            )
        };
        let steps = [q_ll, q_hl, q_lh, q_hh];
        levels[level - 1] = steps;
        if level > 1 {
            let total = e.total(level);
            let next = if total > T::zero() {
                steps.iter().zip(&e.levels[level - 1]).map(|(&q, &w)| q * w).sum::<T>() / total
            } else {
                steps.iter().copied().sum::<T>() / T::lit(4.0)
            };
            q_ll = limits.clamp(next);
        }
    }
    QuantMap { levels }
}

/// Integer indices in the pyramid layout.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedPyramid {
    pub indices: Vec<i32>,
}

impl QuantizedPyramid {
    pub fn zeros() -> Self {
        Self {
            indices: vec![0; COEFFS],
        }
    }

    pub fn nonzero(&self) -> usize {
        self.indices.iter().filter(|&&i| i != 0).count()
    }
}

/// `round(c / q)`, ties away from zero.
pub fn quantize<T: Real>(p: &SubbandPyramid<T>, qmap: &QuantMap<T>) -> QuantizedPyramid {
    let mut indices = vec![0i32; COEFFS];
    for b in BANDS {
        let q = qmap.step(b);
        for i in SubbandPyramid::<T>::band_indices(b) {
            let v = (p.coeffs[i] / q).round();
            indices[i] = v.to_i32().unwrap_or(if v > T::zero() { i32::MAX } else { i32::MIN });
        }
    }
    QuantizedPyramid { indices }
}

pub fn dequantize<T: Real>(q: &QuantizedPyramid, qmap: &QuantMap<T>) -> SubbandPyramid<T> {
    let mut coeffs = vec![T::zero(); COEFFS];
    for b in BANDS {
        let step = qmap.step(b);
        for i in SubbandPyramid::<T>::band_indices(b) {
            coeffs[i] = T::from(q.indices[i]).unwrap() * step;
        }
    }
    SubbandPyramid { coeffs }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adwt::forward_dwt3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn wide() -> StepLimits<f64> {
        StepLimits { q_min: 1e-9, q_max: 1e9 }
    }

    fn e3(ll: f64, hl: f64, lh: f64, hh: f64) -> SubbandEnergies<f64> {
        SubbandEnergies::from_level3(ll, hl, lh, hh, [1.0, 2.0, 3.0], [4.0, 5.0, 6.0])
    }

    #[test]
    fn equal_ll_hh_energy() {
        let m = assign_quant_steps(&e3(7.0, 1.0, 2.0, 7.0), 10.0, 0.53, StepLimits::default());
        assert!((m.step(Band::new(3, BandKind::HH)) - 5.3).abs() < 1e-12);
    }

    #[test]
    fn equal_mixed_energy_averages() {
        let m = assign_quant_steps(&e3(40.0, 3.0, 3.0, 2.0), 10.0, 0.53, StepLimits::default());
        let hh = m.step(Band::new(3, BandKind::HH));
        let want = (10.0 + hh) / 2.0;
        assert!((m.step(Band::new(3, BandKind::HL)) - want).abs() < 1e-12);
        assert!((m.step(Band::new(3, BandKind::LH)) - want).abs() < 1e-12);
    }

    #[test]
    fn equal_level3_energies_give_plain_mean() {
        let m = assign_quant_steps(&e3(5.0, 5.0, 5.0, 5.0), 2.0, 0.53, StepLimits::default());
        let mean = m.levels[2].iter().sum::<f64>() / 4.0;
        assert!((m.levels[1][0] - mean).abs() < 1e-12);
    }

    #[test]
    fn zero_energy_guards() {
        let l = StepLimits::default();
        let m = assign_quant_steps(&e3(5.0, 1.0, 1.0, 0.0), 2.0, 0.53, l);
        assert_eq!(m.step(Band::new(3, BandKind::HH)), 2.0);
        let m = assign_quant_steps(&e3(0.0, 1.0, 1.0, 3.0), 2.0, 0.53, l);
        assert_eq!(m.step(Band::new(3, BandKind::HH)), l.q_min);
        let m = assign_quant_steps(&e3(5.0, 0.0, 0.0, 1.0), 2.0, 0.53, l);
        let hh = m.step(Band::new(3, BandKind::HH));
        assert_eq!(m.step(Band::new(3, BandKind::HL)), (2.0 + hh) / 2.0);
        let z = SubbandEnergies::from_level3(0.0, 0.0, 0.0, 0.0, [0.0; 3], [0.0; 3]);
        let m = assign_quant_steps(&z, 2.0, 0.53, l);
        assert!(m.band_steps().iter().all(|&q| q == 2.0));
    }

    #[test]
    fn clamps_and_base() {
        let l = StepLimits::default();
        let m = assign_quant_steps(&e3(1e12, 1.0, 1.0, 1e-12), 20.0, 0.53, l);
        assert!(m.band_steps().iter().all(|&q| q >= l.q_min && q <= l.q_max));
        assert_eq!(m.step(Band::new(3, BandKind::HH)), 32.0);
        assert_eq!(m.base(), 20.0);
    }

    #[test]
    fn hh_step_monotone_and_linear() {
        let mut last = 0.0;
        for k in 1..50 {
            let ratio = k as f64 * 0.7;
            let m = assign_quant_steps(&e3(ratio, 1.0, 1.0, 1.0), 1.0, 0.53, wide());
            let q = m.step(Band::new(3, BandKind::HH));
            assert!(q > last);
            last = q;
            let m3 = assign_quant_steps(&e3(ratio, 1.0, 1.0, 1.0), 3.0, 0.53, wide());
            assert!((m3.step(Band::new(3, BandKind::HH)) - 3.0 * q).abs() < 1e-12);
        }
    }

    #[test]
    fn step_codes() {
        let q_min = 0.001f64;
        assert_eq!(step_to_code(q_min, q_min), 0);
        assert!((code_to_step::<f64>(step_to_code(32.0, q_min), q_min) - 32.0).abs() / 32.0 < 2e-4);
        for q in [0.0013, 0.02, 0.5, 7.0] {
            let back: f64 = code_to_step(step_to_code(q, q_min), q_min);
            // Half a code step in log2 space.
            assert!((back / q).log2().abs() <= 0.5 / STEP_CODE_SCALE + 1e-12);
        }
        let m = assign_quant_steps(&e3(9.0, 2.0, 1.0, 0.5), 0.05, 0.53, StepLimits::default());
        let c = m.coded(q_min);
        assert_eq!(c.to_codes(q_min), m.to_codes(q_min));
    }

    #[test]
    fn rounding_rule() {
        let mut p = SubbandPyramid::<f64>::zeros();
        p.coeffs[0] = 7.0;
        p.coeffs[1] = -7.0;
        p.coeffs[2] = 0.0;
        let q = quantize(&p, &QuantMap::uniform(2.0));
        assert_eq!(&q.indices[..3], &[4, -4, 0]);
        assert_eq!(dequantize(&QuantizedPyramid::zeros(), &QuantMap::uniform(2.0)), SubbandPyramid::zeros());
    }

    #[test]
    fn reconstruction_error_bounded_by_half_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let block: Vec<f64> = (0..COEFFS).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let p = forward_dwt3(&block);
        let m = assign_quant_steps(&SubbandEnergies::from_pyramid(&p), 0.05, 0.53, StepLimits::default());
        let back = dequantize(&quantize(&p, &m), &m);
        for b in BANDS {
            let q = m.step(b);
            for i in SubbandPyramid::<f64>::band_indices(b) {
                assert!((p.coeffs[i] - back.coeffs[i]).abs() <= q / 2.0 + 1e-12);
            }
        }
    }

    #[test]
    fn uniform_error_mse_is_one_twelfth() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = QuantMap::uniform(1.0);
        let (mut se, mut n) = (0.0, 0usize);
        for _ in 0..50 {
            let p = SubbandPyramid::<f64> {
                coeffs: (0..COEFFS).map(|_| rng.gen_range(-100.0..100.0)).collect(),
            };
            let back = dequantize(&quantize(&p, &m), &m);
            se += p.coeffs.iter().zip(&back.coeffs).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            n += COEFFS;
        }
        let mse = se / n as f64;
        assert!((mse - 1.0 / 12.0).abs() <= 0.05 / 12.0, "mse {mse}");
    }

    #[test]
    fn ll_only_distortion_matches_quadratic_model() {
        // Only LL3 carries signal: block distortion = rho * Q^2 / 12 with rho
        // the share of coefficients that are coded.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let q = 0.5;
        let ll = Band::new(3, BandKind::LL);
        let (mut se, mut trials) = (0.0, 0);
        for _ in 0..400 {
            let mut p = SubbandPyramid::<f64>::zeros();
            for i in SubbandPyramid::<f64>::band_indices(ll) {
                p.coeffs[i] = rng.gen_range(-40.0..40.0);
            }
            let m = QuantMap::uniform(q);
            let back = inverse_dwt3_of(&dequantize(&quantize(&p, &m), &m));
            let orig = inverse_dwt3_of(&p);
            se += orig.iter().zip(&back).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / COEFFS as f64;
            trials += 1;
        }
        let d = se / trials as f64;
        let rho = 64.0 / COEFFS as f64;
        let model = rho * q * q / 12.0;
        assert!((d - model).abs() <= 0.05 * model, "d {d} model {model}");
    }

    fn inverse_dwt3_of(p: &SubbandPyramid<f64>) -> Vec<f64> {
        crate::adwt::inverse_dwt3(p)
    }
}

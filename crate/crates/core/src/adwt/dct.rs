//! 8x8 orthonormal DCT-II tiles over a 64x64 block.
//!
//! Coefficients are regrouped by frequency so that frequency 0 of every
//! tile lands in the LL3 region, frequency 1 in the level-3 detail region,
//! frequencies 2-3 in level 2 and 4-7 in level 1. The subband entropy
//! coder then sees the same statistics layout as for the wavelet.

use super::{SubbandPyramid, BLOCK, COEFFS};
use crate::scalar::Real;

const N: usize = 8;
const TILES: usize = BLOCK / N;

/// Pyramid coordinate of frequency `f` in tile `b` along one axis.
fn pos(f: usize, b: usize) -> usize {
    match f {
        0 => b,
        1 => TILES + b,
        2 | 3 => 2 * TILES + 2 * b + (f - 2),
        _ => 4 * TILES + 4 * b + (f - 4),
    }
}

/// `basis[f][x]` of the orthonormal DCT-II.
fn basis<T: Real>() -> [[T; N]; N] {
    let mut m = [[T::zero(); N]; N];
    for (f, row) in m.iter_mut().enumerate() {
        let scale = if f == 0 { (1.0 / N as f64).sqrt() } else { (2.0 / N as f64).sqrt() };
        for (x, v) in row.iter_mut().enumerate() {
            let a = std::f64::consts::PI * (2 * x + 1) as f64 * f as f64 / (2 * N) as f64;
            *v = T::lit(scale * a.cos());
        }
    }
    m
}

fn tile_forward<T: Real>(b: &[[T; N]; N], x: &[[T; N]; N]) -> [[T; N]; N] {
    // C = B X B^T
    let mut tmp = [[T::zero(); N]; N];
    for f in 0..N {
        for c in 0..N {
            tmp[f][c] = (0..N).map(|r| b[f][r] * x[r][c]).sum();
        }
    }
    let mut out = [[T::zero(); N]; N];
    for f in 0..N {
        for g in 0..N {
            out[f][g] = (0..N).map(|c| tmp[f][c] * b[g][c]).sum();
        }
    }
    out
}

fn tile_inverse<T: Real>(b: &[[T; N]; N], c: &[[T; N]; N]) -> [[T; N]; N] {
    // X = B^T C B
    let mut tmp = [[T::zero(); N]; N];
    for r in 0..N {
        for g in 0..N {
            tmp[r][g] = (0..N).map(|f| b[f][r] * c[f][g]).sum();
        }
    }
    let mut out = [[T::zero(); N]; N];
    for r in 0..N {
        for x in 0..N {
            out[r][x] = (0..N).map(|g| tmp[r][g] * b[g][x]).sum();
        }
    }
    out
}

pub fn forward_dct_pyramid<T: Real>(block: &[T]) -> SubbandPyramid<T> {
    assert_eq!(block.len(), COEFFS, "block must be 64x64");
    let b = basis::<T>();
    let mut coeffs = vec![T::zero(); COEFFS];
    for bi in 0..TILES {
        for bj in 0..TILES {
            let mut x = [[T::zero(); N]; N];
            for (r, row) in x.iter_mut().enumerate() {
                let start = (bi * N + r) * BLOCK + bj * N;
                row.copy_from_slice(&block[start..start + N]);
            }
            let c = tile_forward(&b, &x);
            for fu in 0..N {
                for fv in 0..N {
                    coeffs[pos(fu, bi) * BLOCK + pos(fv, bj)] = c[fu][fv];
                }
            }
        }
    }
    SubbandPyramid { coeffs }
}

pub fn inverse_dct_pyramid<T: Real>(pyramid: &SubbandPyramid<T>) -> Vec<T> {
    let b = basis::<T>();
    let mut out = vec![T::zero(); COEFFS];
    for bi in 0..TILES {
        for bj in 0..TILES {
            let mut c = [[T::zero(); N]; N];
            for (fu, row) in c.iter_mut().enumerate() {
                for (fv, v) in row.iter_mut().enumerate() {
                    *v = pyramid.coeffs[pos(fu, bi) * BLOCK + pos(fv, bj)];
                }
            }
            let x = tile_inverse(&b, &c);
            for (r, row) in x.iter().enumerate() {
                let start = (bi * N + r) * BLOCK + bj * N;
                out[start..start + N].copy_from_slice(row);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn positions_are_a_permutation() {
        let mut seen = [false; BLOCK];
        for f in 0..N {
            for b in 0..TILES {
                let p = pos(f, b);
                assert!(!seen[p]);
                seen[p] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn constant_block_has_only_dc() {
        let p = forward_dct_pyramid(&vec![2.0f64; COEFFS]);
        for r in 0..BLOCK {
            for c in 0..BLOCK {
                let v = p.coeffs[r * BLOCK + c];
                // Orthonormal DC of an 8x8 tile: 8 * value.
                let want = if r < TILES && c < TILES { 16.0 } else { 0.0 };
                assert!((v - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn round_trip_and_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x: Vec<f64> = (0..COEFFS).map(|_| rng.gen_range(-9.0..9.0)).collect();
        let p = forward_dct_pyramid(&x);
        let e: f64 = x.iter().map(|v| v * v).sum();
        assert!((p.energy() - e).abs() <= 1e-9 * e);
        let back = inverse_dct_pyramid(&p);
        assert!(x.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x: Vec<f64> = (0..COEFFS).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p = forward_dct_pyramid(&x);
        let (bi, bj, fu, fv) = (3, 5, 6, 2);
        let pi = std::f64::consts::PI;
        let cu = |f: usize| if f == 0 { (0.125f64).sqrt() } else { 0.5 };
        let mut s = 0.0;
        for r in 0..8 {
            for c in 0..8 {
                s += x[(bi * 8 + r) * BLOCK + bj * 8 + c]
                    * ((2 * r + 1) as f64 * fu as f64 * pi / 16.0).cos()
                    * ((2 * c + 1) as f64 * fv as f64 * pi / 16.0).cos();
            }
        }
        let want = cu(fu) * cu(fv) * s;
        assert!((p.coeffs[pos(fu, bi) * BLOCK + pos(fv, bj)] - want).abs() < 1e-12);
    }
}

//! Three-level orthonormal Haar DWT on 64x64 residual blocks, with
//! energy-adaptive subband quantization.
//!
//! Coefficients live in a Mallat layout: at level `k` (band size
//! `n = 64 >> k`) the LL band occupies `[0, n) x [0, n)`, HL (horizontal
//! detail) `[0, n) x [n, 2n)`, LH (vertical detail) `[n, 2n) x [0, n)` and
//! HH `[n, 2n) x [n, 2n)`. Only LL at level 3 is stored; coarser LL bands
//! are implied by the levels below them.

pub mod dct;
pub mod quant;

pub use quant::{
    assign_quant_steps, dequantize, quantize, QuantMap, QuantizedPyramid, StepLimits, SubbandEnergies,
};

use crate::scalar::Real;

pub const BLOCK: usize = 64;
pub const LEVELS: usize = 3;
pub const COEFFS: usize = BLOCK * BLOCK;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BandKind {
    LL,
    HL,
    LH,
    HH,
}

/// A stored subband: `level` is 1 (finest) to 3 (coarsest).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Band {
    pub level: usize,
    pub kind: BandKind,
}

impl Band {
    pub const fn new(level: usize, kind: BandKind) -> Self {
        Self { level, kind }
    }

    /// Side length of the band.
    pub const fn size(self) -> usize {
        BLOCK >> self.level
    }

    /// Top-left `(row, col)` of the band in the Mallat layout.
    pub const fn origin(self) -> (usize, usize) {
        let n = self.size();
        match self.kind {
            BandKind::LL => (0, 0),
            BandKind::HL => (0, n),
            BandKind::LH => (n, 0),
            BandKind::HH => (n, n),
        }
    }

    /// Position in [`BANDS`].
    pub fn ordinal(self) -> usize {
        BANDS.iter().position(|b| *b == self).expect("stored band")
    }
}

/// Stored bands, coarse to fine. This is also the coding order.
pub const BANDS: [Band; 10] = [
    Band::new(3, BandKind::LL),
    Band::new(3, BandKind::HL),
    Band::new(3, BandKind::LH),
    Band::new(3, BandKind::HH),
    Band::new(2, BandKind::HL),
    Band::new(2, BandKind::LH),
    Band::new(2, BandKind::HH),
    Band::new(1, BandKind::HL),
    Band::new(1, BandKind::LH),
    Band::new(1, BandKind::HH),
];

/// 64x64 coefficients in Mallat layout, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SubbandPyramid<T> {
    pub coeffs: Vec<T>,
}

impl<T: Real> SubbandPyramid<T> {
    pub fn zeros() -> Self {
        Self {
            coeffs: vec![T::zero(); COEFFS],
        }
    }

    pub fn band_indices(band: Band) -> impl Iterator<Item = usize> {
        let (r0, c0) = band.origin();
        let n = band.size();
        (r0..r0 + n).flat_map(move |r| (c0..c0 + n).map(move |c| r * BLOCK + c))
    }

    pub fn band(&self, band: Band) -> impl Iterator<Item = T> + '_ {
        Self::band_indices(band).map(move |i| self.coeffs[i])
    }

    pub fn energy(&self) -> T {
        self.coeffs.iter().map(|&c| c * c).sum()
    }
}

fn haar_rows<T: Real>(data: &mut [T], size: usize, tmp: &mut [T]) {
    let s = T::lit(std::f64::consts::FRAC_1_SQRT_2);
    let h = size / 2;
    for r in 0..size {
        let row = &mut data[r * BLOCK..r * BLOCK + size];
        for j in 0..h {
            let (a, b) = (row[2 * j], row[2 * j + 1]);
            tmp[j] = (a + b) * s;
            tmp[h + j] = (a - b) * s;
        }
        row.copy_from_slice(&tmp[..size]);
    }
}

fn haar_cols<T: Real>(data: &mut [T], size: usize, tmp: &mut [T]) {
    let s = T::lit(std::f64::consts::FRAC_1_SQRT_2);
    let h = size / 2;
    for c in 0..size {
        for j in 0..h {
            let (a, b) = (data[2 * j * BLOCK + c], data[(2 * j + 1) * BLOCK + c]);
            tmp[j] = (a + b) * s;
            tmp[h + j] = (a - b) * s;
        }
        for r in 0..size {
            data[r * BLOCK + c] = tmp[r];
        }
    }
}

fn inv_haar_rows<T: Real>(data: &mut [T], size: usize, tmp: &mut [T]) {
    let s = T::lit(std::f64::consts::FRAC_1_SQRT_2);
    let h = size / 2;
    for r in 0..size {
        let row = &mut data[r * BLOCK..r * BLOCK + size];
        for j in 0..h {
            let (lo, hi) = (row[j], row[h + j]);
            tmp[2 * j] = (lo + hi) * s;
            tmp[2 * j + 1] = (lo - hi) * s;
        }
        row.copy_from_slice(&tmp[..size]);
    }
}

fn inv_haar_cols<T: Real>(data: &mut [T], size: usize, tmp: &mut [T]) {
    let s = T::lit(std::f64::consts::FRAC_1_SQRT_2);
    let h = size / 2;
    for c in 0..size {
        for j in 0..h {
            let (lo, hi) = (data[j * BLOCK + c], data[(h + j) * BLOCK + c]);
            tmp[2 * j] = (lo + hi) * s;
            tmp[2 * j + 1] = (lo - hi) * s;
        }
        for r in 0..size {
            data[r * BLOCK + c] = tmp[r];
        }
    }
}

/// Forward 3-level Haar analysis of a row-major 64x64 block.
pub fn forward_dwt3<T: Real>(block: &[T]) -> SubbandPyramid<T> {
    assert_eq!(block.len(), COEFFS, "block must be 64x64");
    let mut data = block.to_vec();
    let mut tmp = vec![T::zero(); BLOCK];
    for level in 0..LEVELS {
        let size = BLOCK >> level;
        haar_rows(&mut data, size, &mut tmp);
        haar_cols(&mut data, size, &mut tmp);
    }
    SubbandPyramid { coeffs: data }
}

/// Exact synthesis: inverse of [`forward_dwt3`].
pub fn inverse_dwt3<T: Real>(pyramid: &SubbandPyramid<T>) -> Vec<T> {
    let mut data = pyramid.coeffs.clone();
    let mut tmp = vec![T::zero(); BLOCK];
    for level in (0..LEVELS).rev() {
        let size = BLOCK >> level;
        inv_haar_cols(&mut data, size, &mut tmp);
        inv_haar_rows(&mut data, size, &mut tmp);
    }
    data
}

/// Transform and step-assignment policy for residual blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum BlockTransform {
    /// Haar DWT with energy-adaptive subband steps.
    #[default]
    AdaptiveDwt,
    /// Haar DWT with one step for every subband.
    UniformDwt,
    /// 8x8 DCT-II tiles with one step, coefficients regrouped by frequency
    /// into the pyramid layout so the same entropy coder applies.
    Dct,
}

impl BlockTransform {
    pub fn code(self) -> u8 {
        match self {
            Self::AdaptiveDwt => 0,
            Self::UniformDwt => 1,
            Self::Dct => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Self::AdaptiveDwt),
            1 => Some(Self::UniformDwt),
            2 => Some(Self::Dct),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::AdaptiveDwt => "adwt",
            Self::UniformDwt => "dwt",
            Self::Dct => "dct",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "adwt" | "a-dwt" => Some(Self::AdaptiveDwt),
            "dwt" => Some(Self::UniformDwt),
            "dct" => Some(Self::Dct),
            _ => None,
        }
    }

    pub fn forward<T: Real>(self, block: &[T]) -> SubbandPyramid<T> {
        match self {
            Self::AdaptiveDwt | Self::UniformDwt => forward_dwt3(block),
            Self::Dct => dct::forward_dct_pyramid(block),
        }
    }

    pub fn inverse<T: Real>(self, pyramid: &SubbandPyramid<T>) -> Vec<T> {
        match self {
            Self::AdaptiveDwt | Self::UniformDwt => inverse_dwt3(pyramid),
            Self::Dct => dct::inverse_dct_pyramid(pyramid),
        }
    }

    /// Step map for a transformed block given the base step.
    pub fn quant_map<T: Real>(self, pyramid: &SubbandPyramid<T>, base: T, alpha: T, limits: StepLimits<T>) -> QuantMap<T> {
        match self {
            Self::AdaptiveDwt => assign_quant_steps(&SubbandEnergies::from_pyramid(pyramid), base, alpha, limits),
            Self::UniformDwt | Self::Dct => QuantMap::uniform(limits.clamp(base)),
        }
    }
}

//! Gradient-guided intra prediction.
//!
//! The image is tiled into 16x16 macroblocks. Each block's pixel gradients
//! are binned by orientation; if one orientation dominates, the block is
//! delta coded along the perpendicular direction, otherwise it is split into
//! quadrants, down to 4x4 where horizontal coding is forced.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::prediction::{Mode, ResidualImage};
use crate::projection::RangeImage;
use crate::scalar::Real;

pub const MACROBLOCK: usize = 16;
pub const MIN_LEAF: usize = 4;

/// Scan direction used for delta coding within a leaf.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    /// Left to right along rows.
    Horizontal,
    /// Top to bottom along columns.
    Vertical,
    /// Down-right along `col - row = const`.
    DiagonalDown,
    /// Up-right along `row + col = const`.
    DiagonalUp,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::Horizontal,
        Direction::Vertical,
        Direction::DiagonalDown,
        Direction::DiagonalUp,
    ];

    pub fn code(self) -> u8 {
        match self {
            Direction::Horizontal => 0,
            Direction::Vertical => 1,
            Direction::DiagonalDown => 2,
            Direction::DiagonalUp => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntraConfig {
    /// Minimum magnitude-weighted share of the top orientation bin.
    pub tau: f64,
    /// Gradient magnitudes at or below this (m/pixel) are ignored.
    pub g_min: f64,
}

impl Default for IntraConfig {
    fn default() -> Self {
        Self { tau: 0.6, g_min: 0.05 }
    }
}

/// Quadtree over one macroblock. Children are ordered TL, TR, BL, BR.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum QuadNode {
    Leaf(Direction),
    Split(Box<[QuadNode; 4]>),
}

impl QuadNode {
    /// Leaves as `(row offset, col offset, size, direction)` for a node of
    /// the given size.
    pub fn leaves(&self, size: usize) -> Result<Vec<(usize, usize, usize, Direction)>> {
        let mut out = Vec::new();
        self.collect(0, 0, size, &mut out)?;
        Ok(out)
    }

    fn collect(&self, r: usize, c: usize, size: usize, out: &mut Vec<(usize, usize, usize, Direction)>) -> Result<()> {
        match self {
            QuadNode::Leaf(d) => out.push((r, c, size, *d)),
            QuadNode::Split(children) => {
                if size / 2 < MIN_LEAF {
                    return Err(Error::MalformedQuadtree(format!("split below {MIN_LEAF}x{MIN_LEAF}")));
                }
                let h = size / 2;
                for (k, child) in children.iter().enumerate() {
                    child.collect(r + (k / 2) * h, c + (k % 2) * h, h, out)?;
                }
            }
        }
        Ok(())
    }
}

/// Per-macroblock quadtrees in row-major macroblock order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntraSideInfo {
    pub mb_rows: usize,
    pub mb_cols: usize,
    pub trees: Vec<QuadNode>,
}

impl IntraSideInfo {
    pub fn all_horizontal(rows: usize, cols: usize) -> Self {
        let (mb_rows, mb_cols) = (rows.div_ceil(MACROBLOCK), cols.div_ceil(MACROBLOCK));
        Self {
            mb_rows,
            mb_cols,
            trees: vec![QuadNode::Leaf(Direction::Horizontal); mb_rows * mb_cols],
        }
    }

    /// Raw size before entropy coding: split flags at sizes 16 and 8 plus a
    /// 2-bit direction per leaf.
    pub fn raw_bits(&self) -> usize {
        fn bits(n: &QuadNode, size: usize) -> usize {
            let flag = usize::from(size > MIN_LEAF);
            match n {
                QuadNode::Leaf(_) => flag + 2,
                QuadNode::Split(ch) => flag + ch.iter().map(|c| bits(c, size / 2)).sum::<usize>(),
            }
        }
        self.trees.iter().map(|t| bits(t, MACROBLOCK)).sum()
    }
}

/// Per-pixel `(dI/du, dI/dv)` with `u` the row and `v` the column axis.
///
/// Central differences where both neighbours along an axis are occupied,
/// one-sided differences on the image border, and `(0, 0)` wherever the
/// pixel or a needed neighbour is empty.
pub fn pixel_gradients(image: &RangeImage) -> Vec<[f64; 2]> {
    let (rows, cols) = (image.rows(), image.cols());
    let mut out = vec![[0.0; 2]; rows * cols];
    let at = |r: usize, c: usize| -> Option<f64> { image.get(r, c).map(f64::from) };
    let axis = |here: f64, lo: Option<Option<f64>>, hi: Option<Option<f64>>| -> Option<f64> {
        // Outer Option: neighbour exists inside the image; inner: occupied.
        match (lo, hi) {
            (Some(Some(a)), Some(Some(b))) => Some(0.5 * (b - a)),
            (None, Some(Some(b))) => Some(b - here),
            (Some(Some(a)), None) => Some(here - a),
            (None, None) => Some(0.0),
            _ => None,
        }
    };
    for r in 0..rows {
        for c in 0..cols {
            let Some(here) = at(r, c) else { continue };
            let up = (r > 0).then(|| at(r - 1, c));
            let down = (r + 1 < rows).then(|| at(r + 1, c));
            let left = (c > 0).then(|| at(r, c - 1));
            let right = (c + 1 < cols).then(|| at(r, c + 1));
            if let (Some(gu), Some(gv)) = (axis(here, up, down), axis(here, left, right)) {
                out[r * cols + c] = [gu, gv];
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BlockClass {
    Dominant(Direction),
    /// No gradient above the floor.
    Flat,
    /// Gradients present but no orientation reaches the share threshold.
    Mixed,
}

fn classify<'a>(grads: impl IntoIterator<Item = &'a [f64; 2]>, cfg: &IntraConfig) -> BlockClass {
    let mut bins = [0.0f64; 4];
    for g in grads {
        let mag = g[0].hypot(g[1]);
        if mag <= cfg.g_min {
            continue;
        }
        // Orientation of the intensity change, measured from the column
        // axis, folded into [0, pi).
        let theta = g[0].atan2(g[1]).rem_euclid(PI);
        let bin = ((theta / (PI / 4.0)).round() as usize) % 4;
        bins[bin] += mag;
    }
    let total: f64 = bins.iter().sum();
    if total <= 0.0 {
        return BlockClass::Flat;
    }
    let (top, weight) = bins
        .iter()
        .enumerate()
        .fold((0, f64::MIN), |acc, (i, &w)| if w > acc.1 { (i, w) } else { acc });
    if weight / total < cfg.tau {
        return BlockClass::Mixed;
    }
    // Delta coding runs perpendicular to the dominant intensity change.
    BlockClass::Dominant(match top {
        0 => Direction::Vertical,
        1 => Direction::DiagonalUp,
        2 => Direction::Horizontal,
        _ => Direction::DiagonalDown,
    })
}

/// Dominant delta-coding direction of a block of gradients, if any.
pub fn dominant_direction<'a>(grads: impl IntoIterator<Item = &'a [f64; 2]>, cfg: &IntraConfig) -> Option<Direction> {
    match classify(grads, cfg) {
        BlockClass::Dominant(d) => Some(d),
        _ => None,
    }
}

fn block_grads<'a>(
    grads: &'a [[f64; 2]],
    (rows, cols): (usize, usize),
    r0: usize,
    c0: usize,
    size: usize,
) -> impl Iterator<Item = &'a [f64; 2]> {
    (r0..(r0 + size).min(rows)).flat_map(move |r| {
        let c1 = (c0 + size).min(cols);
        grads[r * cols + c0.min(c1)..r * cols + c1].iter()
    })
}

fn build_tree(grads: &[[f64; 2]], dims: (usize, usize), r0: usize, c0: usize, size: usize, cfg: &IntraConfig) -> QuadNode {
    match classify(block_grads(grads, dims, r0, c0, size), cfg) {
        BlockClass::Dominant(d) => QuadNode::Leaf(d),
        BlockClass::Flat => QuadNode::Leaf(Direction::Horizontal),
        BlockClass::Mixed if size <= MIN_LEAF => QuadNode::Leaf(Direction::Horizontal),
        BlockClass::Mixed => {
            let h = size / 2;
            QuadNode::Split(Box::new([
                build_tree(grads, dims, r0, c0, h, cfg),
                build_tree(grads, dims, r0, c0 + h, h, cfg),
                build_tree(grads, dims, r0 + h, c0, h, cfg),
                build_tree(grads, dims, r0 + h, c0 + h, h, cfg),
            ]))
        }
    }
}

/// Calls `f` with the pixel indices of every scan line of a leaf, in scan
/// order, clipped to the image.
fn for_each_scan_line(
    dir: Direction,
    (r0, c0, size): (usize, usize, usize),
    (rows, cols): (usize, usize),
    buf: &mut Vec<usize>,
    mut f: impl FnMut(&[usize]),
) {
    let (r1, c1) = ((r0 + size).min(rows), (c0 + size).min(cols));
    if r0 >= r1 || c0 >= c1 {
        return;
    }
    let (h, w) = (r1 - r0, c1 - c0);
    let emit = |buf: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])| {
        if !buf.is_empty() {
            f(buf);
        }
        buf.clear();
    };
    buf.clear();
    match dir {
        Direction::Horizontal => {
            for r in r0..r1 {
                buf.extend((c0..c1).map(|c| r * cols + c));
                emit(buf, &mut f);
            }
        }
        Direction::Vertical => {
            for c in c0..c1 {
                buf.extend((r0..r1).map(|r| r * cols + c));
                emit(buf, &mut f);
            }
        }
        Direction::DiagonalDown => {
            // Lines start on the top row, then down the left column.
            let starts = (0..w).map(|j| (0, j)).chain((1..h).map(|i| (i, 0)));
            for (i, j) in starts {
                let n = (h - i).min(w - j);
                buf.extend((0..n).map(|k| (r0 + i + k) * cols + c0 + j + k));
                emit(buf, &mut f);
            }
        }
        Direction::DiagonalUp => {
            // Lines start on the left column, then along the bottom row.
            let starts = (0..h).map(|i| (i, 0)).chain((1..w).map(|j| (h - 1, j)));
            for (i, j) in starts {
                let n = (i + 1).min(w - j);
                buf.extend((0..n).map(|k| (r0 + i - k) * cols + c0 + j + k));
                emit(buf, &mut f);
            }
        }
    }
}

fn for_each_leaf(
    side: &IntraSideInfo,
    dims: (usize, usize),
    mut f: impl FnMut(Direction, (usize, usize, usize)),
) -> Result<()> {
    let (rows, cols) = dims;
    let (mb_rows, mb_cols) = (rows.div_ceil(MACROBLOCK), cols.div_ceil(MACROBLOCK));
    if side.mb_rows != mb_rows || side.mb_cols != mb_cols || side.trees.len() != mb_rows * mb_cols {
        return Err(Error::MalformedQuadtree(format!(
            "{} trees ({}x{}) for a {}x{} macroblock grid",
            side.trees.len(),
            side.mb_rows,
            side.mb_cols,
            mb_rows,
            mb_cols
        )));
    }
    for (k, tree) in side.trees.iter().enumerate() {
        let (mr, mc) = ((k / mb_cols) * MACROBLOCK, (k % mb_cols) * MACROBLOCK);
        for (r, c, size, d) in tree.leaves(MACROBLOCK)? {
            f(d, (mr + r, mc + c, size));
        }
    }
    Ok(())
}

/// Gradient-guided delta coding of a range image.
///
/// Along each scan line the first occupied pixel is kept verbatim and every
/// later occupied pixel stores the difference to the previous occupied one.
/// Empty pixels carry a zero residual; the transmitted mask tells the
/// decoder to skip them.
pub fn intra_predict<T: Real>(image: &RangeImage, cfg: &IntraConfig) -> (ResidualImage<T>, IntraSideInfo) {
    let dims = (image.rows(), image.cols());
    let grads = pixel_gradients(image);
    let (mb_rows, mb_cols) = (dims.0.div_ceil(MACROBLOCK), dims.1.div_ceil(MACROBLOCK));
    let mut trees = Vec::with_capacity(mb_rows * mb_cols);
    for mr in 0..mb_rows {
        for mc in 0..mb_cols {
            trees.push(build_tree(&grads, dims, mr * MACROBLOCK, mc * MACROBLOCK, MACROBLOCK, cfg));
        }
    }
    let side = IntraSideInfo { mb_rows, mb_cols, trees };
    let residual = intra_residual(image, &side).expect("side info built for this image");
    (residual, side)
}

/// Delta coding of `image` under given side info.
pub fn intra_residual<T: Real>(image: &RangeImage, side: &IntraSideInfo) -> Result<ResidualImage<T>> {
    let dims = (image.rows(), image.cols());
    let mut values = vec![T::zero(); dims.0 * dims.1];
    let mut buf = Vec::with_capacity(2 * MACROBLOCK);
    for_each_leaf(side, dims, |dir, leaf| {
        for_each_scan_line(dir, leaf, dims, &mut buf, |line| {
            let mut prev: Option<T> = None;
            for &i in line {
                if image.mask[i] {
                    let v = T::from(image.values[i]).unwrap();
                    values[i] = match prev {
                        Some(p) => v - p,
                        None => v,
                    };
                    prev = Some(v);
                }
            }
        });
    })?;
    Ok(ResidualImage {
        rows: dims.0,
        cols: dims.1,
        values,
        mask: image.mask.clone(),
        mode: Mode::Intra,
    })
}

/// Prefix-sums each scan line. Returns raw `T` values (not clamped), zero at
/// empty pixels.
pub fn intra_reconstruct_values<T: Real>(residual: &ResidualImage<T>, side: &IntraSideInfo) -> Result<Vec<T>> {
    let dims = (residual.rows, residual.cols);
    let mut out = vec![T::zero(); dims.0 * dims.1];
    let mut buf = Vec::with_capacity(2 * MACROBLOCK);
    for_each_leaf(side, dims, |dir, leaf| {
        for_each_scan_line(dir, leaf, dims, &mut buf, |line| {
            let mut acc: Option<T> = None;
            for &i in line {
                if residual.mask[i] {
                    let v = match acc {
                        Some(a) => a + residual.values[i],
                        None => residual.values[i],
                    };
                    out[i] = v;
                    acc = Some(v);
                }
            }
        });
    })?;
    Ok(out)
}

/// Inverse of [`intra_predict`] onto a range image with the residual's mask.
///
/// Values are cast to `f32`; an unmodified residual reproduces the source
/// image bit for bit.
pub fn intra_reconstruct<T: Real>(
    residual: &ResidualImage<T>,
    side: &IntraSideInfo,
    params: &crate::projection::ProjectionParams,
) -> Result<RangeImage> {
    if params.rows != residual.rows || params.cols != residual.cols {
        return Err(Error::MalformedQuadtree("residual and projection dimensions differ".into()));
    }
    let values = intra_reconstruct_values(residual, side)?;
    Ok(RangeImage {
        values: values
            .iter()
            .zip(&residual.mask)
            .map(|(v, &m)| if m { v.to_f32().unwrap_or(0.0) } else { 0.0 })
            .collect(),
        mask: residual.mask.clone(),
        params: params.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::ProjectionParams;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(rows: usize, cols: usize) -> ProjectionParams {
        ProjectionParams::new(rows, cols, -20.0, 2.0, 200.0).unwrap()
    }

    fn filled(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f32) -> RangeImage {
        let mut img = RangeImage::empty(params(rows, cols));
        for r in 0..rows {
            for c in 0..cols {
                img.set(r, c, f(r, c));
            }
        }
        img
    }

    fn random_image(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fill: f64) -> RangeImage {
        let mut img = RangeImage::empty(params(rows, cols));
        for i in 0..rows * cols {
            if rng.gen_bool(fill) {
                img.values[i] = rng.gen_range(0.5f32..150.0);
                img.mask[i] = true;
            }
        }
        img
    }

    #[test]
    fn constant_image_has_zero_gradients() {
        let img = filled(16, 32, |_, _| 10.0);
        assert!(pixel_gradients(&img).iter().all(|g| *g == [0.0, 0.0]));
    }

    #[test]
    fn column_ramp_gradient() {
        let img = filled(16, 32, |_, c| c as f32);
        let g = pixel_gradients(&img);
        for r in 1..15 {
            for c in 1..31 {
                assert_eq!(g[r * 32 + c], [0.0, 1.0]);
            }
        }
    }

    #[test]
    fn isolated_pixel_has_zero_gradient() {
        let mut img = RangeImage::empty(params(8, 8));
        img.set(4, 4, 9.0);
        assert_eq!(pixel_gradients(&img)[4 * 8 + 4], [0.0, 0.0]);
        // Neighbour on one side only: still (0, 0) at an interior pixel.
        img.set(4, 5, 10.0);
        assert_eq!(pixel_gradients(&img)[4 * 8 + 4], [0.0, 0.0]);
    }

    #[test]
    fn ramp_direction_is_vertical() {
        let cfg = IntraConfig::default();
        let g = vec![[0.0, 1.0]; 256];
        assert_eq!(dominant_direction(&g, &cfg), Some(Direction::Vertical));
        let g = vec![[1.0, 0.0]; 256];
        assert_eq!(dominant_direction(&g, &cfg), Some(Direction::Horizontal));
        let g = vec![[1.0, 1.0]; 256];
        assert_eq!(dominant_direction(&g, &cfg), Some(Direction::DiagonalUp));
        let g = vec![[1.0, -1.0]; 256];
        assert_eq!(dominant_direction(&g, &cfg), Some(Direction::DiagonalDown));
    }

    #[test]
    fn flat_and_mixed_blocks() {
        let cfg = IntraConfig { tau: 0.6, g_min: 0.05 };
        assert_eq!(dominant_direction(&vec![[0.0, 0.0]; 64], &cfg), None);
        assert_eq!(classify(&vec![[0.0, 0.0]; 64], &cfg), BlockClass::Flat);
        let mut g = vec![[0.0, 1.0]; 50];
        g.extend(vec![[1.0, 0.0]; 50]);
        assert_eq!(dominant_direction(&g, &cfg), None);
        assert_eq!(classify(&g, &cfg), BlockClass::Mixed);
    }

    #[test]
    fn constant_image_residual() {
        let img = filled(32, 32, |_, _| 10.0);
        let (res, side) = intra_predict::<f64>(&img, &IntraConfig::default());
        assert!(side.trees.iter().all(|t| *t == QuadNode::Leaf(Direction::Horizontal)));
        for r in 0..32 {
            for c in 0..32 {
                let want = if c % 16 == 0 { 10.0 } else { 0.0 };
                assert_eq!(res.values[r * 32 + c], want);
            }
        }
        let back = intra_reconstruct(&res, &side, &img.params).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn column_ramp_codes_vertically() {
        let img = filled(16, 16, |_, c| 5.0 + c as f32);
        let (res, side) = intra_predict::<f64>(&img, &IntraConfig::default());
        assert_eq!(side.trees, vec![QuadNode::Leaf(Direction::Vertical)]);
        for r in 1..16 {
            for c in 0..16 {
                assert_eq!(res.values[r * 16 + c], 0.0);
            }
        }
    }

    #[test]
    fn zero_residual_reconstructs_zero() {
        let p = params(16, 32);
        let res = ResidualImage::<f64> {
            rows: 16,
            cols: 32,
            values: vec![0.0; 512],
            mask: vec![true; 512],
            mode: Mode::Intra,
        };
        let side = IntraSideInfo::all_horizontal(16, 32);
        let img = intra_reconstruct(&res, &side, &p).unwrap();
        assert!(img.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn perturbation_spreads_along_one_line() {
        let img = filled(16, 16, |r, c| 1.0 + (r * 3 + c) as f32 * 0.25);
        let side = IntraSideInfo::all_horizontal(16, 16);
        let mut res = intra_residual::<f64>(&img, &side).unwrap();
        let base = intra_reconstruct_values(&res, &side).unwrap();
        res.values[5 * 16] += 0.125;
        let moved = intra_reconstruct_values(&res, &side).unwrap();
        for r in 0..16 {
            for c in 0..16 {
                let d = moved[r * 16 + c] - base[r * 16 + c];
                assert_eq!(d, if r == 5 { 0.125 } else { 0.0 });
            }
        }
    }

    #[test]
    fn random_round_trip_all_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..40 {
            let (rows, cols) = [(16, 16), (32, 48), (20, 37)][trial % 3];
            let img = random_image(&mut rng, rows, cols, 0.8);
            let (res, side) = intra_predict::<f64>(&img, &IntraConfig::default());
            assert_eq!(intra_reconstruct(&res, &side, &img.params).unwrap(), img);
            // Every direction on every leaf size must invert as well.
            for d in Direction::ALL {
                let leaf = |d| QuadNode::Leaf(d);
                let tree = QuadNode::Split(Box::new([
                    leaf(d),
                    QuadNode::Split(Box::new([leaf(d), leaf(Direction::Vertical), leaf(d), leaf(d)])),
                    leaf(Direction::DiagonalUp),
                    leaf(d),
                ]));
                let side = IntraSideInfo {
                    mb_rows: rows.div_ceil(16),
                    mb_cols: cols.div_ceil(16),
                    trees: vec![tree; rows.div_ceil(16) * cols.div_ceil(16)],
                };
                let res = intra_residual::<f64>(&img, &side).unwrap();
                assert_eq!(intra_reconstruct(&res, &side, &img.params).unwrap(), img);
            }
        }
    }

    #[test]
    fn scan_lines_cover_each_pixel_once() {
        for d in Direction::ALL {
            for (r0, c0, size, rows, cols) in [(0, 0, 16, 16, 16), (0, 8, 8, 10, 13), (4, 4, 4, 6, 7)] {
                let mut seen = vec![0u8; rows * cols];
                let mut buf = Vec::new();
                for_each_scan_line(d, (r0, c0, size), (rows, cols), &mut buf, |line| {
                    for &i in line {
                        seen[i] += 1;
                    }
                });
                for r in 0..rows {
                    for c in 0..cols {
                        let inside = r >= r0 && r < r0 + size && c >= c0 && c < c0 + size;
                        assert_eq!(seen[r * cols + c], u8::from(inside), "{d:?} ({r},{c})");
                    }
                }
            }
        }
    }

    #[test]
    fn malformed_side_info() {
        let img = filled(16, 32, |_, _| 1.0);
        let side = IntraSideInfo::all_horizontal(16, 16);
        assert!(matches!(intra_residual::<f64>(&img, &side), Err(Error::MalformedQuadtree(_))));
        let leaf = QuadNode::Leaf(Direction::Horizontal);
        let too_deep = QuadNode::Split(Box::new([
            QuadNode::Split(Box::new([
                QuadNode::Split(Box::new([leaf.clone(), leaf.clone(), leaf.clone(), leaf.clone()])),
                leaf.clone(),
                leaf.clone(),
                leaf.clone(),
            ])),
            leaf.clone(),
            leaf.clone(),
            leaf.clone(),
        ]));
        let side = IntraSideInfo {
            mb_rows: 1,
            mb_cols: 1,
            trees: vec![too_deep],
        };
        assert!(side.trees[0].leaves(MACROBLOCK).is_err());
    }

    #[test]
    fn side_info_bit_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let img = random_image(&mut rng, 64, 128, 0.9);
            let (_, side) = intra_predict::<f64>(&img, &IntraConfig::default());
            assert!(side.raw_bits() <= (64 / 16) * (128 / 16) * (1 + 4 * (1 + 4 * 2)));
        }
    }
}

//! Lossless coding of quantized coefficients, occupancy masks and intra
//! side info.
//!
//! Coefficients are coded per subband in [`BANDS`] order. Each band starts
//! with an all-zero flag; otherwise the band is scanned in Morton order and
//! coded as (zero run, magnitude - 1, sign) triples, and a run that reaches
//! the end of the band terminates it. Every band has its own contexts.

pub mod coder;

pub use coder::{BitModel, BitSink, CostCounter, Decoder, Encoder, ExpGolomb, COST_SHIFT};

use crate::adwt::{Band, QuantizedPyramid, SubbandPyramid, BANDS, BLOCK};
use crate::error::{Error, Result};
use crate::prediction::intra::{Direction, IntraSideInfo, QuadNode, MACROBLOCK, MIN_LEAF};
use crate::projection::Mask;
use std::sync::OnceLock;

/// Morton (z-order) index `i` of an `n x n` grid to `(row, col)`.
/// Even bits of `i` give the column, odd bits the row.
pub fn morton_to_rc(i: usize) -> (usize, usize) {
    let (mut r, mut c) = (0, 0);
    for b in 0..16 {
        c |= ((i >> (2 * b)) & 1) << b;
        r |= ((i >> (2 * b + 1)) & 1) << b;
    }
    (r, c)
}

/// Block-layout indices of each stored band in Morton scan order.
fn scan_orders() -> &'static [Vec<usize>; 10] {
    static ORDERS: OnceLock<[Vec<usize>; 10]> = OnceLock::new();
    ORDERS.get_or_init(|| {
        BANDS.map(|b: Band| {
            let (r0, c0) = b.origin();
            let n = b.size();
            (0..n * n)
                .map(|i| {
                    let (r, c) = morton_to_rc(i);
                    (r0 + r) * BLOCK + c0 + c
                })
                .collect()
        })
    })
}

#[derive(Clone, Debug, Default)]
struct BandContexts {
    all_zero: BitModel,
    run: ExpGolomb,
    magnitude: ExpGolomb,
    sign: BitModel,
}

/// Coefficient contexts, one set per stored band.
#[derive(Clone, Debug)]
pub struct CoeffContexts {
    bands: Vec<BandContexts>,
}

impl Default for CoeffContexts {
    fn default() -> Self {
        Self {
            bands: vec![BandContexts::default(); BANDS.len()],
        }
    }
}

impl CoeffContexts {
    pub fn encode(&mut self, enc: &mut impl BitSink, q: &QuantizedPyramid) {
        for (ctx, order) in self.bands.iter_mut().zip(scan_orders()) {
            let zero = order.iter().all(|&i| q.indices[i] == 0);
            enc.put(zero, &mut ctx.all_zero);
            if zero {
                continue;
            }
            let mut run = 0u32;
            for &i in order {
                let v = q.indices[i];
                if v == 0 {
                    run += 1;
                    continue;
                }
                ctx.run.encode(enc, run);
                ctx.magnitude.encode(enc, v.unsigned_abs() - 1);
                enc.put(v < 0, &mut ctx.sign);
                run = 0;
            }
            if run > 0 {
                ctx.run.encode(enc, run);
            }
        }
    }

    /// Ideal cost of coding `q` next, in `2^-16` bits, without touching
    /// the contexts.
    pub fn cost(&self, q: &QuantizedPyramid) -> u64 {
        let mut cc = CostCounter::default();
        self.clone().encode(&mut cc, q);
        cc.cost
    }

    pub fn decode(&mut self, dec: &mut Decoder) -> Result<QuantizedPyramid> {
        let mut q = QuantizedPyramid::zeros();
        for (ctx, order) in self.bands.iter_mut().zip(scan_orders()) {
            if dec.decode(&mut ctx.all_zero)? {
                continue;
            }
            let n = order.len();
            let mut pos = 0usize;
            while pos < n {
                let run = ctx.run.decode(dec)? as usize;
                if run > n - pos {
                    return Err(Error::corrupt("zero run overflows subband"));
                }
                pos += run;
                if pos == n {
                    break;
                }
                let mag = ctx.magnitude.decode(dec)? as u64 + 1;
                let neg = dec.decode(&mut ctx.sign)?;
                let v = if neg { -(mag as i64) } else { mag as i64 };
                q.indices[order[pos]] =
                    i32::try_from(v).map_err(|_| Error::corrupt("coefficient magnitude overflow"))?;
                pos += 1;
            }
        }
        Ok(q)
    }
}

/// Stand-alone coding of one block with fresh contexts.
pub fn encode_block(q: &QuantizedPyramid) -> Vec<u8> {
    let mut enc = Encoder::new();
    CoeffContexts::default().encode(&mut enc, q);
    enc.finish()
}

pub fn decode_block(bytes: &[u8]) -> Result<QuantizedPyramid> {
    let mut dec = Decoder::new(bytes)?;
    let q = CoeffContexts::default().decode(&mut dec)?;
    dec.finish()?;
    Ok(q)
}

/// All blocks of a frame in one coder stream; contexts carry over between
/// blocks and start fresh with every frame.
pub fn encode_blocks(blocks: &[QuantizedPyramid]) -> Vec<u8> {
    let mut enc = Encoder::new();
    let mut ctx = CoeffContexts::default();
    blocks.iter().for_each(|q| ctx.encode(&mut enc, q));
    enc.finish()
}

pub fn decode_blocks(bytes: &[u8], count: usize) -> Result<Vec<QuantizedPyramid>> {
    let mut dec = Decoder::new(bytes)?;
    let mut ctx = CoeffContexts::default();
    let out = (0..count).map(|_| ctx.decode(&mut dec)).collect::<Result<Vec<_>>>()?;
    dec.finish()?;
    Ok(out)
}

/// Row-major run lengths, alternating empty/occupied and starting with an
/// empty run (possibly of length zero).
pub fn encode_mask(mask: &[bool]) -> Vec<u8> {
    let mut enc = Encoder::new();
    let mut models = [ExpGolomb::default(), ExpGolomb::default()];
    let mut state = false;
    let mut run = 0u32;
    for &m in mask {
        if m == state {
            run += 1;
        } else {
            models[state as usize].encode(&mut enc, run);
            state = m;
            run = 1;
        }
    }
    if run > 0 || mask.is_empty() {
        models[state as usize].encode(&mut enc, run);
    }
    enc.finish()
}

pub fn decode_mask(bytes: &[u8], len: usize) -> Result<Mask> {
    let mut dec = Decoder::new(bytes)?;
    let mut models = [ExpGolomb::default(), ExpGolomb::default()];
    let mut mask = Vec::with_capacity(len);
    let mut state = false;
    let mut first = true;
    loop {
        let run = models[state as usize].decode(&mut dec)? as usize;
        if run == 0 && !first {
            return Err(Error::corrupt("empty mask run"));
        }
        if run > len - mask.len() {
            return Err(Error::corrupt("mask run overflows image"));
        }
        mask.resize(mask.len() + run, state);
        if mask.len() == len {
            break;
        }
        first = false;
        state = !state;
    }
    dec.finish()?;
    Ok(mask)
}

#[derive(Clone, Debug, Default)]
struct SideContexts {
    /// Split flag per node size (16, 8).
    split: [BitModel; 2],
    /// Direction code, MSB then LSB given the MSB.
    dir: [BitModel; 3],
}

impl SideContexts {
    fn encode_node(&mut self, enc: &mut Encoder, node: &QuadNode, size: usize, depth: usize) {
        if size > MIN_LEAF {
            enc.encode(matches!(node, QuadNode::Split(_)), &mut self.split[depth]);
        }
        match node {
            QuadNode::Leaf(d) => {
                let c = d.code();
                let hi = c >> 1 == 1;
                enc.encode(hi, &mut self.dir[0]);
                enc.encode(c & 1 == 1, &mut self.dir[1 + hi as usize]);
            }
            QuadNode::Split(ch) => {
                for c in ch.iter() {
                    self.encode_node(enc, c, size / 2, depth + 1);
                }
            }
        }
    }

    fn decode_node(&mut self, dec: &mut Decoder, size: usize, depth: usize) -> Result<QuadNode> {
        let split = size > MIN_LEAF && dec.decode(&mut self.split[depth])?;
        if split {
            let mut ch = Vec::with_capacity(4);
            for _ in 0..4 {
                ch.push(self.decode_node(dec, size / 2, depth + 1)?);
            }
            let ch: [QuadNode; 4] = ch.try_into().expect("four children");
            return Ok(QuadNode::Split(Box::new(ch)));
        }
        let hi = dec.decode(&mut self.dir[0])?;
        let lo = dec.decode(&mut self.dir[1 + hi as usize])?;
        let code = ((hi as u8) << 1) | lo as u8;
        Ok(QuadNode::Leaf(Direction::from_code(code).expect("2-bit code")))
    }
}

/// Preorder quadtrees: a split flag for nodes larger than the minimum leaf,
/// then either four children (TL, TR, BL, BR) or a 2-bit direction.
pub fn encode_side_info(side: &IntraSideInfo) -> Vec<u8> {
    let mut enc = Encoder::new();
    let mut ctx = SideContexts::default();
    for t in &side.trees {
        ctx.encode_node(&mut enc, t, MACROBLOCK, 0);
    }
    enc.finish()
}

pub fn decode_side_info(bytes: &[u8], mb_rows: usize, mb_cols: usize) -> Result<IntraSideInfo> {
    let mut dec = Decoder::new(bytes)?;
    let mut ctx = SideContexts::default();
    let trees = (0..mb_rows * mb_cols)
        .map(|_| ctx.decode_node(&mut dec, MACROBLOCK, 0))
        .collect::<Result<Vec<_>>>()?;
    dec.finish()?;
    Ok(IntraSideInfo { mb_rows, mb_cols, trees })
}

/// Number of coefficients in the pyramid layout that belong to `band`.
pub fn band_len(band: Band) -> usize {
    SubbandPyramid::<f64>::band_indices(band).count()
}

//! Carry-less 32-bit binary arithmetic coder with adaptive bit models.
//!
//! The interval `[x1, x2]` is split at `x1 + (x2 - x1 >> 12) * p` where
//! `p` is the 12-bit probability of a one. Leading bytes are shifted out
//! once `x1` and `x2` agree on them. The encoder flushes all four bytes of
//! `x1`, so the decoder consumes exactly the bytes the encoder produced.

use crate::error::{Error, Result};
use std::sync::OnceLock;

const PROB_BITS: u32 = 12;
/// Adaptation slows down from `1/2` to `1/(RATE_LIMIT + 2)`.
const RATE_LIMIT: u16 = 30;

/// Adaptive probability that the next bit is one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BitModel {
    p: u16,
    n: u16,
}

impl Default for BitModel {
    fn default() -> Self {
        Self { p: 1 << 15, n: 0 }
    }
}

impl BitModel {
    fn p12(self) -> u32 {
        ((self.p >> 4) as u32).clamp(1, (1 << PROB_BITS) - 1)
    }

    fn update(&mut self, bit: bool) {
        let target: i32 = if bit { 65535 } else { 0 };
        let p = self.p as i32;
        self.p = (p + (target - p) / (self.n as i32 + 2)) as u16;
        if self.n < RATE_LIMIT {
            self.n += 1;
        }
    }
}

/// Fixed-point fraction bits of [`cost_of`].
pub const COST_SHIFT: u32 = 16;

/// `-log2(p / 4096)` in units of `2^-16` bits, for `p` in `0..4096`.
fn cost_table() -> &'static [u32] {
    static TABLE: OnceLock<Vec<u32>> = OnceLock::new();
    TABLE.get_or_init(|| {
        (0..1u32 << PROB_BITS)
            .map(|p| {
                let p = p.max(1) as f64 / (1u32 << PROB_BITS) as f64;
                (-p.log2() * (1u64 << COST_SHIFT) as f64).round() as u32
            })
            .collect()
    })
}

/// Ideal cost of coding `bit` with `m`, in `2^-16` bits.
pub fn cost_of(bit: bool, m: BitModel) -> u32 {
    let p1 = m.p12();
    cost_table()[if bit { p1 } else { (1 << PROB_BITS) - p1 } as usize]
}

/// Destination for modelled binary decisions.
pub trait BitSink {
    fn put(&mut self, bit: bool, m: &mut BitModel);
}

/// Counts the ideal code length without producing bytes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CostCounter {
    /// Accumulated cost in `2^-16` bits.
    pub cost: u64,
}

impl CostCounter {
    pub fn bits(&self) -> f64 {
        self.cost as f64 / (1u64 << COST_SHIFT) as f64
    }
}

impl BitSink for CostCounter {
    fn put(&mut self, bit: bool, m: &mut BitModel) {
        self.cost += cost_of(bit, *m) as u64;
        m.update(bit);
    }
}

fn split(x1: u32, x2: u32, m: BitModel) -> u32 {
    x1 + ((x2 - x1) >> PROB_BITS) * m.p12()
}

#[derive(Debug)]
pub struct Encoder {
    x1: u32,
    x2: u32,
    out: Vec<u8>,
    cost: u64,
}

impl Default for Encoder {
    fn default() -> Self {
        Self::new()
    }
}

impl Encoder {
    pub fn new() -> Self {
        Self {
            x1: 0,
            x2: u32::MAX,
            out: Vec::new(),
            cost: 0,
        }
    }

    pub fn encode(&mut self, bit: bool, m: &mut BitModel) {
        self.cost += cost_of(bit, *m) as u64;
        let xmid = split(self.x1, self.x2, *m);
        if bit {
            self.x2 = xmid;
        } else {
            self.x1 = xmid + 1;
        }
        m.update(bit);
        while (self.x1 ^ self.x2) & 0xff00_0000 == 0 {
            self.out.push((self.x2 >> 24) as u8);
            self.x1 <<= 8;
            self.x2 = (self.x2 << 8) | 0xff;
        }
    }

    /// Ideal code length of everything coded so far, in `2^-16` bits.
    pub fn cost(&self) -> u64 {
        self.cost
    }

    /// Bytes emitted so far, excluding the final flush.
    pub fn len(&self) -> usize {
        self.out.len()
    }

    pub fn is_empty(&self) -> bool {
        self.out.is_empty()
    }

    pub fn finish(mut self) -> Vec<u8> {
        self.out.extend_from_slice(&self.x1.to_be_bytes());
        self.out
    }
}

impl BitSink for Encoder {
    fn put(&mut self, bit: bool, m: &mut BitModel) {
        self.encode(bit, m);
    }
}

#[derive(Debug)]
pub struct Decoder<'a> {
    x1: u32,
    x2: u32,
    x: u32,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(buf: &'a [u8]) -> Result<Self> {
        if buf.len() < 4 {
            return Err(Error::corrupt("coder stream shorter than 4 bytes"));
        }
        Ok(Self {
            x1: 0,
            x2: u32::MAX,
            x: u32::from_be_bytes([buf[0], buf[1], buf[2], buf[3]]),
            buf,
            pos: 4,
        })
    }

    pub fn decode(&mut self, m: &mut BitModel) -> Result<bool> {
        let xmid = split(self.x1, self.x2, *m);
        let bit = self.x <= xmid;
        if bit {
            self.x2 = xmid;
        } else {
            self.x1 = xmid + 1;
        }
        m.update(bit);
        while (self.x1 ^ self.x2) & 0xff00_0000 == 0 {
            let Some(&b) = self.buf.get(self.pos) else {
                return Err(Error::corrupt("coder read past end of stream"));
            };
            self.pos += 1;
            self.x1 <<= 8;
            self.x2 = (self.x2 << 8) | 0xff;
            self.x = (self.x << 8) | b as u32;
        }
        Ok(bit)
    }

    /// Fails unless every byte was consumed.
    pub fn finish(self) -> Result<()> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(Error::corrupt(format!("{} trailing bytes", self.buf.len() - self.pos)))
        }
    }
}

const EG_MAX_PREFIX: usize = 32;

/// Adaptive order-0 Exp-Golomb binarization of a `u32`.
///
/// `v + 1` has `k + 1` significant bits: `k` one-bits then a zero form the
/// prefix (one model per position), followed by the `k` low bits of `v + 1`
/// MSB first (one model per `(k, bit position)`).
#[derive(Clone, Debug)]
pub struct ExpGolomb {
    prefix: [BitModel; EG_MAX_PREFIX + 1],
    suffix: Vec<BitModel>,
}

impl Default for ExpGolomb {
    fn default() -> Self {
        Self {
            prefix: [BitModel::default(); EG_MAX_PREFIX + 1],
            suffix: vec![BitModel::default(); (EG_MAX_PREFIX + 1) * EG_MAX_PREFIX],
        }
    }
}

impl ExpGolomb {
    pub fn encode(&mut self, enc: &mut impl BitSink, v: u32) {
        let x = v as u64 + 1;
        let k = 63 - x.leading_zeros() as usize;
        for i in 0..k {
            enc.put(true, &mut self.prefix[i]);
        }
        enc.put(false, &mut self.prefix[k]);
        for j in (0..k).rev() {
            let bit = (x >> j) & 1 == 1;
            enc.put(bit, &mut self.suffix[k * EG_MAX_PREFIX + j]);
        }
    }

    pub fn decode(&mut self, dec: &mut Decoder) -> Result<u32> {
        let mut k = 0;
        while dec.decode(&mut self.prefix[k])? {
            k += 1;
            if k > EG_MAX_PREFIX {
                return Err(Error::corrupt("Exp-Golomb prefix too long"));
            }
        }
        let mut x: u64 = 1;
        for j in (0..k).rev() {
            x = (x << 1) | dec.decode(&mut self.suffix[k * EG_MAX_PREFIX + j])? as u64;
        }
        u32::try_from(x - 1).map_err(|_| Error::corrupt("Exp-Golomb value overflow"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bits_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for p in [0.01, 0.3, 0.5, 0.97] {
            let bits: Vec<bool> = (0..5000).map(|_| rng.gen_bool(p)).collect();
            let mut enc = Encoder::new();
            let mut m = BitModel::default();
            bits.iter().for_each(|&b| enc.encode(b, &mut m));
            let bytes = enc.finish();
            let mut dec = Decoder::new(&bytes).unwrap();
            let mut m = BitModel::default();
            for &b in &bits {
                assert_eq!(dec.decode(&mut m).unwrap(), b);
            }
            dec.finish().unwrap();
        }
    }

    #[test]
    fn skewed_source_compresses() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = 0.05;
        let n = 20000;
        let mut enc = Encoder::new();
        let mut m = BitModel::default();
        for _ in 0..n {
            enc.encode(rng.gen_bool(p), &mut m);
        }
        let bits = enc.finish().len() as f64 * 8.0;
        let h = -(p * p.log2() + (1.0 - p) * (1.0 - p).log2()) * n as f64;
        assert!(bits < 1.1 * h, "{bits} vs {h}");
    }

    #[test]
    fn cost_counter_tracks_output_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let vals: Vec<u32> = (0..3000).map(|_| rng.gen_range(0..40)).collect();
        let mut enc = Encoder::new();
        let mut cc = CostCounter::default();
        let (mut a, mut b) = (ExpGolomb::default(), ExpGolomb::default());
        for &v in &vals {
            a.encode(&mut enc, v);
            b.encode(&mut cc, v);
        }
        assert_eq!(enc.cost(), cc.cost);
        let real = enc.finish().len() as f64 * 8.0;
        assert!((real - cc.bits()).abs() < 0.01 * real + 40.0, "{real} vs {}", cc.bits());
    }

    #[test]
    fn exp_golomb_round_trip() {
        let values = [0u32, 1, 2, 3, 7, 8, 255, 65536, u32::MAX - 1, u32::MAX];
        let mut enc = Encoder::new();
        let mut eg = ExpGolomb::default();
        values.iter().for_each(|&v| eg.encode(&mut enc, v));
        let bytes = enc.finish();
        let mut dec = Decoder::new(&bytes).unwrap();
        let mut eg = ExpGolomb::default();
        for &v in &values {
            assert_eq!(eg.decode(&mut dec).unwrap(), v);
        }
        dec.finish().unwrap();
    }

    #[test]
    fn truncation_is_detected() {
        let mut enc = Encoder::new();
        let mut eg = ExpGolomb::default();
        for v in 0..200 {
            eg.encode(&mut enc, v * 37);
        }
        let bytes = enc.finish();
        let cut = &bytes[..bytes.len() / 2];
        let mut dec = Decoder::new(cut).unwrap();
        let mut eg = ExpGolomb::default();
        let r: Result<Vec<u32>> = (0..200).map(|_| eg.decode(&mut dec)).collect();
        assert!(matches!(r, Err(Error::CorruptStream(_))));
        assert!(Decoder::new(&[1, 2]).is_err());
    }
}

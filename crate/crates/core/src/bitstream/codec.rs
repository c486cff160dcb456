//! Frame encoder and decoder sharing one reconstruction path.
//!
//! Payload layout (little-endian):
//!
//! ```text
//! u32            original point count
//! Inter: 12 x f32 pose          Intra: u32 len + side info stream
//! u32 len + mask stream
//! per non-empty 64x64 block: 10 x u16 step codes
//! u32 len + coefficient stream (all non-empty blocks, shared contexts)
//! ```

use crate::adwt::{dequantize, quantize, BlockTransform, QuantMap, QuantizedPyramid, BLOCK};
use crate::bitstream::rc::{coeff_mse, RateController, Trial};
use crate::bitstream::{put_chunk, ByteReader, FramePacket, StreamHeader, PACKET_HEADER_BYTES};
use crate::entropy::{
    decode_blocks, decode_mask, decode_side_info, encode_mask, encode_side_info, CoeffContexts, Encoder, COST_SHIFT,
};
use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;
use crate::prediction::intra::{intra_reconstruct_values, MACROBLOCK};
use crate::prediction::{
    predict_image, select_mode, IntraSideInfo, KeyframeReason, Mode, ModeConfig, Pose, PoseSource, ResidualImage,
    SideInfo,
};
use crate::projection::{back_project, project, Mask, ProjectionParams, RangeImage};
use crate::ratecontrol::{allocate_block_bits, bits_for_bpp, BlockWeight, Dataset, FrameBudget, RcConfig};
use crate::scalar::Real;

/// Smallest reconstructed range, meters.
pub const MIN_RANGE: f32 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct CodecConfig<T> {
    pub params: ProjectionParams,
    pub transform: BlockTransform,
    /// Subband step scaling of the adaptive transform.
    pub adwt_alpha: T,
    /// Base step in constant-Q mode.
    pub q: T,
    pub mode: ModeConfig,
    pub rc: RcConfig<T>,
    /// Keyframe period: at most `k_max - 1` predicted frames follow an
    /// intra frame. 0 disables.
    pub k_max: usize,
    /// Recorded in the stream header.
    pub rate_control: bool,
}

impl<T: Real> Default for CodecConfig<T> {
    fn default() -> Self {
        Self {
            params: ProjectionParams::default(),
            transform: BlockTransform::AdaptiveDwt,
            adwt_alpha: T::lit(0.53),
            q: T::lit(0.05),
            mode: ModeConfig::default(),
            rc: RcConfig::default(),
            k_max: 64,
            rate_control: false,
        }
    }
}

impl<T: Real> CodecConfig<T> {
    pub fn with_params(params: ProjectionParams) -> Self {
        Self {
            params,
            ..Self::default()
        }
    }

    /// Parses the projection keys plus `transform`, `q`, `adwt_alpha`,
    /// `t_key`, `k_max`, `tau`, `g_min`, `dataset`, `b_min`,
    /// `refit_interval`, `local_refit`, `carry_overshoot` and `block_weight`.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let mut cfg = Self::with_params(ProjectionParams::from_config_str(text)?);
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            let Some((key, value)) = line.split_once('=').or_else(|| line.split_once(':')) else {
                continue;
            };
            let (key, value) = (key.trim(), value.trim());
            let bad = || Error::Config(format!("line {}: bad value `{value}` for `{key}`", lineno + 1));
            let num = || value.parse::<f64>().map_err(|_| bad());
            let int = || value.parse::<usize>().map_err(|_| bad());
            let flag = || value.parse::<bool>().map_err(|_| bad());
            match key {
                "transform" => cfg.transform = BlockTransform::from_name(value).ok_or_else(bad)?,
                "q" => cfg.q = T::lit(num()?),
                "adwt_alpha" => cfg.adwt_alpha = T::lit(num()?),
                "t_key" => cfg.mode.t_key = num()?,
                "tau" => cfg.mode.intra.tau = num()?,
                "g_min" => cfg.mode.intra.g_min = num()?,
                "k_max" => cfg.k_max = int()?,
                "dataset" => cfg.rc.dataset = value.parse::<Dataset>()?,
                "b_min" => cfg.rc.b_min = int()? as i64,
                "refit_interval" => cfg.rc.refit_interval = int()?,
                "local_refit" => cfg.rc.local_refit = flag()?,
                "carry_overshoot" => cfg.rc.carry_overshoot = flag()?,
                "block_weight" => cfg.rc.weight = value.parse::<BlockWeight>()?,
                _ => {}
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        let lim = self.rc.limits;
        if !(lim.q_min > T::zero() && lim.q_min < lim.q_max && lim.q_max.is_finite()) {
            return Err(Error::Config("step limits must satisfy 0 < q_min < q_max".into()));
        }
        if !(self.q > T::zero() && self.q.is_finite()) {
            return Err(Error::Config(format!("step q = {} must be positive", self.q)));
        }
        if !(self.adwt_alpha > T::zero() && self.adwt_alpha.is_finite()) {
            return Err(Error::Config("adwt_alpha must be positive".into()));
        }
        Ok(())
    }

    pub fn header(&self) -> StreamHeader {
        StreamHeader::new(
            self.params.clone(),
            self.transform,
            self.rc.limits.q_min.to_f64_lossy(),
            self.rate_control,
        )
    }
}

/// State both ends evolve identically.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CodecState {
    pub prev_recon: Option<PointCloud>,
    pub frame_counter: u32,
    /// Frames since the last intra frame.
    pub since_key: usize,
}

impl CodecState {
    fn advance(&mut self, mode: Mode, recon: PointCloud) {
        self.prev_recon = Some(recon);
        self.frame_counter = self.frame_counter.wrapping_add(1);
        self.since_key = match mode {
            Mode::Intra => 0,
            Mode::Inter => self.since_key + 1,
        };
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameStats {
    pub frame_index: u32,
    pub mode: Mode,
    pub reason: Option<KeyframeReason>,
    pub pose: Option<Pose>,
    /// Points in the input cloud.
    pub points: usize,
    pub bytes: usize,
    /// `bytes * 8 / points`.
    pub bpp: f64,
    pub target_bpp: Option<f64>,
    /// Frame budget after carry-over, when rate controlled.
    pub target_bits: Option<i64>,
    /// Everything except the coefficient stream, in bits.
    pub overhead_bits: usize,
    pub blocks: usize,
    /// Mean base step over coded blocks.
    pub mean_q: f64,
    /// Points that did not fit the projection.
    pub dropped: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedFrame {
    pub packet: FramePacket,
    /// Projected input.
    pub original: RangeImage,
    /// What the decoder will reconstruct.
    pub recon: RangeImage,
    pub stats: FrameStats,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodedFrame {
    pub frame_index: u32,
    pub mode: Mode,
    pub points: usize,
    pub image: RangeImage,
    pub cloud: PointCloud,
}

/// bpp against the original point count; a cloud with no points counts as one.
pub fn bits_per_point(bytes: usize, points: usize) -> f64 {
    bytes as f64 * 8.0 / points.max(1) as f64
}

/// A non-empty 64x64 tile.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Tile {
    /// Position in the row-major tile grid.
    index: usize,
    r0: usize,
    c0: usize,
    occupied: usize,
}

fn tile_grid(rows: usize, cols: usize) -> (usize, usize) {
    (rows.div_ceil(BLOCK), cols.div_ceil(BLOCK))
}

fn tiles(mask: &Mask, rows: usize, cols: usize) -> Vec<Tile> {
    let (tr, tc) = tile_grid(rows, cols);
    let mut out = Vec::new();
    for br in 0..tr {
        for bc in 0..tc {
            let (r0, c0) = (br * BLOCK, bc * BLOCK);
            let occupied = (r0..(r0 + BLOCK).min(rows))
                .map(|r| mask[r * cols + c0..r * cols + (c0 + BLOCK).min(cols)].iter().filter(|&&m| m).count())
                .sum();
            if occupied > 0 {
                out.push(Tile {
                    index: br * tc + bc,
                    r0,
                    c0,
                    occupied,
                });
            }
        }
    }
    out
}

/// Zero-padded tile of a row-major image.
fn gather<T: Real>(values: &[T], rows: usize, cols: usize, t: &Tile) -> Vec<T> {
    let mut out = vec![T::zero(); BLOCK * BLOCK];
    for r in 0..BLOCK.min(rows - t.r0) {
        let w = BLOCK.min(cols - t.c0);
        let src = (t.r0 + r) * cols + t.c0;
        out[r * BLOCK..r * BLOCK + w].copy_from_slice(&values[src..src + w]);
    }
    out
}

/// Dequantized, inverse-transformed residual at occupied pixels.
fn synthesize_residual<T: Real>(
    transform: BlockTransform,
    tiles: &[Tile],
    maps: &[QuantMap<T>],
    coeffs: &[QuantizedPyramid],
    mask: &Mask,
    mode: Mode,
    params: &ProjectionParams,
) -> ResidualImage<T> {
    let (rows, cols) = (params.rows, params.cols);
    let mut values = vec![T::zero(); rows * cols];
    for ((t, map), q) in tiles.iter().zip(maps).zip(coeffs) {
        let block = transform.inverse(&dequantize(q, map));
        for r in 0..BLOCK.min(rows - t.r0) {
            for c in 0..BLOCK.min(cols - t.c0) {
                let i = (t.r0 + r) * cols + t.c0 + c;
                if mask[i] {
                    values[i] = block[r * BLOCK + c];
                }
            }
        }
    }
    ResidualImage {
        rows,
        cols,
        values,
        mask: mask.clone(),
        mode,
    }
}

enum Reference<'a> {
    Intra(&'a IntraSideInfo),
    Inter(&'a RangeImage),
}

fn range_ceiling(range_max: f64) -> f32 {
    let top = range_max as f32;
    if top as f64 > range_max {
        f32::from_bits(top.to_bits() - 1)
    } else {
        top
    }
}

/// Prediction plus decoded residual, clamped to `[MIN_RANGE, range_max]`.
fn reconstruct<T: Real>(reference: Reference, residual: &ResidualImage<T>, params: &ProjectionParams) -> Result<RangeImage> {
    let raw: Vec<T> = match reference {
        Reference::Intra(side) => intra_reconstruct_values(residual, side)?,
        Reference::Inter(pred) => residual
            .values
            .iter()
            .zip(pred.values.iter().zip(&pred.mask))
            .map(|(&v, (&p, &pm))| if pm { T::from(p).unwrap() + v } else { v })
            .collect(),
    };
    let top = range_ceiling(params.range_max);
    let values = raw
        .iter()
        .zip(&residual.mask)
        .map(|(v, &m)| {
            if !m {
                return 0.0;
            }
            match v.to_f32() {
                Some(x) if x >= MIN_RANGE => x.min(top),
                _ => MIN_RANGE,
            }
        })
        .collect();
    Ok(RangeImage {
        values,
        mask: residual.mask.clone(),
        params: params.clone(),
    })
}

pub struct StreamEncoder<T: Real> {
    cfg: CodecConfig<T>,
    state: CodecState,
    rc: RateController<T>,
}

impl<T: Real> StreamEncoder<T> {
    pub fn new(cfg: CodecConfig<T>) -> Result<Self> {
        cfg.validate()?;
        let (tr, tc) = tile_grid(cfg.params.rows, cfg.params.cols);
        Ok(Self {
            rc: RateController::new(cfg.rc, tr * tc),
            state: CodecState::default(),
            cfg,
        })
    }

    pub fn config(&self) -> &CodecConfig<T> {
        &self.cfg
    }

    pub fn header(&self) -> StreamHeader {
        self.cfg.header()
    }

    pub fn state(&self) -> &CodecState {
        &self.state
    }

    /// Bits owed to the channel by earlier frames.
    pub fn carry_bits(&self) -> i64 {
        self.rc.carry
    }

    /// Encodes one frame; `target_bpp` switches on rate control for it,
    /// otherwise every block uses the configured constant step.
    pub fn encode_frame(&mut self, cloud: &PointCloud, pose: PoseSource, target_bpp: Option<f64>) -> Result<EncodedFrame> {
        let cfg = &self.cfg;
        let params = &cfg.params;
        let q_min = cfg.rc.limits.q_min;
        let projected = project(cloud, params);
        let image = projected.image;
        let points = cloud.len();

        let forced = cfg.k_max > 0 && self.state.prev_recon.is_some() && self.state.since_key + 1 >= cfg.k_max;
        let prev = if forced { None } else { self.state.prev_recon.as_ref() };
        let mut decision = select_mode::<T>(&image, prev, pose, &cfg.mode);
        if forced {
            decision.reason = Some(KeyframeReason::Forced);
        }
        let mode = decision.mode;

        let mut payload = Vec::new();
        payload.extend_from_slice(&(points.min(u32::MAX as usize) as u32).to_le_bytes());
        let (reference, pose) = match &decision.side {
            SideInfo::Intra(side) => {
                put_chunk(&mut payload, &encode_side_info(side));
                (Reference::Intra(side), None)
            }
            SideInfo::Inter { pose, predicted } => {
                for v in pose.to_f32_array() {
                    payload.extend_from_slice(&v.to_le_bytes());
                }
                (Reference::Inter(predicted), Some(*pose))
            }
        };
        put_chunk(&mut payload, &encode_mask(&image.mask));
        let tiles = tiles(&image.mask, params.rows, params.cols);
        let steps_at = payload.len();
        payload.resize(steps_at + tiles.len() * 20, 0);
        let overhead_bits = 8 * (PACKET_HEADER_BYTES + payload.len() + 4) + 32;

        let residual = &decision.residual;
        let blocks: Vec<Vec<T>> = tiles
            .iter()
            .map(|t| gather(&residual.values, params.rows, params.cols, t))
            .collect();

        let base_bits = target_bpp.map(|b| bits_for_bpp(b, points));
        let target_bits = base_bits.map(|b| {
            let debit = if cfg.rc.carry_overshoot { self.rc.carry.min(b / 4).max(0) } else { 0 };
            b - debit
        });
        let mut budget = target_bits.map(|b| {
            let q_ref = self.rc.reference_step(mode).unwrap_or(cfg.q);
            let energies = blocks
                .iter()
                .map(|v| match cfg.rc.weight {
                    BlockWeight::Energy => v.iter().map(|x| x.to_f64_lossy().powi(2)).sum(),
                    BlockWeight::Complexity => {
                        let p = cfg.transform.forward(v);
                        let map = cfg.transform.quant_map(&p, q_ref, cfg.adwt_alpha, cfg.rc.limits).coded(q_min);
                        CoeffContexts::default().cost(&quantize(&p, &map)) as f64
                    }
                })
                .collect();
            FrameBudget::new(b - overhead_bits as i64, energies)
        });

        let mut enc = Encoder::new();
        let mut ctx = CoeffContexts::default();
        let mut maps = Vec::with_capacity(tiles.len());
        let mut coeffs = Vec::with_capacity(tiles.len());
        let mut q_sum = 0.0;
        let mut last_q: Option<T> = None;
        for (k, (t, block)) in tiles.iter().zip(&blocks).enumerate() {
            let pyramid = cfg.transform.forward(block);
            let trial = Trial {
                pyramid: &pyramid,
                transform: cfg.transform,
                alpha: cfg.adwt_alpha,
                limits: cfg.rc.limits,
                q_min,
                ctx: &ctx,
            };
            let plan = budget.as_ref().map(|b| {
                let alloc = allocate_block_bits(b, k, cfg.rc.b_min);
                self.rc.plan(mode, t.index, &trial, alloc, b.remaining, t.occupied, last_q)
            });
            let q = plan.map_or(cfg.q, |p| p.q);
            let (map, qp) = trial.quantize(q);
            let before = enc.cost() >> COST_SHIFT;
            ctx.encode(&mut enc, &qp);
            let used = ((enc.cost() >> COST_SHIFT) - before) as i64;
            if let (Some(b), Some(plan)) = (budget.as_mut(), plan) {
                b.consume(k, used);
                let d = coeff_mse(&pyramid, &qp, &map);
                self.rc.record(mode, t.index, &plan, used, d, t.occupied);
            }
            payload[steps_at + 20 * k..steps_at + 20 * (k + 1)]
                .copy_from_slice(&map.to_codes(q_min).map(u16::to_le_bytes).concat());
            q_sum += q.to_f64_lossy();
            last_q = Some(q);
            maps.push(map);
            coeffs.push(qp);
        }
        put_chunk(&mut payload, &enc.finish());

        let residual_hat = synthesize_residual(cfg.transform, &tiles, &maps, &coeffs, &image.mask, mode, params);
        let recon = reconstruct(reference, &residual_hat, params)?;

        let packet = FramePacket {
            frame_index: self.state.frame_counter,
            mode,
            payload,
        };
        let bytes = packet.len();
        if let Some(base) = base_bits {
            if !tiles.is_empty() {
                self.rc.set_reference_step(mode, T::lit(q_sum / tiles.len() as f64));
            }
            self.rc.end_frame();
            if self.cfg.rc.carry_overshoot {
                self.rc.carry = (self.rc.carry + bytes as i64 * 8 - base).max(0);
            }
        }
        let stats = FrameStats {
            frame_index: packet.frame_index,
            mode,
            reason: decision.reason,
            pose,
            points,
            bytes,
            bpp: bits_per_point(bytes, points),
            target_bpp,
            target_bits,
            overhead_bits,
            blocks: tiles.len(),
            mean_q: if tiles.is_empty() { 0.0 } else { q_sum / tiles.len() as f64 },
            dropped: projected.out_of_bounds + projected.collisions,
        };
        self.state.advance(mode, back_project(&recon));
        Ok(EncodedFrame {
            packet,
            original: image,
            recon,
            stats,
        })
    }
}

pub struct StreamDecoder<T: Real> {
    header: StreamHeader,
    state: CodecState,
    _scalar: std::marker::PhantomData<T>,
}

fn as_corrupt(e: Error) -> Error {
    match e {
        Error::CorruptStream(_) | Error::MissingReference => e,
        other => Error::CorruptStream(other.to_string()),
    }
}

impl<T: Real> StreamDecoder<T> {
    pub fn new(header: StreamHeader) -> Self {
        Self {
            header,
            state: CodecState::default(),
            _scalar: std::marker::PhantomData,
        }
    }

    pub fn header(&self) -> &StreamHeader {
        &self.header
    }

    pub fn state(&self) -> &CodecState {
        &self.state
    }

    /// Decodes the next packet. On error the state is left untouched, so
    /// decoding can resume at the next intra packet.
    pub fn decode_frame(&mut self, packet: &FramePacket) -> Result<DecodedFrame> {
        let (image, points) = self.decode_image(packet).map_err(as_corrupt)?;
        let cloud = back_project(&image);
        self.state.advance(packet.mode, cloud.clone());
        self.state.frame_counter = packet.frame_index.wrapping_add(1);
        Ok(DecodedFrame {
            frame_index: packet.frame_index,
            mode: packet.mode,
            points,
            image,
            cloud,
        })
    }

    fn decode_image(&self, packet: &FramePacket) -> Result<(RangeImage, usize)> {
        let params = &self.header.params;
        let q_min = T::lit(self.header.q_min);
        let prev = match packet.mode {
            Mode::Inter => Some(self.state.prev_recon.as_ref().ok_or(Error::MissingReference)?),
            Mode::Intra => None,
        };
        let mut r = ByteReader::new(&packet.payload);
        let points = r.u32()? as usize;
        let side;
        let predicted;
        let reference = match prev {
            None => {
                let (mb_rows, mb_cols) = (params.rows.div_ceil(MACROBLOCK), params.cols.div_ceil(MACROBLOCK));
                side = decode_side_info(r.chunk()?, mb_rows, mb_cols)?;
                Reference::Intra(&side)
            }
            Some(prev) => {
                let mut v = [0f32; 12];
                for x in v.iter_mut() {
                    *x = r.f32()?;
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::corrupt("non-finite pose"));
                }
                predicted = predict_image(prev, &Pose::from_f32_array(&v), params);
                Reference::Inter(&predicted)
            }
        };
        let mask = decode_mask(r.chunk()?, params.pixel_count())?;
        let tiles = tiles(&mask, params.rows, params.cols);
        let mut maps = Vec::with_capacity(tiles.len());
        for _ in &tiles {
            let mut codes = [0u16; 10];
            for c in codes.iter_mut() {
                *c = r.u16()?;
            }
            maps.push(QuantMap::from_codes(&codes, q_min));
        }
        let coeffs = decode_blocks(r.chunk()?, tiles.len())?;
        r.finish()?;
        let residual = synthesize_residual(self.header.transform, &tiles, &maps, &coeffs, &mask, packet.mode, params);
        Ok((reconstruct(reference, &residual, params)?, points))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{Scene, SceneConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_params() -> ProjectionParams {
        ProjectionParams::new(64, 256, -24.8, 2.0, 120.0).unwrap()
    }

    fn scene(seed: u64, speed: f64) -> Scene {
        Scene::new(SceneConfig {
            params: small_params(),
            seed,
            speed,
            ..SceneConfig::default()
        })
    }

    fn codec(cfg: CodecConfig<f64>) -> (StreamEncoder<f64>, StreamDecoder<f64>) {
        let dec = StreamDecoder::new(cfg.header());
        (StreamEncoder::new(cfg).unwrap(), dec)
    }

    #[test]
    fn first_frame_is_intra_and_decodes_exactly() {
        let s = scene(1, 0.5);
        let (mut enc, mut dec) = codec(CodecConfig::with_params(small_params()));
        let e = enc.encode_frame(&s.frame(0), PoseSource::Given(Pose::identity()), None).unwrap();
        assert_eq!(e.packet.mode, Mode::Intra);
        assert_eq!(e.stats.reason, Some(KeyframeReason::NoReference));
        let d = dec.decode_frame(&e.packet).unwrap();
        assert_eq!(d.image, e.recon);
        assert_eq!(d.points, s.frame(0).len());
        assert_eq!(dec.state(), enc.state());
    }

    #[test]
    fn static_scene_second_packet_is_smaller() {
        let s = scene(2, 0.0);
        let f = s.frame(0);
        let (mut enc, mut dec) = codec(CodecConfig::with_params(small_params()));
        let a = enc.encode_frame(&f, PoseSource::Given(Pose::identity()), None).unwrap();
        let b = enc.encode_frame(&f, PoseSource::Given(Pose::identity()), None).unwrap();
        assert_eq!(b.packet.mode, Mode::Inter);
        assert!(b.packet.len() < a.packet.len(), "{} vs {}", b.packet.len(), a.packet.len());
        dec.decode_frame(&a.packet).unwrap();
        assert_eq!(dec.decode_frame(&b.packet).unwrap().image, b.recon);
    }

    #[test]
    fn mixed_sequence_stays_in_sync() {
        let s = scene(3, 0.3);
        let mut cfg = CodecConfig::with_params(small_params());
        cfg.k_max = 4;
        let (mut enc, mut dec) = codec(cfg);
        let mut modes = Vec::new();
        for i in 0..12 {
            let target = (i % 3 == 1).then_some(1.0 + 0.1 * i as f64);
            let e = enc.encode_frame(&s.frame(i), PoseSource::Given(s.relative_pose(i)), target).unwrap();
            let d = dec.decode_frame(&e.packet).unwrap();
            assert_eq!(d.image, e.recon, "frame {i}");
            assert_eq!(d.cloud, back_project(&e.recon));
            modes.push(e.packet.mode);
        }
        assert_eq!(dec.state(), enc.state());
        // At most k_max - 1 predicted frames in a row.
        let longest = modes.split(|m| *m == Mode::Intra).map(|r| r.len()).max().unwrap();
        assert!(longest <= 3, "{modes:?}");
    }

    #[test]
    fn forced_keyframe_period() {
        let s = scene(4, 0.0);
        let f = s.frame(0);
        let mut cfg = CodecConfig::with_params(small_params());
        cfg.k_max = 5;
        let (mut enc, _) = codec(cfg);
        let modes: Vec<(Mode, Option<KeyframeReason>)> = (0..11)
            .map(|_| {
                let e = enc.encode_frame(&f, PoseSource::Given(Pose::identity()), None).unwrap();
                (e.stats.mode, e.stats.reason)
            })
            .collect();
        let intra: Vec<usize> = modes.iter().enumerate().filter(|(_, m)| m.0 == Mode::Intra).map(|(i, _)| i).collect();
        assert_eq!(intra, vec![0, 5, 10]);
        assert_eq!(modes[5].1, Some(KeyframeReason::Forced));
    }

    #[test]
    fn inter_packet_without_reference() {
        let s = scene(5, 0.0);
        let f = s.frame(0);
        let (mut enc, _) = codec(CodecConfig::with_params(small_params()));
        enc.encode_frame(&f, PoseSource::Given(Pose::identity()), None).unwrap();
        let p = enc.encode_frame(&f, PoseSource::Given(Pose::identity()), None).unwrap().packet;
        assert_eq!(p.mode, Mode::Inter);
        let mut fresh = StreamDecoder::<f64>::new(enc.header());
        assert!(matches!(fresh.decode_frame(&p), Err(Error::MissingReference)));
        assert_eq!(fresh.state(), &CodecState::default());
    }

    #[test]
    fn corruption_leaves_state_untouched() {
        let s = scene(6, 0.2);
        let (mut enc, mut dec) = codec(CodecConfig::with_params(small_params()));
        let a = enc.encode_frame(&s.frame(0), PoseSource::Given(s.relative_pose(0)), None).unwrap();
        let b = enc.encode_frame(&s.frame(1), PoseSource::Given(s.relative_pose(1)), None).unwrap();
        dec.decode_frame(&a.packet).unwrap();
        let good = dec.state().clone();

        let mut cut = b.packet.clone();
        cut.payload.truncate(cut.payload.len() - 3);
        assert!(matches!(dec.decode_frame(&cut), Err(Error::CorruptStream(_))));
        assert_eq!(dec.state(), &good);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut detected = 0;
        for _ in 0..200 {
            let mut bad = b.packet.clone();
            let i = rng.gen_range(0..bad.payload.len());
            bad.payload[i] ^= 1 << rng.gen_range(0..8);
            let mut trial = StreamDecoder::<f64>::new(enc.header());
            trial.decode_frame(&a.packet).unwrap();
            match trial.decode_frame(&bad) {
                Err(Error::CorruptStream(_)) => {
                    detected += 1;
                    assert_eq!(trial.state(), &good);
                }
                Err(e) => panic!("unexpected error {e}"),
                Ok(_) => {}
            }
        }
        assert!(detected > 0);
        assert_eq!(dec.decode_frame(&b.packet).unwrap().image, b.recon);
    }

    /// Fully occupied frame whose pixels all lie inside 64x64 tiles.
    fn dense_frame(rng: &mut ChaCha8Rng, params: &ProjectionParams) -> RangeImage {
        let mut img = RangeImage::empty(params.clone());
        let base = rng.gen_range(5.0..40.0f32);
        for r in 0..params.rows {
            for c in 0..params.cols {
                let i = img.index(r, c);
                img.values[i] = base + 0.01 * c as f32 + rng.gen_range(-0.3..0.3);
                img.mask[i] = true;
            }
        }
        img
    }

    #[test]
    fn q_min_inter_error_bound() {
        let params = ProjectionParams::new(64, 128, -24.8, 2.0, 120.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for transform in [BlockTransform::UniformDwt, BlockTransform::AdaptiveDwt] {
            let mut cfg = CodecConfig::with_params(params.clone());
            cfg.transform = transform;
            cfg.q = cfg.rc.limits.q_min;
            cfg.mode.t_key = f64::INFINITY;
            let (mut enc, _) = codec(cfg);
            let mut checked = 0;
            for _ in 0..3 {
                let img = dense_frame(&mut rng, &params);
                let e = enc.encode_frame(&back_project(&img), PoseSource::Given(Pose::identity()), None).unwrap();
                if e.stats.mode != Mode::Inter {
                    continue;
                }
                assert_eq!(e.recon.mask, e.original.mask);
                let m: f64 = crate::metrics::mse(&e.original, &e.recon);
                // Largest step of any block bounds the per-coefficient error.
                let payload = &e.packet.payload;
                let steps_at = 4 + 48 + 4 + u32::from_le_bytes(payload[52..56].try_into().unwrap()) as usize;
                let q_max_used = payload[steps_at..steps_at + 20 * e.stats.blocks]
                    .chunks(2)
                    .map(|c| crate::adwt::quant::code_to_step(u16::from_le_bytes([c[0], c[1]]), 0.001f64))
                    .fold(0.0, f64::max);
                let bound = q_max_used * q_max_used / 4.0;
                assert!(m <= bound * (1.0 + 1e-6) + 1e-10, "{transform:?}: mse {m} bound {bound}");
                if transform == BlockTransform::UniformDwt {
                    assert!((q_max_used - 0.001).abs() < 1e-15);
                }
                checked += 1;
            }
            assert_eq!(checked, 2);
        }
    }

    #[test]
    fn rate_controlled_frames_hit_target() {
        let s = scene(8, 0.5);
        let (mut enc, mut dec) = codec(CodecConfig::with_params(small_params()));
        for i in 0..6 {
            let e = enc.encode_frame(&s.frame(i), PoseSource::Given(s.relative_pose(i)), Some(1.4)).unwrap();
            assert!((e.stats.bpp - 1.4).abs() / 1.4 < 0.05, "frame {i}: {}", e.stats.bpp);
            assert_eq!(dec.decode_frame(&e.packet).unwrap().image, e.recon);
        }
    }

    #[test]
    fn empty_cloud_round_trips() {
        let (mut enc, mut dec) = codec(CodecConfig::with_params(small_params()));
        let e = enc.encode_frame(&PointCloud::default(), PoseSource::Unavailable, Some(1.0)).unwrap();
        assert_eq!(e.stats.blocks, 0);
        let d = dec.decode_frame(&e.packet).unwrap();
        assert_eq!(d.image.occupied(), 0);
    }

    #[test]
    fn config_keys() {
        let cfg = CodecConfig::<f64>::from_config_str(
            "rows = 32\ncols = 512\ntransform = dct\nq = 0.2\nk_max = 8\nlocal_refit = false\nblock_weight = energy\n",
        )
        .unwrap();
        assert_eq!(cfg.params.rows, 32);
        assert_eq!(cfg.transform, BlockTransform::Dct);
        assert_eq!(cfg.q, 0.2);
        assert_eq!(cfg.k_max, 8);
        assert!(!cfg.rc.local_refit);
        assert_eq!(cfg.rc.weight, BlockWeight::Energy);
        assert!(CodecConfig::<f64>::from_config_str("q = -1").is_err());
        assert!(CodecConfig::<f64>::from_config_str("transform = wavelet").is_err());
    }
}

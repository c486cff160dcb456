//! Stream runs with decoder verification, constant-step R-D sweeps and the
//! matched-rate transform comparison.

use std::time::Instant;

use ricodec::adwt::BlockTransform;
use ricodec::bitstream::{CodecConfig, FramePacket, StreamDecoder, StreamEncoder, StreamHeader};
use ricodec::metrics::{mse, psnr_from_mse};
use ricodec::prediction::{Pose, PoseSource};
use ricodec::ratecontrol::{fit_dq_model, fit_rq_model, TargetSchedule};

use crate::error::{CliError, Result};
use crate::input::Frame;
use crate::report::{ReportRow, RunReport};

/// Where inter-frame poses come from.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum PoseMode {
    /// Pose file lines: line `i` maps frame `i - 1` into frame `i`; line 0
    /// is unused.
    File(Vec<Pose>),
    /// The exact relative poses carried by synthetic frames.
    Truth,
    /// Keypoint ICP inside the encoder.
    Icp,
    /// Every frame is intra coded.
    #[default]
    None,
}

impl PoseMode {
    fn source(&self, frame: &Frame) -> PoseSource {
        let i = frame.index;
        match self {
            PoseMode::File(rel) if i > 0 && i < rel.len() => PoseSource::Given(rel[i]),
            PoseMode::File(_) => PoseSource::Unavailable,
            PoseMode::Truth => frame.truth.map_or(PoseSource::Unavailable, PoseSource::Given),
            PoseMode::Icp => PoseSource::Estimate,
            PoseMode::None => PoseSource::Unavailable,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub pose: PoseMode,
    /// Per-frame targets; switches rate control on.
    pub schedule: Option<TargetSchedule>,
}

#[derive(Clone, Debug)]
pub struct StreamRun {
    pub header: StreamHeader,
    pub packets: Vec<FramePacket>,
    pub report: RunReport,
}

impl StreamRun {
    pub fn container(&self) -> Vec<u8> {
        ricodec::bitstream::write_container(&self.header, &self.packets)
    }
}

/// Encodes every frame, decodes each packet right away and checks that the
/// decoder reproduces the encoder's reconstruction.
pub fn run_stream<I>(mut cfg: CodecConfig<f64>, frames: I, opts: &RunOptions) -> Result<StreamRun>
where
    I: IntoIterator<Item = Result<Frame>>,
{
    cfg.rate_control = opts.schedule.is_some();
    let mut enc = StreamEncoder::new(cfg)?;
    let header = enc.header();
    let mut dec = StreamDecoder::<f64>::new(header.clone());
    let mut packets = Vec::new();
    let mut rows = Vec::new();
    for frame in frames {
        let frame = frame?;
        let target = opts.schedule.as_ref().map(|s| s.target(frame.index));
        let t0 = Instant::now();
        let out = enc.encode_frame(&frame.cloud, opts.pose.source(&frame), target)?;
        let t1 = Instant::now();
        let decoded = dec.decode_frame(&out.packet)?;
        let t2 = Instant::now();
        if decoded.image != out.recon {
            return Err(CliError::Desync(frame.index));
        }
        let m: f64 = mse(&out.original, &decoded.image);
        rows.push(ReportRow {
            index: frame.index,
            mode: out.stats.mode,
            points: out.stats.points,
            bytes: out.stats.bytes,
            bpp: out.stats.bpp,
            target_bpp: target,
            encode_ms: (t1 - t0).as_secs_f64() * 1e3,
            decode_ms: (t2 - t1).as_secs_f64() * 1e3,
            mse: m,
            psnr: psnr_from_mse(m, header.params.range_max),
        });
        packets.push(out.packet);
    }
    Ok(StreamRun {
        header,
        packets,
        report: RunReport { rows },
    })
}

fn owned(frames: &[Frame]) -> impl Iterator<Item = Result<Frame>> + '_ {
    frames.iter().cloned().map(Ok)
}

/// Mean bpp, MSE and PSNR of a constant-step run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RdPoint {
    pub q: f64,
    pub bpp: f64,
    pub mse: f64,
    pub psnr: f64,
}

pub fn constant_q(cfg: &CodecConfig<f64>, frames: &[Frame], pose: &PoseMode, q: f64) -> Result<RdPoint> {
    let cfg = CodecConfig { q, ..cfg.clone() };
    let opts = RunOptions {
        pose: pose.clone(),
        schedule: None,
    };
    let a = run_stream(cfg, owned(frames), &opts)?.report.aggregates();
    Ok(RdPoint {
        q,
        bpp: a.mean_bpp,
        mse: a.mean_mse,
        psnr: a.mean_psnr,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RdCurve {
    pub points: Vec<RdPoint>,
    pub a_d: f64,
    pub cod_d: f64,
    pub a_r: f64,
    pub b_r: f64,
    pub cod_r: f64,
}

impl RdCurve {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["q", "bpp", "mse", "psnr"])?;
        for p in &self.points {
            w.write_record([p.q.to_string(), p.bpp.to_string(), p.mse.to_string(), p.psnr.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_fit_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["a_d", "cod_d", "a_r", "b_r", "cod_r"])?;
        w.write_record([self.a_d, self.cod_d, self.a_r, self.b_r, self.cod_r].map(|v| v.to_string()))?;
        w.flush()?;
        Ok(())
    }
}

/// Constant-step sweep over `qs` and the D-Q / R-Q fits of the means.
pub fn rd_curve(cfg: &CodecConfig<f64>, frames: &[Frame], pose: &PoseMode, qs: &[f64]) -> Result<RdCurve> {
    let mut distinct = qs.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(ricodec::Error::DegenerateFit(format!("need at least 3 distinct steps, got {}", distinct.len())).into());
    }
    let points = qs
        .iter()
        .map(|&q| constant_q(cfg, frames, pose, q))
        .collect::<Result<Vec<_>>>()?;
    let (a_d, cod_d) = fit_dq_model(&points.iter().map(|p| (p.q, p.mse)).collect::<Vec<_>>())?;
    let (a_r, b_r, cod_r) = fit_rq_model(&points.iter().map(|p| (p.q, p.bpp)).collect::<Vec<_>>())?;
    Ok(RdCurve {
        points,
        a_d,
        cod_d,
        a_r,
        b_r,
        cod_r,
    })
}

/// Relative bpp tolerance of the step search.
pub const MATCH_TOLERANCE: f64 = 0.02;
const SEARCH_STEPS: usize = 40;

/// Bisection on `ln q` for the constant step whose mean bpp is within
/// [`MATCH_TOLERANCE`] of `target`. Returns the best point seen and the
/// number of runs.
pub fn search_q(cfg: &CodecConfig<f64>, frames: &[Frame], pose: &PoseMode, target: f64) -> Result<(RdPoint, usize)> {
    if !(target > 0.0 && target.is_finite()) {
        return Err(CliError::config(format!("target bpp {target} must be positive")));
    }
    let lim = cfg.rc.limits;
    let miss = |p: &RdPoint| (p.bpp - target).abs() / target;
    let (mut lo, mut hi) = (lim.q_min.ln(), lim.q_max.ln());
    let mut best: Option<RdPoint> = None;
    let mut runs = 0;
    // Start near the configured step; the bracket covers every legal step.
    let mut x = cfg.q.ln().clamp(lo, hi);
    while runs < SEARCH_STEPS {
        let p = constant_q(cfg, frames, pose, x.exp())?;
        runs += 1;
        if best.map_or(true, |b| miss(&p) < miss(&b)) {
            best = Some(p);
        }
        if miss(&p) <= MATCH_TOLERANCE {
            break;
        }
        // Rate falls as the step grows.
        if p.bpp > target {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo < 1e-6 {
            break;
        }
        x = 0.5 * (lo + hi);
    }
    Ok((best.expect("at least one run"), runs))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub transform: BlockTransform,
    pub target_bpp: f64,
    pub q: f64,
    pub bpp: f64,
    pub mse: f64,
    pub psnr: f64,
    pub runs: usize,
}

impl AblationRow {
    pub fn matched(&self) -> bool {
        (self.bpp - self.target_bpp).abs() / self.target_bpp <= MATCH_TOLERANCE
    }
}

/// PSNR of each transform at each target bpp, steps found by [`search_q`].
pub fn ablation(
    cfg: &CodecConfig<f64>,
    frames: &[Frame],
    pose: &PoseMode,
    bpps: &[f64],
    transforms: &[BlockTransform],
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for &transform in transforms {
        let cfg = CodecConfig {
            transform,
            ..cfg.clone()
        };
        for &target in bpps {
            let (p, runs) = search_q(&cfg, frames, pose, target)?;
            rows.push(AblationRow {
                transform,
                target_bpp: target,
                q: p.q,
                bpp: p.bpp,
                mse: p.mse,
                psnr: p.psnr,
                runs,
            });
        }
    }
    Ok(rows)
}

pub fn write_ablation_csv<W: std::io::Write>(rows: &[AblationRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["transform", "target_bpp", "q", "bpp", "mse", "psnr", "matched"])?;
    for r in rows {
        w.write_record([
            r.transform.name().to_string(),
            r.target_bpp.to_string(),
            r.q.to_string(),
            r.bpp.to_string(),
            r.mse.to_string(),
            r.psnr.to_string(),
            r.matched().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

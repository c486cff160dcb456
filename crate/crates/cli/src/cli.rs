//! Argument parsing and the subcommands.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ricodec::adwt::BlockTransform;
use ricodec::bitstream::{read_container, CodecConfig, StreamDecoder};
use ricodec::pointcloud::{write_kitti_bin, write_ply_ascii};
use ricodec::prediction::pose::parse_pose_file;
use ricodec::prediction::Mode;
use ricodec::projection::ProjectionParams;
use ricodec::ratecontrol::TargetSchedule;

use crate::error::{CliError, Result};
use crate::harness::{ablation, rd_curve, run_stream, search_q, write_ablation_csv, PoseMode, RunOptions, StreamRun};
use crate::input::Input;
use crate::report::RunReport;

#[derive(Debug, Parser)]
#[command(name = "ricodec", version, about = "LiDAR range-image codec")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Encode point cloud files into a `.dcmp` container.
    Encode(EncodeArgs),
    /// Decode a container back to point clouds.
    Decode(DecodeArgs),
    /// Constant-step sweep with D-Q and R-Q model fits.
    RdCurve(RdArgs),
    /// PSNR of each transform at matched bitrates.
    Ablation(AblationArgs),
    /// Rate-controlled run under a bitrate schedule.
    StreamSim(StreamSimArgs),
    /// Print the header and packet table of a container.
    Info(InfoArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PoseSourceArg {
    File,
    Icp,
    None,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Directory, glob pattern or single file (`.bin`, `.pcd`, `.ply`).
    #[arg(required_unless_present = "synthetic")]
    pub input: Option<String>,
    /// Use N generated frames instead of files.
    #[arg(long, value_name = "N", conflicts_with = "input")]
    pub synthetic: Option<usize>,
    /// Seed of the synthetic scene.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Projection and codec configuration (`key = value` lines).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PoseSourceArg::None)]
    pub pose_source: PoseSourceArg,
    /// Pose file for `--pose-source file`: 12 numbers per line.
    #[arg(long)]
    pub poses: Option<PathBuf>,
    /// Constant quantization step.
    #[arg(long)]
    pub q: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(short, long)]
    pub output: PathBuf,
    /// `frame_index,target_bpp` lines; enables rate control.
    #[arg(long, conflicts_with = "target_bpp")]
    pub schedule: Option<PathBuf>,
    /// Constant target; enables rate control.
    #[arg(long)]
    pub target_bpp: Option<f64>,
    #[arg(long, value_name = "out.csv")]
    pub report: Option<PathBuf>,
    /// Add wall-clock columns to the report.
    #[arg(long)]
    pub timings: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OutFormat {
    Bin,
    Ply,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    pub input: PathBuf,
    /// Directory for the decoded clouds.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutFormat::Bin)]
    pub format: OutFormat,
    #[arg(long, value_name = "out.csv")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RdArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Steps to sweep.
    #[arg(long, value_delimiter = ',', default_value = "0.02,0.05,0.1,0.2,0.5", conflicts_with = "bpps")]
    pub qs: Vec<f64>,
    /// Sweep at the steps that hit these bitrates instead.
    #[arg(long, value_delimiter = ',')]
    pub bpps: Option<Vec<f64>>,
    #[arg(long, value_name = "out.csv")]
    pub report: Option<PathBuf>,
    /// Fitted model parameters as CSV.
    #[arg(long)]
    pub fit_report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblationArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_delimiter = ',', default_value = "1.0,1.8")]
    pub bpps: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "adwt,dwt,dct")]
    pub transforms: Vec<String>,
    #[arg(long, value_name = "out.csv")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StreamSimArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, conflicts_with_all = ["target_bpp", "steps"])]
    pub schedule: Option<PathBuf>,
    #[arg(long, conflicts_with = "steps")]
    pub target_bpp: Option<f64>,
    /// Three targets over 30%, 40% and 30% of the frames.
    #[arg(long, value_delimiter = ',', default_value = "1.5,1.3,1.7")]
    pub steps: Vec<f64>,
    /// Also write the container.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_name = "out.csv")]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub timings: bool,
}

#[derive(Debug, Args)]
pub struct InfoArgs {
    pub input: PathBuf,
    #[arg(long, value_name = "out.csv")]
    pub report: Option<PathBuf>,
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::file(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::file(path, e))
}

impl InputArgs {
    pub fn codec_config(&self) -> Result<CodecConfig<f64>> {
        let mut cfg = match &self.config {
            Some(p) => CodecConfig::from_config_str(&read_text(p)?)?,
            None => CodecConfig::with_params(ProjectionParams::default()),
        };
        if let Some(q) = self.q {
            cfg.q = q;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn source(&self, params: &ProjectionParams) -> Result<Input> {
        match (&self.input, self.synthetic) {
            (_, Some(n)) => Ok(Input::synthetic(n, self.seed, params.clone())),
            (Some(pattern), None) => Input::from_pattern(pattern),
            (None, None) => Err(CliError::config("no input given")),
        }
    }

    /// Synthetic inputs carry their own trajectory, which stands in for a
    /// pose file.
    pub fn pose_mode(&self) -> Result<PoseMode> {
        Ok(match self.pose_source {
            PoseSourceArg::None => PoseMode::None,
            PoseSourceArg::Icp => PoseMode::Icp,
            PoseSourceArg::File => match (&self.poses, self.synthetic) {
                (Some(p), _) => {
                    let text = std::fs::read_to_string(p)
                        .map_err(|e| CliError::config(format!("pose file {}: {e}", p.display())))?;
                    PoseMode::File(parse_pose_file(&text)?)
                }
                (None, Some(_)) => PoseMode::Truth,
                (None, None) => return Err(CliError::config("--pose-source file needs --poses <FILE>")),
            },
        })
    }
}

fn write_report(report: &RunReport, path: Option<&Path>, timings: bool) -> Result<()> {
    if let Some(p) = path {
        report.write_csv(create(p)?, timings)?;
    }
    Ok(())
}

fn write_container(run: &StreamRun, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(&run.container())?;
    w.flush()?;
    Ok(())
}

pub fn cmd_encode(args: &EncodeArgs, out: &mut dyn Write) -> Result<RunReport> {
    let cfg = args.input.codec_config()?;
    let pose = args.input.pose_mode()?;
    let schedule = match (&args.schedule, args.target_bpp) {
        (Some(p), _) => Some(TargetSchedule::parse(&read_text(p)?)?),
        (None, Some(b)) => Some(TargetSchedule::from_entries(vec![(0, b)])?),
        (None, None) => None,
    };
    let source = args.input.source(&cfg.params)?;
    let run = run_stream(cfg, source.stream(), &RunOptions { pose, schedule })?;
    write_container(&run, &args.output)?;
    write_report(&run.report, args.report.as_deref(), args.timings)?;
    writeln!(out, "{}", run.report.aggregates())?;
    Ok(run.report)
}

pub fn cmd_decode(args: &DecodeArgs, out: &mut dyn Write) -> Result<usize> {
    let bytes = std::fs::read(&args.input).map_err(|e| CliError::file(&args.input, e))?;
    let (header, packets) = read_container(&bytes)?;
    let mut dec = StreamDecoder::<f64>::new(header);
    if let Some(dir) = &args.output {
        std::fs::create_dir_all(dir).map_err(|e| CliError::file(dir, e))?;
    }
    let mut csv = match &args.report {
        Some(p) => {
            let mut w = csv::Writer::from_writer(create(p)?);
            w.write_record(["frame", "mode", "bytes", "points"])?;
            Some(w)
        }
        None => None,
    };
    for packet in &packets {
        let frame = dec.decode_frame(packet)?;
        if let Some(dir) = &args.output {
            let (ext, data) = match args.format {
                OutFormat::Bin => ("bin", write_kitti_bin(&frame.cloud)),
                OutFormat::Ply => ("ply", write_ply_ascii(&frame.cloud).into_bytes()),
            };
            let path = dir.join(format!("{:06}.{ext}", frame.frame_index));
            std::fs::write(&path, data).map_err(|e| CliError::file(&path, e))?;
        }
        if let Some(w) = csv.as_mut() {
            w.write_record([
                frame.frame_index.to_string(),
                mode_name(frame.mode).into(),
                packet.len().to_string(),
                frame.cloud.len().to_string(),
            ])?;
        }
    }
    if let Some(mut w) = csv {
        w.flush()?;
    }
    writeln!(out, "decoded {} frames", packets.len())?;
    Ok(packets.len())
}

fn mode_name(m: Mode) -> &'static str {
    match m {
        Mode::Intra => "intra",
        Mode::Inter => "inter",
    }
}

pub fn cmd_rd_curve(args: &RdArgs, out: &mut dyn Write) -> Result<crate::RdCurve> {
    let cfg = args.input.codec_config()?;
    let pose = args.input.pose_mode()?;
    let frames = args.input.source(&cfg.params)?.load_all()?;
    let qs = match &args.bpps {
        Some(bpps) => bpps
            .iter()
            .map(|&b| search_q(&cfg, &frames, &pose, b).map(|(p, _)| p.q))
            .collect::<Result<Vec<_>>>()?,
        None => args.qs.clone(),
    };
    let curve = rd_curve(&cfg, &frames, &pose, &qs)?;
    if let Some(p) = &args.report {
        curve.write_csv(create(p)?)?;
    }
    if let Some(p) = &args.fit_report {
        curve.write_fit_csv(create(p)?)?;
    }
    for p in &curve.points {
        writeln!(out, "q={:<8} bpp={:.4} mse={:.3e} psnr={:.2}", p.q, p.bpp, p.mse, p.psnr)?;
    }
    writeln!(
        out,
        "D = {:.4e} Q^2 (CoD {:.3}); R = {:.4} Q^-{:.4} (CoD {:.3})",
        curve.a_d, curve.cod_d, curve.a_r, curve.b_r, curve.cod_r
    )?;
    Ok(curve)
}

pub fn cmd_ablation(args: &AblationArgs, out: &mut dyn Write) -> Result<Vec<crate::AblationRow>> {
    let cfg = args.input.codec_config()?;
    let pose = args.input.pose_mode()?;
    let transforms = args
        .transforms
        .iter()
        .map(|t| BlockTransform::from_name(t).ok_or_else(|| CliError::config(format!("unknown transform `{t}`"))))
        .collect::<Result<Vec<_>>>()?;
    let frames = args.input.source(&cfg.params)?.load_all()?;
    let rows = ablation(&cfg, &frames, &pose, &args.bpps, &transforms)?;
    if let Some(p) = &args.report {
        write_ablation_csv(&rows, create(p)?)?;
    }
    for r in &rows {
        writeln!(
            out,
            "{:<5} target={:.2} bpp={:.4} q={:.5} psnr={:.2}{}",
            r.transform.name(),
            r.target_bpp,
            r.bpp,
            r.q,
            r.psnr,
            if r.matched() { "" } else { " (unmatched)" }
        )?;
    }
    Ok(rows)
}

pub fn cmd_stream_sim(args: &StreamSimArgs, out: &mut dyn Write) -> Result<RunReport> {
    let cfg = args.input.codec_config()?;
    let pose = args.input.pose_mode()?;
    let source = args.input.source(&cfg.params)?;
    let schedule = match (&args.schedule, args.target_bpp) {
        (Some(p), _) => TargetSchedule::parse(&read_text(p)?)?,
        (None, Some(b)) => TargetSchedule::from_entries(vec![(0, b)])?,
        (None, None) => {
            let s: [f64; 3] = args.steps[..]
                .try_into()
                .map_err(|_| CliError::config("--steps takes three targets"))?;
            TargetSchedule::three_step(source.len(), s)
        }
    };
    let run = run_stream(
        cfg,
        source.stream(),
        &RunOptions {
            pose,
            schedule: Some(schedule),
        },
    )?;
    if let Some(p) = &args.output {
        write_container(&run, p)?;
    }
    write_report(&run.report, args.report.as_deref(), args.timings)?;
    writeln!(out, "{}", run.report.aggregates())?;
    Ok(run.report)
}

pub fn cmd_info(args: &InfoArgs, out: &mut dyn Write) -> Result<()> {
    let bytes = std::fs::read(&args.input).map_err(|e| CliError::file(&args.input, e))?;
    let (h, packets) = read_container(&bytes)?;
    let p = &h.params;
    writeln!(
        out,
        "version {} transform {} rate_control {} q_min {}",
        h.version,
        h.transform.name(),
        h.rate_control,
        h.q_min
    )?;
    writeln!(
        out,
        "projection {}x{} elevation [{:.4}, {:.4}] rad range_max {} m{}",
        p.rows,
        p.cols,
        p.elevation_min,
        p.elevation_max,
        p.range_max,
        if p.row_elevations.is_some() { " (row table)" } else { "" }
    )?;
    let intra = packets.iter().filter(|p| p.mode == Mode::Intra).count();
    writeln!(
        out,
        "{} packets ({} intra, {} inter), {} bytes",
        packets.len(),
        intra,
        packets.len() - intra,
        bytes.len()
    )?;
    if let Some(path) = &args.report {
        let mut w = csv::Writer::from_writer(create(path)?);
        w.write_record(["frame", "mode", "bytes"])?;
        for p in &packets {
            w.write_record([p.frame_index.to_string(), mode_name(p.mode).into(), p.len().to_string()])?;
        }
        w.flush()?;
    }
    Ok(())
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Encode(a) => cmd_encode(a, out).map(drop),
        Command::Decode(a) => cmd_decode(a, out).map(drop),
        Command::RdCurve(a) => cmd_rd_curve(a, out).map(drop),
        Command::Ablation(a) => cmd_ablation(a, out).map(drop),
        Command::StreamSim(a) => cmd_stream_sim(a, out).map(drop),
        Command::Info(a) => cmd_info(a, out),
    }
}

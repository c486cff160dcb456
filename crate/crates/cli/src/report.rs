//! Per-frame rows and their aggregates.
//!
//! Aggregates are never stored; they are recomputed from the rows, so a
//! report read back from CSV yields the same numbers. Wall-clock columns
//! are written only on request because they differ between runs.

use std::io::{Read, Write};

use ricodec::metrics::{bitrate_error, peak_bitrate_error};
use ricodec::prediction::Mode;

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub index: usize,
    pub mode: Mode,
    pub points: usize,
    pub bytes: usize,
    pub bpp: f64,
    pub target_bpp: Option<f64>,
    pub encode_ms: f64,
    pub decode_ms: f64,
    pub mse: f64,
    pub psnr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aggregates {
    pub frames: usize,
    pub mean_bpp: f64,
    /// Average bit error over rows with a target.
    pub e_r: Option<f64>,
    pub peak_be: Option<f64>,
    pub mean_psnr: f64,
    pub mean_mse: f64,
    pub total_bytes: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunReport {
    pub rows: Vec<ReportRow>,
}

const COLUMNS: [&str; 8] = ["frame", "mode", "points", "bytes", "bpp", "target_bpp", "mse", "psnr"];
const TIMING: [&str; 2] = ["encode_ms", "decode_ms"];

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn mode_name(m: Mode) -> &'static str {
    match m {
        Mode::Intra => "intra",
        Mode::Inter => "inter",
    }
}

impl RunReport {
    pub fn aggregates(&self) -> Aggregates {
        let (targets, reals): (Vec<f64>, Vec<f64>) = self
            .rows
            .iter()
            .filter_map(|r| r.target_bpp.map(|t| (t, r.bpp)))
            .unzip();
        let (e_r, peak_be) = if targets.is_empty() {
            (None, None)
        } else {
            (
                bitrate_error(&targets, &reals).ok(),
                peak_bitrate_error(&targets, &reals).ok(),
            )
        };
        Aggregates {
            frames: self.rows.len(),
            mean_bpp: mean(self.rows.iter().map(|r| r.bpp)),
            e_r,
            peak_be,
            mean_psnr: mean(self.rows.iter().map(|r| r.psnr)),
            mean_mse: mean(self.rows.iter().map(|r| r.mse)),
            total_bytes: self.rows.iter().map(|r| r.bytes).sum(),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W, timings: bool) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = COLUMNS.to_vec();
        if timings {
            header.extend(TIMING);
        }
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.index.to_string(),
                mode_name(r.mode).to_string(),
                r.points.to_string(),
                r.bytes.to_string(),
                r.bpp.to_string(),
                r.target_bpp.map(|t| t.to_string()).unwrap_or_default(),
                r.mse.to_string(),
                r.psnr.to_string(),
            ];
            if timings {
                rec.push(format!("{:.3}", r.encode_ms));
                rec.push(format!("{:.3}", r.decode_ms));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self, timings: bool) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, timings).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// Reads rows written by [`RunReport::write_csv`]; missing timing
    /// columns read as zero.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let headers = rd.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let idx: Vec<usize> = COLUMNS
            .iter()
            .map(|c| col(c).ok_or_else(|| CliError::config(format!("report lacks column `{c}`"))))
            .collect::<Result<_>>()?;
        let timing: Vec<Option<usize>> = TIMING.iter().map(|c| col(c)).collect();
        let mut rows = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).unwrap_or("");
            let bad = |what: &str| CliError::config(format!("report row {}: bad {what}", rows.len() + 1));
            let num = |i: usize, what: &str| field(i).parse::<f64>().map_err(|_| bad(what));
            let int = |i: usize, what: &str| field(i).parse::<usize>().map_err(|_| bad(what));
            let mode = match field(idx[1]) {
                "intra" => Mode::Intra,
                "inter" => Mode::Inter,
                _ => return Err(bad("mode")),
            };
            let target = field(idx[5]);
            let ms = |k: usize| match timing[k] {
                Some(i) => num(i, TIMING[k]),
                None => Ok(0.0),
            };
            rows.push(ReportRow {
                index: int(idx[0], "frame")?,
                mode,
                points: int(idx[2], "points")?,
                bytes: int(idx[3], "bytes")?,
                bpp: num(idx[4], "bpp")?,
                target_bpp: if target.is_empty() { None } else { Some(num(idx[5], "target")?) },
                encode_ms: ms(0)?,
                decode_ms: ms(1)?,
                mse: num(idx[6], "mse")?,
                psnr: num(idx[7], "psnr")?,
            });
        }
        Ok(Self { rows })
    }
}

impl std::fmt::Display for Aggregates {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "frames={} bytes={} mean_bpp={:.4} mean_psnr={:.2} dB",
            self.frames, self.total_bytes, self.mean_bpp, self.mean_psnr
        )?;
        if let (Some(e), Some(p)) = (self.e_r, self.peak_be) {
            write!(f, " e_R={:.2}% peak_BE={:.2}%", e * 100.0, p * 100.0)?;
        }
        Ok(())
    }
}

//! Point cloud container and the on-disk formats the codec reads and writes.
//!
//! Supported inputs:
//!
//! * `kitti-bin`: packed little-endian `f32` quadruples `(x, y, z, intensity)`.
//! * `pcd-ascii`: PCD files with `DATA ascii`; the `FIELDS` header locates
//!   `x`, `y`, `z` and an optional `intensity` column.
//! * `ply-ascii`: PLY files with `format ascii 1.0`; only the `vertex`
//!   element is read.
//!
//! Records with a non-finite coordinate are skipped and counted rather than
//! aborting the load.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// A point in the sensor frame, meters.
pub type Point = [f64; 3];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
    /// Carried through loading but never compressed.
    pub intensity: Option<Vec<f32>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Self {
        Self {
            points,
            intensity: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CloudFormat {
    KittiBin,
    PcdAscii,
    PlyAscii,
}

impl CloudFormat {
    /// Guess the format from a file extension (`bin`, `pcd`, `ply`).
    pub fn from_extension(ext: &str) -> Option<Self> {
        match ext.to_ascii_lowercase().as_str() {
            "bin" => Some(Self::KittiBin),
            "pcd" => Some(Self::PcdAscii),
            "ply" => Some(Self::PlyAscii),
            _ => None,
        }
    }
}

impl FromStr for CloudFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kitti-bin" | "bin" => Ok(Self::KittiBin),
            "pcd-ascii" | "pcd" => Ok(Self::PcdAscii),
            "ply-ascii" | "ply" => Ok(Self::PlyAscii),
            other => Err(Error::UnknownFormat(other.to_string())),
        }
    }
}

impl fmt::Display for CloudFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::KittiBin => "kitti-bin",
            Self::PcdAscii => "pcd-ascii",
            Self::PlyAscii => "ply-ascii",
        })
    }
}

/// Result of a load: the finite points plus the number of rejected records.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LoadedCloud {
    pub cloud: PointCloud,
    pub rejected: usize,
}

const KITTI_RECORD: usize = 16;

pub fn load_point_cloud(bytes: &[u8], format: CloudFormat) -> Result<LoadedCloud> {
    match format {
        CloudFormat::KittiBin => load_kitti_bin(bytes),
        CloudFormat::PcdAscii => load_pcd_ascii(bytes),
        CloudFormat::PlyAscii => load_ply_ascii(bytes),
    }
}

fn load_kitti_bin(bytes: &[u8]) -> Result<LoadedCloud> {
    if bytes.len() % KITTI_RECORD != 0 {
        return Err(Error::TruncatedRecord {
            len: bytes.len(),
            record: KITTI_RECORD,
        });
    }
    let mut acc = Accumulator::with_capacity(bytes.len() / KITTI_RECORD);
    for rec in bytes.chunks_exact(KITTI_RECORD) {
        let f = |i: usize| f32::from_le_bytes(rec[i * 4..i * 4 + 4].try_into().unwrap());
        acc.push(f(0) as f64, f(1) as f64, f(2) as f64, Some(f(3)));
    }
    Ok(acc.finish(true))
}

/// Serialize as `kitti-bin`; missing intensities are written as zero.
pub fn write_kitti_bin(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * KITTI_RECORD);
    for (i, p) in cloud.points.iter().enumerate() {
        for c in p {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
        let inten = cloud
            .intensity
            .as_ref()
            .and_then(|v| v.get(i).copied())
            .unwrap_or(0.0);
        out.extend_from_slice(&inten.to_le_bytes());
    }
    out
}

/// Serialize as an ASCII PLY with `x y z` vertex properties.
pub fn write_ply_ascii(cloud: &PointCloud) -> String {
    use std::fmt::Write;
    let mut s = String::with_capacity(64 + cloud.len() * 32);
    let _ = write!(
        s,
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        cloud.len()
    );
    for p in &cloud.points {
        let _ = writeln!(s, "{} {} {}", p[0], p[1], p[2]);
    }
    s
}

struct Accumulator {
    points: Vec<Point>,
    intensity: Vec<f32>,
    rejected: usize,
}

impl Accumulator {
    fn with_capacity(n: usize) -> Self {
        Self {
            points: Vec::with_capacity(n),
            intensity: Vec::with_capacity(n),
            rejected: 0,
        }
    }

    fn push(&mut self, x: f64, y: f64, z: f64, intensity: Option<f32>) {
        if x.is_finite() && y.is_finite() && z.is_finite() {
            self.points.push([x, y, z]);
            self.intensity.push(intensity.unwrap_or(0.0));
        } else {
            self.rejected += 1;
        }
    }

    fn finish(self, has_intensity: bool) -> LoadedCloud {
        if self.rejected > 0 {
            log::warn!("skipped {} records with non-finite coordinates", self.rejected);
        }
        LoadedCloud {
            cloud: PointCloud {
                points: self.points,
                intensity: has_intensity.then_some(self.intensity),
            },
            rejected: self.rejected,
        }
    }
}

fn parse_err(format: &'static str, msg: impl Into<String>) -> Error {
    Error::Parse {
        format,
        msg: msg.into(),
    }
}

fn utf8<'a>(bytes: &'a [u8], format: &'static str) -> Result<&'a str> {
    std::str::from_utf8(bytes).map_err(|e| parse_err(format, e.to_string()))
}

/// Parses one whitespace-separated numeric row; unparsable tokens become NaN
/// so the record is counted as rejected instead of failing the whole load.
fn row_values(line: &str) -> Vec<f64> {
    line.split_whitespace()
        .map(|t| t.parse::<f64>().unwrap_or(f64::NAN))
        .collect()
}

fn load_pcd_ascii(bytes: &[u8]) -> Result<LoadedCloud> {
    const FMT: &str = "pcd-ascii";
    let text = utf8(bytes, FMT)?;
    let mut lines = text.lines();
    let mut fields: Option<Vec<String>> = None;
    let mut declared: Option<usize> = None;
    loop {
        let line = lines
            .next()
            .ok_or_else(|| parse_err(FMT, "missing DATA line"))?
            .trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let key = it.next().unwrap_or_default().to_ascii_uppercase();
        match key.as_str() {
            "FIELDS" => fields = Some(it.map(|s| s.to_ascii_lowercase()).collect()),
            "POINTS" => {
                declared = it.next().and_then(|v| v.parse().ok());
            }
            "DATA" => {
                let kind = it.next().unwrap_or_default();
                if kind != "ascii" {
                    return Err(parse_err(FMT, format!("unsupported DATA `{kind}`")));
                }
                break;
            }
            _ => {}
        }
    }
    let fields = fields.ok_or_else(|| parse_err(FMT, "missing FIELDS line"))?;
    let col = |name: &str| fields.iter().position(|f| f == name);
    let (ix, iy, iz) = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(parse_err(FMT, "FIELDS must include x, y and z")),
    };
    let ii = col("intensity");
    let mut acc = Accumulator::with_capacity(declared.unwrap_or(0));
    for line in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v = row_values(line);
        if v.len() < fields.len() {
            return Err(parse_err(FMT, format!("short data row `{line}`")));
        }
        acc.push(v[ix], v[iy], v[iz], ii.map(|i| v[i] as f32));
    }
    Ok(acc.finish(ii.is_some()))
}

fn load_ply_ascii(bytes: &[u8]) -> Result<LoadedCloud> {
    const FMT: &str = "ply-ascii";
    let text = utf8(bytes, FMT)?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(parse_err(FMT, "missing `ply` magic"));
    }
    let mut vertex_count: Option<usize> = None;
    let mut in_vertex = false;
    let mut props: Vec<String> = Vec::new();
    loop {
        let line = lines
            .next()
            .ok_or_else(|| parse_err(FMT, "missing end_header"))?
            .trim();
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", kind, ..] if *kind != "ascii" => {
                return Err(parse_err(FMT, format!("unsupported format `{kind}`")));
            }
            ["element", "vertex", n] => {
                if vertex_count.is_some() {
                    return Err(parse_err(FMT, "duplicate vertex element"));
                }
                vertex_count = Some(n.parse().map_err(|_| parse_err(FMT, "bad vertex count"))?);
                in_vertex = true;
            }
            ["element", ..] => {
                if vertex_count.is_none() {
                    return Err(parse_err(FMT, "vertex must be the first element"));
                }
                in_vertex = false;
            }
            ["property", "list", ..] if in_vertex => {
                return Err(parse_err(FMT, "list properties on vertices are unsupported"));
            }
            ["property", _, name] if in_vertex => props.push(name.to_ascii_lowercase()),
            ["end_header"] => break,
            _ => {}
        }
    }
    let n = vertex_count.ok_or_else(|| parse_err(FMT, "missing vertex element"))?;
    let col = |name: &str| props.iter().position(|f| f == name);
    let (ix, iy, iz) = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(parse_err(FMT, "vertex must have x, y and z")),
    };
    let ii = col("intensity");
    let mut acc = Accumulator::with_capacity(n);
    let mut seen = 0;
    for line in lines.filter(|l| !l.trim().is_empty()) {
        if seen == n {
            break;
        }
        let v = row_values(line);
        if v.len() < props.len() {
            return Err(parse_err(FMT, format!("short vertex row `{}`", line.trim())));
        }
        acc.push(v[ix], v[iy], v[iz], ii.map(|i| v[i] as f32));
        seen += 1;
    }
    if seen < n {
        return Err(parse_err(FMT, format!("expected {n} vertices, found {seen}")));
    }
    Ok(acc.finish(ii.is_some()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kitti_record(v: [f32; 4]) -> Vec<u8> {
        v.iter().flat_map(|f| f.to_le_bytes()).collect()
    }

    #[test]
    fn kitti_single_record() {
        let bytes = kitti_record([1.0, 2.0, 3.0, 0.5]);
        let got = load_point_cloud(&bytes, CloudFormat::KittiBin).unwrap();
        assert_eq!(got.cloud.points, vec![[1.0, 2.0, 3.0]]);
        assert_eq!(got.cloud.intensity, Some(vec![0.5]));
        assert_eq!(got.rejected, 0);
    }

    #[test]
    fn kitti_empty() {
        let got = load_point_cloud(&[], CloudFormat::KittiBin).unwrap();
        assert!(got.cloud.is_empty());
    }

    #[test]
    fn kitti_truncated() {
        let err = load_point_cloud(&[0u8; 24], CloudFormat::KittiBin).unwrap_err();
        assert!(matches!(err, Error::TruncatedRecord { len: 24, record: 16 }));
    }

    #[test]
    fn kitti_rejects_non_finite() {
        let mut bytes = kitti_record([f32::NAN, 0.0, 0.0, 0.0]);
        bytes.extend(kitti_record([4.0, 5.0, 6.0, 1.0]));
        let got = load_point_cloud(&bytes, CloudFormat::KittiBin).unwrap();
        assert_eq!(got.rejected, 1);
        assert_eq!(got.cloud.points, vec![[4.0, 5.0, 6.0]]);
    }

    #[test]
    fn kitti_write_then_read() {
        let cloud = PointCloud::new(vec![[1.5, -2.0, 0.25], [10.0, 0.0, -1.0]]);
        let got = load_point_cloud(&write_kitti_bin(&cloud), CloudFormat::KittiBin).unwrap();
        assert_eq!(got.cloud.points, cloud.points);
    }

    #[test]
    fn pcd_ascii() {
        let text = "# .PCD v0.7\nVERSION 0.7\nFIELDS x y z intensity\nSIZE 4 4 4 4\nTYPE F F F F\n\
                    COUNT 1 1 1 1\nWIDTH 2\nHEIGHT 1\nPOINTS 2\nDATA ascii\n1 2 3 0.1\nnan 0 0 0\n";
        let got = load_point_cloud(text.as_bytes(), CloudFormat::PcdAscii).unwrap();
        assert_eq!(got.cloud.points, vec![[1.0, 2.0, 3.0]]);
        assert_eq!(got.rejected, 1);
    }

    #[test]
    fn pcd_binary_rejected() {
        let text = "FIELDS x y z\nDATA binary\n";
        assert!(load_point_cloud(text.as_bytes(), CloudFormat::PcdAscii).is_err());
    }

    #[test]
    fn ply_roundtrip() {
        let cloud = PointCloud::new(vec![[1.0, 2.0, 3.0], [-4.5, 0.0, 2.25]]);
        let text = write_ply_ascii(&cloud);
        let got = load_point_cloud(text.as_bytes(), CloudFormat::PlyAscii).unwrap();
        assert_eq!(got.cloud.points, cloud.points);
    }

    #[test]
    fn ply_short_body() {
        let text = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\n\
                    property float z\nend_header\n1 2 3\n";
        assert!(load_point_cloud(text.as_bytes(), CloudFormat::PlyAscii).is_err());
    }

    #[test]
    fn format_names() {
        assert_eq!("kitti-bin".parse::<CloudFormat>().unwrap(), CloudFormat::KittiBin);
        assert!(matches!("las".parse::<CloudFormat>(), Err(Error::UnknownFormat(_))));
        assert_eq!(CloudFormat::from_extension("PLY"), Some(CloudFormat::PlyAscii));
    }
}

//! Per-frame target bitrates.

use crate::error::{Error, Result};

/// Piecewise-constant targets from `frame_index,target_bpp` lines. Frames
/// before the first entry use the first target; frames after the last
/// entry reuse the last one.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetSchedule {
    entries: Vec<(usize, f64)>,
}

impl TargetSchedule {
    pub fn constant(bpp: f64) -> Self {
        Self { entries: vec![(0, bpp)] }
    }

    pub fn from_entries(mut entries: Vec<(usize, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Config("schedule has no entries".into()));
        }
        if let Some(&(i, b)) = entries.iter().find(|e| !(e.1 > 0.0) || !e.1.is_finite()) {
            return Err(Error::Config(format!("frame {i}: target {b} must be positive")));
        }
        entries.sort_by_key(|e| e.0);
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Config("duplicate frame index in schedule".into()));
        }
        Ok(Self { entries })
    }

    /// Parses `frame_index,target_bpp` lines. Blank lines and `#` comments
    /// are skipped, as is a leading header line that does not parse.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split(',').map(str::trim);
            let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Config(format!("schedule line {}: expected `frame_index,target_bpp`", n + 1)));
            };
            match (a.parse::<usize>(), b.parse::<f64>()) {
                (Ok(i), Ok(v)) => entries.push((i, v)),
                _ if entries.is_empty() && a.parse::<f64>().is_err() => continue,
                _ => return Err(Error::Config(format!("schedule line {}: cannot parse `{line}`", n + 1))),
            }
        }
        Self::from_entries(entries)
    }

    /// The 30/40/30 step pattern over `frames` frames.
    pub fn three_step(frames: usize, targets: [f64; 3]) -> Self {
        let a = frames * 3 / 10;
        let b = frames * 7 / 10;
        Self {
            entries: vec![(0, targets[0]), (a, targets[1]), (b, targets[2])],
        }
    }

    pub fn target(&self, frame: usize) -> f64 {
        self.entries
            .iter()
            .rev()
            .find(|e| e.0 <= frame)
            .unwrap_or(&self.entries[0])
            .1
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_lookup() {
        let s = TargetSchedule::parse("frame_index,target_bpp\n0,1.5\n# comment\n5, 1.3\n\n").unwrap();
        assert_eq!(s.target(0), 1.5);
        assert_eq!(s.target(4), 1.5);
        assert_eq!(s.target(5), 1.3);
        assert_eq!(s.target(500), 1.3);
        let late = TargetSchedule::parse("3,2.0").unwrap();
        assert_eq!(late.target(0), 2.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(TargetSchedule::parse("").is_err());
        assert!(TargetSchedule::parse("0,1.0\nx,y").is_err());
        assert!(TargetSchedule::parse("0,-1").is_err());
        assert!(TargetSchedule::parse("0,1\n0,2").is_err());
        assert!(TargetSchedule::parse("0,1,2").is_err());
    }

    #[test]
    fn three_step_split() {
        let s = TargetSchedule::three_step(100, [1.5, 1.3, 1.7]);
        assert_eq!((s.target(29), s.target(30), s.target(69), s.target(70)), (1.5, 1.3, 1.3, 1.7));
    }
}

//! Evaluation harness behind the `ricodec` binary: frame sources, stream
//! runs, R-D sweeps, the transform ablation and CSV reports.

pub mod cli;
pub mod error;
pub mod harness;
pub mod input;
pub mod report;

pub use error::{CliError, Result};
pub use harness::{ablation, rd_curve, run_stream, AblationRow, PoseMode, RdCurve, RdPoint, RunOptions, StreamRun};
pub use input::{Frame, Input};
pub use report::{Aggregates, ReportRow, RunReport};

//! LiDAR range-image codec: spherical projection, intra/inter prediction,
//! 3-level Haar residual transform with energy-adaptive subband steps,
//! binary arithmetic coding and lambda-domain rate control.
//!
//! The numeric kernels are generic over [`Real`]; the aliases below fix
//! `f64`, which is what the CLI and the tests use.

pub mod adwt;
pub mod bitstream;
pub mod entropy;
pub mod error;
pub mod metrics;
pub mod pointcloud;
pub mod prediction;
pub mod projection;
pub mod ratecontrol;
pub mod scalar;
pub mod synthetic;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Scalar = f64;
pub type Config = bitstream::CodecConfig<Scalar>;
pub type Encoder = bitstream::StreamEncoder<Scalar>;
pub type Decoder = bitstream::StreamDecoder<Scalar>;
pub type RdModel = ratecontrol::RdModel<Scalar>;
pub type RcConfig = ratecontrol::RcConfig<Scalar>;
pub type Residual = prediction::ResidualImage<Scalar>;

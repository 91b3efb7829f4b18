//! Fairness-aware continual semantic segmentation at desk scale.
//!
//! The crate is generic over the floating-point type through [`Scalar`];
//! training runs in `f64`, and `f32` aliases are provided for inference.

pub mod error;
pub mod losses;
pub mod metrics;
pub mod numerics;
pub mod proto;
pub mod scalar;
pub mod segmodel;
pub mod synthdata;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Grid64 = numerics::Grid<f64>;
pub type Grid32 = numerics::Grid<f32>;
pub type ModelParams64 = segmodel::ModelParams<f64>;
pub type ModelParams32 = segmodel::ModelParams<f32>;
pub type PrototypeBank64 = proto::PrototypeBank<f64>;
pub type SegSample64 = synthdata::SegSample<f64>;

//! Feature coding for large-model intermediate tensors: containers, packing,
//! calibrated quantization, pluggable codecs, redundancy analysis and
//! rate/throughput measurement.

pub mod codec;
pub mod container;
pub mod error;
pub mod metrics;
pub mod packing;
pub mod pipeline;
pub mod practicality;
pub mod quant;
pub mod redundancy;
pub mod synthgen;

pub use container::{FeatureTensor, ScalarPrecision};
pub use error::{Error, Result};

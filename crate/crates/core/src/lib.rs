//! Parallel-imaging reconstruction with k-space error correction.

pub mod config;
pub mod data;
pub mod error;
pub mod grappa;
pub mod io;
mod linalg;
pub mod metrics;
pub mod nn;
pub mod phantom;
pub mod pipeline;
pub mod raki;
pub mod sampling;
pub mod scenarios;
pub mod sense;
pub mod spark;
pub mod tensor;

pub use data::{complex_combine, sos_combine, Axis, ImageData, KspaceData, RealImage};
pub use error::{Error, Result};
pub use num_complex::Complex64;
pub use sampling::{AcsRegion, SamplingMask};
pub use tensor::ComplexTensor;

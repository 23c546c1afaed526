//! Time-series field reconstruction from sparse sensors with a selective
//! state-space temporal branch and Fourier-operator spatial branches.

pub mod codec;
pub mod data;
pub mod error;
pub mod fno;
pub mod model;
pub mod nn;
pub mod registry;
pub mod rng;
pub mod spectral;
pub mod ssm;
pub mod tensor;
pub mod traineval;

pub use error::{Error, FormatError, Result};
pub use tensor::{Tape, Tensor, Var};

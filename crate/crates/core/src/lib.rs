//! Symmetric weight-noise SGD and loss-landscape probes for small networks.

pub mod error;
pub mod harness;
pub mod landscape;
pub mod nnet;
pub mod objective;
pub mod optim;
pub mod perturb;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};

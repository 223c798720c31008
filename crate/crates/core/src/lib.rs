//! Nonlinear model order reduction: convolutional autoencoders for the
//! spatial compression of PDE snapshots, an autonomous LSTM for the latent
//! dynamics, and a POD baseline, together with the data generators and
//! evaluation metrics needed to compare them.

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod lstm;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod pod;
pub mod solvers;
pub mod training;

pub use error::{Error, ErrorKind, Result};
pub use numerics::Tensor;

//! Differentiable layers with explicit forward caches and backward passes.

mod activation;
mod conv;
mod dense;

pub use activation::{sigmoid, tanh, Activation};
pub use conv::{Conv2dLayer, ConvCache, ConvTranspose2dLayer};
pub use dense::{DenseCache, DenseLayer};

//! Dense tensors and the linear-algebra and transform kernels.

mod fft;
mod linalg;
mod svd;
mod tensor;

pub use fft::{fft2_forward, fft2_inverse, fft_real, wavenumber, Fft2, Spectrum2};
pub use linalg::matmul;
pub(crate) use linalg::gemm;
pub use rustfft::num_complex::Complex64;
pub use svd::{thin_svd, Svd};
pub use tensor::Tensor;

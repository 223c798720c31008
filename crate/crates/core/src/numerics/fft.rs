use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Complex spectrum of an `nx x ny` real field, row-major, unnormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum2 {
    pub nx: usize,
    pub ny: usize,
    pub data: Vec<Complex64>,
}

impl Spectrum2 {
    pub fn at(&self, kx: usize, ky: usize) -> Complex64 {
        self.data[kx * self.ny + ky]
    }
}

/// Reusable 2-D transform for a fixed power-of-two grid.
#[derive(Clone)]
pub struct Fft2 {
    nx: usize,
    ny: usize,
    fwd_x: Arc<dyn Fft<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Fft2({}x{})", self.nx, self.ny)
    }
}

impl Fft2 {
    pub fn new(nx: usize, ny: usize) -> Result<Self> {
        for n in [nx, ny] {
            if !n.is_power_of_two() {
                return Err(Error::invalid(format!(
                    "FFT extent {n} is not a power of two"
                )));
            }
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            nx,
            ny,
            fwd_x: planner.plan_fft_forward(nx),
            fwd_y: planner.plan_fft_forward(ny),
            inv_x: planner.plan_fft_inverse(nx),
            inv_y: planner.plan_fft_inverse(ny),
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    /// In-place unnormalized forward transform.
    pub fn forward(&self, buf: &mut [Complex64]) {
        self.run(buf, &self.fwd_x, &self.fwd_y);
    }

    /// In-place inverse transform including the `1/(nx*ny)` factor.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.run(buf, &self.inv_x, &self.inv_y);
        let s = 1.0 / (self.nx * self.ny) as f64;
        buf.iter_mut().for_each(|z| *z *= s);
    }

    fn run(&self, buf: &mut [Complex64], fx: &Arc<dyn Fft<f64>>, fy: &Arc<dyn Fft<f64>>) {
        assert_eq!(buf.len(), self.nx * self.ny);
        fy.process(buf);
        let mut t = vec![Complex64::default(); buf.len()];
        transpose(buf, &mut t, self.nx, self.ny);
        fx.process(&mut t);
        transpose(&t, buf, self.ny, self.nx);
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    for i in 0..rows {
        for j in 0..cols {
            dst[j * rows + i] = src[i * cols + j];
        }
    }
}

pub fn fft2_forward(field: &Tensor) -> Result<Spectrum2> {
    let (nx, ny) = field.dims2("fft2_forward")?;
    let plan = Fft2::new(nx, ny)?;
    let mut data: Vec<Complex64> = field.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    plan.forward(&mut data);
    Ok(Spectrum2 { nx, ny, data })
}

/// Real part of the inverse transform.
pub fn fft2_inverse(spectrum: &Spectrum2) -> Result<Tensor> {
    let plan = Fft2::new(spectrum.nx, spectrum.ny)?;
    let mut data = spectrum.data.clone();
    plan.inverse(&mut data);
    Tensor::new(
        vec![spectrum.nx, spectrum.ny],
        data.into_iter().map(|z| z.re).collect(),
    )
}

/// Unnormalized 1-D DFT of a real series of any length.
pub fn fft_real(series: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = series.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    if !buf.is_empty() {
        FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    }
    buf
}

/// Signed integer wavenumber of FFT bin `k` on an `n`-point grid.
pub fn wavenumber(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn direct_dft(field: &Tensor) -> Vec<Complex64> {
        let (nx, ny) = (field.shape()[0], field.shape()[1]);
        let mut out = vec![Complex64::default(); nx * ny];
        for kx in 0..nx {
            for ky in 0..ny {
                let mut acc = Complex64::default();
                for x in 0..nx {
                    for y in 0..ny {
                        let phase = -2.0 * PI * ((kx * x) as f64 / nx as f64 + (ky * y) as f64 / ny as f64);
                        acc += Complex64::from_polar(field.at(&[x, y]), phase);
                    }
                }
                out[kx * ny + ky] = acc;
            }
        }
        out
    }

    #[test]
    fn constant_field_is_zero_mode() {
        let spec = fft2_forward(&Tensor::full(&[8, 4], 2.5)).unwrap();
        assert!((spec.at(0, 0).re - 2.5 * 32.0).abs() < 1e-12);
        let rest: f64 = spec.data.iter().skip(1).map(|z| z.norm()).sum();
        assert!(rest < 1e-12);
    }

    #[test]
    fn single_sine_mode() {
        let n = 64;
        let f = Tensor::from_fn(&[1, n], |j| (2.0 * PI * j as f64 / n as f64).sin());
        let spec = fft2_forward(&f).unwrap();
        for k in 0..n {
            let mag = spec.at(0, k).norm();
            if k == 1 || k == n - 1 {
                assert!((mag - n as f64 / 2.0).abs() < 1e-10);
            } else {
                assert!(mag < 1e-10, "bin {k} has {mag}");
            }
        }
    }

    #[test]
    fn matches_direct_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = Tensor::random_uniform(&[16, 16], -1.0, 1.0, &mut rng);
        let spec = fft2_forward(&f).unwrap();
        for (a, b) in spec.data.iter().zip(direct_dft(&f)) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(matches!(
            fft2_forward(&Tensor::zeros(&[6, 8])),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn round_trip_and_parseval_all_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut n = 1;
        while n <= 256 {
            for m in [1, n, 256 / n.max(1)] {
                let f = Tensor::random_uniform(&[n, m.max(1)], -1.0, 1.0, &mut rng);
                let spec = fft2_forward(&f).unwrap();
                let back = fft2_inverse(&spec).unwrap();
                let err = back.data().iter().zip(f.data()).fold(0.0f64, |e, (a, b)| e.max((a - b).abs()));
                assert!(err <= 1e-12, "{n}x{m}: {err}");
                let energy: f64 = spec.data.iter().map(|z| z.norm_sqr()).sum::<f64>() / f.len() as f64;
                assert!((energy - f.norm_sq()).abs() <= 1e-10 * f.norm_sq());
            }
            n *= 2;
        }
    }
}

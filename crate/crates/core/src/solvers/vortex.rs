use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{wavenumber, Complex64, Fft2, Tensor};

/// Decaying 2-D vorticity flow on the periodic box `[0, 2pi]^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VortexFlowConfig {
    pub re: f64,
    /// Grid points per side (power of two).
    pub n: usize,
    pub dt: f64,
    pub t_final: f64,
    /// Snapshot window; `None` samples `[0, t_final]`.
    pub sample_window: Option<[f64; 2]>,
    pub nt: usize,
    /// Vortices per initial condition: the first positive, the rest negative.
    pub nv: usize,
    /// Denominator of the Gaussian exponent.
    pub width: f64,
    /// Centres are drawn from `[lo, hi]^2`.
    pub subdomain: [f64; 2],
}

impl Default for VortexFlowConfig {
    fn default() -> Self {
        Self {
            re: 5e3,
            n: 64,
            dt: 1e-2,
            t_final: 120.0,
            sample_window: None,
            nt: 30,
            nv: 2,
            width: 0.1,
            subdomain: [PI / 2.0, 1.5 * PI],
        }
    }
}

impl VortexFlowConfig {
    /// 128^2 grid integrated to 250, snapshots from `[0, 120]`.
    pub fn full_size() -> Self {
        Self {
            n: 128,
            t_final: 250.0,
            sample_window: Some([0.0, 120.0]),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.n.is_power_of_two() || self.n < 4 {
            return Err(Error::invalid(format!("grid {} is not a power of two >= 4", self.n)));
        }
        if !(self.re > 0.0 && self.dt > 0.0 && self.t_final > 0.0 && self.width > 0.0) {
            return Err(Error::invalid("re, dt, t_final and width must be positive"));
        }
        if self.nt < 2 || self.nv == 0 {
            return Err(Error::invalid("need nt >= 2 and nv >= 1"));
        }
        let [a, b] = self.window();
        if !(0.0 <= a && a < b && b <= self.t_final) {
            return Err(Error::invalid(format!("sample window [{a}, {b}] outside [0, {}]", self.t_final)));
        }
        let [lo, hi] = self.subdomain;
        if !(0.0 <= lo && lo <= hi && hi <= TAU) {
            return Err(Error::invalid("subdomain must lie inside [0, 2pi]"));
        }
        Ok(())
    }

    pub fn window(&self) -> [f64; 2] {
        self.sample_window.unwrap_or([0.0, self.t_final])
    }

    /// Step indices of the snapshots (nearest step to each even sample time).
    pub fn snapshot_steps(&self) -> Vec<usize> {
        let [a, b] = self.window();
        (0..self.nt)
            .map(|k| ((a + (b - a) * k as f64 / (self.nt - 1) as f64) / self.dt).round() as usize)
            .collect()
    }

    /// `+1` for the first vortex, `-1` for the others.
    pub fn signs(&self) -> Vec<f64> {
        (0..self.nv).map(|i| if i == 0 { 1.0 } else { -1.0 }).collect()
    }

    pub fn spacing(&self) -> f64 {
        TAU / self.n as f64
    }
}

fn periodic_delta(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

/// Sum of signed Gaussians `exp(-|x - x_i|^2 / width)` (minimum-image
/// distance), `[n, n]` indexed `[x, y]`.
pub fn vortex_initial_condition(cfg: &VortexFlowConfig, centers: &[(f64, f64)], signs: &[f64]) -> Result<Tensor> {
    if centers.len() != signs.len() || centers.is_empty() {
        return Err(Error::invalid("need one sign per vortex centre"));
    }
    if signs.iter().any(|s| s.abs() != 1.0) {
        return Err(Error::invalid("vortex signs must be +1 or -1"));
    }
    let h = cfg.spacing();
    let n = cfg.n;
    Ok(Tensor::from_fn(&[n, n], |k| {
        let (x, y) = ((k / n) as f64 * h, (k % n) as f64 * h);
        centers
            .iter()
            .zip(signs)
            .map(|(&(cx, cy), s)| {
                let r2 = periodic_delta(x, cx).powi(2) + periodic_delta(y, cy).powi(2);
                s * (-r2 / cfg.width).exp()
            })
            .sum()
    }))
}

/// Spectral machinery for one grid size.
struct Spectral {
    fft: Fft2,
    kx: Vec<f64>,
    ky: Vec<f64>,
    k2: Vec<f64>,
    keep: Vec<bool>,
}

impl Spectral {
    fn new(n: usize) -> Result<Self> {
        let fft = Fft2::new(n, n)?;
        let cut = n as f64 / 3.0;
        let mut s = Self {
            fft,
            kx: Vec::with_capacity(n * n),
            ky: Vec::with_capacity(n * n),
            k2: Vec::with_capacity(n * n),
            keep: Vec::with_capacity(n * n),
        };
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (wavenumber(i, n), wavenumber(j, n));
                let nyq = 2 * i == n || 2 * j == n;
                s.kx.push(if nyq { 0.0 } else { a });
                s.ky.push(if nyq { 0.0 } else { b });
                s.k2.push(a * a + b * b);
                s.keep.push(a.abs() < cut && b.abs() < cut);
            }
        }
        Ok(s)
    }

    fn forward(&self, field: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = field.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft.forward(&mut buf);
        buf
    }

    fn inverse(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        self.fft.inverse(&mut spec);
        spec.into_iter().map(|z| z.re).collect()
    }

    /// `(u, v) = (dpsi/dy, -dpsi/dx)` with `lap psi = -omega`, in spectral space.
    fn velocity_hat(&self, w: &[Complex64]) -> (Vec<Complex64>, Vec<Complex64>) {
        let i = Complex64::i();
        let mut u = vec![Complex64::default(); w.len()];
        let mut v = vec![Complex64::default(); w.len()];
        for k in 1..w.len() {
            let psi = w[k] / self.k2[k];
            u[k] = i * self.ky[k] * psi;
            v[k] = -i * self.kx[k] * psi;
        }
        (u, v)
    }

    /// Dealiased `div(u omega)`, with an exactly zero mean mode.
    fn advection(&self, w_hat: &[Complex64]) -> Vec<Complex64> {
        let trunc: Vec<Complex64> = w_hat
            .iter()
            .zip(&self.keep)
            .map(|(&z, &k)| if k { z } else { Complex64::default() })
            .collect();
        let (u_hat, v_hat) = self.velocity_hat(&trunc);
        let w = self.inverse(trunc);
        let u = self.inverse(u_hat);
        let v = self.inverse(v_hat);
        let uw: Vec<f64> = u.iter().zip(&w).map(|(a, b)| a * b).collect();
        let vw: Vec<f64> = v.iter().zip(&w).map(|(a, b)| a * b).collect();
        let (uw, vw) = (self.forward(&uw), self.forward(&vw));
        let i = Complex64::i();
        let mut out: Vec<Complex64> = (0..w_hat.len())
            .map(|k| {
                if self.keep[k] {
                    i * (self.kx[k] * uw[k] + self.ky[k] * vw[k])
                } else {
                    Complex64::default()
                }
            })
            .collect();
        out[0] = Complex64::default();
        out
    }
}

/// Velocity components `[n, n]` of a periodic vorticity field.
pub fn velocity_from_vorticity(omega: &Tensor) -> Result<(Tensor, Tensor)> {
    let (n, m) = omega.dims2("velocity_from_vorticity")?;
    if n != m {
        return Err(Error::shape("velocity_from_vorticity", format!("{:?} is not square", omega.shape())));
    }
    let s = Spectral::new(n)?;
    let (u, v) = s.velocity_hat(&s.forward(omega.data()));
    Ok((
        Tensor::new(vec![n, n], s.inverse(u))?,
        Tensor::new(vec![n, n], s.inverse(v))?,
    ))
}

/// Grid mean of `omega^2 / 2`.
pub fn enstrophy(omega: &Tensor) -> f64 {
    0.5 * omega.norm_sq() / omega.len() as f64
}

pub fn vortex_solve(cfg: &VortexFlowConfig, centers: &[(f64, f64)], signs: &[f64]) -> Result<Tensor> {
    cfg.validate()?;
    vortex_solve_from(cfg, &vortex_initial_condition(cfg, centers, signs)?)
}

/// Pseudospectral integration from `omega0`: advection by second-order
/// Adams-Bashforth (forward Euler on the first step), viscosity by
/// Crank-Nicolson, 2/3-rule dealiasing. Returns `[nt, n, n]`.
pub fn vortex_solve_from(cfg: &VortexFlowConfig, omega0: &Tensor) -> Result<Tensor> {
    cfg.validate()?;
    if omega0.shape() != [cfg.n, cfg.n] {
        return Err(Error::shape("vortex_solve", format!("{:?} for grid {}", omega0.shape(), cfg.n)));
    }
    omega0.ensure_finite("initial vorticity")?;
    let s = Spectral::new(cfg.n)?;
    let nu = 1.0 / cfg.re;
    let dt = cfg.dt;
    let steps = cfg.snapshot_steps();
    let limit = 10.0 * omega0.max_abs();

    let mut w = s.forward(omega0.data());
    let mut prev: Option<Vec<Complex64>> = None;
    let mut out = Vec::with_capacity(cfg.nt * omega0.len());
    let mut step = 0;
    for &target in &steps {
        while step < target {
            let nl = s.advection(&w);
            let p = prev.as_ref().unwrap_or(&nl);
            for k in 0..w.len() {
                let a = 0.5 * nu * s.k2[k] * dt;
                let adv = 1.5 * nl[k] - 0.5 * p[k];
                w[k] = ((1.0 - a) * w[k] - dt * adv) / (1.0 + a);
            }
            prev = Some(nl);
            step += 1;
        }
        let field = s.inverse(w.clone());
        if field.iter().any(|v| !v.is_finite() || (limit > 0.0 && v.abs() > limit)) {
            return Err(Error::Numerical(format!("vorticity blew up by t = {:.3}", step as f64 * dt)));
        }
        out.extend(field);
    }
    Tensor::new(vec![cfg.nt, cfg.n, cfg.n], out)
}

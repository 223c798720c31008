use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// 1-D viscous Burgers problem on `[0, L]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BurgersConfig {
    pub length: f64,
    pub t_final: f64,
    pub re: f64,
    /// Grid points; `dx = length / nx`.
    pub nx: usize,
    /// Snapshots, equally spaced on `[0, t_final]` including both ends.
    pub nt: usize,
    /// Requested `dt = dt_factor * dx`, capped by the explicit stability limit.
    pub dt_factor: f64,
    pub x0_range: [f64; 2],
    /// Dirichlet value at `x = 0`.
    pub left_boundary: f64,
}

impl Default for BurgersConfig {
    fn default() -> Self {
        Self {
            length: 1.5,
            t_final: 0.3,
            re: 200.0,
            nx: 256,
            nt: 20,
            dt_factor: 0.5,
            x0_range: [0.0, 1.5],
            left_boundary: 0.0,
        }
    }
}

impl BurgersConfig {
    /// 1024 points and 40 snapshots.
    pub fn full_size() -> Self {
        Self {
            nx: 1024,
            nt: 40,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0 && self.t_final > 0.0 && self.re > 0.0 && self.dt_factor > 0.0) {
            return Err(Error::invalid("Burgers length, t_final, re and dt_factor must be positive"));
        }
        if self.nx < 3 || self.nt < 2 {
            return Err(Error::invalid("Burgers needs nx >= 3 and nt >= 2"));
        }
        let [lo, hi] = self.x0_range;
        if !(0.0 <= lo && lo <= hi && hi <= self.length) {
            return Err(Error::invalid(format!("x0 range {:?} outside [0, {}]", self.x0_range, self.length)));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        self.length / self.nx as f64
    }

    /// Grid nodes `x_i = (i + 1) dx`; the last node is `x = L`.
    pub fn grid(&self) -> Vec<f64> {
        (1..=self.nx).map(|i| i as f64 * self.dx()).collect()
    }

    /// Largest step used: `dt_factor * dx`, but never above `0.5 dx^2 Re`,
    /// which keeps the diffusive eigenvalues inside the RK4 stability region.
    pub fn max_dt(&self) -> f64 {
        let dx = self.dx();
        (self.dt_factor * dx).min(0.5 * dx * dx * self.re)
    }
}

/// `1 + exp(-2 (x - x0)^2 / 0.1^2)`
pub fn burgers_initial_condition(x: f64, x0: f64) -> f64 {
    1.0 + (-2.0 * (x - x0).powi(2) / 0.01).exp()
}

fn rhs(u: &[f64], out: &mut [f64], left: f64, dx: f64, nu: f64) {
    let n = u.len();
    let (a, d) = (1.0 / (4.0 * dx), nu / (dx * dx));
    for i in 0..n {
        let l = if i == 0 { left } else { u[i - 1] };
        let r = if i + 1 == n { u[n - 2] } else { u[i + 1] };
        out[i] = -a * (r * r - l * l) + d * (r - 2.0 * u[i] + l);
    }
}

/// Gaussian pulse centred at `x0`; returns `[nt, nx]`.
pub fn burgers_solve(cfg: &BurgersConfig, x0: f64) -> Result<Tensor> {
    if !(0.0..=cfg.length).contains(&x0) {
        return Err(Error::invalid(format!("x0 = {x0} outside [0, {}]", cfg.length)));
    }
    burgers_solve_with(cfg, |x| burgers_initial_condition(x, x0))
}

/// Second-order central differences in conservative form, classical RK4,
/// Dirichlet at `x = 0` and homogeneous Neumann at `x = L`.
pub fn burgers_solve_with(cfg: &BurgersConfig, ic: impl Fn(f64) -> f64) -> Result<Tensor> {
    cfg.validate()?;
    let n = cfg.nx;
    let (dx, nu) = (cfg.dx(), 1.0 / cfg.re);
    let mut u: Vec<f64> = cfg.grid().into_iter().map(ic).collect();
    let limit = 10.0 * u.iter().fold(cfg.left_boundary.abs(), |m, v| m.max(v.abs()));
    let interval = cfg.t_final / (cfg.nt - 1) as f64;
    let substeps = (interval / cfg.max_dt()).ceil().max(1.0) as usize;
    let dt = interval / substeps as f64;

    let mut out = Vec::with_capacity(cfg.nt * n);
    out.extend_from_slice(&u);
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    let left = cfg.left_boundary;
    for snap in 1..cfg.nt {
        for _ in 0..substeps {
            rhs(&u, &mut k1, left, dx, nu);
            tmp.iter_mut().zip(&u).zip(&k1).for_each(|((t, u), k)| *t = u + 0.5 * dt * k);
            rhs(&tmp, &mut k2, left, dx, nu);
            tmp.iter_mut().zip(&u).zip(&k2).for_each(|((t, u), k)| *t = u + 0.5 * dt * k);
            rhs(&tmp, &mut k3, left, dx, nu);
            tmp.iter_mut().zip(&u).zip(&k3).for_each(|((t, u), k)| *t = u + dt * k);
            rhs(&tmp, &mut k4, left, dx, nu);
            for i in 0..n {
                u[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        if u.iter().any(|v| !v.is_finite() || (limit > 0.0 && v.abs() > limit)) {
            return Err(Error::Numerical(format!(
                "Burgers solution left the 10x bound by t = {:.4}",
                snap as f64 * interval
            )));
        }
        out.extend_from_slice(&u);
    }
    Tensor::new(vec![cfg.nt, n], out)
}

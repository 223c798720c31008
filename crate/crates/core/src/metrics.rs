//! Evaluation quantities: scaled errors, TKE, PSD and vortex tracking.

use crate::error::{Error, Result};
use crate::numerics::{fft_real, Tensor};

pub const ERROR_EPSILON: f64 = 1e-8;
pub const SUPPRESSION_RADIUS: usize = 5;

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// `|truth - pred|^2 / (|truth|^2 + 1e-8)`, Frobenius norms.
pub fn scaled_error(truth: &Tensor, pred: &Tensor) -> Result<f64> {
    same_shape("scaled_error", truth, pred)?;
    let num: f64 = truth.data().iter().zip(pred.data()).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(num / (truth.norm_sq() + ERROR_EPSILON))
}

/// Scaled error of every snapshot of two `[Nt, spatial...]` trajectories.
pub fn error_series(truth: &Tensor, pred: &Tensor) -> Result<Tensor> {
    same_shape("error_series", truth, pred)?;
    if truth.ndim() < 2 {
        return Err(Error::shape("error_series", "expected [Nt, spatial...]"));
    }
    let nt = truth.shape()[0];
    let inner: Vec<usize> = truth.shape()[1..].to_vec();
    let errs = (0..nt)
        .map(|k| {
            let t = Tensor::new(inner.clone(), truth.slab(k).to_vec())?;
            let p = Tensor::new(inner.clone(), pred.slab(k).to_vec())?;
            scaled_error(&t, &p)
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::new(vec![nt], errs)
}

/// Per-step errors of several prediction runs, `[runs, Nt]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSeries {
    pub runs: Tensor,
}

impl ErrorSeries {
    pub fn from_runs(runs: &[Tensor]) -> Result<Self> {
        let first = runs.first().ok_or_else(|| Error::invalid("no runs"))?;
        let nt = first.len();
        let mut data = Vec::with_capacity(runs.len() * nt);
        for r in runs {
            if r.shape() != [nt] {
                return Err(Error::shape("ErrorSeries", format!("run of shape {:?}, expected [{nt}]", r.shape())));
            }
            data.extend_from_slice(r.data());
        }
        Ok(Self { runs: Tensor::new(vec![runs.len(), nt], data)? })
    }

    pub fn n_runs(&self) -> usize {
        self.runs.shape()[0]
    }

    pub fn nt(&self) -> usize {
        self.runs.shape()[1]
    }

    pub fn mean(&self) -> Vec<f64> {
        let r = self.n_runs() as f64;
        (0..self.nt())
            .map(|k| (0..self.n_runs()).map(|i| self.runs.at(&[i, k])).sum::<f64>() / r)
            .collect()
    }

    /// Sample standard deviation across runs; zero for a single run.
    pub fn std(&self) -> Vec<f64> {
        let r = self.n_runs();
        if r < 2 {
            return vec![0.0; self.nt()];
        }
        self.mean()
            .iter()
            .enumerate()
            .map(|(k, m)| {
                let ss: f64 = (0..r).map(|i| (self.runs.at(&[i, k]) - m).powi(2)).sum();
                (ss / (r - 1) as f64).sqrt()
            })
            .collect()
    }
}

/// Quadrature weights for `[nx, ny]` grids with uniform spacing.
/// Periodic axes get uniform weights; bounded axes use the trapezoid rule
/// with half weights on the two end nodes.
pub fn trapezoid_weights(nx: usize, ny: usize, dx: f64, dy: f64, periodic: bool) -> Result<Tensor> {
    if nx < 2 || ny < 2 {
        return Err(Error::invalid("quadrature needs at least 2 nodes per axis"));
    }
    let w1 = |n: usize, h: f64, i: usize| {
        if !periodic && (i == 0 || i + 1 == n) {
            0.5 * h
        } else {
            h
        }
    };
    Ok(Tensor::from_fn(&[nx, ny], |k| w1(nx, dx, k / ny) * w1(ny, dy, k % ny)))
}

/// `0.5 * integral(u'^2 + v'^2)` with the given quadrature weights.
pub fn tke(u_fluct: &Tensor, v_fluct: &Tensor, weights: &Tensor) -> Result<f64> {
    same_shape("tke", u_fluct, v_fluct)?;
    same_shape("tke", u_fluct, weights)?;
    Ok(0.5
        * u_fluct
            .data()
            .iter()
            .zip(v_fluct.data())
            .zip(weights.data())
            .map(|((u, v), w)| w * (u * u + v * v))
            .sum::<f64>())
}

/// One-sided power spectrum of a uniformly sampled series.
#[derive(Debug, Clone, PartialEq)]
pub struct Psd {
    pub frequencies: Vec<f64>,
    pub power: Vec<f64>,
}

/// Periodogram of the mean-removed series, no windowing. `power` sums to
/// the series variance (Parseval).
pub fn psd(series: &[f64], sample_spacing: f64) -> Result<Psd> {
    let t = series.len();
    if t < 8 {
        return Err(Error::invalid(format!("PSD needs at least 8 samples, got {t}")));
    }
    if !(sample_spacing > 0.0) {
        return Err(Error::invalid("sample spacing must be positive"));
    }
    let mean = series.iter().sum::<f64>() / t as f64;
    let centred: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let spec = fft_real(&centred);
    let tf = t as f64;
    let half = t / 2;
    let power = (0..=half)
        .map(|k| {
            let p = spec[k].norm_sqr() / (tf * tf);
            if k == 0 || (t % 2 == 0 && k == half) {
                p
            } else {
                2.0 * p
            }
        })
        .collect();
    let frequencies = (0..=half).map(|k| k as f64 / (tf * sample_spacing)).collect();
    Ok(Psd { frequencies, power })
}

fn periodic_offset(a: usize, b: usize, n: usize) -> usize {
    let d = a.abs_diff(b);
    d.min(n - d)
}

/// Signed extrema of a periodic `[nx, ny]` vorticity field, one per entry of
/// `signs`. A cell is a candidate when `s * omega` is positive and no smaller
/// than any cell within `SUPPRESSION_RADIUS` cells (periodic distance).
/// Returns positive centres first, then negative, each by decreasing
/// magnitude, as `(i * spacing, j * spacing)`.
pub fn vortex_centers(omega: &Tensor, signs: &[f64], spacing: f64) -> Result<Vec<(f64, f64)>> {
    if omega.ndim() != 2 {
        return Err(Error::shape("vortex_centers", format!("expected [nx, ny], got {:?}", omega.shape())));
    }
    if signs.is_empty() {
        return Err(Error::invalid("need at least one vortex"));
    }
    let (nx, ny) = (omega.shape()[0], omega.shape()[1]);
    let r = SUPPRESSION_RADIUS;
    let r2 = r * r;
    let mut out = Vec::with_capacity(signs.len());
    for s in [1.0, -1.0] {
        let wanted = signs.iter().filter(|&&v| v.signum() == s).count();
        if wanted == 0 {
            continue;
        }
        let val = |i: usize, j: usize| s * omega.data()[i * ny + j];
        let mut picked: Vec<(usize, usize, f64)> = Vec::new();
        let mut cands: Vec<(usize, usize, f64)> = (0..nx)
            .flat_map(|i| (0..ny).map(move |j| (i, j)))
            .map(|(i, j)| (i, j, val(i, j)))
            .filter(|&(_, _, v)| v > 0.0)
            .collect();
        cands.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
        let near = |a: (usize, usize), b: (usize, usize)| {
            let (di, dj) = (periodic_offset(a.0, b.0, nx), periodic_offset(a.1, b.1, ny));
            di * di + dj * dj <= r2
        };
        for &(i, j, v) in &cands {
            if picked.len() == wanted {
                break;
            }
            if picked.iter().any(|&(pi, pj, _)| near((i, j), (pi, pj))) {
                continue;
            }
            let is_max = (0..=2 * r).all(|a| {
                (0..=2 * r).all(|b| {
                    let (di, dj) = (a.abs_diff(r), b.abs_diff(r));
                    if di * di + dj * dj > r2 {
                        return true;
                    }
                    let ii = (i + nx * (r / nx + 1) + a - r) % nx;
                    let jj = (j + ny * (r / ny + 1) + b - r) % ny;
                    val(ii, jj) <= v
                })
            });
            if is_max {
                picked.push((i, j, v));
            }
        }
        if picked.len() < wanted {
            return Err(Error::Numerical(format!(
                "found {} distinct extrema of sign {s}, need {wanted}",
                picked.len()
            )));
        }
        out.extend(picked.into_iter().map(|(i, j, _)| (i as f64 * spacing, j as f64 * spacing)));
    }
    Ok(out)
}

//! Proper orthogonal decomposition of a snapshot matrix.

use crate::error::{Error, Result};
use crate::numerics::{matmul, thin_svd, Tensor};

pub const DEFAULT_KAPPA: f64 = 0.999;

#[derive(Debug, Clone, PartialEq)]
pub struct PodBasis {
    /// `N x r`, orthonormal columns.
    pub modes: Tensor,
    /// `r`, nonincreasing.
    pub singular_values: Tensor,
    /// Column mean removed before the decomposition, if any.
    pub mean: Option<Tensor>,
}

/// Thin SVD of `x` (`N x m`, one snapshot per column).
///
/// With `center`, the mean column is subtracted first and added back by
/// [`PodBasis::reconstruct`].
pub fn compute_pod(x: &Tensor, center: bool) -> Result<PodBasis> {
    let (n, m) = x.dims2("compute_pod")?;
    let mut work = x.clone();
    let mean = if center {
        let mut mu = vec![0.0; n];
        for (i, row) in x.data().chunks(m).enumerate() {
            mu[i] = row.iter().sum::<f64>() / m as f64;
        }
        for (row, mu) in work.data_mut().chunks_mut(m).zip(&mu) {
            row.iter_mut().for_each(|v| *v -= mu);
        }
        Some(Tensor::from_vec(mu))
    } else {
        None
    };
    let svd = thin_svd(&work)?;
    Ok(PodBasis {
        modes: svd.u,
        singular_values: svd.s,
        mean,
    })
}

/// Flattens `[Ns, Nt, spatial...]` into the `N x (Ns*Nt)` snapshot matrix.
pub fn snapshot_matrix(samples: &Tensor) -> Result<Tensor> {
    if samples.ndim() < 3 {
        return Err(Error::shape("snapshot_matrix", format!("{:?}", samples.shape())));
    }
    let n = samples.shape()[2..].iter().product::<usize>();
    samples.clone().reshape(&[samples.len() / n, n])?.transpose()
}

impl PodBasis {
    pub fn dim(&self) -> usize {
        self.modes.shape()[0]
    }

    pub fn rank(&self) -> usize {
        self.modes.shape()[1]
    }

    fn leading(&self, nh: usize) -> Result<Tensor> {
        if nh == 0 || nh > self.rank() {
            return Err(Error::invalid(format!("Nh = {nh} outside 1..={}", self.rank())));
        }
        let r = self.rank();
        let cols: Vec<f64> = self
            .modes
            .data()
            .chunks(r)
            .flat_map(|row| row[..nh].iter().copied())
            .collect();
        Tensor::new(vec![self.dim(), nh], cols)
    }

    fn as_columns(&self, x: &Tensor, op: &'static str) -> Result<Tensor> {
        let x = if x.ndim() == 1 { x.clone().reshape(&[x.len(), 1])? } else { x.clone() };
        let (n, _) = x.dims2(op)?;
        if n != self.dim() {
            return Err(Error::shape(op, format!("{n} rows for a basis of dimension {}", self.dim())));
        }
        Ok(x)
    }

    /// `h = Psi_nh^T (x - mean)`, `x` is `[N]` or `[N x B]`; returns `[nh x B]`.
    pub fn project(&self, x: &Tensor, nh: usize) -> Result<Tensor> {
        let psi = self.leading(nh)?;
        let mut x = self.as_columns(x, "pod_project")?;
        if let Some(mu) = &self.mean {
            let b = x.shape()[1];
            for (row, m) in x.data_mut().chunks_mut(b).zip(mu.data()) {
                row.iter_mut().for_each(|v| *v -= m);
            }
        }
        matmul(&psi.transpose()?, &x)
    }

    /// `mean + Psi_nh h`, `h` is `[nh]` or `[nh x B]`; returns `[N x B]`.
    pub fn reconstruct(&self, h: &Tensor, nh: usize) -> Result<Tensor> {
        let psi = self.leading(nh)?;
        let h = if h.ndim() == 1 { h.clone().reshape(&[h.len(), 1])? } else { h.clone() };
        if h.shape()[0] != nh {
            return Err(Error::shape("pod_reconstruct", format!("{:?} for Nh = {nh}", h.shape())));
        }
        let mut x = matmul(&psi, &h)?;
        if let Some(mu) = &self.mean {
            let b = x.shape()[1];
            for (row, m) in x.data_mut().chunks_mut(b).zip(mu.data()) {
                row.iter_mut().for_each(|v| *v += m);
            }
        }
        Ok(x)
    }

    /// Rank-`nh` projection of every column of `x`.
    pub fn project_reconstruct(&self, x: &Tensor, nh: usize) -> Result<Tensor> {
        self.reconstruct(&self.project(x, nh)?, nh)
    }

    /// Frobenius norm of `x - reconstruct(project(x))`.
    pub fn reconstruction_error(&self, x: &Tensor, nh: usize) -> Result<f64> {
        let x = self.as_columns(x, "pod_error")?;
        let xr = self.project_reconstruct(&x, nh)?;
        Ok(x.data()
            .iter()
            .zip(xr.data())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt())
    }
}

/// Smallest `Nh` whose leading singular values capture a `kappa` fraction of
/// the total energy `sum(sigma^2)`.
pub fn select_rank(singular_values: &[f64], kappa: f64) -> Result<usize> {
    if singular_values.is_empty() {
        return Err(Error::invalid("select_rank needs at least one singular value"));
    }
    if !(kappa > 0.0 && kappa <= 1.0) {
        return Err(Error::invalid(format!("kappa = {kappa} outside (0, 1]")));
    }
    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return Ok(1);
    }
    let mut acc = 0.0;
    for (i, s) in singular_values.iter().enumerate() {
        acc += s * s;
        if acc >= kappa * total {
            return Ok(i + 1);
        }
    }
    Ok(singular_values.len())
}

//! Thin singular value decomposition.
//!
//! Tall inputs are first reduced with a Householder QR so that the one-sided
//! (Hestenes) Jacobi iteration only rotates `r x r` columns. Wide inputs are
//! handled through the transpose.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

const MAX_SWEEPS: usize = 80;

/// `x = u * diag(s) * v^T` with `s` nonincreasing.
#[derive(Debug, Clone)]
pub struct Svd {
    /// `N x r` left singular vectors (columns).
    pub u: Tensor,
    /// `r` singular values, nonnegative and nonincreasing.
    pub s: Tensor,
    /// `m x r` right singular vectors (columns).
    pub v: Tensor,
}

pub fn thin_svd(x: &Tensor) -> Result<Svd> {
    let (n, m) = x.dims2("thin_svd")?;
    x.ensure_finite("thin_svd input")?;
    if n >= m {
        let cols = to_columns(x.data(), n, m);
        let (u, s, v) = svd_tall(cols, n, m)?;
        Ok(Svd {
            u: from_columns(&u, n),
            s: Tensor::from_vec(s),
            v: from_columns(&v, m),
        })
    } else {
        // x^T = v s u^T
        let xt = x.transpose()?;
        let cols = to_columns(xt.data(), m, n);
        let (u, s, v) = svd_tall(cols, m, n)?;
        Ok(Svd {
            u: from_columns(&v, n),
            s: Tensor::from_vec(s),
            v: from_columns(&u, m),
        })
    }
}

fn to_columns(data: &[f64], rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..cols)
        .map(|j| (0..rows).map(|i| data[i * cols + j]).collect())
        .collect()
}

fn from_columns(cols: &[Vec<f64>], rows: usize) -> Tensor {
    let c = cols.len();
    Tensor::from_fn(&[rows, c], |k| cols[k % c][k / c])
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Returns `(u columns, s, v columns)` for an `n x m` matrix with `n >= m`.
#[allow(clippy::type_complexity)]
fn svd_tall(mut cols: Vec<Vec<f64>>, n: usize, m: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>)> {
    let q = if n > m {
        let (q, r) = householder_qr(&mut cols, n, m);
        cols = r;
        Some(q)
    } else {
        None
    };
    let len = cols[0].len();

    let mut v: Vec<Vec<f64>> = (0..m)
        .map(|j| {
            let mut e = vec![0.0; m];
            e[j] = 1.0;
            e
        })
        .collect();

    let tol = f64::EPSILON * len.max(1) as f64;
    let mut converged = m < 2;
    let mut worst = 0.0f64;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        worst = 0.0;
        for p in 0..m {
            for q in p + 1..m {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == 0.0 || alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let rel = gamma.abs() / (alpha.sqrt() * beta.sqrt());
                if rel <= tol {
                    continue;
                }
                worst = worst.max(rel);
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta.abs() > 1e150 {
                    0.5 / zeta
                } else {
                    zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical(format!(
            "Jacobi SVD did not converge in {MAX_SWEEPS} sweeps (off-diagonal residual {worst:.3e})"
        )));
    }

    let sigma: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));
    let smax = sigma[order[0]];

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut v_cols = Vec::with_capacity(m);
    let mut s = Vec::with_capacity(m);
    let small = smax * 1e-12;
    for &j in &order {
        let mut col = cols[j].clone();
        let sj = sigma[j];
        if sj > small && sj > 0.0 {
            col.iter_mut().for_each(|x| *x /= sj);
        } else {
            // Direction carries no reliable information; rebuild it
            // orthogonal to the columns accepted so far.
            col = complete_column(&u_cols, &col, len);
        }
        u_cols.push(col);
        v_cols.push(v[j].clone());
        s.push(sj);
    }

    let u_cols = match q {
        Some(q) => u_cols
            .iter()
            .map(|ur| {
                let mut out = vec![0.0; n];
                for (k, &w) in ur.iter().enumerate() {
                    if w != 0.0 {
                        for (o, qk) in out.iter_mut().zip(&q[k]) {
                            *o += w * qk;
                        }
                    }
                }
                out
            })
            .collect(),
        None => u_cols,
    };
    Ok((u_cols, s, v_cols))
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (a, b) in cp.iter_mut().zip(cq.iter_mut()) {
        let (x, y) = (*a, *b);
        *a = c * x - s * y;
        *b = s * x + c * y;
    }
}

/// Unit vector orthogonal to `basis`, seeded from `hint` and then from the
/// canonical basis vectors.
fn complete_column(basis: &[Vec<f64>], hint: &[f64], len: usize) -> Vec<f64> {
    let candidates = std::iter::once(hint.to_vec()).chain((0..len).map(|i| {
        let mut e = vec![0.0; len];
        e[i] = 1.0;
        e
    }));
    for mut c in candidates {
        let start = dot(&c, &c).sqrt();
        if start == 0.0 {
            continue;
        }
        c.iter_mut().for_each(|x| *x /= start);
        for _ in 0..2 {
            for b in basis {
                let proj = dot(&c, b);
                c.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
            }
        }
        let norm = dot(&c, &c).sqrt();
        if norm > 0.5 {
            c.iter_mut().for_each(|x| *x /= norm);
            return c;
        }
    }
    unreachable!("basis of {} vectors cannot span R^{len}", basis.len())
}

/// Householder QR of `n x m` columns; returns thin `Q` and `R` as columns.
#[allow(clippy::type_complexity)]
fn householder_qr(cols: &mut [Vec<f64>], n: usize, m: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut reflectors: Vec<Option<Vec<f64>>> = Vec::with_capacity(m);
    for j in 0..m {
        let x = &cols[j][j..];
        let norm = dot(x, x).sqrt();
        if norm == 0.0 {
            reflectors.push(None);
            continue;
        }
        let alpha = if x[0] > 0.0 { -norm } else { norm };
        let mut vk = x.to_vec();
        vk[0] -= alpha;
        let vnorm2 = dot(&vk, &vk);
        if vnorm2 == 0.0 {
            reflectors.push(None);
            continue;
        }
        for col in cols.iter_mut().skip(j) {
            let tail = &mut col[j..];
            let f = 2.0 * dot(&vk, tail) / vnorm2;
            tail.iter_mut().zip(&vk).for_each(|(t, v)| *t -= f * v);
        }
        cols[j][j] = alpha;
        cols[j][j + 1..].iter_mut().for_each(|t| *t = 0.0);
        reflectors.push(Some(vk));
    }
    let r: Vec<Vec<f64>> = cols.iter().map(|c| c[..m].to_vec()).collect();
    let mut q: Vec<Vec<f64>> = (0..m)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    for (j, refl) in reflectors.iter().enumerate().rev() {
        if let Some(vk) = refl {
            let vnorm2 = dot(vk, vk);
            for col in q.iter_mut() {
                let tail = &mut col[j..];
                let f = 2.0 * dot(vk, tail) / vnorm2;
                tail.iter_mut().zip(vk).for_each(|(t, v)| *t -= f * v);
            }
        }
    }
    (q, r)
}

//! Autonomous single-layer LSTM: every gate is driven only by the previous
//! latent state, so a trajectory is generated from an initial feature vector
//! without touching the full state.
//!
//! States are column batches `[Nh x B]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{sigmoid, tanh};
use crate::numerics::{gemm, Tensor};

/// Cell-state update rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellUpdate {
    /// `c = f * c_prev + i * g`
    #[default]
    Standard,
    /// `c = i * c_prev + i * g`; the forget gate is computed but unused.
    PaperLiteral,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_i: Tensor,
    pub w_f: Tensor,
    pub w_o: Tensor,
    pub w_c: Tensor,
    pub b_i: Tensor,
    pub b_f: Tensor,
    pub b_o: Tensor,
    pub b_c: Tensor,
    pub cell_update: CellUpdate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Tensor,
    pub c: Tensor,
}

impl LstmState {
    /// Starts from a latent vector `[Nh]` or batch `[Nh x B]` with zero cell state.
    pub fn from_latent(h: &Tensor) -> Result<Self> {
        let h = match *h.shape() {
            [n] => h.clone().reshape(&[n, 1])?,
            [_, _] => h.clone(),
            _ => return Err(Error::shape("LstmState::from_latent", format!("{:?}", h.shape()))),
        };
        Ok(Self {
            c: h.zeros_like(),
            h,
        })
    }
}

#[derive(Debug, Clone)]
struct StepCache {
    h_prev: Tensor,
    c_prev: Tensor,
    i: Vec<f64>,
    f: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
    tc: Vec<f64>,
}

/// Forward values of a rollout retained for backpropagation through time.
#[derive(Debug, Clone, Default)]
pub struct RolloutCache {
    steps: Vec<StepCache>,
}

impl RolloutCache {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

impl LstmParams {
    pub fn zeros(nh: usize) -> Self {
        let w = Tensor::zeros(&[nh, nh]);
        let b = Tensor::zeros(&[nh]);
        Self {
            w_i: w.clone(),
            w_f: w.clone(),
            w_o: w.clone(),
            w_c: w,
            b_i: b.clone(),
            b_f: b.clone(),
            b_o: b.clone(),
            b_c: b,
            cell_update: CellUpdate::Standard,
        }
    }

    /// Glorot-uniform weights, zero biases except the forget-gate bias of one.
    pub fn init<R: Rng + ?Sized>(nh: usize, cell_update: CellUpdate, rng: &mut R) -> Self {
        let bound = (6.0 / (2 * nh) as f64).sqrt();
        let mut p = Self::zeros(nh);
        for w in [&mut p.w_i, &mut p.w_f, &mut p.w_o, &mut p.w_c] {
            *w = Tensor::random_uniform(&[nh, nh], -bound, bound, rng);
        }
        p.b_f.fill(1.0);
        p.cell_update = cell_update;
        p
    }

    pub fn latent_dim(&self) -> usize {
        self.w_i.shape()[0]
    }

    pub fn weights(&self) -> [&Tensor; 4] {
        [&self.w_i, &self.w_f, &self.w_o, &self.w_c]
    }

    pub fn biases(&self) -> [&Tensor; 4] {
        [&self.b_i, &self.b_f, &self.b_o, &self.b_c]
    }

    fn check_state(&self, state: &LstmState) -> Result<usize> {
        let nh = self.latent_dim();
        let (rows, batch) = state.h.dims2("lstm_step")?;
        if rows != nh || state.c.shape() != state.h.shape() {
            return Err(Error::shape(
                "lstm_step",
                format!("Nh={nh}, h {:?}, c {:?}", state.h.shape(), state.c.shape()),
            ));
        }
        state.h.ensure_finite("LSTM feature vector")?;
        state.c.ensure_finite("LSTM cell state")?;
        Ok(batch)
    }

    fn gate(&self, w: &Tensor, b: &Tensor, h: &Tensor, batch: usize, act: fn(f64) -> f64) -> Vec<f64> {
        let nh = self.latent_dim();
        let mut z = vec![0.0; nh * batch];
        for (row, &bias) in z.chunks_mut(batch).zip(b.data()) {
            row.fill(bias);
        }
        gemm(nh, nh, batch, 1.0, w.data(), false, h.data(), false, 1.0, &mut z);
        z.iter_mut().for_each(|v| *v = act(*v));
        z
    }

    fn step_inner(&self, state: &LstmState) -> Result<(LstmState, StepCache)> {
        let batch = self.check_state(state)?;
        let h = &state.h;
        let i = self.gate(&self.w_i, &self.b_i, h, batch, sigmoid);
        let f = self.gate(&self.w_f, &self.b_f, h, batch, sigmoid);
        let o = self.gate(&self.w_o, &self.b_o, h, batch, sigmoid);
        let g = self.gate(&self.w_c, &self.b_c, h, batch, tanh);
        let keep = match self.cell_update {
            CellUpdate::Standard => &f,
            CellUpdate::PaperLiteral => &i,
        };
        let c: Vec<f64> = (0..i.len())
            .map(|k| keep[k] * state.c.data()[k] + i[k] * g[k])
            .collect();
        let tc: Vec<f64> = c.iter().map(|&v| tanh(v)).collect();
        let h_new: Vec<f64> = o.iter().zip(&tc).map(|(o, t)| o * t).collect();
        let shape = state.h.shape().to_vec();
        let next = LstmState {
            h: Tensor::new(shape.clone(), h_new)?,
            c: Tensor::new(shape, c)?,
        };
        next.c.ensure_finite("LSTM cell state")?;
        Ok((
            next,
            StepCache {
                h_prev: state.h.clone(),
                c_prev: state.c.clone(),
                i,
                f,
                o,
                g,
                tc,
            },
        ))
    }

    /// One application of the recurrence.
    pub fn step(&self, state: &LstmState) -> Result<LstmState> {
        Ok(self.step_inner(state)?.0)
    }

    /// Iterates the recurrence `steps` times from `state`, returning each new
    /// feature vector and the final state.
    pub fn rollout_from(&self, state: &LstmState, steps: usize) -> Result<(Vec<Tensor>, LstmState)> {
        let mut s = state.clone();
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            s = self.step(&s)?;
            out.push(s.h.clone());
        }
        Ok((out, s))
    }

    /// Rollout of a single latent vector `[Nh]`; returns `[Nh x steps]`.
    pub fn rollout(&self, h0: &Tensor, steps: usize) -> Result<Tensor> {
        if steps == 0 {
            return Err(Error::invalid("rollout needs at least one step"));
        }
        let nh = self.latent_dim();
        if h0.shape() != [nh] {
            return Err(Error::shape("lstm_rollout", format!("h0 {:?}, Nh={nh}", h0.shape())));
        }
        let (hs, _) = self.rollout_from(&LstmState::from_latent(h0)?, steps)?;
        let mut out = Tensor::zeros(&[nh, steps]);
        for (n, h) in hs.iter().enumerate() {
            for k in 0..nh {
                out.data_mut()[k * steps + n] = h.data()[k];
            }
        }
        Ok(out)
    }

    /// Batched rollout from `h0: [Nh x B]` with zero initial cell state,
    /// keeping everything needed by [`LstmParams::backward`].
    pub fn rollout_cached(&self, h0: &Tensor, steps: usize) -> Result<(Vec<Tensor>, RolloutCache)> {
        let mut s = LstmState::from_latent(h0)?;
        let mut out = Vec::with_capacity(steps);
        let mut cache = RolloutCache::default();
        for _ in 0..steps {
            let (next, sc) = self.step_inner(&s)?;
            out.push(next.h.clone());
            cache.steps.push(sc);
            s = next;
        }
        Ok((out, cache))
    }

    /// Backpropagation through time. `grad_outputs[n]` is the loss gradient
    /// with respect to the `n`-th emitted feature vector. Returns parameter
    /// gradients and the gradient with respect to `h0`.
    pub fn backward(&self, cache: &RolloutCache, grad_outputs: &[Tensor]) -> Result<(LstmParams, Tensor)> {
        if grad_outputs.len() > cache.steps.len() {
            return Err(Error::MissingCache("LSTM rollout"));
        }
        let Some(first) = cache.steps.first() else {
            return Err(Error::MissingCache("LSTM rollout"));
        };
        let nh = self.latent_dim();
        let shape = first.h_prev.shape().to_vec();
        let batch = shape[1];
        let len = nh * batch;
        let mut grads = LstmParams::zeros(nh);
        grads.cell_update = self.cell_update;
        let mut dh_rec = vec![0.0; len];
        let mut dc_rec = vec![0.0; len];

        for (n, sc) in cache.steps.iter().enumerate().rev() {
            let mut dh = dh_rec.clone();
            if let Some(g) = grad_outputs.get(n) {
                if g.shape() != shape.as_slice() {
                    return Err(Error::shape("lstm_backward", format!("{:?} vs {shape:?}", g.shape())));
                }
                dh.iter_mut().zip(g.data()).for_each(|(a, b)| *a += b);
            }
            let mut dzi = vec![0.0; len];
            let mut dzf = vec![0.0; len];
            let mut dzo = vec![0.0; len];
            let mut dzg = vec![0.0; len];
            let mut dc_prev = vec![0.0; len];
            for k in 0..len {
                let (i, f, o, g, tc) = (sc.i[k], sc.f[k], sc.o[k], sc.g[k], sc.tc[k]);
                let cp = sc.c_prev.data()[k];
                let d_o = dh[k] * tc;
                let dc = dh[k] * o * (1.0 - tc * tc) + dc_rec[k];
                let (di, df) = match self.cell_update {
                    CellUpdate::Standard => {
                        dc_prev[k] = dc * f;
                        (dc * g, dc * cp)
                    }
                    CellUpdate::PaperLiteral => {
                        dc_prev[k] = dc * i;
                        (dc * (cp + g), 0.0)
                    }
                };
                let dg = dc * i;
                dzi[k] = di * i * (1.0 - i);
                dzf[k] = df * f * (1.0 - f);
                dzo[k] = d_o * o * (1.0 - o);
                dzg[k] = dg * (1.0 - g * g);
            }
            let mut next_dh = vec![0.0; len];
            let hp = sc.h_prev.data();
            for (dz, w, gw, gb) in [
                (&dzi, &self.w_i, &mut grads.w_i, &mut grads.b_i),
                (&dzf, &self.w_f, &mut grads.w_f, &mut grads.b_f),
                (&dzo, &self.w_o, &mut grads.w_o, &mut grads.b_o),
                (&dzg, &self.w_c, &mut grads.w_c, &mut grads.b_c),
            ] {
                gemm(nh, batch, nh, 1.0, dz, false, hp, true, 1.0, gw.data_mut());
                for (acc, row) in gb.data_mut().iter_mut().zip(dz.chunks(batch)) {
                    *acc += row.iter().sum::<f64>();
                }
                gemm(nh, nh, batch, 1.0, w.data(), true, dz, false, 1.0, &mut next_dh);
            }
            dh_rec = next_dh;
            dc_rec = dc_prev;
        }
        Ok((grads, Tensor::new(shape, dh_rec)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_gradient, relative_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// Scalar reference of one step for a single sequence.
    fn scalar_step(p: &LstmParams, h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let nh = h.len();
        let affine = |w: &Tensor, b: &Tensor, r: usize| b.data()[r] + (0..nh).map(|k| w.at(&[r, k]) * h[k]).sum::<f64>();
        let mut hn = vec![0.0; nh];
        let mut cn = vec![0.0; nh];
        for r in 0..nh {
            let i = sig(affine(&p.w_i, &p.b_i, r));
            let f = sig(affine(&p.w_f, &p.b_f, r));
            let o = sig(affine(&p.w_o, &p.b_o, r));
            let g = affine(&p.w_c, &p.b_c, r).tanh();
            cn[r] = match p.cell_update {
                CellUpdate::Standard => f * c[r] + i * g,
                CellUpdate::PaperLiteral => i * c[r] + i * g,
            };
            hn[r] = o * cn[r].tanh();
        }
        (hn, cn)
    }

    fn random_params(nh: usize, seed: u64, mode: CellUpdate) -> LstmParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = LstmParams::init(nh, mode, &mut rng);
        for b in [&mut p.b_i, &mut p.b_f, &mut p.b_o, &mut p.b_c] {
            *b = Tensor::random_uniform(&[nh], -0.5, 0.5, &mut rng);
        }
        p
    }

    #[test]
    fn zero_params_give_zero_state() {
        let p = LstmParams::zeros(3);
        let s = p.step(&LstmState::from_latent(&Tensor::from_vec(vec![0.3, -0.2, 0.9])).unwrap()).unwrap();
        assert!(s.c.max_abs() == 0.0 && s.h.max_abs() == 0.0);
        let traj = p.rollout(&Tensor::from_vec(vec![0.3, -0.2, 0.9]), 5).unwrap();
        assert_eq!(traj.max_abs(), 0.0);
    }

    #[test]
    fn matches_scalar_reference() {
        for mode in [CellUpdate::Standard, CellUpdate::PaperLiteral] {
            let p = random_params(5, 31, mode);
            let mut rng = ChaCha8Rng::seed_from_u64(32);
            let h = Tensor::random_uniform(&[5, 1], -1.0, 1.0, &mut rng);
            let c = Tensor::random_uniform(&[5, 1], -2.0, 2.0, &mut rng);
            let next = p.step(&LstmState { h: h.clone(), c: c.clone() }).unwrap();
            let (hn, cn) = scalar_step(&p, h.data(), c.data());
            for k in 0..5 {
                assert!((next.h.data()[k] - hn[k]).abs() <= 1e-12);
                assert!((next.c.data()[k] - cn[k]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn rollout_composes() {
        let p = random_params(4, 33, CellUpdate::Standard);
        let h0 = Tensor::from_vec(vec![0.1, 0.5, -0.4, 0.8]);
        let s0 = LstmState::from_latent(&h0).unwrap();
        let (all, _) = p.rollout_from(&s0, 9).unwrap();
        let (first, mid) = p.rollout_from(&s0, 4).unwrap();
        let (rest, _) = p.rollout_from(&mid, 5).unwrap();
        let joined: Vec<Tensor> = first.into_iter().chain(rest).collect();
        assert_eq!(all, joined);
    }

    #[test]
    fn nan_state_is_rejected() {
        let p = LstmParams::zeros(2);
        let h = Tensor::from_vec(vec![f64::NAN, 0.0]);
        assert!(matches!(p.step(&LstmState::from_latent(&h).unwrap()), Err(Error::NonFinite(_))));
    }

    #[test]
    fn long_rollout_stays_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let mut p = LstmParams::init(6, CellUpdate::Standard, &mut rng);
        // Large weights push every gate toward saturation.
        for w in [&mut p.w_i, &mut p.w_f, &mut p.w_o, &mut p.w_c] {
            w.scale(25.0);
        }
        let h0 = Tensor::random_uniform(&[6], -1.0, 1.0, &mut rng);
        let mut s = LstmState::from_latent(&h0).unwrap();
        for n in 1..=10_000 {
            s = p.step(&s).unwrap();
            assert!(s.h.data().iter().all(|v| v.abs() < 1.0));
            assert!(s.c.max_abs() <= n as f64);
        }
    }

    #[test]
    fn bptt_matches_finite_differences() {
        for mode in [CellUpdate::Standard, CellUpdate::PaperLiteral] {
            let p = random_params(4, 35, mode);
            let mut rng = ChaCha8Rng::seed_from_u64(36);
            let h0 = Tensor::random_uniform(&[4, 2], -1.0, 1.0, &mut rng);
            let probes: Vec<Tensor> = (0..6).map(|_| Tensor::random_uniform(&[4, 2], -1.0, 1.0, &mut rng)).collect();
            let loss = |p: &LstmParams, h0: &Tensor| {
                let (hs, _) = p.rollout_cached(h0, 6).unwrap();
                hs.iter().zip(&probes).map(|(h, q)| h.dot(q).unwrap()).sum::<f64>()
            };
            let (_, cache) = p.rollout_cached(&h0, 6).unwrap();
            let (g, dh0) = p.backward(&cache, &probes).unwrap();
            let fd_h0 = central_gradient(h0.data(), 1e-6, |v| loss(&p, &Tensor::new(vec![4, 2], v.to_vec()).unwrap()));
            assert!(relative_error(dh0.data(), &fd_h0) <= 1e-5);
            let names = ["w_i", "w_f", "w_o", "w_c", "b_i", "b_f", "b_o", "b_c"];
            for (k, name) in names.iter().enumerate() {
                let get = |p: &LstmParams| -> Tensor {
                    if k < 4 { p.weights()[k].clone() } else { p.biases()[k - 4].clone() }
                };
                let fd = central_gradient(get(&p).data(), 1e-6, |v| {
                    let mut q = p.clone();
                    let t = match k {
                        0 => &mut q.w_i, 1 => &mut q.w_f, 2 => &mut q.w_o, 3 => &mut q.w_c,
                        4 => &mut q.b_i, 5 => &mut q.b_f, 6 => &mut q.b_o, _ => &mut q.b_c,
                    };
                    t.data_mut().copy_from_slice(v);
                    loss(&q, &h0)
                });
                let err = relative_error(get(&g).data(), &fd);
                if mode == CellUpdate::PaperLiteral && (k == 1 || k == 5) {
                    // Forget gate is inert in the literal update.
                    assert!(get(&g).max_abs() == 0.0 && fd.iter().all(|v| v.abs() < 1e-9));
                } else {
                    assert!(err <= 1e-5, "{mode:?} {name}: {err}");
                }
            }
        }
    }

    #[test]
    fn loss_on_first_output_ignores_later_steps() {
        let p = random_params(3, 37, CellUpdate::Standard);
        let h0 = Tensor::from_vec(vec![0.2, -0.1, 0.4]).reshape(&[3, 1]).unwrap();
        let probe = Tensor::from_vec(vec![1.0, -2.0, 0.5]).reshape(&[3, 1]).unwrap();
        let (_, short) = p.rollout_cached(&h0, 1).unwrap();
        let (_, long) = p.rollout_cached(&h0, 7).unwrap();
        let (g1, d1) = p.backward(&short, std::slice::from_ref(&probe)).unwrap();
        let (g7, d7) = p.backward(&long, std::slice::from_ref(&probe)).unwrap();
        assert_eq!(g1, g7);
        assert_eq!(d1, d7);
    }

    #[test]
    fn backward_without_enough_cache() {
        let p = LstmParams::zeros(2);
        let (_, cache) = p.rollout_cached(&Tensor::zeros(&[2, 1]), 2).unwrap();
        let g = vec![Tensor::zeros(&[2, 1]); 3];
        assert!(matches!(p.backward(&cache, &g), Err(Error::MissingCache(_))));
        assert!(matches!(p.backward(&RolloutCache::default(), &[]), Err(Error::MissingCache(_))));
    }

    #[test]
    fn init_is_deterministic_with_forget_bias() {
        let a = LstmParams::init(8, CellUpdate::Standard, &mut ChaCha8Rng::seed_from_u64(1));
        let b = LstmParams::init(8, CellUpdate::Standard, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
        assert!(a.b_f.data().iter().all(|&v| v == 1.0));
        assert!(a.b_i.max_abs() == 0.0);
        let bound = (6.0f64 / 16.0).sqrt();
        assert!(a.weights().iter().all(|w| w.max_abs() <= bound));
    }
}

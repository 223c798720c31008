//! Joint reconstruction/latent-dynamics loss, Adam, the offline training loop
//! and online prediction.
//!
//! Batches are `[B, Nt, spatial...]`. Latent trajectories are `[B, Nt, Nh]`
//! for the encoder output and `[B, Nt - 1, Nh]` for the LSTM rollout, which
//! starts from the first encoded snapshot of each sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data::{gather, sample_indices, Container, Dtype};
use crate::error::{Error, Result};
use crate::lstm::{CellUpdate, LstmParams, LstmState};
use crate::model::{Architecture, Model, ParamTree, RecurrentAutoencoder};
use crate::numerics::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Latent size.
    pub nh: usize,
    /// Sequence length; `None` uses the dataset's.
    pub nt: Option<usize>,
    /// Batch size.
    pub nb: usize,
    /// Number of optimizer steps.
    pub ntrain: usize,
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub paper_literal_cell: bool,
    pub detach_latent_targets: bool,
    /// Checkpoint period in steps; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    /// Overrides the architecture derived from the snapshot shape.
    pub architecture: Option<Architecture>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            nh: 8,
            nt: None,
            nb: 8,
            ntrain: 1000,
            alpha: 0.5,
            beta: 0.5,
            epsilon: 1e-8,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            paper_literal_cell: false,
            detach_latent_targets: false,
            checkpoint_every: 0,
            architecture: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::invalid(m));
        if self.nh == 0 {
            return fail("nh must be at least 1".into());
        }
        if self.nb == 0 {
            return fail("nb must be at least 1".into());
        }
        if matches!(self.nt, Some(nt) if nt < 2) {
            return fail("nt must be at least 2".into());
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && (self.alpha + self.beta - 1.0).abs() <= 1e-12) {
            return fail(format!("alpha + beta must be 1, got {} + {}", self.alpha, self.beta));
        }
        if !(self.epsilon > 0.0) {
            return fail("epsilon must be positive".into());
        }
        if !(self.lr > 0.0 && self.adam_eps > 0.0) {
            return fail("lr and adam_eps must be positive".into());
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return fail("beta1 and beta2 must lie in [0, 1)".into());
        }
        if let Some(a) = &self.architecture {
            a.validate()?;
            if a.latent() != self.nh {
                return fail(format!("architecture latent {} differs from nh {}", a.latent(), self.nh));
            }
        }
        Ok(())
    }

    pub fn cell_update(&self) -> CellUpdate {
        if self.paper_literal_cell {
            CellUpdate::PaperLiteral
        } else {
            CellUpdate::Standard
        }
    }

    /// Explicit architecture, or the default for `spatial`.
    pub fn architecture_for(&self, spatial: &[usize]) -> Result<Architecture> {
        match &self.architecture {
            Some(a) if a.snapshot_shape() == spatial => Ok(a.clone()),
            Some(a) => Err(Error::invalid(format!(
                "architecture expects snapshots {:?}, data has {spatial:?}",
                a.snapshot_shape()
            ))),
            None => Architecture::for_snapshot(spatial, self.nh),
        }
    }

    /// Deterministic initialization for snapshots of shape `spatial`.
    pub fn init_model(&self, spatial: &[usize]) -> Result<Model> {
        self.validate()?;
        Model::init(&self.architecture_for(spatial)?, self.cell_update(), self.seed)
    }
}

/// Batch-averaged loss and its two weighted contributions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub joint: f64,
    pub recon: f64,
    pub latent: f64,
}

/// One row of the loss history; `step` counts from 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub joint_loss: f64,
    pub recon_term: f64,
    pub latent_term: f64,
}

/// Gradients of [`joint_loss`] with respect to its predicted arguments and
/// the encoder latents.
#[derive(Debug, Clone)]
pub struct LossGrads {
    pub x_hat: Tensor,
    pub h: Tensor,
    pub h_hat: Tensor,
}

fn check_loss_shapes(x: &Tensor, x_hat: &Tensor, h: &Tensor, h_hat: &Tensor) -> Result<(usize, usize, usize)> {
    if x.ndim() < 3 || x.shape() != x_hat.shape() {
        return Err(Error::shape(
            "joint_loss",
            format!("snapshots {:?} vs reconstructions {:?}", x.shape(), x_hat.shape()),
        ));
    }
    let (b, nt) = (x.shape()[0], x.shape()[1]);
    if nt < 2 {
        return Err(Error::invalid("joint_loss needs Nt >= 2"));
    }
    let nh = h.shape().last().copied().unwrap_or(0);
    if h.shape() != [b, nt, nh] || h_hat.shape() != [b, nt - 1, nh] {
        return Err(Error::shape(
            "joint_loss",
            format!("latents {:?} / {:?} for batch {b} x {nt}", h.shape(), h_hat.shape()),
        ));
    }
    Ok((b, nt, nh))
}

fn rel_sq(target: &[f64], pred: &[f64], eps: f64) -> (f64, f64, f64) {
    let num: f64 = target.iter().zip(pred).map(|(a, p)| (a - p) * (a - p)).sum();
    let den = target.iter().map(|a| a * a).sum::<f64>() + eps;
    (num / den, num, den)
}

/// Relative reconstruction error of every snapshot plus relative error of
/// the rolled-out latents against the encoded ones, averaged over the batch.
pub fn joint_loss(x: &Tensor, x_hat: &Tensor, h: &Tensor, h_hat: &Tensor, cfg: &RunConfig) -> Result<LossTerms> {
    Ok(joint_loss_with_grad(x, x_hat, h, h_hat, cfg)?.0)
}

pub fn joint_loss_with_grad(
    x: &Tensor,
    x_hat: &Tensor,
    h: &Tensor,
    h_hat: &Tensor,
    cfg: &RunConfig,
) -> Result<(LossTerms, LossGrads)> {
    let (b, nt, nh) = check_loss_shapes(x, x_hat, h, h_hat)?;
    let s = x.len() / (b * nt);
    let eps = cfg.epsilon;
    let cx = cfg.alpha / (nt * b) as f64;
    let ch = cfg.beta / ((nt - 1) * b) as f64;

    let mut recon = 0.0;
    let mut g_xhat = vec![0.0; x.len()];
    for ((xs, ps), gs) in x.data().chunks(s).zip(x_hat.data().chunks(s)).zip(g_xhat.chunks_mut(s)) {
        let (r, _, den) = rel_sq(xs, ps, eps);
        recon += cx * r;
        for ((g, a), p) in gs.iter_mut().zip(xs).zip(ps) {
            *g = -2.0 * cx * (a - p) / den;
        }
    }

    let mut latent = 0.0;
    let mut g_h = vec![0.0; h.len()];
    let mut g_hhat = vec![0.0; h_hat.len()];
    for bi in 0..b {
        for n in 1..nt {
            let ho = (bi * nt + n) * nh;
            let po = (bi * (nt - 1) + n - 1) * nh;
            let target = &h.data()[ho..ho + nh];
            let pred = &h_hat.data()[po..po + nh];
            let (r, num, den) = rel_sq(target, pred, eps);
            latent += ch * r;
            for k in 0..nh {
                let d = target[k] - pred[k];
                g_hhat[po + k] = -2.0 * ch * d / den;
                g_h[ho + k] = ch * (2.0 * d / den - 2.0 * num * target[k] / (den * den));
            }
        }
    }
    let terms = LossTerms {
        joint: recon + latent,
        recon,
        latent,
    };
    if !terms.joint.is_finite() {
        return Err(Error::NonFinite("joint loss".into()));
    }
    Ok((
        terms,
        LossGrads {
            x_hat: Tensor::new(x.shape().to_vec(), g_xhat)?,
            h: Tensor::new(h.shape().to_vec(), g_h)?,
            h_hat: Tensor::new(h_hat.shape().to_vec(), g_hhat)?,
        },
    ))
}

/// Loss of one batch `[B, Nt, spatial...]` and the gradient with respect to
/// every parameter.
pub fn loss_and_grad<M: RecurrentAutoencoder>(params: &M, batch: &Tensor, cfg: &RunConfig) -> Result<(LossTerms, M)> {
    if batch.ndim() < 3 {
        return Err(Error::shape("loss_and_grad", format!("batch {:?}", batch.shape())));
    }
    let (b, nt) = (batch.shape()[0], batch.shape()[1]);
    if nt < 2 {
        return Err(Error::invalid("sequences need at least two snapshots"));
    }
    let nh = params.latent_dim();
    let mut flat_shape = vec![b * nt];
    flat_shape.extend_from_slice(&batch.shape()[2..]);
    let flat = batch.clone().reshape(&flat_shape)?;

    let (hcols, enc_cache) = params.encode_cached(&flat)?;
    let (x_hat, dec_cache) = params.decode_cached(&hcols)?;
    let h = hcols.transpose()?.reshape(&[b, nt, nh])?;
    let h1 = Tensor::from_fn(&[nh, b], |k| h.at(&[k % b, 0, k / b]));
    let (outs, lstm_cache) = params.lstm().rollout_cached(&h1, nt - 1)?;
    let h_hat = Tensor::from_fn(&[b, nt - 1, nh], |k| {
        let (bi, n, j) = (k / ((nt - 1) * nh), (k / nh) % (nt - 1), k % nh);
        outs[n].at(&[j, bi])
    });

    let x_hat = x_hat.reshape(batch.shape())?;
    let (terms, g) = joint_loss_with_grad(batch, &x_hat, &h, &h_hat, cfg)?;

    let mut grads = params.zeros_like();
    let mut dh = params.decode_backward(&dec_cache, &g.x_hat.reshape(&flat_shape)?, &mut grads)?;
    let g_out: Vec<Tensor> = (0..nt - 1)
        .map(|n| Tensor::from_fn(&[nh, b], |k| g.h_hat.at(&[k % b, n, k / b])))
        .collect();
    let (g_lstm, g_h1) = params.lstm().backward(&lstm_cache, &g_out)?;
    grads.lstm_mut().accumulate(&g_lstm)?;

    let cols = b * nt;
    let data = dh.data_mut();
    for j in 0..nh {
        for bi in 0..b {
            let col = bi * nt;
            data[j * cols + col] += g_h1.at(&[j, bi]);
            if !cfg.detach_latent_targets {
                for n in 1..nt {
                    data[j * cols + col + n] += g.h.at(&[bi, n, j]);
                }
            }
        }
    }
    params.encode_backward(&enc_cache, &dh, &mut grads)?;
    Ok((terms, grads))
}

/// First and second moment estimates for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<P> {
    pub m: P,
    pub v: P,
    pub step: usize,
}

impl<P: ParamTree> AdamState<P> {
    pub fn new(params: &P) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// Bias-corrected Adam update in place.
pub fn adam_step<P: ParamTree>(params: &mut P, grads: &P, state: &mut AdamState<P>, cfg: &RunConfig) -> Result<()> {
    let g: Vec<(String, &Tensor)> = grads.tensors();
    if let Some((name, _)) = g.iter().find(|(_, t)| !t.all_finite()) {
        return Err(Error::NonFinite(format!("gradient of {name}")));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let ps = params.tensors_mut();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    if ps.len() != g.len() || ms.len() != g.len() {
        return Err(Error::invalid("gradient tree does not match the parameters"));
    }
    for (((p, m), v), (name, gt)) in ps.into_iter().zip(ms).zip(vs).zip(&g) {
        if p.shape() != gt.shape() {
            return Err(Error::shape("adam_step", format!("{name}: {:?} vs {:?}", p.shape(), gt.shape())));
        }
        for (((pi, mi), vi), gi) in p
            .data_mut()
            .iter_mut()
            .zip(m.data_mut())
            .zip(v.data_mut())
            .zip(gt.data())
        {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            *pi -= cfg.lr * (*mi / c1) / ((*vi / c2).sqrt() + cfg.adam_eps);
        }
    }
    Ok(())
}

/// Parameters, optimizer moments and loss history of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<M> {
    pub params: M,
    pub adam: AdamState<M>,
    pub history: Vec<LossRecord>,
}

impl<M: ParamTree> TrainState<M> {
    pub fn new(params: M) -> Self {
        Self {
            adam: AdamState::new(&params),
            params,
            history: Vec::new(),
        }
    }

    pub fn step(&self) -> usize {
        self.adam.step
    }
}

/// Generator for optimizer step `step`, independent of every other step so
/// that a resumed run draws the same batches.
pub fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step as u64);
    rng
}

fn check_samples(samples: &Tensor, cfg: &RunConfig) -> Result<()> {
    if samples.ndim() < 3 {
        return Err(Error::shape("train", format!("samples {:?}", samples.shape())));
    }
    let nt = samples.shape()[1];
    if let Some(want) = cfg.nt {
        if want != nt {
            return Err(Error::invalid(format!("config nt = {want}, dataset has {nt}")));
        }
    }
    if nt < 2 {
        return Err(Error::invalid("dataset sequences need at least two snapshots"));
    }
    samples.ensure_finite("training samples")
}

/// Runs optimizer steps until `state` has taken `cfg.ntrain` of them.
///
/// `samples` is `[Ns, Nt, spatial...]` in `[0, 1]`. `after_step` sees the
/// state after every step (checkpointing, progress).
pub fn train<M, F>(state: &mut TrainState<M>, samples: &Tensor, cfg: &RunConfig, mut after_step: F) -> Result<()>
where
    M: RecurrentAutoencoder,
    F: FnMut(&TrainState<M>) -> Result<()>,
{
    cfg.validate()?;
    check_samples(samples, cfg)?;
    while state.step() < cfg.ntrain {
        let step = state.step() + 1;
        let idx = sample_indices(samples.shape()[0], cfg.nb, &mut step_rng(cfg.seed, step))?;
        let batch = gather(samples, &idx)?;
        let (terms, grads) = loss_and_grad(&state.params, &batch, cfg)
            .map_err(|e| Error::Numerical(format!("step {step}: {e}")))?;
        adam_step(&mut state.params, &grads, &mut state.adam, cfg)
            .map_err(|e| Error::Numerical(format!("step {step}: {e}")))?;
        state.history.push(LossRecord {
            step,
            joint_loss: terms.joint,
            recon_term: terms.recon,
            latent_term: terms.latent,
        });
        after_step(state)?;
    }
    Ok(())
}

/// Latent trajectory `[steps, Nh]` starting from `encode(x0)`.
pub fn predict_latents<M: RecurrentAutoencoder>(params: &M, x0: &Tensor, steps: usize) -> Result<Tensor> {
    if steps == 0 {
        return Err(Error::invalid("prediction needs at least one step"));
    }
    let spatial = params.snapshot_shape();
    if x0.shape() != spatial.as_slice() {
        return Err(Error::shape(
            "predict",
            format!("initial condition {:?}, model expects {spatial:?}", x0.shape()),
        ));
    }
    let mut shape = vec![1];
    shape.extend_from_slice(&spatial);
    let h0 = params.encode(&x0.clone().reshape(&shape)?)?;
    let nh = params.latent_dim();
    let mut state = LstmState::from_latent(&h0)?;
    let mut out = Vec::with_capacity(steps * nh);
    for n in 0..steps {
        state = params.lstm().step(&state)?;
        if !state.h.all_finite() {
            return Err(Error::Numerical(format!("latent state became non-finite at step {}", n + 1)));
        }
        out.extend_from_slice(state.h.data());
    }
    Tensor::new(vec![steps, nh], out)
}

/// Encodes `x0`, rolls the latent dynamics forward `steps` times and decodes
/// every predicted state (or only the last with `final_only`).
///
/// Returns `[steps, spatial...]`, or `[1, spatial...]` with `final_only`.
pub fn predict<M: RecurrentAutoencoder>(params: &M, x0: &Tensor, steps: usize, final_only: bool) -> Result<Tensor> {
    const CHUNK: usize = 128;
    let latents = predict_latents(params, x0, steps)?;
    let nh = params.latent_dim();
    let rows: Vec<usize> = if final_only { vec![steps - 1] } else { (0..steps).collect() };
    let mut data = Vec::new();
    for chunk in rows.chunks(CHUNK) {
        let h = Tensor::from_fn(&[nh, chunk.len()], |k| latents.at(&[chunk[k % chunk.len()], k / chunk.len()]));
        data.extend_from_slice(params.decode(&h)?.data());
    }
    let mut shape = vec![rows.len()];
    shape.extend(params.snapshot_shape());
    Tensor::new(shape, data)
}

/// Fits the latent dynamics alone to fixed latent trajectories
/// `[Ns, Nt, Nh]`: only the rollout term of the joint loss is minimized.
///
/// LSTM outputs lie in `(-1, 1)`, so the trajectories must too (see
/// [`latent_scale`]).
pub fn pod_lstm_train(latents: &Tensor, cfg: &RunConfig) -> Result<(LstmParams, Vec<LossRecord>)> {
    cfg.validate()?;
    let &[ns, nt, nh] = latents.shape() else {
        return Err(Error::shape("pod_lstm_train", format!("latents {:?}", latents.shape())));
    };
    if ns == 0 || nt < 2 {
        return Err(Error::invalid("pod_lstm_train needs sequences of at least two states"));
    }
    latents.ensure_finite("latent trajectories")?;
    let mut lstm = LstmParams::init(nh, cfg.cell_update(), &mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let mut adam = AdamState::new(&lstm);
    let mut history = Vec::with_capacity(cfg.ntrain);
    let beta = cfg.beta;
    for step in 1..=cfg.ntrain {
        let idx = sample_indices(ns, cfg.nb, &mut step_rng(cfg.seed, step))?;
        let h = gather(latents, &idx)?;
        let b = idx.len();
        let h1 = Tensor::from_fn(&[nh, b], |k| h.at(&[k % b, 0, k / b]));
        let (outs, cache) = lstm.rollout_cached(&h1, nt - 1)?;
        let h_hat = Tensor::from_fn(&[b, nt - 1, nh], |k| {
            let (bi, n, j) = (k / ((nt - 1) * nh), (k / nh) % (nt - 1), k % nh);
            outs[n].at(&[j, bi])
        });
        let x = Tensor::zeros(&[b, nt, 1]);
        let (terms, g) = joint_loss_with_grad(&x, &x, &h, &h_hat, cfg)
            .map_err(|e| Error::Numerical(format!("step {step}: {e}")))?;
        let g_out: Vec<Tensor> = (0..nt - 1)
            .map(|n| Tensor::from_fn(&[nh, b], |k| g.h_hat.at(&[k % b, n, k / b])))
            .collect();
        let (grads, _) = lstm.backward(&cache, &g_out)?;
        adam_step(&mut lstm, &grads, &mut adam, cfg).map_err(|e| Error::Numerical(format!("step {step}: {e}")))?;
        history.push(LossRecord {
            step,
            joint_loss: terms.latent / beta.max(f64::MIN_POSITIVE),
            recon_term: 0.0,
            latent_term: terms.latent,
        });
    }
    Ok((lstm, history))
}

/// Factor mapping latent coordinates into `(-0.8, 0.8)`, inside the range
/// an LSTM can emit.
pub fn latent_scale(latents: &Tensor) -> f64 {
    let m = latents.max_abs();
    if m > 0.0 {
        0.8 / m
    } else {
        1.0
    }
}

const PARAM: &str = "param.";
const ADAM_M: &str = "adam_m.";
const ADAM_V: &str = "adam_v.";

fn push_tree<P: ParamTree>(c: &mut Container, prefix: &str, p: &P) {
    for (name, t) in p.tensors() {
        c.push(format!("{prefix}{name}"), Dtype::F64, t.clone());
    }
}

fn fill_tree<P: ParamTree>(c: &Container, prefix: &str, p: &mut P) -> Result<()> {
    let names: Vec<String> = p.tensors().into_iter().map(|(n, _)| n).collect();
    for (name, dst) in names.iter().zip(p.tensors_mut()) {
        let src = c.require(&format!("{prefix}{name}"))?;
        if src.shape() != dst.shape() {
            return Err(Error::Format(format!(
                "{prefix}{name}: stored {:?}, architecture needs {:?}",
                src.shape(),
                dst.shape()
            )));
        }
        dst.data_mut().copy_from_slice(src.data());
    }
    Ok(())
}

/// Serializes a training state: parameters, Adam moments and loss history
/// as records, architecture and config in the metadata.
pub fn checkpoint_container(state: &TrainState<Model>, cfg: &RunConfig) -> Result<Container> {
    let mut c = Container::new(json!({
        "kind": "checkpoint",
        "architecture": state.params.arch(),
        "cell_update": state.params.lstm().cell_update,
        "adam_step": state.adam.step,
        "config": cfg,
    }));
    push_tree(&mut c, PARAM, &state.params);
    push_tree(&mut c, ADAM_M, &state.adam.m);
    push_tree(&mut c, ADAM_V, &state.adam.v);
    if !state.history.is_empty() {
        let rows: Vec<f64> = state
            .history
            .iter()
            .flat_map(|r| [r.step as f64, r.joint_loss, r.recon_term, r.latent_term])
            .collect();
        c.push("loss_history", Dtype::F64, Tensor::new(vec![state.history.len(), 4], rows)?);
    }
    Ok(c)
}

/// Inverse of [`checkpoint_container`].
pub fn load_checkpoint(c: &Container) -> Result<(TrainState<Model>, RunConfig)> {
    let meta = &c.metadata;
    if meta["kind"] != "checkpoint" {
        return Err(Error::Format("container is not a checkpoint".into()));
    }
    let parse = |key: &str| meta[key].clone();
    let arch: Architecture =
        serde_json::from_value(parse("architecture")).map_err(|e| Error::Format(format!("architecture: {e}")))?;
    let cell: CellUpdate =
        serde_json::from_value(parse("cell_update")).map_err(|e| Error::Format(format!("cell_update: {e}")))?;
    let cfg: RunConfig = serde_json::from_value(parse("config")).map_err(|e| Error::Format(format!("config: {e}")))?;
    let step = meta["adam_step"]
        .as_u64()
        .ok_or_else(|| Error::Format("adam_step missing".into()))? as usize;

    let mut state = TrainState::new(Model::init(&arch, cell, 0)?);
    fill_tree(c, PARAM, &mut state.params)?;
    fill_tree(c, ADAM_M, &mut state.adam.m)?;
    fill_tree(c, ADAM_V, &mut state.adam.v)?;
    state.adam.step = step;
    if let Some(h) = c.get("loss_history") {
        state.history = h
            .data()
            .chunks(4)
            .map(|r| LossRecord {
                step: r[0] as usize,
                joint_loss: r[1],
                recon_term: r[2],
                latent_term: r[3],
            })
            .collect();
    }
    Ok((state, cfg))
}

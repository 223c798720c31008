//! Finite-difference verification of the hand-written backward passes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::layers::{Activation, Conv2dLayer, ConvTranspose2dLayer, DenseLayer};
use crate::lstm::{CellUpdate, LstmParams};
use crate::model::{Architecture, ParamTree};
use crate::numerics::Tensor;
use crate::training::{loss_and_grad, RunConfig};

/// Central-difference gradient of `f` at `x` with step `h`.
pub fn central_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm; zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Step used by the suite for central differences.
pub const FD_STEP: f64 = 1e-6;
/// Suite failure threshold on the relative error.
pub const GRADCHECK_THRESHOLD: f64 = 1e-4;

/// One verified component.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckRow {
    pub name: String,
    pub params: usize,
    pub param_error: f64,
    /// `None` when the component has no differentiable input.
    pub input_error: Option<f64>,
}

impl GradCheckRow {
    /// Largest error; NaN if either error is NaN.
    pub fn worst(&self) -> f64 {
        let input = self.input_error.unwrap_or(0.0);
        if self.param_error.is_nan() || input.is_nan() {
            return f64::NAN;
        }
        self.param_error.max(input)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub rows: Vec<GradCheckRow>,
    pub threshold: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.rows
            .iter()
            .map(GradCheckRow::worst)
            .fold(0.0, |a, e| if a.is_nan() || e.is_nan() { f64::NAN } else { a.max(e) })
    }

    /// Fails on any error above the threshold, including NaN.
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.worst() <= self.threshold)
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:<28} {:>8} {:>12} {:>12}  status\n", "component", "params", "param_err", "input_err");
        for r in &self.rows {
            let input = r.input_error.map_or("-".to_string(), |e| format!("{e:.3e}"));
            let status = if r.worst() <= self.threshold { "ok" } else { "FAIL" };
            s += &format!("{:<28} {:>8} {:>12.3e} {:>12}  {status}\n", r.name, r.params, r.param_error, input);
        }
        s += &format!("worst relative error {:.3e} (threshold {:.0e})\n", self.worst(), self.threshold);
        s
    }
}

fn flatten<P: ParamTree>(p: &P) -> Vec<f64> {
    p.tensors().iter().flat_map(|(_, t)| t.data().to_vec()).collect()
}

fn with_values<P: ParamTree>(p: &P, v: &[f64]) -> P {
    let mut out = p.clone();
    let mut off = 0;
    for t in out.tensors_mut() {
        let n = t.len();
        t.data_mut().copy_from_slice(&v[off..off + n]);
        off += n;
    }
    out
}

fn projection(y: &Tensor, r: &Tensor) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Checks `backward` against central differences of the scalar `sum(r * forward(p, x))`
/// for a random projection `r`. `backward(p, x, grad_out)` returns the input
/// and parameter gradients.
pub fn check_layer<P, F, B, R>(name: &str, p: &P, x: &Tensor, forward: F, backward: B, rng: &mut R) -> Result<GradCheckRow>
where
    P: ParamTree,
    F: Fn(&P, &Tensor) -> Result<Tensor>,
    B: Fn(&P, &Tensor, &Tensor) -> Result<(Tensor, P)>,
    R: Rng + ?Sized,
{
    let y = forward(p, x)?;
    let r = Tensor::random_uniform(y.shape(), -1.0, 1.0, rng);
    let (gx, gp) = backward(p, x, &r)?;
    let eval = |p: &P, x: &Tensor| forward(p, x).map(|y| projection(&y, &r)).unwrap_or(f64::NAN);
    let fd_x = central_gradient(x.data(), FD_STEP, |v| eval(p, &Tensor::new(x.shape().to_vec(), v.to_vec()).unwrap()));
    let fd_p = central_gradient(&flatten(p), FD_STEP, |v| eval(&with_values(p, v), x));
    Ok(GradCheckRow {
        name: name.to_string(),
        params: p.param_count(),
        param_error: relative_error(&flatten(&gp), &fd_p),
        input_error: Some(relative_error(gx.data(), &fd_x)),
    })
}

fn lstm_row<R: Rng + ?Sized>(name: &str, steps: usize, rng: &mut R) -> Result<GradCheckRow> {
    let (nh, b) = (4, 2);
    let p = LstmParams::init(nh, CellUpdate::Standard, rng);
    let h0 = Tensor::random_uniform(&[nh, b], -0.9, 0.9, rng);
    let stack = |outs: Vec<Tensor>| {
        let data: Vec<f64> = outs.into_iter().flat_map(Tensor::into_data).collect();
        Tensor::new(vec![steps, nh, b], data)
    };
    check_layer(
        name,
        &p,
        &h0,
        |p, h0| stack(p.rollout_cached(h0, steps)?.0),
        |p, h0, g| {
            let (_, cache) = p.rollout_cached(h0, steps)?;
            let grads: Vec<Tensor> = (0..steps)
                .map(|k| Tensor::new(vec![nh, b], g.slab(k).to_vec()))
                .collect::<Result<_>>()?;
            let (gp, gh) = p.backward(&cache, &grads)?;
            Ok((gh, gp))
        },
        rng,
    )
}

/// Small convolutional model used for the end-to-end loss check.
pub fn reduced_config() -> RunConfig {
    RunConfig {
        nh: 3,
        architecture: Some(Architecture::Conv {
            input: 16,
            conv_filters: vec![2, 3],
            kernel: 5,
            first_dilation: 2,
            fc_hidden: 6,
            latent: 3,
        }),
        ..RunConfig::default()
    }
}

fn joint_loss_row<R: Rng + ?Sized>(rng: &mut R) -> Result<GradCheckRow> {
    let cfg = reduced_config();
    let model = cfg.init_model(&[16, 16])?;
    let batch = Tensor::random_uniform(&[2, 3, 16, 16], 0.0, 1.0, rng);
    let (_, grads) = loss_and_grad(&model, &batch, &cfg)?;
    let fd = central_gradient(&flatten(&model), FD_STEP, |v| {
        loss_and_grad(&with_values(&model, v), &batch, &cfg).map_or(f64::NAN, |(l, _)| l.joint)
    });
    Ok(GradCheckRow {
        name: "joint loss (reduced model)".into(),
        params: model.param_count(),
        param_error: relative_error(&flatten(&grads), &fd),
        input_error: None,
    })
}

/// Every layer type, the LSTM step, six-step BPTT and the full joint loss.
pub fn run_suite(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let mut rows = Vec::new();

    let dense = DenseLayer::new(
        Tensor::random_uniform(&[4, 5], -0.8, 0.8, rng),
        Tensor::random_uniform(&[4], -0.5, 0.5, rng),
        Activation::Sigmoid,
    )?;
    let x = Tensor::random_uniform(&[5, 3], -1.0, 1.0, rng);
    rows.push(check_layer(
        "dense",
        &dense,
        &x,
        |l, x| l.forward(x),
        |l, x, g| l.backward(&l.forward_cached(x)?.1, g),
        rng,
    )?);

    for (s, d) in [(1, 1), (1, 2), (2, 1), (2, 2)] {
        let conv = Conv2dLayer::new(
            Tensor::random_uniform(&[3, 2, 3, 3], -0.5, 0.5, rng),
            Tensor::random_uniform(&[3], -0.3, 0.3, rng),
            s,
            d,
            Activation::Sigmoid,
        )?;
        let x = Tensor::random_uniform(&[2, 2, 7, 7], 0.0, 1.0, rng);
        rows.push(check_layer(
            &format!("conv2d s={s} d={d}"),
            &conv,
            &x,
            |l, x| l.forward(x),
            |l, x, g| l.backward(&l.forward_cached(x)?.1, g),
            rng,
        )?);
    }

    for s in [1, 2] {
        let tconv = ConvTranspose2dLayer::new(
            Tensor::random_uniform(&[3, 2, 3, 3], -0.5, 0.5, rng),
            Tensor::random_uniform(&[2], -0.3, 0.3, rng),
            s,
            1,
            Activation::Sigmoid,
        )?;
        let x = Tensor::random_uniform(&[2, 3, 4, 4], 0.0, 1.0, rng);
        rows.push(check_layer(
            &format!("conv2d_transpose s={s}"),
            &tconv,
            &x,
            |l, x| l.forward(x),
            |l, x, g| l.backward(&l.forward_cached(x)?.1, g),
            rng,
        )?);
    }

    rows.push(lstm_row("lstm step", 1, rng)?);
    rows.push(lstm_row("lstm bptt 6 steps", 6, rng)?);
    rows.push(joint_loss_row(rng)?);
    Ok(GradCheckReport { rows, threshold: GRADCHECK_THRESHOLD })
}

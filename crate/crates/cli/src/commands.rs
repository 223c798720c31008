use std::path::Path;

use anyhow::{Context, Result};
use nmor::data::{center_and_scale, Container, Dtype, Scaling, SnapshotDataset};
use nmor::gradcheck::run_suite;
use nmor::lstm::CellUpdate;
use nmor::metrics::{error_series, psd, tke, trapezoid_weights, vortex_centers};
use nmor::model::{ParamTree, RecurrentAutoencoder};
use nmor::pod::{compute_pod, select_rank, snapshot_matrix};
use nmor::solvers::{generate_dataset, velocity_from_vorticity, BurgersConfig, SolverConfig, VortexFlowConfig};
use nmor::training::{
    checkpoint_container, latent_scale, load_checkpoint, pod_lstm_train, predict_latents, LossRecord, RunConfig,
    TrainState,
};
use nmor::Tensor;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{resolve, Overrides};
use crate::exit::Failure;
use crate::io::{load, save, trajectory, write_csv};
use crate::manifest::RunDir;
use crate::{EvalArgs, GenerateArgs, GradcheckArgs, Metric, PodArgs, PredictArgs, SolverKind, TrainArgs};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerateConfig {
    ns: usize,
    seed: u64,
    scaling: Scaling,
    /// Fields of the chosen solver's configuration.
    solver: Value,
}

pub fn generate(a: &GenerateArgs, threads: usize) -> Result<()> {
    let (solver, ns) = match (a.solver, a.full_size) {
        (SolverKind::Burgers, false) => (serde_json::to_value(BurgersConfig::default())?, 16),
        (SolverKind::Burgers, true) => (serde_json::to_value(BurgersConfig::full_size())?, 128),
        (SolverKind::Vortex, false) => (serde_json::to_value(VortexFlowConfig::default())?, 16),
        (SolverKind::Vortex, true) => (serde_json::to_value(VortexFlowConfig::full_size())?, 5120),
    };
    let defaults = GenerateConfig { ns, seed: 0, scaling: Scaling::Global, solver };
    let mut flags = Overrides::default();
    flags.set("ns", a.ns).set("seed", a.seed);
    let (cfg, resolved) = resolve(&defaults, a.config.as_deref(), flags, true)?;
    let solver = match a.solver {
        SolverKind::Burgers => SolverConfig::Burgers(serde_json::from_value(cfg.solver).context("solver config")?),
        SolverKind::Vortex => SolverConfig::Vortex(serde_json::from_value(cfg.solver).context("solver config")?),
    };
    solver.validate()?;
    if cfg.ns == 0 {
        return Err(Failure::validation("ns must be at least 1").into());
    }

    let mut run = RunDir::create(&a.out, "generate")?;
    if let Some(p) = &a.config {
        run.input(p)?;
    }
    eprintln!("solving {} trajectories", cfg.ns);
    let raw = generate_dataset(&solver, cfg.ns, cfg.seed)?;
    let mut data = center_and_scale(&raw.trajectories, cfg.scaling)?;
    data.provenance = json!({ "solver": solver, "seed": cfg.seed, "params": raw.params });
    save(&run.output("raw.nmrd"), &raw.to_container())?;
    save(&run.output("dataset.nmrd"), &data.to_container())?;
    let summary = json!({ "samples_shape": data.samples.shape() });
    run.finish(resolved, Some(cfg.seed), threads, "ok", summary)?;
    eprintln!("dataset {:?} written to {}", data.samples.shape(), a.out.display());
    Ok(())
}

const SCALING_MEAN: &str = "scaling.mean_field";

/// Stores the dataset's scaling next to the parameters so predictions can
/// be mapped back to physical values.
fn attach_scaling(c: &mut Container, data: &SnapshotDataset) {
    c.metadata["scaling"] = json!({
        "scaling": data.scaling,
        "scale_min": data.scale_min,
        "scale_max": data.scale_max,
    });
    c.push(SCALING_MEAN, Dtype::F64, data.mean_field.clone());
}

/// The scaling transform of a checkpoint, as a dataset without samples.
fn scaling_of(c: &Container, path: &Path) -> Result<SnapshotDataset> {
    let meta = &c.metadata["scaling"];
    let missing = || Failure::validation(format!("{} carries no scaling information", path.display()));
    let mean_field = c.get(SCALING_MEAN).ok_or_else(missing)?.clone();
    if meta.is_null() {
        return Err(missing().into());
    }
    let mut shape = vec![0, 0];
    shape.extend_from_slice(mean_field.shape());
    Ok(SnapshotDataset {
        samples: Tensor::zeros(&shape),
        mean_field,
        scaling: serde_json::from_value(meta["scaling"].clone())?,
        scale_min: serde_json::from_value(meta["scale_min"].clone())?,
        scale_max: serde_json::from_value(meta["scale_max"].clone())?,
        provenance: Value::Null,
    })
}

#[derive(Serialize)]
struct LossRow {
    step: usize,
    joint_loss: f64,
    recon_term: f64,
    latent_term: f64,
}

fn loss_rows(history: &[LossRecord]) -> impl Iterator<Item = LossRow> + '_ {
    history.iter().map(|r| LossRow {
        step: r.step,
        joint_loss: r.joint_loss,
        recon_term: r.recon_term,
        latent_term: r.latent_term,
    })
}

pub fn train(a: &TrainArgs, threads: usize) -> Result<()> {
    let data = SnapshotDataset::from_container(&load(&a.dataset)?)?;
    let mut flags = Overrides::default();
    flags
        .set("ntrain", a.ntrain)
        .set("nh", a.nh)
        .set("nb", a.nb)
        .set("lr", a.lr)
        .set("seed", a.seed)
        .set("checkpoint_every", a.checkpoint_every);
    let (mut state, cfg, resolved) = match &a.resume {
        None => {
            let (cfg, v) = resolve(&RunConfig::default(), a.config.as_deref(), flags, true)?;
            cfg.validate()?;
            (TrainState::new(cfg.init_model(data.spatial_shape())?), cfg, v)
        }
        Some(p) => {
            let (state, saved) = load_checkpoint(&load(p)?)?;
            let (cfg, v) = resolve(&saved, a.config.as_deref(), flags, false)?;
            let same = RunConfig { ntrain: saved.ntrain, checkpoint_every: saved.checkpoint_every, ..cfg.clone() };
            if same != saved {
                return Err(Failure::validation("a resumed run may only change ntrain and checkpoint_every").into());
            }
            if cfg.ntrain < state.step() {
                return Err(Failure::validation(format!(
                    "checkpoint is at step {}, beyond ntrain = {}",
                    state.step(),
                    cfg.ntrain
                ))
                .into());
            }
            (state, cfg, v)
        }
    };
    if state.params.snapshot_shape() != data.spatial_shape() {
        return Err(Failure::validation(format!(
            "model expects snapshots {:?}, dataset has {:?}",
            state.params.snapshot_shape(),
            data.spatial_shape()
        ))
        .into());
    }

    let mut run = RunDir::create(&a.out, "train")?;
    run.input(&a.dataset)?;
    for p in [&a.config, &a.resume].into_iter().flatten() {
        run.input(p)?;
    }
    let start = state.step();
    let report_every = (cfg.ntrain / 10).max(1);
    let mut periodic = Vec::new();
    let result = nmor::training::train(&mut state, &data.samples, &cfg, |st| {
        let step = st.step();
        if step % report_every == 0 || step == cfg.ntrain {
            let r = st.history.last().expect("a step was taken");
            eprintln!("step {step}: joint {:.4e} recon {:.4e} latent {:.4e}", r.joint_loss, r.recon_term, r.latent_term);
        }
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step < cfg.ntrain {
            periodic.push(step);
            let mut c = checkpoint_container(st, &cfg)?;
            attach_scaling(&mut c, &data);
            let path = a.out.join(format!("checkpoint-{step}.nmrd"));
            nmor::data::save_container(&path, &c)?;
        }
        Ok(())
    });
    for step in &periodic {
        run.output(&format!("checkpoint-{step}.nmrd"));
    }

    write_csv(&run.output("loss.csv"), loss_rows(&state.history))?;
    let mut c = checkpoint_container(&state, &cfg)?;
    attach_scaling(&mut c, &data);
    save(&run.output("checkpoint.nmrd"), &c)?;

    let last = state.history.last().map(|r| r.joint_loss);
    let summary = json!({
        "first_step": start + 1,
        "steps": state.step(),
        "final_joint_loss": last,
        "parameters": state.params.param_count(),
    });
    match result {
        Ok(()) => {
            run.finish(resolved, Some(cfg.seed), threads, "ok", summary)?;
            eprintln!("checkpoint at step {} written to {}", state.step(), a.out.display());
            Ok(())
        }
        Err(e) => {
            run.finish(resolved, Some(cfg.seed), threads, "numerical_failure", summary)?;
            let tail: Vec<String> = state
                .history
                .iter()
                .rev()
                .take(5)
                .map(|r| format!("  step {}: joint {:e}", r.step, r.joint_loss))
                .collect();
            Err(Failure::numerical(format!(
                "{e}\nlast good steps (newest first):\n{}\nstate at step {} saved to {}",
                tail.join("\n"),
                state.step(),
                a.out.join("checkpoint.nmrd").display()
            ))
            .into())
        }
    }
}

pub fn predict(a: &PredictArgs, threads: usize) -> Result<()> {
    if a.steps == 0 {
        return Err(Failure::validation("--steps must be at least 1").into());
    }
    let ckpt = load(&a.checkpoint)?;
    let (state, cfg) = load_checkpoint(&ckpt)?;
    let scaling = scaling_of(&ckpt, &a.checkpoint)?;
    let spatial = state.params.snapshot_shape();
    let x0 = match (&a.initial, &a.dataset, a.sample) {
        (Some(p), _, _) => {
            let ic = load(p)?;
            let raw = ic
                .get("x0")
                .ok_or_else(|| Failure::validation(format!("{} has no x0 record", p.display())))?;
            if raw.shape() != spatial.as_slice() {
                return Err(Failure::validation(format!(
                    "initial condition {:?} does not match the model's {spatial:?}",
                    raw.shape()
                ))
                .into());
            }
            scaling.scale_fields(raw)?
        }
        (None, Some(p), Some(i)) => {
            let data = SnapshotDataset::from_container(&load(p)?)?;
            if i >= data.ns() {
                return Err(Failure::validation(format!("sample {i} out of range, dataset has {}", data.ns())).into());
            }
            if data.spatial_shape() != spatial.as_slice() {
                return Err(Failure::validation(format!(
                    "dataset snapshots {:?} do not match the model's {spatial:?}",
                    data.spatial_shape()
                ))
                .into());
            }
            let n: usize = spatial.iter().product();
            Tensor::new(spatial.clone(), data.samples.slab(i)[..n].to_vec())?
        }
        _ => return Err(Failure::validation("give --initial or --dataset with --sample").into()),
    };

    let mut run = RunDir::create(&a.out, "predict")?;
    run.input(&a.checkpoint)?;
    for p in [&a.initial, &a.dataset].into_iter().flatten() {
        run.input(p)?;
    }
    let scaled = nmor::training::predict(&state.params, &x0, a.steps, a.final_only)?;
    let fields = scaling.unscale_fields(&scaled)?;
    let latents = predict_latents(&state.params, &x0, a.steps)?;
    let mut out = Container::new(json!({
        "kind": "prediction",
        "steps": a.steps,
        "final_only": a.final_only,
        "first_step": if a.final_only { a.steps } else { 1 },
    }));
    out.push("fields", Dtype::F64, fields);
    out.push("latents", Dtype::F64, latents.clone());
    save(&run.output("prediction.nmrd"), &out)?;
    let summary = json!({ "steps": a.steps, "max_abs_latent": latents.max_abs() });
    run.finish(json!({ "steps": a.steps, "final_only": a.final_only, "train_config": cfg }), None, threads, "ok", summary)?;
    eprintln!("{} prediction steps written to {}", a.steps, a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct ModeRow {
    mode: usize,
    singular_value: f64,
    energy_fraction: f64,
    cumulative_energy: f64,
}

pub fn pod(a: &PodArgs, threads: usize) -> Result<()> {
    if !(a.kappa > 0.0 && a.kappa <= 1.0) {
        return Err(Failure::validation(format!("kappa = {} outside (0, 1]", a.kappa)).into());
    }
    let data = SnapshotDataset::from_container(&load(&a.dataset)?)?;
    let x = snapshot_matrix(&data.samples)?;
    let basis = compute_pod(&x, true)?;
    let sv = basis.singular_values.data().to_vec();
    let nh = match a.nh {
        Some(n) if n == 0 || n > basis.rank() => {
            return Err(Failure::validation(format!("nh = {n} outside 1..={}", basis.rank())).into())
        }
        Some(n) => n,
        None => select_rank(&sv, a.kappa)?,
    };
    let seed = match a.seed {
        Some(s) => s,
        None => crate::config::env_seed()?.unwrap_or(0),
    };

    let mut run = RunDir::create(&a.out, "pod")?;
    run.input(&a.dataset)?;
    let total: f64 = sv.iter().map(|s| s * s).sum();
    let mut acc = 0.0;
    let rows: Vec<ModeRow> = sv
        .iter()
        .enumerate()
        .map(|(i, s)| {
            acc += s * s;
            ModeRow { mode: i + 1, singular_value: *s, energy_fraction: s * s / total, cumulative_energy: acc / total }
        })
        .collect();
    let captured = rows[nh - 1].cumulative_energy;
    write_csv(&run.output("modes.csv"), rows)?;

    let error = basis.reconstruction_error(&x, nh)?;
    let mut c = Container::new(json!({ "kind": "pod", "nh": nh, "kappa": a.kappa, "centered": true }));
    c.push("modes", Dtype::F64, Tensor::from_fn(&[basis.dim(), nh], |k| basis.modes.at(&[k / nh, k % nh])));
    c.push("singular_values", Dtype::F64, basis.singular_values.clone());
    if let Some(m) = &basis.mean {
        c.push("mean", Dtype::F64, m.clone());
    }
    save(&run.output("pod.nmrd"), &c)?;

    let mut summary = json!({ "nh": nh, "captured_energy": captured, "frobenius_error": error });
    if a.lstm_ntrain > 0 {
        // Coefficients [Ns, Nt, Nh], scaled into the LSTM's output range.
        let h = basis.project(&x, nh)?;
        let (ns, nt) = (data.ns(), data.nt());
        let mut lat = Tensor::from_fn(&[ns, nt, nh], |k| {
            let (col, j) = (k / nh, k % nh);
            h.at(&[j, col])
        });
        let scale = latent_scale(&lat);
        lat.scale(scale);
        let cfg = RunConfig { nh, ntrain: a.lstm_ntrain, seed, ..RunConfig::default() };
        let (lstm, history) = pod_lstm_train(&lat, &cfg)?;
        write_csv(&run.output("pod_lstm_loss.csv"), loss_rows(&history))?;
        let mut lc = Container::new(json!({
            "kind": "pod_lstm",
            "latent_scale": scale,
            "cell_update": CellUpdate::Standard,
            "ntrain": a.lstm_ntrain,
            "seed": seed,
        }));
        for (name, t) in lstm.tensors() {
            lc.push(format!("param.{name}"), Dtype::F64, t.clone());
        }
        save(&run.output("pod_lstm.nmrd"), &lc)?;
        summary["lstm_final_loss"] = json!(history.last().map(|r| r.joint_loss));
    }
    let config = json!({ "nh": a.nh, "kappa": a.kappa, "lstm_ntrain": a.lstm_ntrain, "seed": seed });
    run.finish(config, Some(seed), threads, "ok", summary)?;
    eprintln!("{nh} POD modes ({:.4}% energy) written to {}", 100.0 * captured, a.out.display());
    Ok(())
}

/// Subtracts the temporal mean of `reference` from every snapshot of `x`.
fn fluctuations(x: &Tensor, reference: &Tensor) -> Result<Tensor> {
    let nt = reference.shape()[0];
    let n = reference.len() / nt;
    let mut mean = vec![0.0; n];
    for s in reference.data().chunks(n) {
        mean.iter_mut().zip(s).for_each(|(m, v)| *m += v / nt as f64);
    }
    let mut out = x.clone();
    for s in out.data_mut().chunks_mut(n) {
        s.iter_mut().zip(&mean).for_each(|(v, m)| *v -= m);
    }
    Ok(out)
}

fn snapshot(x: &Tensor, k: usize) -> Result<Tensor> {
    Ok(Tensor::new(x.shape()[1..].to_vec(), x.slab(k).to_vec())?)
}

/// TKE of every snapshot of a vorticity trajectory, fluctuations taken
/// against the truth's temporal-mean velocity.
fn tke_series(omega: &Tensor, mean_u: &Tensor, mean_v: &Tensor) -> Result<Vec<f64>> {
    let n = omega.shape()[1];
    let h = std::f64::consts::TAU / n as f64;
    let w = trapezoid_weights(n, n, h, h, true)?;
    (0..omega.shape()[0])
        .map(|k| {
            let (mut u, mut v) = velocity_from_vorticity(&snapshot(omega, k)?)?;
            u.data_mut().iter_mut().zip(mean_u.data()).for_each(|(a, b)| *a -= b);
            v.data_mut().iter_mut().zip(mean_v.data()).for_each(|(a, b)| *a -= b);
            Ok(tke(&u, &v, &w)?)
        })
        .collect()
}

fn mean_velocity(omega: &Tensor) -> Result<(Tensor, Tensor)> {
    let nt = omega.shape()[0];
    let shape = omega.shape()[1..].to_vec();
    let (mut mu, mut mv) = (Tensor::zeros(&shape), Tensor::zeros(&shape));
    for k in 0..nt {
        let (u, v) = velocity_from_vorticity(&snapshot(omega, k)?)?;
        mu.add_assign(&u)?;
        mv.add_assign(&v)?;
    }
    mu.scale(1.0 / nt as f64);
    mv.scale(1.0 / nt as f64);
    Ok((mu, mv))
}

#[derive(Serialize)]
struct ErrorRow {
    step: usize,
    scaled_error: f64,
}

#[derive(Serialize)]
struct TkeRow {
    step: usize,
    tke_truth: f64,
    tke_prediction: f64,
}

#[derive(Serialize)]
struct PsdRow {
    frequency: f64,
    power_truth: f64,
    power_prediction: f64,
}

#[derive(Serialize)]
struct CenterRow {
    step: usize,
    source: &'static str,
    vortex: usize,
    x: f64,
    y: f64,
}

pub fn eval(a: &EvalArgs, threads: usize) -> Result<()> {
    let truth_all = trajectory(&load(&a.truth)?, a.truth_sample, &a.truth)?;
    let pred = trajectory(&load(&a.prediction)?, a.prediction_sample, &a.prediction)?;
    let nt = pred.shape()[0];
    if truth_all.shape()[1..] != pred.shape()[1..] {
        return Err(Failure::validation(format!(
            "truth snapshots {:?} and predicted {:?} differ",
            &truth_all.shape()[1..],
            &pred.shape()[1..]
        ))
        .into());
    }
    if a.truth_offset + nt > truth_all.shape()[0] {
        return Err(Failure::validation(format!(
            "truth has {} snapshots, need {} from offset {}",
            truth_all.shape()[0],
            nt,
            a.truth_offset
        ))
        .into());
    }
    let n: usize = pred.shape()[1..].iter().product();
    let truth = Tensor::new(
        pred.shape().to_vec(),
        truth_all.data()[a.truth_offset * n..(a.truth_offset + nt) * n].to_vec(),
    )?;
    let two_d = pred.ndim() == 3 && pred.shape()[1] == pred.shape()[2];
    for m in &a.metrics {
        match m {
            Metric::Tke | Metric::Psd | Metric::Centers if !two_d => {
                return Err(Failure::validation(format!("{m:?} needs square 2-D vorticity fields")).into())
            }
            Metric::Psd if nt < 8 => return Err(Failure::validation("PSD needs at least 8 snapshots").into()),
            Metric::Centers if a.signs.is_empty() => {
                return Err(Failure::validation("centre tracking needs --signs").into())
            }
            _ => {}
        }
    }

    let mut run = RunDir::create(&a.out, "eval")?;
    run.input(&a.truth)?;
    run.input(&a.prediction)?;
    let mut summary = json!({});
    let mut tke_cache = None;
    for m in &a.metrics {
        match m {
            Metric::Error => {
                let e = error_series(&fluctuations(&truth, &truth)?, &fluctuations(&pred, &truth)?)?;
                let rows = e.data().iter().enumerate().map(|(k, &v)| ErrorRow { step: k + 1, scaled_error: v });
                write_csv(&run.output("error.csv"), rows)?;
                summary["mean_scaled_error"] = json!(e.data().iter().sum::<f64>() / nt as f64);
            }
            Metric::Tke | Metric::Psd => {
                if tke_cache.is_none() {
                    let (mu, mv) = mean_velocity(&truth)?;
                    tke_cache = Some((tke_series(&truth, &mu, &mv)?, tke_series(&pred, &mu, &mv)?));
                }
                let (tt, tp) = tke_cache.as_ref().expect("filled above");
                if *m == Metric::Tke {
                    let rows = (0..nt).map(|k| TkeRow { step: k + 1, tke_truth: tt[k], tke_prediction: tp[k] });
                    write_csv(&run.output("tke.csv"), rows)?;
                } else {
                    let (pt, pp) = (psd(tt, a.dt)?, psd(tp, a.dt)?);
                    let rows = (0..pt.power.len()).map(|k| PsdRow {
                        frequency: pt.frequencies[k],
                        power_truth: pt.power[k],
                        power_prediction: pp.power[k],
                    });
                    write_csv(&run.output("psd.csv"), rows)?;
                }
            }
            Metric::Centers => {
                let h = std::f64::consts::TAU / pred.shape()[1] as f64;
                let mut rows = Vec::new();
                for k in 0..nt {
                    for (source, field) in [("truth", &truth), ("prediction", &pred)] {
                        let c = vortex_centers(&snapshot(field, k)?, &a.signs, h)?;
                        rows.extend(c.into_iter().enumerate().map(|(i, (x, y))| CenterRow { step: k + 1, source, vortex: i, x, y }));
                    }
                }
                write_csv(&run.output("centers.csv"), rows)?;
            }
        }
    }
    let config = json!({
        "metrics": a.metrics.iter().map(|m| format!("{m:?}").to_lowercase()).collect::<Vec<_>>(),
        "truth_sample": a.truth_sample,
        "prediction_sample": a.prediction_sample,
        "truth_offset": a.truth_offset,
        "dt": a.dt,
        "signs": a.signs,
    });
    run.finish(config, None, threads, "ok", summary)?;
    eprintln!("evaluation written to {}", a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct GradRow<'a> {
    component: &'a str,
    params: usize,
    param_error: f64,
    input_error: Option<f64>,
    passed: bool,
}

pub fn gradcheck(a: &GradcheckArgs, threads: usize) -> Result<()> {
    let mut run = a.out.as_deref().map(|p| RunDir::create(p, "gradcheck")).transpose()?;
    let report = run_suite(a.seed)?;
    print!("{}", report.table());
    let passed = report.passed();
    if let Some(run) = run.as_mut() {
        let rows = report.rows.iter().map(|r| GradRow {
            component: &r.name,
            params: r.params,
            param_error: r.param_error,
            input_error: r.input_error,
            passed: r.worst() <= report.threshold,
        });
        write_csv(&run.output("gradcheck.csv"), rows)?;
    }
    if let Some(run) = run {
        let summary = json!({ "worst_relative_error": report.worst(), "threshold": report.threshold });
        run.finish(json!({ "seed": a.seed }), Some(a.seed), threads, if passed { "ok" } else { "failed" }, summary)?;
    }
    if passed {
        Ok(())
    } else {
        Err(Failure::numerical(format!(
            "gradient check failed: worst relative error {:.3e} exceeds {:.0e}",
            report.worst(),
            report.threshold
        ))
        .into())
    }
}

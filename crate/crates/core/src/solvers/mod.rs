//! Snapshot generators: 1-D viscous Burgers and 2-D periodic vorticity flow.
//!
//! Trajectories are time-major: `[Nt, Nx]` or `[Nt, n, n]`.

mod burgers;
mod vortex;

pub use burgers::{burgers_initial_condition, burgers_solve, burgers_solve_with, BurgersConfig};
pub use vortex::{
    enstrophy, velocity_from_vorticity, vortex_initial_condition, vortex_solve, vortex_solve_from,
    VortexFlowConfig,
};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::data::{Container, Dtype};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "solver", rename_all = "snake_case")]
pub enum SolverConfig {
    Burgers(BurgersConfig),
    Vortex(VortexFlowConfig),
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            SolverConfig::Burgers(c) => c.validate(),
            SolverConfig::Vortex(c) => c.validate(),
        }
    }

    pub fn snapshot_shape(&self) -> Vec<usize> {
        match self {
            SolverConfig::Burgers(c) => vec![c.nx],
            SolverConfig::Vortex(c) => vec![c.n, c.n],
        }
    }

    pub fn nt(&self) -> usize {
        match self {
            SolverConfig::Burgers(c) => c.nt,
            SolverConfig::Vortex(c) => c.nt,
        }
    }
}

/// Parameters of one generated trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrajectoryParams {
    Burgers { x0: f64 },
    Vortex { centers: Vec<(f64, f64)>, signs: Vec<f64> },
}

/// Raw (unscaled) trajectories `[Ns, Nt, spatial...]` with their parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub trajectories: Tensor,
    pub params: Vec<TrajectoryParams>,
    pub config: SolverConfig,
    pub seed: u64,
}

/// Draws the parameters of trajectory `index`; independent of every other
/// index, so generation order and thread count do not matter.
pub fn draw_params(config: &SolverConfig, seed: u64, index: usize) -> TrajectoryParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    match config {
        SolverConfig::Burgers(c) => TrajectoryParams::Burgers {
            x0: rng.gen_range(c.x0_range[0]..=c.x0_range[1]),
        },
        SolverConfig::Vortex(c) => {
            let [lo, hi] = c.subdomain;
            TrajectoryParams::Vortex {
                centers: (0..c.nv)
                    .map(|_| (rng.gen_range(lo..=hi), rng.gen_range(lo..=hi)))
                    .collect(),
                signs: c.signs(),
            }
        }
    }
}

pub fn solve(config: &SolverConfig, params: &TrajectoryParams) -> Result<Tensor> {
    match (config, params) {
        (SolverConfig::Burgers(c), TrajectoryParams::Burgers { x0 }) => burgers_solve(c, *x0),
        (SolverConfig::Vortex(c), TrajectoryParams::Vortex { centers, signs }) => vortex_solve(c, centers, signs),
        _ => Err(Error::invalid("trajectory parameters do not match the solver")),
    }
}

/// `ns` independent trajectories, solved in parallel on the current rayon
/// pool. The result does not depend on the number of threads.
pub fn generate_dataset(config: &SolverConfig, ns: usize, seed: u64) -> Result<RawDataset> {
    config.validate()?;
    if ns == 0 {
        return Err(Error::invalid("ns must be at least 1"));
    }
    let params: Vec<TrajectoryParams> = (0..ns).map(|i| draw_params(config, seed, i)).collect();
    let trajectories: Vec<Tensor> = params
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            solve(config, p).map_err(|e| {
                Error::Numerical(format!("trajectory {i} with {}: {e}", serde_json::to_string(p).unwrap_or_default()))
            })
        })
        .collect::<Result<_>>()?;
    let mut shape = vec![ns, config.nt()];
    shape.extend(config.snapshot_shape());
    let data: Vec<f64> = trajectories.into_iter().flat_map(Tensor::into_data).collect();
    Ok(RawDataset {
        trajectories: Tensor::new(shape, data)?,
        params,
        config: config.clone(),
        seed,
    })
}

impl RawDataset {
    /// `trajectories` stored as f32, parameters and solver config in the
    /// metadata.
    pub fn to_container(&self) -> Container {
        let mut c = Container::new(json!({
            "kind": "raw_dataset",
            "config": self.config,
            "seed": self.seed,
            "params": self.params,
        }));
        c.push("trajectories", Dtype::F32, self.trajectories.clone());
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.metadata["kind"] != "raw_dataset" {
            return Err(Error::Format("container is not a raw dataset".into()));
        }
        let field = |k: &str| -> Result<Value> { Ok(c.metadata[k].clone()) };
        let fmt = |e: serde_json::Error| Error::Format(e.to_string());
        Ok(Self {
            trajectories: c.require("trajectories")?.clone(),
            params: serde_json::from_value(field("params")?).map_err(fmt)?,
            config: serde_json::from_value(field("config")?).map_err(fmt)?,
            seed: c.metadata["seed"]
                .as_u64()
                .ok_or_else(|| Error::Format("seed missing".into()))?,
        })
    }
}

//! Container and CSV helpers shared by the commands.

use std::path::Path;

use anyhow::{Context, Result};
use nmor::data::{load_container, save_container, Container};
use nmor::Tensor;
use serde::Serialize;

use crate::exit::Failure;

pub fn load(path: &Path) -> Result<Container> {
    Ok(load_container(path)?)
}

pub fn save(path: &Path, c: &Container) -> Result<()> {
    Ok(save_container(path, c)?)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// One `[Nt, spatial...]` trajectory from a prediction, raw dataset or
/// scaled dataset container.
pub fn trajectory(c: &Container, sample: usize, path: &Path) -> Result<Tensor> {
    if let Some(t) = c.get("fields") {
        return Ok(t.clone());
    }
    let all = c
        .get("trajectories")
        .or_else(|| c.get("samples"))
        .ok_or_else(|| Failure::validation(format!("{} holds no fields, trajectories or samples", path.display())))?;
    let ns = all.shape()[0];
    if sample >= ns {
        return Err(Failure::validation(format!("sample {sample} out of range, {} has {ns}", path.display())).into());
    }
    Ok(Tensor::new(all.shape()[1..].to_vec(), all.slab(sample).to_vec())?)
}

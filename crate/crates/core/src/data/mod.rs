//! Preprocessing, windowing, batch sampling and the on-disk container.
//!
//! Snapshot collections are `[Ns, Nt, spatial...]`: sample-major, then time.

mod container;

pub use container::{load_container, save_container, Container, Dtype, Record};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// How the min/max of the feature scaling are taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// One scalar pair over the whole dataset.
    #[default]
    Global,
    /// One pair per snapshot.
    PerSnapshot,
}

/// Mean-removed, feature-scaled snapshots together with their inversion data.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotDataset {
    /// `[Ns, Nt, spatial...]`, values in `[0, 1]`.
    pub samples: Tensor,
    /// `[spatial...]`
    pub mean_field: Tensor,
    pub scaling: Scaling,
    /// One entry for global scaling, `Ns * Nt` entries otherwise.
    pub scale_min: Vec<f64>,
    pub scale_max: Vec<f64>,
    pub provenance: Value,
}

fn check_collection(raw: &Tensor, op: &'static str) -> Result<()> {
    if raw.ndim() < 3 {
        return Err(Error::shape(
            op,
            format!("expected [Ns, Nt, spatial...], got {:?}", raw.shape()),
        ));
    }
    Ok(())
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// Subtracts the mean over every snapshot, then maps into `[0, 1]`.
pub fn center_and_scale(raw: &Tensor, scaling: Scaling) -> Result<SnapshotDataset> {
    check_collection(raw, "center_and_scale")?;
    raw.ensure_finite("raw snapshots")?;
    let spatial = raw.shape()[2..].to_vec();
    let n = spatial.iter().product::<usize>();
    let count = raw.len() / n;

    let mut mean = vec![0.0; n];
    for snap in raw.data().chunks(n) {
        mean.iter_mut().zip(snap).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);

    let mut fluct = raw.data().to_vec();
    for snap in fluct.chunks_mut(n) {
        snap.iter_mut().zip(&mean).for_each(|(x, m)| *x -= m);
    }

    let (scale_min, scale_max): (Vec<f64>, Vec<f64>) = match scaling {
        Scaling::Global => {
            let (lo, hi) = min_max(&fluct);
            (vec![lo], vec![hi])
        }
        Scaling::PerSnapshot => fluct.chunks(n).map(min_max).unzip(),
    };
    if scale_min.iter().zip(&scale_max).any(|(lo, hi)| hi <= lo) {
        return Err(Error::invalid("degenerate scaling: max == min"));
    }
    for (i, snap) in fluct.chunks_mut(n).enumerate() {
        let k = if scaling == Scaling::Global { 0 } else { i };
        let (lo, span) = (scale_min[k], scale_max[k] - scale_min[k]);
        snap.iter_mut().for_each(|x| *x = ((*x - lo) / span).clamp(0.0, 1.0));
    }
    Ok(SnapshotDataset {
        samples: Tensor::new(raw.shape().to_vec(), fluct)?,
        mean_field: Tensor::new(spatial, mean)?,
        scaling,
        scale_min,
        scale_max,
        provenance: Value::Null,
    })
}

impl SnapshotDataset {
    pub fn ns(&self) -> usize {
        self.samples.shape()[0]
    }

    pub fn nt(&self) -> usize {
        self.samples.shape()[1]
    }

    pub fn spatial_shape(&self) -> &[usize] {
        &self.samples.shape()[2..]
    }

    fn global_bounds(&self, op: &str) -> Result<(f64, f64)> {
        match self.scaling {
            Scaling::Global => Ok((self.scale_min[0], self.scale_max[0])),
            Scaling::PerSnapshot => Err(Error::invalid(format!(
                "{op} needs global scaling; per-snapshot bounds only apply to stored snapshots"
            ))),
        }
    }

    fn check_fields(&self, x: &Tensor, op: &'static str) -> Result<()> {
        if x.ndim() < self.mean_field.ndim() || !x.shape().ends_with(self.mean_field.shape()) {
            return Err(Error::shape(
                op,
                format!("fields {:?} vs mean {:?}", x.shape(), self.mean_field.shape()),
            ));
        }
        Ok(())
    }

    /// Applies the stored transform to raw fields `[..., spatial...]`.
    pub fn scale_fields(&self, raw: &Tensor) -> Result<Tensor> {
        self.check_fields(raw, "scale_fields")?;
        let (lo, hi) = self.global_bounds("scale_fields")?;
        let mut out = raw.clone();
        for snap in out.data_mut().chunks_mut(self.mean_field.len()) {
            snap.iter_mut()
                .zip(self.mean_field.data())
                .for_each(|(x, m)| *x = (*x - m - lo) / (hi - lo));
        }
        Ok(out)
    }

    /// Inverse of [`scale_fields`](Self::scale_fields).
    pub fn unscale_fields(&self, scaled: &Tensor) -> Result<Tensor> {
        self.check_fields(scaled, "unscale_fields")?;
        let (lo, hi) = self.global_bounds("unscale_fields")?;
        let mut out = scaled.clone();
        for snap in out.data_mut().chunks_mut(self.mean_field.len()) {
            snap.iter_mut()
                .zip(self.mean_field.data())
                .for_each(|(x, m)| *x = *x * (hi - lo) + lo + m);
        }
        Ok(out)
    }

    /// Recovers the raw snapshot collection.
    pub fn inverse(&self) -> Result<Tensor> {
        let n = self.mean_field.len();
        let mut out = self.samples.clone();
        for (i, snap) in out.data_mut().chunks_mut(n).enumerate() {
            let k = if self.scaling == Scaling::Global { 0 } else { i };
            let (lo, hi) = (self.scale_min[k], self.scale_max[k]);
            snap.iter_mut()
                .zip(self.mean_field.data())
                .for_each(|(x, m)| *x = *x * (hi - lo) + lo + m);
        }
        Ok(out)
    }

    /// Records: `samples` (f32), `mean_field`, `scale_min`, `scale_max`.
    pub fn to_container(&self) -> Container {
        let mut c = Container::new(json!({
            "kind": "snapshot_dataset",
            "scaling": self.scaling,
            "provenance": self.provenance,
        }));
        c.push("samples", Dtype::F32, self.samples.clone());
        c.push("mean_field", Dtype::F64, self.mean_field.clone());
        c.push("scale_min", Dtype::F64, Tensor::from_vec(self.scale_min.clone()));
        c.push("scale_max", Dtype::F64, Tensor::from_vec(self.scale_max.clone()));
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let scaling = serde_json::from_value(c.metadata["scaling"].clone())
            .map_err(|e| Error::Format(format!("scaling: {e}")))?;
        Ok(Self {
            samples: c.require("samples")?.clone(),
            mean_field: c.require("mean_field")?.clone(),
            scaling,
            scale_min: c.require("scale_min")?.data().to_vec(),
            scale_max: c.require("scale_max")?.data().to_vec(),
            provenance: c.metadata["provenance"].clone(),
        })
    }
}

/// Sample `i` is `[x^i, x^{i+m}, ..., x^{i+(nt-1)m}]` for `i < ns`.
///
/// `trajectory` is `[T, spatial...]`; the result is `[ns, nt, spatial...]`.
pub fn window_sequences(trajectory: &Tensor, nt: usize, stride: usize, ns: usize) -> Result<Tensor> {
    if trajectory.ndim() < 2 || nt == 0 || stride == 0 || ns == 0 {
        return Err(Error::invalid("window_sequences needs [T, spatial...] and nt, m, ns >= 1"));
    }
    let t = trajectory.shape()[0];
    let need = (nt - 1) * stride + ns;
    if t < need {
        return Err(Error::invalid(format!(
            "trajectory of length {t} is shorter than (nt-1)*m + ns = {need}"
        )));
    }
    let mut data = Vec::with_capacity(ns * nt * trajectory.len() / t);
    for i in 0..ns {
        for k in 0..nt {
            data.extend_from_slice(trajectory.slab(i + k * stride));
        }
    }
    let mut shape = vec![ns, nt];
    shape.extend_from_slice(&trajectory.shape()[1..]);
    Tensor::new(shape, data)
}

/// `nb` indices drawn uniformly with replacement from `0..ns`.
pub fn sample_indices<R: Rng + ?Sized>(ns: usize, nb: usize, rng: &mut R) -> Result<Vec<usize>> {
    if ns == 0 {
        return Err(Error::invalid("cannot sample from an empty dataset"));
    }
    if nb == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    Ok((0..nb).map(|_| rng.gen_range(0..ns)).collect())
}

/// Gathers leading-axis slabs of `samples`.
pub fn gather(samples: &Tensor, indices: &[usize]) -> Result<Tensor> {
    let mut data = Vec::with_capacity(indices.len() * samples.slab(0).len());
    for &i in indices {
        if i >= samples.shape()[0] {
            return Err(Error::invalid(format!("sample index {i} out of range")));
        }
        data.extend_from_slice(samples.slab(i));
    }
    let mut shape = samples.shape().to_vec();
    shape[0] = indices.len();
    Tensor::new(shape, data)
}

/// Uniform batch with replacement, `[Nb, Nt, spatial...]`.
pub fn sample_batch<R: Rng + ?Sized>(samples: &Tensor, nb: usize, rng: &mut R) -> Result<Tensor> {
    let idx = sample_indices(samples.shape()[0], nb, rng)?;
    gather(samples, &idx)
}

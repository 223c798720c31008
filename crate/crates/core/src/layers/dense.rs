use crate::error::{Error, Result};
use crate::layers::Activation;
use crate::numerics::{gemm, Tensor};

/// Fully-connected layer `f(W x + b)` acting on column batches `[in x B]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `[out x in]`
    pub w: Tensor,
    /// `[out]`
    pub b: Tensor,
    pub activation: Activation,
}

/// Values retained by the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct DenseCache {
    input: Tensor,
    output: Tensor,
}

impl DenseLayer {
    pub fn new(w: Tensor, b: Tensor, activation: Activation) -> Result<Self> {
        let (out, _) = w.dims2("DenseLayer::new")?;
        if b.shape() != [out] {
            return Err(Error::shape(
                "DenseLayer::new",
                format!("bias {:?} for weight {:?}", b.shape(), w.shape()),
            ));
        }
        Ok(Self { w, b, activation })
    }

    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            w: Tensor::zeros(&[outputs, inputs]),
            b: Tensor::zeros(&[outputs]),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &Tensor) -> Result<(Tensor, DenseCache)> {
        let (inp, batch) = x.dims2("dense_forward")?;
        if inp != self.inputs() {
            return Err(Error::shape(
                "dense_forward",
                format!("layer expects {} inputs, got {:?}", self.inputs(), x.shape()),
            ));
        }
        let out = self.outputs();
        let mut z = vec![0.0; out * batch];
        for (row, &bias) in z.chunks_mut(batch).zip(self.b.data()) {
            row.fill(bias);
        }
        gemm(out, inp, batch, 1.0, self.w.data(), false, x.data(), false, 1.0, &mut z);
        self.activation.apply_slice(&mut z);
        let y = Tensor::new(vec![out, batch], z)?;
        Ok((
            y.clone(),
            DenseCache {
                input: x.clone(),
                output: y,
            },
        ))
    }

    /// Returns the input gradient and the parameter gradients (packed as a
    /// layer of the same shape).
    pub fn backward(&self, cache: &DenseCache, grad_out: &Tensor) -> Result<(Tensor, DenseLayer)> {
        if grad_out.shape() != cache.output.shape() {
            return Err(Error::shape(
                "dense_backward",
                format!("upstream {:?} vs output {:?}", grad_out.shape(), cache.output.shape()),
            ));
        }
        let (out, batch) = (self.outputs(), cache.output.shape()[1]);
        let inp = self.inputs();
        let mut dz = grad_out.data().to_vec();
        self.activation.backprop_slice(cache.output.data(), &mut dz);

        let mut dw = vec![0.0; out * inp];
        gemm(out, batch, inp, 1.0, &dz, false, cache.input.data(), true, 0.0, &mut dw);
        let db: Vec<f64> = dz.chunks(batch).map(|r| r.iter().sum()).collect();
        let mut dx = vec![0.0; inp * batch];
        gemm(inp, out, batch, 1.0, self.w.data(), true, &dz, false, 0.0, &mut dx);

        Ok((
            Tensor::new(vec![inp, batch], dx)?,
            DenseLayer {
                w: Tensor::new(vec![out, inp], dw)?,
                b: Tensor::new(vec![out], db)?,
                activation: self.activation,
            },
        ))
    }
}

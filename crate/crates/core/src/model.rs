//! Recurrent autoencoder assemblies.
//!
//! [`CraeParams`] is the convolutional variant: strided convolutions, a
//! two-layer dense encoder, the mirrored dense decoder and transpose
//! convolutions. [`Fc1dParams`] is the shallow dense variant used for 1-D
//! fields. Both carry an [`LstmParams`] for the latent dynamics.
//!
//! Snapshot batches are `[B, H, W]` (or `[B, Nx]`); latent batches are
//! column blocks `[Nh x B]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    Activation, Conv2dLayer, ConvCache, ConvTranspose2dLayer, DenseCache, DenseLayer,
};
use crate::lstm::{CellUpdate, LstmParams};
use crate::numerics::Tensor;

/// Ordered, named view over every trainable tensor of a parameter set.
///
/// Gradients and optimizer moments reuse the same type, so the visiting
/// order is the only contract between them.
pub trait ParamTree: Clone {
    fn tensors(&self) -> Vec<(String, &Tensor)>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
        z
    }

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self += other`, tensor by tensor.
    fn accumulate(&mut self, other: &Self) -> Result<()> {
        let src: Vec<&Tensor> = other.tensors().into_iter().map(|(_, t)| t).collect();
        for (dst, s) in self.tensors_mut().into_iter().zip(src) {
            dst.add_assign(s)?;
        }
        Ok(())
    }
}

fn prefixed<'a>(prefix: &str, inner: Vec<(String, &'a Tensor)>) -> Vec<(String, &'a Tensor)> {
    inner
        .into_iter()
        .map(|(n, t)| (format!("{prefix}.{n}"), t))
        .collect()
}

impl ParamTree for DenseLayer {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        vec![("w".into(), &self.w), ("b".into(), &self.b)]
    }
    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w, &mut self.b]
    }
}

impl ParamTree for Conv2dLayer {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        vec![("filters".into(), &self.filters), ("bias".into(), &self.bias)]
    }
    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.filters, &mut self.bias]
    }
}

impl ParamTree for ConvTranspose2dLayer {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        vec![("filters".into(), &self.filters), ("bias".into(), &self.bias)]
    }
    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.filters, &mut self.bias]
    }
}

impl ParamTree for LstmParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("w_i".into(), &self.w_i),
            ("w_f".into(), &self.w_f),
            ("w_o".into(), &self.w_o),
            ("w_c".into(), &self.w_c),
            ("b_i".into(), &self.b_i),
            ("b_f".into(), &self.b_f),
            ("b_o".into(), &self.b_o),
            ("b_c".into(), &self.b_c),
        ]
    }
    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.w_i,
            &mut self.w_f,
            &mut self.w_o,
            &mut self.w_c,
            &mut self.b_i,
            &mut self.b_f,
            &mut self.b_o,
            &mut self.b_c,
        ]
    }
}

impl<T: ParamTree> ParamTree for Vec<T> {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        self.iter()
            .enumerate()
            .flat_map(|(i, l)| prefixed(&i.to_string(), l.tensors()))
            .collect()
    }
    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }
}

/// Network shape. Everything else (weights, caches) is derived from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    /// Square `input x input` fields through stride-2 convolutions.
    Conv {
        input: usize,
        conv_filters: Vec<usize>,
        kernel: usize,
        first_dilation: usize,
        fc_hidden: usize,
        latent: usize,
    },
    /// Flat `input`-length fields through one hidden layer each way.
    Dense {
        input: usize,
        hidden: usize,
        latent: usize,
    },
}

impl Architecture {
    /// 64x64 input, 5x5 filters (4, 8, 16, 32 maps), dilation 2 in the first
    /// layer, dense widths 512 -> 256 -> `nh`.
    pub fn conv64(nh: usize) -> Self {
        Architecture::Conv {
            input: 64,
            conv_filters: vec![4, 8, 16, 32],
            kernel: 5,
            first_dilation: 2,
            fc_hidden: 256,
            latent: nh,
        }
    }

    /// Reduced-depth 16x16 fixture with two convolution layers.
    pub fn conv16(nh: usize) -> Self {
        Architecture::Conv {
            input: 16,
            conv_filters: vec![4, 8],
            kernel: 5,
            first_dilation: 2,
            fc_hidden: 32,
            latent: nh,
        }
    }

    /// Four-layer dense autoencoder with a 512-wide hidden layer.
    pub fn dense(nx: usize, nh: usize) -> Self {
        Architecture::Dense {
            input: nx,
            hidden: 512,
            latent: nh,
        }
    }

    /// Default architecture for snapshots of the given spatial shape: the
    /// dense variant for 1-D fields, otherwise stride-2 convolutions down to
    /// 4x4 with channel counts 4, 8, 16, ...
    pub fn for_snapshot(spatial: &[usize], nh: usize) -> Result<Self> {
        match *spatial {
            [nx] => Ok(Self::dense(nx, nh)),
            [16, 16] => Ok(Self::conv16(nh)),
            [n, m] if n == m && n.is_power_of_two() && n >= 8 => {
                let layers = (n / 4).trailing_zeros() as usize;
                Ok(Architecture::Conv {
                    input: n,
                    conv_filters: (0..layers).map(|i| 4 << i).collect(),
                    kernel: 5,
                    first_dilation: 2,
                    fc_hidden: 256,
                    latent: nh,
                })
            }
            _ => Err(Error::invalid(format!(
                "no default architecture for snapshots of shape {spatial:?}"
            ))),
        }
    }

    pub fn latent(&self) -> usize {
        match self {
            Architecture::Conv { latent, .. } | Architecture::Dense { latent, .. } => *latent,
        }
    }

    /// Spatial extent of one snapshot.
    pub fn snapshot_shape(&self) -> Vec<usize> {
        match self {
            Architecture::Conv { input, .. } => vec![*input, *input],
            Architecture::Dense { input, .. } => vec![*input],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Architecture::Conv {
                input,
                conv_filters,
                kernel,
                first_dilation,
                fc_hidden,
                latent,
            } => {
                if conv_filters.is_empty() || *kernel == 0 || *fc_hidden == 0 || *latent == 0 {
                    return Err(Error::invalid("conv architecture has an empty stage"));
                }
                if !input.is_power_of_two() || input >> conv_filters.len() == 0 {
                    return Err(Error::invalid(format!(
                        "input {input} must be a power of two divisible by 2^{}",
                        conv_filters.len()
                    )));
                }
                if !matches!(first_dilation, 1 | 2) {
                    return Err(Error::invalid("first_dilation must be 1 or 2"));
                }
            }
            Architecture::Dense {
                input,
                hidden,
                latent,
            } => {
                if *input == 0 || *hidden == 0 || *latent == 0 {
                    return Err(Error::invalid("dense architecture has an empty layer"));
                }
            }
        }
        Ok(())
    }
}

fn glorot<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::random_uniform(shape, -bound, bound, rng)
}

fn dense_init<R: Rng + ?Sized>(inp: usize, out: usize, rng: &mut R) -> DenseLayer {
    DenseLayer {
        w: glorot(&[out, inp], inp, out, rng),
        b: Tensor::zeros(&[out]),
        activation: Activation::Sigmoid,
    }
}

/// Columns `[D x B]` from per-sample rows `[B, ...]`.
fn to_columns(x: &Tensor) -> Result<Tensor> {
    let b = x.shape()[0];
    x.clone().reshape(&[b, x.len() / b])?.transpose()
}

/// Per-sample rows `[B, shape...]` from columns `[D x B]`.
fn from_columns(cols: &Tensor, shape: &[usize]) -> Result<Tensor> {
    cols.transpose()?.reshape(shape)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CraeParams {
    pub arch: Architecture,
    pub conv_encoder: Vec<Conv2dLayer>,
    pub fc_encoder: Vec<DenseLayer>,
    pub fc_decoder: Vec<DenseLayer>,
    pub conv_decoder: Vec<ConvTranspose2dLayer>,
    pub lstm: LstmParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fc1dParams {
    pub arch: Architecture,
    pub encoder: Vec<DenseLayer>,
    pub decoder: Vec<DenseLayer>,
    pub lstm: LstmParams,
}

/// Encoder/decoder forward values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    conv: Vec<ConvCache>,
    dense: Vec<DenseCache>,
    feature_shape: Vec<usize>,
}

pub type DecoderCache = EncoderCache;

/// Shared interface of the recurrent autoencoders.
pub trait RecurrentAutoencoder: ParamTree {
    fn arch(&self) -> &Architecture;
    fn lstm(&self) -> &LstmParams;
    fn lstm_mut(&mut self) -> &mut LstmParams;

    /// `[B, spatial...]` -> `[Nh x B]`
    fn encode_cached(&self, x: &Tensor) -> Result<(Tensor, EncoderCache)>;
    /// Accumulates parameter gradients of the encoder into `grads`.
    fn encode_backward(&self, cache: &EncoderCache, grad_h: &Tensor, grads: &mut Self) -> Result<()>;
    /// `[Nh x B]` -> `[B, spatial...]`
    fn decode_cached(&self, h: &Tensor) -> Result<(Tensor, DecoderCache)>;
    /// Accumulates decoder gradients and returns the latent gradient.
    fn decode_backward(&self, cache: &DecoderCache, grad_x: &Tensor, grads: &mut Self) -> Result<Tensor>;

    fn latent_dim(&self) -> usize {
        self.arch().latent()
    }

    fn snapshot_shape(&self) -> Vec<usize> {
        self.arch().snapshot_shape()
    }

    fn encode(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.encode_cached(x)?.0)
    }

    fn decode(&self, h: &Tensor) -> Result<Tensor> {
        Ok(self.decode_cached(h)?.0)
    }

    fn check_snapshots(&self, x: &Tensor, op: &'static str) -> Result<usize> {
        let spatial = self.snapshot_shape();
        if x.ndim() != spatial.len() + 1 || x.shape()[1..] != spatial[..] {
            return Err(Error::shape(
                op,
                format!("expected [B, {spatial:?}], got {:?}", x.shape()),
            ));
        }
        Ok(x.shape()[0])
    }

    fn check_latent(&self, h: &Tensor, op: &'static str) -> Result<usize> {
        let (rows, b) = h.dims2(op)?;
        if rows != self.latent_dim() {
            return Err(Error::shape(
                op,
                format!("latent {:?}, Nh={}", h.shape(), self.latent_dim()),
            ));
        }
        h.ensure_finite("latent input")?;
        Ok(b)
    }
}

fn dense_chain(layers: &[DenseLayer], x: Tensor, caches: &mut Vec<DenseCache>) -> Result<Tensor> {
    layers.iter().try_fold(x, |x, l| {
        let (y, c) = l.forward_cached(&x)?;
        caches.push(c);
        Ok(y)
    })
}

fn dense_chain_backward(
    layers: &[DenseLayer],
    caches: &[DenseCache],
    grad: Tensor,
    grads: &mut [DenseLayer],
) -> Result<Tensor> {
    let mut g = grad;
    for ((l, c), acc) in layers.iter().zip(caches).zip(grads.iter_mut()).rev() {
        let (gi, gp) = l.backward(c, &g)?;
        acc.accumulate(&gp)?;
        g = gi;
    }
    Ok(g)
}

impl CraeParams {
    pub fn init(arch: &Architecture, cell_update: CellUpdate, seed: u64) -> Result<Self> {
        arch.validate()?;
        let Architecture::Conv {
            input,
            conv_filters,
            kernel,
            first_dilation,
            fc_hidden,
            latent,
        } = arch
        else {
            return Err(Error::invalid("CraeParams needs a conv architecture"));
        };
        let k = *kernel;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut conv_encoder = Vec::new();
        let mut cin = 1;
        for (i, &f) in conv_filters.iter().enumerate() {
            conv_encoder.push(Conv2dLayer::new(
                glorot(&[f, cin, k, k], cin * k * k, f * k * k, &mut rng),
                Tensor::zeros(&[f]),
                2,
                if i == 0 { *first_dilation } else { 1 },
                Activation::Sigmoid,
            )?);
            cin = f;
        }
        let side = input >> conv_filters.len();
        let flat = cin * side * side;
        let fc_encoder = vec![
            dense_init(flat, *fc_hidden, &mut rng),
            dense_init(*fc_hidden, *latent, &mut rng),
        ];
        let fc_decoder = vec![
            dense_init(*latent, *fc_hidden, &mut rng),
            dense_init(*fc_hidden, flat, &mut rng),
        ];
        let mut conv_decoder = Vec::new();
        let chain: Vec<usize> = conv_filters.iter().rev().copied().chain([1]).collect();
        for w in chain.windows(2) {
            let (ci, co) = (w[0], w[1]);
            conv_decoder.push(ConvTranspose2dLayer::new(
                glorot(&[ci, co, k, k], ci * k * k, co * k * k, &mut rng),
                Tensor::zeros(&[co]),
                2,
                1,
                Activation::Sigmoid,
            )?);
        }
        let lstm = LstmParams::init(*latent, cell_update, &mut rng);
        Ok(Self {
            arch: arch.clone(),
            conv_encoder,
            fc_encoder,
            fc_decoder,
            conv_decoder,
            lstm,
        })
    }

    /// Parameters of the autoencoder alone (LSTM excluded).
    pub fn autoencoder_param_count(&self) -> usize {
        self.param_count() - self.lstm.param_count()
    }

    fn feature_shape(&self, batch: usize) -> Vec<usize> {
        let Architecture::Conv {
            input, conv_filters, ..
        } = &self.arch
        else {
            unreachable!()
        };
        let side = input >> conv_filters.len();
        vec![batch, *conv_filters.last().unwrap(), side, side]
    }
}

impl ParamTree for CraeParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut v = prefixed("conv_encoder", self.conv_encoder.tensors());
        v.extend(prefixed("fc_encoder", self.fc_encoder.tensors()));
        v.extend(prefixed("fc_decoder", self.fc_decoder.tensors()));
        v.extend(prefixed("conv_decoder", self.conv_decoder.tensors()));
        v.extend(prefixed("lstm", self.lstm.tensors()));
        v
    }
    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.conv_encoder.tensors_mut();
        v.extend(self.fc_encoder.tensors_mut());
        v.extend(self.fc_decoder.tensors_mut());
        v.extend(self.conv_decoder.tensors_mut());
        v.extend(self.lstm.tensors_mut());
        v
    }
}

impl RecurrentAutoencoder for CraeParams {
    fn arch(&self) -> &Architecture {
        &self.arch
    }
    fn lstm(&self) -> &LstmParams {
        &self.lstm
    }
    fn lstm_mut(&mut self) -> &mut LstmParams {
        &mut self.lstm
    }

    fn encode_cached(&self, x: &Tensor) -> Result<(Tensor, EncoderCache)> {
        let batch = self.check_snapshots(x, "encode")?;
        let side = x.shape()[1];
        let mut y = x.clone().reshape(&[batch, 1, side, side])?;
        let mut conv = Vec::with_capacity(self.conv_encoder.len());
        for l in &self.conv_encoder {
            let (out, c) = l.forward_cached(&y)?;
            conv.push(c);
            y = out;
        }
        let feature_shape = y.shape().to_vec();
        let mut dense = Vec::with_capacity(2);
        let h = dense_chain(&self.fc_encoder, to_columns(&y)?, &mut dense)?;
        Ok((
            h,
            EncoderCache {
                conv,
                dense,
                feature_shape,
            },
        ))
    }

    fn encode_backward(&self, cache: &EncoderCache, grad_h: &Tensor, grads: &mut Self) -> Result<()> {
        let g = dense_chain_backward(&self.fc_encoder, &cache.dense, grad_h.clone(), &mut grads.fc_encoder)?;
        let mut g = from_columns(&g, &cache.feature_shape)?;
        for ((l, c), acc) in self
            .conv_encoder
            .iter()
            .zip(&cache.conv)
            .zip(grads.conv_encoder.iter_mut())
            .rev()
        {
            let (gi, gp) = l.backward(c, &g)?;
            acc.accumulate(&gp)?;
            g = gi;
        }
        Ok(())
    }

    fn decode_cached(&self, h: &Tensor) -> Result<(Tensor, DecoderCache)> {
        let batch = self.check_latent(h, "decode")?;
        let mut dense = Vec::with_capacity(2);
        let flat = dense_chain(&self.fc_decoder, h.clone(), &mut dense)?;
        let feature_shape = self.feature_shape(batch);
        let mut y = from_columns(&flat, &feature_shape)?;
        let mut conv = Vec::with_capacity(self.conv_decoder.len());
        for l in &self.conv_decoder {
            let (out, c) = l.forward_cached(&y)?;
            conv.push(c);
            y = out;
        }
        let side = y.shape()[2];
        Ok((
            y.reshape(&[batch, side, side])?,
            EncoderCache {
                conv,
                dense,
                feature_shape,
            },
        ))
    }

    fn decode_backward(&self, cache: &DecoderCache, grad_x: &Tensor, grads: &mut Self) -> Result<Tensor> {
        let s = grad_x.shape();
        let mut g = grad_x.clone().reshape(&[s[0], 1, s[1], s[2]])?;
        for ((l, c), acc) in self
            .conv_decoder
            .iter()
            .zip(&cache.conv)
            .zip(grads.conv_decoder.iter_mut())
            .rev()
        {
            let (gi, gp) = l.backward(c, &g)?;
            acc.accumulate(&gp)?;
            g = gi;
        }
        dense_chain_backward(&self.fc_decoder, &cache.dense, to_columns(&g)?, &mut grads.fc_decoder)
    }
}

impl Fc1dParams {
    pub fn init(arch: &Architecture, cell_update: CellUpdate, seed: u64) -> Result<Self> {
        arch.validate()?;
        let Architecture::Dense {
            input,
            hidden,
            latent,
        } = arch
        else {
            return Err(Error::invalid("Fc1dParams needs a dense architecture"));
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = vec![dense_init(*input, *hidden, &mut rng), dense_init(*hidden, *latent, &mut rng)];
        let decoder = vec![dense_init(*latent, *hidden, &mut rng), dense_init(*hidden, *input, &mut rng)];
        let lstm = LstmParams::init(*latent, cell_update, &mut rng);
        Ok(Self {
            arch: arch.clone(),
            encoder,
            decoder,
            lstm,
        })
    }
}

impl ParamTree for Fc1dParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut v = prefixed("encoder", self.encoder.tensors());
        v.extend(prefixed("decoder", self.decoder.tensors()));
        v.extend(prefixed("lstm", self.lstm.tensors()));
        v
    }
    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.encoder.tensors_mut();
        v.extend(self.decoder.tensors_mut());
        v.extend(self.lstm.tensors_mut());
        v
    }
}

impl RecurrentAutoencoder for Fc1dParams {
    fn arch(&self) -> &Architecture {
        &self.arch
    }
    fn lstm(&self) -> &LstmParams {
        &self.lstm
    }
    fn lstm_mut(&mut self) -> &mut LstmParams {
        &mut self.lstm
    }

    fn encode_cached(&self, x: &Tensor) -> Result<(Tensor, EncoderCache)> {
        self.check_snapshots(x, "encode")?;
        let mut dense = Vec::with_capacity(2);
        let h = dense_chain(&self.encoder, x.transpose()?, &mut dense)?;
        Ok((
            h,
            EncoderCache {
                conv: Vec::new(),
                dense,
                feature_shape: x.shape().to_vec(),
            },
        ))
    }

    fn encode_backward(&self, cache: &EncoderCache, grad_h: &Tensor, grads: &mut Self) -> Result<()> {
        dense_chain_backward(&self.encoder, &cache.dense, grad_h.clone(), &mut grads.encoder)?;
        Ok(())
    }

    fn decode_cached(&self, h: &Tensor) -> Result<(Tensor, DecoderCache)> {
        self.check_latent(h, "decode")?;
        let mut dense = Vec::with_capacity(2);
        let x = dense_chain(&self.decoder, h.clone(), &mut dense)?.transpose()?;
        Ok((
            x.clone(),
            EncoderCache {
                conv: Vec::new(),
                dense,
                feature_shape: x.shape().to_vec(),
            },
        ))
    }

    fn decode_backward(&self, cache: &DecoderCache, grad_x: &Tensor, grads: &mut Self) -> Result<Tensor> {
        dense_chain_backward(&self.decoder, &cache.dense, grad_x.transpose()?, &mut grads.decoder)
    }
}

/// Either model family, for callers that pick the architecture at run time.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Crae(CraeParams),
    Fc1d(Fc1dParams),
}

impl Model {
    /// Deterministic initialization for the given architecture and seed.
    pub fn init(arch: &Architecture, cell_update: CellUpdate, seed: u64) -> Result<Self> {
        Ok(match arch {
            Architecture::Conv { .. } => Model::Crae(CraeParams::init(arch, cell_update, seed)?),
            Architecture::Dense { .. } => Model::Fc1d(Fc1dParams::init(arch, cell_update, seed)?),
        })
    }
}

macro_rules! delegate {
    ($self:ident, $m:ident => $e:expr) => {
        match $self {
            Model::Crae($m) => $e,
            Model::Fc1d($m) => $e,
        }
    };
}

impl ParamTree for Model {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        delegate!(self, m => m.tensors())
    }
    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        delegate!(self, m => m.tensors_mut())
    }
}

impl RecurrentAutoencoder for Model {
    fn arch(&self) -> &Architecture {
        delegate!(self, m => m.arch())
    }
    fn lstm(&self) -> &LstmParams {
        delegate!(self, m => m.lstm())
    }
    fn lstm_mut(&mut self) -> &mut LstmParams {
        delegate!(self, m => m.lstm_mut())
    }
    fn encode_cached(&self, x: &Tensor) -> Result<(Tensor, EncoderCache)> {
        delegate!(self, m => m.encode_cached(x))
    }
    fn encode_backward(&self, cache: &EncoderCache, grad_h: &Tensor, grads: &mut Self) -> Result<()> {
        match (self, grads) {
            (Model::Crae(m), Model::Crae(g)) => m.encode_backward(cache, grad_h, g),
            (Model::Fc1d(m), Model::Fc1d(g)) => m.encode_backward(cache, grad_h, g),
            _ => Err(Error::invalid("gradient buffer of a different model family")),
        }
    }
    fn decode_cached(&self, h: &Tensor) -> Result<(Tensor, DecoderCache)> {
        delegate!(self, m => m.decode_cached(h))
    }
    fn decode_backward(&self, cache: &DecoderCache, grad_x: &Tensor, grads: &mut Self) -> Result<Tensor> {
        match (self, grads) {
            (Model::Crae(m), Model::Crae(g)) => m.decode_backward(cache, grad_x, g),
            (Model::Fc1d(m), Model::Fc1d(g)) => m.decode_backward(cache, grad_x, g),
            _ => Err(Error::invalid("gradient buffer of a different model family")),
        }
    }
}

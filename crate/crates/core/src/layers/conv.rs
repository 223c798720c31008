//! Strided, dilated 2-D convolution with "same" zero padding and its
//! transpose. Feature maps are laid out `[B, C, H, W]`.
//!
//! Output extents follow `ceil(N / stride)`. The total padding along an axis
//! is `max((out - 1) * stride + (k - 1) * dilation + 1 - N, 0)`, with the
//! smaller half placed before the data.

use crate::error::{Error, Result};
use crate::layers::Activation;
use crate::numerics::{gemm, Tensor};

/// Spatial bookkeeping for one convolution from `[c, h, w]` to `[_, ho, wo]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Geometry {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub dilation: usize,
    pub ho: usize,
    pub wo: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl Geometry {
    pub fn same(c: usize, h: usize, w: usize, kh: usize, kw: usize, stride: usize, dilation: usize) -> Self {
        let ho = h.div_ceil(stride);
        let wo = w.div_ceil(stride);
        let pad = |n: usize, out: usize, k: usize| ((out - 1) * stride + (k - 1) * dilation + 1).saturating_sub(n) / 2;
        Self {
            c,
            h,
            w,
            kh,
            kw,
            stride,
            dilation,
            ho,
            wo,
            pad_top: pad(h, ho, kh),
            pad_left: pad(w, wo, kw),
        }
    }

    fn patch_len(&self) -> usize {
        self.c * self.kh * self.kw
    }

    /// Input coordinate read by output `(oi, oj)` through tap `(p, q)`.
    #[inline]
    fn source(&self, oi: usize, oj: usize, p: usize, q: usize) -> Option<(usize, usize)> {
        let i = (oi * self.stride + p * self.dilation) as isize - self.pad_top as isize;
        let j = (oj * self.stride + q * self.dilation) as isize - self.pad_left as isize;
        if i >= 0 && j >= 0 && (i as usize) < self.h && (j as usize) < self.w {
            Some((i as usize, j as usize))
        } else {
            None
        }
    }

    /// `x: [c, h, w]` -> `cols: [c*kh*kw, ho*wo]`
    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let n_out = self.ho * self.wo;
        for ch in 0..self.c {
            for p in 0..self.kh {
                for q in 0..self.kw {
                    let row = ((ch * self.kh + p) * self.kw + q) * n_out;
                    for oi in 0..self.ho {
                        for oj in 0..self.wo {
                            cols[row + oi * self.wo + oj] = match self.source(oi, oj, p, q) {
                                Some((i, j)) => x[(ch * self.h + i) * self.w + j],
                                None => 0.0,
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of `im2col`: scatters-and-adds columns back into `x`.
    fn col2im(&self, cols: &[f64], x: &mut [f64]) {
        let n_out = self.ho * self.wo;
        for ch in 0..self.c {
            for p in 0..self.kh {
                for q in 0..self.kw {
                    let row = ((ch * self.kh + p) * self.kw + q) * n_out;
                    for oi in 0..self.ho {
                        for oj in 0..self.wo {
                            if let Some((i, j)) = self.source(oi, oj, p, q) {
                                x[(ch * self.h + i) * self.w + j] += cols[row + oi * self.wo + oj];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_hyper(stride: usize, dilation: usize) -> Result<()> {
    if !matches!(stride, 1 | 2) || !matches!(dilation, 1 | 2) {
        return Err(Error::invalid(format!(
            "unsupported stride {stride} / dilation {dilation} (each must be 1 or 2)"
        )));
    }
    Ok(())
}

fn dims4(x: &Tensor, op: &'static str) -> Result<[usize; 4]> {
    match *x.shape() {
        [b, c, h, w] => Ok([b, c, h, w]),
        _ => Err(Error::shape(op, format!("expected [B, C, H, W], got {:?}", x.shape()))),
    }
}

/// Filter bank `[F, Cin, kh, kw]` applied as a strided, dilated
/// cross-correlation with one bias per output map.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2dLayer {
    pub filters: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub dilation: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct ConvCache {
    input: Tensor,
    output: Tensor,
}

impl Conv2dLayer {
    pub fn new(filters: Tensor, bias: Tensor, stride: usize, dilation: usize, activation: Activation) -> Result<Self> {
        check_hyper(stride, dilation)?;
        let [f, _, _, _] = dims4(&filters, "Conv2dLayer::new")?;
        if bias.shape() != [f] {
            return Err(Error::shape("Conv2dLayer::new", format!("bias {:?} for {f} filters", bias.shape())));
        }
        Ok(Self {
            filters,
            bias,
            stride,
            dilation,
            activation,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.filters.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.filters.shape()[1]
    }

    fn geometry(&self, x: &Tensor) -> Result<(usize, Geometry)> {
        check_hyper(self.stride, self.dilation)?;
        let [b, c, h, w] = dims4(x, "conv2d_forward")?;
        if c != self.in_channels() {
            return Err(Error::shape(
                "conv2d_forward",
                format!("layer expects {} channels, input {:?}", self.in_channels(), x.shape()),
            ));
        }
        let k = self.filters.shape();
        Ok((b, Geometry::same(c, h, w, k[2], k[3], self.stride, self.dilation)))
    }

    pub fn output_shape(&self, input: &[usize]) -> [usize; 4] {
        [
            input[0],
            self.out_channels(),
            input[2].div_ceil(self.stride),
            input[3].div_ceil(self.stride),
        ]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &Tensor) -> Result<(Tensor, ConvCache)> {
        let (batch, g) = self.geometry(x)?;
        let f = self.out_channels();
        let n_out = g.ho * g.wo;
        let in_len = g.c * g.h * g.w;
        let mut out = vec![0.0; batch * f * n_out];
        let mut cols = vec![0.0; g.patch_len() * n_out];
        for (b, y) in out.chunks_mut(f * n_out).enumerate() {
            g.im2col(&x.data()[b * in_len..(b + 1) * in_len], &mut cols);
            for (row, &bias) in y.chunks_mut(n_out).zip(self.bias.data()) {
                row.fill(bias);
            }
            gemm(f, g.patch_len(), n_out, 1.0, self.filters.data(), false, &cols, false, 1.0, y);
        }
        self.activation.apply_slice(&mut out);
        let y = Tensor::new(vec![batch, f, g.ho, g.wo], out)?;
        Ok((
            y.clone(),
            ConvCache {
                input: x.clone(),
                output: y,
            },
        ))
    }

    pub fn backward(&self, cache: &ConvCache, grad_out: &Tensor) -> Result<(Tensor, Conv2dLayer)> {
        if grad_out.shape() != cache.output.shape() {
            return Err(Error::shape(
                "conv2d_backward",
                format!("upstream {:?} vs output {:?}", grad_out.shape(), cache.output.shape()),
            ));
        }
        let (batch, g) = self.geometry(&cache.input)?;
        let f = self.out_channels();
        let n_out = g.ho * g.wo;
        let in_len = g.c * g.h * g.w;
        let mut dz = grad_out.data().to_vec();
        self.activation.backprop_slice(cache.output.data(), &mut dz);

        let mut dk = vec![0.0; self.filters.len()];
        let mut db = vec![0.0; f];
        let mut dx = vec![0.0; cache.input.len()];
        let mut cols = vec![0.0; g.patch_len() * n_out];
        let mut dcols = vec![0.0; g.patch_len() * n_out];
        for b in 0..batch {
            let dzb = &dz[b * f * n_out..(b + 1) * f * n_out];
            for (acc, row) in db.iter_mut().zip(dzb.chunks(n_out)) {
                *acc += row.iter().sum::<f64>();
            }
            g.im2col(&cache.input.data()[b * in_len..(b + 1) * in_len], &mut cols);
            gemm(f, n_out, g.patch_len(), 1.0, dzb, false, &cols, true, 1.0, &mut dk);
            gemm(g.patch_len(), f, n_out, 1.0, self.filters.data(), true, dzb, false, 0.0, &mut dcols);
            g.col2im(&dcols, &mut dx[b * in_len..(b + 1) * in_len]);
        }
        Ok((
            Tensor::new(cache.input.shape().to_vec(), dx)?,
            Conv2dLayer {
                filters: Tensor::new(self.filters.shape().to_vec(), dk)?,
                bias: Tensor::new(vec![f], db)?,
                stride: self.stride,
                dilation: self.dilation,
                activation: self.activation,
            },
        ))
    }
}

/// Transpose convolution with filters `[Cin, F, kh, kw]`; maps
/// `[B, Cin, H, W]` to `[B, F, sH, sW]`. Its linear part is the adjoint of a
/// [`Conv2dLayer`] with the same filter tensor, stride and dilation.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose2dLayer {
    pub filters: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub dilation: usize,
    pub activation: Activation,
}

impl ConvTranspose2dLayer {
    pub fn new(filters: Tensor, bias: Tensor, stride: usize, dilation: usize, activation: Activation) -> Result<Self> {
        check_hyper(stride, dilation)?;
        let [_, f, _, _] = dims4(&filters, "ConvTranspose2dLayer::new")?;
        if bias.shape() != [f] {
            return Err(Error::shape(
                "ConvTranspose2dLayer::new",
                format!("bias {:?} for {f} output maps", bias.shape()),
            ));
        }
        Ok(Self {
            filters,
            bias,
            stride,
            dilation,
            activation,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.filters.shape()[0]
    }

    pub fn out_channels(&self) -> usize {
        self.filters.shape()[1]
    }

    pub fn output_shape(&self, input: &[usize]) -> [usize; 4] {
        [input[0], self.out_channels(), input[2] * self.stride, input[3] * self.stride]
    }

    /// Geometry of the adjoint convolution, i.e. the one reading the output.
    fn geometry(&self, x: &Tensor) -> Result<(usize, Geometry)> {
        check_hyper(self.stride, self.dilation)?;
        let [b, c, h, w] = dims4(x, "conv2d_transpose_forward")?;
        if c != self.in_channels() {
            return Err(Error::shape(
                "conv2d_transpose_forward",
                format!("layer expects {} channels, input {:?}", self.in_channels(), x.shape()),
            ));
        }
        let k = self.filters.shape();
        let g = Geometry::same(self.out_channels(), h * self.stride, w * self.stride, k[2], k[3], self.stride, self.dilation);
        debug_assert_eq!((g.ho, g.wo), (h, w));
        Ok((b, g))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &Tensor) -> Result<(Tensor, ConvCache)> {
        let (batch, g) = self.geometry(x)?;
        let cin = self.in_channels();
        let n_in = g.ho * g.wo;
        let out_len = g.c * g.h * g.w;
        let mut out = vec![0.0; batch * out_len];
        let mut cols = vec![0.0; g.patch_len() * n_in];
        for (b, y) in out.chunks_mut(out_len).enumerate() {
            let xb = &x.data()[b * cin * n_in..(b + 1) * cin * n_in];
            gemm(g.patch_len(), cin, n_in, 1.0, self.filters.data(), true, xb, false, 0.0, &mut cols);
            g.col2im(&cols, y);
            for (map, &bias) in y.chunks_mut(g.h * g.w).zip(self.bias.data()) {
                map.iter_mut().for_each(|v| *v += bias);
            }
        }
        self.activation.apply_slice(&mut out);
        let y = Tensor::new(vec![batch, g.c, g.h, g.w], out)?;
        Ok((
            y.clone(),
            ConvCache {
                input: x.clone(),
                output: y,
            },
        ))
    }

    pub fn backward(&self, cache: &ConvCache, grad_out: &Tensor) -> Result<(Tensor, ConvTranspose2dLayer)> {
        if grad_out.shape() != cache.output.shape() {
            return Err(Error::shape(
                "conv2d_transpose_backward",
                format!("upstream {:?} vs output {:?}", grad_out.shape(), cache.output.shape()),
            ));
        }
        let (batch, g) = self.geometry(&cache.input)?;
        let cin = self.in_channels();
        let n_in = g.ho * g.wo;
        let out_len = g.c * g.h * g.w;
        let mut dz = grad_out.data().to_vec();
        self.activation.backprop_slice(cache.output.data(), &mut dz);

        let mut dk = vec![0.0; self.filters.len()];
        let mut db = vec![0.0; g.c];
        let mut dx = vec![0.0; cache.input.len()];
        let mut dcols = vec![0.0; g.patch_len() * n_in];
        for b in 0..batch {
            let dzb = &dz[b * out_len..(b + 1) * out_len];
            for (acc, map) in db.iter_mut().zip(dzb.chunks(g.h * g.w)) {
                *acc += map.iter().sum::<f64>();
            }
            g.im2col(dzb, &mut dcols);
            let xb = &cache.input.data()[b * cin * n_in..(b + 1) * cin * n_in];
            gemm(cin, g.patch_len(), n_in, 1.0, self.filters.data(), false, &dcols, false, 0.0, &mut dx[b * cin * n_in..(b + 1) * cin * n_in]);
            gemm(cin, n_in, g.patch_len(), 1.0, xb, false, &dcols, true, 1.0, &mut dk);
        }
        Ok((
            Tensor::new(cache.input.shape().to_vec(), dx)?,
            ConvTranspose2dLayer {
                filters: Tensor::new(self.filters.shape().to_vec(), dk)?,
                bias: Tensor::new(vec![g.c], db)?,
                stride: self.stride,
                dilation: self.dilation,
                activation: self.activation,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_gradient, relative_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop evaluation of the zero-padded, strided, dilated
    /// cross-correlation (no activation).
    pub(crate) fn conv_oracle(x: &Tensor, k: &Tensor, bias: &Tensor, s: usize, d: usize) -> Tensor {
        let [nb, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
        let [f, _, kh, kw] = [k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]];
        let (ho, wo) = ((h + s - 1) / s, (w + s - 1) / s);
        let pt = (((ho - 1) * s + (kh - 1) * d + 1) as isize - h as isize).max(0) / 2;
        let pl = (((wo - 1) * s + (kw - 1) * d + 1) as isize - w as isize).max(0) / 2;
        let mut y = Tensor::zeros(&[nb, f, ho, wo]);
        for b in 0..nb {
            for fo in 0..f {
                for i in 0..ho {
                    for j in 0..wo {
                        let mut acc = bias.at(&[fo]);
                        for ci in 0..c {
                            for p in 0..kh {
                                for q in 0..kw {
                                    let ii = (i * s + p * d) as isize - pt;
                                    let jj = (j * s + q * d) as isize - pl;
                                    if ii >= 0 && jj >= 0 && (ii as usize) < h && (jj as usize) < w {
                                        acc += k.at(&[fo, ci, p, q]) * x.at(&[b, ci, ii as usize, jj as usize]);
                                    }
                                }
                            }
                        }
                        y.set(&[b, fo, i, j], acc);
                    }
                }
            }
        }
        y
    }

    fn random_conv(f: usize, c: usize, k: usize, s: usize, d: usize, act: Activation, rng: &mut ChaCha8Rng) -> Conv2dLayer {
        Conv2dLayer::new(
            Tensor::random_uniform(&[f, c, k, k], -1.0, 1.0, rng),
            Tensor::random_uniform(&[f], -1.0, 1.0, rng),
            s,
            d,
            act,
        )
        .unwrap()
    }

    #[test]
    fn unit_filter_is_identity() {
        let layer = Conv2dLayer::new(Tensor::full(&[1, 1, 1, 1], 1.0), Tensor::zeros(&[1]), 1, 1, Activation::Linear).unwrap();
        let x = Tensor::from_fn(&[2, 1, 4, 4], |i| i as f64);
        assert_eq!(layer.forward(&x).unwrap(), x);
    }

    #[test]
    fn matches_nested_loop_oracle_on_odd_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let layer = random_conv(3, 2, 5, 2, 2, Activation::Linear, &mut rng);
        let x = Tensor::random_uniform(&[2, 2, 9, 9], -1.0, 1.0, &mut rng);
        let y = layer.forward(&x).unwrap();
        let oracle = conv_oracle(&x, &layer.filters, &layer.bias, 2, 2);
        assert_eq!(y.shape(), &[2, 3, 5, 5]);
        for (a, b) in y.data().iter().zip(oracle.data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn encoder_shape_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut x = Tensor::random_uniform(&[1, 1, 64, 64], 0.0, 1.0, &mut rng);
        let mut c = 1;
        for (i, f) in [4, 8, 16, 32].into_iter().enumerate() {
            let layer = random_conv(f, c, 5, 2, if i == 0 { 2 } else { 1 }, Activation::Sigmoid, &mut rng);
            x = layer.forward(&x).unwrap();
            c = f;
        }
        assert_eq!(x.shape(), &[1, 32, 4, 4]);
        assert_eq!(x.len(), 512);
    }

    #[test]
    fn transpose_doubles_extent() {
        let layer = ConvTranspose2dLayer::new(Tensor::zeros(&[3, 2, 5, 5]), Tensor::zeros(&[2]), 2, 1, Activation::Linear).unwrap();
        let y = layer.forward(&Tensor::zeros(&[1, 3, 4, 4])).unwrap();
        assert_eq!(y.shape(), &[1, 2, 8, 8]);
    }

    #[test]
    fn transpose_zero_input_broadcasts_bias() {
        let bias = Tensor::from_vec(vec![-1.0, 0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let layer = ConvTranspose2dLayer::new(Tensor::random_uniform(&[3, 2, 5, 5], -1.0, 1.0, &mut rng), bias, 2, 1, Activation::Sigmoid).unwrap();
        let y = layer.forward(&Tensor::zeros(&[1, 3, 4, 4])).unwrap();
        for (c, b) in [(0, -1.0f64), (1, 0.5)] {
            let expect = 1.0 / (1.0 + (-b).exp());
            assert!(y.slab(0)[c * 64..(c + 1) * 64].iter().all(|&v| (v - expect).abs() < 1e-15));
        }
    }

    #[test]
    fn adjoint_identity_all_hyperparameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for s in [1, 2] {
            for d in [1, 2] {
                let k = Tensor::random_uniform(&[3, 2, 5, 5], -1.0, 1.0, &mut rng);
                let conv = Conv2dLayer::new(k.clone(), Tensor::zeros(&[3]), s, d, Activation::Linear).unwrap();
                let convt = ConvTranspose2dLayer::new(k, Tensor::zeros(&[2]), s, d, Activation::Linear).unwrap();
                let x = Tensor::random_uniform(&[2, 2, 8, 8], -1.0, 1.0, &mut rng);
                let y = Tensor::random_uniform(&[2, 3, 8 / s, 8 / s], -1.0, 1.0, &mut rng);
                let lhs = conv.forward(&x).unwrap().dot(&y).unwrap();
                let rhs = x.dot(&convt.forward(&y).unwrap()).unwrap();
                assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0), "s={s} d={d}: {lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn rejects_unsupported_stride() {
        assert!(Conv2dLayer::new(Tensor::zeros(&[1, 1, 3, 3]), Tensor::zeros(&[1]), 3, 1, Activation::Linear).is_err());
        let layer = Conv2dLayer::new(Tensor::zeros(&[1, 2, 3, 3]), Tensor::zeros(&[1]), 1, 1, Activation::Linear).unwrap();
        assert!(layer.forward(&Tensor::zeros(&[1, 1, 4, 4])).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let layer = random_conv(2, 1, 3, 2, 1, Activation::Sigmoid, &mut rng);
        let x = Tensor::random_uniform(&[1, 1, 4, 4], -1.0, 1.0, &mut rng);
        let (y, cache) = layer.forward_cached(&x).unwrap();
        let (dx, g) = layer.backward(&cache, &y.zeros_like()).unwrap();
        assert_eq!(dx.max_abs() + g.filters.max_abs() + g.bias.max_abs(), 0.0);
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        for s in [1, 2] {
            for d in [1, 2] {
                let layer = random_conv(2, 2, 3, s, d, Activation::Tanh, &mut rng);
                let x = Tensor::random_uniform(&[2, 2, 6, 6], -1.0, 1.0, &mut rng);
                let out_shape = layer.output_shape(x.shape());
                let probe = Tensor::random_uniform(&out_shape, -1.0, 1.0, &mut rng);
                let loss = |l: &Conv2dLayer, x: &Tensor| l.forward(x).unwrap().dot(&probe).unwrap();
                let (_, cache) = layer.forward_cached(&x).unwrap();
                let (dx, g) = layer.backward(&cache, &probe).unwrap();
                let fd_x = central_gradient(x.data(), 1e-6, |v| loss(&layer, &Tensor::new(x.shape().to_vec(), v.to_vec()).unwrap()));
                let fd_k = central_gradient(layer.filters.data(), 1e-6, |v| {
                    let mut l = layer.clone();
                    l.filters.data_mut().copy_from_slice(v);
                    loss(&l, &x)
                });
                let fd_b = central_gradient(layer.bias.data(), 1e-6, |v| {
                    let mut l = layer.clone();
                    l.bias.data_mut().copy_from_slice(v);
                    loss(&l, &x)
                });
                assert!(relative_error(dx.data(), &fd_x) <= 1e-5);
                assert!(relative_error(g.filters.data(), &fd_k) <= 1e-5);
                assert!(relative_error(g.bias.data(), &fd_b) <= 1e-5);
            }
        }
    }

    #[test]
    fn transpose_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        for s in [1, 2] {
            let layer = ConvTranspose2dLayer::new(
                Tensor::random_uniform(&[2, 3, 5, 5], -1.0, 1.0, &mut rng),
                Tensor::random_uniform(&[3], -1.0, 1.0, &mut rng),
                s,
                1,
                Activation::Sigmoid,
            )
            .unwrap();
            let x = Tensor::random_uniform(&[2, 2, 3, 3], -1.0, 1.0, &mut rng);
            let probe = Tensor::random_uniform(&layer.output_shape(x.shape()), -1.0, 1.0, &mut rng);
            let loss = |l: &ConvTranspose2dLayer, x: &Tensor| l.forward(x).unwrap().dot(&probe).unwrap();
            let (_, cache) = layer.forward_cached(&x).unwrap();
            let (dx, g) = layer.backward(&cache, &probe).unwrap();
            let fd_x = central_gradient(x.data(), 1e-6, |v| loss(&layer, &Tensor::new(x.shape().to_vec(), v.to_vec()).unwrap()));
            let fd_k = central_gradient(layer.filters.data(), 1e-6, |v| {
                let mut l = layer.clone();
                l.filters.data_mut().copy_from_slice(v);
                loss(&l, &x)
            });
            let fd_b = central_gradient(layer.bias.data(), 1e-6, |v| {
                let mut l = layer.clone();
                l.bias.data_mut().copy_from_slice(v);
                loss(&l, &x)
            });
            assert!(relative_error(dx.data(), &fd_x) <= 1e-5);
            assert!(relative_error(g.filters.data(), &fd_k) <= 1e-5);
            assert!(relative_error(g.bias.data(), &fd_b) <= 1e-5);
        }
    }
}

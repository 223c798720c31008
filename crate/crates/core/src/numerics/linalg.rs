use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Matrix product of two 2-D tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2("matmul")?;
    let (k2, n) = b.dims2("matmul")?;
    if k != k2 {
        return Err(Error::shape(
            "matmul",
            format!("{:?} x {:?}", a.shape(), b.shape()),
        ));
    }
    let mut c = vec![0.0; m * n];
    gemm(m, k, n, 1.0, a.data(), false, b.data(), false, 0.0, &mut c);
    Tensor::new(vec![m, n], c)
}

/// `c = alpha * op(a) * op(b) + beta * c` on row-major slices.
///
/// `op(a)` is `m x k`; when `a_t` is set the slice holds the `k x m` matrix
/// and is read transposed. Same for `b` (`k x n`). With `beta == 0` the
/// previous contents of `c` are ignored.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every index addressed by the
    // strides lies within the slices, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn loop_matmul(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let n = b.shape()[1];
        let mut c = Tensor::zeros(&[m, n]);
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.at(&[i, p]) * b.at(&[p, j]);
                }
                c.set(&[i, j], s);
            }
        }
        c
    }

    #[test]
    fn identity_times_a() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Tensor::random_uniform(&[3, 4], -1.0, 1.0, &mut rng);
        assert_eq!(matmul(&Tensor::identity(3), &a).unwrap(), a);
    }

    #[test]
    fn matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Tensor::random_uniform(&[4, 3], -1.0, 1.0, &mut rng);
        let b = Tensor::random_uniform(&[3, 2], -1.0, 1.0, &mut rng);
        let c = matmul(&a, &b).unwrap();
        let oracle = loop_matmul(&a, &b);
        for (x, y) in c.data().iter().zip(oracle.data()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn encoder_weight_times_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = Tensor::random_uniform(&[256, 512], -0.1, 0.1, &mut rng);
        let x = Tensor::random_uniform(&[512, 1], 0.0, 1.0, &mut rng);
        assert_eq!(matmul(&w, &x).unwrap().shape(), &[256, 1]);
    }

    #[test]
    fn inner_extent_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        assert!(matches!(matmul(&a, &a), Err(Error::Shape { .. })));
    }

    #[test]
    fn transposed_operands() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = Tensor::random_uniform(&[5, 3], -1.0, 1.0, &mut rng);
        let b = Tensor::random_uniform(&[4, 5], -1.0, 1.0, &mut rng);
        // a^T b^T = (b a)^T
        let mut c = vec![0.0; 12];
        gemm(3, 5, 4, 1.0, a.data(), true, b.data(), true, 0.0, &mut c);
        let oracle = loop_matmul(&b, &a).transpose().unwrap();
        for (x, y) in c.iter().zip(oracle.data()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    proptest::proptest! {
        #[test]
        fn associative_with_identity(seed in 0u64..1000, m in 1usize..8, k in 1usize..8, n in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = Tensor::random_uniform(&[m, k], -1.0, 1.0, &mut rng);
            let b = Tensor::random_uniform(&[k, n], -1.0, 1.0, &mut rng);
            let c = Tensor::random_uniform(&[n, 3], -1.0, 1.0, &mut rng);
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&matmul(&b, &Tensor::identity(n)).unwrap(), &c).unwrap()).unwrap();
            let scale = left.max_abs().max(1.0);
            for (x, y) in left.data().iter().zip(right.data()) {
                proptest::prop_assert!((x - y).abs() <= 1e-10 * scale);
            }
        }
    }
}

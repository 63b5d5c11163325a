use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// Floating-point element type: f32 for training, f64 for gradient tests.
pub trait Scalar:
    Copy
    + PartialOrd
    + std::fmt::Debug
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn abs(self) -> Self;
    fn max_s(self, other: Self) -> Self;
    fn mul_add(self, a: Self, b: Self) -> Self;
    fn is_finite(self) -> bool;
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            #[inline(always)]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline(always)]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline(always)]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            #[inline(always)]
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            #[inline(always)]
            fn abs(self) -> Self {
                <$t>::abs(self)
            }
            #[inline(always)]
            fn max_s(self, other: Self) -> Self {
                <$t>::max(self, other)
            }
            #[inline(always)]
            fn mul_add(self, a: Self, b: Self) -> Self {
                <$t>::mul_add(self, a, b)
            }
            #[inline(always)]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);

/// Dense tensor; shape is (B, C, L) for signals and (B, F) for embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    pub shape: Vec<usize>,
    pub data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![S::ZERO; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data size");
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Self {
        Tensor::from_vec(shape, data.iter().map(|&v| S::from_f64(v)).collect())
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64()).collect()
    }
}

/// C (m x n) += A (m x k) * B (k x n), all row-major. The axpy inner loop
/// keeps the C row in registers/L1 and streams B rows, which the compiler
/// vectorizes; operands are arranged by callers so this is the only GEMM
/// shape needed on hot paths.
pub(crate) fn gemm<S: Scalar>(m: usize, kd: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
    debug_assert_eq!(a.len(), m * kd);
    debug_assert_eq!(b.len(), kd * n);
    debug_assert_eq!(c.len(), m * n);
    // two C rows per pass halve the traffic on B
    let mut i = 0;
    while i + 1 < m {
        let (head, tail) = c.split_at_mut((i + 1) * n);
        let c0 = &mut head[i * n..];
        let c1 = &mut tail[..n];
        let a0 = &a[i * kd..(i + 1) * kd];
        let a1 = &a[(i + 1) * kd..(i + 2) * kd];
        for p in 0..kd {
            let b_row = &b[p * n..(p + 1) * n];
            let s0 = a0[p];
            let s1 = a1[p];
            for ((c0v, c1v), &bv) in c0.iter_mut().zip(c1.iter_mut()).zip(b_row) {
                *c0v = s0.mul_add(bv, *c0v);
                *c1v = s1.mul_add(bv, *c1v);
            }
        }
        i += 2;
    }
    if i < m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * kd..(i + 1) * kd];
        for (p, &ap) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv = ap.mul_add(bv, *cv);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gemm_naive(m: usize, kd: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
        for i in 0..m {
            for j in 0..n {
                for p in 0..kd {
                    c[i * n + j] += a[i * kd + p] * b[p * n + j];
                }
            }
        }
    }

    #[test]
    fn gemm_matches_naive_triple_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for &(m, kd, n) in &[(1, 1, 1), (2, 3, 4), (5, 7, 3), (8, 2, 9), (3, 16, 1)] {
            let a: Vec<f64> = (0..m * kd).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..kd * n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut c1 = vec![0.25; m * n];
            let mut c2 = c1.clone();
            gemm(m, kd, n, &a, &b, &mut c1);
            gemm_naive(m, kd, n, &a, &b, &mut c2);
            for (x, y) in c1.iter().zip(&c2) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tensor_shape_bookkeeping() {
        let t = Tensor::<f32>::zeros(&[2, 3, 4]);
        assert_eq!(t.numel(), 24);
        let u = Tensor::<f64>::from_f64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(u.to_f64_vec(), vec![1.0, 2.0, 3.0, 4.0]);
    }
}

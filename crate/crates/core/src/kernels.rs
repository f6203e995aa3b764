//! Scalar and dense numeric kernels shared by the tape and the loss code.

use crate::error::{Error, Result};

/// `log Σ exp(x_j)` with the max-shift trick.
pub fn lse(logits: &[f64]) -> Result<f64> {
    if logits.is_empty() {
        return Err(Error::domain("lse", "empty input"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "lse" });
    }
    Ok(lse_unchecked(logits))
}

pub(crate) fn lse_unchecked(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&v| libm::exp(v - max)).sum();
    max + libm::log(sum)
}

/// `log(1 + exp(x))` evaluated as `max(x, 0) + log1p(exp(-|x|))`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + libm::log1p(libm::exp(-libm::fabs(x)))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Writes `softmax(logits)` into `out`.
pub fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = libm::exp(l - max);
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Strided matrix view: element `(i, j)` lives at `data[i * row_stride + j * col_stride]`.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub row_stride: isize,
    pub col_stride: isize,
}

impl<'a> MatRef<'a> {
    pub fn row_major(data: &'a [f64], cols: usize) -> Self {
        MatRef {
            data,
            row_stride: cols as isize,
            col_stride: 1,
        }
    }

    /// The transpose of a row-major `rows × cols` matrix.
    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        MatRef {
            data,
            row_stride: 1,
            col_stride: cols as isize,
        }
    }

    fn max_offset(&self, rows: usize, cols: usize) -> usize {
        (rows.saturating_sub(1) as isize * self.row_stride
            + cols.saturating_sub(1) as isize * self.col_stride) as usize
    }
}

/// `out (m×n, row-major) = beta·out + a (m×k) · b (k×n)`.
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: MatRef<'_>,
    b: MatRef<'_>,
    beta: f64,
    out: &mut [f64],
) {
    assert!(a.max_offset(m, k) < a.data.len().max(1));
    assert!(b.max_offset(k, n) < b.data.len().max(1));
    assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for o in out.iter_mut() {
            *o *= beta;
        }
        return;
    }
    // SAFETY: the asserts above bound every offset the kernel touches for the
    // given dimensions and strides; `out` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn lse_all_zero_logits() {
        let v = lse(&[0.0; 10]).unwrap();
        assert!((v - libm::log(10.0)).abs() < 1e-12);
    }

    #[test]
    fn lse_single_logit_is_identity() {
        for x in [-40.0, -1.5, 0.0, 3.25, 700.0] {
            assert_eq!(lse(&[x]).unwrap(), x);
        }
    }

    #[test]
    fn lse_rejects_empty() {
        assert!(matches!(lse(&[]), Err(Error::Domain { .. })));
    }

    #[test]
    fn lse_is_stable_for_large_logits() {
        let v = lse(&[1000.0, 1000.0]).unwrap();
        assert!((v - (1000.0 + libm::log(2.0))).abs() < 1e-12);
    }

    #[test]
    fn softplus_examples() {
        assert!((softplus(0.0) - libm::log(2.0)).abs() < 1e-15);
        assert!((softplus(libm::log(10.0)) - libm::log(11.0)).abs() < 1e-12);
        assert!((softplus(100.0) - 100.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0);
    }

    #[test]
    fn sigmoid_is_symmetric() {
        for x in [-30.0, -2.0, 0.0, 0.5, 30.0] {
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn gemm_matches_naive_product() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2×3
        let b = [1.0, 0.0, 1.0]; // 3×1
        let mut out = vec![0.0; 2];
        gemm(
            2,
            3,
            1,
            MatRef::row_major(&a, 3),
            MatRef::row_major(&b, 1),
            0.0,
            &mut out,
        );
        assert_eq!(out, vec![4.0, 10.0]);

        // a · aᵀ through a transposed view
        let mut g = vec![0.0; 4];
        gemm(
            2,
            3,
            2,
            MatRef::row_major(&a, 3),
            MatRef::transposed(&a, 3),
            0.0,
            &mut g,
        );
        assert_eq!(g, vec![14.0, 32.0, 32.0, 77.0]);
    }
}

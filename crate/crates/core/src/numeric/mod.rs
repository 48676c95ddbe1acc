//! Array, random-number and small dense linear-algebra primitives.
//!
//! Everything is `f64` and row-major. Broadcasting is limited to the two
//! cases the rest of the crate needs: tensor-by-scalar and one factor per
//! batch row ([`Tensor::scale_rows`]).

mod linalg;
mod rng;
mod tensor;

pub use linalg::{cholesky_solve, covariance, mean_std, Cholesky, PIVOT_FLOOR};
pub use rng::{gaussian, mix_seed, Rng};
pub use tensor::Tensor;

/// `c ← alpha·a·b + beta·c` over strided row-major slices.
///
/// Strides are `(row_stride, col_stride)`, so transposes are free.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k > 0 {
        let max_a = (m - 1) * a_strides.0 + (k - 1) * a_strides.1;
        let max_b = (k - 1) * b_strides.0 + (n - 1) * b_strides.1;
        assert!(max_a < a.len() && max_b < b.len());
    }
    // SAFETY: bounds on all three operands were checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

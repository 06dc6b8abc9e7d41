//! Raw loops shared by forward and backward passes.

use crate::scalar::Scalar;

/// `out[m×n] += op(a) · op(b)` where `op` optionally transposes.
///
/// `a` is stored as `m×k` (or `k×m` when `ta`), `b` as `k×n` (or `n×k`
/// when `tb`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_acc<T: Scalar>(
    a: &[T],
    b: &[T],
    out: &mut [T],
    m: usize,
    k: usize,
    n: usize,
    ta: bool,
    tb: bool,
) {
    // Only the row-axpy forms vectorize under strict floating-point
    // ordering, so a transposed `b` is materialized first.
    let bt;
    let b = if tb {
        bt = transpose2(b, n, k);
        &bt[..]
    } else {
        b
    };
    if ta {
        for p in 0..k {
            let arow = &a[p * m..(p + 1) * m];
            let brow = &b[p * n..(p + 1) * n];
            for (i, &av) in arow.iter().enumerate() {
                axpy(&mut out[i * n..(i + 1) * n], av, brow);
            }
        }
    } else {
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                axpy(row, a[i * k + p], &b[p * n..(p + 1) * n]);
            }
        }
    }
}

#[inline]
fn axpy<T: Scalar>(out: &mut [T], a: T, x: &[T]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o = *o + a * v;
    }
}

/// Splits a shape around `axis` into `(outer, len, inner)` so element
/// `(o, i, j)` lives at `o * len * inner + i * inner + j`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn transpose2<T: Scalar>(src: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); src.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = src[i * cols + j];
        }
    }
    out
}

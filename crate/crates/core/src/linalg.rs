//! Dense kernels on contiguous slices.

use crate::Scalar;

/// Dot product with eight independent accumulators so the loop vectorizes.
/// The summation order is fixed, so results are deterministic.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Scalar>(y: &mut [T], alpha: T, x: &[T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `y = W x + b` with `W` row-major `out x inp`.
#[inline]
pub fn affine<T: Scalar>(y: &mut [T], w: &[T], b: &[T], x: &[T]) {
    let inp = x.len();
    for (o, yo) in y.iter_mut().enumerate() {
        *yo = b[o] + dot(&w[o * inp..(o + 1) * inp], x);
    }
}

/// Backward of [`affine`]: accumulates `dW += dy x^T`, `db += dy`, and
/// `dx += W^T dy` (when `dx` is given).
#[inline]
pub fn affine_backward<T: Scalar>(
    dy: &[T],
    w: &[T],
    x: &[T],
    dw: &mut [T],
    db: &mut [T],
    dx: Option<&mut [T]>,
) {
    let inp = x.len();
    for (o, &g) in dy.iter().enumerate() {
        if g == T::zero() {
            continue;
        }
        db[o] += g;
        axpy(&mut dw[o * inp..(o + 1) * inp], g, x);
    }
    if let Some(dx) = dx {
        for (o, &g) in dy.iter().enumerate() {
            if g != T::zero() {
                axpy(dx, g, &w[o * inp..(o + 1) * inp]);
            }
        }
    }
}

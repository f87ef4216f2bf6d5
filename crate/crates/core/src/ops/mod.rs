//! Differentiable operations on [`Var`](crate::tape::Var).
//!
//! Each submodule adds inherent methods to `Var`. Heavy kernels (convolution,
//! normalisation, neighbourhood attention, the selective scan) are fused into
//! single tape records with hand-written adjoints.

mod conv;
mod elementwise;
mod matmul;
mod neighborhood;
mod norm;
mod pool;
mod reduce;
mod scan;
mod shape;
mod softmax;

use crate::tensor::Element;

/// Dot product with eight independent accumulators so the compiler can
/// vectorise the loop; the summation order is fixed, so results stay
/// deterministic.
#[inline]
pub(crate) fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 8];
    let (ac, bc) = (a.chunks_exact(8), b.chunks_exact(8));
    let (at, bt) = (ac.remainder(), bc.remainder());
    for (x, y) in ac.zip(bc) {
        for l in 0..8 {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in at.iter().zip(bt) {
        tail = tail + x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Sum with the same accumulation pattern as [`dot`].
#[inline]
pub(crate) fn sum<T: Element>(a: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ac = a.chunks_exact(8);
    let at = ac.remainder();
    for x in ac {
        for l in 0..8 {
            acc[l] = acc[l] + x[l];
        }
    }
    let tail = at.iter().fold(T::zero(), |s, &v| s + v);
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

pub use conv::{conv2d_out_extent, conv_transpose2d_out_extent};
pub use neighborhood::neighborhood_mask;
pub use scan::ScanInputs;

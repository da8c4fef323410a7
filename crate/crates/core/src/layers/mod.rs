//! Network layers with explicit forward and backward passes.
//!
//! Convolutional layers operate on channel-last `[N, T, H, W, C]` tensors; a
//! rank-4 `[T, H, W, C]` tensor is treated as a batch of one.

mod activation;
mod batchnorm;
mod conv;
mod gru;
mod linear;
mod pool;

pub use activation::{relu, relu_backward, Dropout};
pub use batchnorm::{default_batchnorm, BatchNorm, BatchNormCache, BatchNormGrads, BatchStats};
pub use conv::{conv_out_extent, Conv3d, Conv3dGrads};
pub use gru::{BiGru, BiGruCache, BiGruGrads, GruCell, GruGrads, GruTrace};
pub use linear::{softmax, softmax_backward, Linear, LinearGrads};
pub use pool::{MaxPool3d, ZeroPad3d};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `[N, T, H, W, C]` for a rank-4 or rank-5 shape.
pub(crate) fn batched_dims(shape: &[usize]) -> Result<[usize; 5]> {
    match shape {
        [t, h, w, c] => Ok([1, *t, *h, *w, *c]),
        [n, t, h, w, c] => Ok([*n, *t, *h, *w, *c]),
        _ => Err(Error::Shape(format!("expected [T,H,W,C] or [N,T,H,W,C], got {shape:?}"))),
    }
}

/// `out += M x` for row-major `M` of `rows x cols`.
#[inline]
pub(crate) fn mat_vec_acc<S: Scalar>(m: &[S], rows: usize, cols: usize, x: &[S], out: &mut [S]) {
    for (i, o) in out.iter_mut().enumerate().take(rows) {
        let row = &m[i * cols..(i + 1) * cols];
        let mut acc = S::zero();
        for (&a, &b) in row.iter().zip(x) {
            acc += a * b;
        }
        *o += acc;
    }
}

/// `out += M^T y` for row-major `M` of `rows x cols`.
#[inline]
pub(crate) fn mat_t_vec_acc<S: Scalar>(m: &[S], rows: usize, cols: usize, y: &[S], out: &mut [S]) {
    for (i, &yi) in y.iter().enumerate().take(rows) {
        if yi == S::zero() {
            continue;
        }
        let row = &m[i * cols..(i + 1) * cols];
        for (o, &a) in out.iter_mut().zip(row) {
            *o += a * yi;
        }
    }
}

/// `out += a b^T`.
#[inline]
pub(crate) fn outer_acc<S: Scalar>(a: &[S], b: &[S], out: &mut [S]) {
    let cols = b.len();
    for (i, &ai) in a.iter().enumerate() {
        if ai == S::zero() {
            continue;
        }
        for (o, &bj) in out[i * cols..(i + 1) * cols].iter_mut().zip(b) {
            *o += ai * bj;
        }
    }
}

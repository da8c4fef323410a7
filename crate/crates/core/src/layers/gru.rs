//! Gated recurrent units.
//!
//! Gate convention (shared by the implementation and the gradient tests):
//!
//! ```text
//! z  = sigmoid(Wz x + Uz h + bz)          update gate
//! r  = sigmoid(Wr x + Ur h + br)          reset gate
//! h~ = tanh(Wh x + Uh (r * h) + bh)       candidate
//! h' = (1 - z) * h + z * h~
//! ```
//!
//! The reset gate is applied to the previous state before the recurrent
//! matrix. `W` is `[3H, F]`, `U` is `[3H, H]` and `b` is `[3H]`, each stacked
//! in (z, r, h) order.

use rayon::prelude::*;

use super::{mat_t_vec_acc, mat_vec_acc, outer_acc};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GruCell<S> {
    pub w: Tensor<S>,
    pub u: Tensor<S>,
    pub b: Tensor<S>,
}

#[derive(Clone, Debug)]
pub struct GruGrads<S> {
    pub w: Tensor<S>,
    pub u: Tensor<S>,
    pub b: Tensor<S>,
}

impl<S: Scalar> GruGrads<S> {
    fn zeros_like(cell: &GruCell<S>) -> Self {
        GruGrads {
            w: Tensor::zeros(cell.w.shape()),
            u: Tensor::zeros(cell.u.shape()),
            b: Tensor::zeros(cell.b.shape()),
        }
    }

    fn add(&mut self, other: &Self) {
        self.w.add_assign(&other.w).expect("same shape");
        self.u.add_assign(&other.u).expect("same shape");
        self.b.add_assign(&other.b).expect("same shape");
    }
}

/// Per-sequence activations kept for backpropagation through time.
#[derive(Clone, Debug)]
pub struct GruTrace<S> {
    /// `T + 1` states, starting with the initial state.
    states: Vec<S>,
    z: Vec<S>,
    r: Vec<S>,
    cand: Vec<S>,
}

#[inline]
fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

impl<S: Scalar> GruCell<S> {
    pub fn new(w: Tensor<S>, u: Tensor<S>, b: Tensor<S>) -> Result<Self> {
        let h = b.len() / 3;
        if b.rank() != 1 || b.len() != 3 * h || h == 0 {
            return Err(Error::Shape(format!("gru bias must be [3H], got {:?}", b.shape())));
        }
        if u.shape() != [3 * h, h] {
            return Err(Error::Shape(format!("gru U must be [{}, {}], got {:?}", 3 * h, h, u.shape())));
        }
        if w.rank() != 2 || w.shape()[0] != 3 * h {
            return Err(Error::Shape(format!("gru W must be [{}, F], got {:?}", 3 * h, w.shape())));
        }
        Ok(GruCell { w, u, b })
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        GruCell {
            w: Tensor::zeros(&[3 * hidden, input]),
            u: Tensor::zeros(&[3 * hidden, hidden]),
            b: Tensor::zeros(&[3 * hidden]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.b.len() / 3
    }

    pub fn input_size(&self) -> usize {
        self.w.shape()[1]
    }

    /// One recurrence step. Fills the gate buffers when given.
    fn step_into(&self, x: &[S], h_prev: &[S], z: &mut [S], r: &mut [S], cand: &mut [S], h_next: &mut [S]) {
        let hd = self.hidden();
        let f = self.input_size();
        let (w, u, b) = (self.w.data(), self.u.data(), self.b.data());
        let mut pre = b.to_vec();
        mat_vec_acc(&w[..2 * hd * f], 2 * hd, f, x, &mut pre[..2 * hd]);
        mat_vec_acc(&u[..2 * hd * hd], 2 * hd, hd, h_prev, &mut pre[..2 * hd]);
        mat_vec_acc(&w[2 * hd * f..], hd, f, x, &mut pre[2 * hd..]);
        for j in 0..hd {
            z[j] = sigmoid(pre[j]);
            r[j] = sigmoid(pre[hd + j]);
        }
        let rh: Vec<S> = (0..hd).map(|j| r[j] * h_prev[j]).collect();
        mat_vec_acc(&u[2 * hd * hd..], hd, hd, &rh, &mut pre[2 * hd..]);
        for j in 0..hd {
            cand[j] = pre[2 * hd + j].tanh();
            h_next[j] = (S::one() - z[j]) * h_prev[j] + z[j] * cand[j];
        }
    }

    pub fn step(&self, x: &Tensor<S>, h_prev: &Tensor<S>) -> Result<Tensor<S>> {
        let hd = self.hidden();
        if x.len() != self.input_size() || h_prev.len() != hd {
            return Err(Error::Shape(format!(
                "gru step expects x[{}] and h[{}], got {:?} and {:?}",
                self.input_size(),
                hd,
                x.shape(),
                h_prev.shape()
            )));
        }
        let (mut z, mut r, mut c, mut h) = (vec![S::zero(); hd], vec![S::zero(); hd], vec![S::zero(); hd], vec![S::zero(); hd]);
        self.step_into(x.data(), h_prev.data(), &mut z, &mut r, &mut c, &mut h);
        Ok(Tensor::from_parts(vec![hd], h))
    }

    /// Runs the cell over `xs` (`T` rows of width F), optionally in reverse
    /// time order. The trace is stored in processing order.
    pub fn run(&self, xs: &[S], steps: usize, reverse: bool) -> GruTrace<S> {
        let (hd, f) = (self.hidden(), self.input_size());
        let mut tr = GruTrace {
            states: vec![S::zero(); (steps + 1) * hd],
            z: vec![S::zero(); steps * hd],
            r: vec![S::zero(); steps * hd],
            cand: vec![S::zero(); steps * hd],
        };
        for k in 0..steps {
            let t = if reverse { steps - 1 - k } else { k };
            let (prev, next) = tr.states.split_at_mut((k + 1) * hd);
            self.step_into(
                &xs[t * f..(t + 1) * f],
                &prev[k * hd..],
                &mut tr.z[k * hd..(k + 1) * hd],
                &mut tr.r[k * hd..(k + 1) * hd],
                &mut tr.cand[k * hd..(k + 1) * hd],
                &mut next[..hd],
            );
        }
        tr
    }

    /// Backpropagation through time. `grad_h` holds dL/dh for each timestep
    /// in original time order; returns dL/dx rows (original order) and the
    /// parameter gradients.
    pub fn backward_run(&self, xs: &[S], trace: &GruTrace<S>, grad_h: &[S], steps: usize, reverse: bool) -> (Vec<S>, GruGrads<S>) {
        let (hd, f) = (self.hidden(), self.input_size());
        let (w, u) = (self.w.data(), self.u.data());
        let mut grads = GruGrads::zeros_like(self);
        let mut gx = vec![S::zero(); steps * f];
        let mut carry = vec![S::zero(); hd];
        let mut da = vec![S::zero(); 3 * hd];
        for k in (0..steps).rev() {
            let t = if reverse { steps - 1 - k } else { k };
            let h_prev = &trace.states[k * hd..(k + 1) * hd];
            let z = &trace.z[k * hd..(k + 1) * hd];
            let r = &trace.r[k * hd..(k + 1) * hd];
            let c = &trace.cand[k * hd..(k + 1) * hd];
            let x = &xs[t * f..(t + 1) * f];
            let dh: Vec<S> = (0..hd).map(|j| carry[j] + grad_h[t * hd + j]).collect();
            let mut dh_prev: Vec<S> = (0..hd).map(|j| dh[j] * (S::one() - z[j])).collect();
            for j in 0..hd {
                let dz = dh[j] * (c[j] - h_prev[j]);
                let dc = dh[j] * z[j];
                da[j] = dz * z[j] * (S::one() - z[j]);
                da[2 * hd + j] = dc * (S::one() - c[j] * c[j]);
            }
            // Candidate path through r * h.
            let mut d_rh = vec![S::zero(); hd];
            mat_t_vec_acc(&u[2 * hd * hd..], hd, hd, &da[2 * hd..], &mut d_rh);
            let rh: Vec<S> = (0..hd).map(|j| r[j] * h_prev[j]).collect();
            for j in 0..hd {
                let dr = d_rh[j] * h_prev[j];
                dh_prev[j] += d_rh[j] * r[j];
                da[hd + j] = dr * r[j] * (S::one() - r[j]);
            }
            // Parameter gradients.
            outer_acc(&da, x, grads.w.data_mut());
            outer_acc(&da[..2 * hd], h_prev, &mut grads.u.data_mut()[..2 * hd * hd]);
            outer_acc(&da[2 * hd..], &rh, &mut grads.u.data_mut()[2 * hd * hd..]);
            for (g, &d) in grads.b.data_mut().iter_mut().zip(&da) {
                *g += d;
            }
            mat_t_vec_acc(w, 3 * hd, f, &da, &mut gx[t * f..(t + 1) * f]);
            mat_t_vec_acc(&u[..2 * hd * hd], 2 * hd, hd, &da[..2 * hd], &mut dh_prev);
            carry = dh_prev;
        }
        (gx, grads)
    }
}

/// Bidirectional GRU: per timestep output is `[h_fwd_t ; h_bwd_t]`.
///
/// Input `[N, T, ...]` is flattened to `[N, T, F]`, so the layer can sit
/// directly after a `[N, T, H, W, C]` convolution stack.
#[derive(Clone, Debug, PartialEq)]
pub struct BiGru<S> {
    pub fwd: GruCell<S>,
    pub bwd: GruCell<S>,
}

#[derive(Clone, Debug)]
pub struct BiGruCache<S> {
    input_shape: Vec<usize>,
    traces: Vec<(GruTrace<S>, GruTrace<S>)>,
}

#[derive(Clone, Debug)]
pub struct BiGruGrads<S> {
    pub input: Tensor<S>,
    pub fwd: GruGrads<S>,
    pub bwd: GruGrads<S>,
}

impl<S: Scalar> BiGru<S> {
    pub fn new(fwd: GruCell<S>, bwd: GruCell<S>) -> Result<Self> {
        if fwd.input_size() != bwd.input_size() || fwd.hidden() != bwd.hidden() {
            return Err(Error::Shape("bi-gru directions must have equal sizes".into()));
        }
        Ok(BiGru { fwd, bwd })
    }

    /// Returns `(N, T, F)` for an input shape, treating rank-2 as `N = 1`.
    fn dims(&self, input: &[usize]) -> Result<(usize, usize, usize)> {
        let (n, t, f) = match input.len() {
            0 | 1 => return Err(Error::Shape(format!("bi-gru expects [T, F] or [N, T, ...], got {input:?}"))),
            2 => (1, input[0], input[1]),
            _ => (input[0], input[1], input[2..].iter().product()),
        };
        if f != self.fwd.input_size() {
            return Err(Error::Shape(format!(
                "bi-gru expects {} features per step, input {:?} has {}",
                self.fwd.input_size(),
                input,
                f
            )));
        }
        Ok((n, t, f))
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let (n, t, _) = self.dims(input)?;
        let out = 2 * self.fwd.hidden();
        Ok(if input.len() == 2 { vec![t, out] } else { vec![n, t, out] })
    }

    pub fn forward(&self, input: &Tensor<S>) -> Result<(Tensor<S>, BiGruCache<S>)> {
        let out_shape = self.output_shape(input.shape())?;
        let (n, t, f) = self.dims(input.shape())?;
        let hd = self.fwd.hidden();
        let x = input.data();
        let traces: Vec<(GruTrace<S>, GruTrace<S>)> = (0..n)
            .into_par_iter()
            .map(|s| {
                let xs = &x[s * t * f..(s + 1) * t * f];
                (self.fwd.run(xs, t, false), self.bwd.run(xs, t, true))
            })
            .collect();
        let mut out = Vec::with_capacity(n * t * 2 * hd);
        for (tf, tb) in &traces {
            for step in 0..t {
                out.extend_from_slice(&tf.states[(step + 1) * hd..(step + 2) * hd]);
                // Backward direction processed time t at position T-1-t.
                let k = t - 1 - step;
                out.extend_from_slice(&tb.states[(k + 1) * hd..(k + 2) * hd]);
            }
        }
        Ok((
            Tensor::from_parts(out_shape, out),
            BiGruCache {
                input_shape: input.shape().to_vec(),
                traces,
            },
        ))
    }

    pub fn backward(&self, input: &Tensor<S>, cache: &BiGruCache<S>, grad_out: &Tensor<S>) -> Result<BiGruGrads<S>> {
        if cache.input_shape != input.shape() {
            return Err(Error::MissingCache("bi-gru cache was built for a different input".into()));
        }
        let (n, t, f) = self.dims(input.shape())?;
        let hd = self.fwd.hidden();
        if grad_out.len() != n * t * 2 * hd {
            return Err(Error::Shape(format!("bi-gru grad_out {:?} does not match output", grad_out.shape())));
        }
        let x = input.data();
        let g = grad_out.data();
        let per_sample: Vec<(Vec<S>, GruGrads<S>, GruGrads<S>)> = (0..n)
            .into_par_iter()
            .map(|s| {
                let xs = &x[s * t * f..(s + 1) * t * f];
                let gs = &g[s * t * 2 * hd..(s + 1) * t * 2 * hd];
                let mut gf = Vec::with_capacity(t * hd);
                let mut gb = Vec::with_capacity(t * hd);
                for step in 0..t {
                    gf.extend_from_slice(&gs[step * 2 * hd..step * 2 * hd + hd]);
                    gb.extend_from_slice(&gs[step * 2 * hd + hd..(step + 1) * 2 * hd]);
                }
                let (tf, tb) = &cache.traces[s];
                let (mut gx, grads_f) = self.fwd.backward_run(xs, tf, &gf, t, false);
                let (gx_b, grads_b) = self.bwd.backward_run(xs, tb, &gb, t, true);
                for (a, b) in gx.iter_mut().zip(gx_b) {
                    *a += b;
                }
                (gx, grads_f, grads_b)
            })
            .collect();
        let mut gin = Vec::with_capacity(input.len());
        let mut fwd = GruGrads::zeros_like(&self.fwd);
        let mut bwd = GruGrads::zeros_like(&self.bwd);
        for (gx, a, b) in per_sample {
            gin.extend_from_slice(&gx);
            fwd.add(&a);
            bwd.add(&b);
        }
        Ok(BiGruGrads {
            input: Tensor::from_parts(input.shape().to_vec(), gin),
            fwd,
            bwd,
        })
    }
}

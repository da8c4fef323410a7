use super::batched_dims;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Non-overlapping max pooling; the stride equals the window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaxPool3d {
    pub window: [usize; 3],
}

impl Default for MaxPool3d {
    fn default() -> Self {
        MaxPool3d { window: [1, 2, 2] }
    }
}

impl MaxPool3d {
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let r = input.len();
        if r < 4 {
            return Err(Error::Shape(format!("maxpool3d expects [T,H,W,C] input, got {input:?}")));
        }
        let mut out = input.to_vec();
        for a in 0..3 {
            let (e, k) = (input[r - 4 + a], self.window[a]);
            if k == 0 || e % k != 0 {
                return Err(Error::Shape(format!(
                    "maxpool3d window {:?} does not divide input {:?}",
                    self.window, input
                )));
            }
            out[r - 4 + a] = e / k;
        }
        Ok(out)
    }

    /// Returns the pooled tensor and, per output element, the flat input
    /// index of the maximum (first in row-major scan order on ties).
    pub fn forward<S: Scalar>(&self, input: &Tensor<S>) -> Result<(Tensor<S>, Vec<usize>)> {
        let out_shape = self.output_shape(input.shape())?;
        let [n, t, h, w, c] = batched_dims(input.shape())?;
        let [kt, kh, kw] = self.window;
        let (to, ho, wo) = (t / kt, h / kh, w / kw);
        let x = input.data();
        let mut out = Vec::with_capacity(n * to * ho * wo * c);
        let mut arg = Vec::with_capacity(out.capacity());
        for s in 0..n {
            for a in 0..to {
                for b in 0..ho {
                    for d in 0..wo {
                        for ch in 0..c {
                            let mut best = S::neg_infinity();
                            let mut best_i = usize::MAX;
                            for i in 0..kt {
                                for j in 0..kh {
                                    for k in 0..kw {
                                        let idx = ((((s * t) + a * kt + i) * h + b * kh + j) * w + d * kw + k) * c + ch;
                                        if best_i == usize::MAX || x[idx] > best {
                                            best = x[idx];
                                            best_i = idx;
                                        }
                                    }
                                }
                            }
                            out.push(best);
                            arg.push(best_i);
                        }
                    }
                }
            }
        }
        Ok((Tensor::from_parts(out_shape, out), arg))
    }

    pub fn backward<S: Scalar>(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor<S>) -> Result<Tensor<S>> {
        if argmax.len() != grad_out.len() {
            return Err(Error::Shape("maxpool3d grad_out does not match cached argmax".into()));
        }
        let mut gin = Tensor::zeros(input_shape);
        let d = gin.data_mut();
        for (&i, &g) in argmax.iter().zip(grad_out.data()) {
            d[i] += g;
        }
        Ok(gin)
    }
}

/// Symmetric zero padding on the (T, H, W) axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ZeroPad3d {
    pub pads: [usize; 3],
}

impl ZeroPad3d {
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let r = input.len();
        if r < 4 {
            return Err(Error::Shape(format!("zeropad3d expects [T,H,W,C] input, got {input:?}")));
        }
        let mut out = input.to_vec();
        for a in 0..3 {
            out[r - 4 + a] += 2 * self.pads[a];
        }
        Ok(out)
    }

    pub fn forward<S: Scalar>(&self, input: &Tensor<S>) -> Result<Tensor<S>> {
        let out_shape = self.output_shape(input.shape())?;
        let [n, t, h, w, c] = batched_dims(input.shape())?;
        let [pt, ph, pw] = self.pads;
        let (t2, h2, w2) = (t + 2 * pt, h + 2 * ph, w + 2 * pw);
        let mut out = vec![S::zero(); n * t2 * h2 * w2 * c];
        let x = input.data();
        for s in 0..n {
            for a in 0..t {
                for b in 0..h {
                    let src = (((s * t + a) * h + b) * w) * c;
                    let dst = (((s * t2 + a + pt) * h2 + b + ph) * w2 + pw) * c;
                    out[dst..dst + w * c].copy_from_slice(&x[src..src + w * c]);
                }
            }
        }
        Ok(Tensor::from_parts(out_shape, out))
    }

    pub fn backward<S: Scalar>(&self, input_shape: &[usize], grad_out: &Tensor<S>) -> Result<Tensor<S>> {
        let [n, t, h, w, c] = batched_dims(input_shape)?;
        let [pt, ph, pw] = self.pads;
        let (t2, h2, w2) = (t + 2 * pt, h + 2 * ph, w + 2 * pw);
        if grad_out.len() != n * t2 * h2 * w2 * c {
            return Err(Error::Shape("zeropad3d grad_out does not match padded shape".into()));
        }
        let g = grad_out.data();
        let mut out = Vec::with_capacity(n * t * h * w * c);
        for s in 0..n {
            for a in 0..t {
                for b in 0..h {
                    let src = (((s * t2 + a + pt) * h2 + b + ph) * w2 + pw) * c;
                    out.extend_from_slice(&g[src..src + w * c]);
                }
            }
        }
        Ok(Tensor::from_parts(input_shape.to_vec(), out))
    }
}

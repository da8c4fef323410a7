use rayon::prelude::*;

use super::batched_dims;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Spatiotemporal convolution over channel-last `[N, T, H, W, C]` input.
///
/// The weight tensor has shape `[out_c, in_c, kT, kH, kW]`. Zero padding is
/// applied symmetrically on each of the three axes.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv3d<S> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
    pub pads: [usize; 3],
    pub strides: [usize; 3],
}

#[derive(Clone, Debug)]
pub struct Conv3dGrads<S> {
    pub input: Tensor<S>,
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

struct Geometry {
    n: usize,
    t: usize,
    h: usize,
    w: usize,
    ci: usize,
    co: usize,
    k: [usize; 3],
    out: [usize; 3],
}

impl Geometry {
    fn in_stride(&self) -> usize {
        self.t * self.h * self.w * self.ci
    }

    fn out_stride(&self) -> usize {
        self.out[0] * self.out[1] * self.out[2] * self.co
    }
}

pub fn conv_out_extent(input: usize, pad: usize, kernel: usize, stride: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

impl<S: Scalar> Conv3d<S> {
    pub fn new(weight: Tensor<S>, bias: Tensor<S>, pads: [usize; 3], strides: [usize; 3]) -> Result<Self> {
        if weight.rank() != 5 {
            return Err(Error::Shape(format!(
                "conv3d weight must be [out_c, in_c, kT, kH, kW], got {:?}",
                weight.shape()
            )));
        }
        if bias.shape() != [weight.shape()[0]] {
            return Err(Error::Shape(format!(
                "conv3d bias {:?} does not match weight {:?}",
                bias.shape(),
                weight.shape()
            )));
        }
        if strides.iter().any(|&s| s == 0) {
            return Err(Error::InvalidArgument("conv3d strides must be >= 1".into()));
        }
        Ok(Conv3d {
            weight,
            bias,
            pads,
            strides,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> [usize; 3] {
        let s = self.weight.shape();
        [s[2], s[3], s[4]]
    }

    /// Output shape for a `[.., T, H, W, C]` input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let r = input.len();
        if r < 4 {
            return Err(Error::Shape(format!("conv3d expects [T,H,W,C] input, got {input:?}")));
        }
        if input[r - 1] != self.in_channels() {
            return Err(Error::Shape(format!(
                "conv3d input {:?} has {} channels but weight {:?} expects {}",
                input,
                input[r - 1],
                self.weight.shape(),
                self.in_channels()
            )));
        }
        let k = self.kernel();
        let mut out = input[..r - 4].to_vec();
        for a in 0..3 {
            let e = conv_out_extent(input[r - 4 + a], self.pads[a], k[a], self.strides[a]).ok_or_else(|| {
                Error::Shape(format!(
                    "conv3d padded extent {} on axis {a} is smaller than kernel {}",
                    input[r - 4 + a] + 2 * self.pads[a],
                    k[a]
                ))
            })?;
            out.push(e);
        }
        out.push(self.out_channels());
        Ok(out)
    }

    fn geometry(&self, input: &Tensor<S>) -> Result<Geometry> {
        let out = self.output_shape(input.shape())?;
        let [n, t, h, w, ci] = batched_dims(input.shape())?;
        let r = out.len();
        Ok(Geometry {
            n,
            t,
            h,
            w,
            ci,
            co: self.out_channels(),
            k: self.kernel(),
            out: [out[r - 4], out[r - 3], out[r - 2]],
        })
    }

    /// Weights rearranged to `[kT, kH, kW, in_c, out_c]` so the innermost
    /// loop runs over contiguous output channels.
    fn packed_weight(&self) -> Vec<S> {
        let s = self.weight.shape();
        let (co, ci, kt, kh, kw) = (s[0], s[1], s[2], s[3], s[4]);
        let src = self.weight.data();
        let mut out = vec![S::zero(); src.len()];
        for o in 0..co {
            for i in 0..ci {
                for a in 0..kt {
                    for b in 0..kh {
                        for c in 0..kw {
                            let from = (((o * ci + i) * kt + a) * kh + b) * kw + c;
                            let to = (((a * kh + b) * kw + c) * ci + i) * co + o;
                            out[to] = src[from];
                        }
                    }
                }
            }
        }
        out
    }

    fn unpack_weight_grad(&self, packed: &[S]) -> Tensor<S> {
        let s = self.weight.shape();
        let (co, ci, kt, kh, kw) = (s[0], s[1], s[2], s[3], s[4]);
        let mut out = vec![S::zero(); packed.len()];
        for o in 0..co {
            for i in 0..ci {
                for a in 0..kt {
                    for b in 0..kh {
                        for c in 0..kw {
                            let to = (((o * ci + i) * kt + a) * kh + b) * kw + c;
                            let from = (((a * kh + b) * kw + c) * ci + i) * co + o;
                            out[to] = packed[from];
                        }
                    }
                }
            }
        }
        Tensor::from_parts(s.to_vec(), out)
    }

    /// Visits every (output position, kernel tap) pair whose input lies inside
    /// the unpadded volume.
    #[inline]
    fn for_each_tap(&self, g: &Geometry, mut f: impl FnMut(usize, usize, usize)) {
        let [kt, kh, kw] = g.k;
        let [st, sh, sw] = self.strides;
        let [pt, ph, pw] = self.pads;
        for to in 0..g.out[0] {
            for ho in 0..g.out[1] {
                for wo in 0..g.out[2] {
                    let out_pos = (to * g.out[1] + ho) * g.out[2] + wo;
                    for a in 0..kt {
                        let ti = (to * st + a) as isize - pt as isize;
                        if ti < 0 || ti >= g.t as isize {
                            continue;
                        }
                        for b in 0..kh {
                            let hi = (ho * sh + b) as isize - ph as isize;
                            if hi < 0 || hi >= g.h as isize {
                                continue;
                            }
                            for c in 0..kw {
                                let wi = (wo * sw + c) as isize - pw as isize;
                                if wi < 0 || wi >= g.w as isize {
                                    continue;
                                }
                                let in_pos = (ti as usize * g.h + hi as usize) * g.w + wi as usize;
                                let tap = (a * kh + b) * kw + c;
                                f(out_pos, in_pos, tap);
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, input: &Tensor<S>) -> Result<Tensor<S>> {
        let out_shape = self.output_shape(input.shape())?;
        let g = self.geometry(input)?;
        let packed = self.packed_weight();
        let bias = self.bias.data();
        let (ci, co) = (g.ci, g.co);
        let x = input.data();
        let samples: Vec<Vec<S>> = (0..g.n)
            .into_par_iter()
            .map(|s| {
                let xs = &x[s * g.in_stride()..(s + 1) * g.in_stride()];
                let mut out = vec![S::zero(); g.out_stride()];
                for p in 0..g.out_stride() / co {
                    out[p * co..(p + 1) * co].copy_from_slice(bias);
                }
                self.for_each_tap(&g, |op, ip, tap| {
                    let acc = &mut out[op * co..(op + 1) * co];
                    let xin = &xs[ip * ci..(ip + 1) * ci];
                    let wtap = &packed[tap * ci * co..(tap + 1) * ci * co];
                    for (i, &xv) in xin.iter().enumerate() {
                        if xv == S::zero() {
                            continue;
                        }
                        let row = &wtap[i * co..(i + 1) * co];
                        for (a, &wv) in acc.iter_mut().zip(row) {
                            *a += xv * wv;
                        }
                    }
                });
                out
            })
            .collect();
        let data = samples.concat();
        Ok(Tensor::from_parts(out_shape, data))
    }

    /// Gradients of a scalar loss given `grad_out = dL/d(output)` and the
    /// input that produced the output.
    pub fn backward(&self, input: &Tensor<S>, grad_out: &Tensor<S>) -> Result<Conv3dGrads<S>> {
        let out_shape = self.output_shape(input.shape())?;
        grad_out
            .expect_shape(&out_shape)
            .map_err(|e| Error::Shape(format!("conv3d grad_out: {e}")))?;
        let g = self.geometry(input)?;
        let packed = self.packed_weight();
        let (ci, co) = (g.ci, g.co);
        let x = input.data();
        let go = grad_out.data();
        let per_sample: Vec<(Vec<S>, Vec<S>, Vec<S>)> = (0..g.n)
            .into_par_iter()
            .map(|s| {
                let xs = &x[s * g.in_stride()..(s + 1) * g.in_stride()];
                let gs = &go[s * g.out_stride()..(s + 1) * g.out_stride()];
                let mut gin = vec![S::zero(); g.in_stride()];
                let mut gw = vec![S::zero(); packed.len()];
                let mut gb = vec![S::zero(); co];
                for p in 0..g.out_stride() / co {
                    for (b, &v) in gb.iter_mut().zip(&gs[p * co..(p + 1) * co]) {
                        *b += v;
                    }
                }
                self.for_each_tap(&g, |op, ip, tap| {
                    let grow = &gs[op * co..(op + 1) * co];
                    let xin = &xs[ip * ci..(ip + 1) * ci];
                    let wtap = &packed[tap * ci * co..(tap + 1) * ci * co];
                    let gwtap = &mut gw[tap * ci * co..(tap + 1) * ci * co];
                    let gi = &mut gin[ip * ci..(ip + 1) * ci];
                    for i in 0..ci {
                        let row = &wtap[i * co..(i + 1) * co];
                        let mut acc = S::zero();
                        for (&gv, &wv) in grow.iter().zip(row) {
                            acc += gv * wv;
                        }
                        gi[i] += acc;
                        let xv = xin[i];
                        if xv != S::zero() {
                            for (d, &gv) in gwtap[i * co..(i + 1) * co].iter_mut().zip(grow) {
                                *d += xv * gv;
                            }
                        }
                    }
                });
                (gin, gw, gb)
            })
            .collect();

        let mut gin = Vec::with_capacity(input.len());
        let mut gw = vec![S::zero(); packed.len()];
        let mut gb = vec![S::zero(); co];
        // Fixed sample order keeps the reduction deterministic.
        for (i, w, b) in per_sample {
            gin.extend_from_slice(&i);
            for (a, v) in gw.iter_mut().zip(w) {
                *a += v;
            }
            for (a, v) in gb.iter_mut().zip(b) {
                *a += v;
            }
        }
        Ok(Conv3dGrads {
            input: Tensor::from_parts(input.shape().to_vec(), gin),
            weight: self.unpack_weight_grad(&gw),
            bias: Tensor::from_parts(vec![co], gb),
        })
    }
}

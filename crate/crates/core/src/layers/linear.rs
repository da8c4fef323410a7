use super::{mat_t_vec_acc, mat_vec_acc, outer_acc};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Affine map applied to the last axis. Weight is `[out, in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<S> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

#[derive(Clone, Debug)]
pub struct LinearGrads<S> {
    pub input: Tensor<S>,
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

impl<S: Scalar> Linear<S> {
    pub fn new(weight: Tensor<S>, bias: Tensor<S>) -> Result<Self> {
        if weight.rank() != 2 || bias.shape() != [weight.shape()[0]] {
            return Err(Error::Shape(format!(
                "linear weight {:?} and bias {:?} are inconsistent",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Linear { weight, bias })
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match input.last() {
            Some(&f) if f == self.in_features() => {
                let mut out = input.to_vec();
                *out.last_mut().unwrap() = self.out_features();
                Ok(out)
            }
            _ => Err(Error::Shape(format!(
                "linear expects {} input features, got {:?}",
                self.in_features(),
                input
            ))),
        }
    }

    pub fn forward(&self, input: &Tensor<S>) -> Result<Tensor<S>> {
        let shape = self.output_shape(input.shape())?;
        let (fi, fo) = (self.in_features(), self.out_features());
        let mut out = Vec::with_capacity(input.len() / fi * fo);
        for row in input.data().chunks_exact(fi) {
            let mut acc = self.bias.data().to_vec();
            mat_vec_acc(self.weight.data(), fo, fi, row, &mut acc);
            out.extend_from_slice(&acc);
        }
        Ok(Tensor::from_parts(shape, out))
    }

    pub fn backward(&self, input: &Tensor<S>, grad_out: &Tensor<S>) -> Result<LinearGrads<S>> {
        let shape = self.output_shape(input.shape())?;
        grad_out.expect_shape(&shape)?;
        let (fi, fo) = (self.in_features(), self.out_features());
        let mut gw = Tensor::zeros(self.weight.shape());
        let mut gb = Tensor::zeros(self.bias.shape());
        let mut gin = Vec::with_capacity(input.len());
        for (x, g) in input.data().chunks_exact(fi).zip(grad_out.data().chunks_exact(fo)) {
            outer_acc(g, x, gw.data_mut());
            for (b, &v) in gb.data_mut().iter_mut().zip(g) {
                *b += v;
            }
            let mut gi = vec![S::zero(); fi];
            mat_t_vec_acc(self.weight.data(), fo, fi, g, &mut gi);
            gin.extend_from_slice(&gi);
        }
        Ok(LinearGrads {
            input: Tensor::from_parts(input.shape().to_vec(), gin),
            weight: gw,
            bias: gb,
        })
    }
}

/// Row-wise softmax over the last axis with max subtraction. Entries are
/// floored at the smallest positive normal value so they stay strictly
/// positive.
pub fn softmax<S: Scalar>(logits: &Tensor<S>) -> Tensor<S> {
    let v = *logits.shape().last().unwrap_or(&1);
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks_exact(v) {
        let m = row.iter().copied().fold(S::neg_infinity(), S::max);
        let exps: Vec<S> = row.iter().map(|&x| (x - m).exp()).collect();
        let z: S = exps.iter().copied().sum();
        out.extend(exps.into_iter().map(|e| (e / z).max(S::min_positive_value())));
    }
    Tensor::from_parts(logits.shape().to_vec(), out)
}

/// Given softmax outputs `y` and `dL/dy`, returns `dL/dlogits`.
pub fn softmax_backward<S: Scalar>(probs: &Tensor<S>, grad_out: &Tensor<S>) -> Result<Tensor<S>> {
    probs.expect_shape(grad_out.shape())?;
    let v = *probs.shape().last().unwrap_or(&1);
    let mut out = Vec::with_capacity(probs.len());
    for (y, g) in probs.data().chunks_exact(v).zip(grad_out.data().chunks_exact(v)) {
        let dot: S = y.iter().zip(g).map(|(&a, &b)| a * b).sum();
        out.extend(y.iter().zip(g).map(|(&a, &b)| a * (b - dot)));
    }
    Ok(Tensor::from_parts(probs.shape().to_vec(), out))
}

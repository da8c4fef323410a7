use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn relu<S: Scalar>(input: &Tensor<S>) -> Tensor<S> {
    input.map(|x| if x > S::zero() { x } else { S::zero() })
}

/// Passes the gradient where the forward input was strictly positive.
pub fn relu_backward<S: Scalar>(input: &Tensor<S>, grad_out: &Tensor<S>) -> Result<Tensor<S>> {
    input.zip_map(grad_out, |x, g| if x > S::zero() { g } else { S::zero() })
}

/// Inverted dropout. Survivors are scaled by `1 / (1 - rate)` at train time
/// so evaluation is the identity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dropout {
    rate: f64,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate {rate} not in [0, 1)")));
        }
        Ok(Dropout { rate })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Returns the output and the per-element multiplier used.
    pub fn forward_train<S: Scalar, R: Rng + ?Sized>(&self, input: &Tensor<S>, rng: &mut R) -> (Tensor<S>, Vec<S>) {
        if self.rate == 0.0 {
            return (input.clone(), vec![S::one(); input.len()]);
        }
        let keep_scale = S::from_f64_lossy(1.0 / (1.0 - self.rate));
        let mask: Vec<S> = (0..input.len())
            .map(|_| {
                if rng.random::<f64>() < self.rate {
                    S::zero()
                } else {
                    keep_scale
                }
            })
            .collect();
        let data = input.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        (Tensor::from_parts(input.shape().to_vec(), data), mask)
    }

    pub fn backward<S: Scalar>(mask: &[S], grad_out: &Tensor<S>) -> Result<Tensor<S>> {
        if mask.len() != grad_out.len() {
            return Err(Error::Shape("dropout mask does not match grad_out".into()));
        }
        let data = grad_out.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
        Ok(Tensor::from_parts(grad_out.shape().to_vec(), data))
    }
}

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

/// Per-channel batch normalization over every axis except the last.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<S> {
    pub gamma: Tensor<S>,
    pub beta: Tensor<S>,
    pub running_mean: Tensor<S>,
    pub running_var: Tensor<S>,
    /// Weight kept on the old running statistic at each update.
    pub momentum: S,
    pub epsilon: S,
    /// False until the first train-mode batch has updated the running stats.
    pub stats_initialized: bool,
}

#[derive(Clone, Debug)]
pub enum BatchNormCache<S> {
    Train { xhat: Vec<S>, inv_std: Vec<S> },
    Eval { inv_std: Vec<S>, xhat: Vec<S> },
}

#[derive(Clone, Debug)]
pub struct BatchStats<S> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
}

#[derive(Clone, Debug)]
pub struct BatchNormGrads<S> {
    pub input: Tensor<S>,
    pub gamma: Tensor<S>,
    pub beta: Tensor<S>,
}

impl<S: Scalar> BatchNorm<S> {
    pub fn new(channels: usize, momentum: S, epsilon: S) -> Result<Self> {
        if epsilon <= S::zero() {
            return Err(Error::InvalidArgument("batchnorm epsilon must be > 0".into()));
        }
        if !(S::zero()..S::one()).contains(&momentum) {
            return Err(Error::InvalidArgument("batchnorm momentum must be in [0, 1)".into()));
        }
        Ok(BatchNorm {
            gamma: Tensor::filled(&[channels], S::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], S::one()),
            momentum,
            epsilon,
            stats_initialized: false,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, input: &Tensor<S>) -> Result<usize> {
        let c = *input.shape().last().unwrap_or(&0);
        if c != self.channels() {
            return Err(Error::Shape(format!(
                "batchnorm has {} channels, input {:?} has {}",
                self.channels(),
                input.shape(),
                c
            )));
        }
        Ok(c)
    }

    /// Train-mode forward: normalizes with batch statistics and folds them
    /// into the running statistics.
    pub fn forward_train(&mut self, input: &Tensor<S>) -> Result<(Tensor<S>, BatchNormCache<S>)> {
        let (y, cache, stats) = self.forward_batch(input)?;
        self.update_running(&stats);
        Ok((y, cache))
    }

    /// Normalizes with batch statistics without touching the running
    /// statistics; returns the per-channel (mean, variance) used.
    pub fn forward_batch(&self, input: &Tensor<S>) -> Result<(Tensor<S>, BatchNormCache<S>, BatchStats<S>)> {
        let c = self.check(input)?;
        let x = input.data();
        let m = x.len() / c;
        let mf: S = S::from_usize(m).unwrap();
        let mut mean = vec![S::zero(); c];
        for row in x.chunks_exact(c) {
            for (a, &v) in mean.iter_mut().zip(row) {
                *a += v;
            }
        }
        for a in &mut mean {
            *a /= mf;
        }
        let mut var = vec![S::zero(); c];
        for row in x.chunks_exact(c) {
            for ((a, &v), &mu) in var.iter_mut().zip(row).zip(&mean) {
                *a += (v - mu) * (v - mu);
            }
        }
        for a in &mut var {
            *a /= mf;
        }
        let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + self.epsilon).sqrt()).collect();
        let mut xhat = Vec::with_capacity(x.len());
        let mut out = Vec::with_capacity(x.len());
        let (gamma, beta) = (self.gamma.data(), self.beta.data());
        for row in x.chunks_exact(c) {
            for ch in 0..c {
                let xh = (row[ch] - mean[ch]) * inv_std[ch];
                xhat.push(xh);
                out.push(gamma[ch] * xh + beta[ch]);
            }
        }
        Ok((
            Tensor::from_parts(input.shape().to_vec(), out),
            BatchNormCache::Train { xhat, inv_std },
            BatchStats { mean, var },
        ))
    }

    pub fn update_running(&mut self, stats: &BatchStats<S>) {
        let keep = self.momentum;
        let rm = self.running_mean.data_mut();
        for (r, &mu) in rm.iter_mut().zip(&stats.mean) {
            *r = keep * *r + (S::one() - keep) * mu;
        }
        let rv = self.running_var.data_mut();
        for (r, &v) in rv.iter_mut().zip(&stats.var) {
            *r = keep * *r + (S::one() - keep) * v;
        }
        self.stats_initialized = true;
    }

    /// Eval-mode forward using the running statistics only.
    pub fn forward_eval(&self, input: &Tensor<S>) -> Result<(Tensor<S>, BatchNormCache<S>)> {
        let c = self.check(input)?;
        if !self.stats_initialized {
            log::warn!("batchnorm evaluated before any training step; using mean 0, variance 1");
        }
        let inv_std: Vec<S> = self
            .running_var
            .data()
            .iter()
            .map(|&v| S::one() / (v + self.epsilon).sqrt())
            .collect();
        let (gamma, beta, mean) = (self.gamma.data(), self.beta.data(), self.running_mean.data());
        let mut xhat = Vec::with_capacity(input.len());
        let mut out = Vec::with_capacity(input.len());
        for row in input.data().chunks_exact(c) {
            for ch in 0..c {
                let xh = (row[ch] - mean[ch]) * inv_std[ch];
                xhat.push(xh);
                out.push(gamma[ch] * xh + beta[ch]);
            }
        }
        Ok((
            Tensor::from_parts(input.shape().to_vec(), out),
            BatchNormCache::Eval { inv_std, xhat },
        ))
    }

    pub fn backward(&self, cache: &BatchNormCache<S>, grad_out: &Tensor<S>) -> Result<BatchNormGrads<S>> {
        let c = self.check(grad_out)?;
        let g = grad_out.data();
        let (xhat, inv_std) = match cache {
            BatchNormCache::Train { xhat, inv_std } | BatchNormCache::Eval { xhat, inv_std } => (xhat, inv_std),
        };
        if xhat.len() != g.len() {
            return Err(Error::Shape("batchnorm grad_out does not match cached forward".into()));
        }
        let mut dgamma = vec![S::zero(); c];
        let mut dbeta = vec![S::zero(); c];
        for (grow, xrow) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
            for ch in 0..c {
                dbeta[ch] += grow[ch];
                dgamma[ch] += grow[ch] * xrow[ch];
            }
        }
        let gamma = self.gamma.data();
        let mut gin = Vec::with_capacity(g.len());
        match cache {
            BatchNormCache::Train { .. } => {
                let mf: S = S::from_usize(g.len() / c).unwrap();
                for (grow, xrow) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                    for ch in 0..c {
                        let k = gamma[ch] * inv_std[ch] / mf;
                        gin.push(k * (mf * grow[ch] - dbeta[ch] - xrow[ch] * dgamma[ch]));
                    }
                }
            }
            BatchNormCache::Eval { .. } => {
                for grow in g.chunks_exact(c) {
                    for ch in 0..c {
                        gin.push(grow[ch] * gamma[ch] * inv_std[ch]);
                    }
                }
            }
        }
        Ok(BatchNormGrads {
            input: Tensor::from_parts(grad_out.shape().to_vec(), gin),
            gamma: Tensor::from_parts(vec![c], dgamma),
            beta: Tensor::from_parts(vec![c], dbeta),
        })
    }
}

/// Default momentum and epsilon.
pub fn default_batchnorm<S: Scalar>(channels: usize) -> BatchNorm<S> {
    BatchNorm::new(channels, lit(0.9), lit(1e-5)).expect("valid defaults")
}

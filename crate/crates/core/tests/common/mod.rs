#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use vtrec::Tensor;

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Random `[T, V]` row-stochastic matrix with entries bounded away from 0.
pub fn random_posteriors(t: usize, v: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let mut data = Vec::with_capacity(t * v);
    for _ in 0..t {
        let row: Vec<f64> = (0..v).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = row.iter().sum();
        data.extend(row.into_iter().map(|x| x / s));
    }
    Tensor::new(vec![t, v], data).unwrap()
}

/// `||a - n|| / max(||a||, ||n||)` over every coordinate of every tensor.
pub fn relative_error(analytic: &[Tensor<f64>], numeric: &[Tensor<f64>]) -> f64 {
    let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
    for (a, n) in analytic.iter().zip(numeric) {
        assert_eq!(a.shape(), n.shape());
        for (&x, &y) in a.data().iter().zip(n.data()) {
            diff += (x - y) * (x - y);
            na += x * x;
            nn += y * y;
        }
    }
    let denom = na.sqrt().max(nn.sqrt());
    if denom == 0.0 {
        0.0
    } else {
        diff.sqrt() / denom
    }
}

/// Central differences of `loss` with respect to every element of `inputs`.
pub fn numeric_grad(inputs: &[Tensor<f64>], eps: f64, loss: impl Fn(&[Tensor<f64>]) -> f64) -> Vec<Tensor<f64>> {
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for k in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[k].shape());
        for i in 0..inputs[k].len() {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + eps;
            let up = loss(&work);
            work[k].data_mut()[i] = orig - eps;
            let down = loss(&work);
            work[k].data_mut()[i] = orig;
            g.data_mut()[i] = (up - down) / (2.0 * eps);
        }
        out.push(g);
    }
    out
}

pub fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &p in path {
        if Some(p) != prev && p != blank {
            out.push(p);
        }
        prev = Some(p);
    }
    out
}

/// Probability mass of every collapsed label sequence, by enumerating all
/// `V^T` frame paths. The blank is the last symbol.
pub fn sequence_masses(post: &Tensor<f64>) -> BTreeMap<Vec<usize>, f64> {
    let (t, v) = (post.shape()[0], post.shape()[1]);
    let mut masses = BTreeMap::new();
    let mut path = vec![0usize; t];
    loop {
        let p: f64 = path.iter().enumerate().map(|(i, &k)| post.get(&[i, k])).product();
        *masses.entry(collapse(&path, v - 1)).or_insert(0.0) += p;
        let mut i = 0;
        loop {
            if i == t {
                return masses;
            }
            path[i] += 1;
            if path[i] < v {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}

pub fn brute_force_nll(post: &Tensor<f64>, target: &[usize]) -> f64 {
    -sequence_masses(post).get(target).copied().unwrap_or(0.0).ln()
}

pub fn word_count(labels: &[usize], space: Option<usize>) -> usize {
    let mut words = 0;
    let mut in_word = false;
    for &l in labels {
        if Some(l) == space {
            in_word = false;
        } else if !in_word {
            in_word = true;
            words += 1;
        }
    }
    words
}

/// Best `(score, labels)` over every sequence with non-zero mass, scored
/// `ln P + beta * words`; ties go to the lexicographically smaller sequence.
pub fn oracle_decode(post: &Tensor<f64>, beta: f64, space: Option<usize>) -> (f64, Vec<usize>) {
    let mut best: Option<(f64, Vec<usize>)> = None;
    for (seq, mass) in sequence_masses(post) {
        if mass <= 0.0 {
            continue;
        }
        let score = mass.ln() + beta * word_count(&seq, space) as f64;
        let better = match &best {
            None => true,
            Some((b, bs)) => score > *b || (score == *b && seq < *bs),
        };
        if better {
            best = Some((score, seq));
        }
    }
    best.unwrap()
}

//! Connectionist temporal classification.
//!
//! Posteriors are `[T, V]` row-stochastic matrices and the blank is always
//! the last output, `V - 1`. Targets are label sequences that never contain
//! the blank. All recursions run in log space.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Removes adjacent duplicates, then blanks.
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

/// Minimum number of frames needed to emit `target`: one per label plus a
/// separating blank between equal neighbours.
pub fn required_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

fn check<S: Scalar>(posteriors: &Tensor<S>, target: &[usize]) -> Result<(usize, usize)> {
    let (t, v) = match posteriors.shape() {
        [t, v] => (*t, *v),
        s => return Err(Error::Shape(format!("posteriors must be [T, V], got {s:?}"))),
    };
    if v < 2 {
        return Err(Error::Shape("posteriors need at least one label plus blank".into()));
    }
    if let Some(&bad) = target.iter().find(|&&l| l >= v - 1) {
        return Err(Error::InvalidArgument(format!(
            "target label {bad} is the blank or outside [0, {})",
            v - 1
        )));
    }
    let required = required_frames(target);
    if required > t {
        return Err(Error::UnreachableTarget {
            target_len: target.len(),
            required,
            frames: t,
        });
    }
    Ok((t, v))
}

#[inline]
fn lse<S: Scalar>(a: S, b: S) -> S {
    if a == S::neg_infinity() {
        return b;
    }
    if b == S::neg_infinity() {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Blank-interleaved target `[-, y1, -, y2, ..., -]`.
fn augment(target: &[usize], blank: usize) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(blank);
    for &l in target {
        ext.push(l);
        ext.push(blank);
    }
    ext
}

/// Whether state `s` may be entered by skipping from `s - 2`.
#[inline]
fn can_skip(ext: &[usize], s: usize, blank: usize) -> bool {
    s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]
}

struct Lattice<S> {
    /// `log alpha[t][s]`: mass of path prefixes ending in state `s` at `t`,
    /// including the emission at `t`.
    alpha: Vec<S>,
    /// `log beta[t][s]`: mass of path suffixes after `t` given state `s` at
    /// `t`, excluding the emission at `t`.
    beta: Vec<S>,
    log_p: S,
    ext: Vec<usize>,
    log_y: Vec<S>,
}

fn lattice<S: Scalar>(posteriors: &Tensor<S>, target: &[usize], with_beta: bool) -> Result<Lattice<S>> {
    let (t_len, v) = check(posteriors, target)?;
    let blank = v - 1;
    let ext = augment(target, blank);
    let n = ext.len();
    let log_y: Vec<S> = posteriors.data().iter().map(|&p| p.ln()).collect();
    let ninf = S::neg_infinity();
    let mut alpha = vec![ninf; t_len * n];
    alpha[0] = log_y[blank];
    if n > 1 {
        alpha[1] = log_y[ext[1]];
    }
    for t in 1..t_len {
        for s in 0..n {
            let prev = &alpha[(t - 1) * n..t * n];
            let mut a = prev[s];
            if s >= 1 {
                a = lse(a, prev[s - 1]);
            }
            if can_skip(&ext, s, blank) {
                a = lse(a, prev[s - 2]);
            }
            alpha[t * n + s] = if a == ninf { ninf } else { a + log_y[t * v + ext[s]] };
        }
    }
    let last = &alpha[(t_len - 1) * n..];
    let log_p = if n > 1 { lse(last[n - 1], last[n - 2]) } else { last[0] };
    let mut beta = Vec::new();
    if with_beta {
        beta = vec![ninf; t_len * n];
        beta[(t_len - 1) * n + n - 1] = S::zero();
        if n > 1 {
            beta[(t_len - 1) * n + n - 2] = S::zero();
        }
        for t in (0..t_len - 1).rev() {
            for s in 0..n {
                let next = |s2: usize| beta[(t + 1) * n + s2] + log_y[(t + 1) * v + ext[s2]];
                let mut b = next(s);
                if s + 1 < n {
                    b = lse(b, next(s + 1));
                }
                if s + 2 < n && can_skip(&ext, s + 2, blank) {
                    b = lse(b, next(s + 2));
                }
                beta[t * n + s] = b;
            }
        }
    }
    Ok(Lattice {
        alpha,
        beta,
        log_p,
        ext,
        log_y,
    })
}

/// `-ln P(target | posteriors)` summed over all alignments.
pub fn ctc_loss<S: Scalar>(posteriors: &Tensor<S>, target: &[usize]) -> Result<S> {
    Ok(-lattice(posteriors, target, false)?.log_p)
}

/// Per-cell occupation `gamma[t][k]`: the fraction of target-path mass
/// passing through label `k` at time `t`. Rows sum to one.
fn occupation<S: Scalar>(lat: &Lattice<S>, t_len: usize, v: usize) -> Tensor<S> {
    let n = lat.ext.len();
    let mut acc = vec![S::neg_infinity(); t_len * v];
    for t in 0..t_len {
        for s in 0..n {
            let k = lat.ext[s];
            let m = lat.alpha[t * n + s] + lat.beta[t * n + s];
            acc[t * v + k] = lse(acc[t * v + k], m);
        }
    }
    let data = acc.into_iter().map(|a| (a - lat.log_p).exp()).collect();
    Tensor::from_parts(vec![t_len, v], data)
}

/// Loss and `dL/dposteriors`.
pub fn ctc_grad<S: Scalar>(posteriors: &Tensor<S>, target: &[usize]) -> Result<(S, Tensor<S>)> {
    let lat = lattice(posteriors, target, true)?;
    let (t_len, v) = (posteriors.shape()[0], posteriors.shape()[1]);
    let gamma = occupation(&lat, t_len, v);
    let data = gamma
        .data()
        .iter()
        .zip(&lat.log_y)
        .map(|(&g, &ly)| if g == S::zero() { S::zero() } else { -g / ly.exp() })
        .collect();
    Ok((-lat.log_p, Tensor::from_parts(vec![t_len, v], data)))
}

/// Loss and the gradient with respect to the pre-softmax logits when
/// `posteriors = softmax(logits)`: `y - gamma`.
pub fn ctc_logit_grad<S: Scalar>(posteriors: &Tensor<S>, target: &[usize]) -> Result<(S, Tensor<S>)> {
    let lat = lattice(posteriors, target, true)?;
    let (t_len, v) = (posteriors.shape()[0], posteriors.shape()[1]);
    let mut g = occupation(&lat, t_len, v);
    for (gi, &y) in g.data_mut().iter_mut().zip(posteriors.data()) {
        *gi = y - *gi;
    }
    Ok((-lat.log_p, g))
}

/// Largest `V^T` accepted by the enumeration oracles.
pub const MAX_ENUMERATION: usize = 1_000_000;

/// Exact loss by enumerating every length-`T` path.
pub fn ctc_brute_force<S: Scalar>(posteriors: &Tensor<S>, target: &[usize]) -> Result<S> {
    let (t_len, v) = match posteriors.shape() {
        [t, v] => (*t, *v),
        s => return Err(Error::Shape(format!("posteriors must be [T, V], got {s:?}"))),
    };
    let total = (v as f64).powi(t_len as i32);
    if total > MAX_ENUMERATION as f64 {
        return Err(Error::TooLarge(format!("{v}^{t_len} paths exceeds {MAX_ENUMERATION}")));
    }
    let blank = v - 1;
    let y = posteriors.to_f64_vec();
    let mut path = vec![0usize; t_len];
    let mut mass = 0.0f64;
    let mut any = false;
    loop {
        if collapse(&path, blank) == target {
            any = true;
            mass += path.iter().enumerate().map(|(t, &k)| y[t * v + k]).product::<f64>();
        }
        // Odometer increment.
        let mut i = t_len;
        loop {
            if i == 0 {
                if !any {
                    return Err(Error::UnreachableTarget {
                        target_len: target.len(),
                        required: required_frames(target),
                        frames: t_len,
                    });
                }
                return Ok(S::from_f64_lossy(-mass.ln()));
            }
            i -= 1;
            path[i] += 1;
            if path[i] < v {
                break;
            }
            path[i] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: usize = 0;
    const B: usize = 1;

    fn post(rows: &[&[f64]]) -> Tensor<f64> {
        let v = rows[0].len();
        Tensor::new(vec![rows.len(), v], rows.concat()).unwrap()
    }

    #[test]
    fn collapse_examples() {
        let blank = 2;
        assert_eq!(collapse(&[A, A, blank, A], blank), vec![A, A]);
        assert!(collapse(&[blank, blank], blank).is_empty());
    }

    #[test]
    fn length_three_paths_collapsing_to_a() {
        let blank = 1;
        let mut found = Vec::new();
        for code in 0..8usize {
            let path: Vec<usize> = (0..3).map(|i| (code >> (2 - i)) & 1).collect();
            if collapse(&path, blank) == [A] {
                found.push(path);
            }
        }
        let mut expected = vec![
            vec![A, 1, 1],
            vec![1, A, 1],
            vec![1, 1, A],
            vec![A, A, 1],
            vec![1, A, A],
            vec![A, A, A],
        ];
        expected.sort();
        found.sort();
        assert_eq!(found, expected);
    }

    #[test]
    fn single_frame_loss() {
        let p = post(&[&[0.3, 0.7]]);
        assert!((ctc_loss(&p, &[A]).unwrap() + 0.3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn two_frame_single_label() {
        let p = post(&[&[0.6, 0.4], &[0.25, 0.75]]);
        let expect = -(0.6 * 0.25 + 0.6 * 0.75 + 0.4 * 0.25f64).ln();
        assert!((ctc_loss(&p, &[A]).unwrap() - expect).abs() < 1e-14);
    }

    #[test]
    fn two_frame_two_labels_is_unique_path() {
        let p = post(&[&[0.5, 0.2, 0.3], &[0.1, 0.6, 0.3]]);
        assert!((ctc_loss(&p, &[A, B]).unwrap() + (0.5f64 * 0.6).ln()).abs() < 1e-14);
    }

    #[test]
    fn repeats_need_a_separating_blank() {
        let p = post(&[&[0.5, 0.5], &[0.5, 0.5]]);
        assert!(matches!(ctc_loss(&p, &[A, A]), Err(Error::UnreachableTarget { required: 3, .. })));
        assert!(matches!(ctc_brute_force(&p, &[A, A]), Err(Error::UnreachableTarget { .. })));
    }

    #[test]
    fn single_frame_gradient_touches_one_cell() {
        let p = post(&[&[0.3, 0.2, 0.5]]);
        let (_, g) = ctc_grad(&p, &[A]).unwrap();
        assert!((g.data()[0] + 1.0 / 0.3).abs() < 1e-12);
        assert_eq!(&g.data()[1..], &[0.0, 0.0]);
    }

    #[test]
    fn blank_in_target_rejected() {
        let p = post(&[&[0.5, 0.5]]);
        assert!(ctc_loss(&p, &[1]).is_err());
    }

    #[test]
    fn enumeration_size_guard() {
        let p = Tensor::filled(&[11, 4], 0.25f64);
        assert!(matches!(ctc_brute_force(&p, &[0]), Err(Error::TooLarge(_))));
    }
}

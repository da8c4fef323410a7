//! CTC decoding: greedy, prefix beam search with shallow language-model
//! fusion, and an exhaustive reference decoder.
//!
//! Hypotheses are ranked by
//! `ln P_ctc(prefix) + alpha * ln P_lm(prefix) + beta * words(prefix)`.
//! Language-model scores are added when a character is emitted and the
//! end-of-sentence score is added once at the end. Ties are broken by the
//! lexicographically smaller label sequence.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ctc::{ctc_loss, required_frames, MAX_ENUMERATION};
use crate::error::{Error, Result};
use crate::lm::{self, NGramLm, BOS, EOS};
use crate::metrics::{corpus_rate, Unit};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::util::{log_add_exp, put_u32, write_atomic, ByteReader};
use crate::vocab::Vocab;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeParams {
    pub beam_width: usize,
    /// Language-model weight; 0 disables fusion.
    pub alpha: f64,
    /// Bonus per emitted word.
    pub beta: f64,
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams {
            beam_width: 4,
            alpha: 0.5,
            beta: 1.0,
        }
    }
}

impl DecodeParams {
    pub fn without_lm(&self) -> Self {
        DecodeParams {
            alpha: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub labels: Vec<usize>,
    pub text: String,
    /// Combined score of the returned hypothesis.
    pub score: f64,
}

/// A beam entry: a collapsed prefix with its CTC mass split by whether the
/// paths end in a blank.
#[derive(Clone, Debug)]
pub struct Hypothesis {
    pub prefix: Vec<usize>,
    pub log_p_blank: f64,
    pub log_p_nonblank: f64,
    /// Accumulated `ln P_lm` of the emitted characters.
    pub lm_logp: f64,
    /// Last `order - 1` language-model symbols.
    pub lm_state: Vec<u8>,
}

impl Hypothesis {
    pub fn log_p_total(&self) -> f64 {
        log_add_exp(self.log_p_blank, self.log_p_nonblank)
    }
}

fn rows_f64<S: Scalar>(posteriors: &Tensor<S>) -> Result<(usize, usize, Vec<f64>)> {
    match posteriors.shape() {
        [t, v] if *v >= 2 => Ok((*t, *v, posteriors.data().iter().map(|p| p.to_f64().unwrap().ln()).collect())),
        s => Err(Error::Shape(format!("posteriors must be [T, V] with V >= 2, got {s:?}"))),
    }
}

fn check_vocab(vocab: &Vocab, v: usize) -> Result<()> {
    if vocab.size() != v {
        return Err(Error::Shape(format!(
            "posteriors have {v} outputs but the vocabulary has {}",
            vocab.size()
        )));
    }
    Ok(())
}

fn word_count(prefix: &[usize], space: Option<usize>) -> usize {
    let mut words = 0;
    let mut in_word = false;
    for &l in prefix {
        if Some(l) == space {
            in_word = false;
        } else if !in_word {
            in_word = true;
            words += 1;
        }
    }
    words
}

/// Argmax per frame (lowest index on ties), then collapse.
pub fn greedy_decode<S: Scalar>(posteriors: &Tensor<S>, vocab: &Vocab) -> Result<Decoded> {
    let (t, v, logs) = rows_f64(posteriors)?;
    check_vocab(vocab, v)?;
    let mut path = Vec::with_capacity(t);
    let mut score = 0.0;
    for row in logs.chunks_exact(v) {
        let mut best = 0;
        for (k, &x) in row.iter().enumerate() {
            if x > row[best] {
                best = k;
            }
        }
        score += row[best];
        path.push(best);
    }
    let labels = crate::ctc::collapse(&path, v - 1);
    Ok(Decoded {
        text: vocab.decode(&labels),
        labels,
        score,
    })
}

/// Language-model adapter from vocabulary labels to model symbols.
struct LmView<'a> {
    lm: &'a NGramLm,
    symbols: Vec<u8>,
}

impl<'a> LmView<'a> {
    fn new(lm: Option<&'a NGramLm>, vocab: &Vocab, alpha: f64) -> Result<Option<Self>> {
        if alpha < 0.0 || !alpha.is_finite() {
            return Err(Error::InvalidArgument(format!("alpha must be finite and >= 0, got {alpha}")));
        }
        if alpha == 0.0 {
            return Ok(None);
        }
        let lm = lm.ok_or_else(|| Error::InvalidArgument("alpha > 0 requires a language model".into()))?;
        let symbols = vocab
            .chars()
            .iter()
            .map(|&c| lm::token(c).ok_or_else(|| Error::InvalidArgument(format!("vocabulary character {c:?} is not modelled"))))
            .collect::<Result<Vec<u8>>>()?;
        Ok(Some(LmView { lm, symbols }))
    }

    fn extend(&self, state: &[u8], label: usize) -> (f64, Vec<u8>) {
        let sym = self.symbols[label];
        let lp = self.lm.logprob(state, sym).expect("validated symbols");
        let mut next = state.to_vec();
        next.push(sym);
        let keep = self.lm.order().saturating_sub(1);
        if next.len() > keep {
            next.drain(..next.len() - keep);
        }
        (lp, next)
    }

    fn finish(&self, state: &[u8]) -> f64 {
        self.lm.logprob(state, EOS).expect("valid")
    }
}

struct Ranker {
    alpha: f64,
    beta: f64,
    space: Option<usize>,
}

impl Ranker {
    fn score(&self, log_p: f64, lm_logp: f64, prefix: &[usize]) -> f64 {
        let mut s = log_p;
        if self.alpha != 0.0 {
            s += self.alpha * lm_logp;
        }
        if self.beta != 0.0 {
            s += self.beta * word_count(prefix, self.space) as f64;
        }
        s
    }
}

fn rank(a: (f64, &[usize]), b: (f64, &[usize])) -> Ordering {
    b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then_with(|| a.1.cmp(b.1))
}

/// Prefix beam search. Every kept hypothesis is extended by a blank, a
/// repeat of its last label and each label; masses of paths reaching the
/// same prefix are summed before pruning to `beam_width`.
pub fn beam_search<S: Scalar>(
    posteriors: &Tensor<S>,
    vocab: &Vocab,
    params: &DecodeParams,
    lm: Option<&NGramLm>,
) -> Result<Decoded> {
    let beam = beam_search_hypotheses(posteriors, vocab, params, lm)?;
    Ok(beam.into_iter().next().expect("beam is never empty"))
}

/// Final beam, best first, with end-of-sentence language-model scores
/// applied.
pub fn beam_search_hypotheses<S: Scalar>(
    posteriors: &Tensor<S>,
    vocab: &Vocab,
    params: &DecodeParams,
    lm: Option<&NGramLm>,
) -> Result<Vec<Decoded>> {
    if params.beam_width == 0 {
        return Err(Error::InvalidArgument("beam width must be >= 1".into()));
    }
    let (_, v, logs) = rows_f64(posteriors)?;
    check_vocab(vocab, v)?;
    let lmv = LmView::new(lm, vocab, params.alpha)?;
    let ranker = Ranker {
        alpha: params.alpha,
        beta: params.beta,
        space: vocab.index_of(' '),
    };
    let blank = v - 1;
    let mut beam = vec![Hypothesis {
        prefix: Vec::new(),
        log_p_blank: 0.0,
        log_p_nonblank: f64::NEG_INFINITY,
        lm_logp: 0.0,
        lm_state: vec![BOS],
    }];
    for row in logs.chunks_exact(v) {
        let mut next: HashMap<Vec<usize>, Hypothesis> = HashMap::new();
        for h in &beam {
            let total = h.log_p_total();
            let last = h.prefix.last().copied();
            {
                let e = next.entry(h.prefix.clone()).or_insert_with(|| Hypothesis {
                    log_p_blank: f64::NEG_INFINITY,
                    log_p_nonblank: f64::NEG_INFINITY,
                    ..h.clone()
                });
                e.log_p_blank = log_add_exp(e.log_p_blank, total + row[blank]);
                if let Some(l) = last {
                    e.log_p_nonblank = log_add_exp(e.log_p_nonblank, h.log_p_nonblank + row[l]);
                }
            }
            for (c, &lp) in row.iter().enumerate().take(blank) {
                // A repeated label only starts a new symbol after a blank.
                let add = if Some(c) == last { h.log_p_blank + lp } else { total + lp };
                let mut prefix = h.prefix.clone();
                prefix.push(c);
                let e = next.entry(prefix).or_insert_with_key(|prefix| {
                    let (lm_logp, lm_state) = match &lmv {
                        Some(m) => {
                            let (d, s) = m.extend(&h.lm_state, c);
                            (h.lm_logp + d, s)
                        }
                        None => (0.0, Vec::new()),
                    };
                    Hypothesis {
                        prefix: prefix.clone(),
                        log_p_blank: f64::NEG_INFINITY,
                        log_p_nonblank: f64::NEG_INFINITY,
                        lm_logp,
                        lm_state,
                    }
                });
                e.log_p_nonblank = log_add_exp(e.log_p_nonblank, add);
            }
        }
        let mut scored: Vec<(f64, Hypothesis)> = next
            .into_values()
            .filter(|h| h.log_p_total() > f64::NEG_INFINITY)
            .map(|h| (ranker.score(h.log_p_total(), h.lm_logp, &h.prefix), h))
            .collect();
        scored.sort_by(|a, b| rank((a.0, &a.1.prefix), (b.0, &b.1.prefix)));
        scored.truncate(params.beam_width);
        beam = scored.into_iter().map(|(_, h)| h).collect();
        if beam.is_empty() {
            return Err(Error::Data("all hypotheses have zero probability".into()));
        }
    }
    let mut finals: Vec<Decoded> = beam
        .into_iter()
        .map(|h| {
            let lm_total = h.lm_logp + lmv.as_ref().map_or(0.0, |m| m.finish(&h.lm_state));
            let score = ranker.score(h.log_p_total(), lm_total, &h.prefix);
            Decoded {
                text: vocab.decode(&h.prefix),
                labels: h.prefix,
                score,
            }
        })
        .collect();
    finals.sort_by(|a, b| rank((a.score, &a.labels), (b.score, &b.labels)));
    Ok(finals)
}

/// Scores every label sequence realizable in `T` frames by its exact CTC
/// mass (plus the same language-model and word terms as the beam search)
/// and returns the best.
pub fn exhaustive_decode<S: Scalar>(
    posteriors: &Tensor<S>,
    vocab: &Vocab,
    params: &DecodeParams,
    lm: Option<&NGramLm>,
) -> Result<Decoded> {
    let (t, v, _) = rows_f64(posteriors)?;
    check_vocab(vocab, v)?;
    if (v as f64).powi(t as i32) > MAX_ENUMERATION as f64 {
        return Err(Error::TooLarge(format!("{v}^{t} exceeds {MAX_ENUMERATION}")));
    }
    let lmv = LmView::new(lm, vocab, params.alpha)?;
    let ranker = Ranker {
        alpha: params.alpha,
        beta: params.beta,
        space: vocab.index_of(' '),
    };
    let labels = v - 1;
    let mut best: Option<Decoded> = None;
    let mut frontier: Vec<Vec<usize>> = vec![Vec::new()];
    while let Some(seq) = frontier.pop() {
        if required_frames(&seq) > t {
            continue;
        }
        let log_p = -ctc_loss(posteriors, &seq)?.to_f64().unwrap();
        let lm_total = match &lmv {
            Some(m) => {
                let mut state = vec![BOS];
                let mut acc = 0.0;
                for &l in &seq {
                    let (d, s) = m.extend(&state, l);
                    acc += d;
                    state = s;
                }
                acc + m.finish(&state)
            }
            None => 0.0,
        };
        let score = ranker.score(log_p, lm_total, &seq);
        let better = match &best {
            None => true,
            Some(b) => rank((score, &seq), (b.score, &b.labels)) == Ordering::Less,
        };
        if better && log_p > f64::NEG_INFINITY {
            best = Some(Decoded {
                text: vocab.decode(&seq),
                labels: seq.clone(),
                score,
            });
        }
        if seq.len() < t {
            for c in 0..labels {
                let mut s = seq.clone();
                s.push(c);
                frontier.push(s);
            }
        }
    }
    best.ok_or_else(|| Error::Data("no label sequence has positive probability".into()))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub width: usize,
    /// Corpus word error rate in percent.
    pub wer: f64,
    /// Best combined score per instance.
    pub best_scores: Vec<f64>,
}

/// Word error rate as a function of beam width.
pub fn width_sweep<S: Scalar>(
    instances: &[(Tensor<S>, String)],
    widths: &[usize],
    params: &DecodeParams,
    vocab: &Vocab,
    lm: Option<&NGramLm>,
) -> Result<Vec<SweepRow>> {
    widths
        .iter()
        .map(|&width| {
            let p = DecodeParams {
                beam_width: width,
                ..params.clone()
            };
            let mut pairs = Vec::with_capacity(instances.len());
            let mut best_scores = Vec::with_capacity(instances.len());
            for (post, reference) in instances {
                let d = beam_search(post, vocab, &p, lm)?;
                best_scores.push(d.score);
                pairs.push((d.text, reference.clone()));
            }
            let wer = corpus_rate(pairs.iter().map(|(h, r)| (h.as_str(), r.as_str())), Unit::Word, None)?.rate;
            Ok(SweepRow { width, wer, best_scores })
        })
        .collect()
}

/// Two-column CSV: `width,wer_percent`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("width,wer_percent\n");
    for r in rows {
        s.push_str(&format!("{},{:.2}\n", r.width, r.wer));
    }
    s
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut s = format!("{:>10}  {:>8}\n", "Beam width", "WER %");
    for r in rows {
        s.push_str(&format!("{:>10}  {:>8.2}\n", r.width, r.wer));
    }
    s
}

const POSTERIOR_MAGIC: &[u8; 4] = b"VTPB";

/// Serializes `[T, V]` posteriors: magic, T, V (u32 LE), then row-major
/// f32 LE values.
pub fn posteriors_to_bytes<S: Scalar>(posteriors: &Tensor<S>) -> Result<Vec<u8>> {
    let (t, v) = match posteriors.shape() {
        [t, v] => (*t, *v),
        s => return Err(Error::Shape(format!("posteriors must be [T, V], got {s:?}"))),
    };
    let mut out = Vec::with_capacity(12 + 4 * t * v);
    out.extend_from_slice(POSTERIOR_MAGIC);
    put_u32(&mut out, t as u32);
    put_u32(&mut out, v as u32);
    for x in posteriors.data() {
        out.extend_from_slice(&(x.to_f32().unwrap()).to_le_bytes());
    }
    Ok(out)
}

pub fn posteriors_from_bytes(bytes: &[u8]) -> Result<Tensor<f32>> {
    let mut r = ByteReader::new(bytes, "posterior file");
    r.expect_magic(POSTERIOR_MAGIC)?;
    let t = r.u32()? as usize;
    let v = r.u32()? as usize;
    if t == 0 || v < 2 {
        return Err(r.error(format!("invalid dimensions T={t} V={v}")));
    }
    let mut data = Vec::with_capacity(t * v);
    for _ in 0..t * v {
        data.push(r.f32()?);
    }
    if !r.is_at_end() {
        return Err(r.error("trailing bytes"));
    }
    Tensor::new(vec![t, v], data)
}

pub fn write_posteriors<S: Scalar>(path: &Path, posteriors: &Tensor<S>) -> Result<()> {
    write_atomic(path, &posteriors_to_bytes(posteriors)?)
}

pub fn read_posteriors(path: &Path) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    posteriors_from_bytes(&bytes)
}

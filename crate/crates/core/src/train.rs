//! Training with Adam on the mean CTC loss, bit-exact checkpoints and
//! evaluation reports with and without language-model fusion.

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ctc::{ctc_logit_grad, required_frames};
use crate::dataio::{mirror, Sample};
use crate::decoder::{beam_search, DecodeParams};
use crate::error::{Error, Result};
use crate::lm::NGramLm;
use crate::metrics::{corpus_rate, Lexicon, OovPolicy, Unit};
use crate::model::{Model, ModelConfig};
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;
use crate::util::{put_bytes, put_u32, put_u64, write_atomic, ByteReader};
use crate::vocab::Vocab;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub steps_per_epoch: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Write a checkpoint every this many steps; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Rescale gradients whose global L2 norm exceeds this value. Off when
    /// `None`.
    pub grad_clip: Option<f64>,
    /// Add a horizontally mirrored copy of every training clip.
    pub mirror: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            steps_per_epoch: 100,
            epochs: 10,
            seed: 0,
            checkpoint_every: 0,
            grad_clip: None,
            mirror: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.epsilon > 0.0) {
            return Err(Error::InvalidArgument("learning_rate and epsilon must be positive".into()));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::InvalidArgument("Adam betas must be in [0, 1)".into()));
        }
        if self.steps_per_epoch == 0 {
            return Err(Error::InvalidArgument("steps_per_epoch must be >= 1".into()));
        }
        if matches!(self.grad_clip, Some(c) if c.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater)) {
            return Err(Error::InvalidArgument("grad_clip must be positive".into()));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> u64 {
        (self.steps_per_epoch * self.epochs) as u64
    }
}

/// First and second moment estimates, one tensor per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<S> {
    pub m: Vec<Tensor<S>>,
    pub v: Vec<Tensor<S>>,
    /// Number of updates applied.
    pub t: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &[&Tensor<S>]) -> Self {
        AdamState {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. Returns `false`, leaving everything
/// untouched, when any gradient is non-finite.
pub fn adam_step<S: Scalar>(
    params: &mut [&mut Tensor<S>],
    grads: &[Tensor<S>],
    state: &mut AdamState<S>,
    config: &TrainConfig,
) -> Result<bool> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam: {} parameters, {} gradients, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::Shape(format!("adam: parameter {:?} vs gradient {:?}", p.shape(), g.shape())));
        }
    }
    if !grads.iter().all(Tensor::all_finite) {
        return Ok(false);
    }
    state.t += 1;
    let (b1, b2): (S, S) = (lit(config.beta1), lit(config.beta2));
    let t = state.t as i32;
    let c1 = S::one() - b1.powi(t);
    let c2 = S::one() - b2.powi(t);
    let (lr, eps): (S, S) = (lit(config.learning_rate), lit(config.epsilon));
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let pd = p.data_mut();
        for (i, &gi) in g.data().iter().enumerate() {
            let mi = &mut m.data_mut()[i];
            *mi = b1 * *mi + (S::one() - b1) * gi;
            let vi = &mut v.data_mut()[i];
            *vi = b2 * *vi + (S::one() - b2) * gi * gi;
            let mhat = m.data()[i] / c1;
            let vhat = v.data()[i] / c2;
            pd[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(true)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    /// Training clips whose transcript cannot fit in the clip under CTC.
    pub skipped_unreachable: u64,
    /// Steps whose update was dropped because of a non-finite gradient.
    pub skipped_nonfinite: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub loss: f64,
    pub applied: bool,
}

/// Owns the model, optimizer state, the training pool and all random state.
pub struct Trainer<S> {
    pub model: Model<S>,
    pub config: TrainConfig,
    pub vocab: Vocab,
    pub adam: AdamState<S>,
    pub counters: Counters,
    /// `(step, mean loss)` for every completed step.
    pub loss_curve: Vec<(u64, f64)>,
    pool: Vec<Sample<S>>,
    dropout_rng: ChaCha8Rng,
    data_rng: ChaCha8Rng,
    order: Vec<u32>,
    cursor: usize,
    step: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    model: ModelConfig,
    train: TrainConfig,
    vocab: String,
    pool_size: usize,
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"VTCK";
const CHECKPOINT_VERSION: u32 = 1;

fn put_tensor<S: Scalar>(out: &mut Vec<u8>, t: &Tensor<S>) {
    put_u32(out, t.rank() as u32);
    for &d in t.shape() {
        put_u32(out, d as u32);
    }
    for &v in t.data() {
        v.write_le(out);
    }
}

fn read_tensor<S: Scalar>(r: &mut ByteReader, expect: &[usize]) -> Result<Tensor<S>> {
    let rank = r.u32()? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.u32()? as usize);
    }
    if shape != expect {
        return Err(r.error(format!("tensor shape {shape:?}, expected {expect:?}")));
    }
    let n: usize = shape.iter().product();
    let raw = r.take(n * S::BYTES as usize)?;
    let data = raw.chunks_exact(S::BYTES as usize).map(S::read_le).collect();
    Tensor::new(shape, data)
}

fn put_rng(out: &mut Vec<u8>, rng: &ChaCha8Rng) {
    out.extend_from_slice(&rng.get_seed());
    out.extend_from_slice(&rng.get_word_pos().to_le_bytes());
    put_u64(out, rng.get_stream());
}

fn read_rng(r: &mut ByteReader) -> Result<ChaCha8Rng> {
    let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
    let pos = r.u128()?;
    let stream = r.u64()?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(pos);
    Ok(rng)
}

impl<S: Scalar> Trainer<S> {
    /// Builds a trainer over `samples`. Mirrored copies are appended when
    /// configured; clips whose target needs more frames than the clip has
    /// are dropped and counted.
    pub fn new(model: Model<S>, config: TrainConfig, vocab: Vocab, samples: Vec<Sample<S>>) -> Result<Self> {
        config.validate()?;
        if vocab.size() != model.config.vocab_size {
            return Err(Error::InvalidArgument(format!(
                "vocabulary has {} outputs but the model has {}",
                vocab.size(),
                model.config.vocab_size
            )));
        }
        if samples.is_empty() {
            return Err(Error::Data("training split is empty".into()));
        }
        let frames = model.config.frames;
        let mut counters = Counters::default();
        let mut pool = Vec::with_capacity(samples.len() * 2);
        for s in samples {
            if required_frames(&s.target) > frames {
                log::warn!(
                    "clip '{}' needs {} frames for {:?} but has {frames}; skipped",
                    s.id,
                    required_frames(&s.target),
                    s.text
                );
                counters.skipped_unreachable += 1;
                continue;
            }
            pool.push(s);
        }
        if pool.is_empty() {
            return Err(Error::Data("no training clip has a reachable transcript".into()));
        }
        if config.mirror {
            let mirrored = pool
                .iter()
                .map(|s| {
                    Ok(Sample {
                        id: format!("{}#mirror", s.id),
                        input: mirror(&s.input)?,
                        text: s.text.clone(),
                        target: s.target.clone(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            pool.extend(mirrored);
        }
        let adam = AdamState::new(&model.params());
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
        dropout_rng.set_stream(1);
        let mut data_rng = ChaCha8Rng::seed_from_u64(config.seed);
        data_rng.set_stream(2);
        let mut order: Vec<u32> = (0..pool.len() as u32).collect();
        order.shuffle(&mut data_rng);
        Ok(Trainer {
            model,
            config,
            vocab,
            adam,
            counters,
            loss_curve: Vec::new(),
            pool,
            dropout_rng,
            data_rng,
            order,
            cursor: 0,
            step: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn pool_size(&self) -> usize {
        self.pool.len()
    }

    /// Next batch from a shuffled cyclic pass over the pool; the order is
    /// reshuffled whenever a pass is exhausted.
    fn next_batch(&mut self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.config.batch_size);
        while out.len() < self.config.batch_size {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.data_rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor] as usize);
            self.cursor += 1;
        }
        out
    }

    /// Runs one optimization step.
    pub fn step(&mut self) -> Result<StepReport> {
        let idx = self.next_batch();
        let n = idx.len();
        let clip_shape = self.pool[idx[0]].input.shape().to_vec();
        let per: usize = clip_shape.iter().product();
        let mut data = Vec::with_capacity(n * per);
        for &i in &idx {
            data.extend_from_slice(self.pool[i].input.data());
        }
        let mut shape = vec![n];
        shape.extend_from_slice(&clip_shape);
        let batch = Tensor::new(shape, data)?;
        let tape = self.model.forward_train(&batch, &mut self.dropout_rng)?;
        let [t_len, v] = [tape.probs.shape()[1], tape.probs.shape()[2]];
        let per_sample: Vec<Result<(S, Tensor<S>)>> = idx
            .par_iter()
            .enumerate()
            .map(|(b, &i)| {
                let probs = Tensor::new(
                    vec![t_len, v],
                    tape.probs.data()[b * t_len * v..(b + 1) * t_len * v].to_vec(),
                )?;
                ctc_logit_grad(&probs, &self.pool[i].target)
            })
            .collect();
        let inv_n = S::one() / S::from_usize(n).unwrap();
        let mut loss = S::zero();
        let mut grad = Vec::with_capacity(n * t_len * v);
        for r in per_sample {
            let (l, g) = r?;
            loss += l;
            grad.extend(g.data().iter().map(|&x| x * inv_n));
        }
        let loss = (loss * inv_n).to_f64().unwrap_or(f64::NAN);
        let grad = Tensor::new(vec![n, t_len, v], grad)?;
        let (_, mut grads) = self.model.backward_logits(&tape, &grad)?;
        if let Some(c) = self.config.grad_clip {
            let norm = grads.iter().map(|g| g.dot(g)).sum::<S>().sqrt();
            let c: S = lit(c);
            if norm > c {
                for g in &mut grads {
                    g.scale(c / norm);
                }
            }
        }
        let applied = loss.is_finite() && {
            let mut params = self.model.params_mut();
            adam_step(&mut params, &grads, &mut self.adam, &self.config)?
        };
        if !applied {
            log::warn!("step {}: non-finite loss or gradient, update skipped", self.step);
            self.counters.skipped_nonfinite += 1;
        }
        let report = StepReport {
            step: self.step,
            loss,
            applied,
        };
        self.loss_curve.push((self.step, loss));
        self.step += 1;
        Ok(report)
    }

    /// Steps until `total_steps()` is reached, calling `on_step` after each.
    pub fn run(&mut self, mut on_step: impl FnMut(&Self, &StepReport) -> Result<()>) -> Result<()> {
        while self.step < self.config.total_steps() {
            let r = self.step()?;
            on_step(self, &r)?;
        }
        Ok(())
    }

    pub fn loss_csv(&self) -> String {
        let mut s = String::from("step,loss\n");
        for (step, loss) in &self.loss_curve {
            s.push_str(&format!("{step},{loss}\n"));
        }
        s
    }

    /// Serializes everything needed to continue training bit-exactly:
    /// configuration, step, parameters, batch norm running statistics, Adam
    /// moments, counters, random generator states and the data order.
    /// Values are stored at the trainer's native width.
    pub fn checkpoint_bytes(&self) -> Result<Vec<u8>> {
        let mut out = CHECKPOINT_MAGIC.to_vec();
        put_u32(&mut out, CHECKPOINT_VERSION);
        out.push(S::BYTES);
        let header = CheckpointHeader {
            model: self.model.config.clone(),
            train: self.config.clone(),
            vocab: self.vocab.chars().iter().collect(),
            pool_size: self.pool.len(),
        };
        put_bytes(&mut out, &serde_json::to_vec(&header)?);
        put_u64(&mut out, self.step);
        let params = self.model.params();
        put_u32(&mut out, params.len() as u32);
        for p in &params {
            put_tensor(&mut out, p);
        }
        let bns: Vec<_> = self.model.batchnorms().collect();
        put_u32(&mut out, bns.len() as u32);
        for bn in bns {
            out.push(bn.stats_initialized as u8);
            put_tensor(&mut out, &bn.running_mean);
            put_tensor(&mut out, &bn.running_var);
        }
        put_u64(&mut out, self.adam.t);
        for (m, v) in self.adam.m.iter().zip(&self.adam.v) {
            put_tensor(&mut out, m);
            put_tensor(&mut out, v);
        }
        put_u64(&mut out, self.counters.skipped_unreachable);
        put_u64(&mut out, self.counters.skipped_nonfinite);
        put_rng(&mut out, &self.dropout_rng);
        put_rng(&mut out, &self.data_rng);
        put_u32(&mut out, self.order.len() as u32);
        for &o in &self.order {
            put_u32(&mut out, o);
        }
        put_u64(&mut out, self.cursor as u64);
        put_u32(&mut out, self.loss_curve.len() as u32);
        for &(s, l) in &self.loss_curve {
            put_u64(&mut out, s);
            out.extend_from_slice(&l.to_le_bytes());
        }
        Ok(out)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.checkpoint_bytes()?)
    }

    /// Restores a trainer from checkpoint bytes. `samples` must be the same
    /// training clips the checkpointed trainer was built from.
    pub fn from_checkpoint(bytes: &[u8], samples: Vec<Sample<S>>) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "checkpoint");
        r.expect_magic(CHECKPOINT_MAGIC)?;
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(r.error(format!("unsupported checkpoint version {version}")));
        }
        let width = r.u8()?;
        if width != S::BYTES {
            return Err(r.error(format!(
                "checkpoint stores {width}-byte values but this trainer uses {}-byte values",
                S::BYTES
            )));
        }
        let header: CheckpointHeader = serde_json::from_slice(r.bytes()?)?;
        let model = Model::build(&header.model, 0)?;
        let mut t = Trainer::new(model, header.train, Vocab::new(&header.vocab)?, samples)?;
        if t.pool.len() != header.pool_size {
            return Err(Error::Data(format!(
                "checkpoint was trained on {} pooled clips, got {}",
                header.pool_size,
                t.pool.len()
            )));
        }
        t.step = r.u64()?;
        let n = r.u32()? as usize;
        let mut params = t.model.params_mut();
        if n != params.len() {
            return Err(r.error(format!("{n} parameter tensors, model has {}", params.len())));
        }
        for p in params.iter_mut() {
            **p = read_tensor(&mut r, &p.shape().to_vec())?;
        }
        let n = r.u32()? as usize;
        let mut bns: Vec<_> = t.model.batchnorms_mut().collect();
        if n != bns.len() {
            return Err(r.error(format!("{n} batch norm layers, model has {}", bns.len())));
        }
        for bn in bns.iter_mut() {
            bn.stats_initialized = r.u8()? != 0;
            let c = [bn.channels()];
            bn.running_mean = read_tensor(&mut r, &c)?;
            bn.running_var = read_tensor(&mut r, &c)?;
        }
        t.adam.t = r.u64()?;
        for i in 0..t.adam.m.len() {
            let shape = t.adam.m[i].shape().to_vec();
            t.adam.m[i] = read_tensor(&mut r, &shape)?;
            t.adam.v[i] = read_tensor(&mut r, &shape)?;
        }
        t.counters.skipped_unreachable = r.u64()?;
        t.counters.skipped_nonfinite = r.u64()?;
        t.dropout_rng = read_rng(&mut r)?;
        t.data_rng = read_rng(&mut r)?;
        let n = r.u32()? as usize;
        if n != t.pool.len() {
            return Err(r.error("data order length does not match the pool"));
        }
        t.order = (0..n).map(|_| r.u32()).collect::<Result<_>>()?;
        t.cursor = r.u64()? as usize;
        if t.cursor > n || t.order.iter().any(|&o| o as usize >= n) {
            return Err(r.error("data order out of range"));
        }
        let n = r.u32()? as usize;
        t.loss_curve = (0..n)
            .map(|_| Ok((r.u64()?, f64::from_le_bytes(r.take(8)?.try_into().unwrap()))))
            .collect::<Result<_>>()?;
        if !r.is_at_end() {
            return Err(r.error("trailing bytes"));
        }
        Ok(t)
    }

    pub fn load_checkpoint(path: &Path, samples: Vec<Sample<S>>) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(&bytes, samples)
    }
}

/// Reads only the model from a checkpoint, for inference.
pub fn load_model<S: Scalar>(bytes: &[u8]) -> Result<(Model<S>, Vocab)> {
    let mut r = ByteReader::new(bytes, "checkpoint");
    r.expect_magic(CHECKPOINT_MAGIC)?;
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(r.error(format!("unsupported checkpoint version {version}")));
    }
    let width = r.u8()?;
    let header: CheckpointHeader = serde_json::from_slice(r.bytes()?)?;
    r.u64()?;
    let mut model = Model::<S>::build(&header.model, 0)?;
    let n = r.u32()? as usize;
    let mut params = model.params_mut();
    if n != params.len() {
        return Err(r.error(format!("{n} parameter tensors, model has {}", params.len())));
    }
    for p in params.iter_mut() {
        let shape = p.shape().to_vec();
        **p = match width {
            4 => read_tensor::<f32>(&mut r, &shape)?.cast(),
            8 => read_tensor::<f64>(&mut r, &shape)?.cast(),
            w => return Err(r.error(format!("unknown value width {w}"))),
        };
    }
    let n = r.u32()? as usize;
    let mut bns: Vec<_> = model.batchnorms_mut().collect();
    if n != bns.len() {
        return Err(r.error(format!("{n} batch norm layers, model has {}", bns.len())));
    }
    for bn in bns.iter_mut() {
        bn.stats_initialized = r.u8()? != 0;
        let c = [bn.channels()];
        for dst in [&mut bn.running_mean, &mut bn.running_var] {
            *dst = match width {
                4 => read_tensor::<f32>(&mut r, &c)?.cast(),
                _ => read_tensor::<f64>(&mut r, &c)?.cast(),
            };
        }
    }
    Ok((model, Vocab::new(&header.vocab)?))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub label: String,
    pub dataset: String,
    /// Percentages; PER is absent when no lexicon was supplied.
    pub per: Option<f64>,
    pub cer: f64,
    pub wer: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub utterances: usize,
    pub decode: DecodeParams,
    /// `(id, reference, without LM, with LM)` per clip.
    pub hypotheses: Vec<(String, String, String, String)>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dw = self.rows.iter().map(|r| r.dataset.len()).max().unwrap_or(0).max(7);
        writeln!(f, "{:<20} | {:<dw$} | {:>6} | {:>6} | {:>6}", "Dictionary", "Dataset", "PER %", "CER %", "WER %")?;
        writeln!(f, "{}", "-".repeat(20 + dw + 3 * 9 + 3))?;
        for r in &self.rows {
            let per = r.per.map_or("-".to_string(), |p| format!("{p:.1}"));
            writeln!(
                f,
                "{:<20} | {:<dw$} | {:>6} | {:>6.1} | {:>6.1}",
                r.label, r.dataset, per, r.cer, r.wer
            )?;
        }
        Ok(())
    }
}

/// Decodes every clip without and with language-model fusion and pools
/// PER, CER and WER over the set. `params.alpha` is the fusion weight of the
/// second row. PER needs `lexicon`; when `want_per` is false it is omitted.
#[allow(clippy::too_many_arguments)]
pub fn evaluate<S: Scalar>(
    model: &Model<S>,
    samples: &[Sample<S>],
    vocab: &Vocab,
    params: &DecodeParams,
    lm: &NGramLm,
    lexicon: Option<&Lexicon>,
    want_per: bool,
    dataset: &str,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Data("evaluation split is empty".into()));
    }
    if want_per && lexicon.is_none() {
        return Err(Error::InvalidArgument("PER requested but no lexicon was given".into()));
    }
    let without = params.without_lm();
    let decoded: Vec<Result<(String, String)>> = samples
        .par_iter()
        .map(|s| {
            let post = model.infer(&s.input)?;
            let a = beam_search(&post, vocab, &without, None)?;
            let b = beam_search(&post, vocab, params, Some(lm))?;
            Ok((a.text, b.text))
        })
        .collect();
    let mut hyps = Vec::with_capacity(samples.len());
    for (s, d) in samples.iter().zip(decoded) {
        let (a, b) = d?;
        hyps.push((s.id.clone(), s.text.clone(), a, b));
    }
    let row = |label: &str, pick: &dyn Fn(&(String, String, String, String)) -> &str| -> Result<ReportRow> {
        let pairs = || hyps.iter().map(|h| (pick(h), h.1.as_str()));
        let per = match (want_per, lexicon) {
            (true, Some(l)) => Some(corpus_rate(pairs(), Unit::Phoneme, Some((l, OovPolicy::Strict)))?.rate),
            _ => None,
        };
        Ok(ReportRow {
            label: label.into(),
            dataset: dataset.into(),
            per,
            cer: corpus_rate(pairs(), Unit::Char, None)?.rate,
            wer: corpus_rate(pairs(), Unit::Word, None)?.rate,
        })
    };
    let rows = vec![
        row("Phrases without LM", &|h| h.2.as_str())?,
        row("Phrases with LM", &|h| h.3.as_str())?,
    ];
    Ok(EvalReport {
        rows,
        utterances: samples.len(),
        decode: params.clone(),
        hypotheses: hyps,
    })
}

//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use vtrec::ctc::{ctc_brute_force, ctc_grad, ctc_logit_grad, ctc_loss, required_frames};
use vtrec::dataio::{load_split, synth_generate, Dataset, Manifest, Split, SynthConfig};
use vtrec::decoder::{beam_search, exhaustive_decode, greedy_decode, DecodeParams};
use vtrec::layers::{relu, relu_backward, softmax, softmax_backward, BatchNorm, BiGru, Conv3d, GruCell, Linear, MaxPool3d};
use vtrec::lm::NGramLm;
use vtrec::metrics::{corpus_rate, edit_distance, Lexicon, Unit};
use vtrec::model::{Model, ModelConfig};
use vtrec::saliency::{export_heatmaps, input_gradient, saliency};
use vtrec::train::{evaluate, TrainConfig, Trainer};
use vtrec::vocab::Vocab;
use vtrec::vtgeom::{
    nedm, nedm_report, Boundary, BoundaryFrame, Emotion, Point, Production, Region, SubRegionSpec, GRIDLINES,
};
use vtrec::Tensor;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- 1

const LAYER_TOL: f64 = 1e-4;
const CTC_TOL: f64 = 1e-5;
const INSTANCES: usize = 20;
const EPS: f64 = 1e-6;

fn weighted_sum(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Runs `INSTANCES` checks and returns the worst relative error.
fn worst(mut one: impl FnMut(&mut ChaCha8Rng) -> Result<f64, String>, seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w: f64 = 0.0;
    for _ in 0..INSTANCES {
        w = w.max(one(&mut rng)?);
    }
    Ok(w)
}

fn conv_instance(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let (ci, co) = (rng.random_range(1..=2), rng.random_range(1..=3));
    let k = [rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=3)];
    let pads = [rng.random_range(0..=1), rng.random_range(0..=1), rng.random_range(0..=1)];
    let strides = [1, rng.random_range(1..=2), rng.random_range(1..=2)];
    let x = random_tensor(&[2, 3, 5, 5, ci], rng);
    let w = random_tensor(&[co, ci, k[0], k[1], k[2]], rng);
    let b = random_tensor(&[co], rng);
    let make = |w: &Tensor<f64>, b: &Tensor<f64>| Conv3d::new(w.clone(), b.clone(), pads, strides).unwrap();
    let conv = make(&w, &b);
    let y = conv.forward(&x).map_err(e2s)?;
    let r = random_tensor(y.shape(), rng);
    let g = conv.backward(&x, &r).map_err(e2s)?;
    let num = numeric_grad(&[x, w, b], EPS, |v| weighted_sum(&make(&v[1], &v[2]).forward(&v[0]).unwrap(), &r));
    Ok(relative_error(&[g.input, g.weight, g.bias], &num))
}

fn batchnorm_instance(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let c = rng.random_range(1..=3);
    let x = random_tensor(&[2, 3, 2, 2, c], rng);
    let gamma = random_tensor(&[c], rng);
    let beta = random_tensor(&[c], rng);
    let make = |g: &Tensor<f64>, b: &Tensor<f64>| {
        let mut bn = BatchNorm::new(c, 0.9, 1e-5).unwrap();
        bn.gamma = g.clone();
        bn.beta = b.clone();
        bn
    };
    let bn = make(&gamma, &beta);
    let (y, cache, _) = bn.forward_batch(&x).map_err(e2s)?;
    let r = random_tensor(y.shape(), rng);
    let g = bn.backward(&cache, &r).map_err(e2s)?;
    let num = numeric_grad(&[x, gamma, beta], EPS, |v| {
        weighted_sum(&make(&v[1], &v[2]).forward_batch(&v[0]).unwrap().0, &r)
    });
    Ok(relative_error(&[g.input, g.gamma, g.beta], &num))
}

fn maxpool_instance(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    // Distinct values 0.01 apart so no perturbation changes a window's max.
    let shape = [1, 2, 4, 4, 2];
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 - 0.3).collect();
    for i in (1..n).rev() {
        vals.swap(i, rng.random_range(0..=i));
    }
    let x = Tensor::new(shape.to_vec(), vals).map_err(e2s)?;
    let pool = MaxPool3d { window: [1, 2, 2] };
    let (y, arg) = pool.forward(&x).map_err(e2s)?;
    let r = random_tensor(y.shape(), rng);
    let g = MaxPool3d::backward(x.shape(), &arg, &r).map_err(e2s)?;
    let num = numeric_grad(&[x], EPS, |v| weighted_sum(&pool.forward(&v[0]).unwrap().0, &r));
    Ok(relative_error(&[g], &num))
}

fn relu_instance(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let x = Tensor::from_fn(&[3, 4, 5], |_| {
        let v: f64 = rng.random_range(0.001..1.0);
        if rng.random_bool(0.5) {
            v
        } else {
            -v
        }
    });
    let r = random_tensor(x.shape(), rng);
    let g = relu_backward(&x, &r).map_err(e2s)?;
    let num = numeric_grad(&[x], EPS, |v| weighted_sum(&relu(&v[0]), &r));
    Ok(relative_error(&[g], &num))
}

fn gru_instance(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let (n, t, f, h) = (2, rng.random_range(1..=4), rng.random_range(1..=3), rng.random_range(1..=3));
    let x = random_tensor(&[n, t, f], rng);
    let ps: Vec<Tensor<f64>> = (0..2)
        .flat_map(|_| [random_tensor(&[3 * h, f], rng), random_tensor(&[3 * h, h], rng), random_tensor(&[3 * h], rng)])
        .collect();
    let make = |p: &[Tensor<f64>]| {
        BiGru::new(
            GruCell::new(p[0].clone(), p[1].clone(), p[2].clone()).unwrap(),
            GruCell::new(p[3].clone(), p[4].clone(), p[5].clone()).unwrap(),
        )
        .unwrap()
    };
    let gru = make(&ps);
    let (y, cache) = gru.forward(&x).map_err(e2s)?;
    let r = random_tensor(y.shape(), rng);
    let g = gru.backward(&x, &cache, &r).map_err(e2s)?;
    let mut inputs = vec![x];
    inputs.extend(ps);
    let num = numeric_grad(&inputs, EPS, |v| weighted_sum(&make(&v[1..]).forward(&v[0]).unwrap().0, &r));
    let analytic = [g.input, g.fwd.w, g.fwd.u, g.fwd.b, g.bwd.w, g.bwd.u, g.bwd.b];
    Ok(relative_error(&analytic, &num))
}

fn linear_softmax_instance(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let (fi, fo) = (rng.random_range(1..=5), rng.random_range(2..=5));
    let x = random_tensor(&[2, 3, fi], rng);
    let w = random_tensor(&[fo, fi], rng);
    let b = random_tensor(&[fo], rng);
    let make = |w: &Tensor<f64>, b: &Tensor<f64>| Linear::new(w.clone(), b.clone()).unwrap();
    let lin = make(&w, &b);
    let y = softmax(&lin.forward(&x).map_err(e2s)?);
    let r = random_tensor(y.shape(), rng);
    let gl = softmax_backward(&y, &r).map_err(e2s)?;
    let g = lin.backward(&x, &gl).map_err(e2s)?;
    let num = numeric_grad(&[x, w, b], EPS, |v| {
        weighted_sum(&softmax(&make(&v[1], &v[2]).forward(&v[0]).unwrap()), &r)
    });
    Ok(relative_error(&[g.input, g.weight, g.bias], &num))
}

fn random_target(t: usize, labels: usize, max_len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    loop {
        let len = rng.random_range(0..=max_len);
        let y: Vec<usize> = (0..len).map(|_| rng.random_range(0..labels)).collect();
        if required_frames(&y) <= t {
            return y;
        }
    }
}

fn ctc_instance(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let (t, v) = (rng.random_range(1..=6), rng.random_range(2..=5));
    let target = random_target(t, v - 1, 4, rng);
    let logits = random_tensor(&[t, v], rng);
    let (_, g) = ctc_logit_grad(&softmax(&logits), &target).map_err(e2s)?;
    let num = numeric_grad(&[logits.clone()], EPS, |x| ctc_loss(&softmax(&x[0]), &target).unwrap());
    let e1 = relative_error(&[g], &num);
    let post = softmax(&logits);
    let (_, gy) = ctc_grad(&post, &target).map_err(e2s)?;
    let num = numeric_grad(&[post], EPS, |x| ctc_loss(&x[0], &target).unwrap());
    Ok(e1.max(relative_error(&[gy], &num)))
}

fn criterion_1() -> Outcome {
    let checks: [(&str, fn(&mut ChaCha8Rng) -> Result<f64, String>, f64); 7] = [
        ("conv3d", conv_instance, LAYER_TOL),
        ("batchnorm", batchnorm_instance, LAYER_TOL),
        ("maxpool", maxpool_instance, LAYER_TOL),
        ("relu", relu_instance, LAYER_TOL),
        ("bi-gru", gru_instance, LAYER_TOL),
        ("linear+softmax", linear_softmax_instance, LAYER_TOL),
        ("ctc", ctc_instance, CTC_TOL),
    ];
    let mut parts = Vec::new();
    for (i, (name, f, tol)) in checks.into_iter().enumerate() {
        let w = worst(f, 100 + i as u64)?;
        ensure(w <= tol, || format!("{name}: relative error {w:.2e} > {tol:.0e}"))?;
        parts.push(format!("{name} {w:.1e}"));
    }
    Ok(format!("worst relative error over {INSTANCES} instances: {}", parts.join(", ")))
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let (t, v) = (rng.random_range(1..=8), rng.random_range(2..=4));
        let target = random_target(t, v - 1, 3, &mut rng);
        let post = random_posteriors(t, v, &mut rng);
        let dp = ctc_loss(&post, &target).map_err(e2s)?;
        let oracle = brute_force_nll(&post, &target);
        let lib = ctc_brute_force(&post, &target).map_err(e2s)?;
        worst = worst.max((dp - oracle).abs()).max((lib - oracle).abs());
    }
    ensure(worst <= 1e-10, || format!("max |dp - enumeration| = {worst:.2e}"))?;
    Ok(format!("200 instances, max |dp - enumeration| = {worst:.1e}"))
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let settings = [(Vocab::new("ab").unwrap(), 0.0), (Vocab::new("a ").unwrap(), 1.0)];
    let mut score_gap: f64 = 0.0;
    let mut monotone_violations = Vec::new();
    for i in 0..200 {
        let (vocab, beta) = &settings[i % 2];
        let t = rng.random_range(1..=6);
        let post = random_posteriors(t, 3, &mut rng);
        let full = DecodeParams {
            beam_width: (1 << (t + 1)) - 1,
            alpha: 0.0,
            beta: *beta,
        };
        let beam = beam_search(&post, vocab, &full, None).map_err(e2s)?;
        let exh = exhaustive_decode(&post, vocab, &full, None).map_err(e2s)?;
        let (oscore, olabels) = oracle_decode(&post, *beta, vocab.index_of(' '));
        score_gap = score_gap.max((beam.score - oscore).abs()).max((exh.score - oscore).abs());
        ensure(beam.labels == olabels && exh.labels == olabels, || {
            format!("instance {i}: beam {:?}, exhaustive {:?}, oracle {olabels:?}", beam.labels, exh.labels)
        })?;
        let mut prev = f64::NEG_INFINITY;
        for k in [1, 2, 4, 8] {
            let p = DecodeParams { beam_width: k, ..full.clone() };
            let s = beam_search(&post, vocab, &p, None).map_err(e2s)?.score;
            if s < prev - 1e-12 {
                monotone_violations.push(format!("instance {i} width {k}: {s} < {prev}"));
            }
            prev = prev.max(s);
        }
    }
    ensure(score_gap <= 1e-9, || format!("score mismatch {score_gap:.2e}"))?;
    ensure(monotone_violations.is_empty(), || {
        format!("best score decreased with width: {}", monotone_violations.join("; "))
    })?;
    Ok(format!("200 instances agree (max score gap {score_gap:.1e}); best score non-decreasing over widths 1,2,4,8"))
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Outcome {
    let table1: [(&str, &[usize]); 23] = [
        ("InputLayer", &[75, 64, 64, 1]),
        ("ZeroPadding3D", &[77, 68, 68, 1]),
        ("Conv3D", &[75, 32, 32, 32]),
        ("BatchNorm", &[75, 32, 32, 32]),
        ("Activation", &[75, 32, 32, 32]),
        ("Dropout", &[75, 32, 32, 32]),
        ("MaxPool3D", &[75, 16, 16, 32]),
        ("ZeroPadding3D", &[75, 20, 20, 32]),
        ("Conv3D", &[75, 16, 16, 64]),
        ("BatchNorm", &[75, 16, 16, 64]),
        ("Activation", &[75, 16, 16, 64]),
        ("Dropout", &[75, 16, 16, 64]),
        ("MaxPool3D", &[75, 8, 8, 64]),
        ("ZeroPadding3D", &[75, 10, 10, 64]),
        ("Conv3D", &[75, 8, 8, 96]),
        ("BatchNorm", &[75, 8, 8, 96]),
        ("Activation", &[75, 8, 8, 96]),
        ("Dropout", &[75, 8, 8, 96]),
        ("MaxPool3D", &[75, 4, 4, 96]),
        ("Bi-GRU", &[75, 512]),
        ("Bi-GRU", &[75, 512]),
        ("Linear", &[75, 28]),
        ("Softmax", &[75, 28]),
    ];
    let model = Model::<f32>::build(&ModelConfig::default(), 0).map_err(e2s)?;
    let rows = model.layer_shapes().map_err(e2s)?;
    ensure(rows.len() == table1.len(), || format!("{} rows, expected {}", rows.len(), table1.len()))?;
    for (i, ((name, shape), (ename, eshape))) in rows.iter().zip(table1).enumerate() {
        ensure(name == &ename && shape.as_slice() == eshape, || {
            format!("row {i}: {name} {shape:?}, expected {ename} {eshape:?}")
        })?;
    }
    Ok(format!("all {} rows match, final {:?}", rows.len(), rows.last().unwrap().1))
}

// ---------------------------------------------------------------- 5, 6, 9

fn synth_dataset(dir: &Path, cfg: &SynthConfig, n: usize, seed: u64) -> Result<(Manifest, Vocab, Lexicon, NGramLm), String> {
    let out = synth_generate(n, cfg, seed, dir).map_err(e2s)?;
    let manifest = Manifest::load(&out.manifest_path).map_err(e2s)?;
    let lexicon = Lexicon::load(&out.lexicon_path).map_err(e2s)?;
    let corpus = std::fs::read_to_string(&out.corpus_path).map_err(e2s)?;
    let lm = NGramLm::train(corpus.lines(), 5).map_err(e2s)?;
    Ok((manifest, cfg.vocab().map_err(e2s)?, lexicon, lm))
}

fn load(manifest: &Manifest, split: Split, vocab: &Vocab, cfg: &SynthConfig) -> Result<Dataset<f32>, String> {
    load_split(manifest, split, vocab, cfg.frames, cfg.height, cfg.width).map_err(e2s)
}

fn train_cer(model: &Model<f32>, ds: &Dataset<f32>, vocab: &Vocab) -> Result<f64, String> {
    let hyps = ds
        .samples
        .iter()
        .map(|s| Ok(greedy_decode(&model.infer(&s.input).map_err(e2s)?, vocab).map_err(e2s)?.text))
        .collect::<Result<Vec<_>, String>>()?;
    let pairs = hyps.iter().zip(&ds.samples).map(|(h, s)| (h.as_str(), s.text.as_str()));
    Ok(corpus_rate(pairs, Unit::Char, None).map_err(e2s)?.rate)
}

fn criterion_5() -> Outcome {
    let dir = tempfile::tempdir().map_err(e2s)?;
    let cfg = SynthConfig {
        test_speakers: 0,
        ..SynthConfig::default()
    };
    let (manifest, vocab, _, _) = synth_dataset(dir.path(), &cfg, 10, 1)?;
    let ds = load(&manifest, Split::Train, &vocab, &cfg)?;
    ensure(ds.samples.len() == 10, || format!("{} training clips", ds.samples.len()))?;
    // Overfitting measures capacity, so dropout is off.
    let mc = ModelConfig {
        dropout: 0.0,
        ..ModelConfig::tiny()
    };
    let model = Model::<f32>::build(&mc, 1).map_err(e2s)?;
    let tc = TrainConfig {
        batch_size: 10,
        mirror: false,
        steps_per_epoch: 100,
        epochs: 20,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(model, tc, vocab.clone(), ds.samples.clone()).map_err(e2s)?;
    let mut reached = None;
    while trainer.step_count() < 2000 {
        trainer.step().map_err(e2s)?;
        if trainer.step_count() % 100 == 0 {
            let cer = train_cer(&trainer.model, &ds, &vocab)?;
            if cer < 5.0 {
                reached = Some((trainer.step_count(), cer));
                break;
            }
        }
    }
    let (step, cer) = reached.ok_or_else(|| {
        format!(
            "train CER {:.1}% after 2000 steps",
            train_cer(&trainer.model, &ds, &vocab).unwrap_or(f64::NAN)
        )
    })?;
    Ok(format!("train CER {cer:.1}% at step {step}"))
}

fn criterion_6() -> Outcome {
    let mut with = Vec::new();
    let mut without = Vec::new();
    let mut layout_ok = true;
    for seed in 0..5u64 {
        let dir = tempfile::tempdir().map_err(e2s)?;
        let cfg = SynthConfig::default();
        let (manifest, vocab, lexicon, lm) = synth_dataset(dir.path(), &cfg, 48, 10 + seed)?;
        let train = load(&manifest, Split::Train, &vocab, &cfg)?;
        let test = load(&manifest, Split::Test, &vocab, &cfg)?;
        let model = Model::<f32>::build(&ModelConfig::tiny(), seed).map_err(e2s)?;
        let tc = TrainConfig {
            batch_size: 12,
            mirror: false,
            steps_per_epoch: 100,
            epochs: 3,
            seed,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(model, tc, vocab.clone(), train.samples).map_err(e2s)?;
        trainer.run(|_, _| Ok(())).map_err(e2s)?;
        let report = evaluate(
            &trainer.model,
            &test.samples,
            &vocab,
            &DecodeParams::default(),
            &lm,
            Some(&lexicon),
            true,
            "synthetic",
        )
        .map_err(e2s)?;
        let text = report.to_string();
        layout_ok &= report.rows.len() == 2
            && text.contains("Phrases without LM")
            && text.contains("Phrases with LM")
            && ["PER %", "CER %", "WER %"].iter().all(|h| text.contains(h))
            && report.rows.iter().all(|r| r.per.is_some());
        without.push(report.rows[0].wer);
        with.push(report.rows[1].wer);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mw, mo) = (mean(&with), mean(&without));
    ensure(layout_ok, || "report is missing an error-rate row or column".into())?;
    ensure(mw <= mo, || format!("mean WER with LM {mw:.2}% > without {mo:.2}% (per seed with {with:?}, without {without:?})"))?;
    Ok(format!("mean WER over 5 seeds: with LM {mw:.2}%, without {mo:.2}%"))
}

/// synth -> train 50 steps -> checkpoint -> eval -> saliency, returning
/// every produced file's bytes.
fn pipeline(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let cfg = SynthConfig::default();
    let (manifest, vocab, lexicon, lm) = synth_dataset(&dir.join("data"), &cfg, 24, 9)?;
    let train = load(&manifest, Split::Train, &vocab, &cfg)?;
    let test = load(&manifest, Split::Test, &vocab, &cfg)?;
    let model = Model::<f32>::build(&ModelConfig::tiny(), 9).map_err(e2s)?;
    let tc = TrainConfig {
        batch_size: 8,
        steps_per_epoch: 50,
        epochs: 1,
        seed: 9,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(model, tc, vocab.clone(), train.samples).map_err(e2s)?;
    trainer.run(|_, _| Ok(())).map_err(e2s)?;
    let ckpt = dir.join("model.vtck");
    trainer.save_checkpoint(&ckpt).map_err(e2s)?;
    let report = evaluate(&trainer.model, &test.samples, &vocab, &DecodeParams::default(), &lm, Some(&lexicon), true, "synthetic")
        .map_err(e2s)?;
    let clip = &test.samples[0];
    let decoded = beam_search(&trainer.model.infer(&clip.input).map_err(e2s)?, &vocab, &DecodeParams::default(), Some(&lm))
        .map_err(e2s)?;
    let map = saliency(&trainer.model, &clip.input, &decoded.labels).map_err(e2s)?;
    let images = export_heatmaps(&map, &clip.input, &dir.join("saliency"), &clip.id).map_err(e2s)?;
    let mut files = vec![
        ("checkpoint".to_string(), std::fs::read(&ckpt).map_err(e2s)?),
        ("report.txt".to_string(), report.to_string().into_bytes()),
        ("report.json".to_string(), report.to_json().map_err(e2s)?.into_bytes()),
        ("loss.csv".to_string(), trainer.loss_csv().into_bytes()),
    ];
    for p in images {
        files.push((p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).map_err(e2s)?));
    }
    Ok(files)
}

fn criterion_9() -> Outcome {
    let a = tempfile::tempdir().map_err(e2s)?;
    let b = tempfile::tempdir().map_err(e2s)?;
    let first = pipeline(a.path())?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().map_err(e2s)?;
    let second = pool.install(|| pipeline(b.path()))?;
    ensure(first.len() == second.len(), || "different number of outputs".into())?;
    for ((na, ba), (_, bb)) in first.iter().zip(&second) {
        ensure(ba == bb, || format!("{na} differs between runs"))?;
    }
    Ok(format!("{} output files byte-identical across two runs (default and 3-thread pools)", first.len()))
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let word = |rng: &mut ChaCha8Rng| -> Vec<u8> { (0..rng.random_range(0..8)).map(|_| rng.random_range(b'a'..b'e')).collect() };
    for _ in 0..1000 {
        let (x, y, z) = (word(&mut rng), word(&mut rng), word(&mut rng));
        let d = |a: &[u8], b: &[u8]| edit_distance(a, b).distance;
        ensure(d(&x, &x) == 0, || format!("d(x,x) != 0 for {x:?}"))?;
        ensure((d(&x, &y) == 0) == (x == y), || format!("identity of indiscernibles fails for {x:?}, {y:?}"))?;
        ensure(d(&x, &y) == d(&y, &x), || format!("asymmetric for {x:?}, {y:?}"))?;
        ensure(d(&x, &z) <= d(&x, &y) + d(&y, &z), || format!("triangle inequality fails for {x:?}, {y:?}, {z:?}"))?;
        ensure(d(&x, &y) <= x.len().max(y.len()), || "distance exceeds the longer length".into())?;
    }
    let k = edit_distance(b"kitten", b"sitting").distance;
    ensure(k == 3, || format!("kitten -> sitting = {k}"))?;
    let pooled = corpus_rate([("a b c", "a b d"), ("x", "y z")], Unit::Word, None).map_err(e2s)?;
    ensure((pooled.rate - 60.0).abs() < 1e-12 && pooled.reference_units == 5, || {
        format!("pooled WER {} over {} words, expected 60% over 5", pooled.rate, pooled.reference_units)
    })?;
    Ok("metric axioms on 1000 random triples; kitten->sitting = 3; pooled WER fixture 60%".into())
}

// ---------------------------------------------------------------- 8

fn random_frame(rng: &mut ChaCha8Rng) -> BoundaryFrame<f64> {
    let pts = |rng: &mut ChaCha8Rng, r: f64| -> Vec<Point<f64>> {
        (0..GRIDLINES)
            .map(|g| {
                let a = std::f64::consts::PI * g as f64 / (GRIDLINES - 1) as f64;
                let rr = r + rng.random_range(-1.0..1.0);
                Point::new(rr * a.cos() + 30.0, rr * a.sin() + 40.0)
            })
            .collect()
    };
    let lower = pts(rng, 12.0);
    let upper = pts(rng, 20.0);
    BoundaryFrame::new(lower, upper).unwrap()
}

fn production(id: &str, word: &str, emotion: Emotion, speaker: &str, gender: &str, frames: Vec<BoundaryFrame<f64>>) -> Production<f64> {
    Production {
        id: id.into(),
        word: word.into(),
        emotion,
        speaker: speaker.into(),
        gender: gender.into(),
        frames,
    }
}

fn criterion_8() -> Outcome {
    let spec = SubRegionSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let frames = |rng: &mut ChaCha8Rng, n: usize| (0..n).map(|_| random_frame(rng)).collect::<Vec<_>>();
    // Identity.
    let n = production("n", "clock", Emotion::Neutral, "s", "male", frames(&mut rng, 5));
    let r = nedm(&n, &n, &spec).map_err(e2s)?;
    ensure(r.values.iter().flatten().all(|&v| v == 0.0), || format!("NEDM(n, n) = {:?}", r.values))?;
    // Uniform scaling about the centroid by 2 doubles every distance.
    let scaled: Vec<_> = n
        .frames
        .iter()
        .map(|f| {
            let c = vtrec::vtgeom::centroid(f);
            f.map(|p| Point::new(c.x + 2.0 * (p.x - c.x), c.y + 2.0 * (p.y - c.y)))
        })
        .collect();
    let e = production("e", "clock", Emotion::Happy, "s", "male", scaled);
    let r = nedm(&n, &e, &spec).map_err(e2s)?;
    let expected = [17.0, 51.0, 11.0, 7.0];
    for region in Region::ALL {
        for b in Boundary::ALL {
            let v = r.get(region, b);
            let l = expected[region as usize];
            ensure((v - l).abs() <= 1e-9, || format!("{region:?}/{b:?}: {v}, expected {l}"))?;
        }
    }
    // Joint rigid motion and joint scaling.
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (ln, le) = (rng.random_range(1..6), rng.random_range(1..6));
        let n = production("n", "w", Emotion::Neutral, "s", "f", frames(&mut rng, ln));
        let e = production("e", "w", Emotion::Sad, "s", "f", frames(&mut rng, le));
        let base = nedm(&n, &e, &spec).map_err(e2s)?;
        let (th, tx, ty, k) = (
            rng.random_range(0.0..std::f64::consts::TAU),
            rng.random_range(-50.0..50.0),
            rng.random_range(-50.0..50.0),
            rng.random_range(0.2..5.0),
        );
        let (s, c) = th.sin_cos();
        let rigid = |p: Point<f64>| Point::new(c * p.x - s * p.y + tx, s * p.x + c * p.y + ty);
        let scale = |p: Point<f64>| Point::new(k * p.x, k * p.y);
        for f in [&rigid as &dyn Fn(Point<f64>) -> Point<f64>, &scale] {
            let tn = Production { frames: n.frames.iter().map(|fr| fr.map(f)).collect(), ..n.clone() };
            let te = Production { frames: e.frames.iter().map(|fr| fr.map(f)).collect(), ..e.clone() };
            let moved = nedm(&tn, &te, &spec).map_err(e2s)?;
            for (a, b) in base.values.iter().flatten().zip(moved.values.iter().flatten()) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    ensure(worst <= 1e-9, || format!("invariance error {worst:.2e}"))?;
    // Report layout: two words x two genders.
    let mut ps = Vec::new();
    for (word, spk, gender) in [("clock", "m1", "male"), ("clock", "f1", "female"), ("seat", "m1", "male"), ("seat", "f1", "female")] {
        for em in [Emotion::Neutral, Emotion::Happy, Emotion::Angry, Emotion::Sad] {
            ps.push(production(&format!("{word}-{spk}-{em:?}"), word, em, spk, gender, frames(&mut rng, 3)));
        }
    }
    let report = nedm_report(&ps, &spec).map_err(e2s)?;
    ensure(report.blocks.len() == 8, || format!("{} blocks, expected 8", report.blocks.len()))?;
    for b in &report.blocks {
        let emotions: Vec<Emotion> = b.rows.iter().map(|r| r.emotion).collect();
        ensure(emotions == [Emotion::Happy, Emotion::Angry, Emotion::Sad], || format!("rows {emotions:?}"))?;
        ensure(b.rows.iter().all(|r| r.values.is_some_and(|v| v.len() == 4)), || "missing region values".into())?;
    }
    let text = report.to_string();
    for header in ["Pharyngeal", "Velar and dorsal constriction", "Hard palate", "Labial constriction", "Clock (Male)", "Seat (Female)"] {
        ensure(text.contains(header), || format!("report lacks {header:?}"))?;
    }
    Ok(format!("identity exact, scaling fixture 17/51/11/7, invariance error {worst:.1e} on 100 traces, 8 blocks x 3 emotions x 4 regions"))
}

// ---------------------------------------------------------------- 10

fn criterion_10() -> Outcome {
    let vocab = Vocab::new("abc ").unwrap();
    let target = vocab.encode("ab c").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut zero = Model::<f64>::build(&ModelConfig::tiny(), 3).map_err(e2s)?;
    for p in zero.params_mut() {
        p.data_mut().fill(0.0);
    }
    let clip = Tensor::from_fn(&[8, 16, 16, 1], |_| rng.random_range(0.0..1.0));
    let map = saliency(&zero, &clip, &target).map_err(e2s)?;
    ensure(map.data().iter().all(|&v| v == 0.0), || "zero-weight model gave a non-zero map".into())?;

    let model = Model::<f64>::build(&ModelConfig::tiny(), 4).map_err(e2s)?;
    let (_, g) = input_gradient(&model, &clip, &target).map_err(e2s)?;
    let map = saliency(&model, &clip, &target).map_err(e2s)?;
    let max = map.data().iter().cloned().fold(0.0, f64::max);
    ensure(max == 1.0 && map.data().iter().all(|&v| (0.0..=1.0).contains(&v)), || format!("map max {max}"))?;
    let mut worst: f64 = 0.0;
    for trial in 0..3 {
        let idx: Vec<usize> = (0..10).map(|_| rng.random_range(0..clip.len())).collect();
        let (mut diff, mut norm) = (0.0, 0.0);
        let h = 1e-5;
        for &i in &idx {
            let mut up = clip.clone();
            up.data_mut()[i] += h;
            let mut down = clip.clone();
            down.data_mut()[i] -= h;
            let lu = -ctc_loss(&model.infer(&up).map_err(e2s)?, &target).map_err(e2s)?;
            let ld = -ctc_loss(&model.infer(&down).map_err(e2s)?, &target).map_err(e2s)?;
            let num = (lu - ld) / (2.0 * h);
            diff += (num - g.data()[i]).powi(2);
            norm += num.powi(2).max(g.data()[i].powi(2));
        }
        let rel = if norm == 0.0 { 0.0 } else { (diff / norm).sqrt() };
        ensure(rel <= 1e-4, || format!("trial {trial}: relative error {rel:.2e}"))?;
        worst = worst.max(rel);
    }
    let dir = tempfile::tempdir().map_err(e2s)?;
    let zero_map = Tensor::zeros(clip.shape());
    let files = export_heatmaps(&zero_map, &clip, dir.path(), "z").map_err(e2s)?;
    let bytes = std::fs::read(&files[0]).map_err(e2s)?;
    let header = format!("P6\n16 16\n255\n").into_bytes();
    let gray = (clip.data()[0] * 255.0).round() as u8;
    ensure(bytes.starts_with(&header) && bytes[header.len()..header.len() + 3] == [gray; 3], || {
        "zero map does not reproduce the plain frame".into()
    })?;
    Ok(format!("zero-weight map all zero; sampled gradient relative error {worst:.1e}"))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome, Duration); 10] = [
        (1, "gradient suite", criterion_1, Duration::from_secs(120)),
        (2, "CTC oracle", criterion_2, Duration::from_secs(60)),
        (3, "decoder oracle", criterion_3, Duration::from_secs(120)),
        (4, "architecture contract", criterion_4, Duration::from_secs(5)),
        (5, "overfit smoke test", criterion_5, Duration::from_secs(600)),
        (6, "LM ablation machinery", criterion_6, Duration::MAX),
        (7, "metrics", criterion_7, Duration::from_secs(30)),
        (8, "NEDM suite", criterion_8, Duration::from_secs(30)),
        (9, "determinism", criterion_9, Duration::MAX),
        (10, "saliency", criterion_10, Duration::MAX),
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, f, budget) in criteria {
        if !filter.is_empty() && !filter.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(msg) if elapsed > budget => Err(format!("{msg}; took {elapsed:.1?}, budget {budget:.0?}")),
            o => o,
        };
        match outcome {
            Ok(msg) => println!("PASS [{n:>2}] {name}: {msg} ({:.1}s)", elapsed.as_secs_f64()),
            Err(msg) => {
                failed += 1;
                println!("FAIL [{n:>2}] {name}: {msg} ({:.1}s)", elapsed.as_secs_f64());
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

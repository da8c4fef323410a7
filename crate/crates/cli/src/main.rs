mod config;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;
use vtrec::dataio::{self, Manifest, Sample, Split};
use vtrec::decoder;
use vtrec::lm::{normalize_text, NGramLm};
use vtrec::metrics::Lexicon;
use vtrec::model::Model;
use vtrec::train::{self, Trainer};
use vtrec::util::write_atomic;
use vtrec::vtgeom::{self, SubRegionSpec};
use vtrec::{saliency, Tensor};

use config::RunConfig;

/// Bad flags, config or arguments; maps to exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(
    name = "vtrec",
    version,
    about = "Lip-reading style recognition from vocal tract rtMRI clips"
)]
struct Cli {
    /// JSON run configuration; every key is optional and unknown keys are rejected [default: built-in settings]
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Seed overriding `train.seed` [default: from config, 0]
    #[arg(long, global = true, env = "VTREC_SEED")]
    seed: Option<u64>,

    /// Worker threads [default: number of CPUs]
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset, its language model and a matching config.json
    Synth {
        /// Number of clips
        #[arg(long, default_value_t = 100)]
        n: usize,
        /// Output directory
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Train a model on the training split
    Train {
        /// Continue from the checkpoint at `paths.checkpoint`
        #[arg(long, default_value_t = false)]
        resume: bool,
        /// Override `train.epochs` [default: from config, 10]
        #[arg(long)]
        epochs: Option<usize>,
        /// Override `train.steps_per_epoch` [default: from config, 100]
        #[arg(long)]
        steps_per_epoch: Option<usize>,
    },
    /// Decode a split without and with the language model and write the error-rate report
    Eval {
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Dataset name shown in the report
        #[arg(long, default_value = "synthetic")]
        dataset: String,
        /// Omit the PER column
        #[arg(long, default_value_t = false)]
        no_per: bool,
    },
    /// Decode one clip from the manifest or a saved posterior file
    Decode {
        /// Clip id from the manifest [default: none]
        #[arg(
            long,
            conflicts_with = "posteriors",
            required_unless_present = "posteriors"
        )]
        clip: Option<String>,
        /// Posterior file (VTPB) to decode instead of running the model [default: none]
        #[arg(long, value_name = "PATH")]
        posteriors: Option<PathBuf>,
        /// Also save the clip's posteriors to this file [default: not saved]
        #[arg(long, value_name = "PATH")]
        write_posteriors: Option<PathBuf>,
        /// Best-path decoding instead of beam search
        #[arg(long, default_value_t = false)]
        greedy: bool,
        /// Decode without the language model
        #[arg(long, default_value_t = false)]
        no_lm: bool,
    },
    /// Word error rate as a function of beam width
    Sweep {
        /// Comma-separated beam widths
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        widths: Vec<usize>,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Decode without the language model
        #[arg(long, default_value_t = false)]
        no_lm: bool,
    },
    /// Write input-gradient heatmaps of one clip as PPM frames
    Saliency {
        /// Clip id from the manifest
        #[arg(long)]
        clip: String,
        /// Target transcript [default: the clip's transcript]
        #[arg(long)]
        text: Option<String>,
    },
    /// Train a character n-gram language model from a text corpus
    LmTrain {
        /// One sentence per line [default: `paths.corpus`]
        #[arg(long, value_name = "PATH")]
        corpus: Option<PathBuf>,
        /// Model order [default: `lm_order`, 5]
        #[arg(long)]
        order: Option<usize>,
        /// Output file [default: `paths.lm`]
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Convert word durations to frame spans
    Align {
        /// Lines of `word duration_seconds`
        words: PathBuf,
        /// Frame rate
        #[arg(long, default_value_t = dataio::DEFAULT_FPS)]
        fps: f64,
        /// Also write the spans as JSON here [default: not written]
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Normalized Euclidean distance report of emotional against neutral productions
    Nedm {
        /// Boundary trace CSV
        traces: PathBuf,
        /// Directory for nedm.txt and nedm.csv [default: not written]
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", message(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

/// The cause chain joined by ": ", skipping causes already quoted by the
/// previous message.
fn message(e: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut prev = String::new();
    for cause in e.chain() {
        let m = cause.to_string();
        if !prev.contains(&m) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&m);
        }
        prev = m;
    }
    out
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if let Some(v) = cause.downcast_ref::<vtrec::Error>() {
            return if v.is_data_error() { 2 } else { 1 };
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return 2;
        }
    }
    1
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            bail!(UsageError("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
    }
    match cli.command {
        Command::Synth { n, out } => synth(cfg, n, &out),
        Command::Train {
            resume,
            epochs,
            steps_per_epoch,
        } => {
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(s) = steps_per_epoch {
                cfg.train.steps_per_epoch = s;
            }
            train_cmd(&cfg, resume)
        }
        Command::Eval {
            split,
            dataset,
            no_per,
        } => eval(&cfg, split.into(), &dataset, !no_per),
        Command::Decode {
            clip,
            posteriors,
            write_posteriors,
            greedy,
            no_lm,
        } => decode(&cfg, clip, posteriors, write_posteriors, greedy, no_lm),
        Command::Sweep {
            widths,
            split,
            no_lm,
        } => sweep(&cfg, &widths, split.into(), no_lm),
        Command::Saliency { clip, text } => saliency_cmd(&cfg, &clip, text),
        Command::LmTrain { corpus, order, out } => lm_train(&cfg, corpus, order, out),
        Command::Align { words, fps, out } => align(&words, fps, out),
        Command::Nedm { traces, out } => nedm(&traces, out),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn save_effective(cfg: &RunConfig) -> Result<()> {
    write_text(
        &cfg.paths.out_dir.join("effective_config.json"),
        &cfg.to_json()?,
    )
}

fn synth(cfg: RunConfig, n: usize, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let out = std::path::absolute(out)?;
    let generated = dataio::synth_generate(n, &cfg.synth, cfg.train.seed, &out)?;
    let corpus = std::fs::read_to_string(&generated.corpus_path)?;
    let run = cfg.for_synthetic(&out);
    let lm = NGramLm::train(corpus.lines(), run.lm_order)?;
    lm.save(&run.paths.lm)?;
    write_text(&out.join("config.json"), &run.to_json()?)?;
    log::info!(
        "wrote {} clips ({} train, {} test) and config.json to {}",
        generated.manifest.records.len(),
        generated.manifest.split(Split::Train).count(),
        generated.manifest.split(Split::Test).count(),
        out.display()
    );
    Ok(())
}

fn load_samples(
    cfg: &RunConfig,
    split: Split,
    vocab: &vtrec::vocab::Vocab,
) -> Result<Vec<Sample<f32>>> {
    let manifest = Manifest::load(&cfg.paths.manifest)?;
    let m = &cfg.model;
    let ds = dataio::load_split::<f32>(&manifest, split, vocab, m.frames, m.height, m.width)?;
    if ds.truncated > 0 {
        log::warn!("{} clips truncated to {} frames", ds.truncated, m.frames);
    }
    Ok(ds.samples)
}

fn train_cmd(cfg: &RunConfig, resume: bool) -> Result<()> {
    cfg.model.validate()?;
    cfg.train.validate()?;
    let vocab = cfg.vocab()?;
    let samples = load_samples(cfg, Split::Train, &vocab)?;
    let mut trainer = if resume {
        let mut t = Trainer::<f32>::load_checkpoint(&cfg.paths.checkpoint, samples)?;
        if t.config.epochs != cfg.train.epochs {
            log::info!("extending run to {} epochs", cfg.train.epochs);
        }
        t.config.epochs = cfg.train.epochs;
        t
    } else {
        let model = Model::<f32>::build(&cfg.model, cfg.train.seed)?;
        Trainer::new(model, cfg.train.clone(), vocab, samples)?
    };
    save_effective(cfg)?;
    log::info!(
        "training {} parameters on {} clips for {} steps",
        trainer.model.parameter_count(),
        trainer.pool_size(),
        trainer.config.total_steps()
    );
    let ckpt = cfg.paths.checkpoint.clone();
    let every = trainer.config.checkpoint_every as u64;
    let per_epoch = trainer.config.steps_per_epoch as u64;
    trainer.run(|t, r| {
        let done = r.step + 1;
        if done % per_epoch == 0 {
            let tail: Vec<f64> = t
                .loss_curve
                .iter()
                .filter(|&&(s, _)| s + per_epoch >= done)
                .map(|&(_, l)| l)
                .collect();
            let mean = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
            log::info!(
                "epoch {} (step {done}) mean loss {mean:.4}",
                done / per_epoch
            );
        }
        if every > 0 && done % every == 0 {
            t.save_checkpoint(&ckpt)?;
        }
        Ok(())
    })?;
    trainer.save_checkpoint(&ckpt)?;
    write_text(&cfg.paths.out_dir.join("loss.csv"), &trainer.loss_csv())?;
    let c = &trainer.counters;
    log::info!(
        "done: {} steps, skipped {} unreachable and {} non-finite batches; checkpoint {}",
        trainer.step_count(),
        c.skipped_unreachable,
        c.skipped_nonfinite,
        ckpt.display()
    );
    Ok(())
}

fn load_model(cfg: &RunConfig) -> Result<(Model<f32>, vtrec::vocab::Vocab, RunConfig)> {
    let path = &cfg.paths.checkpoint;
    let bytes = std::fs::read(path).map_err(|e| vtrec::Error::io(path, e))?;
    let (model, vocab) = train::load_model::<f32>(&bytes)?;
    let mut run = cfg.clone();
    run.model = model.config.clone();
    run.vocab = vocab.chars().iter().collect();
    Ok((model, vocab, run))
}

fn load_lm(cfg: &RunConfig) -> Result<NGramLm> {
    Ok(NGramLm::load(&cfg.paths.lm)?)
}

fn eval(cfg: &RunConfig, split: Split, dataset: &str, want_per: bool) -> Result<()> {
    let (model, vocab, run) = load_model(cfg)?;
    let samples = load_samples(&run, split, &vocab)?;
    let lm = load_lm(&run)?;
    let lexicon = if want_per {
        Some(Lexicon::load(&run.paths.lexicon)?)
    } else {
        None
    };
    let report = train::evaluate(
        &model,
        &samples,
        &vocab,
        &run.decode,
        &lm,
        lexicon.as_ref(),
        want_per,
        dataset,
    )?;
    let out = &run.paths.out_dir;
    write_text(&out.join("report.txt"), &report.to_string())?;
    write_text(&out.join("report.json"), &(report.to_json()? + "\n"))?;
    save_effective(&run)?;
    print!("{report}");
    Ok(())
}

#[derive(Serialize)]
struct DecodeOutput {
    source: String,
    text: String,
    score: f64,
    labels: Vec<usize>,
}

fn decode(
    cfg: &RunConfig,
    clip: Option<String>,
    posteriors: Option<PathBuf>,
    write_posteriors: Option<PathBuf>,
    greedy: bool,
    no_lm: bool,
) -> Result<()> {
    let (post, vocab, run, source) = match (clip, posteriors) {
        (Some(id), _) => {
            let (model, vocab, run) = load_model(cfg)?;
            let sample = find_clip(&run, &vocab, &id)?;
            (model.infer(&sample.input)?, vocab, run, id)
        }
        (None, Some(path)) => {
            let run = cfg.clone();
            let vocab = run.vocab()?;
            (
                decoder::read_posteriors(&path)?,
                vocab,
                run,
                path.display().to_string(),
            )
        }
        (None, None) => bail!(UsageError(
            "one of --clip or --posteriors is required".into()
        )),
    };
    if let Some(p) = &write_posteriors {
        decoder::write_posteriors(p, &post)?;
    }
    let d = if greedy {
        decoder::greedy_decode(&post, &vocab)?
    } else if no_lm || run.decode.alpha == 0.0 {
        decoder::beam_search(&post, &vocab, &run.decode.without_lm(), None)?
    } else {
        let lm = load_lm(&run)?;
        decoder::beam_search(&post, &vocab, &run.decode, Some(&lm))?
    };
    let out = DecodeOutput {
        source,
        text: d.text,
        score: d.score,
        labels: d.labels,
    };
    let stem = if greedy { "decode_greedy" } else { "decode" };
    write_text(
        &run.paths.out_dir.join(format!("{stem}.json")),
        &(serde_json::to_string_pretty(&out)? + "\n"),
    )?;
    save_effective(&run)?;
    println!("{}", out.text);
    Ok(())
}

fn find_clip(cfg: &RunConfig, vocab: &vtrec::vocab::Vocab, id: &str) -> Result<Sample<f32>> {
    for split in [Split::Train, Split::Test] {
        let samples = load_samples(cfg, split, vocab)?;
        if let Some(s) = samples.into_iter().find(|s| s.id == id) {
            return Ok(s);
        }
    }
    bail!(vtrec::Error::Data(format!(
        "clip '{id}' is not in {}",
        cfg.paths.manifest.display()
    )))
}

fn sweep(cfg: &RunConfig, widths: &[usize], split: Split, no_lm: bool) -> Result<()> {
    if widths.is_empty() || widths.contains(&0) {
        bail!(UsageError("--widths needs positive integers".into()));
    }
    let (model, vocab, run) = load_model(cfg)?;
    let samples = load_samples(&run, split, &vocab)?;
    let instances = {
        use rayon::prelude::*;
        samples
            .par_iter()
            .map(|s| Ok((model.infer(&s.input)?, s.text.clone())))
            .collect::<vtrec::Result<Vec<(Tensor<f32>, String)>>>()?
    };
    let lm = if no_lm || run.decode.alpha == 0.0 {
        None
    } else {
        Some(load_lm(&run)?)
    };
    let params = if lm.is_none() {
        run.decode.without_lm()
    } else {
        run.decode.clone()
    };
    let rows = decoder::width_sweep(&instances, widths, &params, &vocab, lm.as_ref())?;
    let out = &run.paths.out_dir;
    write_text(&out.join("sweep.csv"), &decoder::sweep_csv(&rows))?;
    let table = decoder::sweep_table(&rows);
    write_text(&out.join("sweep.txt"), &table)?;
    save_effective(&run)?;
    print!("{table}");
    Ok(())
}

fn saliency_cmd(cfg: &RunConfig, id: &str, text: Option<String>) -> Result<()> {
    let (model, vocab, run) = load_model(cfg)?;
    let sample = find_clip(&run, &vocab, id)?;
    let target = match text {
        Some(t) => vocab
            .encode(&normalize_text(&t))
            .map_err(|e| UsageError(format!("--text: {e}")))?,
        None => sample.target.clone(),
    };
    let map = saliency::saliency(&model, &sample.input, &target)?;
    let dir = run.paths.out_dir.join("saliency");
    let files = saliency::export_heatmaps(&map, &sample.input, &dir, id)?;
    save_effective(&run)?;
    log::info!("wrote {} heatmaps to {}", files.len(), dir.display());
    Ok(())
}

fn lm_train(
    cfg: &RunConfig,
    corpus: Option<PathBuf>,
    order: Option<usize>,
    out: Option<PathBuf>,
) -> Result<()> {
    let corpus = corpus.unwrap_or_else(|| cfg.paths.corpus.clone());
    let order = order.unwrap_or(cfg.lm_order);
    let out = out.unwrap_or_else(|| cfg.paths.lm.clone());
    let text = std::fs::read_to_string(&corpus).map_err(|e| vtrec::Error::io(&corpus, e))?;
    let lm = NGramLm::train(text.lines(), order)?;
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir)?;
    }
    lm.save(&out)?;
    log::info!(
        "order-{order} model with {} contexts written to {}",
        lm.context_count(),
        out.display()
    );
    Ok(())
}

fn parse_durations(text: &str, path: &Path) -> Result<Vec<(String, f64)>> {
    let mut words = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || {
            vtrec::Error::Data(format!(
                "{}:{}: expected `word duration_seconds`",
                path.display(),
                i + 1
            ))
        };
        let mut it = line.split_whitespace();
        let (Some(w), Some(d), None) = (it.next(), it.next(), it.next()) else {
            bail!(bad());
        };
        let d: f64 = d.parse().map_err(|_| bad())?;
        words.push((w.to_string(), d));
    }
    Ok(words)
}

fn align(path: &Path, fps: f64, out: Option<PathBuf>) -> Result<()> {
    if !(fps.is_finite() && fps > 0.0) {
        bail!(UsageError(format!("--fps must be positive, got {fps}")));
    }
    let text = std::fs::read_to_string(path).map_err(|e| vtrec::Error::io(path, e))?;
    let spans = dataio::align_words(&parse_durations(&text, path)?, fps)
        .map_err(|e| vtrec::Error::Data(format!("{}: {e}", path.display())))?;
    let mut table = format!(
        "{:<16} {:>10} {:>10} {:>12} {:>7}\n",
        "word", "start_s", "dur_s", "start_frame", "frames"
    );
    for s in &spans {
        table.push_str(&format!(
            "{:<16} {:>10.3} {:>10.3} {:>12} {:>7}\n",
            s.text, s.start_s, s.duration_s, s.start_frame, s.frames
        ));
    }
    if let Some(p) = out {
        write_text(&p, &(serde_json::to_string_pretty(&spans)? + "\n"))?;
    }
    print!("{table}");
    Ok(())
}

fn nedm(traces: &Path, out: Option<PathBuf>) -> Result<()> {
    let productions = vtgeom::read_trace_csv::<f64>(traces)?;
    let report = vtgeom::nedm_report(&productions, &SubRegionSpec::default())?;
    if let Some(dir) = out {
        write_text(&dir.join("nedm.txt"), &report.to_string())?;
        write_text(&dir.join("nedm.csv"), &report.to_csv())?;
    }
    print!("{report}");
    Ok(())
}

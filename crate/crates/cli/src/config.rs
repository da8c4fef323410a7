use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use vtrec::dataio::SynthConfig;
use vtrec::decoder::DecodeParams;
use vtrec::model::ModelConfig;
use vtrec::train::TrainConfig;
use vtrec::vocab::Vocab;

/// File locations. Relative paths in a config file are resolved against the
/// file's directory; built-in defaults against the working directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub manifest: PathBuf,
    pub lexicon: PathBuf,
    pub corpus: PathBuf,
    pub lm: PathBuf,
    pub checkpoint: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            manifest: "data/manifest.jsonl".into(),
            lexicon: "data/lexicon.txt".into(),
            corpus: "data/corpus.txt".into(),
            lm: "data/lm.vtlm".into(),
            checkpoint: "model.vtck".into(),
            out_dir: "out".into(),
        }
    }
}

impl Paths {
    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.manifest,
            &mut self.lexicon,
            &mut self.corpus,
            &mut self.lm,
            &mut self.checkpoint,
            &mut self.out_dir,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeParams,
    pub synth: SynthConfig,
    pub paths: Paths,
    /// Output characters in label order; the blank follows them.
    pub vocab: String,
    pub lm_order: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            decode: DecodeParams::default(),
            synth: SynthConfig::default(),
            paths: Paths::default(),
            vocab: "abcdefghijklmnopqrstuvwxyz ".into(),
            lm_order: 5,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            let mut cfg = RunConfig::default();
            cfg.paths.resolve(&std::env::current_dir()?);
            return Ok(cfg);
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| crate::UsageError(format!("config {}: {e}", path.display())))?;
        let base = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        cfg.paths.resolve(&std::path::absolute(base)?);
        Ok(cfg)
    }

    pub fn vocab(&self) -> Result<Vocab> {
        let v = Vocab::new(&self.vocab)?;
        if v.size() != self.model.vocab_size {
            bail!(crate::UsageError(format!(
                "vocab {:?} gives {} outputs but model.vocab_size is {}",
                self.vocab,
                v.size(),
                self.model.vocab_size
            )));
        }
        Ok(v)
    }

    /// Configuration matching a synthetic dataset written to `dir`.
    pub fn for_synthetic(&self, dir: &Path) -> RunConfig {
        let s = &self.synth;
        let mut cfg = self.clone();
        cfg.model = ModelConfig {
            frames: s.frames,
            height: s.height,
            width: s.width,
            vocab_size: s.alphabet.chars().count() + 2,
            ..if s.height == 16 && s.width == 16 {
                ModelConfig::tiny()
            } else {
                self.model.clone()
            }
        };
        cfg.vocab = format!("{} ", s.alphabet);
        cfg.paths = Paths {
            manifest: dir.join("manifest.jsonl"),
            lexicon: dir.join("lexicon.txt"),
            corpus: dir.join("corpus.txt"),
            lm: dir.join("lm.vtlm"),
            checkpoint: dir.join("model.vtck"),
            out_dir: dir.join("out"),
        };
        cfg
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

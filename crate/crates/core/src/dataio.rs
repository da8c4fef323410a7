//! Clip ingestion and preparation: JSON-lines manifests of 8-bit PGM frame
//! files, word-to-frame alignment, chunking into fixed-length clips, mirror
//! augmentation and a synthetic dataset generator.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ctc::required_frames;
use crate::error::{Error, Result};
use crate::lm::normalize_text;
use crate::metrics::Lexicon;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::util::write_atomic;
use crate::vocab::Vocab;

/// Frame rate of the source recordings in frames per second.
pub const DEFAULT_FPS: f64 = 23.18;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipRecord {
    pub id: String,
    /// Frame image paths, relative to the manifest's directory unless
    /// absolute.
    pub frames: Vec<String>,
    pub text: String,
    pub speaker: String,
    pub gender: String,
    pub split: Split,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub records: Vec<ClipRecord>,
    /// Directory relative frame paths are resolved against.
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ClipRecord = serde_json::from_str(line)
                .map_err(|e| Error::Data(format!("manifest line {}: {e}", i + 1)))?;
            records.push(rec);
        }
        let m = Manifest {
            records,
            base_dir: base_dir.to_path_buf(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new("")))
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r)?);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl()?.as_bytes())
    }

    /// Checks unique ids, normalized transcripts, non-empty frame lists and
    /// speaker-disjoint splits.
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        let mut speaker_split: BTreeMap<&str, Split> = BTreeMap::new();
        for r in &self.records {
            if !ids.insert(r.id.as_str()) {
                return Err(Error::Data(format!("duplicate clip id '{}'", r.id)));
            }
            if r.frames.is_empty() {
                return Err(Error::Data(format!("clip '{}' has no frames", r.id)));
            }
            if normalize_text(&r.text) != r.text {
                return Err(Error::Data(format!(
                    "clip '{}' transcript {:?} is not normalized (expected {:?})",
                    r.id,
                    r.text,
                    normalize_text(&r.text)
                )));
            }
            match speaker_split.get(r.speaker.as_str()) {
                Some(&s) if s != r.split => {
                    return Err(Error::Data(format!(
                        "speaker '{}' appears in both train and test splits",
                        r.speaker
                    )))
                }
                _ => {
                    speaker_split.insert(&r.speaker, r.split);
                }
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ClipRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn resolve(&self, frame: &str) -> PathBuf {
        let p = Path::new(frame);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

/// 8-bit grayscale image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

fn pgm_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        what: "PGM",
        offset,
        msg: msg.into(),
    }
}

/// Parses a binary (P5) graymap with maxval up to 255. Pixel values are
/// rescaled to 0..=255 when maxval is smaller.
pub fn parse_pgm(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(pgm_err(0, "missing P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for f in &mut fields {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(pgm_err(pos, "expected a header number"));
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| pgm_err(start, "header number out of range"))?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(pgm_err(pos, "zero image extent"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(pgm_err(pos, format!("maxval {maxval} unsupported (need 1..=255)")));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(pgm_err(pos, "expected whitespace after header"));
    }
    pos += 1;
    let n = width * height;
    if bytes.len() - pos < n {
        return Err(pgm_err(bytes.len(), format!("truncated raster: need {n} bytes, have {}", bytes.len() - pos)));
    }
    let raw = &bytes[pos..pos + n];
    let pixels = if maxval == 255 {
        raw.to_vec()
    } else {
        raw.iter()
            .map(|&v| ((v.min(maxval as u8) as usize * 255 + maxval / 2) / maxval) as u8)
            .collect()
    };
    Ok(GrayImage { width, height, pixels })
}

pub fn pgm_bytes(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    write_atomic(path, &pgm_bytes(img))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordSpan {
    pub text: String,
    pub start_s: f64,
    pub duration_s: f64,
    pub start_frame: usize,
    pub frames: usize,
}

impl WordSpan {
    pub fn end_frame(&self) -> usize {
        self.start_frame + self.frames
    }
}

/// Converts word durations to frame spans: each word gets
/// `round_half_up(duration * fps)` frames, at least one, and spans are laid
/// end to end from frame 0.
pub fn align_words(words: &[(String, f64)], fps: f64) -> Result<Vec<WordSpan>> {
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(Error::InvalidArgument(format!("fps must be positive, got {fps}")));
    }
    let mut out = Vec::with_capacity(words.len());
    let (mut t, mut frame) = (0.0, 0);
    for (text, d) in words {
        if !(*d > 0.0 && d.is_finite()) {
            return Err(Error::InvalidArgument(format!("word '{text}' has non-positive duration {d}")));
        }
        let frames = ((d * fps + 0.5).floor() as usize).max(1);
        out.push(WordSpan {
            text: text.clone(),
            start_s: t,
            duration_s: *d,
            start_frame: frame,
            frames,
        });
        t += d;
        frame += frames;
    }
    Ok(out)
}

/// A fixed-length model input.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip<S> {
    /// `[T, H, W, C]`; frames past `valid_frames` are zero.
    pub frames: Tensor<S>,
    pub text: String,
    pub valid_frames: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ClipStats {
    /// Words longer than the clip length that were cut.
    pub truncated_words: usize,
}

fn frame_slice<S: Scalar>(recording: &Tensor<S>, start: usize, count: usize, t_max: usize) -> Result<Tensor<S>> {
    let s = recording.shape();
    let per: usize = s[1..].iter().product();
    let mut data = vec![S::zero(); t_max * per];
    let n = count.min(t_max);
    data[..n * per].copy_from_slice(&recording.data()[start * per..(start + n) * per]);
    let mut shape = s.to_vec();
    shape[0] = t_max;
    Tensor::new(shape, data)
}

/// Groups consecutive whole words greedily into clips of at most `t_max`
/// frames, zero-padding each at the tail. A word longer than `t_max` becomes
/// its own clip, cut to `t_max` frames.
pub fn make_clips<S: Scalar>(
    recording: &Tensor<S>,
    alignment: &[WordSpan],
    t_max: usize,
) -> Result<(Vec<Clip<S>>, ClipStats)> {
    if recording.rank() != 4 {
        return Err(Error::Shape(format!("recording must be [F,H,W,C], got {:?}", recording.shape())));
    }
    let total = recording.shape()[0];
    if total == 0 || alignment.is_empty() {
        return Err(Error::Data("empty recording".into()));
    }
    if t_max == 0 {
        return Err(Error::InvalidArgument("clip length must be positive".into()));
    }
    let mut expected = alignment[0].start_frame;
    for w in alignment {
        if w.start_frame != expected {
            return Err(Error::Data(format!("word '{}' does not start where the previous one ended", w.text)));
        }
        expected = w.end_frame();
    }
    if expected > total {
        return Err(Error::Data(format!("alignment covers {expected} frames but the recording has {total}")));
    }
    let mut clips = Vec::new();
    let mut stats = ClipStats::default();
    let mut group: Vec<&WordSpan> = Vec::new();
    let flush = |group: &mut Vec<&WordSpan>, clips: &mut Vec<Clip<S>>| -> Result<()> {
        if let (Some(first), Some(last)) = (group.first(), group.last()) {
            let count = last.end_frame() - first.start_frame;
            clips.push(Clip {
                frames: frame_slice(recording, first.start_frame, count, t_max)?,
                text: group.iter().map(|w| w.text.as_str()).collect::<Vec<_>>().join(" "),
                valid_frames: count.min(t_max),
            });
        }
        group.clear();
        Ok(())
    };
    let mut used = 0;
    for w in alignment {
        if w.frames > t_max {
            flush(&mut group, &mut clips)?;
            log::warn!("word '{}' spans {} frames, truncated to {t_max}", w.text, w.frames);
            stats.truncated_words += 1;
            group.push(w);
            flush(&mut group, &mut clips)?;
            used = 0;
            continue;
        }
        if used + w.frames > t_max {
            flush(&mut group, &mut clips)?;
            used = 0;
        }
        group.push(w);
        used += w.frames;
    }
    flush(&mut group, &mut clips)?;
    Ok((clips, stats))
}

/// Reverses every frame along the width axis of a `[T, H, W, C]` tensor.
pub fn mirror<S: Scalar>(frames: &Tensor<S>) -> Result<Tensor<S>> {
    let s = frames.shape();
    if s.len() != 4 {
        return Err(Error::Shape(format!("mirror expects [T,H,W,C], got {s:?}")));
    }
    let (w, c) = (s[2], s[3]);
    let mut out = frames.clone();
    for row in out.data_mut().chunks_mut(w * c) {
        for x in 0..w / 2 {
            for k in 0..c {
                row.swap(x * c + k, (w - 1 - x) * c + k);
            }
        }
    }
    Ok(out)
}

/// One loaded clip with its encoded target.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<S> {
    pub id: String,
    /// `[T, H, W, 1]` with pixel values in `[0, 1]`.
    pub input: Tensor<S>,
    pub text: String,
    pub target: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset<S> {
    pub samples: Vec<Sample<S>>,
    /// Clips with more than `T` frames that were cut.
    pub truncated: usize,
}

/// Loads the records of one split as `[T, H, W, 1]` inputs, zero-padding
/// short clips and truncating long ones.
pub fn load_split<S: Scalar>(
    manifest: &Manifest,
    split: Split,
    vocab: &Vocab,
    frames: usize,
    height: usize,
    width: usize,
) -> Result<Dataset<S>> {
    let records: Vec<&ClipRecord> = manifest.split(split).collect();
    let loaded: Vec<Result<(Sample<S>, bool)>> = records
        .par_iter()
        .map(|r| {
            let text = normalize_text(&r.text);
            let target = vocab
                .encode(&text)
                .map_err(|e| Error::Data(format!("clip '{}': {e}", r.id)))?;
            let per = height * width;
            let mut data = vec![S::zero(); frames * per];
            for (t, f) in r.frames.iter().take(frames).enumerate() {
                let img = read_pgm(&manifest.resolve(f))?;
                if img.width != width || img.height != height {
                    return Err(Error::Data(format!(
                        "clip '{}' frame {t} is {}x{}, expected {width}x{height}",
                        r.id, img.width, img.height
                    )));
                }
                for (d, &p) in data[t * per..(t + 1) * per].iter_mut().zip(&img.pixels) {
                    *d = S::from_f64_lossy(p as f64 / 255.0);
                }
            }
            Ok((
                Sample {
                    id: r.id.clone(),
                    input: Tensor::new(vec![frames, height, width, 1], data)?,
                    text,
                    target,
                },
                r.frames.len() > frames,
            ))
        })
        .collect();
    let mut ds = Dataset::default();
    for item in loaded {
        let (s, cut) = item?;
        if cut {
            log::warn!("clip '{}' has more than {frames} frames; truncated", s.id);
            ds.truncated += 1;
        }
        ds.samples.push(s);
    }
    Ok(ds)
}

/// Settings of the synthetic dataset. Each character is drawn as a moving
/// Gaussian blob whose path depends on the character; a space is a blob at
/// the centre that grows over its span.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Letters used by the generated words (a subset of `a-z`).
    pub alphabet: String,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub speakers: usize,
    /// The last `test_speakers` speakers form the test split.
    pub test_speakers: usize,
    /// Size of the generated word list.
    pub words: usize,
    pub max_word_len: usize,
    pub min_char_frames: usize,
    /// Amplitude of uniform pixel noise.
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            alphabet: "abc".into(),
            frames: 8,
            height: 16,
            width: 16,
            speakers: 4,
            test_speakers: 1,
            words: 6,
            max_word_len: 3,
            min_char_frames: 2,
            noise: 0.05,
        }
    }
}

impl SynthConfig {
    /// Model vocabulary: the alphabet followed by a space.
    pub fn vocab(&self) -> Result<Vocab> {
        Vocab::new(&format!("{} ", self.alphabet))
    }

    pub fn validate(&self) -> Result<()> {
        if self.alphabet.is_empty() || !self.alphabet.chars().all(|c| c.is_ascii_lowercase()) {
            return Err(Error::InvalidArgument("synthetic alphabet must be non-empty lowercase a-z".into()));
        }
        self.vocab()?;
        if self.min_char_frames == 0 || self.frames < self.min_char_frames {
            return Err(Error::InvalidArgument("clip must hold at least one character span".into()));
        }
        if self.speakers == 0 || self.test_speakers >= self.speakers {
            return Err(Error::InvalidArgument("need at least one training speaker".into()));
        }
        if self.words == 0 || self.max_word_len == 0 || self.height < 4 || self.width < 4 {
            return Err(Error::InvalidArgument("words, max_word_len must be positive and frames at least 4x4".into()));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::InvalidArgument("noise must be in [0, 1]".into()));
        }
        Ok(())
    }

    fn max_chars(&self) -> usize {
        self.frames / self.min_char_frames
    }
}

/// Distinct words without adjacent repeated letters.
fn word_list(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<String> {
    let letters: Vec<char> = cfg.alphabet.chars().collect();
    let max_len = cfg.max_word_len.min(cfg.max_chars()).max(1);
    let mut words = BTreeSet::new();
    let mut attempts = 0;
    while words.len() < cfg.words && attempts < 1000 * cfg.words {
        attempts += 1;
        let len = rng.random_range(1..=max_len);
        let mut w = String::new();
        while w.len() < len {
            let c = letters[rng.random_range(0..letters.len())];
            if w.ends_with(c) {
                continue;
            }
            w.push(c);
        }
        words.insert(w);
    }
    let mut words: Vec<String> = words.into_iter().collect();
    words.shuffle(rng);
    words
}

fn transcript(words: &[String], budget: usize, rng: &mut ChaCha8Rng) -> String {
    let fits: Vec<&String> = words.iter().filter(|w| w.len() <= budget).collect();
    let mut text = fits[rng.random_range(0..fits.len())].clone();
    loop {
        let next: Vec<&&String> = fits.iter().filter(|w| text.len() + 1 + w.len() <= budget).collect();
        if next.is_empty() || rng.random_bool(0.4) {
            break;
        }
        text.push(' ');
        text.push_str(next[rng.random_range(0..next.len())]);
    }
    text
}

struct SpeakerStyle {
    dx: f64,
    dy: f64,
    gain: f64,
}

fn render_clip(cfg: &SynthConfig, text: &str, style: &SpeakerStyle, rng: &mut ChaCha8Rng) -> Vec<GrayImage> {
    let letters: Vec<char> = cfg.alphabet.chars().collect();
    let chars: Vec<char> = text.chars().collect();
    // Frame count per character; extra frames go to random characters or
    // to trailing padding (slot `chars.len()`).
    let mut spans = vec![cfg.min_char_frames; chars.len() + 1];
    spans[chars.len()] = 0;
    for _ in 0..cfg.frames - cfg.min_char_frames * chars.len() {
        spans[rng.random_range(0..=chars.len())] += 1;
    }
    let (h, w) = (cfg.height as f64, cfg.width as f64);
    let (cx, cy) = ((w - 1.0) / 2.0 + style.dx, (h - 1.0) / 2.0 + style.dy);
    let radius = 0.3 * w.min(h);
    let mut frames = Vec::with_capacity(cfg.frames);
    for (i, &n) in spans.iter().enumerate() {
        for j in 0..n {
            let p = if n > 1 { j as f64 / (n - 1) as f64 } else { 0.0 };
            let blob = chars.get(i).map(|&c| match letters.iter().position(|&l| l == c) {
                Some(k) => {
                    let a = std::f64::consts::TAU * k as f64 / letters.len() as f64 + p * std::f64::consts::FRAC_PI_2;
                    (cx + radius * a.cos(), cy + radius * a.sin(), 0.12 * w.min(h))
                }
                None => (cx, cy, (0.08 + 0.12 * p) * w.min(h)),
            });
            let mut pixels = Vec::with_capacity(cfg.height * cfg.width);
            for y in 0..cfg.height {
                for x in 0..cfg.width {
                    let v = match blob {
                        Some((bx, by, sigma)) => {
                            let d2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
                            let base = style.gain * (-d2 / (2.0 * sigma * sigma)).exp();
                            base + cfg.noise * rng.random_range(-1.0..1.0)
                        }
                        None => 0.0,
                    };
                    pixels.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
                }
            }
            frames.push(GrayImage {
                width: cfg.width,
                height: cfg.height,
                pixels,
            });
        }
    }
    frames
}

/// Pseudo-pronunciation of a synthetic word: one phoneme per letter.
pub fn synth_phonemes(word: &str) -> Vec<String> {
    word.chars().map(|c| c.to_ascii_uppercase().to_string().repeat(2)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOutput {
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
    pub lexicon_path: PathBuf,
    /// Training-split transcripts, one per line, for language-model training.
    pub corpus_path: PathBuf,
    pub words: Vec<String>,
}

/// Generates `n_clips` clips under `out_dir`: `frames/<id>/<t>.pgm`,
/// `manifest.jsonl`, `lexicon.txt` and `corpus.txt`. Output depends only on
/// the arguments.
pub fn synth_generate(n_clips: usize, cfg: &SynthConfig, seed: u64, out_dir: &Path) -> Result<SynthOutput> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = word_list(cfg, &mut rng);
    let styles: Vec<SpeakerStyle> = (0..cfg.speakers)
        .map(|_| SpeakerStyle {
            dx: rng.random_range(-1.0..1.0),
            dy: rng.random_range(-1.0..1.0),
            gain: rng.random_range(0.8..1.0),
        })
        .collect();
    let train_speakers = cfg.speakers - cfg.test_speakers;
    let clips: Vec<(ClipRecord, Vec<GrayImage>)> = (0..n_clips)
        .into_par_iter()
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(i as u64 + 1);
            let text = transcript(&words, cfg.max_chars(), &mut r);
            debug_assert!(required_frames(&vec![0; text.len()]) <= cfg.frames);
            let spk = i % cfg.speakers;
            let images = render_clip(cfg, &text, &styles[spk], &mut r);
            let id = format!("clip{i:05}");
            let record = ClipRecord {
                frames: (0..images.len()).map(|t| format!("frames/{id}/{t:03}.pgm")).collect(),
                id,
                text,
                speaker: format!("spk{spk:02}"),
                gender: if spk % 2 == 0 { "female" } else { "male" }.into(),
                split: if spk < train_speakers { Split::Train } else { Split::Test },
            };
            (record, images)
        })
        .collect();
    let mut manifest = Manifest {
        records: Vec::with_capacity(n_clips),
        base_dir: out_dir.to_path_buf(),
    };
    for (record, images) in clips {
        for (path, img) in record.frames.iter().zip(&images) {
            write_pgm(&out_dir.join(path), img)?;
        }
        manifest.records.push(record);
    }
    manifest.validate()?;
    let manifest_path = out_dir.join("manifest.jsonl");
    manifest.save(&manifest_path)?;
    let lexicon = Lexicon::from_entries(words.iter().map(|w| (w.clone(), synth_phonemes(w))));
    let lexicon_path = out_dir.join("lexicon.txt");
    write_atomic(&lexicon_path, lexicon.to_text().as_bytes())?;
    let corpus: String = manifest.split(Split::Train).map(|r| format!("{}\n", r.text)).collect();
    let corpus_path = out_dir.join("corpus.txt");
    write_atomic(&corpus_path, corpus.as_bytes())?;
    Ok(SynthOutput {
        manifest,
        manifest_path,
        lexicon_path,
        corpus_path,
        words,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alignment_examples() {
        let a = align_words(&[("a".into(), 1.0)], DEFAULT_FPS).unwrap();
        assert_eq!(a[0].frames, 23);
        let a = align_words(&[("a".into(), 0.01)], DEFAULT_FPS).unwrap();
        assert_eq!(a[0].frames, 1);
        let a = align_words(&[("a".into(), 0.5), ("b".into(), 0.5)], DEFAULT_FPS).unwrap();
        assert_eq!((a[0].frames, a[1].frames, a[1].start_frame), (12, 12, 12));
        assert!(align_words(&[("a".into(), 0.0)], DEFAULT_FPS).is_err());
    }

    fn recording(frames: usize) -> Tensor<f64> {
        Tensor::from_fn(&[frames, 2, 2, 1], |i| (i / 4 + 1) as f64)
    }

    fn spans(lens: &[usize]) -> Vec<WordSpan> {
        let mut start = 0;
        lens.iter()
            .enumerate()
            .map(|(i, &n)| {
                let w = WordSpan {
                    text: format!("w{}", i + 1),
                    start_s: 0.0,
                    duration_s: 1.0,
                    start_frame: start,
                    frames: n,
                };
                start += n;
                w
            })
            .collect()
    }

    #[test]
    fn greedy_grouping() {
        let (clips, stats) = make_clips(&recording(90), &spans(&[30, 30, 30]), 75).unwrap();
        assert_eq!(clips.len(), 2);
        assert_eq!((clips[0].text.as_str(), clips[0].valid_frames), ("w1 w2", 60));
        assert_eq!((clips[1].text.as_str(), clips[1].valid_frames), ("w3", 30));
        assert_eq!(clips[1].frames.get(&[0, 0, 0, 0]), 61.0);
        assert!(clips[1].frames.data()[30 * 4..].iter().all(|&v| v == 0.0));
        assert_eq!(stats.truncated_words, 0);
    }

    #[test]
    fn padding_and_truncation() {
        let (clips, _) = make_clips(&recording(40), &spans(&[40]), 75).unwrap();
        assert_eq!(clips[0].frames.shape(), &[75, 2, 2, 1]);
        assert!(clips[0].frames.data()[40 * 4..].iter().all(|&v| v == 0.0));
        let (clips, stats) = make_clips(&recording(80), &spans(&[80]), 75).unwrap();
        assert_eq!((clips.len(), stats.truncated_words, clips[0].valid_frames), (1, 1, 75));
        assert!(make_clips(&recording(10), &spans(&[20]), 75).is_err());
    }

    #[test]
    fn mirror_reverses_columns() {
        let t = Tensor::from_fn(&[1, 1, 4, 1], |i| i as f64);
        assert_eq!(mirror(&t).unwrap().data(), &[3.0, 2.0, 1.0, 0.0]);
        let r = recording(3);
        assert_eq!(mirror(&mirror(&r).unwrap()).unwrap(), r);
    }

    #[test]
    fn pgm_round_trip_with_comment() {
        let img = GrayImage {
            width: 3,
            height: 2,
            pixels: vec![0, 1, 2, 253, 254, 255],
        };
        assert_eq!(parse_pgm(&pgm_bytes(&img)).unwrap(), img);
        let with_comment = b"P5 # made by hand\n3 2\n255\n\x00\x01\x02\xfd\xfe\xff";
        assert_eq!(parse_pgm(with_comment).unwrap(), img);
        assert!(parse_pgm(b"P5\n3 2\n255\n\x00").is_err());
    }

    #[test]
    fn manifest_rejects_shared_speaker() {
        let rec = |id: &str, split| ClipRecord {
            id: id.into(),
            frames: vec!["f.pgm".into()],
            text: "ab".into(),
            speaker: "s".into(),
            gender: "male".into(),
            split,
        };
        let m = Manifest {
            records: vec![rec("a", Split::Train), rec("b", Split::Test)],
            base_dir: PathBuf::new(),
        };
        assert!(m.validate().is_err());
    }

    #[test]
    fn synth_is_deterministic_and_valid() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let cfg = SynthConfig::default();
        let oa = synth_generate(6, &cfg, 11, a.path()).unwrap();
        synth_generate(6, &cfg, 11, b.path()).unwrap();
        for r in &oa.manifest.records {
            for f in &r.frames {
                assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
            }
            assert!(required_frames(&cfg.vocab().unwrap().encode(&r.text).unwrap()) <= cfg.frames);
        }
        for name in ["manifest.jsonl", "lexicon.txt", "corpus.txt"] {
            assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap());
        }
        let m = Manifest::load(&oa.manifest_path).unwrap();
        let ds = load_split::<f64>(&m, Split::Train, &cfg.vocab().unwrap(), 8, 16, 16).unwrap();
        assert!(!ds.samples.is_empty());
        let lex = Lexicon::load(&oa.lexicon_path).unwrap();
        for w in &oa.words {
            assert!(lex.lookup(w).is_some());
        }
    }
}

//! Character n-gram language model with interpolated Witten-Bell smoothing.
//!
//! Predicted symbols are the 27 characters `a`-`z` and space plus an end of
//! sentence marker; contexts may additionally start with a begin marker. The
//! recursion bottoms out in the uniform distribution over the 28 outcomes,
//! so every outcome has positive probability in every context.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::util::{put_bytes, put_u32, put_u64, write_atomic, ByteReader};

pub const ALPHABET: &str = "abcdefghijklmnopqrstuvwxyz ";
/// Characters plus the end marker.
pub const OUTCOMES: usize = 28;
/// End of sentence, as a predicted symbol.
pub const EOS: u8 = 27;
/// Begin of sentence, as a context symbol.
pub const BOS: u8 = 27;

const MAGIC: &[u8; 4] = b"VTLM";
const VERSION: u32 = 1;
const SMOOTHING_WITTEN_BELL: u8 = 1;

pub fn token(c: char) -> Option<u8> {
    match c {
        'a'..='z' => Some(c as u8 - b'a'),
        ' ' => Some(26),
        _ => None,
    }
}

pub fn token_char(t: u8) -> Option<char> {
    match t {
        0..=25 => Some((b'a' + t) as char),
        26 => Some(' '),
        _ => None,
    }
}

/// Lowercases, maps characters outside `a-z` to spaces, collapses runs of
/// spaces and trims. Idempotent.
pub fn normalize_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars().flat_map(char::to_lowercase) {
        let c = if c.is_ascii_lowercase() { c } else { ' ' };
        if c == ' ' && (out.is_empty() || out.ends_with(' ')) {
            continue;
        }
        out.push(c);
    }
    while out.ends_with(' ') {
        out.pop();
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NGramLm {
    order: usize,
    /// Continuation counts keyed by context (oldest symbol first).
    counts: BTreeMap<Vec<u8>, [u32; OUTCOMES]>,
}

impl NGramLm {
    /// Counts every n-gram of order `1..=order` in the normalized corpus.
    pub fn train<'a>(lines: impl IntoIterator<Item = &'a str>, order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidArgument("language model order must be >= 1".into()));
        }
        let mut counts: BTreeMap<Vec<u8>, [u32; OUTCOMES]> = BTreeMap::new();
        let mut sentences = 0usize;
        for line in lines {
            let norm = normalize_text(line);
            if norm.is_empty() {
                continue;
            }
            sentences += 1;
            let mut history = vec![BOS];
            history.extend(norm.chars().map(|c| token(c).expect("normalized")));
            // Target i is predicted from history[..=i].
            for i in 0..history.len() {
                let next = if i + 1 < history.len() { history[i + 1] } else { EOS };
                for k in 0..order.min(i + 2) {
                    let ctx = history[i + 1 - k..=i].to_vec();
                    counts.entry(ctx).or_insert([0; OUTCOMES])[next as usize] += 1;
                }
            }
        }
        if sentences == 0 {
            log::warn!("language model trained on an empty corpus; using the uniform distribution");
        }
        Ok(NGramLm { order, counts })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn context_count(&self) -> usize {
        self.counts.len()
    }

    /// `ln P(next | context)`. Only the last `order - 1` context symbols are
    /// used; `BOS` may appear only as the first symbol of a full history.
    pub fn logprob(&self, context: &[u8], next: u8) -> Result<f64> {
        Ok(self.prob(context, next)?.ln())
    }

    pub fn prob(&self, context: &[u8], next: u8) -> Result<f64> {
        if next as usize >= OUTCOMES {
            return Err(Error::InvalidArgument(format!("symbol {next} is outside the model alphabet")));
        }
        if let Some(&bad) = context.iter().find(|&&t| t as usize >= OUTCOMES) {
            return Err(Error::InvalidArgument(format!("context symbol {bad} is outside the model alphabet")));
        }
        let keep = context.len().min(self.order - 1);
        let ctx = &context[context.len() - keep..];
        let mut p = 1.0 / OUTCOMES as f64;
        for k in 0..=keep {
            let Some(c) = self.counts.get(&ctx[keep - k..]) else {
                break;
            };
            let total: u64 = c.iter().map(|&x| x as u64).sum();
            let distinct = c.iter().filter(|&&x| x > 0).count() as f64;
            p = (c[next as usize] as f64 + distinct * p) / (total as f64 + distinct);
        }
        Ok(p)
    }

    pub fn logprob_char(&self, context: &[u8], next: Option<char>) -> Result<f64> {
        let t = match next {
            None => EOS,
            Some(c) => token(c).ok_or_else(|| Error::InvalidArgument(format!("character {c:?} is not modelled")))?,
        };
        self.logprob(context, t)
    }

    /// Log probability of a whole sentence including its end marker.
    pub fn score_sentence(&self, text: &str) -> Result<f64> {
        let mut history = vec![BOS];
        let mut total = 0.0;
        for c in text.chars() {
            let t = token(c).ok_or_else(|| Error::InvalidArgument(format!("character {c:?} is not modelled")))?;
            total += self.logprob(&history, t)?;
            history.push(t);
        }
        Ok(total + self.logprob(&history, EOS)?)
    }

    /// Per-symbol perplexity (end markers included) over normalized lines.
    pub fn perplexity<'a>(&self, lines: impl IntoIterator<Item = &'a str>) -> Result<f64> {
        let (mut lp, mut n) = (0.0, 0usize);
        for line in lines {
            let norm = normalize_text(line);
            if norm.is_empty() {
                continue;
            }
            lp += self.score_sentence(&norm)?;
            n += norm.chars().count() + 1;
        }
        Ok(if n == 0 { f64::NAN } else { (-lp / n as f64).exp() })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        out.push(SMOOTHING_WITTEN_BELL);
        put_u32(&mut out, self.order as u32);
        put_bytes(&mut out, ALPHABET.as_bytes());
        put_u64(&mut out, self.counts.len() as u64);
        for (ctx, c) in &self.counts {
            out.push(ctx.len() as u8);
            out.extend_from_slice(ctx);
            for &x in c {
                put_u32(&mut out, x);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "language model");
        r.expect_magic(MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.error(format!("unsupported version {version}, expected {VERSION}")));
        }
        let smoothing = r.u8()?;
        if smoothing != SMOOTHING_WITTEN_BELL {
            return Err(r.error(format!("unknown smoothing kind {smoothing}")));
        }
        let order = r.u32()? as usize;
        if order == 0 || order > 255 {
            return Err(r.error(format!("invalid order {order}")));
        }
        let alphabet = r.bytes()?;
        if alphabet != ALPHABET.as_bytes() {
            return Err(r.error("alphabet does not match this build"));
        }
        let n = r.u64()?;
        let mut counts = BTreeMap::new();
        for _ in 0..n {
            let len = r.u8()? as usize;
            if len >= order {
                return Err(r.error(format!("context length {len} not below order {order}")));
            }
            let ctx = r.take(len)?.to_vec();
            if ctx.iter().any(|&t| t as usize >= OUTCOMES) {
                return Err(r.error("context symbol out of range"));
            }
            let mut c = [0u32; OUTCOMES];
            for x in &mut c {
                *x = r.u32()?;
            }
            counts.insert(ctx, c);
        }
        if !r.is_at_end() {
            return Err(r.error("trailing bytes after count tables"));
        }
        Ok(NGramLm { order, counts })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

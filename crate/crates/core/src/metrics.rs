//! Edit distance and phoneme/character/word error rates.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditOps {
    pub distance: usize,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

impl std::ops::AddAssign for EditOps {
    fn add_assign(&mut self, o: Self) {
        self.distance += o.distance;
        self.substitutions += o.substitutions;
        self.insertions += o.insertions;
        self.deletions += o.deletions;
    }
}

/// Unit-cost Levenshtein distance turning `hyp` into `reference`.
///
/// Insertions add reference symbols missing from the hypothesis; deletions
/// drop extra hypothesis symbols. The breakdown follows one optimal
/// alignment, preferring substitution, then insertion, then deletion when
/// tracing back.
pub fn edit_distance<T: PartialEq>(hyp: &[T], reference: &[T]) -> EditOps {
    let (n, m) = (hyp.len(), reference.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        d[i * w] = i;
        for j in 1..=m {
            let sub = d[(i - 1) * w + j - 1] + usize::from(hyp[i - 1] != reference[j - 1]);
            let ins = d[i * w + j - 1] + 1;
            let del = d[(i - 1) * w + j] + 1;
            d[i * w + j] = sub.min(ins).min(del);
        }
    }
    let mut ops = EditOps {
        distance: d[n * w + m],
        ..EditOps::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let differ = hyp[i - 1] != reference[j - 1];
            if d[(i - 1) * w + j - 1] + usize::from(differ) == here {
                ops.substitutions += usize::from(differ);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && d[i * w + j - 1] + 1 == here {
            ops.insertions += 1;
            j -= 1;
        } else {
            ops.deletions += 1;
            i -= 1;
        }
    }
    ops
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    Word,
    Char,
    Phoneme,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OovPolicy {
    /// Reject the whole computation.
    #[default]
    Strict,
    /// Drop the utterance and count it.
    Skip,
}

/// Pronouncing dictionary: `WORD PH1 PH2 ...` per line.
///
/// Lines starting with `;;;` are comments, except `;;; inventory A B ...`
/// which declares the closed phoneme inventory. Without that line the
/// inventory is the set of symbols used by the entries.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Lexicon {
    entries: BTreeMap<String, Vec<String>>,
    inventory: BTreeSet<String>,
}

impl Lexicon {
    pub fn parse(text: &str) -> Result<Self> {
        let mut declared: Option<BTreeSet<String>> = None;
        let mut entries = BTreeMap::new();
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let trimmed = line.trim();
            if let Some(rest) = trimmed.strip_prefix(";;;") {
                let rest = rest.trim();
                if let Some(inv) = rest.strip_prefix("inventory") {
                    declared = Some(inv.split_whitespace().map(str::to_string).collect());
                }
            } else if !trimmed.is_empty() {
                let mut parts = trimmed.split_whitespace();
                let word = parts.next().unwrap().to_lowercase();
                let phones: Vec<String> = parts.map(str::to_string).collect();
                if phones.is_empty() {
                    return Err(Error::Format {
                        what: "lexicon",
                        offset,
                        msg: format!("word '{word}' has no phonemes"),
                    });
                }
                if let Some(inv) = &declared {
                    if let Some(p) = phones.iter().find(|p| !inv.contains(*p)) {
                        return Err(Error::Format {
                            what: "lexicon",
                            offset,
                            msg: format!("phoneme '{p}' of '{word}' is not in the declared inventory"),
                        });
                    }
                }
                entries.entry(word).or_insert(phones);
            }
            offset += line.len();
        }
        let inventory = declared.unwrap_or_else(|| entries.values().flatten().cloned().collect());
        Ok(Lexicon { entries, inventory })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (String, Vec<String>)>) -> Self {
        let entries: BTreeMap<String, Vec<String>> = entries.into_iter().map(|(w, p)| (w.to_lowercase(), p)).collect();
        let inventory = entries.values().flatten().cloned().collect();
        Lexicon { entries, inventory }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from(";;; inventory");
        for p in &self.inventory {
            s.push(' ');
            s.push_str(p);
        }
        s.push('\n');
        for (w, ph) in &self.entries {
            s.push_str(&w.to_uppercase());
            s.push(' ');
            s.push_str(&ph.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn inventory(&self) -> &BTreeSet<String> {
        &self.inventory
    }

    pub fn lookup(&self, word: &str) -> Option<&[String]> {
        self.entries.get(&word.to_lowercase()).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn words(text: &str) -> Vec<String> {
    text.split(' ').filter(|w| !w.is_empty()).map(str::to_string).collect()
}

/// Splits text into evaluation units. Characters include spaces.
fn units(text: &str, unit: Unit, lexicon: Option<&Lexicon>, is_reference: bool) -> Result<Vec<String>> {
    match unit {
        Unit::Char => Ok(text.chars().map(String::from).collect()),
        Unit::Word => Ok(words(text)),
        Unit::Phoneme => {
            let lex = lexicon.ok_or_else(|| Error::InvalidArgument("phoneme error rate needs a lexicon".into()))?;
            let mut out = Vec::new();
            for w in words(text) {
                match lex.lookup(&w) {
                    Some(p) => out.extend(p.iter().cloned()),
                    None if is_reference => return Err(Error::OutOfVocabulary(w)),
                    // A hypothesis word without a pronunciation becomes one
                    // symbol that matches nothing in the reference.
                    None => out.push(format!("<oov:{w}>")),
                }
            }
            Ok(out)
        }
    }
}

/// Error rate of a single utterance in percent.
pub fn error_rate(hyp: &str, reference: &str, unit: Unit, lexicon: Option<&Lexicon>) -> Result<f64> {
    Ok(corpus_rate([(hyp, reference)], unit, lexicon.map(|l| (l, OovPolicy::Strict)))?.rate)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CorpusRate {
    /// Percent: `100 * errors / reference units`, pooled over utterances.
    pub rate: f64,
    pub ops: EditOps,
    pub reference_units: usize,
    pub utterances: usize,
    pub skipped_oov: usize,
}

/// Pools edit operations over all `(hypothesis, reference)` pairs before
/// dividing.
pub fn corpus_rate<'a>(
    pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
    unit: Unit,
    lexicon: Option<(&Lexicon, OovPolicy)>,
) -> Result<CorpusRate> {
    let (lexicon, policy) = match lexicon {
        Some((l, p)) => (Some(l), p),
        None => (None, OovPolicy::Strict),
    };
    let mut out = CorpusRate::default();
    for (hyp, reference) in pairs {
        let r = match units(reference, unit, lexicon, true) {
            Ok(r) => r,
            Err(Error::OutOfVocabulary(w)) if policy == OovPolicy::Skip => {
                log::warn!("skipping utterance with out-of-lexicon word '{w}'");
                out.skipped_oov += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let h = units(hyp, unit, lexicon, false)?;
        out.ops += edit_distance(&h, &r);
        out.reference_units += r.len();
        out.utterances += 1;
    }
    out.rate = if out.reference_units == 0 {
        if out.ops.distance == 0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        100.0 * out.ops.distance as f64 / out.reference_units as f64
    };
    Ok(out)
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Output symbol inventory: label characters followed by the CTC blank.
///
/// With `n` characters the network has `n + 1` outputs and the blank sits at
/// index `n`, the last one.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    chars: Vec<char>,
}

impl Default for Vocab {
    /// Lowercase letters plus space (28 outputs with the blank).
    fn default() -> Self {
        Vocab::new("abcdefghijklmnopqrstuvwxyz ").expect("valid")
    }
}

impl Vocab {
    pub fn new(chars: &str) -> Result<Self> {
        let chars: Vec<char> = chars.chars().collect();
        if chars.is_empty() {
            return Err(Error::InvalidArgument("vocabulary needs at least one character".into()));
        }
        for (i, c) in chars.iter().enumerate() {
            if chars[..i].contains(c) {
                return Err(Error::InvalidArgument(format!("duplicate vocabulary character {c:?}")));
            }
        }
        Ok(Vocab { chars })
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    /// Number of network outputs, blank included.
    pub fn size(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn blank(&self) -> usize {
        self.chars.len()
    }

    pub fn index_of(&self, c: char) -> Option<usize> {
        self.chars.iter().position(|&x| x == c)
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| {
                self.index_of(c)
                    .ok_or_else(|| Error::Data(format!("character {c:?} is not in the vocabulary")))
            })
            .collect()
    }

    /// Maps label indices to text; the blank and out-of-range indices are
    /// skipped.
    pub fn decode(&self, labels: &[usize]) -> String {
        labels.iter().filter_map(|&i| self.chars.get(i)).collect()
    }
}

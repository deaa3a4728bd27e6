use std::collections::HashMap;
use std::path::Path;

use super::tokenize::{BOS, EOS, PAD, UNK};
use super::Conversation;
use crate::error::{Error, Result};

pub const BOS_ID: usize = 0;
pub const EOS_ID: usize = 1;
pub const UNK_ID: usize = 2;
pub const PAD_ID: usize = 3;
const SPECIALS: [&str; 4] = [BOS, EOS, UNK, PAD];

/// Word vocabulary with the four special tokens at indices 0..4.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::from_words(std::iter::empty::<String>())
    }
}

impl Vocab {
    /// Specials first, then `words` in order; duplicates and specials in `words` are skipped.
    pub fn from_words<I, W>(words: I) -> Self
    where
        I: IntoIterator<Item = W>,
        W: Into<String>,
    {
        let mut v = Vocab {
            words: Vec::new(),
            index: HashMap::new(),
        };
        for w in SPECIALS.iter().map(|s| s.to_string()).chain(words.into_iter().map(Into::into)) {
            if !v.index.contains_key(&w) {
                v.index.insert(w.clone(), v.words.len());
                v.words.push(w);
            }
        }
        v
    }

    /// Counts words of the (mention-expanded) training utterances; words seen
    /// at least `min_count` times are kept, most frequent first, ties broken
    /// alphabetically.
    pub fn build(conversations: &[Conversation], min_count: usize) -> Result<Self> {
        if min_count == 0 {
            return Err(Error::InvalidArgument("min_count must be at least 1".into()));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for c in conversations {
            for i in 0..c.utterances.len() {
                for w in c.expand(i)?.words {
                    *counts.entry(w).or_default() += 1;
                }
            }
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, n)| *n >= min_count && !SPECIALS.contains(&w.as_str()))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(Self::from_words(kept.into_iter().map(|(w, _)| w)))
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of `word`, `<unk>` when absent.
    pub fn index(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn word(&self, i: usize) -> &str {
        &self.words[i]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn encode(&self, words: &[String]) -> Vec<usize> {
        words.iter().map(|w| self.index(w)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.words.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let words: Vec<&str> = text.lines().collect();
        if words.len() < 4 || words[..4] != SPECIALS {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                msg: "vocab file must start with <s>, </s>, <unk>, <pad>".into(),
            });
        }
        Ok(Self::from_words(words))
    }
}

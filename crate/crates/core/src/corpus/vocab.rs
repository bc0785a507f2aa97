//! Word-level vocabulary with reserved special tokens.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const MASK: &str = "[MASK]";
pub const UNK: &str = "[UNK]";
pub const RESERVED: [&str; 3] = [PAD, MASK, UNK];

pub const PAD_ID: usize = 0;
pub const MASK_ID: usize = 1;
pub const UNK_ID: usize = 2;

/// Token ↔ id map. Ids `0..3` are `[PAD]`, `[MASK]`, `[UNK]`; ordinary tokens follow.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    min_freq: usize,
}

impl Vocabulary {
    /// Most frequent tokens first, ties broken lexicographically, keeping at most
    /// `cap` entries including the reserved ones. Tokens rarer than `min_freq` are dropped.
    pub fn build<S: AsRef<str>>(sentences: &[Vec<S>], cap: usize, min_freq: usize) -> Result<Self> {
        if cap < RESERVED.len() {
            return Err(Error::Config(format!(
                "vocabulary cap {cap} is smaller than the {} reserved tokens",
                RESERVED.len()
            )));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for s in sentences {
            for w in s {
                *counts.entry(w.as_ref()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_freq.max(1) && !RESERVED.contains(w))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(cap - RESERVED.len());
        Ok(Self::from_tokens(ranked.into_iter().map(|(w, _)| w.to_string()), min_freq))
    }

    fn from_tokens(ordinary: impl IntoIterator<Item = String>, min_freq: usize) -> Self {
        let tokens: Vec<String> = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(ordinary)
            .collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary {
            tokens,
            index,
            min_freq,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map(String::as_str).unwrap_or(UNK)
    }

    /// All tokens in id order, reserved first.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// First id of an ordinary (non-reserved) token.
    pub fn first_ordinary(&self) -> usize {
        RESERVED.len()
    }

    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Vec<usize> {
        words.iter().map(|w| self.id(w.as_ref())).collect()
    }

    /// Fraction of `sentences`' tokens that map to `[UNK]`.
    pub fn unk_rate<S: AsRef<str>>(&self, sentences: &[Vec<S>]) -> f64 {
        let (mut unk, mut total) = (0usize, 0usize);
        for s in sentences {
            for w in s {
                total += 1;
                if !self.contains(w.as_ref()) {
                    unk += 1;
                }
            }
        }
        if total == 0 {
            0.0
        } else {
            unk as f64 / total as f64
        }
    }

    /// One ordinary token per line; line `k` (0-based) has id `k + 3`.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens[RESERVED.len()..] {
            let _ = writeln!(s, "{t}");
        }
        s
    }

    pub fn from_file_str(text: &str) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        let mut ordinary = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() || RESERVED.contains(&line) || !seen.insert(line) {
                return Err(Error::Parse {
                    path: "vocabulary".into(),
                    line: i + 1,
                    msg: format!("invalid or duplicate token `{line}`"),
                });
            }
            ordinary.push(line.to_string());
        }
        Ok(Self::from_tokens(ordinary, 0))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        Self::from_file_str(&text)
    }
}

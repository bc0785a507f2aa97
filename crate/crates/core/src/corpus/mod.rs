//! Text and treebank ingestion.

pub mod ptb;
pub mod sexpr;
pub mod synthetic;
pub mod vocab;

use std::path::Path;

pub use ptb::{PtbTree, DEFAULT_PUNCT_TAGS};
pub use vocab::Vocabulary;

use crate::error::{Error, Result};

/// One sentence with optional gold structure. When `tree` is present its
/// leaves are exactly `words`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreebankSentence {
    pub words: Vec<String>,
    pub tags: Option<Vec<String>>,
    pub tree: Option<PtbTree>,
}

impl TreebankSentence {
    pub fn from_tree(tree: PtbTree) -> Self {
        TreebankSentence {
            words: tree.words().into_iter().map(String::from).collect(),
            tags: Some(tree.tags().into_iter().map(String::from).collect()),
            tree: Some(tree),
        }
    }

    pub fn from_words(words: Vec<String>) -> Self {
        TreebankSentence {
            words,
            tags: None,
            tree: None,
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Read a PTB bracketed file (one or more trees, possibly spanning lines).
pub fn read_ptb(path: impl AsRef<Path>) -> Result<Vec<TreebankSentence>> {
    Ok(ptb::read_ptb_trees(path)?
        .into_iter()
        .map(TreebankSentence::from_tree)
        .collect())
}

pub fn parse_ptb(text: &str) -> Result<Vec<TreebankSentence>> {
    Ok(ptb::parse_ptb_str(text, "<string>")?
        .into_iter()
        .map(TreebankSentence::from_tree)
        .collect())
}

/// Whitespace-tokenized sentences, one per line. Blank lines are skipped.
pub fn parse_raw_text(text: &str, lowercase: bool) -> Vec<Vec<String>> {
    text.lines()
        .map(|l| {
            l.split_whitespace()
                .map(|w| if lowercase { w.to_lowercase() } else { w.to_string() })
                .collect::<Vec<_>>()
        })
        .filter(|s| !s.is_empty())
        .collect()
}

pub fn read_raw_text(path: impl AsRef<Path>, lowercase: bool) -> Result<Vec<Vec<String>>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_raw_text(&text, lowercase))
}

/// Drop tokens whose POS tag is in `punct_tags`, pruning the gold tree to match.
/// Sentences left empty are removed.
pub fn strip_punctuation(sentences: &[TreebankSentence], punct_tags: &[&str]) -> Result<Vec<TreebankSentence>> {
    let mut out = Vec::with_capacity(sentences.len());
    for (i, s) in sentences.iter().enumerate() {
        let Some(tree) = &s.tree else {
            return Err(Error::Invalid(format!(
                "sentence {} has no POS tags; punctuation removal needs tagged trees",
                i + 1
            )));
        };
        if let Some(pruned) = tree.prune(&|t| !punct_tags.contains(&t)) {
            out.push(TreebankSentence::from_tree(pruned));
        }
    }
    Ok(out)
}

/// WSJ-10: remove punctuation, then keep sentences of at most 10 words.
pub fn wsj10_filter(sentences: &[TreebankSentence], punct_tags: &[&str]) -> Result<Vec<TreebankSentence>> {
    Ok(strip_punctuation(sentences, punct_tags)?
        .into_iter()
        .filter(|s| s.len() <= 10)
        .collect())
}

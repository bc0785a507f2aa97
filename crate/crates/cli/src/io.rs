//! Input files and checkpoints shared by the commands.

use std::path::Path;

use clap::ValueEnum;
use treeformer::corpus::{self, TreebankSentence, Vocabulary, DEFAULT_PUNCT_TAGS};
use treeformer::encoder::checkpoint::{self, Checkpoint};

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DataFormat {
    /// Treebank if the extension is .mrg, .ptb, .tree or .trees, raw text otherwise.
    Auto,
    Ptb,
    Text,
}

impl DataFormat {
    fn resolve(self, path: &Path) -> DataFormat {
        match self {
            DataFormat::Auto => match path.extension().and_then(|e| e.to_str()) {
                Some("mrg" | "ptb" | "tree" | "trees") => DataFormat::Ptb,
                _ => DataFormat::Text,
            },
            f => f,
        }
    }
}

/// Corpus handling that must match between training and later use;
/// stored in checkpoint metadata.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pipeline {
    pub lowercase: bool,
    pub strip_punct: bool,
}

impl Pipeline {
    pub fn to_meta(self) -> Vec<(String, String)> {
        vec![
            ("corpus.lowercase".into(), self.lowercase.to_string()),
            ("corpus.strip_punct".into(), self.strip_punct.to_string()),
        ]
    }

    pub fn from_meta<T: treeformer_autograd::Real>(ck: &Checkpoint<T>) -> Self {
        let flag = |k: &str| ck.meta_value(k) == Some("true");
        Pipeline {
            lowercase: flag("corpus.lowercase"),
            strip_punct: flag("corpus.strip_punct"),
        }
    }

    /// Model-side words of a sentence.
    pub fn words(self, s: &TreebankSentence) -> Vec<String> {
        s.words
            .iter()
            .map(|w| if self.lowercase { w.to_lowercase() } else { w.clone() })
            .collect()
    }
}

/// Fail with a usage error when a required input is absent.
pub fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} `{}` does not exist", path.display())))
    }
}

pub fn read_sentences(path: &Path, format: DataFormat, pipeline: Pipeline) -> Result<Vec<TreebankSentence>> {
    require_file(path, "data path")?;
    let sentences = match format.resolve(path) {
        DataFormat::Ptb => {
            let s = corpus::read_ptb(path)?;
            if pipeline.strip_punct {
                corpus::strip_punctuation(&s, DEFAULT_PUNCT_TAGS)?
            } else {
                s
            }
        }
        _ => corpus::read_raw_text(path, false)?
            .into_iter()
            .map(TreebankSentence::from_words)
            .collect(),
    };
    let before = sentences.len();
    let sentences: Vec<_> = sentences.into_iter().filter(|s| !s.is_empty()).collect();
    if sentences.len() < before {
        log::warn!("{}: skipped {} empty sentences", path.display(), before - sentences.len());
    }
    Ok(sentences)
}

/// A checkpoint at whichever precision it was saved in.
pub enum AnyCheckpoint {
    F32(Checkpoint<f32>),
    F64(Checkpoint<f64>),
}

/// Run `$body` with `$c` bound to the concrete checkpoint.
#[macro_export]
macro_rules! with_checkpoint {
    ($ck:expr, $c:ident => $body:expr) => {
        match $ck {
            $crate::io::AnyCheckpoint::F32($c) => $body,
            $crate::io::AnyCheckpoint::F64($c) => $body,
        }
    };
}

pub fn load_checkpoint(path: &Path) -> Result<AnyCheckpoint> {
    require_file(path, "checkpoint")?;
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(match checkpoint::peek_dtype(&bytes)? {
        8 => AnyCheckpoint::F64(Checkpoint::from_bytes(&bytes)?),
        _ => AnyCheckpoint::F32(Checkpoint::from_bytes(&bytes)?),
    })
}

/// Error unless `path` holds the same vocabulary as the checkpoint.
pub fn check_vocab(path: &Path, vocab: &Vocabulary) -> Result<()> {
    require_file(path, "vocabulary")?;
    let other = Vocabulary::load(path)?;
    if other.tokens() != vocab.tokens() {
        return Err(CliError::Runtime(format!(
            "vocabulary mismatch: `{}` has {} tokens, the checkpoint {}; re-run with the vocabulary the model was trained on",
            path.display(),
            other.len(),
            vocab.len()
        )));
    }
    Ok(())
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    csv::Writer::from_path(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

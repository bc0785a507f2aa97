//! Resolved run configuration: profile defaults, then a `key = value` file,
//! then command-line overrides.

use std::path::Path;

use treeformer::encoder::ModelConfig;
use treeformer::training::TrainConfig;

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn as_str(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(CliError::Usage(format!("corpus.precision: expected f32 or f64, got `{s}`"))),
        }
    }
}

/// Options for turning text into model input.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusOptions {
    pub lowercase: bool,
    pub min_freq: usize,
    pub strip_punct: bool,
    pub precision: Precision,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        CorpusOptions {
            lowercase: false,
            min_freq: 1,
            strip_punct: false,
            precision: Precision::F32,
        }
    }
}

impl CorpusOptions {
    pub const KEYS: [&'static str; 4] = ["lowercase", "min_freq", "strip_punct", "precision"];

    pub fn to_kv(&self) -> Vec<(&'static str, String)> {
        vec![
            ("lowercase", self.lowercase.to_string()),
            ("min_freq", self.min_freq.to_string()),
            ("strip_punct", self.strip_punct.to_string()),
            ("precision", self.precision.as_str().to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bool_of = |v: &str| {
            v.parse::<bool>()
                .map_err(|_| CliError::Usage(format!("corpus.{key}: expected true or false, got `{v}`")))
        };
        match key {
            "lowercase" => self.lowercase = bool_of(value)?,
            "strip_punct" => self.strip_punct = bool_of(value)?,
            "min_freq" => {
                self.min_freq = value
                    .parse()
                    .map_err(|_| CliError::Usage(format!("corpus.min_freq: cannot parse `{value}`")))?
            }
            "precision" => self.precision = Precision::parse(value)?,
            _ => return Err(CliError::Usage(format!("unknown configuration key `corpus.{key}`"))),
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedConfig {
    pub profile: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub corpus: CorpusOptions,
}

impl ResolvedConfig {
    /// Built-in defaults: `paper` is the full-size setup, `desk` a small
    /// model that trains on one CPU core in minutes.
    pub fn profile(name: &str) -> Result<Self> {
        let model = ModelConfig::profile(name).map_err(|_| {
            CliError::Usage(format!("profile: unknown profile `{name}` (expected desk or paper)"))
        })?;
        let train = match name {
            "desk" => TrainConfig {
                lr: 1e-3,
                epochs: 12,
                ..TrainConfig::default()
            },
            _ => TrainConfig::default(),
        };
        Ok(ResolvedConfig {
            profile: name.to_string(),
            model,
            train,
            corpus: CorpusOptions::default(),
        })
    }

    /// Set `section.key` or a bare key, which is looked up in the model,
    /// training and corpus sections in that order.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        let value = value.trim();
        let (section, field) = match key.split_once('.') {
            Some((s, f)) => (s, f),
            None if self.model.to_kv().iter().any(|(k, _)| *k == key) => ("model", key),
            None if self.train.to_kv().iter().any(|(k, _)| *k == key) => ("train", key),
            None if CorpusOptions::KEYS.contains(&key) => ("corpus", key),
            None => return Err(CliError::Usage(format!("unknown configuration key `{key}`"))),
        };
        match section {
            "model" => self.model.set(field, value).map_err(field_error("model", field)),
            "train" => self.train.set(field, value).map_err(field_error("train", field)),
            "corpus" => self.corpus.set(field, value),
            _ => Err(CliError::Usage(format!("unknown configuration section in `{key}`"))),
        }
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("{}:{}: expected `key = value`", path.display(), lineno + 1))
            })?;
            self.set(k, v)
                .map_err(|e| CliError::Usage(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        }
        Ok(())
    }

    pub fn apply_overrides(&mut self, pairs: &[String]) -> Result<()> {
        for pair in pairs {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{pair}`")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.corpus.min_freq == 0 {
            return Err(CliError::Usage("invalid configuration: corpus.min_freq must be at least 1".into()));
        }
        Ok(())
    }

    /// Every resolved value under its `section.key` name, in a fixed order.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let mut out = vec![("profile".to_string(), self.profile.clone())];
        out.extend(self.model.to_kv().into_iter().map(|(k, v)| (format!("model.{k}"), v)));
        out.extend(self.train.to_kv().into_iter().map(|(k, v)| (format!("train.{k}"), v)));
        out.extend(self.corpus.to_kv().into_iter().map(|(k, v)| (format!("corpus.{k}"), v)));
        out
    }
}

fn field_error<'a>(section: &'static str, field: &'a str) -> impl Fn(treeformer::Error) -> CliError + 'a {
    move |e| match e {
        treeformer::Error::Config(msg) if msg.starts_with(field) => {
            CliError::Usage(format!("invalid configuration: {section}.{msg}"))
        }
        treeformer::Error::Config(msg) => CliError::Usage(format!("invalid configuration: {section}.{field}: {msg}")),
        other => other.into(),
    }
}

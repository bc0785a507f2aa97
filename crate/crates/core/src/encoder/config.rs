use std::fmt;

use crate::error::{Error, Result};

/// Whether attention is gated by the constituent prior.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Tree,
    Plain,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Tree => "tree",
            Variant::Plain => "plain",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tree" => Ok(Variant::Tree),
            "plain" => Ok(Variant::Plain),
            _ => Err(Error::Config(format!("variant must be `tree` or `plain`, got `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub d_model: usize,
    pub num_heads: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub vocab_size: usize,
    pub max_len: usize,
    pub variant: Variant,
}

impl ModelConfig {
    /// Full-size configuration: 10 layers of width 512 with 8 heads.
    pub fn paper() -> Self {
        ModelConfig {
            num_layers: 10,
            d_model: 512,
            num_heads: 8,
            d_ff: 2048,
            dropout: 0.1,
            vocab_size: 16000,
            max_len: 512,
            variant: Variant::Tree,
        }
    }

    /// Small configuration that trains on one CPU core.
    pub fn desk() -> Self {
        ModelConfig {
            num_layers: 4,
            d_model: 64,
            num_heads: 4,
            d_ff: 256,
            dropout: 0.1,
            vocab_size: 1000,
            max_len: 128,
            variant: Variant::Tree,
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            _ => Err(Error::Config(format!("unknown profile `{name}` (expected `paper` or `desk`)"))),
        }
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::Config(format!("{field}: {msg}")));
        if self.num_layers == 0 {
            return bad("num_layers", "must be at least 1");
        }
        if self.num_heads == 0 || self.d_model == 0 || self.d_model % self.num_heads != 0 {
            return bad("d_model", "must be a positive multiple of num_heads");
        }
        if self.d_model % 2 != 0 {
            return bad("d_model", "must be even for the sinusoidal position encoding");
        }
        if self.d_ff == 0 {
            return bad("d_ff", "must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout", "must be in [0, 1)");
        }
        if self.vocab_size < 4 {
            return bad("vocab_size", "must exceed the three reserved tokens");
        }
        if self.max_len == 0 {
            return bad("max_len", "must be positive");
        }
        Ok(())
    }

    /// `key=value` lines, the form stored in checkpoints and manifests.
    pub fn to_kv(&self) -> Vec<(&'static str, String)> {
        vec![
            ("num_layers", self.num_layers.to_string()),
            ("d_model", self.d_model.to_string()),
            ("num_heads", self.num_heads.to_string()),
            ("d_ff", self.d_ff.to_string()),
            ("dropout", self.dropout.to_string()),
            ("vocab_size", self.vocab_size.to_string()),
            ("max_len", self.max_len.to_string()),
            ("variant", self.variant.as_str().to_string()),
        ]
    }

    /// Override one field from its `key=value` string form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse `{value}`")))
        }
        match key {
            "num_layers" => self.num_layers = num(key, value)?,
            "d_model" => self.d_model = num(key, value)?,
            "num_heads" => self.num_heads = num(key, value)?,
            "d_ff" => self.d_ff = num(key, value)?,
            "dropout" => self.dropout = num(key, value)?,
            "vocab_size" => self.vocab_size = num(key, value)?,
            "max_len" => self.max_len = num(key, value)?,
            "variant" => self.variant = Variant::parse(value)?,
            _ => return Err(Error::Config(format!("unknown model setting `{key}`"))),
        }
        Ok(())
    }

    pub fn from_kv<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut c = Self::desk();
        for (k, v) in pairs {
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.to_kv().into_iter().map(|(k, v)| format!("{k}={v}")).collect();
        f.write_str(&parts.join(" "))
    }
}

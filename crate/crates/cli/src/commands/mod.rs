mod ablation;
pub mod eval;
mod export;
mod parse;
mod perplexity;
mod synth;
mod train;

use treeformer::parsing::{ParseMode, ParserConfig};

use crate::config::ResolvedConfig;
use crate::error::{CliError, Result};
use crate::manifest::RunManifest;
use crate::{Command, ConfigArgs, ParserArgs};

pub fn dispatch(cmd: &Command, m: &mut RunManifest) -> Result<()> {
    match cmd {
        Command::Train(a) => train::run(a, m),
        Command::Parse(a) => parse::run(a, m),
        Command::Eval(a) => eval::run(a, m),
        Command::ExportAttn(a) => export::run(a, m),
        Command::GenSynthetic(a) => synth::run(a, m),
        Command::Perplexity(a) => perplexity::run(a, m),
        Command::Ablation(a) => ablation::run(a, m),
    }
}

/// Profile, then config file, then `--set` pairs, then dedicated flags.
pub fn resolve_config(a: &ConfigArgs) -> Result<ResolvedConfig> {
    let mut c = ResolvedConfig::profile(&a.profile)?;
    if let Some(path) = &a.config {
        crate::io::require_file(path, "config file")?;
        c.apply_file(path)?;
    }
    c.apply_overrides(&a.overrides)?;
    let mut set = |k: &str, v: Option<String>| v.map_or(Ok(()), |v| c.set(k, &v));
    set("train.seed", a.seed.map(|v| v.to_string()))?;
    set("train.epochs", a.epochs.map(|v| v.to_string()))?;
    set("train.lr", a.lr.map(|v| v.to_string()))?;
    set("train.batch_tokens", a.batch_tokens.map(|v| v.to_string()))?;
    set("model.num_layers", a.layers.map(|v| v.to_string()))?;
    set("model.d_model", a.d_model.map(|v| v.to_string()))?;
    set("model.num_heads", a.heads.map(|v| v.to_string()))?;
    set("model.d_ff", a.d_ff.map(|v| v.to_string()))?;
    set("model.dropout", a.dropout.map(|v| v.to_string()))?;
    set("model.vocab_size", a.vocab_size.map(|v| v.to_string()))?;
    set("model.max_len", a.max_len.map(|v| v.to_string()))?;
    set("model.variant", a.variant.clone())?;
    set("corpus.precision", a.precision.clone())?;
    set("corpus.min_freq", a.min_freq.map(|v| v.to_string()))?;
    set("corpus.lowercase", a.lowercase.then(|| "true".to_string()))?;
    set("corpus.strip_punct", a.strip_punct.then(|| "true".to_string()))?;
    c.validate()?;
    Ok(c)
}

pub fn parser_settings(a: &ParserArgs) -> Result<(ParserConfig, ParseMode)> {
    let mut cfg = ParserConfig::default();
    if let Some(m) = a.min_layer {
        cfg.min_layer = m;
    }
    if let Some(t) = a.threshold {
        cfg.threshold = t;
    }
    let mode = ParseMode::parse(&a.mode).map_err(|e| CliError::Usage(format!("--mode: {e}")))?;
    Ok((cfg, mode))
}

/// Check parser settings against a model's depth, so a bad flag is a usage error.
pub fn check_parser(cfg: &ParserConfig, mode: ParseMode, layers: usize) -> Result<()> {
    match mode {
        ParseMode::MultiLayer if cfg.min_layer >= layers => Err(CliError::Usage(format!(
            "--min-layer {} is out of range for a {layers}-layer model",
            cfg.min_layer
        ))),
        ParseMode::SingleLayer(l) if l >= layers => {
            Err(CliError::Usage(format!("--mode layer={l} is out of range for a {layers}-layer model")))
        }
        _ => Ok(()),
    }
}

//! `treeformer` command-line tool: train Tree Transformers, induce parses,
//! score them against treebanks and export attention maps.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use error::{CliError, Result};
use io::DataFormat;
use manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "treeformer", version, about = "Tree Transformer training and unsupervised parsing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model with the masked language-model objective.
    Train(TrainArgs),
    /// Parse sentences with a trained model.
    Parse(ParseArgs),
    /// Score predicted trees against a gold treebank, with baselines.
    Eval(EvalArgs),
    /// Write constituent priors, attention maps or links of one sentence as CSV.
    ExportAttn(ExportArgs),
    /// Sample a labeled treebank from the bundled synthetic grammar.
    GenSynthetic(SynthArgs),
    /// Masked-word perplexity of models and simple baselines.
    Perplexity(PerplexityArgs),
    /// Parsing F1 across minimum layers and single layers.
    Ablation(AblationArgs),
}

/// Settings shared by commands that build a model.
#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// Built-in defaults: desk or paper.
    #[arg(long, default_value = "desk")]
    pub profile: String,
    /// File of `key = value` lines applied over the profile.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override any key, e.g. `--set train.lr=0.001`; applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_tokens: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub d_ff: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Upper bound on vocabulary size, reserved tokens included.
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    /// tree or plain.
    #[arg(long)]
    pub variant: Option<String>,
    /// f32 or f64.
    #[arg(long)]
    pub precision: Option<String>,
    #[arg(long)]
    pub min_freq: Option<usize>,
    #[arg(long)]
    pub lowercase: bool,
    /// Drop punctuation leaves from treebank input.
    #[arg(long)]
    pub strip_punct: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Training corpus: treebank or one sentence per line.
    #[arg(long, required_unless_present = "dry_run")]
    pub data: Option<PathBuf>,
    /// Held-out corpus for choosing the best epoch.
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "auto")]
    pub format: DataFormat,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Directory for checkpoints, loss log, vocabulary and manifest.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Print the resolved configuration and stop.
    #[arg(long)]
    pub dry_run: bool,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ParserArgs {
    /// `multi` for the layered procedure or `layer=L` for greedy splitting on one layer.
    #[arg(long, default_value = "multi")]
    pub mode: String,
    /// Lowest layer the layered procedure descends to; default 3.
    #[arg(long)]
    pub min_layer: Option<usize>,
    /// Link strength above which a span is kept whole; default 0.8.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Sentences per forward pass.
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ParseArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Sentences to parse: treebank or one sentence per line.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    pub format: DataFormat,
    #[command(flatten)]
    pub parser: ParserArgs,
    /// Vocabulary file the input pipeline expects; must match the checkpoint.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Output file, one bracketed tree per line.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baselines {
    Include,
    Only,
    None,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Gold treebank.
    #[arg(long)]
    pub gold: PathBuf,
    /// Predicted trees, one bracketed tree per line.
    #[arg(long, conflicts_with = "checkpoint")]
    pub pred: Option<PathBuf>,
    /// Parse the gold sentences with these models; median and max are reported over them.
    #[arg(long)]
    pub checkpoint: Vec<PathBuf>,
    #[command(flatten)]
    pub parser: ParserArgs,
    /// Keep sentences of at most 10 words after removing punctuation.
    #[arg(long)]
    pub wsj10: bool,
    /// Remove punctuation from the gold trees before scoring.
    #[arg(long)]
    pub strip_punct: bool,
    /// Number of seeds for the random-tree baseline.
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    #[arg(long, value_enum, default_value = "include")]
    pub baselines: Baselines,
    /// Score single-word and whole-sentence spans too.
    #[arg(long)]
    pub all_spans: bool,
    #[arg(long, default_value = "eval")]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportWhat {
    /// Constituent prior of each layer.
    Prior,
    /// Attention probabilities averaged over heads.
    Attention,
    /// Neighbor link probabilities of every layer.
    Links,
}

impl ExportWhat {
    pub fn as_str(self) -> &'static str {
        match self {
            ExportWhat::Prior => "prior",
            ExportWhat::Attention => "attention",
            ExportWhat::Links => "links",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PriorArg {
    Learned,
    /// Replace every prior by all ones, giving plain attention.
    Ones,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Whitespace-separated sentence.
    #[arg(long)]
    pub sentence: String,
    #[arg(long, value_enum, default_value = "prior")]
    pub what: ExportWhat,
    /// Comma-separated layer indices; all layers by default.
    #[arg(long, value_delimiter = ',')]
    pub layers: Vec<usize>,
    #[arg(long, value_enum, default_value = "learned")]
    pub prior: PriorArg,
    #[arg(long, default_value = "attn")]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 5)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Treebank output, one tree per line.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the bare sentences, one per line.
    #[arg(long)]
    pub raw: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PerplexityArgs {
    #[arg(long, required = true)]
    pub checkpoint: Vec<PathBuf>,
    /// Test sentences.
    #[arg(long)]
    pub data: PathBuf,
    /// Training sentences for the unigram baseline.
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "auto")]
    pub format: DataFormat,
    #[arg(long, default_value = "perplexity")]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AblationArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub wsj10: bool,
    #[arg(long)]
    pub strip_punct: bool,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value = "ablation")]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Train(_) => "train",
            Command::Parse(_) => "parse",
            Command::Eval(_) => "eval",
            Command::ExportAttn(_) => "export-attn",
            Command::GenSynthetic(_) => "gen-synthetic",
            Command::Perplexity(_) => "perplexity",
            Command::Ablation(_) => "ablation",
        }
    }

    /// Where this invocation's manifest goes.
    pub fn manifest_path(&self) -> PathBuf {
        use manifest::beside;
        match self {
            Command::Train(a) => a.manifest.clone().unwrap_or_else(|| a.out.join("manifest.json")),
            Command::Parse(a) => a.manifest.clone().unwrap_or_else(|| beside(&a.out)),
            Command::Eval(a) => a.manifest.clone().unwrap_or_else(|| a.out.join("manifest.json")),
            Command::ExportAttn(a) => a.manifest.clone().unwrap_or_else(|| a.out.join("manifest.json")),
            Command::GenSynthetic(a) => a.manifest.clone().unwrap_or_else(|| beside(&a.out)),
            Command::Perplexity(a) => a.manifest.clone().unwrap_or_else(|| a.out.join("manifest.json")),
            Command::Ablation(a) => a.manifest.clone().unwrap_or_else(|| a.out.join("manifest.json")),
        }
    }
}

/// Parse `argv`, run the command and return the process exit code. The
/// manifest is written whether the command succeeds or fails.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let args: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let mut m = RunManifest::new(cli.command.name(), args);
    let result = commands::dispatch(&cli.command, &mut m);
    let code = match &result {
        Ok(()) => {
            m.status = "ok".into();
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            m.status = "error".into();
            m.error = Some(e.to_string());
            e.exit_code()
        }
    };
    let path = cli.command.manifest_path();
    if let Err(e) = m.write(&path) {
        eprintln!("error: could not write manifest: {e}");
        return code.max(1);
    }
    code
}

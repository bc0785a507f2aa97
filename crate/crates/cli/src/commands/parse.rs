use treeformer::encoder::checkpoint::Checkpoint;
use treeformer::parsing::parse_batch;
use treeformer_autograd::Real;

use crate::error::{CliError, Result};
use crate::io::{self, Pipeline};
use crate::manifest::RunManifest;
use crate::{with_checkpoint, ParseArgs};

pub fn run(a: &ParseArgs, m: &mut RunManifest) -> Result<()> {
    let (cfg, _) = super::parser_settings(&a.parser)?;
    m.set_config([
        ("parser.mode".to_string(), a.parser.mode.clone()),
        ("parser.min_layer".to_string(), cfg.min_layer.to_string()),
        ("parser.threshold".to_string(), cfg.threshold.to_string()),
    ]);
    m.checkpoint(&a.checkpoint);
    let ck = io::load_checkpoint(&a.checkpoint)?;
    let text = with_checkpoint!(ck, c => parse_file(&c, a)?);
    io::write_text(&a.out, &text)?;
    m.output(&a.out);
    Ok(())
}

fn parse_file<T: Real>(ck: &Checkpoint<T>, a: &ParseArgs) -> Result<String> {
    let (cfg, mode) = super::parser_settings(&a.parser)?;
    super::check_parser(&cfg, mode, ck.model.config.num_layers)?;
    if let Some(v) = &a.vocab {
        io::check_vocab(v, &ck.vocab)?;
    }
    let pipeline = Pipeline::from_meta(ck);
    let sentences = io::read_sentences(&a.input, a.format, pipeline)?;
    let words: Vec<Vec<String>> = sentences.iter().map(|s| pipeline.words(s)).collect();
    let ids: Vec<Vec<usize>> = words.iter().map(|w| ck.vocab.encode(w)).collect();
    let unk = ck.vocab.unk_rate(&words);
    if unk > 0.5 {
        return Err(CliError::Runtime(format!(
            "vocabulary mismatch: {:.0}% of input words are unknown to the checkpoint",
            unk * 100.0
        )));
    }
    let trees = parse_batch(&ck.model, &ids, &cfg, mode, a.parser.batch)?;
    let mut out = String::new();
    for (t, s) in trees.iter().zip(&sentences) {
        out.push_str(&t.to_bracketed(&s.words));
        out.push('\n');
    }
    Ok(out)
}

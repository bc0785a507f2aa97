use treeformer::encoder::checkpoint::Checkpoint;
use treeformer::encoder::{PriorMode, Variant};
use treeformer::evaluation::{corpus_f1, spans_from_gold, spans_from_tree, SpanConvention, SpanSet};
use treeformer::parsing::{parse_links, ParseMode, ParserConfig};
use treeformer_autograd::Real;

use crate::error::{CliError, Result};
use crate::io::{self, Pipeline};
use crate::manifest::RunManifest;
use crate::{with_checkpoint, AblationArgs};

/// F1 for every minimum layer of the layered procedure and for greedy
/// splitting on every single layer.
pub fn run(a: &AblationArgs, m: &mut RunManifest) -> Result<()> {
    m.checkpoint(&a.checkpoint);
    let ck = io::load_checkpoint(&a.checkpoint)?;
    let rows = with_checkpoint!(ck, c => sweep(&c, a)?);
    println!("{:<7}  {:>5}  {:>6}", "mode", "layer", "F1");
    for (mode, l, f) in &rows {
        println!("{mode:<7}  {l:>5}  {f:>6.1}");
    }
    io::create_dir(&a.out)?;
    let path = a.out.join("ablation.csv");
    let mut w = io::csv_writer(&path)?;
    w.write_record(["mode", "layer", "f1"])?;
    for (mode, l, f) in &rows {
        w.write_record([mode.to_string(), l.to_string(), f.to_string()])?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    m.output(&path);
    Ok(())
}

fn sweep<T: Real>(ck: &Checkpoint<T>, a: &AblationArgs) -> Result<Vec<(&'static str, usize, f64)>> {
    if ck.model.config.variant != Variant::Tree {
        return Err(CliError::Usage("ablation needs a Tree Transformer checkpoint".into()));
    }
    let conv = SpanConvention::default();
    let gold = super::eval::load_gold(&a.gold, a.strip_punct, a.wsj10)?;
    let gold_spans: Vec<SpanSet> = super::eval::gold_trees(&gold)
        .iter()
        .map(|t| spans_from_gold(t, conv))
        .collect();
    let pipeline = Pipeline::from_meta(ck);
    let ids: Vec<Vec<usize>> = gold.iter().map(|s| ck.vocab.encode(&pipeline.words(s))).collect();
    let mut links = Vec::with_capacity(ids.len());
    for part in ids.chunks(a.batch.max(1)) {
        for enc in ck.model.encode_batch(part, PriorMode::Learned)? {
            links.push(enc.links);
        }
    }
    let threshold = a.threshold.unwrap_or(ParserConfig::default().threshold);
    let layers = ck.model.config.num_layers;
    let score = |cfg: &ParserConfig, mode: ParseMode| -> Result<f64> {
        let pred = links
            .iter()
            .map(|l| parse_links(l, cfg, mode).map(|t| spans_from_tree(&t, conv)))
            .collect::<treeformer::Result<Vec<_>>>()?;
        Ok(corpus_f1(&pred, &gold_spans)?.micro.f1)
    };
    let mut rows = Vec::new();
    for min_layer in 0..layers {
        let cfg = ParserConfig { min_layer, threshold };
        rows.push(("multi", min_layer, score(&cfg, ParseMode::MultiLayer)?));
    }
    for l in 0..layers {
        rows.push(("single", l, score(&ParserConfig::default(), ParseMode::SingleLayer(l))?));
    }
    Ok(rows)
}

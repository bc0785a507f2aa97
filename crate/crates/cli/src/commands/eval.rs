use std::fmt::Write as _;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use treeformer::corpus::{self, PtbTree, TreebankSentence, DEFAULT_PUNCT_TAGS};
use treeformer::encoder::checkpoint::Checkpoint;
use treeformer::evaluation::{
    aggregate, baseline_tree, corpus_f1, label_recall, read_bracketed, spans_from_gold, spans_from_tree, BaselineKind,
    CorpusScore, LabelRecall, SpanConvention, SpanSet, DEFAULT_LABELS,
};
use treeformer::parsing::parse_batch;
use treeformer_autograd::Real;

use crate::error::{CliError, Result};
use crate::io::{self, Pipeline};
use crate::manifest::RunManifest;
use crate::{with_checkpoint, Baselines, EvalArgs};

#[derive(Debug, Serialize)]
struct Row {
    name: String,
    f1: f64,
    precision: f64,
    recall: f64,
    sentence_f1: f64,
    /// Spread over seeds, for the random baseline.
    f1_sd: Option<f64>,
    label_recall: Vec<(String, Option<f64>)>,
}

#[derive(Debug, Serialize)]
struct Report {
    convention: String,
    gold: String,
    sentences: usize,
    rows: Vec<Row>,
    median_f1: Option<f64>,
    max_f1: Option<f64>,
}

pub fn load_gold(path: &std::path::Path, strip_punct: bool, wsj10: bool) -> Result<Vec<TreebankSentence>> {
    io::require_file(path, "gold treebank")?;
    let mut gold = corpus::read_ptb(path)?;
    if wsj10 {
        gold = corpus::wsj10_filter(&gold, DEFAULT_PUNCT_TAGS)?;
    } else if strip_punct {
        gold = corpus::strip_punctuation(&gold, DEFAULT_PUNCT_TAGS)?;
    }
    if gold.is_empty() {
        return Err(CliError::Usage(format!("gold treebank `{}` has no sentences to score", path.display())));
    }
    Ok(gold)
}

pub fn gold_trees(gold: &[TreebankSentence]) -> Vec<&PtbTree> {
    gold.iter().filter_map(|s| s.tree.as_ref()).collect()
}

fn row(name: String, pred: &[SpanSet], gold_spans: &[SpanSet], trees: &[&PtbTree], conv: SpanConvention) -> Result<(Row, CorpusScore)> {
    let score = corpus_f1(pred, gold_spans)?;
    let owned: Vec<PtbTree> = trees.iter().map(|t| (*t).clone()).collect();
    let recall = label_recall(pred, &owned, DEFAULT_LABELS, conv)?;
    Ok((
        Row {
            name,
            f1: score.micro.f1,
            precision: score.micro.precision,
            recall: score.micro.recall,
            sentence_f1: score.macro_f1,
            f1_sd: None,
            label_recall: label_pairs(&recall),
        },
        score,
    ))
}

fn label_pairs(r: &[LabelRecall]) -> Vec<(String, Option<f64>)> {
    r.iter().map(|x| (x.label.clone(), x.recall)).collect()
}

/// Per-sentence length check between predictions and gold.
fn length_errors(pred_lens: &[usize], gold: &[TreebankSentence]) -> Vec<String> {
    let mut errs = Vec::new();
    if pred_lens.len() != gold.len() {
        errs.push(format!("{} predicted trees for {} gold sentences", pred_lens.len(), gold.len()));
    }
    for (i, (&p, g)) in pred_lens.iter().zip(gold).enumerate() {
        if p != g.len() {
            errs.push(format!("sentence {}: predicted tree has {p} words, gold has {}", i + 1, g.len()));
        }
    }
    errs
}

fn model_spans<T: Real>(ck: &Checkpoint<T>, gold: &[TreebankSentence], a: &EvalArgs, conv: SpanConvention) -> Result<Vec<SpanSet>> {
    let (cfg, mode) = super::parser_settings(&a.parser)?;
    super::check_parser(&cfg, mode, ck.model.config.num_layers)?;
    let pipeline = Pipeline::from_meta(ck);
    let ids: Vec<Vec<usize>> = gold.iter().map(|s| ck.vocab.encode(&pipeline.words(s))).collect();
    let trees = parse_batch(&ck.model, &ids, &cfg, mode, a.parser.batch)?;
    Ok(trees.iter().map(|t| spans_from_tree(t, conv)).collect())
}

pub fn run(a: &EvalArgs, m: &mut RunManifest) -> Result<()> {
    let conv = if a.all_spans {
        SpanConvention {
            drop_singletons: false,
            drop_whole_sentence: false,
        }
    } else {
        SpanConvention::default()
    };
    m.set_config([
        ("eval.wsj10".to_string(), a.wsj10.to_string()),
        ("eval.strip_punct".to_string(), a.strip_punct.to_string()),
        ("eval.seeds".to_string(), a.seeds.to_string()),
        ("eval.all_spans".to_string(), a.all_spans.to_string()),
        ("parser.mode".to_string(), a.parser.mode.clone()),
    ]);
    let gold = load_gold(&a.gold, a.strip_punct, a.wsj10)?;
    let trees = gold_trees(&gold);
    let gold_spans: Vec<SpanSet> = trees.iter().map(|t| spans_from_gold(t, conv)).collect();
    io::create_dir(&a.out)?;

    let mut rows = Vec::new();
    let mut model_f1 = Vec::new();
    let mut first_scores: Option<CorpusScore> = None;
    if a.baselines != Baselines::Only {
        if let Some(p) = &a.pred {
            io::require_file(p, "predicted trees")?;
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            let pred = read_bracketed(&text, &p.display().to_string())?;
            let errs = length_errors(&pred.iter().map(|t| t.words.len()).collect::<Vec<_>>(), &gold);
            if !errs.is_empty() {
                let path = a.out.join("errors.txt");
                io::write_text(&path, &(errs.join("\n") + "\n"))?;
                m.output(&path);
                let shown: Vec<&str> = errs.iter().take(20).map(String::as_str).collect();
                return Err(CliError::Runtime(format!(
                    "{} sentence mismatches between predictions and gold:\n  {}",
                    errs.len(),
                    shown.join("\n  ")
                )));
            }
            let spans: Vec<SpanSet> = pred.iter().map(|t| t.spans(conv)).collect();
            let (r, s) = row(p.display().to_string(), &spans, &gold_spans, &trees, conv)?;
            model_f1.push(r.f1);
            rows.push(r);
            first_scores = Some(s);
        } else if !a.checkpoint.is_empty() {
            for path in &a.checkpoint {
                m.checkpoint(path);
                let ck = io::load_checkpoint(path)?;
                let spans = with_checkpoint!(ck, c => model_spans(&c, &gold, a, conv)?);
                let (r, s) = row(path.display().to_string(), &spans, &gold_spans, &trees, conv)?;
                model_f1.push(r.f1);
                rows.push(r);
                first_scores.get_or_insert(s);
            }
        } else {
            return Err(CliError::Usage(
                "eval needs --pred or --checkpoint, or --baselines only".into(),
            ));
        }
    }
    if a.baselines != Baselines::None {
        rows.extend(baseline_rows(&gold, &gold_spans, &trees, conv, a.seeds)?);
    }
    let (median_f1, max_f1) = match aggregate(&model_f1) {
        Ok((md, mx)) if model_f1.len() > 1 => (Some(md), Some(mx)),
        _ => (None, None),
    };
    let report = Report {
        convention: conv.banner(),
        gold: a.gold.display().to_string(),
        sentences: gold.len(),
        rows,
        median_f1,
        max_f1,
    };
    let text = render(&report);
    print!("{text}");
    let txt = a.out.join("report.txt");
    io::write_text(&txt, &text)?;
    m.output(&txt);
    let json = a.out.join("report.json");
    let body = serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?;
    io::write_text(&json, &(body + "\n"))?;
    m.output(&json);
    if let Some(s) = first_scores {
        let path = a.out.join("per_sentence.csv");
        let mut w = io::csv_writer(&path)?;
        w.write_record(["sentence", "length", "f1"])?;
        for (i, (f, g)) in s.per_sentence.iter().zip(&gold).enumerate() {
            w.write_record([(i + 1).to_string(), g.len().to_string(), format!("{f:.4}")])?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
        m.output(&path);
    }
    Ok(())
}

fn baseline_rows(
    gold: &[TreebankSentence],
    gold_spans: &[SpanSet],
    trees: &[&PtbTree],
    conv: SpanConvention,
    seeds: u64,
) -> Result<Vec<Row>> {
    let lens: Vec<usize> = gold.iter().map(TreebankSentence::len).collect();
    let mut out = Vec::new();
    let seeds = seeds.max(1);
    let mut draws = Vec::new();
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spans: Vec<SpanSet> = lens
            .iter()
            .map(|&n| spans_from_tree(&baseline_tree(n, BaselineKind::Random, &mut rng), conv))
            .collect();
        draws.push(row(String::new(), &spans, gold_spans, trees, conv)?.0);
    }
    let k = draws.len() as f64;
    let mean = |f: &dyn Fn(&Row) -> f64| draws.iter().map(f).sum::<f64>() / k;
    let f1 = mean(&|r| r.f1);
    let sd = (draws.iter().map(|r| (r.f1 - f1).powi(2)).sum::<f64>() / k).sqrt();
    let recall = draws[0]
        .label_recall
        .iter()
        .enumerate()
        .map(|(i, (label, first))| {
            let v = first.map(|_| draws.iter().filter_map(|r| r.label_recall[i].1).sum::<f64>() / k);
            (label.clone(), v)
        })
        .collect();
    out.push(Row {
        name: format!("random ({seeds} seeds)"),
        f1,
        precision: mean(&|r| r.precision),
        recall: mean(&|r| r.recall),
        sentence_f1: mean(&|r| r.sentence_f1),
        f1_sd: Some(sd),
        label_recall: recall,
    });
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for kind in [BaselineKind::Left, BaselineKind::Right] {
        let spans: Vec<SpanSet> = lens
            .iter()
            .map(|&n| spans_from_tree(&baseline_tree(n, kind, &mut rng), conv))
            .collect();
        out.push(row(kind.name().to_string(), &spans, gold_spans, trees, conv)?.0);
    }
    Ok(out)
}

fn render(r: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{}", r.convention);
    let _ = writeln!(s, "gold: {} ({} sentences)", r.gold, r.sentences);
    let _ = writeln!(s);
    let width = r.rows.iter().map(|x| x.name.len()).max().unwrap_or(4).max(4);
    let _ = writeln!(s, "{:<width$}  {:>6}  {:>6}  {:>6}  {:>7}", "name", "F1", "P", "R", "sent-F1");
    for x in &r.rows {
        let mut line = format!(
            "{:<width$}  {:>6.1}  {:>6.1}  {:>6.1}  {:>7.1}",
            x.name, x.f1, x.precision, x.recall, x.sentence_f1
        );
        if let Some(sd) = x.f1_sd {
            let _ = write!(line, "  (sd {sd:.2})");
        }
        let _ = writeln!(s, "{line}");
    }
    if let (Some(md), Some(mx)) = (r.median_f1, r.max_f1) {
        let _ = writeln!(s, "median F1 {md:.1}, max F1 {mx:.1}");
    }
    let _ = writeln!(s);
    let _ = write!(s, "{:<width$}", "recall");
    for l in DEFAULT_LABELS {
        let _ = write!(s, "  {l:>6}");
    }
    let _ = writeln!(s);
    for x in &r.rows {
        let _ = write!(s, "{:<width$}", x.name);
        for (_, v) in &x.label_recall {
            match v {
                Some(v) => {
                    let _ = write!(s, "  {v:>6.1}");
                }
                None => {
                    let _ = write!(s, "  {:>6}", "n/a");
                }
            }
        }
        let _ = writeln!(s);
    }
    s
}

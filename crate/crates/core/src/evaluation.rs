//! Unlabeled bracketing F1, recall by gold label, and trivial baseline trees.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use crate::corpus::ptb::{base_label, PtbTree};
use crate::corpus::sexpr::{self, SExpr};
use crate::error::{Error, Result};
use crate::parsing::ParseTree;

/// Labels whose recall is reported by default.
pub const DEFAULT_LABELS: &[&str] = &["NP", "VP", "PP", "ADJP", "SBAR", "ADVP"];

/// Spans as 0-based inclusive `(start, end)` pairs.
pub type SpanSet = BTreeSet<(usize, usize)>;

/// Which spans are scored.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpanConvention {
    pub drop_singletons: bool,
    pub drop_whole_sentence: bool,
}

impl Default for SpanConvention {
    fn default() -> Self {
        SpanConvention {
            drop_singletons: true,
            drop_whole_sentence: true,
        }
    }
}

impl SpanConvention {
    pub fn keeps(&self, (s, e): (usize, usize), n: usize) -> bool {
        !(self.drop_singletons && s == e) && !(self.drop_whole_sentence && s == 0 && e + 1 == n)
    }

    /// One-line description printed with every report.
    pub fn banner(&self) -> String {
        let yn = |b: bool| if b { "excluded" } else { "included" };
        format!(
            "span convention: single-word spans {}, whole-sentence span {}",
            yn(self.drop_singletons),
            yn(self.drop_whole_sentence)
        )
    }
}

pub fn spans_from_tree(tree: &ParseTree, conv: SpanConvention) -> SpanSet {
    let n = tree.end() + 1;
    tree.all_spans().into_iter().filter(|&sp| conv.keeps(sp, n)).collect()
}

pub fn spans_from_gold(tree: &PtbTree, conv: SpanConvention) -> SpanSet {
    let n = tree.num_words();
    tree.labeled_spans()
        .into_iter()
        .map(|(_, s, e)| (s, e))
        .filter(|&sp| conv.keeps(sp, n))
        .collect()
}

/// An unlabeled bracketed tree as the parser writes it: the words in order
/// and the span of every bracket.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BracketedTree {
    pub words: Vec<String>,
    pub brackets: Vec<(usize, usize)>,
}

impl BracketedTree {
    pub fn spans(&self, conv: SpanConvention) -> SpanSet {
        let n = self.words.len();
        self.brackets.iter().copied().filter(|&sp| conv.keeps(sp, n)).collect()
    }
}

/// Every bracketed tree in `text`, one per top-level expression.
pub fn read_bracketed(text: &str, source: &str) -> Result<Vec<BracketedTree>> {
    fn walk(e: &SExpr, t: &mut BracketedTree) {
        match e {
            SExpr::Atom(w) => t.words.push(w.clone()),
            SExpr::List(items) => {
                let start = t.words.len();
                for it in items {
                    walk(it, t);
                }
                if t.words.len() > start {
                    t.brackets.push((start, t.words.len() - 1));
                }
            }
        }
    }
    let exprs = sexpr::parse_all(text).map_err(|e| Error::Parse {
        path: source.to_string(),
        line: e.line,
        msg: e.msg,
    })?;
    Ok(exprs
        .iter()
        .map(|(e, _)| {
            let mut t = BracketedTree {
                words: Vec::new(),
                brackets: Vec::new(),
            };
            walk(e, &mut t);
            t
        })
        .collect())
}

/// Precision, recall and F1 in percent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn prf(matched: usize, n_pred: usize, n_gold: usize) -> Prf {
    if n_pred == 0 && n_gold == 0 {
        return Prf {
            precision: 100.0,
            recall: 100.0,
            f1: 100.0,
        };
    }
    let p = if n_pred == 0 { 0.0 } else { matched as f64 / n_pred as f64 };
    let r = if n_gold == 0 { 0.0 } else { matched as f64 / n_gold as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    Prf {
        precision: 100.0 * p,
        recall: 100.0 * r,
        f1: 100.0 * f,
    }
}

/// Set precision/recall/F1. Two empty sets agree vacuously (F1 = 100).
pub fn f1(pred: &SpanSet, gold: &SpanSet) -> Prf {
    prf(pred.intersection(gold).count(), pred.len(), gold.len())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusScore {
    /// Pooled over all spans of all sentences.
    pub micro: Prf,
    /// Mean of per-sentence F1.
    pub macro_f1: f64,
    pub per_sentence: Vec<f64>,
}

pub fn corpus_f1(pred: &[SpanSet], gold: &[SpanSet]) -> Result<CorpusScore> {
    if pred.len() != gold.len() {
        return Err(Error::Invalid(format!(
            "{} predicted trees for {} gold trees",
            pred.len(),
            gold.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Invalid("no sentences to score".into()));
    }
    let (mut m, mut np, mut ng) = (0, 0, 0);
    let mut per = Vec::with_capacity(pred.len());
    for (p, g) in pred.iter().zip(gold) {
        m += p.intersection(g).count();
        np += p.len();
        ng += g.len();
        per.push(f1(p, g).f1);
    }
    Ok(CorpusScore {
        micro: prf(m, np, ng),
        macro_f1: per.iter().sum::<f64>() / per.len() as f64,
        per_sentence: per,
    })
}

/// Recall of gold constituents per label, pooled over the corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelRecall {
    pub label: String,
    pub gold_count: usize,
    /// `None` when the label never occurs in the gold trees.
    pub recall: Option<f64>,
}

pub fn label_recall(
    pred: &[SpanSet],
    gold: &[PtbTree],
    labels: &[&str],
    conv: SpanConvention,
) -> Result<Vec<LabelRecall>> {
    if pred.len() != gold.len() {
        return Err(Error::Invalid(format!(
            "{} predicted trees for {} gold trees",
            pred.len(),
            gold.len()
        )));
    }
    let mut hits: BTreeMap<&str, (usize, usize)> = labels.iter().map(|&l| (l, (0, 0))).collect();
    for (p, g) in pred.iter().zip(gold) {
        let n = g.num_words();
        let items: BTreeSet<(String, usize, usize)> = g
            .labeled_spans()
            .into_iter()
            .map(|(l, s, e)| (base_label(&l).to_string(), s, e))
            .filter(|(_, s, e)| conv.keeps((*s, *e), n))
            .collect();
        for (l, s, e) in &items {
            if let Some(h) = hits.get_mut(l.as_str()) {
                h.1 += 1;
                if p.contains(&(*s, *e)) {
                    h.0 += 1;
                }
            }
        }
    }
    Ok(labels
        .iter()
        .map(|&l| {
            let (hit, total) = hits[l];
            LabelRecall {
                label: l.to_string(),
                gold_count: total,
                recall: (total > 0).then(|| 100.0 * hit as f64 / total as f64),
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineKind {
    Random,
    Left,
    Right,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Random => "random",
            BaselineKind::Left => "left-branching",
            BaselineKind::Right => "right-branching",
        }
    }
}

/// Trivial binary tree over `n ≥ 1` tokens. The random tree picks every split
/// point uniformly within its span.
pub fn baseline_tree<R: Rng + ?Sized>(n: usize, kind: BaselineKind, rng: &mut R) -> ParseTree {
    fn build<R: Rng + ?Sized>(s: usize, e: usize, kind: BaselineKind, rng: &mut R) -> ParseTree {
        if s == e {
            return ParseTree::leaf(s, s);
        }
        let b = match kind {
            BaselineKind::Right => s,
            BaselineKind::Left => e - 1,
            BaselineKind::Random => rng.gen_range(s..e),
        };
        ParseTree::node(build(s, b, kind, rng), build(b + 1, e, kind, rng))
    }
    build(0, n.max(1) - 1, kind, rng)
}

/// Median (lower middle for an even count) and maximum.
pub fn aggregate(runs: &[f64]) -> Result<(f64, f64)> {
    if runs.is_empty() {
        return Err(Error::Invalid("aggregate needs at least one run".into()));
    }
    let mut v = runs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    Ok((v[(v.len() - 1) / 2], v[v.len() - 1]))
}

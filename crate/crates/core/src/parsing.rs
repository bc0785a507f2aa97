//! Reading unlabeled constituency trees out of neighbor link probabilities.

use std::fmt;

use treeformer_autograd::Real;

use crate::constituent::NeighborLinks;
use crate::encoder::{Model, PriorMode, Variant};
use crate::error::{Error, Result};

/// Binary span tree over token indices `start..=end`. Leaves may cover several tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ParseTree {
    Leaf { start: usize, end: usize },
    Node(Box<ParseTree>, Box<ParseTree>),
}

impl ParseTree {
    pub fn leaf(start: usize, end: usize) -> Self {
        ParseTree::Leaf { start, end }
    }

    pub fn node(left: ParseTree, right: ParseTree) -> Self {
        ParseTree::Node(Box::new(left), Box::new(right))
    }

    pub fn start(&self) -> usize {
        match self {
            ParseTree::Leaf { start, .. } => *start,
            ParseTree::Node(l, _) => l.start(),
        }
    }

    pub fn end(&self) -> usize {
        match self {
            ParseTree::Leaf { end, .. } => *end,
            ParseTree::Node(_, r) => r.end(),
        }
    }

    /// Every node's span, internal nodes and leaves alike, in pre-order.
    pub fn all_spans(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        self.walk(&mut out);
        out
    }

    fn walk(&self, out: &mut Vec<(usize, usize)>) {
        out.push((self.start(), self.end()));
        if let ParseTree::Node(l, r) = self {
            l.walk(out);
            r.walk(out);
        }
    }

    /// Check the tree covers exactly `0..n` with adjacent, ordered children.
    pub fn validate(&self, n: usize) -> Result<()> {
        fn check(t: &ParseTree) -> std::result::Result<(), String> {
            match t {
                ParseTree::Leaf { start, end } if start > end => Err(format!("leaf {start}..{end} is empty")),
                ParseTree::Leaf { .. } => Ok(()),
                ParseTree::Node(l, r) => {
                    if l.end() + 1 != r.start() {
                        return Err(format!(
                            "children {}..{} and {}..{} are not adjacent",
                            l.start(),
                            l.end(),
                            r.start(),
                            r.end()
                        ));
                    }
                    check(l)?;
                    check(r)
                }
            }
        }
        if n == 0 || self.start() != 0 || self.end() != n - 1 {
            return Err(Error::Invalid(format!(
                "tree spans {}..{} but the sentence has {n} tokens",
                self.start(),
                self.end()
            )));
        }
        check(self).map_err(Error::Invalid)
    }

    /// Bracketed form over `words`: single-token leaves are bare words,
    /// multi-token leaves are flat brackets, and the root is always bracketed.
    pub fn to_bracketed<S: AsRef<str>>(&self, words: &[S]) -> String {
        let mut s = String::new();
        self.write(words, &mut s);
        if let ParseTree::Leaf { start, end } = self {
            if start == end {
                return format!("({s})");
            }
        }
        s
    }

    fn write<S: AsRef<str>>(&self, words: &[S], out: &mut String) {
        match self {
            ParseTree::Leaf { start, end } if start == end => out.push_str(words[*start].as_ref()),
            ParseTree::Leaf { start, end } => {
                out.push('(');
                let inner: Vec<&str> = words[*start..=*end].iter().map(|w| w.as_ref()).collect();
                out.push_str(&inner.join(" "));
                out.push(')');
            }
            ParseTree::Node(l, r) => {
                out.push('(');
                l.write(words, out);
                out.push(' ');
                r.write(words, out);
                out.push(')');
            }
        }
    }
}

impl fmt::Display for ParseTree {
    /// Bracketed form with token indices in place of words.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let words: Vec<String> = (0..=self.end()).map(|i| i.to_string()).collect();
        f.write_str(&self.to_bracketed(&words))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParserConfig {
    /// Lowest layer whose links are trusted.
    pub min_layer: usize,
    /// A span whose weakest link exceeds this is not split at the current layer.
    pub threshold: f64,
}

impl Default for ParserConfig {
    fn default() -> Self {
        ParserConfig {
            min_layer: 3,
            threshold: 0.8,
        }
    }
}

/// Index of the smallest value in `a[s..e]` (link indices), lowest index on ties.
fn argmin(a: &[f64], s: usize, e: usize) -> usize {
    let mut best = s;
    for k in s + 1..e {
        if a[k] < a[best] {
            best = k;
        }
    }
    best
}

/// Multi-layer decoding: start at the top layer over the whole sentence and
/// descend toward `min_layer` whenever a span's weakest link is above the threshold.
pub fn build_tree(links: &[NeighborLinks], cfg: &ParserConfig) -> Result<ParseTree> {
    let layers = links.len();
    if layers == 0 {
        return Err(Error::Config("no link layers to parse from".into()));
    }
    if cfg.min_layer >= layers {
        return Err(Error::Config(format!(
            "min_layer: {} must be below the number of layers {layers}",
            cfg.min_layer
        )));
    }
    let m = links[0].probs.len();
    if links.iter().any(|l| l.probs.len() != m) {
        return Err(Error::Invalid("link layers have different lengths".into()));
    }
    let a: Vec<&[f64]> = links.iter().map(|l| l.probs.as_slice()).collect();
    Ok(decode(&a, cfg, layers - 1, 0, m))
}

fn decode(a: &[&[f64]], cfg: &ParserConfig, l: usize, s: usize, e: usize) -> ParseTree {
    if e - s < 2 {
        return ParseTree::leaf(s, e);
    }
    let b = argmin(a[l], s, e);
    let last = l.saturating_sub(1).max(cfg.min_layer);
    if a[l][b] > cfg.threshold {
        if l == cfg.min_layer {
            return ParseTree::leaf(s, e);
        }
        return decode(a, cfg, last, s, e);
    }
    ParseTree::node(decode(a, cfg, last, s, b), decode(a, cfg, last, b + 1, e))
}

/// Split at the weakest link of one layer, recursively, until spans have at most two tokens.
pub fn greedy_parse_layer(links: &NeighborLinks) -> ParseTree {
    greedy(&links.probs, 0, links.probs.len())
}

fn greedy(a: &[f64], s: usize, e: usize) -> ParseTree {
    if e - s < 2 {
        return ParseTree::leaf(s, e);
    }
    let b = argmin(a, s, e);
    ParseTree::node(greedy(a, s, b), greedy(a, b + 1, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParseMode {
    MultiLayer,
    SingleLayer(usize),
}

impl ParseMode {
    /// `multi` or `layer=<l>`.
    pub fn parse(s: &str) -> Result<Self> {
        if s == "multi" {
            return Ok(ParseMode::MultiLayer);
        }
        s.strip_prefix("layer=")
            .and_then(|l| l.parse().ok())
            .map(ParseMode::SingleLayer)
            .ok_or_else(|| Error::Config(format!("mode: expected `multi` or `layer=<l>`, got `{s}`")))
    }
}

/// Decode a tree from one sentence's per-layer links.
pub fn parse_links(links: &[NeighborLinks], cfg: &ParserConfig, mode: ParseMode) -> Result<ParseTree> {
    match mode {
        ParseMode::MultiLayer => build_tree(links, cfg),
        ParseMode::SingleLayer(l) => links
            .get(l)
            .map(greedy_parse_layer)
            .ok_or_else(|| Error::Config(format!("layer {l} out of range (model has {})", links.len()))),
    }
}

/// Parse many sentences, running the encoder in chunks of `chunk` sentences.
pub fn parse_batch<T: Real>(
    model: &Model<T>,
    sentences: &[Vec<usize>],
    cfg: &ParserConfig,
    mode: ParseMode,
    chunk: usize,
) -> Result<Vec<ParseTree>> {
    if model.config.variant != Variant::Tree {
        return Err(Error::Config("a plain Transformer has no links to parse from".into()));
    }
    let mut out = Vec::with_capacity(sentences.len());
    for part in sentences.chunks(chunk.max(1)) {
        for enc in model.encode_batch(part, PriorMode::Learned)? {
            out.push(parse_links(&enc.links, cfg, mode)?);
        }
    }
    Ok(out)
}

pub fn parse_sentence<T: Real>(
    model: &Model<T>,
    tokens: &[usize],
    cfg: &ParserConfig,
    mode: ParseMode,
) -> Result<ParseTree> {
    Ok(parse_batch(model, &[tokens.to_vec()], cfg, mode, 1)?.remove(0))
}

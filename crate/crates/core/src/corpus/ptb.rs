//! Penn Treebank bracketed trees.

use std::fmt;
use std::path::Path;

use super::sexpr::{self, SExpr};
use crate::error::{Error, Result};

/// Labeled constituency tree. Preterminals are stored as [`PtbTree::Word`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PtbTree {
    Node { label: String, children: Vec<PtbTree> },
    Word { tag: String, word: String },
}

/// Tag used for traces and empty elements.
pub const EMPTY_TAG: &str = "-NONE-";

/// Punctuation POS tags removed before WSJ-10 length filtering.
pub const DEFAULT_PUNCT_TAGS: &[&str] = &["''", "``", ".", ":", ",", "-LRB-", "-RRB-", "#", "$"];

impl PtbTree {
    pub fn words(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.visit_words(&mut |_, w| out.push(w));
        out
    }

    pub fn tags(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.visit_words(&mut |t, _| out.push(t));
        out
    }

    fn visit_words<'a>(&'a self, f: &mut impl FnMut(&'a str, &'a str)) {
        match self {
            PtbTree::Word { tag, word } => f(tag, word),
            PtbTree::Node { children, .. } => children.iter().for_each(|c| c.visit_words(f)),
        }
    }

    pub fn num_words(&self) -> usize {
        match self {
            PtbTree::Word { .. } => 1,
            PtbTree::Node { children, .. } => children.iter().map(|c| c.num_words()).sum(),
        }
    }

    /// Phrasal levels on the longest root-to-word path.
    pub fn depth(&self) -> usize {
        match self {
            PtbTree::Word { .. } => 0,
            PtbTree::Node { children, .. } => 1 + children.iter().map(|c| c.depth()).max().unwrap_or(0),
        }
    }

    /// `(label, start, end)` for every phrasal node, 0-based inclusive word indices.
    /// Unary chains yield one entry per node.
    pub fn labeled_spans(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        self.collect_spans(0, &mut out);
        out
    }

    fn collect_spans(&self, start: usize, out: &mut Vec<(String, usize, usize)>) -> usize {
        match self {
            PtbTree::Word { .. } => 1,
            PtbTree::Node { label, children } => {
                let mut width = 0;
                for c in children {
                    width += c.collect_spans(start + width, out);
                }
                if width > 0 {
                    out.push((label.clone(), start, start + width - 1));
                }
                width
            }
        }
    }

    /// Keep only words whose tag satisfies `keep`; phrasal nodes left empty are removed.
    /// Returns `None` if nothing survives.
    pub fn prune(&self, keep: &impl Fn(&str) -> bool) -> Option<PtbTree> {
        match self {
            PtbTree::Word { tag, .. } => keep(tag).then(|| self.clone()),
            PtbTree::Node { label, children } => {
                let kept: Vec<PtbTree> = children.iter().filter_map(|c| c.prune(keep)).collect();
                (!kept.is_empty()).then(|| PtbTree::Node {
                    label: label.clone(),
                    children: kept,
                })
            }
        }
    }

    fn from_sexpr(expr: &SExpr) -> std::result::Result<PtbTree, String> {
        let SExpr::List(items) = expr else {
            return Err("expected a bracketed tree".into());
        };
        match items.as_slice() {
            [] => Err("empty brackets".into()),
            // `( (S ...) )` wrapper with no label.
            [inner @ SExpr::List(_)] => PtbTree::from_sexpr(inner),
            [SExpr::Atom(tag), SExpr::Atom(word)] => Ok(PtbTree::Word {
                tag: tag.clone(),
                word: word.clone(),
            }),
            [SExpr::Atom(label), rest @ ..] if !rest.is_empty() => {
                let children = rest
                    .iter()
                    .map(|c| match c {
                        SExpr::Atom(a) => Err(format!("bare word `{a}` under `{label}` without a POS tag")),
                        list => PtbTree::from_sexpr(list),
                    })
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                Ok(PtbTree::Node {
                    label: label.clone(),
                    children,
                })
            }
            [SExpr::Atom(label)] => Err(format!("node `{label}` has no children")),
            _ => Err("node without a label".into()),
        }
    }
}

impl fmt::Display for PtbTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PtbTree::Word { tag, word } => write!(f, "({tag} {word})"),
            PtbTree::Node { label, children } => {
                write!(f, "({label}")?;
                for c in children {
                    write!(f, " {c}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// Strip function tags and indices: `NP-SBJ-1` → `NP`, `PP=2` → `PP`.
/// Labels that start with `-` (`-NONE-`, `-LRB-`) are returned unchanged.
pub fn base_label(label: &str) -> &str {
    if label.starts_with('-') {
        return label;
    }
    let end = label.find(['-', '=']).unwrap_or(label.len());
    &label[..end]
}

/// Parse treebank text. Traces (`-NONE-`) are dropped and emptied phrases pruned.
pub fn parse_ptb_str(text: &str, source: &str) -> Result<Vec<PtbTree>> {
    let exprs = sexpr::parse_all(text).map_err(|e| Error::Parse {
        path: source.to_string(),
        line: e.line,
        msg: e.msg,
    })?;
    if exprs.is_empty() {
        return Err(Error::Parse {
            path: source.to_string(),
            line: 1,
            msg: "no trees found".into(),
        });
    }
    let mut trees = Vec::with_capacity(exprs.len());
    for (expr, line) in exprs {
        let tree = PtbTree::from_sexpr(&expr).map_err(|msg| Error::Parse {
            path: source.to_string(),
            line,
            msg,
        })?;
        match tree.prune(&|t| t != EMPTY_TAG) {
            Some(t) => trees.push(t),
            None => log::warn!("{source}:{line}: tree has no overt words, skipped"),
        }
    }
    Ok(trees)
}

pub fn read_ptb_trees(path: impl AsRef<Path>) -> Result<Vec<PtbTree>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ptb_str(&text, &path.display().to_string())
}

//! Binary-branching probabilistic grammar that emits labeled gold trees.
//!
//! The bundled grammar has a 50-word lexicon: determiners agree in number with
//! their noun, which gives noun phrases strong internal dependencies while the
//! remaining categories are only distributional.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ptb::PtbTree;
use super::TreebankSentence;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
struct Phrase {
    label: String,
    rules: Vec<(f64, String, String)>,
}

#[derive(Clone, Debug)]
struct Preterminal {
    tag: String,
    words: Vec<String>,
}

/// A grammar whose phrasal rules are all binary. Symbols are either phrasal
/// (expanded by rules) or preterminal (emit one word uniformly from a list).
#[derive(Clone, Debug)]
pub struct Pcfg {
    start: String,
    phrases: HashMap<String, Phrase>,
    preterminals: HashMap<String, Preterminal>,
    min_depth: HashMap<String, usize>,
}

impl Pcfg {
    pub fn new(start: &str) -> Self {
        Pcfg {
            start: start.to_string(),
            phrases: HashMap::new(),
            preterminals: HashMap::new(),
            min_depth: HashMap::new(),
        }
    }

    /// Add `symbol → left right` with weight `w`; `label` is the bracket label written to trees.
    pub fn rule(mut self, symbol: &str, label: &str, w: f64, left: &str, right: &str) -> Self {
        self.phrases
            .entry(symbol.to_string())
            .or_insert_with(|| Phrase {
                label: label.to_string(),
                rules: Vec::new(),
            })
            .rules
            .push((w, left.to_string(), right.to_string()));
        self
    }

    pub fn lexicon(mut self, symbol: &str, tag: &str, words: &[&str]) -> Self {
        self.preterminals.insert(
            symbol.to_string(),
            Preterminal {
                tag: tag.to_string(),
                words: words.iter().map(|w| w.to_string()).collect(),
            },
        );
        self
    }

    /// Check every symbol is defined and compute the shallowest derivation depth
    /// of each phrasal symbol (a phrase over two preterminals has depth 1).
    pub fn finish(mut self) -> Result<Self> {
        for p in self.phrases.values() {
            for (_, l, r) in &p.rules {
                for s in [l, r] {
                    if !self.phrases.contains_key(s) && !self.preterminals.contains_key(s) {
                        return Err(Error::Config(format!("grammar symbol `{s}` is undefined")));
                    }
                }
            }
        }
        if !self.phrases.contains_key(&self.start) {
            return Err(Error::Config(format!("start symbol `{}` has no rules", self.start)));
        }
        let mut depth: HashMap<String, usize> = HashMap::new();
        loop {
            let mut changed = false;
            for (sym, p) in &self.phrases {
                let best = p
                    .rules
                    .iter()
                    .filter_map(|(_, l, r)| {
                        let d = |s: &String| {
                            if self.preterminals.contains_key(s) {
                                Some(0)
                            } else {
                                depth.get(s).copied()
                            }
                        };
                        Some(1 + d(l)?.max(d(r)?))
                    })
                    .min();
                if let Some(b) = best {
                    if depth.get(sym).is_none_or(|&cur| b < cur) {
                        depth.insert(sym.clone(), b);
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        if let Some(sym) = self.phrases.keys().find(|s| !depth.contains_key(*s)) {
            return Err(Error::Config(format!("grammar symbol `{sym}` never terminates")));
        }
        self.min_depth = depth;
        Ok(self)
    }

    fn depth_of(&self, s: &str) -> usize {
        if self.preterminals.contains_key(s) {
            0
        } else {
            self.min_depth[s]
        }
    }

    /// Sample a tree with at most `max_depth` phrasal levels on any path.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, max_depth: usize) -> Result<PtbTree> {
        if self.depth_of(&self.start) > max_depth {
            return Err(Error::Config(format!(
                "grammar needs depth {} but max depth is {max_depth}",
                self.depth_of(&self.start)
            )));
        }
        Ok(self.expand(&self.start, max_depth, rng))
    }

    fn expand<R: Rng + ?Sized>(&self, sym: &str, budget: usize, rng: &mut R) -> PtbTree {
        if let Some(pt) = self.preterminals.get(sym) {
            let word = pt.words[rng.gen_range(0..pt.words.len())].clone();
            return PtbTree::Word {
                tag: pt.tag.clone(),
                word,
            };
        }
        let phrase = &self.phrases[sym];
        let allowed: Vec<&(f64, String, String)> = phrase
            .rules
            .iter()
            .filter(|(_, l, r)| 1 + self.depth_of(l).max(self.depth_of(r)) <= budget)
            .collect();
        let total: f64 = allowed.iter().map(|r| r.0).sum();
        let mut pick = rng.gen::<f64>() * total;
        let mut chosen = allowed[allowed.len() - 1];
        for r in &allowed {
            if pick < r.0 {
                chosen = r;
                break;
            }
            pick -= r.0;
        }
        let (_, l, r) = chosen;
        PtbTree::Node {
            label: phrase.label.clone(),
            children: vec![self.expand(l, budget - 1, rng), self.expand(r, budget - 1, rng)],
        }
    }

    /// Every word the grammar can emit.
    pub fn vocabulary(&self) -> Vec<String> {
        let mut words: Vec<String> = self
            .preterminals
            .values()
            .flat_map(|p| p.words.iter().cloned())
            .collect();
        words.sort();
        words.dedup();
        words
    }
}

/// The bundled 50-word grammar.
pub fn bundled_grammar() -> Pcfg {
    Pcfg::new("S")
        .rule("S", "S", 0.5, "NPs", "VP")
        .rule("S", "S", 0.5, "NPp", "VP")
        .rule("NPs", "NP", 0.55, "Ds", "Ns")
        .rule("NPs", "NP", 0.25, "Ds", "NXs")
        .rule("NPs", "NP", 0.20, "NPs", "PP")
        .rule("NPp", "NP", 0.55, "Dp", "Np")
        .rule("NPp", "NP", 0.25, "Dp", "NXp")
        .rule("NPp", "NP", 0.20, "NPp", "PP")
        .rule("NXs", "NX", 0.85, "A", "Ns")
        .rule("NXs", "NX", 0.15, "A", "NXs")
        .rule("NXp", "NX", 0.85, "A", "Np")
        .rule("NXp", "NX", 0.15, "A", "NXp")
        .rule("VP", "VP", 0.28, "V", "NPs")
        .rule("VP", "VP", 0.28, "V", "NPp")
        .rule("VP", "VP", 0.14, "VP", "PP")
        .rule("VP", "VP", 0.10, "Adv", "VP")
        .rule("VP", "VP", 0.10, "V", "Adv")
        .rule("VP", "VP", 0.10, "V", "SBAR")
        .rule("PP", "PP", 0.5, "P", "NPs")
        .rule("PP", "PP", 0.5, "P", "NPp")
        .rule("SBAR", "SBAR", 1.0, "C", "S")
        .lexicon("Ds", "DT", &["a", "this", "every", "one"])
        .lexicon("Dp", "DT", &["these", "many", "some", "two"])
        .lexicon(
            "Ns",
            "NN",
            &["dog", "cat", "bird", "man", "woman", "child", "car", "house", "ball", "tree"],
        )
        .lexicon(
            "Np",
            "NNS",
            &["dogs", "cats", "birds", "men", "women", "children", "cars", "houses", "balls", "trees"],
        )
        .lexicon("A", "JJ", &["big", "small", "red", "old", "happy", "quiet"])
        .lexicon("V", "VBD", &["saw", "liked", "found", "held", "chased", "ate", "met", "took"])
        .lexicon("P", "IN", &["with", "near", "under", "behind"])
        .lexicon("Adv", "RB", &["often", "never"])
        .lexicon("C", "IN", &["that", "because"])
        .finish()
        .expect("bundled grammar is well formed")
}

/// Deterministic treebank of `n` sentences from the bundled grammar.
pub fn generate_treebank(n: usize, max_depth: usize, seed: u64) -> Result<Vec<TreebankSentence>> {
    let g = bundled_grammar();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| g.sample(&mut rng, max_depth).map(TreebankSentence::from_tree))
        .collect()
}

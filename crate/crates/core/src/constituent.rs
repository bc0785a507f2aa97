//! Neighbor link probabilities and the constituent prior that gates attention.
//!
//! Graph functions operate on right-padded batches: hidden states are
//! `[B, N, D]`, links `[B, N-1]`, priors `[B, N, N]`. Value-level wrappers on
//! [`NeighborLinks`] and [`ConstituentPrior`] run the same graph code on a
//! single sentence, so there is one implementation of every formula.

use treeformer_autograd::{Array, Bound, Graph, ParamId, ParamStore, Real, Var};

use crate::error::Result;
use crate::layout::BatchLayout;

/// Links below this value are treated as exactly zero by the prior.
pub const LINK_FLOOR: f64 = 1e-12;

/// Score given to a link that does not exist (sentence boundary or padding).
const MISSING_SCORE: f64 = -1e9;

/// Stand-in for `log 0` in masked prior entries; `exp` of it is exactly zero.
const LOG_ZERO: f64 = -1e30;

/// Per-layer merge probabilities of adjacent words: `probs[i]` is the chance
/// that words `i` and `i + 1` belong to the same constituent.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborLinks {
    pub layer: usize,
    pub probs: Vec<f64>,
}

/// `n × n` row-major symmetric matrix with unit diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstituentPrior {
    pub layer: usize,
    pub n: usize,
    pub matrix: Vec<f64>,
}

/// Link query/key projections, separate from the attention heads' own.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinkProjection {
    pub query_w: ParamId,
    pub query_b: ParamId,
    pub key_w: ParamId,
    pub key_b: ParamId,
}

/// Directed scores to each neighbor, both `[B, N-1]`.
/// `right[i]` scores word `i` linking to `i + 1`; `left[i]` scores `i + 1` linking to `i`.
#[derive(Clone, Copy, Debug)]
pub struct LinkScores {
    pub right: Var,
    pub left: Var,
}

/// Directed link probabilities, both `[B, N]`: `to_right[i] = p[i→i+1]`, `to_left[i] = p[i→i-1]`.
#[derive(Clone, Copy, Debug)]
pub struct LinkProbs {
    pub to_right: Var,
    pub to_left: Var,
}

impl LinkProjection {
    pub fn register<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        init: &mut impl FnMut(&[usize]) -> Array<T>,
        d_model: usize,
    ) -> Result<Self> {
        Ok(LinkProjection {
            query_w: store.insert(format!("{prefix}.link_query.weight"), init(&[d_model, d_model]))?,
            query_b: store.insert(format!("{prefix}.link_query.bias"), Array::zeros([d_model]))?,
            key_w: store.insert(format!("{prefix}.link_key.weight"), init(&[d_model, d_model]))?,
            key_b: store.insert(format!("{prefix}.link_key.bias"), Array::zeros([d_model]))?,
        })
    }

    /// Link queries and keys for `hidden` of shape `[B, N, D]`.
    pub fn project<T: Real>(&self, g: &mut Graph<T>, p: &Bound, hidden: Var) -> Result<(Var, Var)> {
        let q = g.matmul(hidden, p.var(self.query_w))?;
        let q = g.add(q, p.var(self.query_b))?;
        let k = g.matmul(hidden, p.var(self.key_w))?;
        let k = g.add(k, p.var(self.key_b))?;
        Ok((q, k))
    }
}

/// `s[i,i+1] = q_i·k_{i+1} / (d_model/2)` and its mirror, from `[B, N, D]` queries and keys.
pub fn neighbor_scores<T: Real>(g: &mut Graph<T>, query: Var, key: Var) -> Result<LinkScores> {
    let shape = g.shape(query).to_vec();
    let (n, d_model) = (shape[1], shape[2]);
    let m = n.saturating_sub(1);
    let scale = T::from_f64(2.0 / d_model as f64);
    let q_lo = g.slice(query, 1, 0, m)?;
    let q_hi = g.slice(query, 1, n - m, n)?;
    let k_lo = g.slice(key, 1, 0, m)?;
    let k_hi = g.slice(key, 1, n - m, n)?;
    let right = g.mul(q_lo, k_hi)?;
    let right = g.sum(right, 2, false)?;
    let left = g.mul(q_hi, k_lo)?;
    let left = g.sum(left, 2, false)?;
    Ok(LinkScores {
        right: g.scale(right, scale),
        left: g.scale(left, scale),
    })
}

/// Softmax over each word's two links. A link that leaves the sentence scores
/// effectively `-inf`, so a boundary word links to its only neighbor with probability 1.
pub fn neighbor_softmax<T: Real>(g: &mut Graph<T>, scores: LinkScores, layout: &BatchLayout) -> Result<LinkProbs> {
    let (b, n) = (layout.batch, layout.seq_len);
    let pad = g.constant(Array::zeros([b, 1]));
    let right = g.concat(&[scores.right, pad], 1)?;
    let left = g.concat(&[pad, scores.left], 1)?;
    let mut right_missing = Vec::with_capacity(b * n);
    let mut left_missing = Vec::with_capacity(b * n);
    for row in 0..b {
        let len = layout.lengths[row];
        for j in 0..n {
            right_missing.push(j + 1 >= len);
            left_missing.push(j == 0 || j >= len);
        }
    }
    let missing = T::from_f64(MISSING_SCORE);
    let right = g.masked_fill(right, &right_missing, missing)?;
    let left = g.masked_fill(left, &left_missing, missing)?;
    let right = g.reshape(right, &[b, n, 1])?;
    let left = g.reshape(left, &[b, n, 1])?;
    let both = g.concat(&[right, left], 2)?;
    let p = g.softmax(both, 2)?;
    let to_right = g.slice(p, 2, 0, 1)?;
    let to_left = g.slice(p, 2, 1, 2)?;
    Ok(LinkProbs {
        to_right: g.reshape(to_right, &[b, n])?,
        to_left: g.reshape(to_left, &[b, n])?,
    })
}

/// `â_i = sqrt(p[i→i+1] · p[i+1→i])`, shape `[B, N-1]`.
pub fn average_links<T: Real>(g: &mut Graph<T>, p: LinkProbs) -> Result<Var> {
    let n = g.shape(p.to_right)[1];
    let m = n.saturating_sub(1);
    let fwd = g.slice(p.to_right, 1, 0, m)?;
    let back = g.slice(p.to_left, 1, n - m, n)?;
    let prod = g.mul(fwd, back)?;
    Ok(g.sqrt(prod))
}

/// `a^l = a^{l-1} + (1 - a^{l-1}) · â^l`, with `a^{-1} = 0` when `prev` is `None`.
/// Links into padding are forced to zero.
pub fn hierarchical_update<T: Real>(
    g: &mut Graph<T>,
    prev: Option<Var>,
    hat: Var,
    layout: &BatchLayout,
) -> Result<Var> {
    let a = match prev {
        None => hat,
        Some(prev) => {
            let room = g.one_minus(prev);
            let inc = g.mul(room, hat)?;
            g.add(prev, inc)?
        }
    };
    Ok(g.masked_fill(a, &layout.invalid_links(), T::zero())?)
}

/// `C[i][j] = exp(Σ_{k=i}^{j-1} log a_k)` for `i < j`, mirrored, unit diagonal.
/// Any span containing a link at or below [`LINK_FLOOR`] gets exactly 0.
/// Rows and columns of padded positions are zero, diagonal included.
pub fn build_prior<T: Real>(g: &mut Graph<T>, a: Var, layout: &BatchLayout) -> Result<Var> {
    let (b, n) = (layout.batch, layout.seq_len);
    let m = n.saturating_sub(1);
    let a_vals = g.value(a).to_f64_vec();

    // Spans [i, j] with i >= j, or hitting a dead link, are masked.
    let mut masked = vec![false; b * n * n];
    for row in 0..b {
        let links = &a_vals[row * m..(row + 1) * m];
        for i in 0..n {
            let mut dead = false;
            for j in 0..n {
                if j > i && links[j - 1] <= LINK_FLOOR {
                    dead = true;
                }
                masked[(row * n + i) * n + j] = j <= i || dead;
            }
        }
    }

    let floored = g.clamp_min(a, T::from_f64(LINK_FLOOR));
    let logs = g.log(floored);
    // Exclusive prefix sums: cs[j] = Σ_{k<j} log a_k, via a strictly upper-triangular matrix.
    let mut tri = Array::zeros([m, n]);
    for k in 0..m {
        for j in k + 1..n {
            tri.set(&[k, j], T::one());
        }
    }
    let tri = g.constant(tri);
    let cs = if m == 0 {
        g.constant(Array::zeros([b, n]))
    } else {
        g.matmul(logs, tri)?
    };
    let cs_col = g.reshape(cs, &[b, 1, n])?;
    let cs_row = g.reshape(cs, &[b, n, 1])?;
    let span = g.sub(cs_col, cs_row)?;
    let span = g.masked_fill(span, &masked, T::from_f64(LOG_ZERO))?;
    let upper = g.exp(span);
    let lower = g.transpose(upper, 1, 2)?;
    let sym = g.add(upper, lower)?;
    let mut diag = Array::zeros([b, n, n]);
    for row in 0..b {
        for i in 0..layout.lengths[row] {
            diag.set(&[row, i, i], T::one());
        }
    }
    let diag = g.constant(diag);
    Ok(g.add(sym, diag)?)
}

/// Paired softmax on one sentence's raw scores (`right`/`left` as in [`LinkScores`]).
/// Returns `(p[i→i+1], p[i→i-1])` for every word.
pub fn paired_softmax(right: &[f64], left: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let layout = BatchLayout::new(vec![right.len() + 1]);
    let mut g = Graph::<f64>::new();
    let right = g.constant(Array::from_f64([1, right.len()], right)?);
    let left = g.constant(Array::from_f64([1, left.len()], left)?);
    let p = neighbor_softmax(&mut g, LinkScores { right, left }, &layout)?;
    Ok((g.value(p.to_right).to_f64_vec(), g.value(p.to_left).to_f64_vec()))
}

/// `â` from one sentence's directed probabilities.
pub fn average_pair(to_right: &[f64], to_left: &[f64]) -> Result<Vec<f64>> {
    let n = to_right.len();
    let mut g = Graph::<f64>::new();
    let to_right = g.constant(Array::from_f64([1, n], to_right)?);
    let to_left = g.constant(Array::from_f64([1, n], to_left)?);
    let hat = average_links(&mut g, LinkProbs { to_right, to_left })?;
    Ok(g.value(hat).to_f64_vec())
}

impl NeighborLinks {
    /// Layer-0 links from `â` (previous layer all zero).
    pub fn first(hat: &[f64]) -> Result<Self> {
        Self::apply(None, hat, 0)
    }

    /// The next layer's links given its `â`.
    pub fn update(&self, hat: &[f64]) -> Result<Self> {
        Self::apply(Some(&self.probs), hat, self.layer + 1)
    }

    fn apply(prev: Option<&[f64]>, hat: &[f64], layer: usize) -> Result<Self> {
        let m = hat.len();
        let layout = BatchLayout::new(vec![m + 1]);
        let mut g = Graph::<f64>::new();
        let h = g.constant(Array::from_f64([1, m], hat)?);
        let p = match prev {
            Some(p) => Some(g.constant(Array::from_f64([1, m], p)?)),
            None => None,
        };
        let a = hierarchical_update(&mut g, p, h, &layout)?;
        Ok(NeighborLinks {
            layer,
            probs: g.value(a).to_f64_vec(),
        })
    }
}

impl ConstituentPrior {
    pub fn from_links(links: &NeighborLinks) -> Result<Self> {
        let n = links.probs.len() + 1;
        let layout = BatchLayout::new(vec![n]);
        let mut g = Graph::<f64>::new();
        let a = g.constant(Array::from_f64([1, n - 1], &links.probs)?);
        let c = build_prior(&mut g, a, &layout)?;
        Ok(ConstituentPrior {
            layer: links.layer,
            n,
            matrix: g.value(c).to_f64_vec(),
        })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.n + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.matrix.chunks(self.n.max(1))
    }
}

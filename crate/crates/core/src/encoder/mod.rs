//! Transformer encoder whose attention is gated by the constituent prior.

pub mod checkpoint;
pub mod config;

use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use treeformer_autograd::{Array, Bound, Graph, ParamId, ParamStore, Real, Var};

pub use config::{ModelConfig, Variant};

use crate::constituent::{self, ConstituentPrior, LinkProjection, NeighborLinks};
use crate::error::{Error, Result};
use crate::layout::BatchLayout;

const LN_EPS: f64 = 1e-6;
const MASKED_LOGIT: f64 = -1e9;

/// Parameter handles of one encoder block.
#[derive(Clone, Debug)]
pub struct LayerParams {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub ln1_g: ParamId,
    pub ln1_b: ParamId,
    pub ff1_w: ParamId,
    pub ff1_b: ParamId,
    pub ff2_w: ParamId,
    pub ff2_b: ParamId,
    pub ln2_g: ParamId,
    pub ln2_b: ParamId,
    pub link: Option<LinkProjection>,
}

/// How the prior enters attention.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PriorMode {
    /// Use the learned prior (tree variant) or none (plain variant).
    Learned,
    /// Gate with an all-ones matrix regardless of the learned links.
    AllOnes,
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardOptions {
    pub train: bool,
    pub prior: PriorMode,
}

impl ForwardOptions {
    pub fn eval() -> Self {
        ForwardOptions {
            train: false,
            prior: PriorMode::Learned,
        }
    }

    pub fn train() -> Self {
        ForwardOptions {
            train: true,
            prior: PriorMode::Learned,
        }
    }
}

/// Graph handles produced by one batched forward pass.
#[derive(Clone, Debug)]
pub struct GraphOutput {
    /// `[B, N, D]`
    pub hidden: Var,
    /// `[B, N, V]`
    pub logits: Var,
    /// Per layer `[B, N-1]`; empty for the plain variant.
    pub links: Vec<Var>,
    /// Per layer `[B, N, N]`; empty for the plain variant.
    pub priors: Vec<Var>,
    /// Per layer gated attention `[B, H, N, N]`.
    pub attention: Vec<Var>,
}

/// Values from a forward pass over one sentence.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    /// `[N, D]`
    pub hidden: Array<f64>,
    pub links: Vec<NeighborLinks>,
    pub priors: Vec<ConstituentPrior>,
    /// `attention[layer][head]` is `[N, N]`.
    pub attention: Vec<Vec<Array<f64>>>,
}

impl EncoderOutput {
    /// Row sums of each head's gated attention in `layer`. Gating leaves rows summing to at most 1.
    pub fn attention_row_mass(&self, layer: usize) -> Vec<Vec<f64>> {
        self.attention[layer]
            .iter()
            .map(|e| {
                let n = e.shape()[1];
                e.data().chunks(n.max(1)).map(|r| r.iter().sum()).collect()
            })
            .collect()
    }

    /// Head-averaged attention of `layer`, row-major `[N, N]`.
    pub fn mean_attention(&self, layer: usize) -> Array<f64> {
        let heads = &self.attention[layer];
        let mut out = Array::zeros(heads[0].shape().to_vec());
        for h in heads {
            for (o, &v) in out.data_mut().iter_mut().zip(h.data()) {
                *o += v;
            }
        }
        let k = heads.len() as f64;
        out.map(|v| v / k)
    }
}

/// `E = C ⊙ softmax(QKᵀ/√d_k)` and `E·V` for `[B, H, N, d_k]` queries, keys
/// and values. `gate` broadcasts against `[B, H, N, N]`; `None` means no gating.
/// Keys flagged in `key_pad` (`[B, H, N, N]` layout) get zero weight. Rows are
/// not renormalized after gating.
pub fn constrained_attention<T: Real>(
    g: &mut Graph<T>,
    q: Var,
    k: Var,
    v: Var,
    gate: Option<Var>,
    key_pad: Option<&[bool]>,
) -> Result<(Var, Var)> {
    let d_k = g.shape(q)[3];
    let kt = g.transpose(k, 2, 3)?;
    let scores = g.matmul(q, kt)?;
    let mut scores = g.scale(scores, T::from_f64(1.0 / (d_k as f64).sqrt()));
    if let Some(mask) = key_pad {
        scores = g.masked_fill(scores, mask, T::from_f64(MASKED_LOGIT))?;
    }
    let weights = g.softmax(scores, 3)?;
    let e = match gate {
        Some(gate) => g.mul(weights, gate)?,
        None => weights,
    };
    let out = g.matmul(e, v)?;
    Ok((out, e))
}

/// Tree Transformer (or plain Transformer) parameters and configuration.
#[derive(Clone, Debug)]
pub struct Model<T: Real> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub embedding: ParamId,
    pub layers: Vec<LayerParams>,
    pub cls_w: ParamId,
    pub cls_b: ParamId,
    position: Array<T>,
}

/// Sinusoidal position table `[max_len, d_model]`.
pub fn position_encoding<T: Real>(max_len: usize, d_model: usize) -> Array<T> {
    let mut pe = Array::zeros([max_len, d_model]);
    for pos in 0..max_len {
        for i in 0..d_model / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            pe.set(&[pos, 2 * i], T::from_f64(angle.sin()));
            pe.set(&[pos, 2 * i + 1], T::from_f64(angle.cos()));
        }
    }
    pe
}

impl<T: Real> Model<T> {
    /// Xavier-uniform weights, zero biases, unit layer-norm gains, all drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = |shape: &[usize]| -> Array<T> {
            let bound = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            let data: Vec<f64> = (0..shape[0] * shape[1]).map(|_| dist.sample(&mut rng)).collect();
            Array::from_f64(shape.to_vec(), &data).expect("shape matches data")
        };
        let (d, ff, v) = (config.d_model, config.d_ff, config.vocab_size);
        let mut p = ParamStore::new();
        let embedding = p.insert("embedding", init(&[v, d]))?;
        let mut layers = Vec::with_capacity(config.num_layers);
        for l in 0..config.num_layers {
            let pre = format!("layer{l}");
            let mut lin = |p: &mut ParamStore<T>, name: &str, i: usize, o: usize| -> Result<(ParamId, ParamId)> {
                Ok((
                    p.insert(format!("{pre}.{name}.weight"), init(&[i, o]))?,
                    p.insert(format!("{pre}.{name}.bias"), Array::zeros([o]))?,
                ))
            };
            let (wq, bq) = lin(&mut p, "query", d, d)?;
            let (wk, bk) = lin(&mut p, "key", d, d)?;
            let (wv, bv) = lin(&mut p, "value", d, d)?;
            let (wo, bo) = lin(&mut p, "output", d, d)?;
            let (ff1_w, ff1_b) = lin(&mut p, "ff1", d, ff)?;
            let (ff2_w, ff2_b) = lin(&mut p, "ff2", ff, d)?;
            let ln1_g = p.insert(format!("{pre}.norm1.gain"), Array::ones([d]))?;
            let ln1_b = p.insert(format!("{pre}.norm1.bias"), Array::zeros([d]))?;
            let ln2_g = p.insert(format!("{pre}.norm2.gain"), Array::ones([d]))?;
            let ln2_b = p.insert(format!("{pre}.norm2.bias"), Array::zeros([d]))?;
            let link = match config.variant {
                Variant::Tree => Some(LinkProjection::register(&mut p, &pre, &mut init, d)?),
                Variant::Plain => None,
            };
            layers.push(LayerParams {
                wq,
                bq,
                wk,
                bk,
                wv,
                bv,
                wo,
                bo,
                ln1_g,
                ln1_b,
                ff1_w,
                ff1_b,
                ff2_w,
                ff2_b,
                ln2_g,
                ln2_b,
                link,
            });
        }
        let cls_w = p.insert("classifier.weight", init(&[d, v]))?;
        let cls_b = p.insert("classifier.bias", Array::zeros([v]))?;
        Ok(Model {
            position: position_encoding(config.max_len, d),
            config,
            params: p,
            embedding,
            layers,
            cls_w,
            cls_b,
        })
    }

    /// Rebuild a model around stored parameter values, matched by name.
    pub fn from_params(config: ModelConfig, values: ParamStore<T>) -> Result<Self> {
        let mut m = Self::new(config, 0)?;
        if values.len() != m.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                m.params.len(),
                values.len()
            )));
        }
        let ids: Vec<ParamId> = m.params.iter().map(|(id, _, _)| id).collect();
        for id in ids {
            let name = m.params.name(id);
            let src = values
                .by_name(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            let want = m.params.get(id).shape();
            if src.shape() != want {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, expected {want:?}",
                    src.shape()
                )));
            }
            let src = src.clone();
            *m.params.get_mut(id) = src;
        }
        Ok(m)
    }

    /// Plain Transformer sharing every non-link weight with `self`.
    pub fn without_links(&self) -> Result<Model<T>> {
        let mut cfg = self.config.clone();
        cfg.variant = Variant::Plain;
        let mut plain = Model::new(cfg, 0)?;
        let ids: Vec<ParamId> = plain.params.iter().map(|(id, _, _)| id).collect();
        for id in ids {
            let src = self.params.by_name(plain.params.name(id)).expect("shared tensor").clone();
            *plain.params.get_mut(id) = src;
        }
        Ok(plain)
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            embedding: self.embedding,
            layers: self.layers.clone(),
            cls_w: self.cls_w,
            cls_b: self.cls_b,
            position: self.position.cast(),
        }
    }

    pub fn count_params(&self) -> usize {
        self.params.num_scalars()
    }

    fn check_input(&self, sentences: &[Vec<usize>]) -> Result<()> {
        for s in sentences {
            if s.is_empty() {
                return Err(Error::Invalid("empty sentence".into()));
            }
            if s.len() > self.config.max_len {
                return Err(Error::TooLong {
                    len: s.len(),
                    max: self.config.max_len,
                });
            }
            if let Some(&bad) = s.iter().find(|&&t| t >= self.config.vocab_size) {
                return Err(Error::Invalid(format!(
                    "token id {bad} outside vocabulary of {}",
                    self.config.vocab_size
                )));
            }
        }
        Ok(())
    }

    fn linear(&self, g: &mut Graph<T>, p: &Bound, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
        let y = g.matmul(x, p.var(w))?;
        Ok(g.add(y, p.var(b))?)
    }

    fn norm(&self, g: &mut Graph<T>, p: &Bound, x: Var, gain: ParamId, bias: ParamId) -> Result<Var> {
        let y = g.layer_norm(x, T::from_f64(LN_EPS))?;
        let y = g.mul(y, p.var(gain))?;
        Ok(g.add(y, p.var(bias))?)
    }

    /// `[B, N, D] → [B, H, N, d_k]`
    fn split_heads(&self, g: &mut Graph<T>, x: Var, layout: &BatchLayout) -> Result<Var> {
        let c = &self.config;
        let x = g.reshape(x, &[layout.batch, layout.seq_len, c.num_heads, c.d_k()])?;
        Ok(g.permute(x, &[0, 2, 1, 3])?)
    }

    /// Batched forward pass. `ids` is the row-major `[B, N]` padded id matrix.
    pub fn forward_graph<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        ids: &[usize],
        layout: &BatchLayout,
        opts: ForwardOptions,
        rng: &mut R,
    ) -> Result<GraphOutput> {
        let c = &self.config;
        let (b, n, d, h) = (layout.batch, layout.seq_len, c.d_model, c.num_heads);
        if n > c.max_len {
            return Err(Error::TooLong { len: n, max: c.max_len });
        }
        let emb = g.embedding(p.var(self.embedding), ids)?;
        let emb = g.reshape(emb, &[b, n, d])?;
        let emb = g.scale(emb, T::from_f64((d as f64).sqrt()));
        let pos = g.constant(Array::new([n, d], self.position.data()[..n * d].to_vec())?);
        let x0 = g.add(emb, pos)?;
        let mut x = g.dropout(x0, c.dropout, opts.train, rng)?;

        let key_pad = layout.padded_keys(h);
        let mut out = GraphOutput {
            hidden: x,
            logits: x,
            links: Vec::new(),
            priors: Vec::new(),
            attention: Vec::new(),
        };
        let mut prev_links = None;
        for lp in &self.layers {
            let prior = match lp.link {
                Some(link) => {
                    let (lq, lk) = link.project(g, p, x)?;
                    let scores = constituent::neighbor_scores(g, lq, lk)?;
                    let probs = constituent::neighbor_softmax(g, scores, layout)?;
                    let hat = constituent::average_links(g, probs)?;
                    let a = constituent::hierarchical_update(g, prev_links, hat, layout)?;
                    prev_links = Some(a);
                    let prior = constituent::build_prior(g, a, layout)?;
                    out.links.push(a);
                    out.priors.push(prior);
                    Some(prior)
                }
                None => None,
            };
            let gate = match (opts.prior, prior) {
                (PriorMode::AllOnes, _) => Some(g.constant(Array::ones([b, 1, n, n]))),
                (PriorMode::Learned, Some(prior)) => Some(g.reshape(prior, &[b, 1, n, n])?),
                (PriorMode::Learned, None) => None,
            };

            let q = self.linear(g, p, x, lp.wq, lp.bq)?;
            let k = self.linear(g, p, x, lp.wk, lp.bk)?;
            let v = self.linear(g, p, x, lp.wv, lp.bv)?;
            let q = self.split_heads(g, q, layout)?;
            let k = self.split_heads(g, k, layout)?;
            let v = self.split_heads(g, v, layout)?;
            let (ctx, e) = constrained_attention(g, q, k, v, gate, Some(&key_pad))?;
            out.attention.push(e);
            let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
            let ctx = g.reshape(ctx, &[b, n, d])?;
            let attn = self.linear(g, p, ctx, lp.wo, lp.bo)?;
            let attn = g.dropout(attn, c.dropout, opts.train, rng)?;
            let res = g.add(x, attn)?;
            let x1 = self.norm(g, p, res, lp.ln1_g, lp.ln1_b)?;

            let f = self.linear(g, p, x1, lp.ff1_w, lp.ff1_b)?;
            let f = g.relu(f);
            let f = self.linear(g, p, f, lp.ff2_w, lp.ff2_b)?;
            let f = g.dropout(f, c.dropout, opts.train, rng)?;
            let res = g.add(x1, f)?;
            x = self.norm(g, p, res, lp.ln2_g, lp.ln2_b)?;
        }
        out.hidden = x;
        out.logits = self.linear(g, p, x, self.cls_w, self.cls_b)?;
        Ok(out)
    }

    /// Eval-mode forward over a batch of sentences, returning per-sentence values.
    pub fn encode_batch(&self, sentences: &[Vec<usize>], prior: PriorMode) -> Result<Vec<EncoderOutput>> {
        self.check_input(sentences)?;
        let (layout, ids) = BatchLayout::pad(sentences);
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let opts = ForwardOptions { train: false, prior };
        let out = self.forward_graph(&mut g, &p, &ids, &layout, opts, &mut rng)?;
        let (n, d, h) = (layout.seq_len, self.config.d_model, self.config.num_heads);
        let hidden = g.value(out.hidden).to_f64_vec();
        let links: Vec<Vec<f64>> = out.links.iter().map(|&v| g.value(v).to_f64_vec()).collect();
        let priors: Vec<Vec<f64>> = out.priors.iter().map(|&v| g.value(v).to_f64_vec()).collect();
        let attn: Vec<Vec<f64>> = out.attention.iter().map(|&v| g.value(v).to_f64_vec()).collect();
        let mut results = Vec::with_capacity(layout.batch);
        for (bi, &len) in layout.lengths.iter().enumerate() {
            let mut hid = Vec::with_capacity(len * d);
            hid.extend_from_slice(&hidden[bi * n * d..bi * n * d + len * d]);
            let m = n - 1;
            let sent_links = links
                .iter()
                .enumerate()
                .map(|(l, a)| NeighborLinks {
                    layer: l,
                    probs: a[bi * m..bi * m + len - 1].to_vec(),
                })
                .collect();
            let crop = |full: &[f64], off: usize| -> Vec<f64> {
                let mut v = Vec::with_capacity(len * len);
                for i in 0..len {
                    v.extend_from_slice(&full[off + i * n..off + i * n + len]);
                }
                v
            };
            let sent_priors = priors
                .iter()
                .enumerate()
                .map(|(l, c)| ConstituentPrior {
                    layer: l,
                    n: len,
                    matrix: crop(c, bi * n * n),
                })
                .collect();
            let sent_attn = attn
                .iter()
                .map(|e| {
                    (0..h)
                        .map(|hi| {
                            Array::new([len, len], crop(e, (bi * h + hi) * n * n)).expect("square crop")
                        })
                        .collect()
                })
                .collect();
            results.push(EncoderOutput {
                hidden: Array::new([len, d], hid)?,
                links: sent_links,
                priors: sent_priors,
                attention: sent_attn,
            });
        }
        Ok(results)
    }

    pub fn encode(&self, sentence: &[usize]) -> Result<EncoderOutput> {
        Ok(self
            .encode_batch(&[sentence.to_vec()], PriorMode::Learned)?
            .pop()
            .expect("one output per sentence"))
    }

    /// Eval-mode log-probabilities `[B, N, V]` for a padded batch.
    pub fn log_probs(&self, sentences: &[Vec<usize>]) -> Result<(BatchLayout, Array<T>)> {
        self.check_input(sentences)?;
        let (layout, ids) = BatchLayout::pad(sentences);
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward_graph(&mut g, &p, &ids, &layout, ForwardOptions::eval(), &mut rng)?;
        let lp = g.log_softmax(out.logits, 2)?;
        Ok((layout, g.value(lp).clone()))
    }
}

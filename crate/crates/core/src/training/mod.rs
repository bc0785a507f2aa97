//! Masked-LM training and masked-word perplexity.

pub mod masking;
pub mod perplexity;

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use treeformer_autograd::{adam_step, AdamConfig, AdamState, Graph, Real};

pub use masking::{mask_batch, masked_lm_loss, MaskedBatch, Substitution};
pub use perplexity::{masked_perplexity, FnScorer, MaskedScorer, UniformScorer, UnigramScorer};

use crate::corpus::Vocabulary;
use crate::encoder::checkpoint::{Checkpoint, TrainingState};
use crate::encoder::{ForwardOptions, Model};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Padded tokens per batch (sentences × longest sentence).
    pub batch_tokens: usize,
    pub epochs: usize,
    pub seed: u64,
    pub mask_rate: f64,
    pub split: Substitution,
    /// Linear learning-rate warmup length in steps; 0 disables it.
    pub warmup_steps: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            batch_tokens: 1024,
            epochs: 10,
            seed: 1,
            mask_rate: 0.15,
            split: Substitution::default(),
            warmup_steps: 0,
        }
    }
}

impl TrainConfig {
    /// Optimizer settings used for language-model comparisons.
    pub fn language_model() -> Self {
        TrainConfig {
            beta2: 0.999,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::Config(format!("{field}: {msg}")));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", "must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1/beta2", "must be in [0, 1)");
        }
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return bad("mask_rate", "must be in (0, 1)");
        }
        if self.batch_tokens == 0 {
            return bad("batch_tokens", "must be positive");
        }
        self.split.validate()
    }

    pub fn to_kv(&self) -> Vec<(&'static str, String)> {
        vec![
            ("lr", self.lr.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("eps", self.eps.to_string()),
            ("batch_tokens", self.batch_tokens.to_string()),
            ("epochs", self.epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("mask_rate", self.mask_rate.to_string()),
            ("split_mask", self.split.mask.to_string()),
            ("split_random", self.split.random.to_string()),
            ("split_keep", self.split.keep.to_string()),
            ("warmup_steps", self.warmup_steps.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse `{value}`")))
        }
        match key {
            "lr" => self.lr = num(key, value)?,
            "beta1" => self.beta1 = num(key, value)?,
            "beta2" => self.beta2 = num(key, value)?,
            "eps" => self.eps = num(key, value)?,
            "batch_tokens" => self.batch_tokens = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "mask_rate" => self.mask_rate = num(key, value)?,
            "split_mask" => self.split.mask = num(key, value)?,
            "split_random" => self.split.random = num(key, value)?,
            "split_keep" => self.split.keep = num(key, value)?,
            "warmup_steps" => self.warmup_steps = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown training setting `{key}`"))),
        }
        Ok(())
    }

    fn adam(&self, step: u64) -> AdamConfig {
        let scale = if self.warmup_steps == 0 {
            1.0
        } else {
            ((step + 1) as f64 / self.warmup_steps as f64).min(1.0)
        };
        AdamConfig {
            lr: self.lr * scale,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    /// Generator for `epoch`; stream 0 is left for weight initialization.
    pub fn epoch_rng(&self, epoch: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch as u64 + 1);
        rng
    }
}

/// Group sentence indices into batches whose padded size stays within `budget`
/// tokens. A single sentence longer than the budget forms its own batch.
pub fn token_batches(lengths: &[usize], order: &[usize], budget: usize) -> Vec<Vec<usize>> {
    let mut batches = Vec::new();
    let mut cur: Vec<usize> = Vec::new();
    let mut longest = 0;
    for &i in order {
        let l = lengths[i];
        if l == 0 {
            continue;
        }
        let widened = longest.max(l);
        if !cur.is_empty() && widened * (cur.len() + 1) > budget {
            batches.push(std::mem::take(&mut cur));
            longest = 0;
        }
        longest = longest.max(l);
        cur.push(i);
    }
    if !cur.is_empty() {
        batches.push(cur);
    }
    batches
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub epoch: usize,
    pub loss: f64,
}

/// Where checkpoints go during training.
pub trait CheckpointSink<T: Real> {
    /// Called with the initial state (epoch 0) and after every completed epoch.
    fn epoch(&mut self, epoch: usize, ck: &Checkpoint<T>) -> Result<()>;
    /// Called whenever validation improves.
    fn best(&mut self, epoch: usize, ck: &Checkpoint<T>) -> Result<()>;
}

/// Keeps checkpoints in memory as bytes.
#[derive(Default)]
pub struct MemorySink {
    pub epochs: Vec<(usize, Vec<u8>)>,
    pub best: Option<(usize, Vec<u8>)>,
}

impl<T: Real> CheckpointSink<T> for MemorySink {
    fn epoch(&mut self, epoch: usize, ck: &Checkpoint<T>) -> Result<()> {
        self.epochs.push((epoch, ck.to_bytes()));
        Ok(())
    }

    fn best(&mut self, epoch: usize, ck: &Checkpoint<T>) -> Result<()> {
        self.best = Some((epoch, ck.to_bytes()));
        Ok(())
    }
}

/// Writes `epoch_<k>.ckpt` per epoch, plus `best.ckpt` and `last.ckpt`.
pub struct DirSink {
    pub dir: PathBuf,
    pub written: Vec<PathBuf>,
}

impl DirSink {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(DirSink {
            dir,
            written: Vec::new(),
        })
    }

    fn write<T: Real>(&mut self, name: &str, ck: &Checkpoint<T>) -> Result<()> {
        let path = self.dir.join(name);
        ck.save(&path)?;
        if !self.written.contains(&path) {
            self.written.push(path);
        }
        Ok(())
    }
}

impl<T: Real> CheckpointSink<T> for DirSink {
    fn epoch(&mut self, epoch: usize, ck: &Checkpoint<T>) -> Result<()> {
        self.write(&format!("epoch_{epoch}.ckpt"), ck)?;
        self.write("last.ckpt", ck)
    }

    fn best(&mut self, _epoch: usize, ck: &Checkpoint<T>) -> Result<()> {
        self.write("best.ckpt", ck)
    }
}

/// Model and optimizer state across epochs.
pub struct Trainer<T: Real> {
    pub model: Model<T>,
    pub vocab: Vocabulary,
    pub config: TrainConfig,
    pub adam: AdamState<T>,
    /// Completed epochs.
    pub epoch: usize,
    /// Caller metadata copied into every checkpoint, such as corpus options.
    pub extra_meta: Vec<(String, String)>,
}

impl<T: Real> Trainer<T> {
    pub fn new(model: Model<T>, vocab: Vocabulary, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if vocab.len() != model.config.vocab_size {
            return Err(Error::Config(format!(
                "vocab_size: model expects {} tokens, vocabulary has {}",
                model.config.vocab_size,
                vocab.len()
            )));
        }
        let adam = AdamState::zeros_like(&model.params);
        Ok(Trainer {
            model,
            vocab,
            config,
            adam,
            epoch: 0,
            extra_meta: Vec::new(),
        })
    }

    /// Continue from a checkpoint that carries optimizer state.
    pub fn resume(ck: Checkpoint<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let state = ck
            .training
            .ok_or_else(|| Error::Checkpoint("checkpoint has no optimizer state to resume from".into()))?;
        let extra_meta = ck.meta.into_iter().filter(|(k, _)| !k.starts_with("train.")).collect();
        Ok(Trainer {
            model: ck.model,
            vocab: ck.vocab,
            config,
            adam: state.adam,
            epoch: state.epoch,
            extra_meta,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        let mut meta: Vec<(String, String)> = self
            .config
            .to_kv()
            .into_iter()
            .map(|(k, v)| (format!("train.{k}"), v))
            .chain(self.extra_meta.iter().cloned())
            .collect();
        meta.sort();
        Checkpoint {
            model: self.model.clone(),
            vocab: self.vocab.clone(),
            training: Some(TrainingState {
                adam: self.adam.clone(),
                epoch: self.epoch,
            }),
            meta,
        }
    }

    /// One gradient step on `sentences`. Returns the loss, or `None` when the
    /// draw masked nothing and no step was taken. The model is left untouched
    /// if the loss or any gradient is not finite.
    pub fn step(&mut self, sentences: &[Vec<usize>], rng: &mut ChaCha8Rng) -> Result<Option<f64>> {
        let batch = mask_batch(sentences, &self.vocab, self.config.mask_rate, self.config.split, rng);
        if batch.num_masked() == 0 {
            return Ok(None);
        }
        let mut g = Graph::new();
        let p = self.model.params.bind(&mut g);
        let out = self
            .model
            .forward_graph(&mut g, &p, &batch.input, &batch.layout, ForwardOptions::train(), rng)?;
        let loss = masked_lm_loss(&mut g, out.logits, &batch)?;
        let value = g.value(loss).item()?.as_f64();
        if !value.is_finite() {
            return Err(Error::Halted(format!("loss became {value} at step {}", self.adam.step + 1)));
        }
        g.backward(loss)?;
        let grads = self.model.params.collect_grads(&g, &p);
        let cfg = self.config.adam(self.adam.step);
        adam_step(&mut self.model.params, &grads, &mut self.adam, &cfg).map_err(|e| match e {
            treeformer_autograd::Error::NonFiniteGradient(name) => {
                Error::Halted(format!("non-finite gradient for `{name}` at step {}", self.adam.step + 1))
            }
            other => other.into(),
        })?;
        Ok(Some(value))
    }

    /// Run the next epoch over `data`, returning per-step losses.
    pub fn run_epoch(&mut self, data: &[Vec<usize>]) -> Result<Vec<LossRecord>> {
        let epoch = self.epoch;
        let mut rng = self.config.epoch_rng(epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let lengths: Vec<usize> = data.iter().map(Vec::len).collect();
        let mut records = Vec::new();
        for idx in token_batches(&lengths, &order, self.config.batch_tokens) {
            let sents: Vec<Vec<usize>> = idx.iter().map(|&i| data[i].clone()).collect();
            let Some(loss) = self.step(&sents, &mut rng)? else {
                continue;
            };
            records.push(LossRecord {
                step: self.adam.step,
                epoch: epoch + 1,
                loss,
            });
        }
        self.epoch += 1;
        Ok(records)
    }

    /// Masked-LM loss on `data` with a fixed masking draw, no dropout, no update.
    pub fn validation_loss(&self, data: &[Vec<usize>]) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(u64::MAX);
        let lengths: Vec<usize> = data.iter().map(Vec::len).collect();
        let order: Vec<usize> = (0..data.len()).collect();
        let (mut total, mut count) = (0.0, 0usize);
        for idx in token_batches(&lengths, &order, self.config.batch_tokens) {
            let sents: Vec<Vec<usize>> = idx.iter().map(|&i| data[i].clone()).collect();
            let batch = mask_batch(&sents, &self.vocab, self.config.mask_rate, self.config.split, &mut rng);
            let n = batch.num_masked();
            if n == 0 {
                continue;
            }
            let mut g = Graph::new();
            let p = self.model.params.bind_frozen(&mut g);
            let out = self
                .model
                .forward_graph(&mut g, &p, &batch.input, &batch.layout, ForwardOptions::eval(), &mut rng)?;
            let loss = masked_lm_loss(&mut g, out.logits, &batch)?;
            total += g.value(loss).item()?.as_f64() * n as f64;
            count += n;
        }
        Ok(if count == 0 { 0.0 } else { total / count as f64 })
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainOutcome {
    pub losses: Vec<LossRecord>,
    /// Mean training loss of each completed epoch.
    pub epoch_losses: Vec<f64>,
    pub valid_losses: Vec<f64>,
    pub best_epoch: Option<usize>,
    /// Set when training stopped on a non-finite loss; the last good epoch checkpoint stands.
    pub halted: Option<String>,
}

/// Train until `trainer.config.epochs` epochs are complete, checkpointing each
/// epoch and keeping the best one on `valid` when given.
pub fn train<T: Real>(
    trainer: &mut Trainer<T>,
    data: &[Vec<usize>],
    valid: Option<&[Vec<usize>]>,
    sink: &mut dyn CheckpointSink<T>,
) -> Result<TrainOutcome> {
    let mut outcome = TrainOutcome::default();
    if trainer.epoch == 0 {
        sink.epoch(0, &trainer.checkpoint())?;
    }
    let mut best = f64::INFINITY;
    while trainer.epoch < trainer.config.epochs {
        let good = (trainer.model.params.clone(), trainer.adam.clone());
        match trainer.run_epoch(data) {
            Ok(records) => {
                let mean = records.iter().map(|r| r.loss).sum::<f64>() / records.len().max(1) as f64;
                log::info!("epoch {} mean loss {mean:.4}", trainer.epoch);
                outcome.epoch_losses.push(mean);
                outcome.losses.extend(records);
            }
            Err(Error::Halted(msg)) => {
                log::error!("training halted: {msg}");
                trainer.model.params = good.0;
                trainer.adam = good.1;
                outcome.halted = Some(msg);
                break;
            }
            Err(e) => return Err(e),
        }
        let ck = trainer.checkpoint();
        sink.epoch(trainer.epoch, &ck)?;
        if let Some(v) = valid {
            let loss = trainer.validation_loss(v)?;
            outcome.valid_losses.push(loss);
            if loss < best {
                best = loss;
                outcome.best_epoch = Some(trainer.epoch);
                sink.best(trainer.epoch, &ck)?;
            }
        }
    }
    Ok(outcome)
}

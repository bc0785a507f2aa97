use treeformer_autograd::Real;

use crate::corpus::vocab::MASK_ID;
use crate::encoder::Model;
use crate::error::{Error, Result};

/// Something that predicts a masked word from its context.
pub trait MaskedScorer {
    /// For each position `i` of `sentence`: `log p(sentence[i])` when only position `i` is masked.
    fn score(&self, sentence: &[usize]) -> Result<Vec<f64>>;
}

/// `exp(-Σ log p / n_mask)` where every sentence of length `n` contributes `n`
/// single-mask variants.
pub fn masked_perplexity<S: MaskedScorer + ?Sized>(scorer: &S, sentences: &[Vec<usize>]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for s in sentences {
        let lp = scorer.score(s)?;
        total += lp.iter().sum::<f64>();
        count += lp.len();
    }
    if count == 0 {
        return Err(Error::Invalid("masked perplexity needs at least one word".into()));
    }
    Ok((-total / count as f64).exp())
}

impl<T: Real> MaskedScorer for Model<T> {
    fn score(&self, sentence: &[usize]) -> Result<Vec<f64>> {
        let n = sentence.len();
        let variants: Vec<Vec<usize>> = (0..n)
            .map(|i| {
                let mut v = sentence.to_vec();
                v[i] = MASK_ID;
                v
            })
            .collect();
        if variants.is_empty() {
            return Ok(Vec::new());
        }
        let (_, lp) = self.log_probs(&variants)?;
        let v = self.config.vocab_size;
        Ok((0..n)
            .map(|i| lp.data()[(i * n + i) * v + sentence[i]].as_f64())
            .collect())
    }
}

/// Every word gets probability `1/V`.
pub struct UniformScorer {
    pub vocab_size: usize,
}

impl MaskedScorer for UniformScorer {
    fn score(&self, sentence: &[usize]) -> Result<Vec<f64>> {
        Ok(vec![-(self.vocab_size as f64).ln(); sentence.len()])
    }
}

/// Context-free word frequencies with add-one smoothing over the ordinary vocabulary.
pub struct UnigramScorer {
    log_p: Vec<f64>,
}

impl UnigramScorer {
    pub fn fit(train: &[Vec<usize>], vocab_size: usize, first_ordinary: usize) -> Self {
        let mut counts = vec![0usize; vocab_size];
        for s in train {
            for &t in s {
                counts[t] += 1;
            }
        }
        let total: usize = counts[first_ordinary..].iter().sum::<usize>() + (vocab_size - first_ordinary);
        let log_p = (0..vocab_size)
            .map(|t| {
                if t < first_ordinary {
                    f64::NEG_INFINITY
                } else {
                    ((counts[t] + 1) as f64 / total as f64).ln()
                }
            })
            .collect();
        UnigramScorer { log_p }
    }
}

impl MaskedScorer for UnigramScorer {
    fn score(&self, sentence: &[usize]) -> Result<Vec<f64>> {
        Ok(sentence.iter().map(|&t| self.log_p[t]).collect())
    }
}

/// Scorer backed by a closure over `(sentence, masked position)`; handy for fixtures.
pub struct FnScorer<F>(pub F);

impl<F: Fn(&[usize], usize) -> f64> MaskedScorer for FnScorer<F> {
    fn score(&self, sentence: &[usize]) -> Result<Vec<f64>> {
        Ok((0..sentence.len()).map(|i| (self.0)(sentence, i)).collect())
    }
}

use rand::Rng;
use treeformer_autograd::{Graph, Real, Var};

use crate::corpus::vocab::{MASK_ID, PAD_ID};
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::layout::BatchLayout;

/// Fractions of selected tokens replaced by `[MASK]`, by a random token, or kept.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Substitution {
    pub mask: f64,
    pub random: f64,
    pub keep: f64,
}

impl Default for Substitution {
    fn default() -> Self {
        Substitution {
            mask: 0.8,
            random: 0.1,
            keep: 0.1,
        }
    }
}

impl Substitution {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.mask, self.random, self.keep];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "substitution split {}/{}/{} must be non-negative and sum to 1",
                self.mask, self.random, self.keep
            )));
        }
        Ok(())
    }
}

/// A padded batch prepared for the masked-LM objective, all vectors row-major `[B, N]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedBatch {
    pub layout: BatchLayout,
    /// Ids after substitution, `[PAD]` in padding.
    pub input: Vec<usize>,
    /// Original ids; only meaningful where `masked` is set.
    pub targets: Vec<usize>,
    pub masked: Vec<bool>,
    pub padding: Vec<bool>,
}

impl MaskedBatch {
    pub fn num_masked(&self) -> usize {
        self.masked.iter().filter(|&&m| m).count()
    }

    /// `(flat position, target id)` of every masked token.
    pub fn mask_targets(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.masked
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| (i, self.targets[i]))
    }
}

/// Select each real token with probability `rate`; substitute selected tokens
/// per `split`. Random replacements are drawn uniformly from ordinary tokens.
/// Empty sentences are skipped with a warning.
pub fn mask_batch<R: Rng + ?Sized>(
    sentences: &[Vec<usize>],
    vocab: &Vocabulary,
    rate: f64,
    split: Substitution,
    rng: &mut R,
) -> MaskedBatch {
    let kept: Vec<Vec<usize>> = sentences
        .iter()
        .filter(|s| {
            if s.is_empty() {
                log::warn!("skipping empty sentence during masking");
            }
            !s.is_empty()
        })
        .cloned()
        .collect();
    let (layout, ids) = BatchLayout::pad(&kept);
    let first = vocab.first_ordinary();
    let last = vocab.len();
    let mut input = ids.clone();
    let mut masked = vec![false; ids.len()];
    let mut padding = vec![false; ids.len()];
    for b in 0..layout.batch {
        for j in 0..layout.seq_len {
            let k = b * layout.seq_len + j;
            if layout.is_pad(b, j) {
                padding[k] = true;
                continue;
            }
            if rng.gen::<f64>() >= rate {
                continue;
            }
            masked[k] = true;
            let u = rng.gen::<f64>();
            if u < split.mask {
                input[k] = MASK_ID;
            } else if u < split.mask + split.random && last > first {
                input[k] = rng.gen_range(first..last);
            }
        }
    }
    let targets = ids
        .iter()
        .zip(&masked)
        .map(|(&t, &m)| if m { t } else { PAD_ID })
        .collect();
    MaskedBatch {
        layout,
        input,
        targets,
        masked,
        padding,
    }
}

/// Mean cross-entropy over masked positions of `[B, N, V]` logits.
/// A batch without masked positions has loss 0.
pub fn masked_lm_loss<T: Real>(g: &mut Graph<T>, logits: Var, batch: &MaskedBatch) -> Result<Var> {
    let v = *g.shape(logits).last().expect("logits have a vocabulary axis");
    let idx: Vec<usize> = batch.mask_targets().map(|(pos, t)| pos * v + t).collect();
    if idx.is_empty() {
        log::warn!("batch has no masked positions; loss is zero");
        return Ok(g.constant(treeformer_autograd::Array::scalar(T::zero())));
    }
    let lp = g.log_softmax(logits, 2)?;
    let picked = g.gather(lp, &idx)?;
    let mean = g.mean_all(picked);
    Ok(g.scale(mean, -T::one()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vocab() -> Vocabulary {
        Vocabulary::from_file_str("a\nb\nc\nd\n").unwrap()
    }

    #[test]
    fn rate_zero_is_identity() {
        let s = vec![vec![3, 4, 5], vec![6]];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = mask_batch(&s, &vocab(), 0.0, Substitution::default(), &mut rng);
        assert_eq!(b.input, vec![3, 4, 5, 6, 0, 0]);
        assert_eq!(b.num_masked(), 0);
        assert_eq!(b.padding, vec![false, false, false, false, true, true]);
    }

    #[test]
    fn padding_never_masked_and_empty_skipped() {
        let s = vec![vec![3, 4, 5, 6, 3, 4], vec![], vec![5]];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = mask_batch(&s, &vocab(), 0.99, Substitution::default(), &mut rng);
        assert_eq!(b.layout.batch, 2);
        assert!(b.masked.iter().zip(&b.padding).all(|(m, p)| !(m & p)));
        assert!(b.mask_targets().all(|(_, t)| t >= 3));
    }

    #[test]
    fn split_validation() {
        assert!(Substitution::default().validate().is_ok());
        let bad = Substitution {
            mask: 0.5,
            random: 0.1,
            keep: 0.1,
        };
        assert!(bad.validate().is_err());
    }
}

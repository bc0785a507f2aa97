use crate::corpus::vocab::PAD_ID;

/// A right-padded batch of token sequences: `batch × seq_len`, row `b` holding
/// `lengths[b]` real tokens followed by padding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchLayout {
    pub batch: usize,
    pub seq_len: usize,
    pub lengths: Vec<usize>,
}

impl BatchLayout {
    pub fn new(lengths: Vec<usize>) -> Self {
        BatchLayout {
            batch: lengths.len(),
            seq_len: lengths.iter().copied().max().unwrap_or(0),
            lengths,
        }
    }

    pub fn is_pad(&self, b: usize, pos: usize) -> bool {
        pos >= self.lengths[b]
    }

    /// Pad `sentences` to a rectangular id matrix (row-major) with `[PAD]`.
    pub fn pad(sentences: &[Vec<usize>]) -> (Self, Vec<usize>) {
        let layout = Self::new(sentences.iter().map(Vec::len).collect());
        let mut ids = Vec::with_capacity(layout.batch * layout.seq_len);
        for s in sentences {
            ids.extend_from_slice(s);
            ids.extend(std::iter::repeat_n(PAD_ID, layout.seq_len - s.len()));
        }
        (layout, ids)
    }

    /// `[batch, seq_len-1]` mask of links whose right word is padding.
    pub fn invalid_links(&self) -> Vec<bool> {
        let n = self.seq_len;
        let mut m = Vec::with_capacity(self.batch * n.saturating_sub(1));
        for b in 0..self.batch {
            for i in 0..n.saturating_sub(1) {
                m.push(i + 1 >= self.lengths[b]);
            }
        }
        m
    }

    /// `[batch, heads, seq_len, seq_len]` mask of attention to padded keys.
    pub fn padded_keys(&self, heads: usize) -> Vec<bool> {
        let n = self.seq_len;
        let mut m = Vec::with_capacity(self.batch * heads * n * n);
        for b in 0..self.batch {
            for _ in 0..heads * n {
                for j in 0..n {
                    m.push(j >= self.lengths[b]);
                }
            }
        }
        m
    }
}

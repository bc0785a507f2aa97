//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "TREEFMR\0"
//! version    u32      currently 1
//! dtype      u8       4 = f32, 8 = f64
//! meta       u64 length + UTF-8 `key=value` lines (model config, then training metadata)
//! vocab      u64 length + UTF-8, one ordinary token per line
//! tensors    u64 count, then per tensor:
//!              u32 name length, name bytes, u32 rank, u64 dims[rank], values
//! ```
//!
//! Model tensors come first in parameter order; optimizer moments, when
//! present, follow under the names `adam.m/<param>` and `adam.v/<param>`.
//! Nothing time-dependent is stored, so equal states give equal bytes.

use std::path::Path;

use treeformer_autograd::{AdamState, Array, ParamStore, Real};

use super::{Model, ModelConfig};
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"TREEFMR\0";
pub const VERSION: u32 = 1;

/// Optimizer state and loop counters needed to resume training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingState<T> {
    pub adam: AdamState<T>,
    /// Number of completed epochs.
    pub epoch: usize,
}

#[derive(Clone, Debug)]
pub struct Checkpoint<T: Real> {
    pub model: Model<T>,
    pub vocab: Vocabulary,
    pub training: Option<TrainingState<T>>,
    /// Extra `key=value` metadata (training config, losses).
    pub meta: Vec<(String, String)>,
}

/// Element width in bytes (4 or 8) recorded in a checkpoint's header.
pub fn peek_dtype(bytes: &[u8]) -> Result<u8> {
    if bytes.len() < 13 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    Ok(bytes[12])
}

const MODEL_PREFIX: &str = "model.";
const STATE_EPOCH: &str = "state.epoch";
const STATE_STEP: &str = "state.adam_step";

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_blob(out: &mut Vec<u8>, bytes: &[u8]) {
    put_u64(out, bytes.len() as u64);
    out.extend_from_slice(bytes);
}

fn put_tensor<T: Real>(out: &mut Vec<u8>, name: &str, a: &Array<T>) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    put_u32(out, a.ndim() as u32);
    for &d in a.shape() {
        put_u64(out, d as u64);
    }
    for &v in a.data() {
        v.write_le(out);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated file at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        usize::try_from(n)
            .ok()
            .filter(|&n| n <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("implausible length {n}")))
    }

    fn text(&mut self) -> Result<&'a str> {
        let n = self.len()?;
        std::str::from_utf8(self.take(n)?).map_err(|_| Error::Checkpoint("invalid UTF-8 text block".into()))
    }

    fn tensor<T: Real>(&mut self, dtype: u8) -> Result<(String, Array<T>)> {
        let nlen = self.u32()? as usize;
        let name = std::str::from_utf8(self.take(nlen)?)
            .map_err(|_| Error::Checkpoint("invalid tensor name".into()))?
            .to_string();
        let rank = self.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.len()?);
        }
        let count: usize = shape.iter().product();
        let width = dtype as usize;
        let raw = self.take(count * width)?;
        let data: Vec<T> = raw
            .chunks_exact(width)
            .map(|c| match dtype {
                4 => T::from_f64(f32::read_le(c) as f64),
                _ => T::from_f64(f64::read_le(c)),
            })
            .collect();
        Ok((name, Array::new(shape, data)?))
    }
}

impl<T: Real> Checkpoint<T> {
    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        out.push(T::BYTES as u8);
        let mut meta = String::new();
        for (k, v) in self.model.config.to_kv() {
            meta.push_str(&format!("{MODEL_PREFIX}{k}={v}\n"));
        }
        if let Some(t) = &self.training {
            meta.push_str(&format!("{STATE_EPOCH}={}\n{STATE_STEP}={}\n", t.epoch, t.adam.step));
        }
        for (k, v) in &self.meta {
            meta.push_str(&format!("{k}={v}\n"));
        }
        put_blob(&mut out, meta.as_bytes());
        put_blob(&mut out, self.vocab.to_file_string().as_bytes());
        let params = &self.model.params;
        let n_tensors = params.len() * if self.training.is_some() { 3 } else { 1 };
        put_u64(&mut out, n_tensors as u64);
        for (_, name, a) in params.iter() {
            put_tensor(&mut out, name, a);
        }
        if let Some(t) = &self.training {
            for ((_, name, _), m) in params.iter().zip(&t.adam.m) {
                put_tensor(&mut out, &format!("adam.m/{name}"), m);
            }
            for ((_, name, _), v) in params.iter().zip(&t.adam.v) {
                put_tensor(&mut out, &format!("adam.v/{name}"), v);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "checkpoint version {version} is not supported (expected {VERSION})"
            )));
        }
        let dtype = r.take(1)?[0];
        if dtype != 4 && dtype != 8 {
            return Err(Error::Checkpoint(format!("unknown dtype code {dtype}")));
        }
        let meta_text = r.text()?;
        let vocab = Vocabulary::from_file_str(r.text()?)?;
        let mut model_kv = Vec::new();
        let mut meta = Vec::new();
        let (mut epoch, mut step) = (None, None);
        for line in meta_text.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("bad metadata line `{line}`")))?;
            if let Some(key) = k.strip_prefix(MODEL_PREFIX) {
                model_kv.push((key, v));
            } else if k == STATE_EPOCH {
                epoch = Some(v.parse().map_err(|_| Error::Checkpoint("bad epoch".into()))?);
            } else if k == STATE_STEP {
                step = Some(v.parse().map_err(|_| Error::Checkpoint("bad step".into()))?);
            } else {
                meta.push((k.to_string(), v.to_string()));
            }
        }
        let config = ModelConfig::from_kv(model_kv)?;
        let count = r.len()?;
        let mut params = ParamStore::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for _ in 0..count {
            let (name, a) = r.tensor::<T>(dtype)?;
            if name.starts_with("adam.m/") {
                m.push(a);
            } else if name.starts_with("adam.v/") {
                v.push(a);
            } else {
                params.insert(name, a)?;
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after tensors".into()));
        }
        let model = Model::from_params(config, params)?;
        let training = match (epoch, step) {
            (Some(epoch), Some(step)) => {
                if m.len() != model.params.len() || v.len() != model.params.len() {
                    return Err(Error::Checkpoint("optimizer state does not match parameters".into()));
                }
                Some(TrainingState {
                    adam: AdamState { step, m, v },
                    epoch,
                })
            }
            _ => None,
        };
        Ok(Checkpoint {
            model,
            vocab,
            training,
            meta,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

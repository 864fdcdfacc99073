//! Checkpoint container.
//!
//! Little-endian layout: magic `R2NCKPT\0`, `u32` version, then the
//! length-prefixed UTF-8 strings `kind` and `config` (a JSON echo of the
//! producing configuration), `u32` tensor count and per tensor a
//! length-prefixed name, `u32` rows, `u32` cols and `rows*cols` `f32`
//! values. Optimizer state follows: `u8` presence flag, then `u64` step, the
//! Adam hyperparameters as a length-prefixed JSON string, and per tensor a
//! `u8` flag followed, when set, by first and second moments.

use std::path::Path;

use super::adam::{Adam, AdamConfig};
use super::params::ParamStore;
use super::{AutodiffError, Result, Tensor};
use crate::fsutil::write_atomic;

const MAGIC: &[u8; 8] = b"R2NCKPT\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
struct OptimizerState {
    step: u64,
    config: AdamConfig,
    moments: Vec<Option<(Vec<f32>, Vec<f32>)>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub config: String,
    pub tensors: Vec<NamedTensor>,
    optimizer: Option<OptimizerState>,
}

fn ck_err(msg: impl Into<String>) -> AutodiffError {
    AutodiffError::Checkpoint(msg.into())
}

impl Checkpoint {
    /// Snapshot of every parameter in `store`, plus optimizer state if given.
    pub fn capture(kind: &str, config: &str, store: &ParamStore<f32>, adam: Option<&Adam<f32>>) -> Self {
        let tensors = store
            .ids()
            .map(|id| {
                let t = store.get(id);
                NamedTensor { name: store.name(id).to_owned(), rows: t.rows(), cols: t.cols(), values: t.data().to_vec() }
            })
            .collect();
        let optimizer = adam.map(|a| OptimizerState {
            step: a.step,
            config: a.config,
            moments: store
                .ids()
                .map(|id| match (a.m.get(id.0).cloned().flatten(), a.v.get(id.0).cloned().flatten()) {
                    (Some(m), Some(v)) => Some((m, v)),
                    _ => None,
                })
                .collect(),
        });
        Checkpoint { kind: kind.to_owned(), config: config.to_owned(), tensors, optimizer }
    }

    pub fn has_optimizer(&self) -> bool {
        self.optimizer.is_some()
    }

    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Copy values into `store`. Every parameter of the store must be present
    /// with the same shape; extra tensors in the checkpoint are an error too.
    pub fn restore(&self, store: &mut ParamStore<f32>, adam: Option<&mut Adam<f32>>) -> Result<()> {
        if self.tensors.len() != store.len() {
            return Err(ck_err(format!("checkpoint holds {} tensors, model expects {}", self.tensors.len(), store.len())));
        }
        let mut order = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            let id = store.id(&t.name).map_err(|_| ck_err(format!("model has no parameter `{}`", t.name)))?;
            let shape = store.get(id).shape();
            if shape != (t.rows, t.cols) {
                return Err(ck_err(format!(
                    "shape mismatch for `{}`: checkpoint {}x{}, model {}x{}",
                    t.name, t.rows, t.cols, shape.0, shape.1
                )));
            }
            order.push(id);
        }
        for (t, &id) in self.tensors.iter().zip(&order) {
            *store.get_mut(id) = Tensor::from_vec(t.rows, t.cols, t.values.clone())?;
        }
        if let (Some(adam), Some(opt)) = (adam, &self.optimizer) {
            adam.step = opt.step;
            adam.config = opt.config;
            adam.m = vec![None; store.len()];
            adam.v = vec![None; store.len()];
            for (mom, &id) in opt.moments.iter().zip(&order) {
                if let Some((m, v)) = mom {
                    adam.m[id.0] = Some(m.clone());
                    adam.v[id.0] = Some(v.clone());
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut b, &self.kind);
        put_str(&mut b, &self.config);
        b.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            put_str(&mut b, &t.name);
            b.extend_from_slice(&(t.rows as u32).to_le_bytes());
            b.extend_from_slice(&(t.cols as u32).to_le_bytes());
            put_f32s(&mut b, &t.values);
        }
        match &self.optimizer {
            None => b.push(0),
            Some(o) => {
                b.push(1);
                b.extend_from_slice(&o.step.to_le_bytes());
                put_str(&mut b, &serde_json::to_string(&o.config).expect("config serializes"));
                for m in &o.moments {
                    match m {
                        None => b.push(0),
                        Some((m, v)) => {
                            b.push(1);
                            put_f32s(&mut b, m);
                            put_f32s(&mut b, v);
                        }
                    }
                }
            }
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { b: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(ck_err("bad magic; not a checkpoint"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(ck_err(format!("unsupported checkpoint version {version}")));
        }
        let kind = r.string()?;
        let config = r.string()?;
        let n = r.u32()? as usize;
        let mut tensors = Vec::new();
        for _ in 0..n {
            let name = r.string()?;
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let values = r.f32s(rows * cols)?;
            tensors.push(NamedTensor { name, rows, cols, values });
        }
        let optimizer = match r.take(1)?[0] {
            0 => None,
            1 => {
                let step = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
                let config: AdamConfig = serde_json::from_str(&r.string()?).map_err(|e| ck_err(format!("optimizer config: {e}")))?;
                let mut moments = Vec::new();
                for t in &tensors {
                    let len = t.rows * t.cols;
                    moments.push(match r.take(1)?[0] {
                        0 => None,
                        _ => Some((r.f32s(len)?, r.f32s(len)?)),
                    });
                }
                Some(OptimizerState { step, config, moments })
            }
            other => return Err(ck_err(format!("bad optimizer flag {other}"))),
        };
        if r.pos != bytes.len() {
            return Err(ck_err("trailing bytes"));
        }
        Ok(Checkpoint { kind, config, tensors, optimizer })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn put_str(b: &mut Vec<u8>, s: &str) {
    b.extend_from_slice(&(s.len() as u32).to_le_bytes());
    b.extend_from_slice(s.as_bytes());
}

fn put_f32s(b: &mut Vec<u8>, xs: &[f32]) {
    for x in xs {
        b.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.b.len()).ok_or_else(|| ck_err("truncated checkpoint"))?;
        let s = &self.b[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| ck_err("string is not UTF-8"))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| ck_err("tensor too large"))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

use serde::{Deserialize, Serialize};

use super::params::{Grads, ParamStore};
use super::{AutodiffError, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Update only rows that received a gradient (moments of other rows are
    /// left untouched). When false every row of a touched parameter decays.
    pub sparse: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-2, beta1: 0.9, beta2: 0.999, eps: 1e-8, sparse: true }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Self::default() }
    }
}

/// Adam with bias correction. Moments are allocated lazily per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub(crate) step: u64,
    pub(crate) m: Vec<Option<Vec<T>>>,
    pub(crate) v: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam { config, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Apply one update. Consuming `grads` is what zeroes them.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: Grads<T>) -> Result<()> {
        if grads.is_empty() {
            return Err(AutodiffError::MissingGradient);
        }
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bc1 = T::of(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = T::of(1.0 - c.beta2.powi(self.step as i32));
        let (lr, eps) = (T::of(c.lr), T::of(c.eps));
        if self.m.len() < store.len() {
            self.m.resize(store.len(), None);
            self.v.resize(store.len(), None);
        }
        for (pid, slot) in grads.slots.into_iter().enumerate() {
            let Some(g) = slot else { continue };
            let pid = super::ParamId(pid);
            let value = store.get_mut(pid);
            let cols = value.cols();
            let n = value.data().len();
            let m = self.m[pid.0].get_or_insert_with(|| vec![T::zero(); n]);
            let v = self.v[pid.0].get_or_insert_with(|| vec![T::zero(); n]);
            let data = value.data_mut();
            for (row, touched) in g.touched.iter().enumerate() {
                if self.config.sparse && !touched {
                    continue;
                }
                for k in row * cols..(row + 1) * cols {
                    let gk = g.data[k];
                    m[k] = b1 * m[k] + (T::one() - b1) * gk;
                    v[k] = b2 * v[k] + (T::one() - b2) * gk * gk;
                    let mh = m[k] / bc1;
                    let vh = v[k] / bc2;
                    data[k] = data[k] - lr * mh / (vh.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

//! A small reverse-mode differentiation engine over 2-D tensors, an Adam
//! optimizer with sparse row updates, and a checkpoint container.
//!
//! A [`Tape`] borrows a [`ParamStore`] and records every operation.
//! [`Tape::backward`] walks the records in reverse and returns [`Grads`],
//! which [`Adam::step`] consumes.

mod adam;
mod checkpoint;
mod params;
mod tape;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, NamedTensor};
pub use params::{Grads, ParamId, ParamStore};
pub use tape::{NodeId, Tape};

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use thiserror::Error;

/// Floating-point element type: `f32` for training, `f64` for checks.
pub trait Scalar: Float + FromPrimitive + ToPrimitive + Debug + Default + Sum + Send + Sync + 'static {
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 converts to every float type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {shapes}")]
    Shape { op: &'static str, shapes: String },
    #[error("index {index} out of range for {rows} rows in {op}")]
    Index { op: &'static str, index: usize, rows: usize },
    #[error("backward needs a scalar loss, got shape {0}x{1}")]
    NotScalar(usize, usize),
    #[error("backward was already run on this tape")]
    BackwardTwice,
    #[error("optimizer step without any gradient")]
    MissingGradient,
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("parameter `{0}` already exists")]
    DuplicateParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = AutodiffError> = std::result::Result<T, E>;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(AutodiffError::Shape { op: "tensor", shapes: format!("{rows}x{cols} from {} values", data.len()) });
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn scalar(x: T) -> Self {
        Tensor { rows: 1, cols: 1, data: vec![x] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// `out += a · b` for row-major `a [m,k]`, `b [k,n]`, `out [m,n]`.
pub(crate) fn matmul_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
}

//! Dense numerical core: tensors, a stacked LSTM with exact BPTT, dense
//! softmax heads, optimizers and a binary checkpoint format. All math is f64.

mod checkpoint;
mod dense;
pub mod gradcheck;
mod lstm;
mod optim;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use dense::{dense_softmax_xent, log_softmax, softmax, DenseParams, DenseXent};
pub use lstm::{lstm_backward, lstm_forward, LstmCache, LstmLayerParams, LstmStack};
pub use optim::{clip_global_norm, Adam, Optimizer, OptimizerKind, Sgd, DEFAULT_CLIP_NORM};

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {op}: expected {expected}, found {found}")]
    Shape { op: &'static str, expected: String, found: String },
    #[error("empty sequence")]
    EmptySequence,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub(crate) fn shape_err(op: &'static str, expected: impl ToString, found: impl ToString) -> NnError {
    NnError::Shape { op, expected: expected.to_string(), found: found.to_string() }
}

/// Row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor2 { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NnError> {
        if data.len() != rows * cols {
            return Err(shape_err("Tensor2::from_vec", rows * cols, data.len()));
        }
        Ok(Tensor2 { rows, cols, data })
    }

    /// Xavier-uniform initialization over the matrix shape.
    pub fn xavier<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        Self::uniform(rows, cols, limit, rng)
    }

    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, limit: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols).map(|_| rng.gen_range(-limit..=limit)).collect();
        Tensor2 { rows, cols, data }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.rows, self.cols)
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// `self += s * other`
    pub fn add_scaled(&mut self, other: &Tensor2, s: f64) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `out += x · self`, with `x` of length `rows` and `out` of length `cols`.
    pub fn vec_mat_acc(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (r, &xv) in x.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(self.row(r)) {
                *o += xv * w;
            }
        }
    }

    /// `out += self · d`, with `d` of length `cols` and `out` of length `rows`.
    pub fn mat_vec_acc(&self, d: &[f64], out: &mut [f64]) {
        debug_assert_eq!(d.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            *o += self.row(r).iter().zip(d).map(|(w, dv)| w * dv).sum::<f64>();
        }
    }

    /// `self += s * x ⊗ d`
    pub fn add_outer(&mut self, x: &[f64], d: &[f64], s: f64) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(d.len(), self.cols);
        for (r, &xv) in x.iter().enumerate() {
            let f = s * xv;
            if f == 0.0 {
                continue;
            }
            for (w, dv) in self.row_mut(r).iter_mut().zip(d) {
                *w += f * dv;
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Named view over a model's parameter tensors, in a fixed order.
pub trait ParamSet {
    fn blocks(&self) -> Vec<(String, &Tensor2)>;
    fn blocks_mut(&mut self) -> Vec<&mut Tensor2>;

    fn zero(&mut self) {
        for t in self.blocks_mut() {
            t.fill(0.0);
        }
    }

    fn check_finite(&self) -> Result<(), NnError> {
        for (name, t) in self.blocks() {
            if !t.is_finite() {
                return Err(NnError::NonFinite(name));
            }
        }
        Ok(())
    }
}

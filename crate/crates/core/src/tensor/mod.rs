//! Dense f64 arrays, a reverse-mode tape, AdamW and the checkpoint archive.
//!
//! Parameters live in a [`ParamSet`] outside the tape. A forward pass binds
//! them with [`Tape::param`], builds the graph, and [`Tape::backward`]
//! returns a [`Gradients`] map that can be accumulated back into the set.

mod archive;
mod fd;
mod optim;
mod params;
mod tape;

pub use archive::{read_archive, read_archive_bytes, write_archive, write_archive_bytes};
pub use fd::{finite_difference_check, FdReport};
pub use optim::{AdamW, AdamWConfig};
pub use params::ParamSet;
pub use tape::{Gradients, Tape, Var};

use crate::error::{Error, Result};

/// Row-major array of 64-bit floats with an optional gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    /// Builds an `n x m` matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let m = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * m);
        for r in rows {
            let r = r.as_ref();
            if r.len() != m {
                return Err(Error::shape("from_rows", "ragged rows"));
            }
            data.extend_from_slice(r);
        }
        Tensor::new(vec![rows.len(), m], data)
    }

    pub fn requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn is_requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub(crate) fn accumulate_grad(&mut self, g: &[f64]) {
        match &mut self.grad {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => self.grad = Some(g.to_vec()),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Element `(i, j)` of a rank-2 tensor.
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let m = self.shape[1];
        &self.data[i * m..(i + 1) * m]
    }
}

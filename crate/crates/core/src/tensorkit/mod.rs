//! Dense float64 tensors with a reverse-mode tape.
//!
//! Values live on a [`Tape`]; operations append nodes and return [`Var`]
//! handles. [`Tape::backward`] seeds a scalar output with 1 and walks the
//! nodes once in reverse order. Broadcasting is limited to a right-hand
//! operand that is either a scalar or a row vector repeated over the leading
//! batch dimension.

mod gemm;
mod gradcheck;
mod tape;

pub use gemm::gemm;
pub use gradcheck::grad_check;
pub use tape::{BNState, Tape, Var};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("batch norm needs at least 2 rows in training mode, got {0}")]
    DegenerateBatch(usize),
    #[error("backward needs a scalar output, got shape {0:?}")]
    NotScalar(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "tensor",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        Self::new(vec![rows, cols], data)
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// `(rows, cols)` for a 2-d tensor; a 1-d tensor is a single row.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n, p] => (*n, *p),
            [p] => (1, *p),
            [] => (1, 1),
            s => (s[0], s[1..].iter().product()),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let (_, p) = self.dims2();
        &self.data[i * p..(i + 1) * p]
    }

    /// Rows `idx` of a 2-d tensor, in that order.
    pub fn select_rows(&self, idx: &[usize]) -> Tensor {
        let (_, p) = self.dims2();
        let mut data = Vec::with_capacity(idx.len() * p);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Tensor {
            shape: vec![idx.len(), p],
            data,
        }
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }
}

//! Layers, the cone-constrained output layer, Adam, a plateau scheduler and
//! on-disk checkpoints.
//!
//! Parameters live in a [`ParamStore`] outside the layers. Each training step
//! binds the store onto a fresh [`Tape`], runs the forward pass, and reads
//! the gradients back out by [`ParamId`].

mod checkpoint;
mod constraint;
mod gradsuite;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use gradsuite::{gradcheck_suite, GradCheckResult};
pub use constraint::{general_polyhedron_combine, ConstraintLayer, ConstraintOutput};
pub use optim::{adam_step, AdamState, PlateauScheduler};

use rand::Rng;

use crate::tensorkit::{BNState, Tape, Tensor, TensorError, Var};

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("generator {index} violates the constraints by {violation:.3e}")]
    InfeasibleRay { index: usize, violation: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("checkpoint corrupt: {0}")]
    CheckpointCorrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    /// Buffers (running statistics, fixed rays) are saved but never optimized.
    pub trainable: bool,
}

/// Named tensors of one model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

/// Tape handles of every store entry for one forward pass.
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    /// Routes `id` to another tape value, e.g. to differentiate with respect
    /// to a single parameter.
    pub fn replace(&mut self, id: ParamId, var: Var) {
        self.0[id.0] = var;
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor, trainable: bool) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.entries.push(ParamEntry {
            name,
            tensor,
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound(
            self.entries
                .iter()
                .map(|e| {
                    if e.trainable {
                        tape.param(e.tensor.clone())
                    } else {
                        tape.constant(e.tensor.clone())
                    }
                })
                .collect(),
        )
    }

    /// Gradients of trainable entries after `tape.backward`; `None` for
    /// buffers and for parameters the loss does not depend on.
    pub fn grads(&self, tape: &Tape, bound: &Bound) -> Vec<Option<Vec<f64>>> {
        self.entries
            .iter()
            .zip(&bound.0)
            .map(|(e, &v)| if e.trainable { tape.grad(v).map(<[f64]>::to_vec) } else { None })
            .collect()
    }

    /// Replaces every tensor of `self` by the entry of the same name in `other`.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<(), NetError> {
        for e in &mut self.entries {
            let id = other
                .find(&e.name)
                .ok_or_else(|| NetError::CheckpointCorrupt(format!("missing tensor {}", e.name)))?;
            let t = other.get(id);
            if t.shape() != e.tensor.shape() {
                return Err(NetError::CheckpointCorrupt(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    e.name,
                    t.shape(),
                    e.tensor.shape()
                )));
            }
            e.tensor = t.clone();
        }
        Ok(())
    }
}

/// Fully connected layer `y = x W^T + b` with `W: out x in`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Weights uniform in `[-1/sqrt(in), 1/sqrt(in)]`, zero bias.
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        let w: Vec<f64> = (0..in_dim * out_dim).map(|_| rng.random_range(-bound..=bound)).collect();
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::matrix(out_dim, in_dim, w).expect("sized"),
            true,
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]), true);
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var, NetError> {
        let y = tape.matmul_nt(x, bound.var(self.weight))?;
        Ok(tape.add(y, bound.var(self.bias))?)
    }
}

/// Batch normalization with learnable scale/shift; running statistics are
/// store buffers so they travel with checkpoints.
#[derive(Debug, Clone, Copy)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub features: usize,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, features: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[features], 1.0), true),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[features]), true),
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(&[features]), false),
            running_var: store.add(format!("{name}.running_var"), Tensor::full(&[features], 1.0), false),
            features,
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        store: &mut ParamStore,
        x: Var,
        training: bool,
    ) -> Result<Var, NetError> {
        let mut state = BNState::new(self.features);
        state.running_mean = store.get(self.running_mean).data().to_vec();
        state.running_var = store.get(self.running_var).data().to_vec();
        let y = tape.batch_norm(x, bound.var(self.gamma), bound.var(self.beta), &mut state, training)?;
        if training {
            store.get_mut(self.running_mean).data_mut().copy_from_slice(&state.running_mean);
            store.get_mut(self.running_var).data_mut().copy_from_slice(&state.running_var);
        }
        Ok(y)
    }
}

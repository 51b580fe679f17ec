//! Named parameter collections bound to tapes per forward pass.

use super::tape::{NodeId, Tape};
use crate::Mat;
use ndarray::Array2;

/// A single learnable matrix. `decay` marks it for decoupled weight decay;
/// biases, self-connection vectors and calibration scalars are exempt.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Mat,
    pub decay: bool,
}

/// Ordered collection of parameters. Order is fixed at construction and shared
/// with optimizer state and checkpoints.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    /// Adds a parameter; names must be unique.
    pub fn push(&mut self, name: impl Into<String>, value: Mat, decay: bool) {
        let name = name.into();
        assert!(
            self.index_of(&name).is_none(),
            "duplicate parameter name: {name}"
        );
        self.params.push(Param { name, value, decay });
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn at(&self, idx: usize) -> &Param {
        &self.params[idx]
    }

    pub fn at_mut(&mut self, idx: usize) -> &mut Param {
        &mut self.params[idx]
    }

    /// Total number of scalar entries across all parameters.
    pub fn total_elems(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Inserts every parameter as a differentiable leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let ids = self.params.iter().map(|p| tape.leaf(p.value.clone())).collect();
        BoundParams { ids }
    }
}

/// Tape node handles for one bound [`ParamSet`], aligned by index.
pub struct BoundParams {
    ids: Vec<NodeId>,
}

impl BoundParams {
    pub fn id(&self, idx: usize) -> NodeId {
        self.ids[idx]
    }

    /// Gradients for all parameters after a backward pass, aligned with the
    /// originating set. Unreached parameters get zero gradients.
    pub fn grads(&self, tape: &Tape) -> Vec<Mat> {
        self.ids.iter().map(|&id| tape.grad(id)).collect()
    }

    /// Zero matrices shaped like each parameter.
    pub fn zero_grads(&self, tape: &Tape) -> Vec<Mat> {
        self.ids
            .iter()
            .map(|&id| {
                let (r, c) = tape.shape(id);
                Array2::zeros((r, c))
            })
            .collect()
    }
}

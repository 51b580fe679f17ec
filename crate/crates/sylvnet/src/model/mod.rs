//! Trainable generalizations of the Sylvester fixed-point update for
//! geometric matrix completion: a base model that emits the full association
//! matrix through fused aggregation channels, and a low-rank model that emits
//! per-network embeddings scored by dot products.

mod base;
mod config;
mod lowrank;
mod mlp;

pub use base::{cge_adjacency, BaseConfig, BaseInputs, BaseModel, ChannelFlags};
pub use config::{parse_config_file, ModelSpec};
pub use lowrank::{
    BranchFlags, LowRankConfig, LowRankInputs, LowRankModel, LowRankOutput, PriorIndicators,
};
pub use mlp::MlpSpec;

use crate::diff::{BoundParams, DiffError, NodeId, ParamSet, Tape};
use crate::Mat;
use ndarray::Array2;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model config: {0}")]
    Config(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

/// Resolves parameter names to tape nodes for one bound forward pass.
pub struct ParamNodes<'a> {
    set: &'a ParamSet,
    bound: &'a BoundParams,
}

impl<'a> ParamNodes<'a> {
    pub fn new(set: &'a ParamSet, bound: &'a BoundParams) -> Self {
        Self { set, bound }
    }

    pub fn get(&self, name: &str) -> NodeId {
        let idx = self
            .set
            .index_of(name)
            .unwrap_or_else(|| panic!("parameter {name} missing from set"));
        self.bound.id(idx)
    }
}

/// Uniform Glorot initialization with fan-based limits.
pub(crate) fn glorot<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Mat {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
}

/// Broadcasts the 1 x c row vector node over `rows` rows via an all-ones
/// column: `ones(rows, 1) * v`.
pub(crate) fn broadcast_rows(
    tape: &mut Tape,
    rows: usize,
    v: NodeId,
) -> Result<NodeId, DiffError> {
    let ones = tape.constant(Array2::ones((rows, 1)));
    tape.matmul(ones, v)
}

/// `1 - s` for a column-vector node, entrywise.
pub(crate) fn one_minus(tape: &mut Tape, s: NodeId) -> NodeId {
    let neg = tape.scale(s, -1.0);
    tape.add_const(neg, 1.0)
}

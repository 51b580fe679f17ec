//! Multi-network mining via the Sylvester equation and its neural generalizations.
//!
//! The crate has five layers:
//!
//! - [`data`]: dataset loading, k-NN graph construction, symmetric normalization,
//!   observation masks and train/val/test splits.
//! - [`diff`]: a reverse-mode autodiff tape over dense `f64` matrices, plus the
//!   Adam optimizer with decoupled weight decay and a finite-difference checker.
//! - [`sylvester`]: the classic fixed-point solver for
//!   `X = alpha * A1 X A2^T + (1 - alpha) * H` and a Kronecker-product direct
//!   solver used as its oracle.
//! - [`model`]: two trainable generalizations of the fixed-point update — a base
//!   model producing the full association matrix through fused aggregation
//!   channels, and a low-rank model producing per-network embeddings.
//! - [`train`]: the end-to-end training loop, RMSE evaluation, ablation harness
//!   and run reports.

pub mod data;
pub mod diff;
pub mod model;
pub mod sparse;
pub mod sylvester;
pub mod train;

/// Dense `f64` matrix used throughout the crate.
pub type Mat = ndarray::Array2<f64>;

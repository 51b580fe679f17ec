//! Dataset ingestion: input networks, prior associations, masks and splits.

mod movielens;
mod network;
mod ratings;
mod synthetic;

pub use movielens::{find_ml100k_dir, load_movielens_100k, MovieLens};
pub use network::{
    identity_network, knn_graph, power_iteration, symmetric_normalize, Metric, Network,
    NormalizedNetwork,
};
pub use ratings::{
    load_test_split, load_triplets, split_ratings, PriorAssociation, RatingSplit,
};
pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticData};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{0}")]
    Validation(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("integrity: {0}")]
    Integrity(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

//! Feature compression, bottom clustering and candidate (action space) selection.

mod autoencoder;
mod candidates;
mod kmeans;

pub use autoencoder::{train_autoencoder, Autoencoder, AutoencoderConfig, AutoencoderReport};
pub use candidates::{
    load_clustering, save_clustering, select_medoids, CandidateSet, ClusteringArtifact, CENTROIDS_FILE, CLUSTERING_FILE,
};
pub use kmeans::{kmeans, Clustering};

use thiserror::Error;

use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("autoencoder needs at least 2 feature rows, got {0}")]
    TooFewRows(usize),
    #[error("non-finite reconstruction loss at epoch {epoch} (last finite loss {last_finite})")]
    NonFiniteLoss { epoch: usize, last_finite: f64 },
    #[error("k = {k} exceeds the number of points ({n})")]
    TooManyClusters { k: usize, n: usize },
    #[error("invalid clustering input: {0}")]
    Invalid(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub type Result<T, E = PreprocessError> = std::result::Result<T, E>;

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

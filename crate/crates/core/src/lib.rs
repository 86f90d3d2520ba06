//! Representative instance selection under an annotation budget.
//!
//! Given an unlabeled collection of embeddings, `fsel` clusters it into `K`
//! groups with K-means (K-means++ seeding, Lloyd iterations, best of several
//! restarts by SSE) and picks the member closest to each centroid. Baseline
//! strategies (uniform random, within-cluster random) and the in-cluster
//! ablations (random member, farthest member) are provided alongside a
//! label-free evaluation harness.
//!
//! Data-parallel loops run on rayon when the `parallel` feature is enabled
//! (the default). Results are bit-identical with or without it and at any
//! thread count.

pub mod cli;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod kmeans;
pub mod par;
pub mod rng;
pub mod selector;

pub use embedding::{EmbeddingMatrix, MatrixFormat, PoolingMode, WordVectorTable};
pub use error::{Error, Result};
pub use eval::{Metric, MixtureSpec, TrialReport};
pub use kmeans::{ClusterModel, KMeansConfig};
pub use selector::{InCluster, SelectionResult, SelectionSpec, Strategy};

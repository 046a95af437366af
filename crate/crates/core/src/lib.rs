//! Spectral community detection for degree-corrected blockmodels.
//!
//! The crate covers the full path from an observed graph to community
//! assignments:
//!
//! 1. [`graph`] — sparse graph storage and edge-list ingestion;
//! 2. [`embed`] — adjacency spectral embeddings of one- and two-mode
//!    graphs, plus profile-likelihood elbow selection for the embedding
//!    dimension;
//! 3. [`spherical`] — the angular reparameterisation that removes the
//!    degree-correction ray structure, with its asymptotic covariance;
//! 4. [`mixture`] — the constrained Gaussian mixture fitted to the
//!    angular coordinates, BIC model selection over (d, K), and the final
//!    assignment step;
//! 5. [`simulate`] — blockmodel samplers and the replication protocols
//!    used by the built-in experiments;
//! 6. [`evaluate`] — clustering agreement and normality diagnostics;
//! 7. [`pipeline`] — the end-to-end algorithm and batch experiments.

pub mod embed;
pub mod error;
pub mod evaluate;
pub mod graph;
pub mod linalg;
pub mod mixture;
pub mod pipeline;
pub mod seed;
pub mod simulate;
pub mod spherical;

pub use error::{Error, Result};
pub use graph::{column_degree_profile, degree_profile, load_edge_list};
pub use graph::{DegreeProfile, GraphMode, SparseGraph};

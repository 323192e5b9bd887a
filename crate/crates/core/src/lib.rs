//! Graph-structured multimarginal Schrödinger bridges.
//!
//! Profile snapshots of per-core resource counters become empirical marginals
//! on a path, barycentric or series-parallel information graph. A multimarginal
//! Sinkhorn solve over that graph yields the most likely joint evolution, and
//! bimarginal bridges of the solution interpolate distributions at any time.

// `!(a < b)` rejects NaN on purpose; index loops mirror the tensor formulas
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod error;
pub mod hilbert;
pub mod ingest;
pub mod kernel;
mod linalg;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod predict;
pub mod projections;
pub mod sinkhorn;
pub mod synth;
#[cfg(test)]
mod test_support;

pub use error::{Error, Result};
pub use hilbert::hilbert_metric;
pub use ingest::{load_profiles, snapshot_marginals, ProfileDataset};
pub use kernel::{gibbs_kernel, squared_euclidean_cost, KernelSet};
pub use linalg::OpCounts;
pub use metrics::{kl_divergence, wasserstein2, TransportPlan};
pub use model::{Edge, EdgeKey, GraphStructure, Marginal, MarginalSet, NodeId, ScalingFamily};
pub use predict::{bridge_matrix, interpolate, prediction_error, PredictedDistribution};
pub use projections::ProjectionWorkspace;
pub use sinkhorn::{solve, BridgeSolution, SolverConfig};
pub use synth::{generate, SynthSpec};

//! Structured uni- and bimarginal projections of the implicit mass tensor `K ⊙ U`.
//!
//! None of these materialize the tensor. Path and barycentric projections are
//! chain message passing; series-parallel projections contract the parallel
//! core chains through their shared terminals.

mod barycentric;
mod chain;
mod path;
mod series_parallel;

use std::borrow::Cow;
use std::sync::OnceLock;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::kernel::KernelSet;
use crate::linalg::{OpCounter, OpCounts};
use crate::model::{GraphStructure, NodeId, ScalingFamily};

pub(crate) use chain::Chain;
pub(crate) use series_parallel::{hadamard_except, sp_transfer};

/// Kernels plus scalings plus the partial products cached between calls.
///
/// The barycentric potentials `p_σ` and the series-parallel transfer matrices
/// `A_k` are computed lazily and dropped by [`set_scaling`](Self::set_scaling)
/// whenever a scaling they depend on changes.
#[derive(Debug)]
pub struct ProjectionWorkspace<'a> {
    kernels: &'a KernelSet,
    scalings: Cow<'a, ScalingFamily>,
    counter: OpCounter,
    bc_p: Vec<OnceLock<Array1<f64>>>,
    sp_a: Vec<OnceLock<Array2<f64>>>,
}

impl<'a> ProjectionWorkspace<'a> {
    pub fn new(kernels: &'a KernelSet, scalings: &'a ScalingFamily) -> Result<Self> {
        Self::with_cow(kernels, Cow::Borrowed(scalings))
    }

    pub fn owned(kernels: &'a KernelSet, scalings: ScalingFamily) -> Result<Self> {
        Self::with_cow(kernels, Cow::Owned(scalings))
    }

    fn with_cow(kernels: &'a KernelSet, scalings: Cow<'a, ScalingFamily>) -> Result<Self> {
        let st = *kernels.structure();
        if *scalings.structure() != st {
            return Err(Error::invalid(format!(
                "scalings are for {:?}, kernels for {:?}",
                scalings.structure(),
                st
            )));
        }
        for (axis, (&n, node)) in kernels.node_sizes().iter().zip(st.nodes()).enumerate() {
            let got = scalings.by_axis(axis).len();
            if got != n {
                return Err(Error::ShapeMismatch(format!(
                    "scaling for {node} has length {got}, kernels expect {n}"
                )));
            }
        }
        let (np, na) = match st {
            GraphStructure::Barycentric { snapshots, .. } => (snapshots, 0),
            GraphStructure::SeriesParallel { cores, .. } => (0, cores),
            GraphStructure::Path { .. } => (0, 0),
        };
        Ok(Self {
            kernels,
            scalings,
            counter: OpCounter::default(),
            bc_p: (0..np).map(|_| OnceLock::new()).collect(),
            sp_a: (0..na).map(|_| OnceLock::new()).collect(),
        })
    }

    pub fn structure(&self) -> &GraphStructure {
        self.kernels.structure()
    }

    pub fn kernels(&self) -> &KernelSet {
        self.kernels
    }

    pub fn scalings(&self) -> &ScalingFamily {
        &self.scalings
    }

    pub fn into_scalings(self) -> ScalingFamily {
        self.scalings.into_owned()
    }

    /// Operation counts accumulated since construction or the last reset.
    pub fn counts(&self) -> OpCounts {
        self.counter.snapshot()
    }

    pub fn reset_counts(&self) {
        self.counter.reset();
    }

    /// Drops every cached partial product.
    pub fn clear_cache(&mut self) {
        self.bc_p.iter_mut().for_each(|c| drop(c.take()));
        self.sp_a.iter_mut().for_each(|c| drop(c.take()));
    }

    /// Replaces `u` at `node` and invalidates the caches that read it.
    pub fn set_scaling(&mut self, node: NodeId, u: Array1<f64>) -> Result<()> {
        let st = *self.structure();
        let axis = st.axis(node).ok_or(Error::UnknownNode(node))?;
        let old = self.scalings.by_axis(axis).len();
        if u.len() != old {
            return Err(Error::DimensionMismatch {
                expected: old,
                found: u.len(),
            });
        }
        if u.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::invalid(
                "scaling entries must be finite and strictly positive",
            ));
        }
        *self.scalings.to_mut().by_axis_mut(axis) = u;
        match st {
            GraphStructure::Barycentric { .. } => drop(self.bc_p[node.snapshot - 1].take()),
            GraphStructure::SeriesParallel { snapshots, .. } => {
                if node.snapshot != 1 && node.snapshot != snapshots {
                    drop(self.sp_a[node.core - 1].take());
                }
            }
            GraphStructure::Path { .. } => {}
        }
        Ok(())
    }

    pub(crate) fn u(&self, node: NodeId) -> &Array1<f64> {
        self.scalings.get(node).expect("node in index set")
    }

    fn require(&self, operation: &'static str, expected: &'static str) -> Result<()> {
        let found = self.structure().kind();
        if found == expected {
            Ok(())
        } else {
            Err(Error::WrongStructure {
                operation,
                expected,
                found,
            })
        }
    }

    /// Unimarginal projection at any node of the index set.
    pub fn proj(&self, node: NodeId) -> Result<Array1<f64>> {
        match self.structure() {
            GraphStructure::Path { .. } => {
                if node.core != 1 {
                    return Err(Error::UnknownNode(node));
                }
                self.path_proj(node.snapshot)
            }
            GraphStructure::Barycentric { .. } => self.bc_proj(node.core, node.snapshot),
            GraphStructure::SeriesParallel { .. } => self.sp_proj(node.core, node.snapshot),
        }
    }

    /// Bimarginal projection; rows follow `first`, columns follow `second`.
    pub fn proj2(&self, first: NodeId, second: NodeId) -> Result<Array2<f64>> {
        match self.structure() {
            GraphStructure::Path { .. } => {
                if first.core != 1 || second.core != 1 {
                    return Err(Error::UnsupportedPair(first, second));
                }
                self.path_proj2(first.snapshot, second.snapshot)
            }
            GraphStructure::Barycentric { .. } => self.bc_proj2(first, second),
            GraphStructure::SeriesParallel { .. } => self.sp_proj2(first, second),
        }
    }

    /// Whether [`proj2`](Self::proj2) supports this pair directly.
    pub fn supports_pair(&self, first: NodeId, second: NodeId) -> bool {
        let st = self.structure();
        if first == second || !st.contains(first) || !st.contains(second) {
            return false;
        }
        match st {
            GraphStructure::Path { .. } => true,
            GraphStructure::Barycentric { .. } => barycentric::pair_shape(first, second).is_some(),
            GraphStructure::SeriesParallel { .. } => {
                series_parallel::pair_shape(st, first, second).is_some()
            }
        }
    }

    /// `⟨K, U⟩`, the total mass of the implicit tensor.
    pub fn total_mass(&self) -> f64 {
        let first = self.structure().nodes()[0];
        self.proj(first).map(|p| p.sum()).unwrap_or(f64::NAN)
    }
}

fn check_snapshot(st: &GraphStructure, node: NodeId) -> Result<()> {
    if st.contains(node) {
        Ok(())
    } else {
        Err(Error::UnknownNode(node))
    }
}

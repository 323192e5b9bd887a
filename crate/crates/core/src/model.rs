//! Domain types: empirical marginals, graph structures and their index sets,
//! and the Sinkhorn scaling family.
//!
//! Core and snapshot labels are 1-based. Core `0` is reserved for the
//! barycenter chain of the [`GraphStructure::Barycentric`] structure.

use std::collections::BTreeMap;
use std::fmt;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `sum(weights) == 1` for a [`Marginal`].
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// A marginal index `(j, σ)`: core `j` at snapshot `σ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId {
    pub core: usize,
    pub snapshot: usize,
}

impl NodeId {
    pub const fn new(core: usize, snapshot: usize) -> Self {
        Self { core, snapshot }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.core, self.snapshot)
    }
}

/// Identifies one pairwise kernel `K^{j,σ}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeKey {
    pub core: usize,
    pub index: usize,
}

impl fmt::Display for EdgeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "K^{{{},{}}}", self.core, self.index)
    }
}

/// An edge of the information graph. Its kernel has shape `|from| x |to|`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Edge {
    pub key: EdgeKey,
    pub from: NodeId,
    pub to: NodeId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GraphStructure {
    /// A single time chain (one core).
    Path { snapshots: usize },
    /// Phantom barycenter chain with one spoke per core and snapshot.
    Barycentric {
        cores: usize,
        snapshots: usize,
        bary_support: usize,
    },
    /// `cores` parallel time chains sharing the input `(1,1)` and output `(1,s)` terminals.
    SeriesParallel { cores: usize, snapshots: usize },
}

impl GraphStructure {
    pub fn path(snapshots: usize) -> Result<Self> {
        Self::Path { snapshots }.validated()
    }

    pub fn barycentric(cores: usize, snapshots: usize, bary_support: usize) -> Result<Self> {
        Self::Barycentric {
            cores,
            snapshots,
            bary_support,
        }
        .validated()
    }

    pub fn series_parallel(cores: usize, snapshots: usize) -> Result<Self> {
        Self::SeriesParallel { cores, snapshots }.validated()
    }

    pub fn validated(self) -> Result<Self> {
        if self.snapshots() < 2 {
            return Err(Error::invalid(format!(
                "{} structure needs at least 2 snapshots, got {}",
                self.kind(),
                self.snapshots()
            )));
        }
        if self.cores() < 1 {
            return Err(Error::invalid("at least one core is required"));
        }
        if let Self::Barycentric { bary_support, .. } = self {
            if bary_support < 1 {
                return Err(Error::invalid("barycenter support size must be >= 1"));
            }
        }
        Ok(self)
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Path { .. } => "path",
            Self::Barycentric { .. } => "barycentric",
            Self::SeriesParallel { .. } => "series-parallel",
        }
    }

    pub fn snapshots(&self) -> usize {
        match *self {
            Self::Path { snapshots }
            | Self::Barycentric { snapshots, .. }
            | Self::SeriesParallel { snapshots, .. } => snapshots,
        }
    }

    /// Number of physical cores `J` (1 for a path).
    pub fn cores(&self) -> usize {
        match *self {
            Self::Path { .. } => 1,
            Self::Barycentric { cores, .. } | Self::SeriesParallel { cores, .. } => cores,
        }
    }

    /// `|Λ|`.
    pub fn cardinality(&self) -> usize {
        let s = self.snapshots();
        match *self {
            Self::Path { .. } => s,
            Self::Barycentric { cores, .. } => (cores + 1) * s,
            Self::SeriesParallel { cores, .. } => cores * (s - 2) + 2,
        }
    }

    /// The index set `Λ` in canonical axis order.
    ///
    /// * path: `σ` ascending
    /// * barycentric: `(0,1..s)`, then `(1,1..s)`, ..., `(J,1..s)`
    /// * series-parallel: `(1,1)`, then `(j,2..s-1)` for `j` ascending, then `(1,s)`
    pub fn nodes(&self) -> Vec<NodeId> {
        let s = self.snapshots();
        match *self {
            Self::Path { .. } => (1..=s).map(|t| NodeId::new(1, t)).collect(),
            Self::Barycentric { cores, .. } => (0..=cores)
                .flat_map(|j| (1..=s).map(move |t| NodeId::new(j, t)))
                .collect(),
            Self::SeriesParallel { cores, .. } => {
                let mut out = Vec::with_capacity(self.cardinality());
                out.push(NodeId::new(1, 1));
                for j in 1..=cores {
                    for t in 2..s {
                        out.push(NodeId::new(j, t));
                    }
                }
                out.push(NodeId::new(1, s));
                out
            }
        }
    }

    /// Position of `node` in the canonical axis order.
    pub fn axis(&self, node: NodeId) -> Option<usize> {
        let s = self.snapshots();
        let NodeId {
            core: j,
            snapshot: t,
        } = node;
        if t < 1 || t > s {
            return None;
        }
        match *self {
            Self::Path { .. } => (j == 1).then(|| t - 1),
            Self::Barycentric { cores, .. } => (j <= cores).then(|| j * s + t - 1),
            Self::SeriesParallel { cores, .. } => {
                if t == 1 {
                    (j == 1).then_some(0)
                } else if t == s {
                    (j == 1).then(|| self.cardinality() - 1)
                } else {
                    (j >= 1 && j <= cores).then(|| 1 + (j - 1) * (s - 2) + (t - 2))
                }
            }
        }
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.axis(node).is_some()
    }

    /// The marginal that represents core `core` at snapshot `snapshot`.
    ///
    /// For series-parallel structures every core starts at `(1,1)` and ends at `(1,s)`.
    pub fn node_for(&self, core: usize, snapshot: usize) -> Option<NodeId> {
        let s = self.snapshots();
        if snapshot < 1 || snapshot > s {
            return None;
        }
        let node = match *self {
            Self::SeriesParallel { cores, .. } => {
                if core < 1 || core > cores {
                    return None;
                }
                if snapshot == 1 || snapshot == s {
                    NodeId::new(1, snapshot)
                } else {
                    NodeId::new(core, snapshot)
                }
            }
            _ => NodeId::new(core, snapshot),
        };
        self.contains(node).then_some(node)
    }

    /// All edges of the information graph, with kernel orientation `from -> to`.
    pub fn edges(&self) -> Vec<Edge> {
        let s = self.snapshots();
        let mut out = Vec::new();
        match *self {
            Self::Path { .. } => {
                for t in 1..s {
                    out.push(Edge {
                        key: EdgeKey { core: 1, index: t },
                        from: NodeId::new(1, t),
                        to: NodeId::new(1, t + 1),
                    });
                }
            }
            Self::Barycentric { cores, .. } => {
                for t in 1..s {
                    out.push(Edge {
                        key: EdgeKey { core: 0, index: t },
                        from: NodeId::new(0, t),
                        to: NodeId::new(0, t + 1),
                    });
                }
                for j in 1..=cores {
                    for t in 1..=s {
                        out.push(Edge {
                            key: EdgeKey { core: j, index: t },
                            from: NodeId::new(0, t),
                            to: NodeId::new(j, t),
                        });
                    }
                }
            }
            Self::SeriesParallel { cores, .. } => {
                for j in 1..=cores {
                    for t in 1..s {
                        out.push(Edge {
                            key: EdgeKey { core: j, index: t },
                            from: self.node_for(j, t).expect("in range"),
                            to: self.node_for(j, t + 1).expect("in range"),
                        });
                    }
                }
            }
        }
        out
    }

    /// Name used by the CLI (`path`, `bc`, `sp`).
    pub fn short_name(&self) -> &'static str {
        match self {
            Self::Path { .. } => "path",
            Self::Barycentric { .. } => "bc",
            Self::SeriesParallel { .. } => "sp",
        }
    }
}

/// An empirical probability measure on points in `R^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct Marginal {
    points: Array2<f64>,
    weights: Array1<f64>,
    label: NodeId,
    time: f64,
}

impl Marginal {
    /// Uniformly weighted empirical measure over `points`.
    pub fn empirical(points: &[Vec<f64>], label: NodeId, time: f64) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::invalid("a marginal needs at least one point"))?;
        let d = first.len();
        if d == 0 {
            return Err(Error::invalid("points must have dimension >= 1"));
        }
        let mut flat = Vec::with_capacity(points.len() * d);
        for p in points {
            if p.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: p.len(),
                });
            }
            flat.extend_from_slice(p);
        }
        let arr = Array2::from_shape_vec((points.len(), d), flat)
            .map_err(|e| Error::Internal(e.to_string()))?;
        Self::uniform(arr, label, time)
    }

    pub fn uniform(points: Array2<f64>, label: NodeId, time: f64) -> Result<Self> {
        let n = points.nrows();
        if n == 0 {
            return Err(Error::invalid("a marginal needs at least one point"));
        }
        let weights = Array1::from_elem(n, 1.0 / n as f64);
        Self::new(points, weights, label, time)
    }

    /// Explicitly weighted marginal. Weights must be nonnegative and sum to 1.
    pub fn new(
        points: Array2<f64>,
        weights: Array1<f64>,
        label: NodeId,
        time: f64,
    ) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(Error::invalid(
                "a marginal needs at least one point of dimension >= 1",
            ));
        }
        if points.nrows() != weights.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} points but {} weights",
                points.nrows(),
                weights.len()
            )));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("support points must be finite"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("weights must be finite and nonnegative"));
        }
        let total: f64 = weights.sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::invalid(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(Self {
            points,
            weights,
            label,
            time,
        })
    }

    /// Normalizes arbitrary nonnegative masses into weights.
    pub fn from_masses(
        points: Array2<f64>,
        masses: Array1<f64>,
        label: NodeId,
        time: f64,
    ) -> Result<Self> {
        let total: f64 = masses.sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::invalid(format!(
                "total mass must be positive, got {total}"
            )));
        }
        Self::new(points, masses / total, label, time)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> ArrayView2<'_, f64> {
        self.points.view()
    }

    pub fn point(&self, i: usize) -> ArrayView1<'_, f64> {
        self.points.row(i)
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    pub fn label(&self) -> NodeId {
        self.label
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn with_label(mut self, label: NodeId) -> Self {
        self.label = label;
        self
    }

    pub fn mean(&self) -> Array1<f64> {
        self.weights.dot(&self.points)
    }

    /// Merges bitwise-identical support points, summing their weights.
    /// Output points are in lexicographic order.
    pub fn aggregated(&self) -> Vec<(Vec<f64>, f64)> {
        let mut acc: BTreeMap<Vec<u64>, f64> = BTreeMap::new();
        for (row, w) in self.points.rows().into_iter().zip(self.weights.iter()) {
            let key: Vec<u64> = row.iter().map(|x| ordered_bits(*x)).collect();
            *acc.entry(key).or_insert(0.0) += *w;
        }
        acc.into_iter()
            .map(|(k, w)| (k.into_iter().map(from_ordered_bits).collect(), w))
            .collect()
    }
}

// Order-preserving bit pattern for finite floats; `-0.0` folds into `0.0`.
fn ordered_bits(x: f64) -> u64 {
    let x = if x == 0.0 { 0.0 } else { x };
    let b = x.to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | (1 << 63)
    }
}

fn from_ordered_bits(b: u64) -> f64 {
    if b >> 63 == 1 {
        f64::from_bits(b & !(1 << 63))
    } else {
        f64::from_bits(!b)
    }
}

/// Marginals keyed exactly by the index set of a structure.
#[derive(Clone, Debug)]
pub struct MarginalSet {
    structure: GraphStructure,
    // canonical axis order
    marginals: Vec<Marginal>,
}

impl MarginalSet {
    pub fn new(
        structure: GraphStructure,
        marginals: impl IntoIterator<Item = Marginal>,
    ) -> Result<Self> {
        let structure = structure.validated()?;
        let mut slots: Vec<Option<Marginal>> = vec![None; structure.cardinality()];
        for m in marginals {
            let axis = structure
                .axis(m.label())
                .ok_or(Error::UnknownNode(m.label()))?;
            if slots[axis].is_some() {
                return Err(Error::invalid(format!(
                    "duplicate marginal for node {}",
                    m.label()
                )));
            }
            slots[axis] = Some(m);
        }
        let nodes = structure.nodes();
        let mut out = Vec::with_capacity(slots.len());
        for (slot, node) in slots.into_iter().zip(nodes) {
            out.push(
                slot.ok_or_else(|| Error::invalid(format!("missing marginal for node {node}")))?,
            );
        }
        let d = out[0].dim();
        if let Some(bad) = out.iter().find(|m| m.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: bad.dim(),
            });
        }
        if let GraphStructure::Barycentric { bary_support, .. } = structure {
            for t in 1..=structure.snapshots() {
                let m = &out[structure.axis(NodeId::new(0, t)).expect("barycenter node")];
                if m.len() != bary_support {
                    return Err(Error::ShapeMismatch(format!(
                        "barycenter marginal (0,{t}) has {} points, structure declares {bary_support}",
                        m.len()
                    )));
                }
            }
        }
        Ok(Self {
            structure,
            marginals: out,
        })
    }

    pub fn structure(&self) -> &GraphStructure {
        &self.structure
    }

    pub fn dim(&self) -> usize {
        self.marginals[0].dim()
    }

    pub fn get(&self, node: NodeId) -> Option<&Marginal> {
        self.structure.axis(node).map(|a| &self.marginals[a])
    }

    pub fn by_axis(&self, axis: usize) -> &Marginal {
        &self.marginals[axis]
    }

    /// Marginals in canonical axis order.
    pub fn iter(&self) -> impl Iterator<Item = &Marginal> {
        self.marginals.iter()
    }

    /// Snapshot times `τ_1..τ_s`, read from the first core's marginals.
    pub fn times(&self) -> Vec<f64> {
        (1..=self.structure.snapshots())
            .map(|t| {
                let node = self.structure.node_for(1, t).expect("core 1 exists");
                self.get(node).expect("node present").time()
            })
            .collect()
    }
}

/// Sinkhorn scaling vectors `u^j_σ`, one per node of `Λ`, in canonical axis order.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalingFamily {
    structure: GraphStructure,
    u: Vec<Array1<f64>>,
}

impl ScalingFamily {
    /// All-ones scalings with lengths matching `marginals`.
    pub fn ones(marginals: &MarginalSet) -> Self {
        Self {
            structure: *marginals.structure(),
            u: marginals.iter().map(|m| Array1::ones(m.len())).collect(),
        }
    }

    pub fn from_vectors(structure: GraphStructure, u: Vec<Array1<f64>>) -> Result<Self> {
        if u.len() != structure.cardinality() {
            return Err(Error::ShapeMismatch(format!(
                "{} scaling vectors for an index set of size {}",
                u.len(),
                structure.cardinality()
            )));
        }
        if u.iter()
            .flat_map(|v| v.iter())
            .any(|x| !(x.is_finite() && *x > 0.0))
        {
            return Err(Error::invalid(
                "scaling entries must be finite and strictly positive",
            ));
        }
        Ok(Self { structure, u })
    }

    pub fn structure(&self) -> &GraphStructure {
        &self.structure
    }

    pub fn get(&self, node: NodeId) -> Option<&Array1<f64>> {
        self.structure.axis(node).map(|a| &self.u[a])
    }

    pub fn by_axis(&self, axis: usize) -> &Array1<f64> {
        &self.u[axis]
    }

    pub(crate) fn by_axis_mut(&mut self, axis: usize) -> &mut Array1<f64> {
        &mut self.u[axis]
    }

    pub fn vectors(&self) -> &[Array1<f64>] {
        &self.u
    }

    pub fn into_vectors(self) -> Vec<Array1<f64>> {
        self.u
    }
}

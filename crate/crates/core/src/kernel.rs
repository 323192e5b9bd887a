//! Ground costs and Gibbs kernels.

use std::collections::BTreeMap;

use ndarray::Array2;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Edge, EdgeKey, GraphStructure, Marginal, MarginalSet};

/// Pairwise squared Euclidean distances, `|source| x |target|`.
pub fn squared_euclidean_cost(source: &Marginal, target: &Marginal) -> Result<Array2<f64>> {
    if source.dim() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: source.dim(),
            found: target.dim(),
        });
    }
    let xs = source.points();
    let ys = target.points();
    Ok(Array2::from_shape_fn((xs.nrows(), ys.nrows()), |(r, l)| {
        xs.row(r)
            .iter()
            .zip(ys.row(l).iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }))
}

/// Entrywise `exp(-C'/ε)` with `C' = C / max(C)` when `normalize` is set.
pub fn gibbs_kernel(cost: &Array2<f64>, epsilon: f64, normalize: bool) -> Result<Array2<f64>> {
    let scale = if normalize { max_cost(cost) } else { 1.0 };
    gibbs_kernel_scaled(cost, epsilon, scale, "K")
}

fn max_cost(cost: &Array2<f64>) -> f64 {
    let m = cost.iter().copied().fold(0.0_f64, f64::max);
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

fn gibbs_kernel_scaled(
    cost: &Array2<f64>,
    epsilon: f64,
    scale: f64,
    edge: &str,
) -> Result<Array2<f64>> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::invalid(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    if cost.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
        return Err(Error::invalid(
            "cost entries must be finite and nonnegative",
        ));
    }
    let kernel = cost.mapv(|c| (-(c / scale) / epsilon).exp());
    if kernel.iter().any(|&k| k == 0.0) {
        return Err(Error::KernelUnderflow {
            edge: edge.to_string(),
            epsilon,
        });
    }
    Ok(kernel)
}

/// The per-edge Gibbs kernels of a structured problem.
#[derive(Clone, Debug)]
pub struct KernelSet {
    structure: GraphStructure,
    epsilon: f64,
    cost_normalizer: f64,
    edges: Vec<Edge>,
    kernels: BTreeMap<EdgeKey, Array2<f64>>,
}

impl KernelSet {
    /// Builds every edge kernel from squared Euclidean costs between the
    /// adjacent marginals. With `normalize`, all costs are divided by the
    /// largest cost over all edges.
    pub fn build(marginals: &MarginalSet, epsilon: f64, normalize: bool) -> Result<Self> {
        let structure = *marginals.structure();
        let edges = structure.edges();
        let mut costs = Vec::with_capacity(edges.len());
        for e in &edges {
            let from = marginals.get(e.from).ok_or(Error::UnknownNode(e.from))?;
            let to = marginals.get(e.to).ok_or(Error::UnknownNode(e.to))?;
            costs.push(squared_euclidean_cost(from, to)?);
        }
        let cost_normalizer = if normalize {
            costs
                .iter()
                .flat_map(|c| c.iter().copied())
                .fold(0.0_f64, f64::max)
        } else {
            1.0
        };
        let cost_normalizer = if cost_normalizer > 0.0 {
            cost_normalizer
        } else {
            1.0
        };
        let mut kernels = BTreeMap::new();
        for (e, c) in edges.iter().zip(&costs) {
            let k = gibbs_kernel_scaled(c, epsilon, cost_normalizer, &e.key.to_string())?;
            kernels.insert(e.key, k);
        }
        Ok(Self {
            structure,
            epsilon,
            cost_normalizer,
            edges,
            kernels,
        })
    }

    /// Wraps caller-provided kernels. Every edge of `structure` must be present
    /// with a strictly positive finite matrix.
    pub fn from_kernels(
        structure: GraphStructure,
        epsilon: f64,
        kernels: BTreeMap<EdgeKey, Array2<f64>>,
    ) -> Result<Self> {
        let structure = structure.validated()?;
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::invalid(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        let edges = structure.edges();
        if kernels.len() != edges.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} kernels supplied for {} edges",
                kernels.len(),
                edges.len()
            )));
        }
        for e in &edges {
            let k = kernels
                .get(&e.key)
                .ok_or_else(|| Error::ShapeMismatch(format!("missing kernel {}", e.key)))?;
            if k.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(Error::invalid(format!(
                    "kernel {} must be strictly positive",
                    e.key
                )));
            }
        }
        let set = Self {
            structure,
            epsilon,
            cost_normalizer: 1.0,
            edges,
            kernels,
        };
        set.check_shapes()?;
        Ok(set)
    }

    fn check_shapes(&self) -> Result<()> {
        // every node must see a consistent support size across its incident edges
        let mut sizes: BTreeMap<crate::model::NodeId, usize> = BTreeMap::new();
        for e in &self.edges {
            let k = &self.kernels[&e.key];
            for (node, n) in [(e.from, k.nrows()), (e.to, k.ncols())] {
                match sizes.insert(node, n) {
                    Some(prev) if prev != n => {
                        return Err(Error::ShapeMismatch(format!(
                            "node {node} has support size {prev} on one edge and {n} on {}",
                            e.key
                        )))
                    }
                    _ => {}
                }
            }
        }
        if let GraphStructure::Barycentric { bary_support, .. } = self.structure {
            for t in 1..=self.structure.snapshots() {
                if let Some(&n) = sizes.get(&crate::model::NodeId::new(0, t)) {
                    if n != bary_support {
                        return Err(Error::ShapeMismatch(format!(
                            "barycenter (0,{t}) has size {n}, expected {bary_support}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn structure(&self) -> &GraphStructure {
        &self.structure
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn cost_normalizer(&self) -> f64 {
        self.cost_normalizer
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// `K^{core,index}`. Panics if the edge does not exist.
    pub fn kernel(&self, core: usize, index: usize) -> &Array2<f64> {
        &self.kernels[&EdgeKey { core, index }]
    }

    pub fn get(&self, key: EdgeKey) -> Option<&Array2<f64>> {
        self.kernels.get(&key)
    }

    /// Support size of every node, in canonical axis order.
    pub fn node_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.structure.cardinality()];
        for e in &self.edges {
            let k = &self.kernels[&e.key];
            sizes[self.structure.axis(e.from).expect("edge node")] = k.nrows();
            sizes[self.structure.axis(e.to).expect("edge node")] = k.ncols();
        }
        sizes
    }

    /// SHA-256 over epsilon, the normalizer and every kernel in edge order.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.epsilon.to_le_bytes());
        h.update(self.cost_normalizer.to_le_bytes());
        for e in &self.edges {
            let k = &self.kernels[&e.key];
            h.update((k.nrows() as u64).to_le_bytes());
            h.update((k.ncols() as u64).to_le_bytes());
            for x in k.iter() {
                h.update(x.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

//! Dense brute-force reference for the mass tensor `K ⊙ U` and its projections.
//!
//! Every function here materializes the full tensor, so it is only usable at
//! desk scale. The structured projections are checked against it.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::kernel::KernelSet;
use crate::model::{GraphStructure, NodeId, ScalingFamily};

pub const DEFAULT_ENTRY_CAP: usize = 1_000_000;

/// A dense tensor with one axis per node of `Λ`, row-major (last axis fastest).
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    labels: Vec<NodeId>,
    dims: Vec<usize>,
    values: Vec<f64>,
}

impl DenseTensor {
    pub fn new(labels: Vec<NodeId>, dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if labels.len() != dims.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} axes",
                labels.len(),
                dims.len()
            )));
        }
        let total: usize = dims.iter().product();
        if values.len() != total {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a tensor of {} entries",
                values.len(),
                total
            )));
        }
        Ok(Self {
            labels,
            dims,
            values,
        })
    }

    pub fn labels(&self) -> &[NodeId] {
        &self.labels
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    fn axis_of(&self, node: NodeId) -> Result<usize> {
        self.labels
            .iter()
            .position(|&l| l == node)
            .ok_or(Error::UnknownNode(node))
    }

    fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.dims.len()];
        for a in (0..self.dims.len().saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * self.dims[a + 1];
        }
        strides
    }
}

/// Odometer over all multi-indices of `dims`, last axis fastest.
fn for_each_index(dims: &[usize], mut f: impl FnMut(usize, &[usize])) {
    let mut idx = vec![0usize; dims.len()];
    let total: usize = dims.iter().product();
    for flat in 0..total {
        f(flat, &idx);
        for a in (0..dims.len()).rev() {
            idx[a] += 1;
            if idx[a] < dims[a] {
                break;
            }
            idx[a] = 0;
        }
    }
}

/// Dense `K` whose entry is the product of all edge-kernel entries.
pub fn assemble_kernel_tensor(kernels: &KernelSet, cap: usize) -> Result<DenseTensor> {
    let structure: &GraphStructure = kernels.structure();
    let dims = kernels.node_sizes();
    let entries: u128 = dims.iter().map(|&d| d as u128).product();
    if entries > cap as u128 {
        return Err(Error::SizeCap { entries, cap });
    }
    let edges: Vec<(usize, usize, &Array2<f64>)> = kernels
        .edges()
        .iter()
        .map(|e| {
            (
                structure.axis(e.from).expect("edge node"),
                structure.axis(e.to).expect("edge node"),
                kernels.get(e.key).expect("edge kernel"),
            )
        })
        .collect();
    let mut values = vec![0.0; entries as usize];
    for_each_index(&dims, |flat, idx| {
        values[flat] = edges
            .iter()
            .map(|(a, b, k)| k[[idx[*a], idx[*b]]])
            .product();
    });
    DenseTensor::new(structure.nodes(), dims, values)
}

/// `tensor ⊙ (⊗ u)`.
pub fn apply_scalings(tensor: &DenseTensor, scalings: &ScalingFamily) -> Result<DenseTensor> {
    let mut us = Vec::with_capacity(tensor.labels.len());
    for (&node, &dim) in tensor.labels.iter().zip(&tensor.dims) {
        let u = scalings.get(node).ok_or(Error::UnknownNode(node))?;
        if u.len() != dim {
            return Err(Error::ShapeMismatch(format!(
                "scaling for {node} has length {}, axis has {dim}",
                u.len()
            )));
        }
        us.push(u);
    }
    let mut values = tensor.values.clone();
    for_each_index(&tensor.dims, |flat, idx| {
        for (a, u) in us.iter().enumerate() {
            values[flat] *= u[idx[a]];
        }
    });
    DenseTensor::new(tensor.labels.clone(), tensor.dims.clone(), values)
}

/// Sum over every axis except `node`.
pub fn brute_proj(tensor: &DenseTensor, node: NodeId) -> Result<Vec<f64>> {
    let axis = tensor.axis_of(node)?;
    let mut out = vec![0.0; tensor.dims[axis]];
    for_each_index(&tensor.dims, |flat, idx| {
        out[idx[axis]] += tensor.values[flat]
    });
    Ok(out)
}

/// Sum over every axis except `first` (rows) and `second` (columns).
pub fn brute_proj2(tensor: &DenseTensor, first: NodeId, second: NodeId) -> Result<Array2<f64>> {
    if first == second {
        return Err(Error::UnsupportedPair(first, second));
    }
    let a = tensor.axis_of(first)?;
    let b = tensor.axis_of(second)?;
    let mut out = Array2::zeros((tensor.dims[a], tensor.dims[b]));
    for_each_index(&tensor.dims, |flat, idx| {
        out[[idx[a], idx[b]]] += tensor.values[flat]
    });
    Ok(out)
}

/// `⟨C + ε log M, M⟩` with `0 log 0 = 0`.
pub fn brute_objective(mass: &DenseTensor, cost: &DenseTensor, epsilon: f64) -> Result<f64> {
    if mass.dims != cost.dims {
        return Err(Error::ShapeMismatch(format!(
            "mass dims {:?} vs cost dims {:?}",
            mass.dims, cost.dims
        )));
    }
    let mut acc = 0.0;
    for (&m, &c) in mass.values.iter().zip(&cost.values) {
        if m > 0.0 {
            acc += m * (c + epsilon * m.ln());
        } else if m < 0.0 {
            return Err(Error::invalid("mass tensor has a negative entry"));
        }
    }
    Ok(acc)
}

/// Cost tensor consistent with a kernel tensor: `C = -ε log K`.
pub fn cost_tensor_from_kernel(kernel: &DenseTensor, epsilon: f64) -> DenseTensor {
    DenseTensor {
        labels: kernel.labels.clone(),
        dims: kernel.dims.clone(),
        values: kernel.values.iter().map(|k| -epsilon * k.ln()).collect(),
    }
}

/// Flat row-major offset of a multi-index; exposed for tests.
pub fn flat_index(tensor: &DenseTensor, idx: &[usize]) -> usize {
    tensor.strides().iter().zip(idx).map(|(s, i)| s * i).sum()
}

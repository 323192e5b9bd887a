//! Series-parallel projections.
//!
//! Every core chain runs from the shared input `(1,1)` to the shared output
//! `(1,s)`, so with `A_k` the transfer matrix of core `k` the tensor mass is
//! `⟨K, U⟩ = u₁ᵀ (A_1 ⊙ ... ⊙ A_J) u_s`. The parallel chains meet at both
//! terminals, hence the Hadamard (not matrix) product across cores.

use ndarray::{Array1, Array2, Zip};

use super::{check_snapshot, ProjectionWorkspace};
use crate::error::{Error, Result};
use crate::kernel::KernelSet;
use crate::linalg::{
    column_dot, hadamard, mm, mtv, mv, scale_cols, scale_rows, transposed, OpCounter,
};
use crate::model::{GraphStructure, NodeId, ScalingFamily};

/// `K^{j,t1} diag(u^j_{t1+1}) K^{j,t1+1} ... K^{j,t2-1}` for `t1 < t2`.
pub(crate) fn core_between(
    kernels: &KernelSet,
    scalings: &ScalingFamily,
    j: usize,
    t1: usize,
    t2: usize,
    c: &OpCounter,
) -> Array2<f64> {
    let st = kernels.structure();
    let mut acc = kernels.kernel(j, t1).clone();
    for t in t1 + 1..t2 {
        let u = scalings
            .get(st.node_for(j, t).expect("core node"))
            .expect("scaling");
        scale_cols(&mut acc, u.view());
        c.add_elementwise(acc.len());
        acc = mm(acc.view(), kernels.kernel(j, t).view(), c);
    }
    acc
}

/// `A_k`, the transfer matrix of core `k` between the two terminals.
pub(crate) fn sp_transfer(
    kernels: &KernelSet,
    scalings: &ScalingFamily,
    k: usize,
    c: &OpCounter,
) -> Array2<f64> {
    core_between(kernels, scalings, k, 1, kernels.structure().snapshots(), c)
}

/// `⊙_{k ≠ skip} A_k`; all ones when nothing remains.
pub(crate) fn hadamard_except<'m>(
    mats: impl IntoIterator<Item = (usize, &'m Array2<f64>)>,
    skip: Option<usize>,
    shape: (usize, usize),
    c: &OpCounter,
) -> Array2<f64> {
    let mut g = Array2::ones(shape);
    for (k, a) in mats {
        if Some(k) != skip {
            g *= a;
            c.add_elementwise(g.len());
        }
    }
    g
}

pub(super) struct PairShape {
    pub core: usize,
    /// Snapshot of the earlier node of the pair.
    pub sigma: usize,
    pub reversed: bool,
}

/// Consecutive-in-core pairs `(node_for(j,σ), node_for(j,σ+1))`, in either order.
pub(super) fn pair_shape(st: &GraphStructure, first: NodeId, second: NodeId) -> Option<PairShape> {
    let s = st.snapshots();
    let interior = |n: NodeId| n.snapshot > 1 && n.snapshot < s;
    for (a, b, reversed) in [(first, second, false), (second, first, true)] {
        if b.snapshot != a.snapshot + 1 {
            continue;
        }
        let core = if interior(a) {
            a.core
        } else if interior(b) {
            b.core
        } else {
            1
        };
        if st.node_for(core, a.snapshot) == Some(a) && st.node_for(core, b.snapshot) == Some(b) {
            return Some(PairShape {
                core,
                sigma: a.snapshot,
                reversed,
            });
        }
    }
    None
}

impl ProjectionWorkspace<'_> {
    pub(crate) fn sp_a(&self, k: usize) -> &Array2<f64> {
        self.sp_a[k - 1].get_or_init(|| sp_transfer(self.kernels, &self.scalings, k, &self.counter))
    }

    fn terminal_shape(&self) -> (usize, usize) {
        let s = self.structure().snapshots();
        (
            self.u(NodeId::new(1, 1)).len(),
            self.u(NodeId::new(1, s)).len(),
        )
    }

    /// `⊙_{k ≠ skip} A_k`.
    fn sp_gather(&self, skip: Option<usize>) -> Array2<f64> {
        let cores = self.structure().cores();
        hadamard_except(
            (1..=cores).map(|k| (k, self.sp_a(k))),
            skip,
            self.terminal_shape(),
            &self.counter,
        )
    }

    fn between(&self, j: usize, t1: usize, t2: usize) -> Array2<f64> {
        core_between(self.kernels, &self.scalings, j, t1, t2, &self.counter)
    }

    /// Unimarginal projection for the series-parallel structure.
    pub fn sp_proj(&self, j: usize, sigma: usize) -> Result<Array1<f64>> {
        self.require("sp_proj", "series-parallel")?;
        let st = *self.structure();
        let node = NodeId::new(j, sigma);
        check_snapshot(&st, node)?;
        let s = st.snapshots();
        let c = &self.counter;
        let u1 = self.u(NodeId::new(1, 1));
        let us = self.u(NodeId::new(1, s));
        if sigma == 1 {
            let g = self.sp_gather(None);
            return Ok(hadamard(u1, &mv(&g, us.view(), c), c));
        }
        if sigma == s {
            let g = self.sp_gather(None);
            return Ok(hadamard(us, &mtv(&g, u1.view(), c), c));
        }
        let mut w = self.sp_gather(Some(j));
        scale_rows(&mut w, u1.view());
        scale_cols(&mut w, us.view());
        c.add_elementwise(2 * w.len());
        let left = self.between(j, 1, sigma);
        let right = self.between(j, sigma, s);
        let split = mm(w.view(), right.t(), c);
        Ok(hadamard(self.u(node), &column_dot(&left, &split, c), c))
    }

    /// Bimarginal projection on a pair that is consecutive along one core chain.
    pub fn sp_proj2(&self, first: NodeId, second: NodeId) -> Result<Array2<f64>> {
        self.require("sp_proj2", "series-parallel")?;
        let st = *self.structure();
        check_snapshot(&st, first)?;
        check_snapshot(&st, second)?;
        let PairShape {
            core: j,
            sigma,
            reversed,
        } = pair_shape(&st, first, second).ok_or(Error::UnsupportedPair(first, second))?;
        let s = st.snapshots();
        let c = &self.counter;
        let x = st.node_for(j, sigma).expect("pair node");
        let y = st.node_for(j, sigma + 1).expect("pair node");

        let mut w = self.sp_gather(Some(j));
        if sigma > 1 {
            scale_rows(&mut w, self.u(NodeId::new(1, 1)).view());
            c.add_elementwise(w.len());
        }
        if sigma + 1 < s {
            scale_cols(&mut w, self.u(NodeId::new(1, s)).view());
            c.add_elementwise(w.len());
        }
        let t = if sigma > 1 {
            mm(self.between(j, 1, sigma).t(), w.view(), c)
        } else {
            w
        };
        let t = if sigma + 1 < s {
            mm(t.view(), self.between(j, sigma + 1, s).t(), c)
        } else {
            t
        };
        let mut m = self.kernels.kernel(j, sigma).clone();
        Zip::from(&mut m).and(&t).for_each(|a, &b| *a *= b);
        scale_rows(&mut m, self.u(x).view());
        scale_cols(&mut m, self.u(y).view());
        c.add_elementwise(3 * m.len());
        Ok(if reversed { transposed(m) } else { m })
    }
}

use ndarray::{Array1, Array2};

use super::{check_snapshot, Chain, ProjectionWorkspace};
use crate::error::{Error, Result};
use crate::kernel::KernelSet;
use crate::linalg::{hadamard, mtv, mv, scale_cols, scale_rows, transposed, OpCounter};
use crate::model::{NodeId, ScalingFamily};

/// `p_σ = u⁰_σ ⊙ ⊙_j K^{j,σ} u^j_σ`: everything the spokes at `σ` feed into the barycenter.
pub(crate) fn bc_potential(
    kernels: &KernelSet,
    scalings: &ScalingFamily,
    sigma: usize,
    c: &OpCounter,
) -> Array1<f64> {
    let mut p = scalings
        .get(NodeId::new(0, sigma))
        .expect("barycenter node")
        .clone();
    for j in 1..=kernels.structure().cores() {
        let u = scalings.get(NodeId::new(j, sigma)).expect("spoke node");
        let v = mv(kernels.kernel(j, sigma), u.view(), c);
        p = hadamard(&p, &v, c);
    }
    p
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(super) enum PairShape {
    /// Two barycenter nodes `(0,σ1)`, `(0,σ2)`.
    Chain,
    /// A barycenter node and a spoke at the same snapshot.
    Spoke,
}

pub(super) fn pair_shape(first: NodeId, second: NodeId) -> Option<PairShape> {
    match (first.core, second.core) {
        (0, 0) if first.snapshot != second.snapshot => Some(PairShape::Chain),
        (0, j) | (j, 0) if j > 0 && first.snapshot == second.snapshot => Some(PairShape::Spoke),
        _ => None,
    }
}

impl ProjectionWorkspace<'_> {
    pub(crate) fn bc_p(&self, sigma: usize) -> &Array1<f64> {
        self.bc_p[sigma - 1]
            .get_or_init(|| bc_potential(self.kernels, &self.scalings, sigma, &self.counter))
    }

    fn bc_chain(&self) -> Chain<'_> {
        let s = self.structure().snapshots();
        Chain {
            kernels: (1..s).map(|t| self.kernels.kernel(0, t)).collect(),
            pots: (1..=s).map(|t| self.bc_p(t)).collect(),
        }
    }

    /// `fwd ⊙ bwd ⊙ p_σ ⊘ (K^{j,σ} u^j_σ)`: the barycenter-side weight seen by spoke `(j,σ)`.
    fn spoke_weight(&self, chain: &Chain<'_>, j: usize, sigma: usize) -> Array1<f64> {
        let c = &self.counter;
        let f = chain.forward(sigma - 1, c);
        let b = chain.backward(sigma - 1, c);
        let v = mv(
            self.kernels.kernel(j, sigma),
            self.u(NodeId::new(j, sigma)).view(),
            c,
        );
        let mut r = hadamard(&hadamard(&f, &b, c), chain.pots[sigma - 1], c);
        r /= &v;
        c.add_elementwise(r.len());
        r
    }

    /// Unimarginal projection for the barycentric structure; `j = 0` is the barycenter.
    pub fn bc_proj(&self, j: usize, sigma: usize) -> Result<Array1<f64>> {
        self.require("bc_proj", "barycentric")?;
        check_snapshot(self.structure(), NodeId::new(j, sigma))?;
        let chain = self.bc_chain();
        if j == 0 {
            return Ok(chain.proj(sigma - 1, &self.counter));
        }
        let r = self.spoke_weight(&chain, j, sigma);
        let k = mtv(self.kernels.kernel(j, sigma), r.view(), &self.counter);
        Ok(hadamard(self.u(NodeId::new(j, sigma)), &k, &self.counter))
    }

    /// Bimarginal projection on a barycenter pair `(0,σ1),(0,σ2)` or a spoke pair
    /// `(0,σ),(j,σ)`, in either order.
    pub fn bc_proj2(&self, first: NodeId, second: NodeId) -> Result<Array2<f64>> {
        self.require("bc_proj2", "barycentric")?;
        check_snapshot(self.structure(), first)?;
        check_snapshot(self.structure(), second)?;
        let shape = pair_shape(first, second).ok_or(Error::UnsupportedPair(first, second))?;
        let chain = self.bc_chain();
        let c = &self.counter;
        match shape {
            PairShape::Chain => {
                let (a, b) = (first.snapshot - 1, second.snapshot - 1);
                Ok(if a < b {
                    chain.proj2(a, b, c)
                } else {
                    transposed(chain.proj2(b, a, c))
                })
            }
            PairShape::Spoke => {
                let spoke = if first.core == 0 { second } else { first };
                let r = self.spoke_weight(&chain, spoke.core, spoke.snapshot);
                let mut m = self.kernels.kernel(spoke.core, spoke.snapshot).clone();
                scale_rows(&mut m, r.view());
                scale_cols(&mut m, self.u(spoke).view());
                c.add_elementwise(2 * m.len());
                Ok(if first.core == 0 { m } else { transposed(m) })
            }
        }
    }
}

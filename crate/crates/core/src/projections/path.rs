use ndarray::{Array1, Array2};

use super::{check_snapshot, Chain, ProjectionWorkspace};
use crate::error::{Error, Result};
use crate::linalg::transposed;
use crate::model::NodeId;

impl ProjectionWorkspace<'_> {
    fn path_chain(&self) -> Chain<'_> {
        let s = self.structure().snapshots();
        Chain {
            kernels: (1..s).map(|t| self.kernels.kernel(1, t)).collect(),
            pots: (1..=s).map(|t| self.u(NodeId::new(1, t))).collect(),
        }
    }

    /// `proj_σ(K ⊙ U)` for a path. Costs `s - 1` matrix-vector products.
    pub fn path_proj(&self, sigma: usize) -> Result<Array1<f64>> {
        self.require("path_proj", "path")?;
        check_snapshot(self.structure(), NodeId::new(1, sigma))?;
        Ok(self.path_chain().proj(sigma - 1, &self.counter))
    }

    /// `proj_{σ1,σ2}(K ⊙ U)` for a path; the transpose is returned when `σ1 > σ2`.
    pub fn path_proj2(&self, sigma1: usize, sigma2: usize) -> Result<Array2<f64>> {
        self.require("path_proj2", "path")?;
        let (a, b) = (NodeId::new(1, sigma1), NodeId::new(1, sigma2));
        check_snapshot(self.structure(), a)?;
        check_snapshot(self.structure(), b)?;
        if sigma1 == sigma2 {
            return Err(Error::UnsupportedPair(a, b));
        }
        let chain = self.path_chain();
        if sigma1 < sigma2 {
            Ok(chain.proj2(sigma1 - 1, sigma2 - 1, &self.counter))
        } else {
            Ok(transposed(chain.proj2(
                sigma2 - 1,
                sigma1 - 1,
                &self.counter,
            )))
        }
    }
}

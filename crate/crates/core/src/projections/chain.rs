//! Forward/backward message passing along a chain `x_1 - K_1 - x_2 - ... - x_m`
//! with a potential vector on every node.

use ndarray::{Array1, Array2};

use crate::linalg::{hadamard, mm, mtv, mv, scale_cols, scale_rows, OpCounter};

pub(crate) struct Chain<'k> {
    pub kernels: Vec<&'k Array2<f64>>,
    pub pots: Vec<&'k Array1<f64>>,
}

impl Chain<'_> {
    pub fn len(&self) -> usize {
        self.pots.len()
    }

    /// Message reaching node `i` from the left, excluding `pots[i]`.
    pub fn forward(&self, i: usize, c: &OpCounter) -> Array1<f64> {
        if i == 0 {
            return Array1::ones(self.pots[0].len());
        }
        let mut x = self.pots[0].clone();
        for k in 0..i {
            let y = mtv(self.kernels[k], x.view(), c);
            if k + 1 == i {
                return y;
            }
            x = hadamard(&y, self.pots[k + 1], c);
        }
        unreachable!()
    }

    /// Message reaching node `i` from the right, excluding `pots[i]`.
    pub fn backward(&self, i: usize, c: &OpCounter) -> Array1<f64> {
        let last = self.len() - 1;
        if i == last {
            return Array1::ones(self.pots[last].len());
        }
        let mut x = self.pots[last].clone();
        for k in (i..last).rev() {
            let y = mv(self.kernels[k], x.view(), c);
            if k == i {
                return y;
            }
            x = hadamard(&y, self.pots[k], c);
        }
        unreachable!()
    }

    pub fn proj(&self, i: usize, c: &OpCounter) -> Array1<f64> {
        let f = self.forward(i, c);
        let b = self.backward(i, c);
        hadamard(&hadamard(&f, self.pots[i], c), &b, c)
    }

    /// `K_i diag(pots[i+1]) K_{i+1} ... K_{j-1}` for `i < j`.
    pub fn between(&self, i: usize, j: usize, c: &OpCounter) -> Array2<f64> {
        let mut acc = self.kernels[i].clone();
        for k in i + 1..j {
            scale_cols(&mut acc, self.pots[k].view());
            c.add_elementwise(acc.len());
            acc = mm(acc.view(), self.kernels[k].view(), c);
        }
        acc
    }

    /// Bimarginal on nodes `i < j`.
    pub fn proj2(&self, i: usize, j: usize, c: &OpCounter) -> Array2<f64> {
        let left = hadamard(&self.forward(i, c), self.pots[i], c);
        let right = hadamard(&self.backward(j, c), self.pots[j], c);
        let mut m = self.between(i, j, c);
        scale_rows(&mut m, left.view());
        scale_cols(&mut m, right.view());
        c.add_elementwise(2 * m.len());
        m
    }
}

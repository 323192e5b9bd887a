//! Counted dense kernels used by the structured projections.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

/// Operation tallies. `flops` counts multiply-adds of matrix-vector products and
/// elementwise vector operations; `chain_flops` counts the cubic matrix-chain
/// products that build cached transfer matrices.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub matvecs: u64,
    pub flops: u64,
    pub matmuls: u64,
    pub chain_flops: u64,
}

#[derive(Debug, Default)]
pub struct OpCounter {
    matvecs: AtomicU64,
    flops: AtomicU64,
    matmuls: AtomicU64,
    chain_flops: AtomicU64,
}

impl OpCounter {
    pub fn snapshot(&self) -> OpCounts {
        OpCounts {
            matvecs: self.matvecs.load(Ordering::Relaxed),
            flops: self.flops.load(Ordering::Relaxed),
            matmuls: self.matmuls.load(Ordering::Relaxed),
            chain_flops: self.chain_flops.load(Ordering::Relaxed),
        }
    }

    pub fn reset(&self) {
        self.matvecs.store(0, Ordering::Relaxed);
        self.flops.store(0, Ordering::Relaxed);
        self.matmuls.store(0, Ordering::Relaxed);
        self.chain_flops.store(0, Ordering::Relaxed);
    }

    fn add_matvec(&self, rows: usize, cols: usize) {
        self.matvecs.fetch_add(1, Ordering::Relaxed);
        self.flops
            .fetch_add((rows * cols) as u64, Ordering::Relaxed);
    }

    pub(crate) fn add_elementwise(&self, len: usize) {
        self.flops.fetch_add(len as u64, Ordering::Relaxed);
    }

    fn add_matmul(&self, m: usize, k: usize, n: usize) {
        self.matmuls.fetch_add(1, Ordering::Relaxed);
        self.chain_flops
            .fetch_add((m as u64) * (k as u64) * (n as u64), Ordering::Relaxed);
    }
}

/// `K x`
pub(crate) fn mv(k: &Array2<f64>, x: ArrayView1<'_, f64>, c: &OpCounter) -> Array1<f64> {
    c.add_matvec(k.nrows(), k.ncols());
    k.dot(&x)
}

/// `Kᵀ x`
pub(crate) fn mtv(k: &Array2<f64>, x: ArrayView1<'_, f64>, c: &OpCounter) -> Array1<f64> {
    c.add_matvec(k.nrows(), k.ncols());
    // accumulate scaled rows so row-major kernels stream contiguously
    let mut y = Array1::zeros(k.ncols());
    for (row, &xi) in k.rows().into_iter().zip(x.iter()) {
        y.scaled_add(xi, &row);
    }
    y
}

pub(crate) fn mm(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, c: &OpCounter) -> Array2<f64> {
    c.add_matmul(a.nrows(), a.ncols(), b.ncols());
    a.dot(&b)
}

pub(crate) fn hadamard(a: &Array1<f64>, b: &Array1<f64>, c: &OpCounter) -> Array1<f64> {
    c.add_elementwise(a.len());
    a * b
}

/// `diag(d) A`
pub(crate) fn scale_rows(a: &mut Array2<f64>, d: ArrayView1<'_, f64>) {
    Zip::from(a.rows_mut())
        .and(&d)
        .for_each(|mut row, &s| row *= s);
}

/// `A diag(d)`
pub(crate) fn scale_cols(a: &mut Array2<f64>, d: ArrayView1<'_, f64>) {
    for mut row in a.axis_iter_mut(Axis(0)) {
        row *= &d;
    }
}

/// Column-wise `Σ_a L[a,x] S[a,x]`.
pub(crate) fn column_dot(l: &Array2<f64>, s: &Array2<f64>, c: &OpCounter) -> Array1<f64> {
    c.add_elementwise(l.len());
    let mut out = Array1::zeros(l.ncols());
    Zip::from(l.rows()).and(s.rows()).for_each(|lr, sr| {
        Zip::from(&mut out)
            .and(&lr)
            .and(&sr)
            .for_each(|o, &a, &b| *o += a * b);
    });
    out
}

/// Owned transpose in standard (row-major) layout.
pub(crate) fn transposed(a: Array2<f64>) -> Array2<f64> {
    a.t().as_standard_layout().into_owned()
}

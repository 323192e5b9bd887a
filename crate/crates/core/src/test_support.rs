use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{GraphStructure, Marginal, MarginalSet};
use crate::sinkhorn::SolverConfig;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random weighted clouds in the unit square; node `(j,σ)` sits at time `σ - 1`.
pub fn random_marginals(st: GraphStructure, n: usize, rng: &mut ChaCha8Rng) -> MarginalSet {
    let ms = st.nodes().into_iter().map(|node| {
        let size = match st {
            GraphStructure::Barycentric { bary_support, .. } if node.core == 0 => bary_support,
            _ => n,
        };
        let pts = Array2::from_shape_fn((size, 2), |_| rng.random_range(0.0..1.0));
        let w = Array1::from_shape_fn(size, |_| rng.random_range(0.2..1.0));
        Marginal::from_masses(pts, w, node, (node.snapshot - 1) as f64).unwrap()
    });
    MarginalSet::new(st, ms).unwrap()
}

pub fn config(epsilon: f64, tolerance: f64) -> SolverConfig {
    SolverConfig {
        epsilon,
        tolerance,
        max_iterations: 20_000,
        normalize_costs: true,
    }
}

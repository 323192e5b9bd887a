//! Multimarginal Sinkhorn: `u ← u ⊙ μ ⊘ proj(K ⊙ U)` swept over the index set
//! in canonical order, one full sweep per iteration.

use std::io::Write;
use std::time::Instant;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::hilbert_metric;
use crate::kernel::KernelSet;
use crate::linalg::{column_dot, mm, mtv, mv, scale_cols, scale_rows, OpCounter};
use crate::model::{GraphStructure, MarginalSet, NodeId, ScalingFamily};
use crate::oracle::{
    apply_scalings, assemble_kernel_tensor, brute_objective, cost_tensor_from_kernel,
};
use crate::projections::{hadamard_except, sp_transfer, ProjectionWorkspace};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub epsilon: f64,
    /// Stop once the largest Hilbert distance moved by any scaling in a sweep is at most this.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub normalize_costs: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            tolerance: 1e-10,
            max_iterations: 10_000,
            normalize_costs: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::invalid(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(Error::invalid(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations must be at least 1"));
        }
        Ok(())
    }
}

/// The converged (or last) scalings together with everything needed to query `K ⊙ U`.
#[derive(Clone, Debug)]
pub struct BridgeSolution {
    marginals: MarginalSet,
    kernels: KernelSet,
    scalings: ScalingFamily,
    config: SolverConfig,
    convergence_log: Vec<f64>,
    converged: bool,
    wall_time: f64,
}

impl BridgeSolution {
    /// Reassembles a solution from stored parts. The kernels must match the marginals.
    pub fn from_parts(
        marginals: MarginalSet,
        kernels: KernelSet,
        scalings: ScalingFamily,
        config: SolverConfig,
        convergence_log: Vec<f64>,
        converged: bool,
        wall_time: f64,
    ) -> Result<Self> {
        if marginals.structure() != kernels.structure()
            || scalings.structure() != kernels.structure()
        {
            return Err(Error::invalid(
                "marginals, kernels and scalings disagree on the structure",
            ));
        }
        ProjectionWorkspace::new(&kernels, &scalings)?;
        Ok(Self {
            marginals,
            kernels,
            scalings,
            config,
            convergence_log,
            converged,
            wall_time,
        })
    }

    pub fn structure(&self) -> &GraphStructure {
        self.marginals.structure()
    }

    pub fn marginals(&self) -> &MarginalSet {
        &self.marginals
    }

    pub fn kernels(&self) -> &KernelSet {
        &self.kernels
    }

    pub fn scalings(&self) -> &ScalingFamily {
        &self.scalings
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn convergence_log(&self) -> &[f64] {
        &self.convergence_log
    }

    /// Number of full sweeps performed.
    pub fn iterations(&self) -> usize {
        self.convergence_log.len()
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    /// Solve time in seconds.
    pub fn wall_time(&self) -> f64 {
        self.wall_time
    }

    pub fn workspace(&self) -> ProjectionWorkspace<'_> {
        ProjectionWorkspace::new(&self.kernels, &self.scalings).expect("validated at construction")
    }

    /// L1 distance between each mass-normalized projection and its prescribed weights.
    pub fn feasibility_residuals(&self) -> Result<Vec<(NodeId, f64)>> {
        let ws = self.workspace();
        self.structure()
            .nodes()
            .into_iter()
            .map(|node| {
                let p = ws.proj(node)?;
                let mass = p.sum();
                let mu = self.marginals.get(node).expect("node present").weights();
                let l1 = p
                    .iter()
                    .zip(mu.iter())
                    .map(|(a, b)| (a / mass - b).abs())
                    .sum();
                Ok((node, l1))
            })
            .collect()
    }

    pub fn max_residual(&self) -> Result<f64> {
        Ok(self
            .feasibility_residuals()?
            .into_iter()
            .map(|(_, r)| r)
            .fold(0.0, f64::max))
    }

    /// Writes the convergence log as `iteration,d_hilbert`.
    pub fn write_convergence_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "d_hilbert"])?;
        for (i, d) in converge_metrics(self) {
            w.write_record([i.to_string(), format!("{d:e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Builds kernels from the marginals and runs Sinkhorn to `config.tolerance`.
///
/// Running out of iterations is not an error: the result has `converged() == false`.
pub fn solve(marginals: &MarginalSet, config: &SolverConfig) -> Result<BridgeSolution> {
    config.validate()?;
    let kernels = KernelSet::build(marginals, config.epsilon, config.normalize_costs)?;
    solve_with_kernels(marginals, kernels, config)
}

/// Like [`solve`] with caller-supplied kernels (the ε in `config` is then only recorded).
pub fn solve_with_kernels(
    marginals: &MarginalSet,
    kernels: KernelSet,
    config: &SolverConfig,
) -> Result<BridgeSolution> {
    config.validate()?;
    if marginals.structure() != kernels.structure() {
        return Err(Error::invalid(
            "kernels were built for a different structure",
        ));
    }
    let sizes = kernels.node_sizes();
    for (m, &n) in marginals.iter().zip(&sizes) {
        if m.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "marginal {} has {} points, kernels expect {n}",
                m.label(),
                m.len()
            )));
        }
        if m.weights().iter().any(|&w| w <= 0.0) {
            return Err(Error::invalid(format!(
                "marginal {} has a zero weight; drop zero-mass points before solving",
                m.label()
            )));
        }
    }
    let start = Instant::now();
    let mu: Vec<&Array1<f64>> = marginals.iter().map(|m| m.weights()).collect();
    let mut u: Vec<Array1<f64>> = sizes.iter().map(|&n| Array1::ones(n)).collect();
    let mut sweeper = Sweeper::new(&kernels, &u);
    let mut log = Vec::new();
    let mut converged = false;
    for it in 0..config.max_iterations {
        let d = sweeper.sweep(&kernels, &mu, &mut u)?;
        log.push(d);
        log::trace!("sweep {} d_H = {d:e}", it + 1);
        if d <= config.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "no convergence after {} sweeps; last d_H = {:e}",
            config.max_iterations,
            log.last().copied().unwrap_or(f64::NAN)
        );
    }
    let scalings = ScalingFamily::from_vectors(*kernels.structure(), u)
        .map_err(|e| Error::Internal(format!("scalings left the positive orthant: {e}")))?;
    BridgeSolution::from_parts(
        marginals.clone(),
        kernels,
        scalings,
        config.clone(),
        log,
        converged,
        start.elapsed().as_secs_f64(),
    )
}

/// `u_new = μ ⊘ (proj ⊘ u_old)`, returning the Hilbert distance moved.
fn update(
    u: &mut Array1<f64>,
    mu: &Array1<f64>,
    divisor: &Array1<f64>,
    node: NodeId,
) -> Result<f64> {
    let new = mu / divisor;
    if new.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(Error::Internal(format!(
            "Sinkhorn update at {node} produced a non-positive or non-finite scaling"
        )));
    }
    let d = hilbert_metric(new.view(), u.view())?;
    *u = new;
    Ok(d)
}

fn axis(st: &GraphStructure, node: NodeId) -> usize {
    st.axis(node).expect("node in index set")
}

/// Per-structure sweep state. The barycentric sweep keeps `K^{j,σ} u^j_σ`, the
/// series-parallel sweep keeps each core's transfer matrix `A_k`.
enum Sweeper {
    Path,
    Barycentric { v: Vec<Vec<Array1<f64>>> },
    SeriesParallel { a: Vec<Array2<f64>> },
}

impl Sweeper {
    fn new(kernels: &KernelSet, u: &[Array1<f64>]) -> Self {
        let st = *kernels.structure();
        let c = OpCounter::default();
        match st {
            GraphStructure::Path { .. } => Self::Path,
            GraphStructure::Barycentric {
                cores, snapshots, ..
            } => Self::Barycentric {
                v: (1..=cores)
                    .map(|j| {
                        (1..=snapshots)
                            .map(|t| {
                                mv(
                                    kernels.kernel(j, t),
                                    u[axis(&st, NodeId::new(j, t))].view(),
                                    &c,
                                )
                            })
                            .collect()
                    })
                    .collect(),
            },
            GraphStructure::SeriesParallel { cores, .. } => {
                let sc = ScalingFamily::from_vectors(st, u.to_vec()).expect("initial scalings");
                Self::SeriesParallel {
                    a: (1..=cores)
                        .map(|k| sp_transfer(kernels, &sc, k, &c))
                        .collect(),
                }
            }
        }
    }

    fn sweep(
        &mut self,
        kernels: &KernelSet,
        mu: &[&Array1<f64>],
        u: &mut [Array1<f64>],
    ) -> Result<f64> {
        match self {
            Self::Path => path_sweep(kernels, mu, u),
            Self::Barycentric { v } => bc_sweep(kernels, mu, u, v),
            Self::SeriesParallel { a } => sp_sweep(kernels, mu, u, a),
        }
    }
}

fn path_sweep(kernels: &KernelSet, mu: &[&Array1<f64>], u: &mut [Array1<f64>]) -> Result<f64> {
    let s = u.len();
    let c = OpCounter::default();
    // bwd[k] is the message into node k from the right
    let mut bwd = vec![Array1::ones(u[s - 1].len()); s];
    for k in (0..s - 1).rev() {
        bwd[k] = mv(
            kernels.kernel(1, k + 1),
            (&u[k + 1] * &bwd[k + 1]).view(),
            &c,
        );
    }
    let mut fwd = Array1::ones(u[0].len());
    let mut dmax = 0.0_f64;
    for k in 0..s {
        let d = update(&mut u[k], mu[k], &(&fwd * &bwd[k]), NodeId::new(1, k + 1))?;
        dmax = dmax.max(d);
        if k + 1 < s {
            fwd = mtv(kernels.kernel(1, k + 1), (&fwd * &u[k]).view(), &c);
        }
    }
    Ok(dmax)
}

fn bc_sweep(
    kernels: &KernelSet,
    mu: &[&Array1<f64>],
    u: &mut [Array1<f64>],
    v: &mut [Vec<Array1<f64>>],
) -> Result<f64> {
    let st = *kernels.structure();
    let s = st.snapshots();
    let cores = st.cores();
    let c = OpCounter::default();
    let ax = |j: usize, t: usize| axis(&st, NodeId::new(j, t));
    // product of K^{j,t} u^j_t over the spokes other than `skip`
    let spokes = |v: &[Vec<Array1<f64>>], t: usize, skip: usize| {
        let mut q = Array1::ones(v[0][t - 1].len());
        for (j, vj) in v.iter().enumerate() {
            if j + 1 != skip {
                q *= &vj[t - 1];
            }
        }
        q
    };
    let chain_bwd = |p: &[Array1<f64>]| {
        let mut bwd = vec![Array1::ones(p[s - 1].len()); s];
        for k in (0..s - 1).rev() {
            bwd[k] = mv(
                kernels.kernel(0, k + 1),
                (&p[k + 1] * &bwd[k + 1]).view(),
                &c,
            );
        }
        bwd
    };

    let mut dmax = 0.0_f64;
    let mut p: Vec<Array1<f64>> = (1..=s).map(|t| &u[ax(0, t)] * &spokes(v, t, 0)).collect();

    // barycenter chain
    let bwd = chain_bwd(&p);
    let mut fwd = Array1::ones(p[0].len());
    for t in 1..=s {
        let rest = spokes(v, t, 0);
        let div = &(&fwd * &bwd[t - 1]) * &rest;
        let d = update(&mut u[ax(0, t)], mu[ax(0, t)], &div, NodeId::new(0, t))?;
        dmax = dmax.max(d);
        p[t - 1] = &u[ax(0, t)] * &rest;
        if t < s {
            fwd = mtv(kernels.kernel(0, t), (&fwd * &p[t - 1]).view(), &c);
        }
    }

    // spokes, one core at a time
    for j in 1..=cores {
        let bwd = chain_bwd(&p);
        let mut fwd = Array1::ones(p[0].len());
        for t in 1..=s {
            let r = &(&(&fwd * &bwd[t - 1]) * &u[ax(0, t)]) * &spokes(v, t, j);
            let k = kernels.kernel(j, t);
            let div = mtv(k, r.view(), &c);
            let node = NodeId::new(j, t);
            let d = update(&mut u[ax(j, t)], mu[ax(j, t)], &div, node)?;
            dmax = dmax.max(d);
            v[j - 1][t - 1] = mv(k, u[ax(j, t)].view(), &c);
            p[t - 1] = &u[ax(0, t)] * &spokes(v, t, 0);
            if t < s {
                fwd = mtv(kernels.kernel(0, t), (&fwd * &p[t - 1]).view(), &c);
            }
        }
    }
    Ok(dmax)
}

fn sp_sweep(
    kernels: &KernelSet,
    mu: &[&Array1<f64>],
    u: &mut [Array1<f64>],
    a: &mut [Array2<f64>],
) -> Result<f64> {
    let st = *kernels.structure();
    let s = st.snapshots();
    let cores = st.cores();
    let c = OpCounter::default();
    let first = 0;
    let last = st.cardinality() - 1;
    let shape = (u[first].len(), u[last].len());
    let gather = |a: &[Array2<f64>], skip: Option<usize>| {
        hadamard_except(
            a.iter().enumerate().map(|(k, m)| (k + 1, m)),
            skip,
            shape,
            &c,
        )
    };
    let mut dmax = 0.0_f64;

    let g = gather(a, None);
    let div = mv(&g, u[last].view(), &c);
    dmax = dmax.max(update(&mut u[first], mu[first], &div, NodeId::new(1, 1))?);

    for j in 1..=cores {
        if s == 2 {
            break;
        }
        let ax = |t: usize| axis(&st, NodeId::new(j, t));
        let mut w = gather(a, Some(j));
        scale_rows(&mut w, u[first].view());
        scale_cols(&mut w, u[last].view());
        // split[t] = W R_tᵀ, with R_t the chain from node t to the output terminal
        let mut split = vec![Array2::zeros((0, 0)); s];
        split[s - 2] = mm(w.view(), kernels.kernel(j, s - 1).t(), &c);
        for t in (2..s - 1).rev() {
            let mut m = split[t].clone();
            scale_cols(&mut m, u[ax(t + 1)].view());
            split[t - 1] = mm(m.view(), kernels.kernel(j, t).t(), &c);
        }
        let mut left = kernels.kernel(j, 1).clone();
        for t in 2..s {
            let div = column_dot(&left, &split[t - 1], &c);
            let d = update(&mut u[ax(t)], mu[ax(t)], &div, NodeId::new(j, t))?;
            dmax = dmax.max(d);
            scale_cols(&mut left, u[ax(t)].view());
            left = mm(left.view(), kernels.kernel(j, t).view(), &c);
        }
        a[j - 1] = left;
    }

    let g = gather(a, None);
    let div = mtv(&g, u[first].view(), &c);
    dmax = dmax.max(update(&mut u[last], mu[last], &div, NodeId::new(1, s))?);
    Ok(dmax)
}

/// Primal objective `⟨C + ε log M, M⟩` of `M = K ⊙ U`, in normalized cost units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveValue {
    pub objective: f64,
    /// Total mass of `M`; the objective is reported for `M` as is.
    pub mass: f64,
}

/// Dense evaluation of the primal objective. Only available below the oracle size cap.
pub fn evaluate_objective(solution: &BridgeSolution, cap: usize) -> Result<ObjectiveValue> {
    let k = assemble_kernel_tensor(solution.kernels(), cap)?;
    let eps = solution.kernels().epsilon();
    let cost = cost_tensor_from_kernel(&k, eps);
    let m = apply_scalings(&k, solution.scalings())?;
    Ok(ObjectiveValue {
        objective: brute_objective(&m, &cost, eps)?,
        mass: m.total(),
    })
}

/// The logged `(iteration, d_H)` series, iterations counted from 1.
pub fn converge_metrics(solution: &BridgeSolution) -> Vec<(usize, f64)> {
    solution
        .convergence_log()
        .iter()
        .enumerate()
        .map(|(i, &d)| (i + 1, d))
        .collect()
}

#[cfg(test)]
mod tests;

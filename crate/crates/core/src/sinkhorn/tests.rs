use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::model::{EdgeKey, Marginal};
use crate::oracle::DEFAULT_ENTRY_CAP;

fn random_marginals(st: GraphStructure, n: usize, rng: &mut ChaCha8Rng) -> MarginalSet {
    let ms = st.nodes().into_iter().map(|node| {
        let size = match st {
            GraphStructure::Barycentric { bary_support, .. } if node.core == 0 => bary_support,
            _ => n,
        };
        let pts = Array2::from_shape_fn((size, 2), |_| rng.random_range(0.0..1.0));
        let w = Array1::from_shape_fn(size, |_| rng.random_range(0.2..1.0));
        Marginal::from_masses(pts, w, node, node.snapshot as f64).unwrap()
    });
    MarginalSet::new(st, ms).unwrap()
}

fn config(eps: f64, tol: f64) -> SolverConfig {
    SolverConfig {
        epsilon: eps,
        tolerance: tol,
        max_iterations: 20_000,
        normalize_costs: true,
    }
}

/// Reference sweep through the generic workspace projections.
fn generic_sweeps(ks: &KernelSet, ms: &MarginalSet, sweeps: usize) -> ScalingFamily {
    let mut ws = ProjectionWorkspace::owned(ks, ScalingFamily::ones(ms)).unwrap();
    for _ in 0..sweeps {
        for node in ks.structure().nodes() {
            let p = ws.proj(node).unwrap();
            let u = ws.scalings().get(node).unwrap() * ms.get(node).unwrap().weights() / &p;
            ws.set_scaling(node, u).unwrap();
        }
    }
    ws.into_scalings()
}

#[test]
fn specialized_sweeps_match_generic_projections() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for st in [
        GraphStructure::path(4).unwrap(),
        GraphStructure::barycentric(2, 3, 2).unwrap(),
        GraphStructure::barycentric(3, 2, 3).unwrap(),
        GraphStructure::series_parallel(2, 4).unwrap(),
        GraphStructure::series_parallel(3, 2).unwrap(),
        GraphStructure::series_parallel(1, 3).unwrap(),
    ] {
        let ms = random_marginals(st, 3, &mut rng);
        let cfg = SolverConfig {
            max_iterations: 3,
            tolerance: 1e-300,
            ..config(0.5, 1e-12)
        };
        let fast = solve(&ms, &cfg).unwrap();
        assert!(!fast.converged());
        assert_eq!(fast.iterations(), 3);
        let slow = generic_sweeps(fast.kernels(), &ms, 3);
        for (a, b) in fast.scalings().vectors().iter().zip(slow.vectors()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() <= 1e-11 * y.abs(), "{st:?}: {x} vs {y}");
            }
        }
    }
}

#[test]
fn zero_cost_gives_product_coupling_in_two_sweeps() {
    let st = GraphStructure::path(2).unwrap();
    let pts = Array2::zeros((4, 1));
    let m1 = Marginal::from_masses(
        pts.clone(),
        ndarray::array![1.0, 2.0, 3.0, 4.0],
        NodeId::new(1, 1),
        0.0,
    )
    .unwrap();
    let m2 = Marginal::from_masses(
        pts,
        ndarray::array![4.0, 1.0, 1.0, 4.0],
        NodeId::new(1, 2),
        1.0,
    )
    .unwrap();
    let ms = MarginalSet::new(st, [m1.clone(), m2.clone()]).unwrap();
    let sol = solve(&ms, &config(0.1, 1e-12)).unwrap();
    assert!(sol.converged());
    assert!(sol.iterations() <= 2);
    let m = sol.workspace().path_proj2(1, 2).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            assert!((m[[i, j]] - m1.weights()[i] * m2.weights()[j]).abs() < 1e-15);
        }
    }
}

/// Textbook two-marginal Sinkhorn, written independently of the solver.
fn classical_sinkhorn(
    k: &Array2<f64>,
    a: &Array1<f64>,
    b: &Array1<f64>,
    iters: usize,
) -> Array2<f64> {
    let mut u = Array1::<f64>::ones(a.len());
    let mut v = Array1::<f64>::ones(b.len());
    for _ in 0..iters {
        u = a / &k.dot(&v);
        v = b / &k.t().dot(&u);
    }
    Array2::from_shape_fn(k.dim(), |(i, j)| u[i] * k[[i, j]] * v[j])
}

#[test]
fn two_marginal_path_is_classical_sinkhorn() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let st = GraphStructure::path(2).unwrap();
    for _ in 0..5 {
        let ms = random_marginals(st, 4, &mut rng);
        let sol = solve(&ms, &config(0.2, 1e-14)).unwrap();
        assert!(sol.converged());
        let m = sol.workspace().path_proj2(1, 2).unwrap();
        let want = classical_sinkhorn(
            sol.kernels().kernel(1, 1),
            ms.by_axis(0).weights(),
            ms.by_axis(1).weights(),
            sol.iterations(),
        );
        for (x, y) in m.iter().zip(want.iter()) {
            assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
        }
    }
}

#[test]
fn converged_solves_are_feasible() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for st in [
        GraphStructure::path(5).unwrap(),
        GraphStructure::barycentric(2, 3, 4).unwrap(),
        GraphStructure::series_parallel(3, 4).unwrap(),
        GraphStructure::series_parallel(2, 2).unwrap(),
    ] {
        let ms = random_marginals(st, 5, &mut rng);
        let sol = solve(&ms, &config(0.1, 1e-10)).unwrap();
        assert!(sol.converged(), "{st:?}");
        assert!(*sol.convergence_log().last().unwrap() <= 1e-10);
        assert!(sol.max_residual().unwrap() <= 1e-8, "{st:?}");
        // fixed point: a further sweep barely moves
        let again = solve(
            &ms,
            &SolverConfig {
                max_iterations: sol.iterations() + 1,
                tolerance: 1e-300,
                ..config(0.1, 1e-10)
            },
        )
        .unwrap();
        assert!(again.convergence_log().last().unwrap() <= &1e-10);
    }
}

fn independence_gap(ms: &MarginalSet, eps: f64) -> f64 {
    let sol = solve(ms, &config(eps, 1e-13)).unwrap();
    let ws = sol.workspace();
    let mut worst = 0.0_f64;
    for t in 1..ms.structure().snapshots() {
        let m = ws.path_proj2(t, t + 1).unwrap();
        let mass = m.sum();
        let a = ms.by_axis(t - 1).weights();
        let b = ms.by_axis(t).weights();
        let l1: f64 = m
            .indexed_iter()
            .map(|((i, j), x)| (x / mass - a[i] * b[j]).abs())
            .sum();
        worst = worst.max(l1);
    }
    worst
}

#[test]
fn huge_epsilon_approaches_independence() {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let ms = random_marginals(GraphStructure::path(3).unwrap(), 6, &mut rng);
    let g3 = independence_gap(&ms, 1e3);
    let g4 = independence_gap(&ms, 1e4);
    // the gap shrinks like 1/ε
    assert!(g3 <= 1e-3, "{g3}");
    assert!(g4 <= 1e-4, "{g4}");
    assert!((5.0..20.0).contains(&(g3 / g4)), "{g3} / {g4}");
}

#[test]
fn convergence_log_is_deterministic_and_decreasing() {
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let ms = random_marginals(GraphStructure::path(6).unwrap(), 10, &mut rng);
    let a = solve(&ms, &config(0.1, 1e-12)).unwrap();
    let b = solve(&ms, &config(0.1, 1e-12)).unwrap();
    let bits = |s: &BridgeSolution| {
        s.convergence_log()
            .iter()
            .map(|x| x.to_bits())
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&a), bits(&b));
    let log = a.convergence_log();
    let tail = &log[log.len() / 2..];
    assert!(tail.iter().all(|&d| d > 0.0));
    assert!(tail.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(converge_metrics(&a).last().unwrap().0, a.iterations());
}

#[test]
fn convergence_csv_has_header_and_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(67);
    let ms = random_marginals(GraphStructure::path(3).unwrap(), 3, &mut rng);
    let sol = solve(&ms, &config(0.3, 1e-9)).unwrap();
    let mut buf = Vec::new();
    sol.write_convergence_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "iteration,d_hilbert");
    assert_eq!(lines.len(), sol.iterations() + 1);
    assert!(lines[1].starts_with("1,"));
}

#[test]
fn objective_of_uniform_zero_cost() {
    let st = GraphStructure::path(2).unwrap();
    let mut m = BTreeMap::new();
    m.insert(EdgeKey { core: 1, index: 1 }, Array2::ones((2, 3)));
    let ks = KernelSet::from_kernels(st, 0.4, m).unwrap();
    let pts = Array2::zeros((2, 1));
    let ms = MarginalSet::new(
        st,
        [
            Marginal::uniform(pts, NodeId::new(1, 1), 0.0).unwrap(),
            Marginal::uniform(Array2::zeros((3, 1)), NodeId::new(1, 2), 1.0).unwrap(),
        ],
    )
    .unwrap();
    let sol = solve_with_kernels(&ms, ks, &config(0.4, 1e-12)).unwrap();
    let v = evaluate_objective(&sol, DEFAULT_ENTRY_CAP).unwrap();
    assert!((v.mass - 1.0).abs() < 1e-14);
    assert!((v.objective - 0.4 * (1.0_f64 / 6.0).ln()).abs() < 1e-14);
}

#[test]
fn optimum_beats_the_independence_coupling() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for st in [
        GraphStructure::path(3).unwrap(),
        GraphStructure::barycentric(2, 2, 2).unwrap(),
        GraphStructure::series_parallel(2, 3).unwrap(),
    ] {
        let ms = random_marginals(st, 3, &mut rng);
        let sol = solve(&ms, &config(0.2, 1e-13)).unwrap();
        let opt = evaluate_objective(&sol, DEFAULT_ENTRY_CAP).unwrap();
        // product of all marginals is feasible
        let k = assemble_kernel_tensor(sol.kernels(), DEFAULT_ENTRY_CAP).unwrap();
        let cost = cost_tensor_from_kernel(&k, 0.2);
        let weights =
            ScalingFamily::from_vectors(st, ms.iter().map(|m| m.weights().clone()).collect())
                .unwrap();
        let ones = crate::oracle::DenseTensor::new(
            k.labels().to_vec(),
            k.dims().to_vec(),
            vec![1.0; k.values().len()],
        )
        .unwrap();
        let product = apply_scalings(&ones, &weights).unwrap();
        let indep = brute_objective(&product, &cost, 0.2).unwrap();
        assert!(
            opt.objective <= indep + 1e-12,
            "{st:?}: {} > {indep}",
            opt.objective
        );
    }
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| a * (a / b).ln() - a + b).sum()
}

#[test]
fn iterates_approach_the_optimum_in_divergence() {
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    for st in [
        GraphStructure::path(3).unwrap(),
        GraphStructure::barycentric(2, 2, 2).unwrap(),
        GraphStructure::series_parallel(2, 3).unwrap(),
    ] {
        let ms = random_marginals(st, 3, &mut rng);
        let opt = solve(&ms, &config(0.2, 1e-14)).unwrap();
        let k = assemble_kernel_tensor(opt.kernels(), DEFAULT_ENTRY_CAP).unwrap();
        let m_opt = apply_scalings(&k, opt.scalings()).unwrap();
        let mut prev = f64::INFINITY;
        for sweeps in 1..12 {
            let cfg = SolverConfig {
                max_iterations: sweeps,
                tolerance: 1e-300,
                ..config(0.2, 1e-14)
            };
            let it = solve(&ms, &cfg).unwrap();
            let m_k = apply_scalings(&k, it.scalings()).unwrap();
            let d = kl(m_opt.values(), m_k.values());
            assert!(d <= prev + 1e-14, "{st:?} sweep {sweeps}: {d} > {prev}");
            prev = d;
        }
    }
}

#[test]
fn rejects_zero_weight_and_bad_config() {
    let st = GraphStructure::path(2).unwrap();
    let pts = ndarray::array![[0.0], [1.0]];
    let ms = MarginalSet::new(
        st,
        [
            Marginal::new(
                pts.clone(),
                ndarray::array![1.0, 0.0],
                NodeId::new(1, 1),
                0.0,
            )
            .unwrap(),
            Marginal::uniform(pts, NodeId::new(1, 2), 1.0).unwrap(),
        ],
    )
    .unwrap();
    assert!(matches!(
        solve(&ms, &config(0.1, 1e-9)),
        Err(Error::InvalidInput(_))
    ));
    assert!(SolverConfig {
        tolerance: 0.0,
        ..config(0.1, 1e-9)
    }
    .validate()
    .is_err());
    assert!(SolverConfig {
        epsilon: -1.0,
        ..config(0.1, 1e-9)
    }
    .validate()
    .is_err());
}

#[test]
fn unconverged_run_is_reported_not_raised() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let ms = random_marginals(GraphStructure::path(4).unwrap(), 6, &mut rng);
    let cfg = SolverConfig {
        max_iterations: 2,
        ..config(0.01, 1e-14)
    };
    let sol = solve(&ms, &cfg).unwrap();
    assert!(!sol.converged());
    assert_eq!(sol.iterations(), 2);
}

//! Exact 2-Wasserstein distance and discrete KL divergence.

mod simplex;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::kernel::squared_euclidean_cost;
use crate::model::{Marginal, NodeId};

/// Largest tolerated gap between the two total masses.
pub const BALANCE_TOL: f64 = 1e-9;

/// Largest plan (rows × columns) the exact solver accepts, about 2000 × 2000.
pub const MAX_PLAN_ENTRIES: usize = 4_000_000;

fn check_plan_size(m: usize, n: usize) -> Result<()> {
    if m.saturating_mul(n) > MAX_PLAN_ENTRIES {
        return Err(Error::invalid(format!(
            "a {m} x {n} transport plan exceeds the exact solver's {MAX_PLAN_ENTRIES}-entry limit; \
             use fewer runs or a smaller support"
        )));
    }
    Ok(())
}

/// An optimal coupling of two weight vectors under a given cost.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan {
    pub plan: Array2<f64>,
    pub row_marginal: Array1<f64>,
    pub col_marginal: Array1<f64>,
    /// `Σ plan ⊙ cost`.
    pub objective: f64,
}

/// Exact optimal transport between `a` and `b` under `cost` (network simplex).
///
/// Zero-weight rows and columns are removed before solving and come back as
/// zero rows and columns of the plan.
pub fn transport_plan(
    a: &Array1<f64>,
    b: &Array1<f64>,
    cost: &Array2<f64>,
) -> Result<TransportPlan> {
    if cost.dim() != (a.len(), b.len()) {
        return Err(Error::ShapeMismatch(format!(
            "cost is {:?}, weights have lengths {} and {}",
            cost.dim(),
            a.len(),
            b.len()
        )));
    }
    for w in a.iter().chain(b.iter()) {
        if !(w.is_finite() && *w >= 0.0) {
            return Err(Error::invalid(
                "transport weights must be finite and nonnegative",
            ));
        }
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::invalid("transport costs must be finite"));
    }
    check_plan_size(a.len(), b.len())?;
    let (sa, sb) = (a.sum(), b.sum());
    if (sa - sb).abs() > BALANCE_TOL || sa <= 0.0 {
        return Err(Error::Infeasible(format!(
            "masses {sa} and {sb} are not balanced"
        )));
    }
    let rows: Vec<usize> = (0..a.len()).filter(|&i| a[i] > 0.0).collect();
    let cols: Vec<usize> = (0..b.len()).filter(|&j| b[j] > 0.0).collect();
    let sub_cost =
        Array2::from_shape_fn((rows.len(), cols.len()), |(r, c)| cost[[rows[r], cols[c]]]);
    let sub_a: Vec<f64> = rows.iter().map(|&i| a[i]).collect();
    let sub_b: Vec<f64> = cols.iter().map(|&j| b[j]).collect();
    let flows = if sub_a.len() > sub_b.len() {
        let t = sub_cost.t().as_standard_layout().into_owned();
        simplex::solve(&sub_b, &sub_a, &t)?
            .into_iter()
            .map(|(c, r, f)| (r, c, f))
            .collect()
    } else {
        simplex::solve(&sub_a, &sub_b, &sub_cost)?
    };

    let mut plan = Array2::zeros(cost.dim());
    let mut objective = 0.0;
    for (r, c, f) in flows {
        plan[[rows[r], cols[c]]] = f;
        objective += f * sub_cost[[r, c]];
    }
    Ok(TransportPlan {
        plan,
        row_marginal: a.clone(),
        col_marginal: b.clone(),
        objective,
    })
}

/// Copy of `m` with bitwise-identical support points merged.
fn merged(m: &Marginal) -> Result<Marginal> {
    let agg = m.aggregated();
    let d = m.dim();
    let mut pts = Array2::zeros((agg.len(), d));
    let mut w = Array1::zeros(agg.len());
    for (i, (p, mass)) in agg.into_iter().enumerate() {
        pts.row_mut(i).assign(&Array1::from(p));
        w[i] = mass;
    }
    Marginal::from_masses(
        pts,
        w,
        NodeId::new(m.label().core, m.label().snapshot),
        m.time(),
    )
}

/// Optimal plan between two empirical measures under squared Euclidean cost.
pub fn wasserstein2_plan(mu: &Marginal, nu: &Marginal) -> Result<TransportPlan> {
    check_plan_size(mu.len(), nu.len())?;
    let cost = squared_euclidean_cost(mu, nu)?;
    transport_plan(mu.weights(), nu.weights(), &cost)
}

/// `W₂(μ, ν)`: square root of the optimal squared-Euclidean transport cost.
///
/// Duplicate support points are merged first, which leaves the value unchanged.
pub fn wasserstein2(mu: &Marginal, nu: &Marginal) -> Result<f64> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            found: nu.dim(),
        });
    }
    let plan = wasserstein2_plan(&merged(mu)?, &merged(nu)?)?;
    Ok(plan.objective.max(0.0).sqrt())
}

/// `Σ μ_i log(μ_i / ν_i)`, with `0 log 0 = 0` and `+∞` when `μ` is not absolutely continuous wrt `ν`.
pub fn kl_divergence(mu: &[f64], nu: &[f64]) -> Result<f64> {
    if mu.len() != nu.len() {
        return Err(Error::DimensionMismatch {
            expected: mu.len(),
            found: nu.len(),
        });
    }
    if mu.iter().chain(nu).any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::invalid(
            "KL divergence needs nonnegative finite weights",
        ));
    }
    let mut acc = 0.0;
    for (&p, &q) in mu.iter().zip(nu) {
        if p == 0.0 {
            continue;
        }
        if q == 0.0 {
            return Ok(f64::INFINITY);
        }
        acc += p * (p / q).ln();
    }
    Ok(acc.max(0.0))
}

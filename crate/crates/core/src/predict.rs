//! Bridge extraction and displacement interpolation between snapshots.

use std::io::{BufRead, Write};

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::wasserstein2;
use crate::model::{GraphStructure, Marginal, NodeId};
use crate::sinkhorn::BridgeSolution;

/// Bridge entries below this fraction of the largest entry are dropped.
pub const PRUNE_RELATIVE: f64 = 1e-15;

/// A predicted distribution at `query_time` for one core.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictedDistribution {
    pub points: Array2<f64>,
    pub weights: Array1<f64>,
    pub header: PredictionHeader,
}

/// Where a prediction sits between the two bracketing snapshots.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionHeader {
    pub tau: f64,
    pub core: usize,
    pub sigma: usize,
    pub sigma_next: usize,
    pub lambda: f64,
}

/// Mass-normalized bimarginal of `(j,σ)` and `(j,σ+1)`.
///
/// Barycentric structures have no direct edge between the two, so the bridge is
/// composed through the barycenter chain:
/// `P_σ diag(1 ⊘ m_σ) C diag(1 ⊘ m_{σ+1}) Q_{σ+1}` with `P`, `Q` the spoke
/// bimarginals, `C` the chain bimarginal and `m` the barycenter marginals.
/// The mass tensor factorizes along that tree, so this is the exact pair marginal.
pub fn bridge_matrix(solution: &BridgeSolution, core: usize, sigma: usize) -> Result<Array2<f64>> {
    let st = *solution.structure();
    let ws = solution.workspace();
    let node = |t: usize| {
        st.node_for(core, t)
            .ok_or(Error::UnknownNode(NodeId::new(core, t)))
    };
    let (x, y) = (node(sigma)?, node(sigma + 1)?);
    let m = match st {
        GraphStructure::Barycentric { .. } if core > 0 => {
            let (b0, b1) = (NodeId::new(0, sigma), NodeId::new(0, sigma + 1));
            let left = ws.bc_proj2(x, b0)?;
            let chain = ws.bc_proj2(b0, b1)?;
            let right = ws.bc_proj2(b1, y)?;
            let m0 = ws.bc_proj(0, sigma)?;
            let m1 = ws.bc_proj(0, sigma + 1)?;
            let mut mid = chain;
            for (mut row, &d) in mid.axis_iter_mut(Axis(0)).zip(m0.iter()) {
                row /= d;
            }
            for mut row in mid.axis_iter_mut(Axis(0)) {
                row /= &m1;
            }
            left.dot(&mid).dot(&right)
        }
        _ => ws.proj2(x, y)?,
    };
    let mass = m.sum();
    if !(mass.is_finite() && mass > 0.0) {
        return Err(Error::Internal(format!("bridge mass is {mass}")));
    }
    Ok(m / mass)
}

/// Checks strictly increasing times and returns `(σ, λ)` with `τ_σ ≤ τ < τ_{σ+1}`.
pub fn bracket(times: &[f64], tau: f64) -> Result<(usize, f64)> {
    if times.len() < 2 {
        return Err(Error::invalid("at least two snapshot times are required"));
    }
    if let Some(w) = times.windows(2).find(|w| !(w[0] < w[1])) {
        return Err(Error::invalid(format!(
            "snapshot times must be strictly increasing, found {} then {}",
            w[0], w[1]
        )));
    }
    let (lo, hi) = (times[0], times[times.len() - 1]);
    if !(tau >= lo && tau < hi) {
        return Err(Error::OutOfRange(format!(
            "query time {tau} is outside [{lo}, {hi})"
        )));
    }
    let sigma = times.partition_point(|&t| t <= tau);
    let (t0, t1) = (times[sigma - 1], times[sigma]);
    Ok((sigma, (tau - t0) / (t1 - t0)))
}

/// Displacement interpolation of a normalized bridge: mass `bridge[r,l]` sits at
/// `(1-λ) x_r + λ y_l`. Entries below `PRUNE_RELATIVE · max` are dropped.
pub fn interpolate_bridge(
    bridge: &Array2<f64>,
    left: &Marginal,
    right: &Marginal,
    lambda: f64,
) -> Result<(Array2<f64>, Array1<f64>)> {
    if bridge.dim() != (left.len(), right.len()) {
        return Err(Error::ShapeMismatch(format!(
            "bridge is {:?} for marginals of size {} and {}",
            bridge.dim(),
            left.len(),
            right.len()
        )));
    }
    if left.dim() != right.dim() {
        return Err(Error::DimensionMismatch {
            expected: left.dim(),
            found: right.dim(),
        });
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::OutOfRange(format!(
            "interpolation fraction {lambda} not in [0, 1]"
        )));
    }
    let cut = PRUNE_RELATIVE * bridge.iter().fold(0.0_f64, |a, &b| a.max(b));
    let kept: Vec<(usize, usize, f64)> = bridge
        .indexed_iter()
        .filter(|(_, &w)| w > 0.0 && w >= cut)
        .map(|((r, l), &w)| (r, l, w))
        .collect();
    let total: f64 = kept.iter().map(|k| k.2).sum();
    let d = left.dim();
    let mut points = Array2::zeros((kept.len(), d));
    let mut weights = Array1::zeros(kept.len());
    for (i, &(r, l, w)) in kept.iter().enumerate() {
        let (x, y) = (left.point(r), right.point(l));
        for k in 0..d {
            points[[i, k]] = (1.0 - lambda) * x[k] + lambda * y[k];
        }
        weights[i] = w / total;
    }
    Ok((points, weights))
}

/// Predicted distribution of core `core` at time `tau` from the bridge of the
/// bracketing snapshots.
pub fn interpolate(
    solution: &BridgeSolution,
    core: usize,
    tau: f64,
) -> Result<PredictedDistribution> {
    let st = solution.structure();
    let times = solution.marginals().times();
    let (sigma, lambda) = bracket(&times, tau)?;
    let node = |t: usize| {
        st.node_for(core, t)
            .ok_or(Error::UnknownNode(NodeId::new(core, t)))
    };
    let left = solution
        .marginals()
        .get(node(sigma)?)
        .expect("node present");
    let right = solution
        .marginals()
        .get(node(sigma + 1)?)
        .expect("node present");
    let bridge = bridge_matrix(solution, core, sigma)?;
    let (points, weights) = interpolate_bridge(&bridge, left, right, lambda)?;
    Ok(PredictedDistribution {
        points,
        weights,
        header: PredictionHeader {
            tau,
            core,
            sigma,
            sigma_next: sigma + 1,
            lambda,
        },
    })
}

impl PredictedDistribution {
    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// As an empirical measure labelled `(core, σ)` at time `tau`.
    pub fn to_marginal(&self) -> Result<Marginal> {
        Marginal::from_masses(
            self.points.clone(),
            self.weights.clone(),
            NodeId::new(self.header.core, self.header.sigma),
            self.header.tau,
        )
    }

    /// Support with bitwise-identical points merged, in lexicographic order.
    pub fn aggregated(&self) -> Result<Vec<(Vec<f64>, f64)>> {
        Ok(self.to_marginal()?.aggregated())
    }

    pub fn mean(&self) -> Array1<f64> {
        self.weights.dot(&self.points)
    }

    /// CSV with a `# {json header}` first line, then `x1,...,xd,weight`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# {}", serde_json::to_string(&self.header)?)?;
        let mut w = csv::Writer::from_writer(out);
        let mut head: Vec<String> = (1..=self.dim()).map(|k| format!("x{k}")).collect();
        head.push("weight".into());
        w.write_record(&head)?;
        for (row, wt) in self.points.rows().into_iter().zip(self.weights.iter()) {
            let mut rec: Vec<String> = row.iter().map(|x| x.to_string()).collect();
            rec.push(wt.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(mut input: R) -> Result<Self> {
        let mut first = String::new();
        input.read_line(&mut first)?;
        let json = first.trim_end().strip_prefix("# ").ok_or_else(|| {
            Error::invalid("prediction CSV must start with a '# {json}' header line")
        })?;
        let header: PredictionHeader = serde_json::from_str(json)?;
        let mut rdr = csv::Reader::from_reader(input);
        let cols = rdr.headers()?.len();
        if cols < 2 {
            return Err(Error::invalid(
                "prediction CSV needs at least one coordinate and a weight",
            ));
        }
        let d = cols - 1;
        let mut flat = Vec::new();
        let mut weights = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::invalid(format!("row {}: {e}", i + 2)))
            };
            for k in 0..d {
                flat.push(parse(&rec[k])?);
            }
            weights.push(parse(&rec[d])?);
        }
        let n = weights.len();
        Ok(Self {
            points: Array2::from_shape_vec((n, d), flat)
                .map_err(|e| Error::Internal(e.to_string()))?,
            weights: Array1::from(weights),
            header,
        })
    }
}

/// `W₂` between a prediction and a measured marginal.
pub fn prediction_error(predicted: &PredictedDistribution, measured: &Marginal) -> Result<f64> {
    if predicted.dim() != measured.dim() {
        return Err(Error::DimensionMismatch {
            expected: measured.dim(),
            found: predicted.dim(),
        });
    }
    wasserstein2(&predicted.to_marginal()?, measured)
}

//! Synthetic counter traces: piecewise truncated-Gaussian phases per core, with
//! exact-zero idle intervals.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{CoreTrace, ProfileDataset, RunProfile, DEFAULT_FEATURES};

/// Relative tolerance for phase tiling and semidefiniteness checks.
const TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub runs: usize,
    #[serde(rename = "J")]
    pub cores: usize,
    pub duration_s: f64,
    pub sample_period_s: f64,
    #[serde(default = "default_features")]
    pub features: Vec<String>,
    #[serde(default)]
    pub context: String,
    pub seed: u64,
    /// One entry per core.
    pub core_profiles: Vec<CoreProfile>,
}

fn default_features() -> Vec<String> {
    DEFAULT_FEATURES.iter().map(|s| s.to_string()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoreProfile {
    /// Consecutive phases; their durations sum to the run duration.
    pub phases: Vec<Phase>,
    /// `[start, end)` intervals where every counter reads exactly zero.
    #[serde(default)]
    pub idle: Vec<[f64; 2]>,
    /// Lag-one autocorrelation of the Gaussian noise between consecutive samples.
    #[serde(default)]
    pub ar1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    pub duration_s: f64,
    pub mean: Vec<f64>,
    /// When set, the mean moves linearly from `mean` at the phase start to this at its end.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_end: Option<Vec<f64>>,
    /// Symmetric positive semidefinite, `d x d`.
    pub covariance: Vec<Vec<f64>>,
    /// Standard deviation of the phase's end boundary, per run.
    #[serde(default)]
    pub jitter_s: f64,
}

impl SynthSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn samples_per_run(&self) -> usize {
        (self.duration_s / self.sample_period_s * (1.0 + TOL)).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.runs == 0 || self.cores == 0 {
            return bad("spec needs at least one run and one core".into());
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return bad(format!(
                "duration must be positive, got {}",
                self.duration_s
            ));
        }
        if !(self.sample_period_s.is_finite()
            && self.sample_period_s > 0.0
            && self.sample_period_s <= self.duration_s)
        {
            return bad(format!(
                "sample period {} must lie in (0, duration]",
                self.sample_period_s
            ));
        }
        let d = self.features.len();
        if d == 0 {
            return bad("spec needs at least one feature".into());
        }
        if self.core_profiles.len() != self.cores {
            return bad(format!(
                "{} core profiles for J = {}",
                self.core_profiles.len(),
                self.cores
            ));
        }
        for (j, core) in self.core_profiles.iter().enumerate() {
            let core_no = j + 1;
            if core.phases.is_empty() {
                return bad(format!("core {core_no} has no phases"));
            }
            let mut total = 0.0;
            for (k, p) in core.phases.iter().enumerate() {
                let at = format!("core {core_no} phase {}", k + 1);
                if !(p.duration_s.is_finite() && p.duration_s > 0.0) {
                    return bad(format!("{at} has non-positive length {}", p.duration_s));
                }
                if !(p.jitter_s.is_finite() && p.jitter_s >= 0.0) {
                    return bad(format!("{at} jitter must be nonnegative"));
                }
                for mean in std::iter::once(&p.mean).chain(&p.mean_end) {
                    if mean.len() != d || mean.iter().any(|x| !x.is_finite()) {
                        return bad(format!("{at} mean must be {d} finite values"));
                    }
                }
                covariance_factor(&p.covariance, d)
                    .map_err(|e| Error::InvalidInput(format!("{at}: {e}")))?;
                total += p.duration_s;
            }
            if (total - self.duration_s).abs() > TOL * self.duration_s {
                return bad(format!(
                    "core {core_no} phases last {total} s, duration is {} s",
                    self.duration_s
                ));
            }
            if !(0.0..1.0).contains(&core.ar1) {
                return bad(format!(
                    "core {core_no} ar1 must lie in [0, 1), got {}",
                    core.ar1
                ));
            }
            for iv in &core.idle {
                if !(iv[0].is_finite() && iv[1].is_finite() && iv[0] < iv[1]) {
                    return bad(format!(
                        "core {core_no} idle interval {iv:?} is empty or not finite"
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Lower-triangular `L` with `L Lᵀ = cov`, tolerating zero pivots.
fn covariance_factor(cov: &[Vec<f64>], d: usize) -> std::result::Result<Array2<f64>, String> {
    if cov.len() != d || cov.iter().any(|r| r.len() != d) {
        return Err(format!("covariance must be {d}x{d}"));
    }
    let a = Array2::from_shape_fn((d, d), |(i, k)| cov[i][k]);
    if a.iter().any(|x| !x.is_finite()) {
        return Err("covariance entries must be finite".into());
    }
    let scale = a
        .diag()
        .iter()
        .fold(0.0_f64, |m, x| m.max(x.abs()))
        .max(f64::MIN_POSITIVE);
    for i in 0..d {
        for k in 0..i {
            if (a[[i, k]] - a[[k, i]]).abs() > TOL * scale {
                return Err("covariance is not symmetric".into());
            }
        }
    }
    let mut l = Array2::<f64>::zeros((d, d));
    for k in 0..d {
        let pivot = a[[k, k]] - (0..k).map(|m| l[[k, m]] * l[[k, m]]).sum::<f64>();
        if pivot < -TOL * scale {
            return Err("covariance is not positive semidefinite".into());
        }
        if pivot <= TOL * scale {
            // degenerate direction: the rest of this column must vanish too
            for i in k + 1..d {
                let r = a[[i, k]] - (0..k).map(|m| l[[i, m]] * l[[k, m]]).sum::<f64>();
                if r.abs() > TOL.sqrt() * scale {
                    return Err("covariance is not positive semidefinite".into());
                }
            }
            continue;
        }
        let lkk = pivot.sqrt();
        l[[k, k]] = lkk;
        for i in k + 1..d {
            let r = a[[i, k]] - (0..k).map(|m| l[[i, m]] * l[[k, m]]).sum::<f64>();
            l[[i, k]] = r / lkk;
        }
    }
    Ok(l)
}

/// Independent stream for run `run`; the same `(seed, run)` always yields the same trace.
pub fn run_rng(seed: u64, run: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run as u64);
    rng
}

/// Phase end times for one run, after boundary jitter.
fn jittered_ends(phases: &[Phase], duration: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut ends = Vec::with_capacity(phases.len());
    let mut nominal = 0.0;
    let mut prev = 0.0_f64;
    for (k, p) in phases.iter().enumerate() {
        nominal += p.duration_s;
        let z: f64 = StandardNormal.sample(rng);
        let end = if k + 1 == phases.len() {
            duration
        } else {
            (nominal + p.jitter_s * z).clamp(prev, duration)
        };
        ends.push(end);
        prev = end;
    }
    ends
}

fn generate_run(spec: &SynthSpec, factors: &[Vec<Array2<f64>>], run: usize) -> RunProfile {
    let mut rng = run_rng(spec.seed, run);
    let n = spec.samples_per_run();
    let d = spec.features.len();
    let times: Vec<f64> = (0..n).map(|m| m as f64 * spec.sample_period_s).collect();
    let cores = spec
        .core_profiles
        .iter()
        .zip(factors)
        .map(|(core, chol)| {
            let ends = jittered_ends(&core.phases, spec.duration_s, &mut rng);
            let mut values = Array2::zeros((n, d));
            let mut z = Array1::<f64>::zeros(d);
            let (rho, fresh) = (core.ar1, (1.0 - core.ar1 * core.ar1).sqrt());
            for (m, &t) in times.iter().enumerate() {
                // stationary AR(1): the first draw already has unit variance
                let (keep, add) = if m == 0 { (0.0, 1.0) } else { (rho, fresh) };
                z.mapv_inplace(|prev| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    keep * prev + add * e
                });
                if core.idle.iter().any(|iv| t >= iv[0] && t < iv[1]) {
                    continue;
                }
                let k = ends.iter().position(|&e| t < e).unwrap_or(ends.len() - 1);
                let phase = &core.phases[k];
                let x = chol[k].dot(&z);
                let start = if k == 0 { 0.0 } else { ends[k - 1] };
                let frac = if ends[k] > start {
                    ((t - start) / (ends[k] - start)).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                for f in 0..d {
                    let mean = match &phase.mean_end {
                        Some(end) => phase.mean[f] + frac * (end[f] - phase.mean[f]),
                        None => phase.mean[f],
                    };
                    values[[m, f]] = (mean + x[f]).max(0.0);
                }
            }
            CoreTrace {
                times: times.clone(),
                values,
            }
        })
        .collect();
    RunProfile {
        source: format!("run_{run}").into(),
        cores,
    }
}

/// Draws a dataset; identical specs give bitwise-identical output.
pub fn generate(spec: &SynthSpec) -> Result<ProfileDataset> {
    spec.validate()?;
    let d = spec.features.len();
    let factors: Vec<Vec<Array2<f64>>> = spec
        .core_profiles
        .iter()
        .map(|c| {
            c.phases
                .iter()
                .map(|p| covariance_factor(&p.covariance, d).expect("validated"))
                .collect()
        })
        .collect();
    let runs: Vec<RunProfile> = (0..spec.runs)
        .into_par_iter()
        .map(|r| generate_run(spec, &factors, r))
        .collect();
    let ds = ProfileDataset {
        runs,
        cores: spec.cores,
        sample_period: spec.sample_period_s,
        features: spec.features.clone(),
        context: spec.context.clone(),
    };
    ds.validate()?;
    Ok(ds)
}

/// Bundled specs, by name.
pub fn bundled(name: &str) -> Option<SynthSpec> {
    let text = match name {
        "canneal-like" => include_str!("../fixtures/canneal_like.json"),
        "single-core" => include_str!("../fixtures/single_core.json"),
        "tiny" => include_str!("../fixtures/tiny.json"),
        _ => return None,
    };
    Some(SynthSpec::from_json(text).expect("bundled specs are valid"))
}

pub const BUNDLED: [&str; 3] = ["canneal-like", "single-core", "tiny"];

#[cfg(test)]
mod tests;

//! The `msbridge` command line: synth → solve → predict → validate.
//!
//! Exit codes: 0 success, 2 input error, 3 non-convergence (artifacts are still
//! written), 4 internal invariant violation.

pub mod solution;

use std::ffi::OsString;
use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{
    assemble, load_profiles, snapshot_marginals, Exclusion, ProfileDataset, SnapshotOptions,
    Snapshots, StructureKind,
};
use crate::kernel::KernelSet;
use crate::model::{GraphStructure, Marginal, MarginalSet, NodeId, ScalingFamily};
use crate::predict::{interpolate, PredictedDistribution};
use crate::sinkhorn::{solve, BridgeSolution, SolverConfig};
use crate::synth::{bundled, generate, SynthSpec, BUNDLED};

use solution::{read_solution, write_solution, SolutionHeader};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "MSB_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "msbridge",
    version,
    about = "Multimarginal Schrödinger bridges over profiling snapshots"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic profile dataset (run CSVs plus manifest).
    Synth(SynthArgs),
    /// Extract snapshot marginals and solve the multimarginal bridge.
    Solve(SolveArgs),
    /// Predict the distribution of one core at a time between snapshots.
    Predict(PredictArgs),
    /// Wasserstein-2 error of a prediction against a held-out marginal.
    Validate(ValidateArgs),
    /// Held-out error as intermediate snapshots are added to a fixed interval.
    Refine(RefineArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Spec JSON file.
    #[arg(required_unless_present = "builtin", conflicts_with = "builtin")]
    pub spec: Option<PathBuf>,
    /// Use a bundled spec instead: canneal-like, single-core or tiny.
    #[arg(long)]
    pub builtin: Option<String>,
    /// Override the spec's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the spec's run count.
    #[arg(long)]
    pub runs: Option<usize>,
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ProblemArgs {
    /// Dataset manifest, or a directory containing manifest.json.
    pub manifest: PathBuf,
    /// Information graph: path (J = 1), bc or sp.
    #[arg(long, default_value = "path")]
    pub structure: StructureKind,
    /// Strictly increasing snapshot times in seconds, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub times: Vec<f64>,
    /// Entropic regularization.
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    /// Stopping tolerance on the Hilbert-metric change per sweep.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    /// Sweep budget.
    #[arg(long, default_value_t = 10_000)]
    pub max_iter: usize,
    /// Barycenter support size (bc only).
    #[arg(long)]
    pub n0: Option<usize>,
    /// Seed for barycenter clustering.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Abort if any run does not cover a snapshot time, instead of dropping it there.
    #[arg(long)]
    pub strict: bool,
    /// Keep raw counter units instead of min-max scaling each feature to [0, 1].
    #[arg(long)]
    pub no_normalize: bool,
    /// Use raw squared distances instead of dividing costs by their maximum.
    #[arg(long)]
    pub raw_costs: bool,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Solution file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Convergence CSV [default: <out> with extension convergence.csv].
    #[arg(long)]
    pub convergence: Option<PathBuf>,
    /// Run record JSON [default: <out> with extension record.json].
    #[arg(long)]
    pub record: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Solution file written by `solve`.
    pub solution: PathBuf,
    /// Core to predict (1-based).
    #[arg(long, default_value_t = 1)]
    pub core: usize,
    /// Query time in seconds, within [τ₁, τ_s).
    #[arg(long, allow_negative_numbers = true)]
    pub tau: f64,
    /// Read the dataset from here instead of the path stored in the solution.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Prediction CSV written by `predict`.
    pub predicted: PathBuf,
    /// Held-out marginal as CSV (`x1..xd[,weight]`, `#` lines ignored).
    #[arg(long, conflicts_with_all = ["dataset", "solution"], required_unless_present = "dataset")]
    pub holdout: Option<PathBuf>,
    /// Read the held-out marginal from this dataset at the prediction's time and core.
    #[arg(long, requires = "solution")]
    pub dataset: Option<PathBuf>,
    /// Solution whose snapshot options (normalization, strictness) apply to `--dataset`.
    #[arg(long)]
    pub solution: Option<PathBuf>,
    /// Report JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Start and end of the interval, comma separated. Replaces `--times`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub span: Vec<f64>,
    /// Largest number of intermediate snapshots.
    #[arg(long, default_value_t = 4)]
    pub max_intra: usize,
    /// Held-out times at fractions k/(holdouts+1) of the span. `holdouts + 1`
    /// must share no factor with any level's interval count, so that no
    /// held-out time is also a snapshot.
    #[arg(long, default_value_t = 12)]
    pub holdouts: usize,
    /// Core whose predictions are scored.
    #[arg(long, default_value_t = 1)]
    pub core: usize,
    /// Report JSON.
    #[arg(long)]
    pub out: PathBuf,
}

/// One node's feasibility residual.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub core: usize,
    pub snapshot: usize,
    pub l1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputPaths {
    pub solution: PathBuf,
    pub convergence: PathBuf,
    pub record: PathBuf,
}

/// Summary of one `solve` invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: SolverConfig,
    pub structure: StructureKind,
    pub cores: usize,
    pub snapshots: usize,
    pub cardinality: usize,
    pub times: Vec<f64>,
    pub n0: usize,
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time_s: f64,
    pub max_residual: f64,
    pub residuals: Vec<Residual>,
    pub excluded: Vec<Exclusion>,
    pub warnings: Vec<String>,
    pub outputs: OutputPaths,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub predicted: PathBuf,
    pub holdout: String,
    pub tau: f64,
    pub core: usize,
    pub predicted_support: usize,
    pub holdout_support: usize,
    pub wasserstein2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineLevel {
    pub intra: usize,
    pub times: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub errors: Vec<f64>,
    pub median: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineReport {
    pub holdout_times: Vec<f64>,
    pub core: usize,
    pub levels: Vec<RefineLevel>,
    pub non_increasing: bool,
}

/// Maps an error to its process exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Internal(_) => EXIT_INTERNAL,
        _ => EXIT_INPUT,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Honors `MSB_THREADS` once per process; later calls are no-ops.
pub fn configure_threads() {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return;
    };
    match v.trim().parse::<usize>() {
        Ok(n) if n > 0 => {
            // fails only if a pool was already installed, which is fine
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
        _ => warn!("ignoring {THREADS_ENV}={v:?}: expected a positive integer"),
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Synth(a) => cmd_synth(&a).map(|_| EXIT_OK),
        Command::Solve(a) => cmd_solve(&a).map(|r| {
            if r.converged {
                EXIT_OK
            } else {
                EXIT_NOT_CONVERGED
            }
        }),
        Command::Predict(a) => cmd_predict(&a).map(|_| EXIT_OK),
        Command::Validate(a) => cmd_validate(&a).map(|_| EXIT_OK),
        Command::Refine(a) => cmd_refine(&a).map(|_| EXIT_OK),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Writes a generated dataset; returns the files written.
pub fn cmd_synth(a: &SynthArgs) -> Result<Vec<PathBuf>> {
    let mut spec = match (&a.spec, &a.builtin) {
        (Some(path), _) => SynthSpec::load(path)?,
        (None, Some(name)) => bundled(name).ok_or_else(|| {
            Error::invalid(format!(
                "unknown bundled spec `{name}` (available: {})",
                BUNDLED.join(", ")
            ))
        })?,
        (None, None) => return Err(Error::invalid("give a spec file or --builtin")),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    if let Some(runs) = a.runs {
        spec.runs = runs;
    }
    let ds = generate(&spec)?;
    let files = ds.write_to_dir(&a.out)?;
    info!("wrote {} runs to {}", ds.len(), a.out.display());
    Ok(files)
}

impl ProblemArgs {
    pub fn config(&self) -> SolverConfig {
        SolverConfig {
            epsilon: self.epsilon,
            tolerance: self.tol,
            max_iterations: self.max_iter,
            normalize_costs: !self.raw_costs,
        }
    }

    pub fn snapshot_options(&self) -> SnapshotOptions {
        SnapshotOptions {
            strict: self.strict,
            normalize: !self.no_normalize,
        }
    }

    fn n0(&self) -> Result<usize> {
        match (self.structure, self.n0) {
            (StructureKind::Bc, Some(n)) if n > 0 => Ok(n),
            (StructureKind::Bc, _) => Err(Error::invalid("the bc structure needs --n0 >= 1")),
            _ => Ok(0),
        }
    }
}

/// Snapshot marginals attached to a structure.
pub fn build_marginals(
    ds: &ProfileDataset,
    kind: StructureKind,
    times: &[f64],
    n0: usize,
    seed: u64,
    opts: SnapshotOptions,
) -> Result<(MarginalSet, Snapshots)> {
    let snaps = snapshot_marginals(ds, times, opts)?;
    for e in &snaps.excluded {
        warn!(
            "{} does not cover t = {}; dropped from snapshot {}",
            e.source.display(),
            e.tau,
            e.sigma
        );
    }
    let ms = assemble(&snaps, kind, n0, seed)?;
    Ok((ms, snaps))
}

fn degenerate_warning(st: &GraphStructure) -> Option<String> {
    match st {
        GraphStructure::SeriesParallel { snapshots: 2, .. } => Some(
            "series-parallel structure with two snapshots has no interior nodes; every core shares the terminal marginals"
                .into(),
        ),
        _ => None,
    }
}

pub fn cmd_solve(a: &SolveArgs) -> Result<RunRecord> {
    let p = &a.problem;
    let config = p.config();
    config.validate()?;
    let n0 = p.n0()?;
    let ds = load_profiles(&p.manifest)?;
    let (ms, snaps) =
        build_marginals(&ds, p.structure, &p.times, n0, p.seed, p.snapshot_options())?;
    let st = *ms.structure();
    let mut warnings = Vec::new();
    if let Some(w) = degenerate_warning(&st) {
        warn!("{w}");
        warnings.push(w);
    }
    let sol = solve(&ms, &config)?;
    if !sol.converged() {
        warn!(
            "no convergence after {} sweeps (last change {:e})",
            sol.iterations(),
            sol.convergence_log().last().copied().unwrap_or(f64::NAN)
        );
    }

    let outputs = OutputPaths {
        solution: a.out.clone(),
        convergence: a
            .convergence
            .clone()
            .unwrap_or_else(|| a.out.with_extension("convergence.csv")),
        record: a
            .record
            .clone()
            .unwrap_or_else(|| a.out.with_extension("record.json")),
    };
    let header = SolutionHeader {
        structure: p.structure,
        cores: st.cores(),
        snapshots: st.snapshots(),
        n0,
        times: p.times.clone(),
        config: config.clone(),
        dataset: fs::canonicalize(&p.manifest)?,
        strict: p.strict,
        normalize: !p.no_normalize,
        seed: p.seed,
        normalization: snaps.normalization.clone(),
        kernel_fingerprint: sol.kernels().fingerprint(),
        iterations: sol.iterations(),
        converged: sol.converged(),
        blocks: st
            .nodes()
            .iter()
            .zip(sol.scalings().vectors())
            .map(|(n, u)| (n.core, n.snapshot, u.len()))
            .collect(),
    };
    write_solution(
        BufWriter::new(fs::File::create(&outputs.solution)?),
        &header,
        sol.scalings().vectors(),
    )?;
    sol.write_convergence_csv(BufWriter::new(fs::File::create(&outputs.convergence)?))?;

    let residuals: Vec<Residual> = sol
        .feasibility_residuals()?
        .into_iter()
        .map(|(n, l1)| Residual {
            core: n.core,
            snapshot: n.snapshot,
            l1,
        })
        .collect();
    let record = RunRecord {
        config,
        structure: p.structure,
        cores: st.cores(),
        snapshots: st.snapshots(),
        cardinality: st.cardinality(),
        times: p.times.clone(),
        n0,
        seed: p.seed,
        iterations: sol.iterations(),
        converged: sol.converged(),
        wall_time_s: sol.wall_time(),
        max_residual: residuals.iter().map(|r| r.l1).fold(0.0, f64::max),
        residuals,
        excluded: snaps.excluded,
        warnings,
        outputs,
    };
    write_json(&record.outputs.record, &record)?;
    info!(
        "{} solve: {} sweeps, converged = {}, max residual {:e}",
        st.kind(),
        record.iterations,
        record.converged,
        record.max_residual
    );
    Ok(record)
}

/// Rebuilds a solution from its file and the dataset it was solved on.
pub fn load_solution(
    path: &Path,
    dataset: Option<&Path>,
) -> Result<(SolutionHeader, BridgeSolution)> {
    let (header, blocks) = read_solution(BufReader::new(fs::File::open(path)?))?;
    let ds_path = dataset
        .map(Path::to_path_buf)
        .unwrap_or_else(|| header.dataset.clone());
    let ds = load_profiles(&ds_path)?;
    let opts = SnapshotOptions {
        strict: header.strict,
        normalize: header.normalize,
    };
    let (ms, _) = build_marginals(
        &ds,
        header.structure,
        &header.times,
        header.n0,
        header.seed,
        opts,
    )?;
    let st = header.graph()?;
    if ms.structure() != &st {
        return Err(Error::invalid(
            "dataset yields a different structure than the solution",
        ));
    }
    let kernels = KernelSet::build(&ms, header.config.epsilon, header.config.normalize_costs)?;
    if kernels.fingerprint() != header.kernel_fingerprint {
        return Err(Error::invalid(format!(
            "kernels rebuilt from {} do not match the solution's fingerprint",
            ds_path.display()
        )));
    }
    let scalings = ScalingFamily::from_vectors(st, blocks)?;
    let sol = BridgeSolution::from_parts(
        ms,
        kernels,
        scalings,
        header.config.clone(),
        Vec::new(),
        header.converged,
        0.0,
    )?;
    Ok((header, sol))
}

pub fn cmd_predict(a: &PredictArgs) -> Result<PredictedDistribution> {
    let (_, sol) = load_solution(&a.solution, a.dataset.as_deref())?;
    let pred = interpolate(&sol, a.core, a.tau)?;
    pred.write_csv(BufWriter::new(fs::File::create(&a.out)?))?;
    Ok(pred)
}

/// Reads `x1..xd[,weight]` rows; lines starting with `#` are skipped and a
/// missing weight column means uniform weights.
pub fn read_marginal_csv(path: &Path) -> Result<Marginal> {
    let text = fs::read_to_string(path)?;
    let body: String = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());
    let head = rdr.headers()?.clone();
    let weighted = head.iter().next_back() == Some("weight");
    let d = head.len() - usize::from(weighted);
    if d == 0 {
        return Err(Error::invalid(format!(
            "{}: no coordinate columns",
            path.display()
        )));
    }
    let mut flat = Vec::new();
    let mut w = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i as u64 + 2;
        let parse = |s: &str| {
            s.parse::<f64>().map_err(|_| Error::Profile {
                file: path.to_path_buf(),
                line,
                message: format!("`{s}` is not a number"),
            })
        };
        for k in 0..d {
            flat.push(parse(&rec[k])?);
        }
        w.push(if weighted { parse(&rec[d])? } else { 1.0 });
    }
    let n = w.len();
    let pts = ndarray::Array2::from_shape_vec((n, d), flat)
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    Marginal::from_masses(pts, w.into(), NodeId::new(1, 1), 0.0)
}

pub fn cmd_validate(a: &ValidateArgs) -> Result<ValidationReport> {
    let pred = PredictedDistribution::read_csv(BufReader::new(fs::File::open(&a.predicted)?))?;
    let (holdout, label) = match (&a.holdout, &a.dataset, &a.solution) {
        (Some(h), _, _) => (read_marginal_csv(h)?, h.display().to_string()),
        (None, Some(ds_path), Some(sol_path)) => {
            let (header, _) = read_solution(BufReader::new(fs::File::open(sol_path)?))?;
            let ds = load_profiles(ds_path)?;
            let opts = SnapshotOptions {
                strict: header.strict,
                normalize: header.normalize,
            };
            let snaps = snapshot_marginals(&ds, &[pred.header.tau], opts)?;
            let m = snaps
                .get(pred.header.core, 1)
                .ok_or(Error::UnknownNode(NodeId::new(pred.header.core, 1)))?
                .clone();
            (
                m,
                format!("{} @ t = {}", ds_path.display(), pred.header.tau),
            )
        }
        _ => {
            return Err(Error::invalid(
                "give --holdout, or --dataset with --solution",
            ))
        }
    };
    let w = crate::predict::prediction_error(&pred, &holdout)?;
    let report = ValidationReport {
        predicted: a.predicted.clone(),
        holdout: label,
        tau: pred.header.tau,
        core: pred.header.core,
        predicted_support: pred.len(),
        holdout_support: holdout.len(),
        wasserstein2: w,
    };
    write_json(&a.out, &report)?;
    Ok(report)
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// For `k = 0..=max_intra` intermediate snapshots evenly splitting the span,
/// solves and scores predictions at held-out times against the data.
pub fn cmd_refine(a: &RefineArgs) -> Result<RefineReport> {
    let p = &a.problem;
    let [start, end] = a.span[..] else {
        return Err(Error::invalid("--span needs exactly two times"));
    };
    if !(start < end) {
        return Err(Error::invalid("--span must be increasing"));
    }
    if a.holdouts == 0 {
        return Err(Error::invalid("--holdouts must be at least 1"));
    }
    if let Some(intervals) = (2..=a.max_intra + 1).find(|&q| gcd(q, a.holdouts + 1) > 1) {
        return Err(Error::invalid(format!(
            "with --holdouts {} some held-out times coincide with snapshots of the {intervals}-interval grid; \
             pick holdouts + 1 coprime to 2..={}",
            a.holdouts,
            a.max_intra + 1
        )));
    }
    let config = p.config();
    config.validate()?;
    let n0 = p.n0()?;
    let opts = p.snapshot_options();
    let ds = load_profiles(&p.manifest)?;
    let len = end - start;
    let holdout_times: Vec<f64> = (1..=a.holdouts)
        .map(|k| start + len * k as f64 / (a.holdouts + 1) as f64)
        .collect();
    let measured = snapshot_marginals(&ds, &holdout_times, opts)?;

    let mut levels = Vec::with_capacity(a.max_intra + 1);
    for k in 0..=a.max_intra {
        let times: Vec<f64> = (0..=k + 1)
            .map(|i| start + len * i as f64 / (k + 1) as f64)
            .collect();
        let (ms, _) = build_marginals(&ds, p.structure, &times, n0, p.seed, opts)?;
        let started = Instant::now();
        let sol = solve(&ms, &config)?;
        if !sol.converged() {
            warn!(
                "refinement level {k}: no convergence after {} sweeps",
                sol.iterations()
            );
        }
        let errors: Vec<f64> = holdout_times
            .par_iter()
            .enumerate()
            .map(|(h, &tau)| {
                let pred = interpolate(&sol, a.core, tau)?;
                let truth = measured
                    .get(a.core, h + 1)
                    .ok_or(Error::UnknownNode(NodeId::new(a.core, h + 1)))?;
                crate::predict::prediction_error(&pred, truth)
            })
            .collect::<Result<_>>()?;
        let med = median(&errors);
        info!(
            "level {k}: {} snapshots, {} sweeps, median W2 {med:.6} ({:.2} s)",
            times.len(),
            sol.iterations(),
            started.elapsed().as_secs_f64()
        );
        levels.push(RefineLevel {
            intra: k,
            times,
            iterations: sol.iterations(),
            converged: sol.converged(),
            errors,
            median: med,
        });
    }
    let non_increasing = levels.windows(2).all(|w| w[1].median <= w[0].median);
    let report = RefineReport {
        holdout_times,
        core: a.core,
        levels,
        non_increasing,
    };
    write_json(&a.out, &report)?;
    Ok(report)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

//! Profile datasets: per-run counter traces on disk, snapshot extraction and
//! barycenter supports.
//!
//! A dataset is a JSON manifest plus one CSV per run. Each CSV row is one sample
//! of one CPU: `time_s,cpu,<feature>...`, with `cpu` in `1..=J`.

mod kmeans;

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GraphStructure, Marginal, MarginalSet, NodeId};

pub use kmeans::{barycenter_supports, kmeans, KMEANS_MAX_ITER};

/// Default manifest file name inside a dataset directory.
pub const MANIFEST_NAME: &str = "manifest.json";

/// Default counter names, in column order.
pub const DEFAULT_FEATURES: [&str; 3] = ["instructions", "llc_requests", "llc_misses"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub runs: Vec<PathBuf>,
    #[serde(rename = "J")]
    pub cores: usize,
    pub sample_period_s: f64,
    pub features: Vec<String>,
    #[serde(default)]
    pub context: String,
}

/// Samples of one CPU within one run, times strictly increasing.
#[derive(Clone, Debug, PartialEq)]
pub struct CoreTrace {
    pub times: Vec<f64>,
    /// One row per sample, one column per feature.
    pub values: Array2<f64>,
}

impl CoreTrace {
    /// Zero-order hold: the last sample at or before `tau`.
    pub fn sample_at(&self, tau: f64) -> Option<usize> {
        let k = self.times.partition_point(|&t| t <= tau);
        k.checked_sub(1)
    }

    pub fn end_time(&self) -> f64 {
        self.times.last().copied().unwrap_or(f64::NEG_INFINITY)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunProfile {
    pub source: PathBuf,
    /// Index `j - 1` holds CPU `j`.
    pub cores: Vec<CoreTrace>,
}

impl RunProfile {
    /// Time span covered by the run: first sample up to one period past the last.
    pub fn span(&self, sample_period: f64) -> (f64, f64) {
        let start = self
            .cores
            .iter()
            .map(|c| c.times[0])
            .fold(f64::INFINITY, f64::min);
        let end = self
            .cores
            .iter()
            .map(CoreTrace::end_time)
            .fold(f64::NEG_INFINITY, f64::max);
        (start, end + sample_period)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProfileDataset {
    pub runs: Vec<RunProfile>,
    pub cores: usize,
    pub sample_period: f64,
    pub features: Vec<String>,
    pub context: String,
}

impl ProfileDataset {
    pub fn len(&self) -> usize {
        self.runs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    /// Checks the invariants `load_profiles` guarantees.
    pub fn validate(&self) -> Result<()> {
        if self.runs.is_empty() {
            return Err(Error::invalid("dataset has no runs"));
        }
        if self.cores == 0 || self.features.is_empty() {
            return Err(Error::invalid(
                "dataset needs J >= 1 and at least one feature",
            ));
        }
        if !(self.sample_period.is_finite() && self.sample_period > 0.0) {
            return Err(Error::invalid(format!(
                "sample period must be positive, got {}",
                self.sample_period
            )));
        }
        let d = self.dim();
        for run in &self.runs {
            if run.cores.len() != self.cores {
                return Err(Error::invalid(format!(
                    "{}: {} cpus, dataset declares J = {}",
                    run.source.display(),
                    run.cores.len(),
                    self.cores
                )));
            }
            for (j, c) in run.cores.iter().enumerate() {
                if c.times.is_empty() || c.values.dim() != (c.times.len(), d) {
                    return Err(Error::invalid(format!(
                        "{}: cpu {} has a malformed trace",
                        run.source.display(),
                        j + 1
                    )));
                }
                if c.times.windows(2).any(|w| !(w[0] < w[1])) {
                    return Err(Error::invalid(format!(
                        "{}: cpu {} timestamps are not strictly increasing",
                        run.source.display(),
                        j + 1
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn manifest(&self, run_paths: Vec<PathBuf>) -> Manifest {
        Manifest {
            runs: run_paths,
            cores: self.cores,
            sample_period_s: self.sample_period,
            features: self.features.clone(),
            context: self.context.clone(),
        }
    }

    /// Writes `run_NNN.csv` files and a manifest into `dir`; returns every file written.
    pub fn write_to_dir(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        self.validate()?;
        fs::create_dir_all(dir)?;
        let width = self.runs.len().to_string().len().max(3);
        let mut names = Vec::with_capacity(self.runs.len());
        let mut written = Vec::with_capacity(self.runs.len() + 1);
        for (i, run) in self.runs.iter().enumerate() {
            let name = PathBuf::from(format!("run_{i:0width$}.csv"));
            let path = dir.join(&name);
            let file = fs::File::create(&path)?;
            write_run_csv(run, &self.features, std::io::BufWriter::new(file))?;
            names.push(name);
            written.push(path);
        }
        let path = dir.join(MANIFEST_NAME);
        let mut text = serde_json::to_string_pretty(&self.manifest(names))?;
        text.push('\n');
        fs::write(&path, text)?;
        written.push(path);
        Ok(written)
    }
}

/// Rows sorted by time, then cpu.
pub fn write_run_csv<W: Write>(run: &RunProfile, features: &[String], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut head = vec!["time_s".to_string(), "cpu".to_string()];
    head.extend(features.iter().cloned());
    w.write_record(&head)?;
    let mut rows: Vec<(f64, usize, usize)> = run
        .cores
        .iter()
        .enumerate()
        .flat_map(|(j, c)| c.times.iter().enumerate().map(move |(k, &t)| (t, j, k)))
        .collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut rec = Vec::with_capacity(features.len() + 2);
    for (t, j, k) in rows {
        rec.clear();
        rec.push(t.to_string());
        rec.push((j + 1).to_string());
        rec.extend(run.cores[j].values.row(k).iter().map(|x| x.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses one run CSV. `cores` is the declared `J`; every cpu in `1..=J` must appear.
pub fn parse_run_csv<R: Read>(
    input: R,
    source: &Path,
    cores: usize,
) -> Result<(Vec<String>, RunProfile)> {
    let err = |line: u64, message: String| Error::Profile {
        file: source.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let head = rdr.headers()?.clone();
    if head.len() < 3 || &head[0] != "time_s" || &head[1] != "cpu" {
        return Err(err(
            1,
            "header must be `time_s,cpu,<feature>...` with at least one feature".into(),
        ));
    }
    let features: Vec<String> = head.iter().skip(2).map(str::to_string).collect();
    let d = features.len();

    let mut times: Vec<Vec<f64>> = vec![Vec::new(); cores];
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); cores];
    let mut rec = csv::StringRecord::new();
    loop {
        let more = rdr.read_record(&mut rec).map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            err(line, e.to_string())
        })?;
        if !more {
            break;
        }
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != d + 2 {
            return Err(err(
                line,
                format!("expected {} fields, found {}", d + 2, rec.len()),
            ));
        }
        let num = |k: usize| -> Result<f64> {
            let v: f64 = rec[k].parse().map_err(|_| {
                err(
                    line,
                    format!("column `{}`: `{}` is not a number", &head[k], &rec[k]),
                )
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(err(line, format!("column `{}` is not finite", &head[k])))
            }
        };
        let t = num(0)?;
        let cpu: usize = rec[1]
            .parse()
            .map_err(|_| err(line, format!("cpu `{}` is not an integer", &rec[1])))?;
        if cpu < 1 || cpu > cores {
            return Err(err(line, format!("cpu {cpu} is outside 1..={cores}")));
        }
        let ts = &mut times[cpu - 1];
        if let Some(&prev) = ts.last() {
            if t == prev {
                return Err(err(
                    line,
                    format!("duplicate sample for cpu {cpu} at time {t}"),
                ));
            }
            if t < prev {
                return Err(err(
                    line,
                    format!("timestamp {t} for cpu {cpu} decreases from {prev}"),
                ));
            }
        }
        ts.push(t);
        for k in 0..d {
            values[cpu - 1].push(num(k + 2)?);
        }
    }
    if times.iter().all(Vec::is_empty) {
        return Err(err(1, "no samples".into()));
    }
    if let Some(j) = times.iter().position(Vec::is_empty) {
        return Err(err(1, format!("cpu {} has no samples", j + 1)));
    }
    let cores = times
        .into_iter()
        .zip(values)
        .map(|(t, v)| {
            let n = t.len();
            CoreTrace {
                times: t,
                values: Array2::from_shape_vec((n, d), v).expect("row-major samples"),
            }
        })
        .collect();
    Ok((
        features,
        RunProfile {
            source: source.to_path_buf(),
            cores,
        },
    ))
}

/// Loads a dataset from a manifest file or a directory containing `manifest.json`.
pub fn load_profiles(path: &Path) -> Result<ProfileDataset> {
    let manifest_path = if path.is_dir() {
        let candidate = path.join(MANIFEST_NAME);
        if !candidate.exists() {
            return Err(Error::NoRuns(path.to_path_buf()));
        }
        candidate
    } else {
        path.to_path_buf()
    };
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let manifest: Manifest = serde_json::from_slice(&fs::read(&manifest_path)?)?;
    if manifest.runs.is_empty() {
        return Err(Error::NoRuns(manifest_path));
    }
    if manifest.cores == 0 {
        return Err(Error::invalid("manifest declares J = 0"));
    }
    if !(manifest.sample_period_s.is_finite() && manifest.sample_period_s > 0.0) {
        return Err(Error::invalid(format!(
            "manifest sample period must be positive, got {}",
            manifest.sample_period_s
        )));
    }
    let mut seen = BTreeSet::new();
    for r in &manifest.runs {
        if !seen.insert(r) {
            return Err(Error::invalid(format!(
                "run {} is listed twice",
                r.display()
            )));
        }
    }

    let parsed: Vec<(Vec<String>, RunProfile)> = manifest
        .runs
        .par_iter()
        .map(|r| {
            let p = base.join(r);
            let file = fs::File::open(&p).map_err(|e| Error::Profile {
                file: p.clone(),
                line: 0,
                message: e.to_string(),
            })?;
            parse_run_csv(std::io::BufReader::new(file), &p, manifest.cores)
        })
        .collect::<Result<_>>()?;

    let mut runs = Vec::with_capacity(parsed.len());
    for (features, run) in parsed {
        if features != manifest.features {
            return Err(Error::Profile {
                file: run.source,
                line: 1,
                message: format!(
                    "features {:?} differ from manifest {:?}",
                    features, manifest.features
                ),
            });
        }
        runs.push(run);
    }
    let ds = ProfileDataset {
        runs,
        cores: manifest.cores,
        sample_period: manifest.sample_period_s,
        features: manifest.features,
        context: manifest.context,
    };
    ds.validate()?;
    Ok(ds)
}

/// Per-feature affine map to `[0, 1]`; constant features map to 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Normalization {
    /// Ranges over every sample of every run and cpu.
    pub fn from_dataset(ds: &ProfileDataset) -> Self {
        let d = ds.dim();
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for c in ds.runs.iter().flat_map(|r| &r.cores) {
            for row in c.values.rows() {
                for k in 0..d {
                    min[k] = min[k].min(row[k]);
                    max[k] = max[k].max(row[k]);
                }
            }
        }
        Self { min, max }
    }

    pub fn apply(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(&self.min).zip(&self.max) {
            let range = hi - lo;
            *v = if range > 0.0 { (*v - lo) / range } else { 0.0 };
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SnapshotOptions {
    /// Abort when a run does not cover a requested time instead of dropping it.
    pub strict: bool,
    pub normalize: bool,
}

impl Default for SnapshotOptions {
    fn default() -> Self {
        Self {
            strict: false,
            normalize: true,
        }
    }
}

/// A run left out of the marginal at snapshot `sigma` because it does not cover that time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub run: usize,
    pub source: PathBuf,
    pub sigma: usize,
    pub tau: f64,
}

/// Per-core snapshot marginals, before they are attached to a structure.
#[derive(Clone, Debug)]
pub struct Snapshots {
    pub times: Vec<f64>,
    /// `per_core[j - 1][σ - 1]` is the measure of cpu `j` at `τ_σ`, labelled `(j, σ)`.
    pub per_core: Vec<Vec<Marginal>>,
    pub excluded: Vec<Exclusion>,
    pub normalization: Option<Normalization>,
}

impl Snapshots {
    pub fn cores(&self) -> usize {
        self.per_core.len()
    }

    pub fn get(&self, core: usize, sigma: usize) -> Option<&Marginal> {
        self.per_core
            .get(core.checked_sub(1)?)?
            .get(sigma.checked_sub(1)?)
    }
}

/// Reads every run at each `τ_σ` by zero-order hold; weights are uniform over the
/// runs that cover `τ_σ`.
pub fn snapshot_marginals(
    ds: &ProfileDataset,
    times: &[f64],
    opts: SnapshotOptions,
) -> Result<Snapshots> {
    if times.is_empty() {
        return Err(Error::invalid("no snapshot times given"));
    }
    if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::invalid(
            "snapshot times must be finite and strictly increasing",
        ));
    }
    let norm = opts.normalize.then(|| Normalization::from_dataset(ds));
    let d = ds.dim();

    let mut excluded = Vec::new();
    let mut covering: Vec<Vec<usize>> = Vec::with_capacity(times.len());
    for (s, &tau) in times.iter().enumerate() {
        let mut ok = Vec::with_capacity(ds.len());
        for (i, run) in ds.runs.iter().enumerate() {
            let (start, end) = run.span(ds.sample_period);
            let covered =
                tau >= start && tau < end && run.cores.iter().all(|c| c.sample_at(tau).is_some());
            if covered {
                ok.push(i);
            } else {
                excluded.push(Exclusion {
                    run: i,
                    source: run.source.clone(),
                    sigma: s + 1,
                    tau,
                });
            }
        }
        covering.push(ok);
    }
    if opts.strict && !excluded.is_empty() {
        let list: Vec<String> = excluded
            .iter()
            .map(|e| format!("{} does not cover t = {}", e.source.display(), e.tau))
            .collect();
        return Err(Error::OutOfRange(list.join("; ")));
    }
    if let Some(s) = covering.iter().position(Vec::is_empty) {
        return Err(Error::OutOfRange(format!(
            "no run covers snapshot time {}",
            times[s]
        )));
    }

    let mut per_core = Vec::with_capacity(ds.cores);
    for j in 0..ds.cores {
        let mut row = Vec::with_capacity(times.len());
        for (s, &tau) in times.iter().enumerate() {
            let mut pts = Array2::zeros((covering[s].len(), d));
            for (r, &i) in covering[s].iter().enumerate() {
                let trace = &ds.runs[i].cores[j];
                let k = trace.sample_at(tau).expect("covered run");
                let mut x = trace.values.row(k).to_vec();
                if let Some(n) = &norm {
                    n.apply(&mut x);
                }
                pts.row_mut(r).assign(&ndarray::ArrayView1::from(&x));
            }
            row.push(Marginal::uniform(pts, NodeId::new(j + 1, s + 1), tau)?);
        }
        per_core.push(row);
    }
    Ok(Snapshots {
        times: times.to_vec(),
        per_core,
        excluded,
        normalization: norm,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StructureKind {
    Path,
    Bc,
    Sp,
}

impl fmt::Display for StructureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Path => "path",
            Self::Bc => "bc",
            Self::Sp => "sp",
        })
    }
}

impl FromStr for StructureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "path" => Ok(Self::Path),
            "bc" | "barycentric" => Ok(Self::Bc),
            "sp" | "series-parallel" => Ok(Self::Sp),
            other => Err(Error::invalid(format!(
                "unknown structure `{other}` (expected path, bc or sp)"
            ))),
        }
    }
}

/// Attaches snapshot marginals to a structure.
///
/// * `path` needs exactly one cpu.
/// * `bc` adds barycenters of `n0` k-means centroids per snapshot, seeded by `seed`.
/// * `sp` uses the pooled sample of all cpus for the two shared terminal nodes.
pub fn assemble(
    snaps: &Snapshots,
    kind: StructureKind,
    n0: usize,
    seed: u64,
) -> Result<MarginalSet> {
    let s = snaps.times.len();
    let cores = snaps.cores();
    match kind {
        StructureKind::Path => {
            if cores != 1 {
                return Err(Error::invalid(format!(
                    "the path structure needs J = 1, dataset has J = {cores}"
                )));
            }
            MarginalSet::new(GraphStructure::path(s)?, snaps.per_core[0].iter().cloned())
        }
        StructureKind::Bc => {
            let st = GraphStructure::barycentric(cores, s, n0)?;
            let mut all: Vec<Marginal> = snaps.per_core.iter().flatten().cloned().collect();
            for sigma in 1..=s {
                let group: Vec<&Marginal> =
                    snaps.per_core.iter().map(|row| &row[sigma - 1]).collect();
                all.push(barycenter_supports(&group, n0, seed)?.with_label(NodeId::new(0, sigma)));
            }
            MarginalSet::new(st, all)
        }
        StructureKind::Sp => {
            let st = GraphStructure::series_parallel(cores, s)?;
            let mut all = Vec::with_capacity(st.cardinality());
            for sigma in [1, s] {
                all.push(
                    pooled(snaps.per_core.iter().map(|row| &row[sigma - 1]))?
                        .with_label(NodeId::new(1, sigma)),
                );
            }
            for row in &snaps.per_core {
                all.extend(row[1..s - 1].iter().cloned());
            }
            MarginalSet::new(st, all)
        }
    }
}

/// Equal-mass mixture of the given measures on the concatenated support.
fn pooled<'a>(ms: impl Iterator<Item = &'a Marginal>) -> Result<Marginal> {
    let ms: Vec<&Marginal> = ms.collect();
    let first = ms
        .first()
        .ok_or_else(|| Error::invalid("nothing to pool"))?;
    let views: Vec<_> = ms.iter().map(|m| m.points()).collect();
    let pts = ndarray::concatenate(ndarray::Axis(0), &views)
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let share = 1.0 / ms.len() as f64;
    let w: ndarray::Array1<f64> = ms
        .iter()
        .flat_map(|m| m.weights().iter().map(move |x| x * share))
        .collect();
    Marginal::from_masses(pts, w, first.label(), first.time())
}

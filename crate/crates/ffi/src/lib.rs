//! C ABI over `msbridge`.
//!
//! Every fallible call returns an [`MsbStatus`]; on failure the message is kept
//! per thread and can be copied out with [`msb_last_error_message`]. Handles are
//! opaque and must be released with their matching `*_free` function.
//!
//! Arrays cross the boundary as row-major `double` buffers. Core indices are
//! 1-based, with core 0 naming the barycenter chain of a barycentric problem.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use msbridge::model::{GraphStructure, Marginal, MarginalSet, NodeId};
use msbridge::{Error, PredictedDistribution, SolverConfig};
use ndarray::{Array1, Array2, ArrayView1};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MsbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    ShapeMismatch = 3,
    OutOfRange = 4,
    KernelUnderflow = 5,
    /// The solve ran out of sweeps; the handle is still valid and usable.
    NotConverged = 6,
    BufferTooSmall = 7,
    Io = 8,
    Internal = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MsbStructure {
    Path = 0,
    Barycentric = 1,
    SeriesParallel = 2,
}

/// Marginals being assembled for one problem.
pub struct MsbProblem {
    structure: GraphStructure,
    marginals: Vec<Option<Marginal>>,
}

pub struct MsbSolution {
    inner: msbridge::BridgeSolution,
}

pub struct MsbPrediction {
    inner: PredictedDistribution,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("NULs were replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> MsbStatus {
    match err {
        Error::InvalidInput(_)
        | Error::WrongStructure { .. }
        | Error::UnknownNode(_)
        | Error::UnsupportedPair(..) => MsbStatus::InvalidInput,
        Error::DimensionMismatch { .. } | Error::ShapeMismatch(_) => MsbStatus::ShapeMismatch,
        Error::OutOfRange(_) => MsbStatus::OutOfRange,
        Error::KernelUnderflow { .. } => MsbStatus::KernelUnderflow,
        Error::Io(_)
        | Error::NoRuns(_)
        | Error::Profile { .. }
        | Error::Json(_)
        | Error::Csv(_) => MsbStatus::Io,
        _ => MsbStatus::Internal,
    }
}

enum Fail {
    Status(MsbStatus, String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn fail<T>(status: MsbStatus, msg: impl Into<String>) -> Result<T, Fail> {
    Err(Fail::Status(status, msg.into()))
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<MsbStatus, Fail>) -> MsbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(status)) => status,
        Ok(Err(Fail::Status(status, msg))) => {
            set_last_error(msg);
            status
        }
        Ok(Err(Fail::Lib(e))) => {
            set_last_error(e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            MsbStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(MsbStatus::NullPointer, format!("{what} is NULL"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return fail(MsbStatus::NullPointer, format!("{what} is NULL"));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().map_or_else(
        || fail(MsbStatus::NullPointer, format!("{what} handle is NULL")),
        Ok,
    )
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().map_or_else(
        || fail(MsbStatus::NullPointer, format!("output {what} is NULL")),
        Ok,
    )
}

fn copy_into(src: &[f64], dst: &mut [f64], what: &str) -> Result<(), Fail> {
    if dst.len() < src.len() {
        return fail(
            MsbStatus::BufferTooSmall,
            format!(
                "{what} needs {} values, buffer holds {}",
                src.len(),
                dst.len()
            ),
        );
    }
    dst[..src.len()].copy_from_slice(src);
    Ok(())
}

fn checked_mul(a: usize, b: usize) -> Result<usize, Fail> {
    a.checked_mul(b)
        .map_or_else(|| fail(MsbStatus::InvalidInput, "array size overflows"), Ok)
}

/// Copies the last error message on this thread into `buf`, NUL-terminated and
/// truncated to `len` bytes. Returns the full message length excluding the NUL,
/// or 0 when no error has been recorded.
///
/// # Safety
/// `buf` must be NULL or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn msb_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Creates an empty problem. `bary_support` is only read for barycentric structures.
///
/// # Safety
/// `out` must be a valid pointer to a `MsbProblem *`.
#[no_mangle]
pub unsafe extern "C" fn msb_problem_new(
    structure: MsbStructure,
    cores: usize,
    snapshots: usize,
    bary_support: usize,
    out: *mut *mut MsbProblem,
) -> MsbStatus {
    guard(|| {
        let out = out_ptr(out, "problem")?;
        *out = ptr::null_mut();
        let structure = match structure {
            MsbStructure::Path if cores != 1 => {
                return fail(
                    MsbStatus::InvalidInput,
                    "a path structure has exactly one core",
                )
            }
            MsbStructure::Path => GraphStructure::path(snapshots)?,
            MsbStructure::Barycentric => {
                GraphStructure::barycentric(cores, snapshots, bary_support)?
            }
            MsbStructure::SeriesParallel => GraphStructure::series_parallel(cores, snapshots)?,
        };
        let n = structure.cardinality();
        *out = Box::into_raw(Box::new(MsbProblem {
            structure,
            marginals: vec![None; n],
        }));
        Ok(MsbStatus::Ok)
    })
}

/// Sets the marginal at node `(core, snapshot)`: `n` points of dimension `dim`
/// (row-major) with positive weights summing to one.
///
/// # Safety
/// `problem` must come from [`msb_problem_new`]; `points` must hold `n * dim`
/// doubles and `weights` `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn msb_problem_set_marginal(
    problem: *mut MsbProblem,
    core: usize,
    snapshot: usize,
    time: f64,
    points: *const f64,
    weights: *const f64,
    n: usize,
    dim: usize,
) -> MsbStatus {
    guard(|| {
        let p = problem.as_mut().map_or_else(
            || fail(MsbStatus::NullPointer, "problem handle is NULL"),
            Ok,
        )?;
        let node = NodeId::new(core, snapshot);
        let Some(axis) = p.structure.axis(node) else {
            return fail(
                MsbStatus::InvalidInput,
                format!("node {node} is not in the index set"),
            );
        };
        let pts = slice(points, checked_mul(n, dim)?, "points")?;
        let w = slice(weights, n, "weights")?;
        let pts = Array2::from_shape_vec((n, dim), pts.to_vec())
            .map_err(|e| Fail::Status(MsbStatus::ShapeMismatch, e.to_string()))?;
        p.marginals[axis] = Some(Marginal::new(pts, Array1::from(w.to_vec()), node, time)?);
        Ok(MsbStatus::Ok)
    })
}

/// # Safety
/// `problem` must be NULL or come from [`msb_problem_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn msb_problem_free(problem: *mut MsbProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Runs multimarginal Sinkhorn. On [`MsbStatus::NotConverged`] `*out` still
/// receives a solution holding the last scalings.
///
/// # Safety
/// `problem` must come from [`msb_problem_new`]; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn msb_solve(
    problem: *const MsbProblem,
    epsilon: f64,
    tolerance: f64,
    max_iterations: usize,
    normalize_costs: bool,
    out: *mut *mut MsbSolution,
) -> MsbStatus {
    guard(|| {
        let out = out_ptr(out, "solution")?;
        *out = ptr::null_mut();
        let p = handle(problem, "problem")?;
        let mut ms = Vec::with_capacity(p.marginals.len());
        for (m, node) in p.marginals.iter().zip(p.structure.nodes()) {
            match m {
                Some(m) => ms.push(m.clone()),
                None => {
                    return fail(
                        MsbStatus::InvalidInput,
                        format!("marginal {node} was never set"),
                    )
                }
            }
        }
        let set = MarginalSet::new(p.structure, ms)?;
        let config = SolverConfig {
            epsilon,
            tolerance,
            max_iterations,
            normalize_costs,
        };
        let sol = msbridge::solve(&set, &config)?;
        let status = if sol.converged() {
            MsbStatus::Ok
        } else {
            set_last_error(format!("no convergence after {} sweeps", sol.iterations()));
            MsbStatus::NotConverged
        };
        *out = Box::into_raw(Box::new(MsbSolution { inner: sol }));
        Ok(status)
    })
}

/// # Safety
/// `solution` must be NULL or a live solution handle.
#[no_mangle]
pub unsafe extern "C" fn msb_solution_iterations(solution: *const MsbSolution) -> usize {
    solution.as_ref().map_or(0, |s| s.inner.iterations())
}

/// # Safety
/// `solution` must be NULL or a live solution handle.
#[no_mangle]
pub unsafe extern "C" fn msb_solution_converged(solution: *const MsbSolution) -> bool {
    solution.as_ref().is_some_and(|s| s.inner.converged())
}

/// Largest L1 gap between a marginal of the solved plan and its target.
///
/// # Safety
/// `solution` must be a live solution handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn msb_solution_max_residual(
    solution: *const MsbSolution,
    out: *mut f64,
) -> MsbStatus {
    guard(|| {
        let s = handle(solution, "solution")?;
        *out_ptr(out, "residual")? = s.inner.max_residual()?;
        Ok(MsbStatus::Ok)
    })
}

/// Copies the scaling vector of node `(core, snapshot)` into `buf`; `*written`
/// receives its length. Pass `buf = NULL, len = 0` to query the length alone.
///
/// # Safety
/// `buf` must hold `len` writable doubles; `written` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn msb_solution_scaling(
    solution: *const MsbSolution,
    core: usize,
    snapshot: usize,
    buf: *mut f64,
    len: usize,
    written: *mut usize,
) -> MsbStatus {
    guard(|| {
        let s = handle(solution, "solution")?;
        let written = out_ptr(written, "length")?;
        let node = NodeId::new(core, snapshot);
        let Some(u) = s.inner.scalings().get(node) else {
            return fail(
                MsbStatus::InvalidInput,
                format!("node {node} is not in the index set"),
            );
        };
        *written = u.len();
        if buf.is_null() && len == 0 {
            return Ok(MsbStatus::Ok);
        }
        copy_into(
            u.as_slice().expect("contiguous"),
            slice_mut(buf, len, "buffer")?,
            "scaling",
        )?;
        Ok(MsbStatus::Ok)
    })
}

/// Unimarginal projection of the solved plan onto node `(core, snapshot)`.
/// Same buffer protocol as [`msb_solution_scaling`].
///
/// # Safety
/// `buf` must hold `len` writable doubles; `written` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn msb_solution_projection(
    solution: *const MsbSolution,
    core: usize,
    snapshot: usize,
    buf: *mut f64,
    len: usize,
    written: *mut usize,
) -> MsbStatus {
    guard(|| {
        let s = handle(solution, "solution")?;
        let written = out_ptr(written, "length")?;
        let p = s.inner.workspace().proj(NodeId::new(core, snapshot))?;
        *written = p.len();
        if buf.is_null() && len == 0 {
            return Ok(MsbStatus::Ok);
        }
        copy_into(
            p.as_slice().expect("contiguous"),
            slice_mut(buf, len, "buffer")?,
            "projection",
        )?;
        Ok(MsbStatus::Ok)
    })
}

/// # Safety
/// `solution` must be NULL or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn msb_solution_free(solution: *mut MsbSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// Predicted distribution of core `core` at time `tau`.
///
/// # Safety
/// `solution` must be a live solution handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn msb_predict(
    solution: *const MsbSolution,
    core: usize,
    tau: f64,
    out: *mut *mut MsbPrediction,
) -> MsbStatus {
    guard(|| {
        let out = out_ptr(out, "prediction")?;
        *out = ptr::null_mut();
        let s = handle(solution, "solution")?;
        let inner = msbridge::interpolate(&s.inner, core, tau)?;
        *out = Box::into_raw(Box::new(MsbPrediction { inner }));
        Ok(MsbStatus::Ok)
    })
}

/// # Safety
/// `prediction` must be NULL or a live prediction handle.
#[no_mangle]
pub unsafe extern "C" fn msb_prediction_len(prediction: *const MsbPrediction) -> usize {
    prediction.as_ref().map_or(0, |p| p.inner.len())
}

/// # Safety
/// `prediction` must be NULL or a live prediction handle.
#[no_mangle]
pub unsafe extern "C" fn msb_prediction_dim(prediction: *const MsbPrediction) -> usize {
    prediction.as_ref().map_or(0, |p| p.inner.dim())
}

/// Copies the support (`len * dim` doubles, row-major) and weights (`len` doubles).
///
/// # Safety
/// `points` must hold `points_len` and `weights` `weights_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn msb_prediction_copy(
    prediction: *const MsbPrediction,
    points: *mut f64,
    points_len: usize,
    weights: *mut f64,
    weights_len: usize,
) -> MsbStatus {
    guard(|| {
        let p = &handle(prediction, "prediction")?.inner;
        let pts: Vec<f64> = p.points.iter().copied().collect();
        copy_into(&pts, slice_mut(points, points_len, "points")?, "points")?;
        copy_into(
            p.weights.as_slice().expect("contiguous"),
            slice_mut(weights, weights_len, "weights")?,
            "weights",
        )?;
        Ok(MsbStatus::Ok)
    })
}

/// # Safety
/// `prediction` must be NULL or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn msb_prediction_free(prediction: *mut MsbPrediction) {
    if !prediction.is_null() {
        drop(Box::from_raw(prediction));
    }
}

unsafe fn marginal_from_raw(
    points: *const f64,
    weights: *const f64,
    n: usize,
    dim: usize,
) -> Result<Marginal, Fail> {
    let pts = slice(points, checked_mul(n, dim)?, "points")?;
    let w = slice(weights, n, "weights")?;
    let pts = Array2::from_shape_vec((n, dim), pts.to_vec())
        .map_err(|e| Fail::Status(MsbStatus::ShapeMismatch, e.to_string()))?;
    Ok(Marginal::new(
        pts,
        Array1::from(w.to_vec()),
        NodeId::new(1, 1),
        0.0,
    )?)
}

/// Exact 2-Wasserstein distance between two weighted point clouds in `R^dim`.
///
/// # Safety
/// `a_points` must hold `n * dim` doubles, `a_weights` `n`; likewise for `b` with `m`.
#[no_mangle]
pub unsafe extern "C" fn msb_wasserstein2(
    a_points: *const f64,
    a_weights: *const f64,
    n: usize,
    b_points: *const f64,
    b_weights: *const f64,
    m: usize,
    dim: usize,
    out: *mut f64,
) -> MsbStatus {
    guard(|| {
        let out = out_ptr(out, "distance")?;
        let a = marginal_from_raw(a_points, a_weights, n, dim)?;
        let b = marginal_from_raw(b_points, b_weights, m, dim)?;
        *out = msbridge::wasserstein2(&a, &b)?;
        Ok(MsbStatus::Ok)
    })
}

/// Hilbert projective distance between two positive vectors of length `n`.
///
/// # Safety
/// `u` and `v` must each hold `n` doubles; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn msb_hilbert_metric(
    u: *const f64,
    v: *const f64,
    n: usize,
    out: *mut f64,
) -> MsbStatus {
    guard(|| {
        let out = out_ptr(out, "distance")?;
        let u = slice(u, n, "u")?;
        let v = slice(v, n, "v")?;
        *out = msbridge::hilbert_metric(ArrayView1::from(u), ArrayView1::from(v))?;
        Ok(MsbStatus::Ok)
    })
}

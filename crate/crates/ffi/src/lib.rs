//! C ABI over `repmtl`.
//!
//! Every fallible function returns a [`RepmtlStatus`]. On failure a message
//! can be read with [`repmtl_last_error`] on the same thread. Matrices are
//! dense row-major `double` arrays. Handles are opaque and must be released
//! with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::{DMatrix, DVector};
use repmtl::losses::{ModelFamily, TaskData};
use repmtl::mtl::{recommended_gamma, recommended_lambda, rl_mtl, MtlConfig, MtlFit};
use repmtl::rank::{estimate_r, RankConfig, RankMode};
use repmtl::tl::rl_tl;
use repmtl::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RepmtlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    RankDeficient = 4,
    Singular = 5,
    NonConvergence = 6,
    NumericalFailure = 7,
    NoRankDetected = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// Values accepted by the `family` parameters.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RepmtlFamily {
    Linear = 0,
    Logistic = 1,
    /// `g(u) = u + bend·tanh(u)`; `family_param` is `bend`.
    Tanh = 2,
}

/// A list of tasks sharing the same number of features.
pub struct RepmtlTaskSet {
    tasks: Vec<TaskData>,
}

/// Result of [`repmtl_mtl_fit`].
pub struct RepmtlMtlFit {
    fit: MtlFit,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

type Failure = (RepmtlStatus, String);

fn status_of(e: &Error) -> RepmtlStatus {
    match e {
        Error::ShapeMismatch(_) => RepmtlStatus::ShapeMismatch,
        Error::InvalidArgument(_) | Error::EmptySubset => RepmtlStatus::InvalidArgument,
        Error::RankDeficient(_) => RepmtlStatus::RankDeficient,
        Error::Singular => RepmtlStatus::Singular,
        Error::NonConvergence { .. } => RepmtlStatus::NonConvergence,
        Error::NoRankDetected { .. } => RepmtlStatus::NoRankDetected,
        Error::LossOverflow | Error::NonFiniteObjective => RepmtlStatus::NumericalFailure,
    }
}

fn lib_err(e: Error) -> Failure {
    (status_of(&e), e.to_string())
}

fn invalid(msg: impl Into<String>) -> Failure {
    (RepmtlStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RepmtlStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RepmtlStatus::Ok,
        Ok(Err((status, message))) => {
            set_last_error(message);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal error: {msg}"));
            RepmtlStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err((RepmtlStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

fn family_from(family: i32, param: f64) -> Result<ModelFamily, Failure> {
    let f = match family {
        0 => ModelFamily::Linear,
        1 => ModelFamily::logistic(),
        2 => ModelFamily::tanh_link(param),
        other => return Err(invalid(format!("unknown family {other}"))),
    };
    f.spot_check().map_err(lib_err)?;
    Ok(f)
}

/// # Safety
/// `x` must point to `n·p` doubles and `y` to `n` doubles.
unsafe fn task_from_raw(x: *const f64, y: *const f64, n: usize, p: usize) -> Result<TaskData, Failure> {
    non_null(x, "x")?;
    non_null(y, "y")?;
    if n == 0 || p == 0 {
        return Err(invalid("n and p must be positive"));
    }
    let len = n.checked_mul(p).ok_or_else(|| invalid("n·p overflows"))?;
    let xs = std::slice::from_raw_parts(x, len);
    let ys = std::slice::from_raw_parts(y, n);
    TaskData::new(DMatrix::from_row_slice(n, p, xs), DVector::from_column_slice(ys)).map_err(lib_err)
}

/// # Safety
/// `out` must be valid for `len` writes.
unsafe fn copy_out(values: &[f64], out: *mut f64, len: usize) -> Result<(), Failure> {
    non_null(out, "out")?;
    if len < values.len() {
        return Err((
            RepmtlStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", values.len()),
        ));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

/// Message describing the last failure on this thread, or null. The pointer
/// stays valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn repmtl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// `√(r(p + ln T))`.
#[no_mangle]
pub extern "C" fn repmtl_recommended_lambda(r: usize, p: usize, tasks: usize) -> f64 {
    recommended_lambda(r, p, tasks)
}

/// `0.5·√(p + ln T)`.
#[no_mangle]
pub extern "C" fn repmtl_recommended_gamma(p: usize, tasks: usize) -> f64 {
    recommended_gamma(p, tasks)
}

#[no_mangle]
pub extern "C" fn repmtl_task_set_new() -> *mut RepmtlTaskSet {
    Box::into_raw(Box::new(RepmtlTaskSet { tasks: Vec::new() }))
}

/// # Safety
/// `set` must be null or a handle from [`repmtl_task_set_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn repmtl_task_set_free(set: *mut RepmtlTaskSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Appends a task with `n x p` design `x` (row-major) and response `y`.
///
/// # Safety
/// `set` must be a live handle; `x` must hold `n·p` doubles and `y` `n`.
#[no_mangle]
pub unsafe extern "C" fn repmtl_task_set_add(
    set: *mut RepmtlTaskSet,
    x: *const f64,
    y: *const f64,
    n: usize,
    p: usize,
) -> RepmtlStatus {
    guard(|| {
        non_null(set, "set")?;
        let set = &mut *set;
        let task = task_from_raw(x, y, n, p)?;
        if let Some(first) = set.tasks.first() {
            if first.p() != p {
                return Err((
                    RepmtlStatus::ShapeMismatch,
                    format!("task has p={p} but the set has p={}", first.p()),
                ));
            }
        }
        set.tasks.push(task);
        Ok(())
    })
}

/// # Safety
/// `set` must be a live handle and `len` writable.
#[no_mangle]
pub unsafe extern "C" fn repmtl_task_set_len(set: *const RepmtlTaskSet, len: *mut usize) -> RepmtlStatus {
    guard(|| {
        non_null(set, "set")?;
        non_null(len, "len")?;
        *len = (*set).tasks.len();
        Ok(())
    })
}

/// Runs the two-step multi-task estimator with intrinsic dimension `r` and
/// penalty scales `lambda`, `gamma`. On success `*out` receives a new handle.
///
/// # Safety
/// `set` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn repmtl_mtl_fit(
    set: *const RepmtlTaskSet,
    family: i32,
    family_param: f64,
    r: usize,
    lambda: f64,
    gamma: f64,
    out: *mut *mut RepmtlMtlFit,
) -> RepmtlStatus {
    guard(|| {
        non_null(set, "set")?;
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let tasks = &(*set).tasks;
        let family = family_from(family, family_param)?;
        let config = MtlConfig::new(lambda, gamma, r);
        let fit = rl_mtl(tasks, &family, &config).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(RepmtlMtlFit { fit }));
        Ok(())
    })
}

/// # Safety
/// `fit` must be null or a handle from [`repmtl_mtl_fit`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn repmtl_mtl_fit_free(fit: *mut RepmtlMtlFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// # Safety
/// `fit` must be a live handle; each output pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn repmtl_mtl_fit_dims(
    fit: *const RepmtlMtlFit,
    p: *mut usize,
    r: *mut usize,
    tasks: *mut usize,
) -> RepmtlStatus {
    guard(|| {
        non_null(fit, "fit")?;
        let f = &(*fit).fit;
        if !p.is_null() {
            *p = f.center.p();
        }
        if !r.is_null() {
            *r = f.center.r();
        }
        if !tasks.is_null() {
            *tasks = f.beta.len();
        }
        Ok(())
    })
}

/// # Safety
/// `fit` must be a live handle and `converged` writable.
#[no_mangle]
pub unsafe extern "C" fn repmtl_mtl_fit_converged(fit: *const RepmtlMtlFit, converged: *mut bool) -> RepmtlStatus {
    guard(|| {
        non_null(fit, "fit")?;
        non_null(converged, "converged")?;
        *converged = (*fit).fit.converged;
        Ok(())
    })
}

/// Copies the `p x r` center representation, row-major, into `out`.
///
/// # Safety
/// `fit` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn repmtl_mtl_fit_center(fit: *const RepmtlMtlFit, out: *mut f64, len: usize) -> RepmtlStatus {
    guard(|| {
        non_null(fit, "fit")?;
        let m = (*fit).fit.center.matrix();
        let rows: Vec<f64> = m.transpose().iter().copied().collect();
        copy_out(&rows, out, len)
    })
}

#[derive(Clone, Copy)]
enum PerTask {
    Beta,
    Step1Beta,
    Theta,
}

unsafe fn per_task(fit: *const RepmtlMtlFit, task: usize, which: PerTask, out: *mut f64, len: usize) -> RepmtlStatus {
    guard(|| {
        non_null(fit, "fit")?;
        let f = &(*fit).fit;
        if task >= f.beta.len() {
            return Err(invalid(format!("task {task} out of range for {} tasks", f.beta.len())));
        }
        let v = match which {
            PerTask::Beta => &f.beta[task],
            PerTask::Step1Beta => &f.step1_beta[task],
            PerTask::Theta => &f.per_task_theta[task],
        };
        copy_out(v.as_slice(), out, len)
    })
}

/// Final coefficients of task `task` (`p` values).
///
/// # Safety
/// `fit` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn repmtl_mtl_fit_beta(fit: *const RepmtlMtlFit, task: usize, out: *mut f64, len: usize) -> RepmtlStatus {
    per_task(fit, task, PerTask::Beta, out, len)
}

/// First-step coefficients `A_t θ_t` of task `task` (`p` values).
///
/// # Safety
/// `fit` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn repmtl_mtl_fit_step1_beta(
    fit: *const RepmtlMtlFit,
    task: usize,
    out: *mut f64,
    len: usize,
) -> RepmtlStatus {
    per_task(fit, task, PerTask::Step1Beta, out, len)
}

/// Low-dimensional parameter of task `task` (`r` values).
///
/// # Safety
/// `fit` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn repmtl_mtl_fit_theta(fit: *const RepmtlMtlFit, task: usize, out: *mut f64, len: usize) -> RepmtlStatus {
    per_task(fit, task, PerTask::Theta, out, len)
}

/// Transfers the fitted center to a target task with `n0 x p` design `x`.
/// Writes `p` coefficients to `beta_out` and, when `theta_out` is not null,
/// the `r` low-dimensional coordinates to `theta_out`.
///
/// # Safety
/// `fit` must be a live handle; `x` must hold `n0·p` doubles, `y` `n0`;
/// `beta_out` and `theta_out` must be valid for `beta_len` and `theta_len`
/// writes.
#[no_mangle]
pub unsafe extern "C" fn repmtl_transfer(
    fit: *const RepmtlMtlFit,
    x: *const f64,
    y: *const f64,
    n0: usize,
    p: usize,
    family: i32,
    family_param: f64,
    gamma: f64,
    beta_out: *mut f64,
    beta_len: usize,
    theta_out: *mut f64,
    theta_len: usize,
) -> RepmtlStatus {
    guard(|| {
        non_null(fit, "fit")?;
        let family = family_from(family, family_param)?;
        let target = task_from_raw(x, y, n0, p)?;
        let tl = rl_tl(&target, &family, &(*fit).fit.center, gamma).map_err(lib_err)?;
        copy_out(tl.beta0.as_slice(), beta_out, beta_len)?;
        if !theta_out.is_null() {
            copy_out(tl.theta0.as_slice(), theta_out, theta_len)?;
        }
        Ok(())
    })
}

/// Estimates the intrinsic dimension of the tasks in `set` by thresholding
/// the singular values of their norm-clipped single-task estimates.
///
/// `n` is the per-task sample size in the threshold (0 uses the smallest
/// task). `n0 > 0` selects the transfer-learning threshold with target size
/// `n0`.
///
/// # Safety
/// `set` must be a live handle and `r_hat` writable.
#[no_mangle]
pub unsafe extern "C" fn repmtl_estimate_rank(
    set: *const RepmtlTaskSet,
    family: i32,
    family_param: f64,
    threshold_t1: f64,
    threshold_t2: f64,
    radius: f64,
    r_bar: f64,
    n: usize,
    n0: usize,
    r_hat: *mut usize,
) -> RepmtlStatus {
    guard(|| {
        non_null(set, "set")?;
        non_null(r_hat, "r_hat")?;
        let tasks = &(*set).tasks;
        let family = family_from(family, family_param)?;
        let config = RankConfig {
            threshold_t1,
            threshold_t2,
            radius,
            r_bar,
            mode: if n0 > 0 { RankMode::Tl } else { RankMode::Mtl },
            n0: (n0 > 0).then_some(n0),
        };
        let n = if n > 0 {
            n
        } else {
            tasks.iter().map(TaskData::n).min().unwrap_or(0)
        };
        let est = estimate_r(tasks, &family, &config, n).map_err(lib_err)?;
        *r_hat = est.r_hat;
        Ok(())
    })
}

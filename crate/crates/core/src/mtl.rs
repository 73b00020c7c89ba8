//! Penalized multi-task estimation with similar representations.
//!
//! Step 1 jointly fits per-task representations `A_t`, parameters `θ_t` and a
//! center `C` by minimizing
//!
//! ```text
//! (1/T) Σ_t [ f_t(A_t θ_t) + (λ/√n_t) ‖A_t A_tᵀ − C Cᵀ‖₂ ]
//! ```
//!
//! Step 2 corrects each task by minimizing `f_t(β) + (γ/√n_t) ‖β − A_t θ_t‖₂`,
//! which keeps every estimate within the single-task rate when the shared
//! structure is wrong for that task.
//!
//! The Step 1 solver is a monotone block-coordinate descent, run from a
//! spectral start and from the shared-representation fit. Each outer round
//! (a) offers every task two candidates, snapping onto the center or a few
//! Riemannian subgradient steps on the Stiefel manifold, and keeps the better
//! one only if the task's term does not increase; (b) proposes the extrinsic
//! mean of the task bases as the new center; (c) takes Riemannian steps on the
//! center while the snapped tasks ride along with it. Every move in (b) and
//! (c) is accepted only if the full objective does not increase, so the
//! objective trace is non-increasing.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{
    empirical_covariance, loss_grad, loss_value, restricted_fit, single_task_fit, Coefficients,
    LowDimParam, ModelFamily, TaskData,
};
use crate::stiefel::{
    extrinsic_mean, orthonormalize, qr_retract, residual_spectral, spectral_penalty_subgradient, tangent_project,
    top_eigenvectors, OrthoBasis,
};

/// `λ = √(r(p + ln T))`.
pub fn recommended_lambda(r: usize, p: usize, tasks: usize) -> f64 {
    (r as f64 * (p as f64 + (tasks as f64).ln())).sqrt()
}

/// `γ = 0.5·√(p + ln T)`.
pub fn recommended_gamma(p: usize, tasks: usize) -> f64 {
    0.5 * (p as f64 + (tasks as f64).ln()).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MtlConfig {
    /// Penalty scale of the representation-similarity term (multiplies `1/√n`).
    pub lambda: f64,
    /// Penalty scale of the Step 2 correction (multiplies `1/√n`).
    pub gamma: f64,
    /// Intrinsic dimension.
    pub r: usize,
    #[serde(default = "default_max_outer_iters")]
    pub max_outer_iters: usize,
    /// Relative objective change below which Step 1 stops.
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_riemannian_step")]
    pub riemannian_step: f64,
    #[serde(default = "default_riemannian_substeps")]
    pub riemannian_substeps: usize,
}

fn default_max_outer_iters() -> usize {
    200
}
fn default_tol() -> f64 {
    1e-7
}
fn default_riemannian_step() -> f64 {
    0.1
}
fn default_riemannian_substeps() -> usize {
    5
}

impl MtlConfig {
    pub fn new(lambda: f64, gamma: f64, r: usize) -> Self {
        Self {
            lambda,
            gamma,
            r,
            max_outer_iters: default_max_outer_iters(),
            tol: default_tol(),
            riemannian_step: default_riemannian_step(),
            riemannian_substeps: default_riemannian_substeps(),
        }
    }

    /// Config with the recommended `λ` and `γ` for `T` tasks in dimension `p`.
    pub fn recommended(r: usize, p: usize, tasks: usize) -> Self {
        Self::new(recommended_lambda(r, p, tasks), recommended_gamma(p, tasks), r)
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if self.r == 0 || self.r > p {
            return Err(Error::InvalidArgument(format!(
                "intrinsic dimension must satisfy 1 <= r <= p = {p}, got {}",
                self.r
            )));
        }
        if self.max_outer_iters == 0 {
            return Err(Error::InvalidArgument("max_outer_iters must be positive".into()));
        }
        if !(self.tol >= 0.0) || !(self.riemannian_step > 0.0) {
            return Err(Error::InvalidArgument("tol must be >= 0 and riemannian_step > 0".into()));
        }
        Ok(())
    }
}

/// Output of Step 1.
#[derive(Debug, Clone)]
pub struct Step1Fit {
    pub bases: Vec<OrthoBasis>,
    pub thetas: Vec<LowDimParam>,
    pub center: OrthoBasis,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

/// Output of the full two-step estimator.
#[derive(Debug, Clone)]
pub struct MtlFit {
    pub per_task_basis: Vec<OrthoBasis>,
    pub per_task_theta: Vec<LowDimParam>,
    pub center: OrthoBasis,
    /// `A_t θ_t` after Step 1.
    pub step1_beta: Vec<Coefficients>,
    /// Step 2 estimates.
    pub beta: Vec<Coefficients>,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

fn check_tasks(data: &[TaskData]) -> Result<usize> {
    let first = data
        .first()
        .ok_or_else(|| Error::InvalidArgument("at least one task is required".into()))?;
    let p = first.p();
    if let Some(bad) = data.iter().position(|d| d.p() != p) {
        return Err(Error::ShapeMismatch(format!(
            "task {bad} has p={} but task 0 has p={p}",
            data[bad].p()
        )));
    }
    Ok(p)
}

fn penalty_weight(lambda: f64, data: &TaskData) -> f64 {
    lambda / (data.n() as f64).sqrt()
}

fn task_term(
    family: &ModelFamily,
    data: &TaskData,
    basis: &DMatrix<f64>,
    theta: &DVector<f64>,
    center: &DMatrix<f64>,
    lambda: f64,
) -> Result<f64> {
    let loss = loss_value(family, data, &(basis * theta))?;
    let dist = if basis == center { 0.0 } else { residual_spectral(basis, center) };
    Ok(loss + penalty_weight(lambda, data) * dist)
}

/// The Step 1 objective
/// `(1/T) Σ_t [f_t(A_t θ_t) + (λ/√n_t) ‖A_t A_tᵀ − C Cᵀ‖₂]`.
pub fn step1_objective(
    data: &[TaskData],
    family: &ModelFamily,
    bases: &[OrthoBasis],
    thetas: &[LowDimParam],
    center: &OrthoBasis,
    lambda: f64,
) -> Result<f64> {
    let p = check_tasks(data)?;
    if bases.len() != data.len() || thetas.len() != data.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} tasks, {} bases, {} parameters",
            data.len(),
            bases.len(),
            thetas.len()
        )));
    }
    for (b, th) in bases.iter().zip(thetas) {
        if b.p() != p || b.r() != center.r() || center.p() != p || th.len() != b.r() {
            return Err(Error::ShapeMismatch(
                "basis, parameter and center shapes disagree".into(),
            ));
        }
    }
    let mut total = 0.0;
    for ((d, b), th) in data.iter().zip(bases).zip(thetas) {
        total += task_term(family, d, b.matrix(), th, center.matrix(), lambda)?;
    }
    let value = total / data.len() as f64;
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFiniteObjective)
    }
}

/// Initial center: top-`r` eigenvectors of `Σ_t β̃_t β̃_tᵀ` over single-task
/// estimates. A task whose single-task fit fails contributes `−∇f_t(0)`.
pub fn initial_center(data: &[TaskData], family: &ModelFamily, r: usize) -> Result<OrthoBasis> {
    let p = check_tasks(data)?;
    if r == 0 || r > p {
        return Err(Error::InvalidArgument(format!("need 1 <= r <= p, got r={r}, p={p}")));
    }
    let mut gram = DMatrix::<f64>::zeros(p, p);
    for d in data {
        let beta = match single_task_fit(family, d) {
            Ok(b) => b,
            Err(_) => -loss_grad(family, d, &DVector::zeros(p))?,
        };
        gram += &beta * beta.transpose();
    }
    let (basis, _) = top_eigenvectors(&gram, r);
    Ok(OrthoBasis::from_trusted(basis))
}

const SHARED_TOL: f64 = 1e-7;
const SHARED_MAX_ROUNDS: usize = 200;

/// Shared-representation fit: `min_{A, θ_t} Σ_t f_t(Aθ_t)` over a single
/// orthonormal `A` by alternating minimization from `start`.
///
/// Given `A`, each `θ_t` is a restricted fit. Given the `θ_t`, the linear
/// family solves the least-squares problem in `A` exactly and re-orthonormalizes;
/// other families take a Riemannian gradient step. Updates that would
/// increase the pooled objective are rejected.
pub fn fit_shared(
    data: &[TaskData],
    family: &ModelFamily,
    start: OrthoBasis,
) -> Result<(OrthoBasis, Vec<LowDimParam>)> {
    let p = check_tasks(data)?;
    if start.p() != p {
        return Err(Error::ShapeMismatch(format!("start has p={} but the tasks have p={p}", start.p())));
    }
    let r = start.r();
    let mut basis = start;
    let fit_all = |a: &OrthoBasis| -> Result<(Vec<LowDimParam>, f64)> {
        let mut thetas = Vec::with_capacity(data.len());
        let mut total = 0.0;
        for d in data {
            let th = restricted_fit(family, d, a)?;
            total += loss_value(family, d, &a.lift(&th))?;
            thetas.push(th);
        }
        Ok((thetas, total))
    };
    let (mut thetas, mut objective) = fit_all(&basis)?;
    if !objective.is_finite() {
        return Err(Error::NonFiniteObjective);
    }
    let mut step = 0.1;
    for _ in 0..SHARED_MAX_ROUNDS {
        let previous = objective;
        let candidate = match family {
            ModelFamily::Linear => shared_least_squares(data, &thetas, basis.p())
                .and_then(|m| orthonormalize(&m).ok()),
            _ => {
                let mut euclid = DMatrix::<f64>::zeros(basis.p(), r);
                for (d, th) in data.iter().zip(&thetas) {
                    euclid += loss_grad(family, d, &basis.lift(th))? * th.transpose();
                }
                let direction = tangent_project(&basis, &euclid);
                let mut found = None;
                for _ in 0..30 {
                    if let Ok(trial) = qr_retract(&basis, &direction, -step) {
                        if let Ok((_, obj)) = fit_all(&trial) {
                            if obj < objective {
                                found = Some(trial);
                                step *= 1.5;
                                break;
                            }
                        }
                    }
                    step *= 0.5;
                }
                found
            }
        };
        let Some(candidate) = candidate else { break };
        match fit_all(&candidate) {
            Ok((th, obj)) if obj <= objective => {
                basis = candidate;
                thetas = th;
                objective = obj;
            }
            _ => break,
        }
        if (previous - objective) / previous.abs().max(f64::MIN_POSITIVE) < SHARED_TOL {
            break;
        }
    }
    Ok((basis, thetas))
}

/// Unconstrained `argmin_A Σ_t (1/n_t)‖Y_t − X_t A θ_t‖²` through the
/// `pr x pr` normal equations in `vec(A)`.
fn shared_least_squares(data: &[TaskData], thetas: &[LowDimParam], p: usize) -> Option<DMatrix<f64>> {
    let r = thetas.first()?.len();
    let dim = p * r;
    let mut normal = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    for (d, th) in data.iter().zip(thetas) {
        let n = d.n() as f64;
        let gram = d.x().tr_mul(d.x()) / n;
        let xty = d.x().tr_mul(d.y()) / n;
        for i in 0..r {
            for a in 0..p {
                rhs[i * p + a] += th[i] * xty[a];
            }
            for j in 0..r {
                let w = th[i] * th[j];
                if w == 0.0 {
                    continue;
                }
                let mut block = normal.view_mut((i * p, j * p), (p, p));
                block += &gram * w;
            }
        }
    }
    let solution = normal.cholesky()?.solve(&rhs);
    Some(DMatrix::from_column_slice(p, r, solution.as_slice()))
}

struct TaskState {
    basis: OrthoBasis,
    theta: LowDimParam,
    term: f64,
    step: f64,
}

/// Best of {keep, snap to center, Riemannian subgradient steps} for one task.
fn update_task(
    family: &ModelFamily,
    data: &TaskData,
    state: TaskState,
    center: &OrthoBasis,
    config: &MtlConfig,
) -> Result<TaskState> {
    let weight = penalty_weight(config.lambda, data);

    let snap = if state.basis != *center {
        restricted_fit(family, data, center).ok().and_then(|theta| {
            loss_value(family, data, &center.lift(&theta))
                .ok()
                .map(|term| (center.clone(), theta, term))
        })
    } else {
        None
    };

    let mut basis = state.basis.clone();
    let mut theta = state.theta.clone();
    let mut term = state.term;
    let mut step = state.step;
    for _ in 0..config.riemannian_substeps {
        let grad_beta = loss_grad(family, data, &basis.lift(&theta))?;
        let mut euclid = &grad_beta * theta.transpose();
        if weight > 0.0 {
            euclid += spectral_penalty_subgradient(&basis, center) * weight;
        }
        let direction = tangent_project(&basis, &euclid);
        if direction.norm() <= 1e-14 {
            break;
        }
        let mut moved = false;
        for _ in 0..30 {
            if let Ok(trial) = qr_retract(&basis, &direction, -step) {
                if let Ok(trial_theta) = restricted_fit(family, data, &trial) {
                    if let Ok(trial_term) =
                        task_term(family, data, trial.matrix(), &trial_theta, center.matrix(), config.lambda)
                    {
                        if trial_term < term {
                            basis = trial;
                            theta = trial_theta;
                            term = trial_term;
                            moved = true;
                            break;
                        }
                    }
                }
            }
            step *= 0.5;
        }
        if !moved {
            step = config.riemannian_step;
            break;
        }
        step = (step * 1.5).min(1e3 * config.riemannian_step);
    }

    let mut best = TaskState {
        basis: state.basis,
        theta: state.theta,
        term: state.term,
        step,
    };
    if let Some((b, th, t)) = snap {
        if t <= best.term {
            best = TaskState { basis: b, theta: th, term: t, step };
        }
    }
    if term < best.term {
        best = TaskState { basis, theta, term, step };
    }
    Ok(best)
}

fn total_objective(terms: &[f64]) -> f64 {
    terms.iter().sum::<f64>() / terms.len() as f64
}

/// Re-evaluates every task term against `center`, refitting the snapped tasks
/// (those listed in `riders`) on `center` itself.
fn evaluate_center(
    data: &[TaskData],
    family: &ModelFamily,
    states: &[TaskState],
    riders: &[bool],
    center: &OrthoBasis,
    lambda: f64,
) -> Option<(Vec<f64>, Vec<Option<LowDimParam>>)> {
    let mut terms = Vec::with_capacity(states.len());
    let mut thetas = Vec::with_capacity(states.len());
    for ((d, s), &rides) in data.iter().zip(states).zip(riders) {
        if rides {
            let theta = restricted_fit(family, d, center).ok()?;
            terms.push(loss_value(family, d, &center.lift(&theta)).ok()?);
            thetas.push(Some(theta));
        } else {
            terms.push(task_term(family, d, s.basis.matrix(), &s.theta, center.matrix(), lambda).ok()?);
            thetas.push(None);
        }
    }
    Some((terms, thetas))
}

struct Descent {
    states: Vec<TaskState>,
    center: OrthoBasis,
    trace: Vec<f64>,
    converged: bool,
}

/// Block-coordinate descent from every task snapped onto `center`.
fn descend(data: &[TaskData], family: &ModelFamily, config: &MtlConfig, start: OrthoBasis) -> Result<Descent> {
    let p = start.p();
    let tasks = data.len();
    let mut center = start;
    let mut states: Vec<TaskState> = data
        .iter()
        .map(|d| {
            let theta = restricted_fit(family, d, &center)?;
            let term = loss_value(family, d, &center.lift(&theta))?;
            Ok(TaskState {
                basis: center.clone(),
                theta,
                term,
                step: config.riemannian_step,
            })
        })
        .collect::<Result<_>>()?;
    let mut objective = total_objective(&states.iter().map(|s| s.term).collect::<Vec<_>>());
    if !objective.is_finite() {
        return Err(Error::NonFiniteObjective);
    }
    let mut trace = vec![objective];
    let mut center_step = config.riemannian_step;
    let mut converged = false;

    for _ in 0..config.max_outer_iters {
        let previous = objective;

        // (a) per-task candidates against the fixed center
        states = states
            .into_par_iter()
            .zip(data.par_iter())
            .map(|(s, d)| update_task(family, d, s, &center, config))
            .collect::<Result<_>>()?;

        // (b) extrinsic mean of the task bases
        let bases: Vec<OrthoBasis> = states.iter().map(|s| s.basis.clone()).collect();
        let mean = extrinsic_mean(&bases)?.basis;
        if mean != center {
            let riders = vec![false; tasks];
            if let Some((terms, _)) = evaluate_center(data, family, &states, &riders, &mean, config.lambda) {
                let current: f64 = total_objective(&states.iter().map(|s| s.term).collect::<Vec<_>>());
                if total_objective(&terms) <= current {
                    center = mean;
                    for (s, t) in states.iter_mut().zip(terms) {
                        s.term = t;
                    }
                }
            }
        }

        // (c) Riemannian steps on the center, carrying the snapped tasks along
        for _ in 0..config.riemannian_substeps {
            let riders: Vec<bool> = states.iter().map(|s| s.basis == center).collect();
            let mut euclid = DMatrix::<f64>::zeros(p, config.r);
            for ((d, s), &rides) in data.iter().zip(&states).zip(&riders) {
                if rides {
                    let g = loss_grad(family, d, &center.lift(&s.theta))?;
                    euclid += &g * s.theta.transpose();
                } else if config.lambda > 0.0 {
                    euclid += spectral_penalty_subgradient(&center, &s.basis)
                        * penalty_weight(config.lambda, d);
                }
            }
            let direction = tangent_project(&center, &euclid);
            if direction.norm() <= 1e-14 {
                break;
            }
            let current = total_objective(&states.iter().map(|s| s.term).collect::<Vec<_>>());
            let mut moved = false;
            for _ in 0..30 {
                if let Ok(trial) = qr_retract(&center, &direction, -center_step) {
                    if let Some((terms, thetas)) =
                        evaluate_center(data, family, &states, &riders, &trial, config.lambda)
                    {
                        if total_objective(&terms) < current {
                            for ((s, t), th) in states.iter_mut().zip(terms).zip(thetas) {
                                s.term = t;
                                if let Some(th) = th {
                                    s.basis = trial.clone();
                                    s.theta = th;
                                }
                            }
                            center = trial;
                            moved = true;
                            break;
                        }
                    }
                }
                center_step *= 0.5;
            }
            if !moved {
                center_step = config.riemannian_step;
                break;
            }
            center_step = (center_step * 1.5).min(1e3 * config.riemannian_step);
        }

        objective = total_objective(&states.iter().map(|s| s.term).collect::<Vec<_>>());
        if !objective.is_finite() {
            return Err(Error::NonFiniteObjective);
        }
        trace.push(objective);
        let scale = previous.abs().max(f64::MIN_POSITIVE);
        if (previous - objective) / scale < config.tol {
            converged = true;
            break;
        }
    }

    Ok(Descent {
        states,
        center,
        trace,
        converged,
    })
}

/// Step 1: joint penalized estimation of the representations and the center.
///
/// The descent runs from two starts: the spectral [`initial_center`], and the
/// shared-representation fit reached from it with every task snapped. The
/// run with the lower final objective is returned.
pub fn fit_step1(data: &[TaskData], family: &ModelFamily, config: &MtlConfig) -> Result<Step1Fit> {
    let p = check_tasks(data)?;
    config.validate(p)?;
    let tasks = data.len();

    let start = initial_center(data, family, config.r)?;
    let shared = fit_shared(data, family, start.clone()).ok().map(|(basis, _)| basis);
    let mut best = descend(data, family, config, start)?;
    if let Some(shared) = shared {
        if let Ok(run) = descend(data, family, config, shared) {
            if run.trace.last() < best.trace.last() {
                best = run;
            }
        }
    }
    let Descent {
        states,
        center,
        trace,
        converged,
    } = best;

    let mut bases = Vec::with_capacity(tasks);
    let mut thetas = Vec::with_capacity(tasks);
    for s in states {
        bases.push(OrthoBasis::new(s.basis.into_matrix())?);
        thetas.push(s.theta);
    }
    Ok(Step1Fit {
        bases,
        thetas,
        center: OrthoBasis::new(center.into_matrix())?,
        objective_trace: trace,
        converged,
    })
}

/// Proximal operator of `τ‖·‖₂`: `(1 − τ/‖v‖)₊ v`.
pub fn prox_l2(v: &DVector<f64>, tau: f64) -> DVector<f64> {
    let tau = tau.max(0.0);
    let norm = v.norm();
    if norm <= tau {
        DVector::zeros(v.len())
    } else {
        v * (1.0 - tau / norm)
    }
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
fn power_iteration(m: &DMatrix<f64>) -> f64 {
    let k = m.nrows();
    let mut v = DVector::from_element(k, 1.0 / (k as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..1000 {
        let w = m * &v;
        let norm = w.norm();
        if norm == 0.0 {
            // the all-ones start can be orthogonal to the range; fall back
            return SymmetricEigen::new(m.clone()).eigenvalues.max().max(0.0);
        }
        let next = v.dot(&w);
        v = w / norm;
        if (next - lambda).abs() <= 1e-12 * next.abs() {
            return next;
        }
        lambda = next;
    }
    lambda
}

const STEP2_TOL: f64 = 1e-9;
const STEP2_MAX_ITERS: usize = 5000;

/// Step 2: `argmin_β f(β) + (γ/√n) ‖β − anchor‖₂`.
///
/// Accelerated proximal gradient on `w = β − anchor` with step `1/L`,
/// `L = curvature · λ_max(Σ̂)`, backtracking when the quadratic upper bound
/// fails, and gradient-based momentum restarts.
pub fn fit_step2(
    data: &TaskData,
    family: &ModelFamily,
    gamma: f64,
    anchor: &Coefficients,
) -> Result<Coefficients> {
    if !(gamma >= 0.0) {
        return Err(Error::InvalidArgument(format!("gamma must be >= 0, got {gamma}")));
    }
    if anchor.len() != data.p() {
        return Err(Error::ShapeMismatch(format!(
            "anchor has {} entries, task has p={}",
            anchor.len(),
            data.p()
        )));
    }
    let weight = gamma / (data.n() as f64).sqrt();
    let mut lipschitz = family.curvature_bound() * power_iteration(&empirical_covariance(data));
    if !(lipschitz > 0.0 && lipschitz.is_finite()) {
        lipschitz = 1.0;
    }

    let f = |w: &DVector<f64>| loss_value(family, data, &(anchor + w));
    let mut w = DVector::<f64>::zeros(data.p());
    let mut y = w.clone();
    let mut momentum = 1.0f64;
    for _ in 0..STEP2_MAX_ITERS {
        let fy = f(&y)?;
        let gy = loss_grad(family, data, &(anchor + &y))?;
        let mut w_next;
        loop {
            let step = 1.0 / lipschitz;
            w_next = prox_l2(&(&y - &gy * step), step * weight);
            let diff = &w_next - &y;
            let bound = fy + gy.dot(&diff) + 0.5 * lipschitz * diff.norm_squared();
            let fw = f(&w_next)?;
            if fw <= bound + 1e-12 * fy.abs().max(1.0) || lipschitz > 1e12 {
                break;
            }
            lipschitz *= 2.0;
        }
        let change = (&w_next - &w).norm();
        let restart = (&y - &w_next).dot(&(&w_next - &w)) > 0.0;
        let next_momentum = if restart {
            1.0
        } else {
            0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt())
        };
        y = if restart {
            w_next.clone()
        } else {
            &w_next + (&w_next - &w) * ((momentum - 1.0) / next_momentum)
        };
        momentum = next_momentum;
        w = w_next;
        if change <= STEP2_TOL {
            return Ok(anchor + w);
        }
    }
    Err(Error::NonConvergence {
        solver: "accelerated proximal gradient",
        iterations: STEP2_MAX_ITERS,
        residual: f64::NAN,
        last_iterate: (anchor + w).iter().copied().collect(),
    })
}

/// Two-step representation multi-task learning.
pub fn rl_mtl(data: &[TaskData], family: &ModelFamily, config: &MtlConfig) -> Result<MtlFit> {
    let step1 = fit_step1(data, family, config)?;
    let step1_beta: Vec<Coefficients> = step1
        .bases
        .iter()
        .zip(&step1.thetas)
        .map(|(a, th)| a.lift(th))
        .collect();
    let beta = data
        .par_iter()
        .zip(step1_beta.par_iter())
        .map(|(d, anchor)| fit_step2(d, family, config.gamma, anchor))
        .collect::<Result<Vec<_>>>()?;
    Ok(MtlFit {
        per_task_basis: step1.bases,
        per_task_theta: step1.thetas,
        center: step1.center,
        step1_beta,
        beta,
        objective_trace: step1.objective_trace,
        converged: step1.converged,
    })
}

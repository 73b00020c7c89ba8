//! Model families, their empirical losses, and the single-task and
//! subspace-restricted minimizers.
//!
//! Every family is handled through a design matrix `Z` and a coefficient `c`
//! with linear predictor `u = Zc`. The full problem uses `Z = X`; restricting
//! to a representation `A` uses `Z = XA`, so one set of solvers serves both.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::stiefel::OrthoBasis;

/// Regression coefficients `β ∈ ℝ^p`.
pub type Coefficients = DVector<f64>;

/// Low-dimensional parameter `θ ∈ ℝ^r`.
pub type LowDimParam = DVector<f64>;

/// One task's sample: an `n x p` design and its `n` responses.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl TaskData {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::InvalidArgument("task needs n >= 1 and p >= 1".into()));
        }
        if x.nrows() != y.len() {
            return Err(Error::ShapeMismatch(format!(
                "design has {} rows but response has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("task data has non-finite entries".into()));
        }
        Ok(Self { x, y })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }
}

/// Cumulant function `ψ` of a canonical GLM, `p(y|x) ∝ exp{y·xᵀβ − ψ(xᵀβ)}`.
///
/// Implementations must be convex with `ψ''` bounded by `curvature_bound`.
pub trait GlmCumulant: Send + Sync {
    fn name(&self) -> &str;
    fn psi(&self, u: f64) -> f64;
    fn psi_prime(&self, u: f64) -> f64;
    fn psi_second(&self, u: f64) -> f64;
    /// Upper bound on `ψ''` over the real line.
    fn curvature_bound(&self) -> f64;
}

/// Monotone link `g` of the model `y = g(xᵀβ) + ε`.
pub trait LinkFunction: Send + Sync {
    fn name(&self) -> &str;
    fn g(&self, u: f64) -> f64;
    fn g_prime(&self, u: f64) -> f64;
    /// Upper bound on `|g'|` over the real line.
    fn slope_bound(&self) -> f64;
}

/// Logistic regression, `ψ(u) = log(1 + eᵘ)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Logistic;

impl GlmCumulant for Logistic {
    fn name(&self) -> &str {
        "logistic"
    }

    fn psi(&self, u: f64) -> f64 {
        u.max(0.0) + (-u.abs()).exp().ln_1p()
    }

    fn psi_prime(&self, u: f64) -> f64 {
        sigmoid(u)
    }

    fn psi_second(&self, u: f64) -> f64 {
        let s = sigmoid(u);
        s * (1.0 - s)
    }

    fn curvature_bound(&self) -> f64 {
        0.25
    }
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// `g(u) = u + bend·tanh(u)`; monotone with `g' ∈ [1, 1 + bend]` for `bend >= 0`.
#[derive(Debug, Clone, Copy)]
pub struct TanhLink {
    pub bend: f64,
}

impl LinkFunction for TanhLink {
    fn name(&self) -> &str {
        "tanh_linear"
    }

    fn g(&self, u: f64) -> f64 {
        u + self.bend * u.tanh()
    }

    fn g_prime(&self, u: f64) -> f64 {
        let c = u.cosh();
        1.0 + self.bend / (c * c)
    }

    fn slope_bound(&self) -> f64 {
        1.0 + self.bend.max(0.0)
    }
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A GLM cumulant assembled from closures.
#[derive(Clone)]
pub struct CustomCumulant {
    pub name: String,
    pub psi: ScalarFn,
    pub psi_prime: ScalarFn,
    pub psi_second: ScalarFn,
    pub curvature_bound: f64,
}

impl GlmCumulant for CustomCumulant {
    fn name(&self) -> &str {
        &self.name
    }
    fn psi(&self, u: f64) -> f64 {
        (self.psi)(u)
    }
    fn psi_prime(&self, u: f64) -> f64 {
        (self.psi_prime)(u)
    }
    fn psi_second(&self, u: f64) -> f64 {
        (self.psi_second)(u)
    }
    fn curvature_bound(&self) -> f64 {
        self.curvature_bound
    }
}

/// A link function assembled from closures.
#[derive(Clone)]
pub struct CustomLink {
    pub name: String,
    pub g: ScalarFn,
    pub g_prime: ScalarFn,
    pub slope_bound: f64,
}

impl LinkFunction for CustomLink {
    fn name(&self) -> &str {
        &self.name
    }
    fn g(&self, u: f64) -> f64 {
        (self.g)(u)
    }
    fn g_prime(&self, u: f64) -> f64 {
        (self.g_prime)(u)
    }
    fn slope_bound(&self) -> f64 {
        self.slope_bound
    }
}

/// The loss family shared by all tasks of one problem.
#[derive(Clone)]
pub enum ModelFamily {
    /// `f(β) = (1/n) Σ (yᵢ − xᵢᵀβ)²`
    Linear,
    /// `f(β) = (1/n) Σ [−yᵢ·xᵢᵀβ + ψ(xᵢᵀβ)]`
    Glm(Arc<dyn GlmCumulant>),
    /// `f(β) = (1/n) Σ [yᵢ − g(xᵢᵀβ)]²`
    Nonlinear(Arc<dyn LinkFunction>),
}

impl fmt::Debug for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelFamily::Linear => write!(f, "Linear"),
            ModelFamily::Glm(c) => write!(f, "Glm({})", c.name()),
            ModelFamily::Nonlinear(g) => write!(f, "Nonlinear({})", g.name()),
        }
    }
}

/// Floor on `ψ''` inside Newton steps.
const CURVATURE_FLOOR: f64 = 1e-12;

impl ModelFamily {
    pub fn logistic() -> Self {
        ModelFamily::Glm(Arc::new(Logistic))
    }

    pub fn tanh_link(bend: f64) -> Self {
        ModelFamily::Nonlinear(Arc::new(TanhLink { bend }))
    }

    /// Bound on the loss Hessian in units of `Σ̂`: the step-size constant used
    /// by the proximal solver.
    pub fn curvature_bound(&self) -> f64 {
        match self {
            ModelFamily::Linear => 2.0,
            ModelFamily::Glm(c) => c.curvature_bound(),
            ModelFamily::Nonlinear(g) => 2.0 * g.slope_bound().powi(2),
        }
    }

    /// Spot-checks the documented shape constraints on a grid of points:
    /// convexity and bounded curvature for GLMs, strict monotonicity and a
    /// bounded slope for links.
    pub fn spot_check(&self) -> Result<()> {
        let grid = (0..=200).map(|k| -20.0 + 0.2 * k as f64);
        match self {
            ModelFamily::Linear => Ok(()),
            ModelFamily::Glm(c) => {
                for u in grid {
                    let h = c.psi_second(u);
                    if !(h >= -1e-12 && h <= c.curvature_bound() + 1e-12) {
                        return Err(Error::InvalidArgument(format!(
                            "psi'' = {h} at u = {u} violates convexity or its bound"
                        )));
                    }
                }
                Ok(())
            }
            ModelFamily::Nonlinear(g) => {
                let pts: Vec<f64> = grid.map(|u| g.g_prime(u)).collect();
                let sign = pts[0].signum();
                for (k, d) in pts.iter().enumerate() {
                    if d.signum() != sign || *d == 0.0 || d.abs() > g.slope_bound() + 1e-12 {
                        return Err(Error::InvalidArgument(format!(
                            "g' = {d} at u = {} violates monotonicity or its bound",
                            -20.0 + 0.2 * k as f64
                        )));
                    }
                }
                Ok(())
            }
        }
    }
}

fn check_dims(z: &DMatrix<f64>, y: &DVector<f64>, coef: &DVector<f64>) -> Result<()> {
    if z.ncols() != coef.len() || z.nrows() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "design {}x{}, response {}, coefficients {}",
            z.nrows(),
            z.ncols(),
            y.len(),
            coef.len()
        )));
    }
    Ok(())
}

pub(crate) fn design_loss(
    family: &ModelFamily,
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    coef: &DVector<f64>,
) -> Result<f64> {
    check_dims(z, y, coef)?;
    let u = z * coef;
    let n = y.len() as f64;
    let total: f64 = match family {
        ModelFamily::Linear => u.iter().zip(y.iter()).map(|(ui, yi)| (yi - ui).powi(2)).sum(),
        ModelFamily::Glm(c) => u
            .iter()
            .zip(y.iter())
            .map(|(&ui, &yi)| -yi * ui + c.psi(ui))
            .sum(),
        ModelFamily::Nonlinear(g) => u
            .iter()
            .zip(y.iter())
            .map(|(&ui, &yi)| (yi - g.g(ui)).powi(2))
            .sum(),
    };
    let value = total / n;
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::LossOverflow)
    }
}

pub(crate) fn design_grad(
    family: &ModelFamily,
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    coef: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_dims(z, y, coef)?;
    let u = z * coef;
    let n = y.len() as f64;
    let w: DVector<f64> = match family {
        ModelFamily::Linear => (&u - y) * (2.0 / n),
        ModelFamily::Glm(c) => DVector::from_iterator(
            u.len(),
            u.iter().zip(y.iter()).map(|(&ui, &yi)| (c.psi_prime(ui) - yi) / n),
        ),
        ModelFamily::Nonlinear(g) => DVector::from_iterator(
            u.len(),
            u.iter()
                .zip(y.iter())
                .map(|(&ui, &yi)| -2.0 * (yi - g.g(ui)) * g.g_prime(ui) / n),
        ),
    };
    let grad = z.tr_mul(&w);
    if grad.iter().all(|v| v.is_finite()) {
        Ok(grad)
    } else {
        Err(Error::LossOverflow)
    }
}

/// Empirical loss `f(β)` of `family` on `data`.
pub fn loss_value(family: &ModelFamily, data: &TaskData, beta: &Coefficients) -> Result<f64> {
    design_loss(family, data.x(), data.y(), beta)
}

/// Analytic gradient `∇f(β)`.
pub fn loss_grad(family: &ModelFamily, data: &TaskData, beta: &Coefficients) -> Result<Coefficients> {
    design_grad(family, data.x(), data.y(), beta)
}

/// `Σ̂ = (1/n) XᵀX`.
pub fn empirical_covariance(data: &TaskData) -> DMatrix<f64> {
    let gram = data.x().tr_mul(data.x()) / data.n() as f64;
    (&gram + gram.transpose()) * 0.5
}

/// Least-squares solution of `z·c ≈ y` via QR. `None` when `z` does not have
/// full column rank.
pub(crate) fn least_squares(z: &DMatrix<f64>, y: &DVector<f64>) -> Option<DVector<f64>> {
    let (n, k) = z.shape();
    if n < k {
        return None;
    }
    let qr = z.clone().qr();
    let r = qr.r();
    let sv = r.singular_values();
    let smax = sv.max();
    if smax == 0.0 || sv.min() < 1e-10 * smax {
        return None;
    }
    let qty = qr.q().tr_mul(y);
    r.solve_upper_triangular(&qty)
}

const GLM_TOL: f64 = 1e-8;
const GLM_MAX_ITERS: usize = 200;
const GN_TOL: f64 = 1e-6;
const GN_MAX_ITERS: usize = 500;

/// Minimizes the family's loss over the coefficients of design `z`.
pub(crate) fn fit_design(
    family: &ModelFamily,
    z: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<DVector<f64>> {
    match family {
        ModelFamily::Linear => least_squares(z, y).ok_or(Error::Singular),
        ModelFamily::Glm(c) => {
            let init = DVector::zeros(z.ncols());
            newton(family, z, y, init, "damped Newton", GLM_TOL, GLM_MAX_ITERS, |u| {
                c.psi_second(u).max(CURVATURE_FLOOR)
            })
        }
        ModelFamily::Nonlinear(g) => {
            let init = least_squares(z, y).unwrap_or_else(|| DVector::zeros(z.ncols()));
            // Gauss-Newton: the Hessian of (1/n)Σ(y - g)² with the g'' term dropped
            newton(family, z, y, init, "Gauss-Newton", GN_TOL, GN_MAX_ITERS, |u| {
                2.0 * g.g_prime(u).powi(2)
            })
        }
    }
}

/// Newton-type iteration with Armijo backtracking. `weight(u)` gives the
/// per-sample curvature so the Hessian model is `(1/n) Zᵀ diag(w) Z`.
#[allow(clippy::too_many_arguments)]
fn newton(
    family: &ModelFamily,
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    mut coef: DVector<f64>,
    solver: &'static str,
    tol: f64,
    max_iters: usize,
    weight: impl Fn(f64) -> f64,
) -> Result<DVector<f64>> {
    let n = z.nrows() as f64;
    let mut loss = design_loss(family, z, y, &coef)?;
    let mut grad_norm = f64::INFINITY;
    for _ in 0..max_iters {
        let grad = design_grad(family, z, y, &coef)?;
        grad_norm = grad.norm();
        if grad_norm <= tol {
            return Ok(coef);
        }
        let u = z * &coef;
        let mut weighted = z.clone();
        for (i, ui) in u.iter().enumerate() {
            let w = weight(*ui);
            weighted.row_mut(i).scale_mut(w);
        }
        let hess = z.tr_mul(&weighted) / n;
        let step = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&(-&grad)),
            None => return Err(Error::Singular),
        };
        let slope = grad.dot(&step);
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-12 {
            let trial = &coef + &step * t;
            if let Ok(trial_loss) = design_loss(family, z, y, &trial) {
                if trial_loss <= loss + 1e-4 * t * slope {
                    coef = trial;
                    loss = trial_loss;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let grad = design_grad(family, z, y, &coef)?;
    if grad.norm() <= tol {
        return Ok(coef);
    }
    grad_norm = grad_norm.min(grad.norm());
    Err(Error::NonConvergence {
        solver,
        iterations: max_iters,
        residual: grad_norm,
        last_iterate: coef.iter().copied().collect(),
    })
}

/// Unrestricted minimizer `β̃ = argmin f(β)`.
///
/// Linear: QR least squares. GLM: damped Newton to `‖∇f‖ <= 1e-8` within 200
/// iterations. Nonlinear: Gauss-Newton from the linear fit to `‖∇f‖ <= 1e-6`
/// within 500 iterations.
pub fn single_task_fit(family: &ModelFamily, data: &TaskData) -> Result<Coefficients> {
    fit_design(family, data.x(), data.y())
}

/// `θ_A = argmin_θ f(Aθ)`, solved on the reduced design `XA`.
pub fn restricted_fit(family: &ModelFamily, data: &TaskData, a: &OrthoBasis) -> Result<LowDimParam> {
    if a.p() != data.p() {
        return Err(Error::ShapeMismatch(format!(
            "basis has p={} but task has p={}",
            a.p(),
            data.p()
        )));
    }
    let reduced = data.x() * a.matrix();
    fit_design(family, &reduced, data.y()).map_err(|e| match e {
        Error::Singular => Error::RankDeficient("reduced design XA is rank deficient".into()),
        other => other,
    })
}

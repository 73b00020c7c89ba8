//! Intrinsic-dimension selection by thresholding the singular values of the
//! stacked, norm-clipped single-task estimates.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{single_task_fit, Coefficients, ModelFamily, TaskData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankMode {
    Mtl,
    Tl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankConfig {
    pub threshold_t1: f64,
    pub threshold_t2: f64,
    /// Radius of the ℓ₂ ball the single-task estimates are projected onto.
    pub radius: f64,
    /// Upper bound guess for the intrinsic dimension.
    pub r_bar: f64,
    pub mode: RankMode,
    /// Target sample size, required in `Tl` mode.
    #[serde(default)]
    pub n0: Option<usize>,
}

impl RankConfig {
    /// `T₁ = 1`, `T₂ = 0.05`, `R = 5`, `r̄ = √T`.
    pub fn recommended_mtl(tasks: usize) -> Self {
        Self {
            threshold_t1: 1.0,
            threshold_t2: 0.05,
            radius: 5.0,
            r_bar: (tasks as f64).sqrt(),
            mode: RankMode::Mtl,
            n0: None,
        }
    }

    /// As [`RankConfig::recommended_mtl`] but with `r̄ = √(Tn/n₀)`.
    pub fn recommended_tl(tasks: usize, n: usize, n0: usize) -> Self {
        Self {
            r_bar: (tasks as f64 * n as f64 / n0 as f64).sqrt(),
            mode: RankMode::Tl,
            n0: Some(n0),
            ..Self::recommended_mtl(tasks)
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("threshold_t1", self.threshold_t1),
            ("threshold_t2", self.threshold_t2),
            ("radius", self.radius),
            ("r_bar", self.r_bar),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        match (self.mode, self.n0) {
            (RankMode::Tl, None) | (RankMode::Tl, Some(0)) => Err(Error::InvalidArgument(
                "transfer mode requires a positive n0".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Threshold on `σ_{r'}(B̂/√T)`:
    /// `T₁·√((p + ln T)/n) + T₂·R·r̄^{-3/4}` in `Mtl` mode, with the first
    /// rate replaced by `max(√((p + ln T)/n), √(p/n₀))` in `Tl` mode.
    pub fn threshold(&self, p: usize, tasks: usize, n: usize) -> f64 {
        let mut rate = ((p as f64 + (tasks as f64).ln()) / n as f64).sqrt();
        if let (RankMode::Tl, Some(n0)) = (self.mode, self.n0) {
            rate = rate.max((p as f64 / n0 as f64).sqrt());
        }
        self.threshold_t1 * rate + self.threshold_t2 * self.radius * self.r_bar.powf(-0.75)
    }
}

/// Projection onto the centered ℓ₂ ball of the given radius.
pub fn project_ball(beta: &Coefficients, radius: f64) -> Coefficients {
    let norm = beta.norm();
    if norm <= radius {
        beta.clone()
    } else {
        beta * (radius / norm)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEstimate {
    pub r_hat: usize,
    /// Singular values of `B̂/√T`, descending.
    pub singular_values: Vec<f64>,
    pub threshold: f64,
}

/// Thresholds the singular values of a ready-made `p x T` matrix `B̂`.
pub fn select_rank(b_hat: &DMatrix<f64>, config: &RankConfig, n: usize) -> Result<RankEstimate> {
    config.validate()?;
    let (p, tasks) = b_hat.shape();
    if p == 0 || tasks == 0 || n == 0 {
        return Err(Error::InvalidArgument("B̂ must be non-empty and n positive".into()));
    }
    let scaled = b_hat / (tasks as f64).sqrt();
    let mut singular_values: Vec<f64> = scaled.singular_values().iter().copied().collect();
    singular_values.sort_by(|a, b| b.total_cmp(a));
    let threshold = config.threshold(p, tasks, n);
    let r_hat = singular_values.iter().take_while(|&&s| s >= threshold).count();
    if r_hat == 0 {
        return Err(Error::NoRankDetected {
            sigma_max: singular_values[0],
            singular_values,
            threshold,
        });
    }
    Ok(RankEstimate {
        r_hat,
        singular_values,
        threshold,
    })
}

/// `B̂` with columns `Π_R(β̃_t)` from single-task fits.
pub fn projected_estimates(data: &[TaskData], family: &ModelFamily, radius: f64) -> Result<DMatrix<f64>> {
    let p = data
        .first()
        .ok_or_else(|| Error::InvalidArgument("at least one task is required".into()))?
        .p();
    let mut b_hat = DMatrix::<f64>::zeros(p, data.len());
    for (t, d) in data.iter().enumerate() {
        if d.p() != p {
            return Err(Error::ShapeMismatch(format!("task {t} has p={} instead of {p}", d.p())));
        }
        let beta = single_task_fit(family, d)?;
        b_hat.set_column(t, &project_ball(&beta, radius));
    }
    Ok(b_hat)
}

/// Estimates the intrinsic dimension from the tasks' single-task fits; `n` is
/// the per-task sample size entering the threshold.
pub fn estimate_r(
    data: &[TaskData],
    family: &ModelFamily,
    config: &RankConfig,
    n: usize,
) -> Result<RankEstimate> {
    config.validate()?;
    let b_hat = projected_estimates(data, family, config.radius)?;
    select_rank(&b_hat, config, n)
}

//! Transfer of a learned center representation to a new target task.

use crate::error::{Error, Result};
use crate::losses::{restricted_fit, Coefficients, LowDimParam, ModelFamily, TaskData};
use crate::mtl::fit_step2;
use crate::stiefel::OrthoBasis;

#[derive(Debug, Clone)]
pub struct TlFit {
    /// `θ₀ = argmin_θ f₀(Cθ)`.
    pub theta0: LowDimParam,
    /// `Cθ₀`.
    pub step1_beta0: Coefficients,
    /// `argmin_β f₀(β) + (γ/√n₀) ‖β − Cθ₀‖₂`.
    pub beta0: Coefficients,
}

/// Fits the target on the center's column space, then applies the same
/// proximal correction as multi-task Step 2 with the target sample size `n₀`
/// in the penalty scale.
///
/// Only the reduced `n₀ x r` design has to be well posed, so targets with
/// `r <= n₀ < p` are supported as long as `γ > 0`.
pub fn rl_tl(
    target: &TaskData,
    family: &ModelFamily,
    center: &OrthoBasis,
    gamma: f64,
) -> Result<TlFit> {
    if target.p() != center.p() {
        return Err(Error::ShapeMismatch(format!(
            "target has p={} but the center has p={}",
            target.p(),
            center.p()
        )));
    }
    let theta0 = restricted_fit(family, target, center)?;
    let step1_beta0 = center.lift(&theta0);
    let beta0 = fit_step2(target, family, gamma, &step1_beta0)?;
    Ok(TlFit {
        theta0,
        step1_beta0,
        beta0,
    })
}

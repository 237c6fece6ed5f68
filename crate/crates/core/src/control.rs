//! Sterile-male release policies and their stabilization diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::ControlError;
use crate::model::{ModelParams, SitState};
use crate::quadrature::adaptive_simpson;

/// Release rate as a function of the current state.
///
/// Serialized as a tagged record, e.g. `{ law = "emms", psi = 122.5 }`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "lowercase", deny_unknown_fields)]
pub enum ControlLaw {
    /// No releases.
    Zero,
    /// Constant release rate.
    Constant { rate: f64 },
    /// `u = psi (1 - nu) nu_E E + delta_hat (M + M_s)`: eggs plus total males.
    Emms { psi: f64 },
    /// `u = alpha M + (1 - nu) nu_E sigma E`: eggs plus wild males.
    Em { alpha: f64, sigma: f64 },
}

/// Which linear feedback family a gain belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LawKind {
    Emms,
    Em,
}

impl ControlLaw {
    pub fn validate(&self) -> Result<(), ControlError> {
        let bad = |what: String| Err(ControlError::InvalidLaw(what));
        match *self {
            ControlLaw::Zero => Ok(()),
            ControlLaw::Constant { rate } if !(rate >= 0.0 && rate.is_finite()) => {
                bad(format!("constant rate must be finite and >= 0, got {rate}"))
            }
            ControlLaw::Emms { psi } if !(psi > 0.0 && psi.is_finite()) => {
                bad(format!("psi must be finite and > 0, got {psi}"))
            }
            ControlLaw::Em { alpha, .. } if !(alpha > 0.0 && alpha.is_finite()) => {
                bad(format!("alpha must be finite and > 0, got {alpha}"))
            }
            ControlLaw::Em { sigma, .. } if !(sigma > 0.0 && sigma.is_finite()) => {
                bad(format!("sigma must be finite and > 0, got {sigma}"))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ControlLaw::Zero => "zero",
            ControlLaw::Constant { .. } => "constant",
            ControlLaw::Emms { .. } => "emms",
            ControlLaw::Em { .. } => "em",
        }
    }

    /// The proportional gain the stability theory is stated in
    /// (`psi` for EMMs, `sigma` for EM).
    pub fn gain(&self) -> Option<(LawKind, f64)> {
        match *self {
            ControlLaw::Emms { psi } => Some((LawKind::Emms, psi)),
            ControlLaw::Em { sigma, .. } => Some((LawKind::Em, sigma)),
            _ => None,
        }
    }

    /// EMMs law with `psi = 2R`.
    pub fn fig1(params: &ModelParams) -> Self {
        ControlLaw::Emms {
            psi: 2.0 * params.offspring_number(),
        }
    }

    /// EM law with `sigma = 2R`, `alpha = 4R (delta_s - delta_M)`.
    pub fn fig2(params: &ModelParams) -> Self {
        let r = params.offspring_number();
        ControlLaw::Em {
            alpha: 4.0 * r * params.delta_hat(),
            sigma: 2.0 * r,
        }
    }

    pub fn evaluate(&self, params: &ModelParams, state: &SitState) -> f64 {
        evaluate_control(self, params, state)
    }
}

pub fn evaluate_control(law: &ControlLaw, params: &ModelParams, state: &SitState) -> f64 {
    match *law {
        ControlLaw::Zero => 0.0,
        ControlLaw::Constant { rate } => rate,
        ControlLaw::Emms { psi } => {
            psi * params.male_emergence() * state.e + params.delta_hat() * (state.m + state.ms)
        }
        ControlLaw::Em { alpha, sigma } => {
            alpha * state.m + params.male_emergence() * sigma * state.e
        }
    }
}

/// Thresholds and dominance times attached to a linear feedback law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LawDiagnostics {
    pub kind: LawKind,
    pub gain: f64,
    /// `(R - 1) / gamma`; the gain must exceed it for the stability theorem.
    pub gain_threshold: f64,
    /// `(R - 1) / gamma - delta_hat / delta_M`; above it the origin is the
    /// only closed-loop equilibrium.
    pub uniqueness_threshold: f64,
    /// `sigma delta_hat` for the EM law.
    pub alpha_floor: Option<f64>,
    /// Time after which `M_s >= gain M` by the dominance propositions
    /// (`psi / delta_hat` for EMMs, `-ln(1 - delta_hat sigma / alpha) / alpha`
    /// for EM). `None` when the EM precondition `alpha > sigma delta_hat` fails.
    pub dominance_time: Option<f64>,
    /// For EM, the time at which the lower bound
    /// `M0 e^{-delta_M t} (alpha/delta_hat (1 - e^{-delta_hat t}) - sigma)` used in
    /// the dominance proof becomes nonnegative: `-ln(1 - delta_hat sigma / alpha) / delta_hat`.
    /// Equal to `dominance_time` for EMMs.
    pub certified_dominance_time: Option<f64>,
    pub stabilizing: bool,
    pub unique_equilibrium: bool,
}

pub fn law_diagnostics(law: &ControlLaw, params: &ModelParams) -> Result<LawDiagnostics, ControlError> {
    law.validate()?;
    params.validate()?;
    let gain_threshold = params.gain_threshold();
    let delta_hat = params.delta_hat();
    let uniqueness_threshold = gain_threshold - delta_hat / params.delta_m;
    match *law {
        ControlLaw::Emms { psi } => {
            let t0 = psi / delta_hat;
            Ok(LawDiagnostics {
                kind: LawKind::Emms,
                gain: psi,
                gain_threshold,
                uniqueness_threshold,
                alpha_floor: None,
                dominance_time: Some(t0),
                certified_dominance_time: Some(t0),
                stabilizing: psi > gain_threshold,
                unique_equilibrium: psi >= uniqueness_threshold,
            })
        }
        ControlLaw::Em { alpha, sigma } => {
            let alpha_floor = sigma * delta_hat;
            let feasible = alpha > alpha_floor;
            let log_term = (-(delta_hat * sigma / alpha)).ln_1p();
            Ok(LawDiagnostics {
                kind: LawKind::Em,
                gain: sigma,
                gain_threshold,
                uniqueness_threshold,
                alpha_floor: Some(alpha_floor),
                dominance_time: feasible.then(|| -log_term / alpha),
                certified_dominance_time: feasible.then(|| -log_term / delta_hat),
                stabilizing: feasible && sigma > gain_threshold,
                unique_equilibrium: sigma >= uniqueness_threshold,
            })
        }
        ControlLaw::Zero => Err(ControlError::NoDiagnostics("zero")),
        ControlLaw::Constant { .. } => Err(ControlError::NoDiagnostics("constant")),
    }
}

/// Absolute tolerance of the quadratures inside [`closed_form_ms_emms`].
pub const CLOSED_FORM_ABS_TOL: f64 = 1e-10;
/// Relative tolerance of the same quadratures; large densities make a pure
/// absolute target of `1e-10` unreachable in double precision.
pub const CLOSED_FORM_REL_TOL: f64 = 1e-13;

/// Variation-of-constants value of `M_s(t)` under the EMMs law:
///
/// ```text
/// M_s(t) = M_s0 e^{-delta_M t} + delta_hat M0 t e^{-delta_M t}
///        + delta_hat (1-nu) nu_E e^{-delta_M t} int_0^t (t - s) E(s) e^{delta_M s} ds
///        + psi (1-nu) nu_E e^{-delta_M t} int_0^t E(s) e^{delta_M s} ds
/// ```
///
/// Under this law `M_s' = psi (1-nu) nu_E E + delta_hat M - delta_M M_s`, so the
/// homogeneous part decays at `delta_M`, not `delta_s`.
pub fn closed_form_ms_emms<H>(
    params: &ModelParams,
    psi: f64,
    initial: &SitState,
    e_history: H,
    t: f64,
) -> Result<f64, ControlError>
where
    H: Fn(f64) -> f64,
{
    if !(t >= 0.0 && t.is_finite()) {
        return Err(ControlError::InvalidLaw(format!("time must be >= 0, got {t}")));
    }
    let dm = params.delta_m;
    let dh = params.delta_hat();
    let c = params.male_emergence();
    let decay = (-dm * t).exp();
    // e^{-delta_M t} is folded into the integrands to keep them O(E)
    let plain = adaptive_simpson(
        |s| e_history(s) * (-dm * (t - s)).exp(),
        0.0,
        t,
        CLOSED_FORM_ABS_TOL,
        CLOSED_FORM_REL_TOL,
    )?;
    let weighted = adaptive_simpson(
        |s| (t - s) * e_history(s) * (-dm * (t - s)).exp(),
        0.0,
        t,
        CLOSED_FORM_ABS_TOL,
        CLOSED_FORM_REL_TOL,
    )?;
    Ok(initial.ms * decay + dh * initial.m * t * decay + dh * c * weighted + psi * c * plain)
}

/// Lower bound `M0 e^{-delta_M t} (delta_hat t - psi)` on `M_s(t) - psi M(t)`
/// along EMMs trajectories started in `B_K`.
pub fn emms_dominance_lower_bound(params: &ModelParams, psi: f64, m0: f64, t: f64) -> f64 {
    m0 * (-params.delta_m * t).exp() * (params.delta_hat() * t - psi)
}

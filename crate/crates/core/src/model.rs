//! Parameters, state, and vector fields of the SIT control system.
//!
//! The wild population is described by the aquatic stage `E`, fertile-mated
//! females `F` and wild males `M`. Releasing sterile males at rate `u` adds the
//! sterile male compartment `M_s` and the compartment `F_s` of females mated
//! by sterile males:
//!
//! ```text
//! E'   = beta_E F (1 - E/K) - (nu_E + delta_E) E
//! F'   = nu nu_E E M / (M + gamma M_s) - delta_F F
//! M'   = (1 - nu) nu_E E - delta_M M
//! F_s' = nu nu_E E gamma M_s / (M + gamma M_s) - delta_F F_s
//! M_s' = u - delta_s M_s
//! ```

use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;

use crate::error::ModelError;

/// Biological rates, carrying capacity and mating preference.
///
/// Field names on the wire match the symbols used in config files
/// (`beta_E`, `nu_E`, ..., `K`, `gamma`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct ModelParams {
    pub beta_e: f64,
    pub nu_e: f64,
    pub delta_e: f64,
    pub delta_f: f64,
    pub delta_m: f64,
    pub delta_s: f64,
    pub nu: f64,
    pub k: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    #[serde(rename = "beta_E")]
    beta_e: f64,
    #[serde(rename = "nu_E")]
    nu_e: f64,
    #[serde(rename = "delta_E")]
    delta_e: f64,
    #[serde(rename = "delta_F")]
    delta_f: f64,
    #[serde(rename = "delta_M")]
    delta_m: f64,
    delta_s: f64,
    nu: f64,
    #[serde(rename = "K")]
    k: f64,
    gamma: f64,
}

impl TryFrom<RawParams> for ModelParams {
    type Error = ModelError;

    fn try_from(raw: RawParams) -> Result<Self, Self::Error> {
        let p = ModelParams {
            beta_e: raw.beta_e,
            nu_e: raw.nu_e,
            delta_e: raw.delta_e,
            delta_f: raw.delta_f,
            delta_m: raw.delta_m,
            delta_s: raw.delta_s,
            nu: raw.nu,
            k: raw.k,
            gamma: raw.gamma,
        };
        p.validate()?;
        Ok(p)
    }
}

impl From<ModelParams> for RawParams {
    fn from(p: ModelParams) -> Self {
        RawParams {
            beta_e: p.beta_e,
            nu_e: p.nu_e,
            delta_e: p.delta_e,
            delta_f: p.delta_f,
            delta_m: p.delta_m,
            delta_s: p.delta_s,
            nu: p.nu,
            k: p.k,
            gamma: p.gamma,
        }
    }
}

impl Default for ModelParams {
    fn default() -> Self {
        Self::table1()
    }
}

impl ModelParams {
    /// Builds a validated parameter set.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        beta_e: f64,
        nu_e: f64,
        delta_e: f64,
        delta_f: f64,
        delta_m: f64,
        delta_s: f64,
        nu: f64,
        k: f64,
        gamma: f64,
    ) -> Result<Self, ModelError> {
        RawParams {
            beta_e,
            nu_e,
            delta_e,
            delta_f,
            delta_m,
            delta_s,
            nu,
            k,
            gamma,
        }
        .try_into()
    }

    /// Aedes polynesiensis reference values, no mating preference (gamma = 1).
    pub fn table1() -> Self {
        ModelParams {
            beta_e: 8.0,
            nu_e: 0.05,
            delta_e: 0.03,
            delta_f: 0.04,
            delta_m: 0.1,
            delta_s: 0.12,
            nu: 0.49,
            k: 50_000.0,
            gamma: 1.0,
        }
    }

    /// Reference values with `beta_E = 10`, the fecundity under which the
    /// basic offspring number is 76.5625 instead of 61.25.
    pub fn high_fecundity() -> Self {
        ModelParams {
            beta_e: 10.0,
            ..Self::table1()
        }
    }

    pub fn with_gamma(self, gamma: f64) -> Result<Self, ModelError> {
        let p = ModelParams { gamma, ..self };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("beta_E", self.beta_e),
            ("nu_E", self.nu_e),
            ("delta_E", self.delta_e),
            ("delta_F", self.delta_f),
            ("delta_M", self.delta_m),
            ("delta_s", self.delta_s),
            ("K", self.k),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(ModelError::InvalidParameter {
                    name,
                    value,
                    reason: "must be finite and strictly positive",
                });
            }
        }
        if !(self.nu > 0.0 && self.nu < 1.0) {
            return Err(ModelError::InvalidParameter {
                name: "nu",
                value: self.nu,
                reason: "must lie in (0, 1)",
            });
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(ModelError::InvalidParameter {
                name: "gamma",
                value: self.gamma,
                reason: "must lie in (0, 1]",
            });
        }
        if self.delta_s <= self.delta_m {
            return Err(ModelError::InvalidParameter {
                name: "delta_s",
                value: self.delta_s,
                reason: "sterile males must die faster than wild males (delta_s > delta_M)",
            });
        }
        Ok(())
    }

    /// Basic offspring number `beta_E nu nu_E / (delta_F (delta_E + nu_E))`.
    pub fn offspring_number(&self) -> f64 {
        self.beta_e * self.nu * self.nu_e / (self.delta_f * (self.delta_e + self.nu_e))
    }

    /// Excess mortality of released males, `delta_s - delta_M`.
    pub fn delta_hat(&self) -> f64 {
        self.delta_s - self.delta_m
    }

    /// Male emergence flux per unit of aquatic density, `(1 - nu) nu_E`.
    pub fn male_emergence(&self) -> f64 {
        (1.0 - self.nu) * self.nu_e
    }

    /// Female emergence flux per unit of aquatic density, `nu nu_E`.
    pub fn female_emergence(&self) -> f64 {
        self.nu * self.nu_e
    }

    /// `H(p) = R / (1 + gamma p)`.
    pub fn h(&self, p: f64) -> f64 {
        self.offspring_number() / (1.0 + self.gamma * p)
    }

    /// Gain above which `H(gain) < 1`, i.e. `(R - 1) / gamma`.
    pub fn gain_threshold(&self) -> f64 {
        (self.offspring_number() - 1.0) / self.gamma
    }

    pub fn derived(&self) -> DerivedQuantities {
        derived_quantities(self)
    }

    /// Reads a flat `key = value` parameter file. Missing keys fall back to
    /// the reference values.
    pub fn from_toml_str(text: &str) -> Result<Self, ModelError> {
        let table: toml::Table =
            toml::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
        let mut merged = toml::Table::try_from(RawParams::from(Self::table1()))
            .map_err(|e| ModelError::Parse(e.to_string()))?;
        for (key, value) in table {
            if !merged.contains_key(&key) {
                return Err(ModelError::Parse(format!("unknown parameter key `{key}`")));
            }
            let value = match value {
                toml::Value::Integer(i) => toml::Value::Float(i as f64),
                other => other,
            };
            merged.insert(key, value);
        }
        merged
            .try_into()
            .map_err(|e: toml::de::Error| ModelError::Parse(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat float table always serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModelError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }
}

/// One point of the five-compartment state space.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SitState {
    #[serde(rename = "E")]
    pub e: f64,
    #[serde(rename = "F")]
    pub f: f64,
    #[serde(rename = "M")]
    pub m: f64,
    #[serde(rename = "Fs")]
    pub fs: f64,
    #[serde(rename = "Ms")]
    pub ms: f64,
}

impl SitState {
    pub const ZERO: SitState = SitState {
        e: 0.0,
        f: 0.0,
        m: 0.0,
        fs: 0.0,
        ms: 0.0,
    };

    pub const fn new(e: f64, f: f64, m: f64, fs: f64, ms: f64) -> Self {
        SitState { e, f, m, fs, ms }
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        SitState::new(a[0], a[1], a[2], a[3], a[4])
    }

    pub fn to_array(self) -> [f64; 5] {
        [self.e, self.f, self.m, self.fs, self.ms]
    }

    /// Wild sub-state `(E, F, M)`.
    pub fn wild(self) -> [f64; 3] {
        [self.e, self.f, self.m]
    }

    pub fn is_nonnegative(self) -> bool {
        self.to_array().iter().all(|&x| x >= 0.0)
    }

    pub fn is_finite(self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }

    pub fn norm2(self) -> f64 {
        self.to_array().iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn check_nonnegative(self) -> Result<(), ModelError> {
        for (name, value) in STATE_NAMES.iter().zip(self.to_array()) {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(ModelError::InvalidState { name, value });
            }
        }
        Ok(())
    }
}

impl fmt::Display for SitState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(E={}, F={}, M={}, Fs={}, Ms={})",
            self.e, self.f, self.m, self.fs, self.ms
        )
    }
}

pub const STATE_NAMES: [&str; 5] = ["E", "F", "M", "Fs", "Ms"];

/// Closed-form quantities attached to a parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedQuantities {
    #[serde(rename = "R")]
    pub r: f64,
    pub e_star: f64,
    /// Persistence equilibrium `(E*, F*, M*)`.
    pub x_e_star: [f64; 3],
    pub delta_hat: f64,
}

impl DerivedQuantities {
    /// `(E*, F*, M*, 0, 0)`, the uncontrolled persistence equilibrium.
    pub fn persistence_state(&self) -> SitState {
        let [e, f, m] = self.x_e_star;
        SitState::new(e, f, m, 0.0, 0.0)
    }
}

pub fn derived_quantities(params: &ModelParams) -> DerivedQuantities {
    let r = params.offspring_number();
    let e_star = params.k * (1.0 - 1.0 / r);
    DerivedQuantities {
        r,
        e_star,
        x_e_star: [
            e_star,
            params.female_emergence() / params.delta_f * e_star,
            params.male_emergence() / params.delta_m * e_star,
        ],
        delta_hat: params.delta_hat(),
    }
}

/// Probability `M / (M + gamma M_s)` that an emerging female mates with a
/// wild male. Zero when both male compartments are empty.
pub fn fertile_mating_fraction(params: &ModelParams, m: f64, ms: f64) -> f64 {
    let denom = m + params.gamma * ms;
    if denom > 0.0 {
        m / denom
    } else {
        0.0
    }
}

/// Probability `gamma M_s / (M + gamma M_s)` of mating with a sterile male.
/// Zero when both male compartments are empty.
pub fn sterile_mating_fraction(params: &ModelParams, m: f64, ms: f64) -> f64 {
    let denom = m + params.gamma * ms;
    if denom > 0.0 {
        params.gamma * ms / denom
    } else {
        0.0
    }
}

/// Right-hand side of the controlled system at release rate `u`.
pub fn controlled_vector_field(params: &ModelParams, x: &SitState, u: f64) -> SitState {
    let emergence = params.female_emergence() * x.e;
    SitState {
        e: params.beta_e * x.f * (1.0 - x.e / params.k) - (params.nu_e + params.delta_e) * x.e,
        f: emergence * fertile_mating_fraction(params, x.m, x.ms) - params.delta_f * x.f,
        m: params.male_emergence() * x.e - params.delta_m * x.m,
        fs: emergence * sterile_mating_fraction(params, x.m, x.ms) - params.delta_f * x.fs,
        ms: u - params.delta_s * x.ms,
    }
}

/// Right-hand side of the wild system without releases, on `(E, F, M)`.
pub fn uncontrolled_vector_field(params: &ModelParams, z: [f64; 3]) -> [f64; 3] {
    let [e, f, m] = z;
    [
        params.beta_e * f * (1.0 - e / params.k) - (params.nu_e + params.delta_e) * e,
        params.female_emergence() * e - params.delta_f * f,
        params.male_emergence() * e - params.delta_m * m,
    ]
}

/// Membership in `B_K`: nonnegative with `E <= K`.
pub fn in_b_k(state: &SitState, params: &ModelParams) -> bool {
    state.is_nonnegative() && state.e <= params.k
}

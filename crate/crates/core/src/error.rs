use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("invalid state: {name} = {value} (components must be finite and nonnegative)")]
    InvalidState { name: &'static str, value: f64 },
    #[error("parameter file: {0}")]
    Parse(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("invalid control law: {0}")]
    InvalidLaw(String),
    #[error("{0} law has no stabilization diagnostics")]
    NoDiagnostics(&'static str),
    #[error("quadrature did not reach tolerance {tolerance:e} on [{a}, {b}]")]
    Quadrature { a: f64, b: f64, tolerance: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegrationError {
    #[error("invalid integrator configuration: {0}")]
    InvalidConfig(String),
    #[error("step size underflow at t = {time} (h = {step:e})")]
    StepUnderflow { time: f64, step: f64 },
    #[error("model evaluation produced a non-finite value at t = {time}")]
    NonFinite { time: f64 },
    #[error("component {component} = {value:e} at t = {time} is below the clamp band")]
    Negative {
        time: f64,
        component: &'static str,
        value: f64,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Control(#[from] ControlError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("gain {gain} is not above the threshold (R - 1)/gamma = {threshold}")]
    GainBelowThreshold { gain: f64, threshold: f64 },
    #[error("law `{0}` carries no feedback gain")]
    NoGain(&'static str),
    #[error("fit window [{lo}, {hi}] holds fewer than two samples")]
    EmptyWindow { lo: f64, hi: f64 },
    #[error("state norm vanishes at t = {time} inside the fit window")]
    ZeroNorm { time: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Control(#[from] ControlError),
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Mismatch(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("sweep has {size} grid points, above the cap of {cap}")]
    SweepTooLarge { size: usize, cap: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Integration(#[from] IntegrationError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

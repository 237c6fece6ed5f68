//! Simulation and stability verification for the sterile insect technique
//! (SIT) control system under linear feedback release laws.

pub mod analysis;
pub mod control;
pub mod error;
pub mod integrator;
pub mod model;
pub mod quadrature;
pub mod run;

pub use control::{law_diagnostics, ControlLaw, LawDiagnostics, LawKind};
pub use error::{AnalysisError, ControlError, IntegrationError, ModelError, RunError};
pub use run::{RunConfig, RunOutput};
pub use integrator::{integrate, EventKind, IntegratorConfig, Method, Trajectory};
pub use model::{derived_quantities, DerivedQuantities, ModelParams, SitState};
pub use analysis::{
    scan_equilibria, stability_report, GridSpec, LyapunovSpec, PredictedRates, ReportOptions,
    StabilityReport, Verdict,
};

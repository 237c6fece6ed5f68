//! Run configurations, presets, sweeps and on-disk artifacts.
//!
//! A run writes three files: `<prefix>.csv` (samples), `<prefix>.events.json`
//! (effective config, events, clamp magnitude) and `<prefix>.report.json`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{stability_report, ReportOptions, StabilityReport, Verdict};
use crate::control::{law_diagnostics, ControlLaw};
use crate::error::RunError;
use crate::integrator::{integrate, Event, IntegratorConfig, Trajectory};
use crate::model::{ModelParams, SitState};

pub const CSV_HEADER: &str = "t,E,F,M,Fs,Ms,u";
pub const DEFAULT_SWEEP_CAP: usize = 10_000;
pub const PRESETS: [&str; 3] = ["fig1", "fig2", "persistence"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum NamedState {
    Persistence,
}

/// Initial condition: an explicit state or the persistence preset `(X_E*, 0, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialCondition {
    #[default]
    #[serde(with = "persistence_tag")]
    Persistence,
    State(SitState),
}

mod persistence_tag {
    use super::NamedState;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        NamedState::Persistence.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        NamedState::deserialize(d).map(|_| ())
    }
}

impl InitialCondition {
    pub fn resolve(&self, params: &ModelParams) -> Result<SitState, RunError> {
        match self {
            InitialCondition::Persistence => {
                let d = params.derived();
                if d.r.is_nan() || d.r <= 1.0 {
                    return Err(RunError::Config(format!(
                        "x0 = \"persistence\" needs R > 1, got R = {}",
                        d.r
                    )));
                }
                Ok(d.persistence_state())
            }
            InitialCondition::State(s) => {
                s.check_nonnegative()?;
                Ok(*s)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: String,
    pub prefix: String,
    pub csv: bool,
    pub events: bool,
    pub report: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: "out".into(),
            prefix: "run".into(),
            csv: true,
            events: true,
            report: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub params: ModelParams,
    pub law: ControlLaw,
    #[serde(default)]
    pub x0: InitialCondition,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
}

impl RunConfig {
    pub fn new(params: ModelParams, law: ControlLaw) -> Self {
        RunConfig {
            params,
            law,
            x0: InitialCondition::Persistence,
            integrator: IntegratorConfig::default(),
            outputs: OutputConfig::default(),
        }
    }

    /// Named configurations: `fig1` (EMMs, psi = 2R), `fig2` (EM, sigma = 2R,
    /// alpha = 4R delta_hat) and `persistence` (no releases), all with the
    /// reference parameters and the persistence initial condition.
    pub fn preset(name: &str) -> Option<Self> {
        let params = ModelParams::table1();
        let law = match name {
            "fig1" => ControlLaw::fig1(&params),
            "fig2" => ControlLaw::fig2(&params),
            "persistence" => ControlLaw::Zero,
            _ => return None,
        };
        let mut cfg = RunConfig::new(params, law);
        cfg.outputs.prefix = name.into();
        Some(cfg)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        self.params.validate()?;
        self.law
            .validate()
            .map_err(|e| RunError::Config(e.to_string()))?;
        self.integrator
            .validate()
            .map_err(|e| RunError::Config(e.to_string()))?;
        self.x0.resolve(&self.params)?;
        Ok(())
    }

    /// Parses a TOML run file. The `[params]` table may be partial; missing
    /// keys take the reference values.
    pub fn from_toml_str(text: &str) -> Result<Self, RunError> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| RunError::Config(e.to_string()))?;
        let params = match table.remove("params") {
            Some(toml::Value::Table(t)) => ModelParams::from_toml_str(&t.to_string())?,
            Some(other) => {
                return Err(RunError::Config(format!("`params` must be a table, got {other}")));
            }
            None => ModelParams::table1(),
        };
        let params_value =
            toml::Value::try_from(params).map_err(|e| RunError::Config(e.to_string()))?;
        table.insert("params".into(), params_value);
        let cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| RunError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        let value = toml::Value::try_from(self).expect("run config serializes to TOML");
        toml::to_string(&value).expect("run config serializes to TOML")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RunError> {
        let text = read_text(path.as_ref())?;
        Self::from_toml_str(&text)
    }

    pub fn initial_state(&self) -> Result<SitState, RunError> {
        self.x0.resolve(&self.params)
    }
}

/// Sidecar written next to the CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub config: RunConfig,
    pub events: Vec<Event>,
    pub max_clamp: f64,
    pub samples: usize,
}

impl RunRecord {
    pub fn new(config: &RunConfig, traj: &Trajectory) -> Self {
        RunRecord {
            config: config.clone(),
            events: traj.events.clone(),
            max_clamp: traj.max_clamp,
            samples: traj.len(),
        }
    }

    pub fn to_json(&self) -> String {
        to_json(self)
    }

    pub fn from_json(text: &str) -> Result<Self, RunError> {
        serde_json::from_str(text).map_err(|e| RunError::Config(format!("events sidecar: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub trajectory: Trajectory,
    pub report: StabilityReport,
}

pub fn execute(cfg: &RunConfig) -> Result<RunOutput, RunError> {
    cfg.validate()?;
    let x0 = cfg.initial_state()?;
    let trajectory = integrate(&cfg.params, &cfg.law, &x0, &cfg.integrator)?;
    let report = stability_report(&trajectory, &cfg.params, &cfg.law, &ReportOptions::default())?;
    Ok(RunOutput { trajectory, report })
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes to JSON");
    s.push('\n');
    s
}

pub fn trajectory_csv(traj: &Trajectory) -> String {
    let mut out = String::with_capacity(64 * (traj.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for ((t, s), u) in traj.times.iter().zip(&traj.states).zip(&traj.controls) {
        let _ = writeln!(out, "{t:e},{:e},{:e},{:e},{:e},{:e},{u:e}", s.e, s.f, s.m, s.fs, s.ms);
    }
    out
}

/// Parses a trajectory CSV; events and clamp data come from the sidecar.
pub fn parse_trajectory_csv(text: &str) -> Result<Trajectory, RunError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        other => {
            return Err(RunError::Config(format!(
                "trajectory CSV header must be `{CSV_HEADER}`, got {:?}",
                other.unwrap_or("")
            )))
        }
    }
    let mut traj = Trajectory::default();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let values: Result<Vec<f64>, _> = line.split(',').map(|v| v.trim().parse::<f64>()).collect();
        let values = match values {
            Ok(v) if v.len() == 7 => v,
            _ => return Err(RunError::Config(format!("trajectory CSV line {}: `{line}`", n + 2))),
        };
        traj.times.push(values[0]);
        traj.states.push(SitState::new(values[1], values[2], values[3], values[4], values[5]));
        traj.controls.push(values[6]);
    }
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArtifactPaths {
    pub csv: Option<PathBuf>,
    pub events: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

pub fn write_artifacts(cfg: &RunConfig, out: &RunOutput) -> Result<ArtifactPaths, RunError> {
    let dir = PathBuf::from(&cfg.outputs.dir);
    fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
    let path = |suffix: &str| dir.join(format!("{}{suffix}", cfg.outputs.prefix));
    let mut paths = ArtifactPaths {
        csv: None,
        events: None,
        report: None,
    };
    if cfg.outputs.csv {
        let p = path(".csv");
        write_text(&p, &trajectory_csv(&out.trajectory))?;
        paths.csv = Some(p);
    }
    if cfg.outputs.events {
        let p = path(".events.json");
        write_text(&p, &RunRecord::new(cfg, &out.trajectory).to_json())?;
        paths.events = Some(p);
    }
    if cfg.outputs.report {
        let p = path(".report.json");
        write_text(&p, &to_json(&out.report))?;
        paths.report = Some(p);
    }
    Ok(paths)
}

/// Recomputes the report of a stored run. `params` and `law`, when given,
/// must agree with the configuration recorded in the sidecar.
pub fn analyze_stored(
    csv: &str,
    record: &RunRecord,
    params: Option<&ModelParams>,
    law: Option<&ControlLaw>,
) -> Result<StabilityReport, RunError> {
    if let Some(p) = params {
        if *p != record.config.params {
            return Err(RunError::Mismatch(format!(
                "parameters {p:?} differ from the recorded {:?}",
                record.config.params
            )));
        }
    }
    if let Some(l) = law {
        if *l != record.config.law {
            return Err(RunError::Mismatch(format!(
                "law {l:?} differs from the recorded {:?}",
                record.config.law
            )));
        }
    }
    let mut traj = parse_trajectory_csv(csv)?;
    if traj.len() != record.samples {
        return Err(RunError::Mismatch(format!(
            "CSV holds {} samples, the sidecar records {}",
            traj.len(),
            record.samples
        )));
    }
    traj.events = record.events.clone();
    traj.max_clamp = record.max_clamp;
    Ok(stability_report(
        &traj,
        &record.config.params,
        &record.config.law,
        &ReportOptions::default(),
    )?)
}

pub fn read_text(path: &Path) -> Result<String, RunError> {
    fs::read_to_string(path).map_err(|e| io_error(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), RunError> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, e: std::io::Error) -> RunError {
    RunError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn verdict_word(v: Verdict) -> &'static str {
    match v {
        Verdict::Pass => "pass",
        Verdict::Fail => "FAIL",
        Verdict::Inconclusive => "inconclusive",
    }
}

/// Human-readable digest of a report.
pub fn summary(report: &StabilityReport, params: &ModelParams) -> String {
    let mut s = String::new();
    let d = params.derived();
    let _ = writeln!(s, "law: {:?}", report.law);
    let _ = writeln!(
        s,
        "R = {}, E* = {:.4}, gain threshold (R-1)/gamma = {}",
        d.r,
        d.e_star,
        params.gain_threshold()
    );
    if let Some(diag) = &report.diagnostics {
        let _ = writeln!(
            s,
            "stabilizing (predicted): {}, unique equilibrium: {}",
            diag.stabilizing, diag.unique_equilibrium
        );
    }
    match report.extinction_time {
        Some(t) => {
            let _ = writeln!(s, "extinction (E <= 1) at t = {t:.4} d");
        }
        None => {
            let _ = writeln!(s, "extinction: not reached");
        }
    }
    if let Some(c) = &report.dominance {
        let _ = writeln!(
            s,
            "dominance from t = {:.4}: {} ({} samples{})",
            c.start,
            verdict_word(c.verdict),
            c.samples_checked,
            c.first_violation
                .map(|t| format!(", first violation at {t}"))
                .unwrap_or_default()
        );
    }
    if let Some(c) = &report.dominance_from_certified_time {
        let _ = writeln!(
            s,
            "dominance from certified time t = {:.4}: {}",
            c.start,
            verdict_word(c.verdict)
        );
    }
    if let Some(t) = report.dominance_onset {
        let _ = writeln!(s, "measured dominance onset: t = {t}");
    }
    if let Some(c) = &report.lyapunov_decay {
        let _ = writeln!(
            s,
            "Lyapunov decay at c_a = {:.6}: {} (worst margin {:.3e})",
            c.rate,
            verdict_word(c.verdict),
            c.worst_margin
        );
    }
    if let (Some(rate), Some(bound)) = (report.fitted_rate, report.c_bound) {
        let _ = writeln!(s, "fitted rate {rate:.6} /d, predicted bound {bound:.6} /d");
    } else if let Some(rate) = report.fitted_rate {
        let _ = writeln!(s, "fitted rate {rate:.6} /d");
    }
    if let Some(e) = &report.envelope {
        let _ = writeln!(
            s,
            "envelope c_r = {:.6}: C = {:.4e} (cap {:.0e}) {}",
            e.c_r,
            e.required_c,
            e.c_cap,
            if e.ok { "pass" } else { "FAIL" }
        );
    }
    s
}

/// One sweep axis: a dotted config path such as `law.psi` or `params.gamma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAxis {
    pub path: String,
    pub values: Vec<f64>,
}

impl SweepAxis {
    /// Parses `path=v1,v2,...`.
    pub fn parse(spec: &str) -> Result<Self, RunError> {
        let (path, values) = spec
            .split_once('=')
            .ok_or_else(|| RunError::Config(format!("sweep axis `{spec}` must look like path=v1,v2")))?;
        let values = values
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| RunError::Config(format!("sweep axis `{path}`: bad value `{v}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if values.is_empty() {
            return Err(RunError::Config(format!("sweep axis `{path}` has no values")));
        }
        Ok(SweepAxis {
            path: path.trim().to_string(),
            values,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub coords: Vec<usize>,
    pub values: Vec<f64>,
    pub law: ControlLaw,
    pub gain_threshold: f64,
    pub stabilizing_predicted: Option<bool>,
    pub extinction_time: Option<f64>,
    pub fitted_rate: Option<f64>,
    pub c_bound: Option<f64>,
    /// `ok`, or the error that stopped this grid point.
    pub status: String,
}

pub fn sweep_size(axes: &[SweepAxis]) -> usize {
    axes.iter()
        .map(|a| a.values.len())
        .try_fold(1usize, |acc, n| acc.checked_mul(n))
        .unwrap_or(usize::MAX)
}

/// Configuration for one grid point.
pub fn sweep_point(base: &RunConfig, axes: &[SweepAxis], values: &[f64]) -> Result<RunConfig, RunError> {
    let mut root = toml::Value::try_from(base).map_err(|e| RunError::Config(e.to_string()))?;
    for (axis, &v) in axes.iter().zip(values) {
        let mut node = &mut root;
        for key in axis.path.split('.') {
            node = node
                .get_mut(key)
                .ok_or_else(|| RunError::Config(format!("sweep axis `{}` is not a config key", axis.path)))?;
        }
        match node {
            toml::Value::Float(_) => *node = toml::Value::Float(v),
            _ => {
                return Err(RunError::Config(format!(
                    "sweep axis `{}` does not name a numeric key",
                    axis.path
                )))
            }
        }
    }
    let cfg: RunConfig = root
        .try_into()
        .map_err(|e: toml::de::Error| RunError::Config(e.to_string()))?;
    Ok(cfg)
}

/// Runs the cross product of `axes` in parallel. Rows come back sorted by grid
/// coordinates.
pub fn run_sweep(base: &RunConfig, axes: &[SweepAxis], cap: usize) -> Result<Vec<SweepRow>, RunError> {
    let size = sweep_size(axes);
    if size > cap {
        return Err(RunError::SweepTooLarge { size, cap });
    }
    base.validate()?;
    let mut points = Vec::with_capacity(size);
    for idx in 0..size {
        let mut rem = idx;
        let mut coords = vec![0usize; axes.len()];
        for (slot, axis) in coords.iter_mut().zip(axes).rev() {
            *slot = rem % axis.values.len();
            rem /= axis.values.len();
        }
        let values: Vec<f64> = coords.iter().zip(axes).map(|(&i, a)| a.values[i]).collect();
        // reject bad paths up front rather than per row
        let cfg = sweep_point(base, axes, &values)?;
        points.push((coords, values, cfg));
    }
    let mut rows: Vec<SweepRow> = points
        .into_par_iter()
        .map(|(coords, values, cfg)| sweep_row(coords, values, &cfg))
        .collect();
    rows.sort_by(|a, b| a.coords.cmp(&b.coords));
    Ok(rows)
}

fn sweep_row(coords: Vec<usize>, values: Vec<f64>, cfg: &RunConfig) -> SweepRow {
    let mut row = SweepRow {
        coords,
        values,
        law: cfg.law,
        gain_threshold: cfg.params.gain_threshold(),
        stabilizing_predicted: law_diagnostics(&cfg.law, &cfg.params).ok().map(|d| d.stabilizing),
        extinction_time: None,
        fitted_rate: None,
        c_bound: None,
        status: "ok".into(),
    };
    match execute(cfg) {
        Ok(out) => {
            row.extinction_time = out.report.extinction_time;
            row.fitted_rate = out.report.fitted_rate;
            row.c_bound = out.report.c_bound;
        }
        Err(e) => row.status = e.to_string(),
    }
    row
}

pub fn sweep_csv(axes: &[SweepAxis], rows: &[SweepRow]) -> String {
    let mut out = String::new();
    for a in axes {
        out.push_str(&a.path);
        out.push(',');
    }
    out.push_str(
        "law,psi,alpha,sigma,gain_threshold,stabilizing_predicted,extinction_reached,extinction_time,fitted_rate,c_bound,status\n",
    );
    let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    for r in rows {
        for v in &r.values {
            let _ = write!(out, "{v:e},");
        }
        let (psi, alpha, sigma) = match r.law {
            ControlLaw::Emms { psi } => (Some(psi), None, None),
            ControlLaw::Em { alpha, sigma } => (None, Some(alpha), Some(sigma)),
            _ => (None, None, None),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{:e},{},{},{},{},{},{}",
            r.law.name(),
            opt(psi),
            opt(alpha),
            opt(sigma),
            r.gain_threshold,
            r.stabilizing_predicted.map(|b| b.to_string()).unwrap_or_default(),
            r.extinction_time.is_some(),
            opt(r.extinction_time),
            opt(r.fitted_rate),
            opt(r.c_bound),
            r.status.replace(',', ";"),
        );
    }
    out
}

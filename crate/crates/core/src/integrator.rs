//! Closed-loop integration with event detection.
//!
//! Two explicit schemes are provided: classical fixed-step RK4 and the
//! Dormand-Prince 5(4) embedded pair with step-size control. Steps are
//! clipped so that every multiple of `record_stride` is hit exactly.
//!
//! Events:
//! - `KCrossing`: first time `E` falls below `K` when `E(0) >= K`;
//! - `Extinction`: first time `E <= 1`; the run halts there when
//!   `stop_on_extinction` is set;
//! - `TMaxReached`: horizon reached without extinction.

use serde::{Deserialize, Serialize};

use crate::control::ControlLaw;
use crate::error::IntegrationError;
use crate::model::{controlled_vector_field, ModelParams, SitState, STATE_NAMES};

/// Aquatic density at or below which the population counts as extinct.
pub const EXTINCTION_LEVEL: f64 = 1.0;
/// Width of the bracket that localizes an event, in days.
pub const EVENT_TOLERANCE: f64 = 1e-6;
/// Negative components down to `-CLAMP_FACTOR * abs_tol` are reset to zero.
pub const CLAMP_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Classical fourth-order Runge-Kutta with step `dt_init`.
    Rk4,
    /// Dormand-Prince 5(4) with error control.
    Rk45,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorConfig {
    pub method: Method,
    pub dt_init: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub t_max: f64,
    pub stop_on_extinction: bool,
    pub record_stride: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            method: Method::Rk45,
            dt_init: 0.01,
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            t_max: 12_000.0,
            stop_on_extinction: false,
            record_stride: 1.0,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<(), IntegrationError> {
        let checks = [
            ("dt_init", self.dt_init),
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("t_max", self.t_max),
            ("record_stride", self.record_stride),
        ];
        for (name, v) in checks {
            if !(v > 0.0 && v.is_finite()) {
                return Err(IntegrationError::InvalidConfig(format!(
                    "{name} must be finite and > 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    KCrossing,
    Extinction,
    TMaxReached,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub state: SitState,
}

/// Sampled solution of the closed-loop system.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<SitState>,
    /// Release rate `u(x(t))` at each sample.
    pub controls: Vec<f64>,
    pub events: Vec<Event>,
    /// Largest magnitude of a negative component reset to zero.
    pub max_clamp: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn initial_state(&self) -> Option<SitState> {
        self.states.first().copied()
    }

    pub fn final_state(&self) -> Option<SitState> {
        self.states.last().copied()
    }

    pub fn final_time(&self) -> Option<f64> {
        self.times.last().copied()
    }

    pub fn event_time(&self, kind: EventKind) -> Option<f64> {
        self.events.iter().find(|e| e.kind == kind).map(|e| e.time)
    }

    pub fn extinction_time(&self) -> Option<f64> {
        self.event_time(EventKind::Extinction)
    }

    pub fn k_crossing_time(&self) -> Option<f64> {
        self.event_time(EventKind::KCrossing)
    }

    pub fn samples(&self) -> impl Iterator<Item = (f64, &SitState)> + '_ {
        self.times.iter().copied().zip(self.states.iter())
    }

    /// Cubic Hermite interpolation between samples, with slopes taken from the
    /// closed-loop vector field. Clamped to the recorded time span.
    pub fn interpolate(&self, params: &ModelParams, law: &ControlLaw, t: f64) -> SitState {
        let n = self.times.len();
        assert!(n > 0, "cannot interpolate an empty trajectory");
        if n == 1 || t <= self.times[0] {
            return self.states[0];
        }
        if t >= self.times[n - 1] {
            return self.states[n - 1];
        }
        let i = self.times.partition_point(|&s| s <= t) - 1;
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let y0 = self.states[i].to_array();
        let y1 = self.states[i + 1].to_array();
        let d0 = closed_loop(params, law, &self.states[i]).to_array();
        let d1 = closed_loop(params, law, &self.states[i + 1]).to_array();
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        let mut out = [0.0; 5];
        for k in 0..5 {
            out[k] = h00 * y0[k] + h10 * h * d0[k] + h01 * y1[k] + h11 * h * d1[k];
        }
        SitState::from_array(out)
    }
}

fn closed_loop(params: &ModelParams, law: &ControlLaw, x: &SitState) -> SitState {
    controlled_vector_field(params, x, law.evaluate(params, x))
}

/// One classical RK4 step of the autonomous system `y' = f(y)`.
pub fn rk4_step<const N: usize, F>(f: &F, y: &[f64; N], h: f64) -> [f64; N]
where
    F: Fn(&[f64; N]) -> [f64; N],
{
    let k1 = f(y);
    let k2 = f(&axpy(y, 0.5 * h, &k1));
    let k3 = f(&axpy(y, 0.5 * h, &k2));
    let k4 = f(&axpy(y, h, &k3));
    let mut out = *y;
    for i in 0..N {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

// Dormand-Prince 5(4) tableau.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// fifth-order weights minus the embedded fourth-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// One Dormand-Prince step. Returns the fifth-order solution and the
/// difference to the embedded fourth-order solution.
pub fn dopri5_step<const N: usize, F>(f: &F, y: &[f64; N], h: f64) -> ([f64; N], [f64; N])
where
    F: Fn(&[f64; N]) -> [f64; N],
{
    let k1 = f(y);
    let k2 = f(&lin(y, h, &[(A21, &k1)]));
    let k3 = f(&lin(y, h, &[(A31, &k1), (A32, &k2)]));
    let k4 = f(&lin(y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]));
    let k5 = f(&lin(y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]));
    let k6 = f(&lin(
        y,
        h,
        &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
    ));
    let y5 = lin(y, h, &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)]);
    let k7 = f(&y5);
    let mut err = [0.0; N];
    for i in 0..N {
        err[i] = h
            * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
    }
    (y5, err)
}

fn axpy<const N: usize>(y: &[f64; N], a: f64, x: &[f64; N]) -> [f64; N] {
    let mut out = *y;
    for i in 0..N {
        out[i] += a * x[i];
    }
    out
}

fn lin<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for (a, k) in terms {
        for i in 0..N {
            out[i] += h * a * k[i];
        }
    }
    out
}

/// Integrates the closed-loop system from `x0` under `law`.
pub fn integrate(
    params: &ModelParams,
    law: &ControlLaw,
    x0: &SitState,
    cfg: &IntegratorConfig,
) -> Result<Trajectory, IntegrationError> {
    params.validate()?;
    law.validate()?;
    cfg.validate()?;
    x0.check_nonnegative()?;

    let rhs = |y: &[f64; 5]| closed_loop(params, law, &SitState::from_array(*y)).to_array();
    let single_step = |y: &[f64; 5], h: f64| match cfg.method {
        Method::Rk4 => rk4_step(&rhs, y, h),
        Method::Rk45 => dopri5_step(&rhs, y, h).0,
    };
    let clamp_floor = -CLAMP_FACTOR * cfg.abs_tol;

    let mut traj = Trajectory::default();
    let mut t = 0.0;
    let mut y = x0.to_array();
    traj.push(0.0, *x0, law.evaluate(params, x0));

    let mut k_pending = x0.e > params.k;
    if x0.e == params.k {
        traj.events.push(Event {
            time: 0.0,
            kind: EventKind::KCrossing,
            state: *x0,
        });
    }
    let mut extinct = x0.e <= EXTINCTION_LEVEL;
    if extinct {
        traj.events.push(Event {
            time: 0.0,
            kind: EventKind::Extinction,
            state: *x0,
        });
        if cfg.stop_on_extinction {
            return Ok(traj);
        }
    }

    let mut record_index: u64 = 1;
    let mut h = cfg.dt_init.min(cfg.t_max);
    loop {
        let next_record = (record_index as f64 * cfg.record_stride).min(cfg.t_max);
        let remaining = next_record - t;
        let clipped = h >= remaining;
        let h_try = if clipped { remaining } else { h };

        let y_new = match cfg.method {
            Method::Rk4 => rk4_step(&rhs, &y, h_try),
            Method::Rk45 => {
                let (y5, err) = dopri5_step(&rhs, &y, h_try);
                let norm = error_norm(&y, &y5, &err, cfg);
                if !norm.is_finite() {
                    return Err(IntegrationError::NonFinite { time: t });
                }
                if norm > 1.0 {
                    h = h_try * (0.9 * norm.powf(-0.2)).clamp(0.1, 1.0);
                    if h < 1e-14 * t.abs().max(1.0) {
                        return Err(IntegrationError::StepUnderflow { time: t, step: h });
                    }
                    continue;
                }
                let grow = if norm == 0.0 {
                    5.0
                } else {
                    (0.9 * norm.powf(-0.2)).clamp(0.2, 5.0)
                };
                // a step shortened only to land on a record time does not
                // shrink the proposal
                h = if clipped { h.max(h_try * grow) } else { h_try * grow };
                y5
            }
        };
        if y_new.iter().any(|v| !v.is_finite()) {
            return Err(IntegrationError::NonFinite { time: t + h_try });
        }
        let y_new = clamp(y_new, clamp_floor, t + h_try, &mut traj.max_clamp)?;

        if k_pending && y_new[0] < params.k {
            let (theta, ys) = locate(&single_step, &y, h_try, |v| v[0] < params.k);
            let time = t + theta * h_try;
            traj.events.push(Event {
                time,
                kind: EventKind::KCrossing,
                state: SitState::from_array(ys),
            });
            k_pending = false;
        }

        if !extinct && y_new[0] <= EXTINCTION_LEVEL {
            extinct = true;
            let (theta, ys) = locate(&single_step, &y, h_try, |v| v[0] <= EXTINCTION_LEVEL);
            let ys = clamp(ys, clamp_floor, t + theta * h_try, &mut traj.max_clamp)?;
            let time = t + theta * h_try;
            let state = SitState::from_array(ys);
            traj.events.push(Event {
                time,
                kind: EventKind::Extinction,
                state,
            });
            if cfg.stop_on_extinction {
                if time > t {
                    traj.push(time, state, law.evaluate(params, &state));
                }
                return Ok(traj);
            }
        }

        y = y_new;
        if clipped {
            t = next_record;
            let state = SitState::from_array(y);
            traj.push(t, state, law.evaluate(params, &state));
            record_index += 1;
            if t >= cfg.t_max {
                traj.events.push(Event {
                    time: t,
                    kind: EventKind::TMaxReached,
                    state,
                });
                return Ok(traj);
            }
        } else {
            t += h_try;
        }
    }
}

impl Trajectory {
    fn push(&mut self, t: f64, x: SitState, u: f64) {
        self.times.push(t);
        self.states.push(x);
        self.controls.push(u);
    }
}

fn error_norm(y: &[f64; 5], y_new: &[f64; 5], err: &[f64; 5], cfg: &IntegratorConfig) -> f64 {
    let sum: f64 = (0..5)
        .map(|i| {
            let scale = cfg.abs_tol + cfg.rel_tol * y[i].abs().max(y_new[i].abs());
            (err[i] / scale).powi(2)
        })
        .sum();
    (sum / 5.0).sqrt()
}

fn clamp(mut y: [f64; 5], floor: f64, time: f64, max_clamp: &mut f64) -> Result<[f64; 5], IntegrationError> {
    for (i, v) in y.iter_mut().enumerate() {
        if *v < 0.0 {
            if *v < floor {
                return Err(IntegrationError::Negative {
                    time,
                    component: STATE_NAMES[i],
                    value: *v,
                });
            }
            *max_clamp = max_clamp.max(-*v);
            *v = 0.0;
        }
    }
    Ok(y)
}

/// Bisects the fraction `theta` of a step at which `crossed` first holds.
/// Returns the smallest bracketing fraction found and the state there.
fn locate<S, P>(step: &S, y: &[f64; 5], h: f64, crossed: P) -> (f64, [f64; 5])
where
    S: Fn(&[f64; 5], f64) -> [f64; 5],
    P: Fn(&[f64; 5]) -> bool,
{
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut y_hi = step(y, h);
    while (hi - lo) * h > EVENT_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        let y_mid = step(y, mid * h);
        if crossed(&y_mid) {
            hi = mid;
            y_hi = y_mid;
        } else {
            lo = mid;
        }
    }
    (hi, y_hi)
}

/// Result of a step-halving convergence experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderEstimate {
    /// `log2(|y_h - y_{h/2}| / |y_{h/2} - y_{h/4}|)`.
    pub order: f64,
    /// `|y_h - y_{h/2}| / |y_{h/2} - y_{h/4}|`, about `2^order`.
    pub error_ratio: f64,
}

/// Richardson estimate of the fixed-step RK4 order on `y' = f(y)` over
/// `[0, horizon]` using steps `base_dt`, `base_dt/2`, `base_dt/4`.
pub fn richardson_order<const N: usize, F>(f: &F, y0: &[f64; N], horizon: f64, base_dt: f64) -> OrderEstimate
where
    F: Fn(&[f64; N]) -> [f64; N],
{
    let solve = |dt: f64| {
        let steps = (horizon / dt).round().max(1.0) as usize;
        let h = horizon / steps as f64;
        let mut y = *y0;
        for _ in 0..steps {
            y = rk4_step(f, &y, h);
        }
        y
    };
    let y1 = solve(base_dt);
    let y2 = solve(base_dt / 2.0);
    let y4 = solve(base_dt / 4.0);
    let dist = |a: &[f64; N], b: &[f64; N]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let error_ratio = dist(&y1, &y2) / dist(&y2, &y4);
    OrderEstimate {
        order: error_ratio.log2(),
        error_ratio,
    }
}

/// RK4 order measured on the closed-loop SIT system.
pub fn convergence_order_check(
    params: &ModelParams,
    law: &ControlLaw,
    x0: &SitState,
    base_dt: f64,
    horizon: f64,
) -> OrderEstimate {
    let rhs = |y: &[f64; 5]| closed_loop(params, law, &SitState::from_array(*y)).to_array();
    richardson_order(&rhs, &x0.to_array(), horizon, base_dt)
}

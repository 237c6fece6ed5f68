//! Numerical checks of the closed-loop stability argument.
//!
//! Every check works on sampled trajectories: inequalities are tested at the
//! recorded samples only, with a relative slack of [`DEFAULT_EPSILON`].

use nalgebra::{Matrix5, Vector5};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{law_diagnostics, ControlLaw, LawDiagnostics, LawKind};
use crate::error::AnalysisError;
use crate::integrator::Trajectory;
use crate::model::{controlled_vector_field, fertile_mating_fraction, ModelParams, SitState};

/// Relative slack for sample-wise inequality checks.
pub const DEFAULT_EPSILON: f64 = 1e-6;
/// Largest envelope constant the envelope check may use.
pub const DEFAULT_C_CAP: f64 = 1e6;
/// `|c_a - delta_M|` below which the resonant form of the `M_s` bound is used.
pub const RESONANCE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    /// Nothing to check (e.g. no samples after the start time).
    Inconclusive,
}

impl Verdict {
    pub fn passed(self) -> bool {
        self == Verdict::Pass
    }
}

/// Weighted sum `V(z) = coeff_E E + M + coeff_F F` on the wild sub-state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSpec {
    pub coeff_e: f64,
    pub coeff_m: f64,
    pub coeff_f: f64,
    /// `H(gain)`.
    pub h_value: f64,
    /// Smallest coefficient: `q1 (E + F + M) <= V`.
    pub q1: f64,
    /// Largest coefficient: `V <= q2 (E + F + M)`.
    pub q2: f64,
}

impl LyapunovSpec {
    pub fn new(params: &ModelParams, gain: f64) -> Result<Self, AnalysisError> {
        params.validate()?;
        let h = params.h(gain);
        if h.is_nan() || h >= 1.0 {
            return Err(AnalysisError::GainBelowThreshold {
                gain,
                threshold: params.gain_threshold(),
            });
        }
        Ok(Self::from_h(params, h))
    }

    /// Builds the function from a value of `H` in `[0, 1)`.
    pub fn from_h(params: &ModelParams, h: f64) -> Self {
        let coeff_e = (1.0 + h) / (1.0 - h);
        let coeff_f = 2.0 * params.beta_e / (params.delta_f * (1.0 - h));
        let coeffs = [coeff_e, 1.0, coeff_f];
        LyapunovSpec {
            coeff_e,
            coeff_m: 1.0,
            coeff_f,
            h_value: h,
            q1: coeffs.iter().copied().fold(f64::INFINITY, f64::min),
            q2: coeffs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// `V(E, F, M)`.
    pub fn value(&self, z: [f64; 3]) -> f64 {
        let [e, f, m] = z;
        self.coeff_e * e + self.coeff_m * m + self.coeff_f * f
    }
}

pub fn lyapunov_value(spec: &LyapunovSpec, z: [f64; 3]) -> f64 {
    spec.value(z)
}

/// Predicted decay rates of the stability theorem for a given gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedRates {
    pub kind: LawKind,
    pub gain: f64,
    pub h_value: f64,
    /// `min{nu nu_E (1-H)/(1+H), delta_M, beta_E delta_F (1-H)/2}`.
    pub c_a: f64,
    /// Overall rate bound (`c_e` for EMMs, `c_b` for EM): the minimum of `terms`.
    pub c_bound: f64,
    /// `[nu nu_E (1-H)/(1+H), delta_M, beta_E delta_F (1-H)/2, delta_F, delta_s, nu_E + delta_E, delta_F]`.
    pub terms: [f64; 7],
}

pub fn predicted_rates(params: &ModelParams, gain: f64, kind: LawKind) -> Result<PredictedRates, AnalysisError> {
    params.validate()?;
    let h = params.h(gain);
    if h.is_nan() || h >= 1.0 {
        return Err(AnalysisError::GainBelowThreshold {
            gain,
            threshold: params.gain_threshold(),
        });
    }
    let terms = [
        params.female_emergence() * (1.0 - h) / (1.0 + h),
        params.delta_m,
        params.beta_e * params.delta_f * (1.0 - h) / 2.0,
        params.delta_f,
        params.delta_s,
        params.nu_e + params.delta_e,
        params.delta_f,
    ];
    let min = |xs: &[f64]| xs.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(PredictedRates {
        kind,
        gain,
        h_value: h,
        c_a: min(&terms[..3]),
        c_bound: min(&terms),
        terms,
    })
}

/// Outcome of the discrete Lyapunov decay check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayCheck {
    pub verdict: Verdict,
    pub start: f64,
    pub rate: f64,
    pub pairs_checked: usize,
    /// Largest `V(t_{i+1}) / (V(t_i) e^{-rate (t_{i+1} - t_i)}) - 1`; pass requires
    /// it to stay below epsilon.
    pub worst_margin: f64,
    pub worst_time: Option<f64>,
}

/// Checks `V(z(t_{i+1})) <= V(z(t_i)) e^{-c_a (t_{i+1} - t_i)} (1 + epsilon)` for every
/// pair of consecutive samples at or after `start`.
pub fn verify_lyapunov_decay(
    traj: &Trajectory,
    spec: &LyapunovSpec,
    c_a: f64,
    start: f64,
    epsilon: f64,
) -> DecayCheck {
    let mut check = DecayCheck {
        verdict: Verdict::Inconclusive,
        start,
        rate: c_a,
        pairs_checked: 0,
        worst_margin: f64::NEG_INFINITY,
        worst_time: None,
    };
    let first = traj.times.partition_point(|&t| t < start);
    for i in first..traj.len().saturating_sub(1) {
        let v0 = spec.value(traj.states[i].wild());
        let v1 = spec.value(traj.states[i + 1].wild());
        let dt = traj.times[i + 1] - traj.times[i];
        let margin = if v0 > 0.0 {
            v1 / (v0 * (-c_a * dt).exp()) - 1.0
        } else if v1 == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        check.pairs_checked += 1;
        if margin > check.worst_margin {
            check.worst_margin = margin;
            check.worst_time = Some(traj.times[i]);
        }
    }
    if check.pairs_checked > 0 {
        check.verdict = if check.worst_margin <= epsilon {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
    } else {
        check.worst_margin = 0.0;
    }
    check
}

/// Outcome of the sterile-male dominance check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DominanceCheck {
    pub verdict: Verdict,
    pub gain: f64,
    pub start: f64,
    pub samples_checked: usize,
    pub first_violation: Option<f64>,
    /// Whether `M / (M + gamma M_s) <= 1 / (1 + gamma gain)` (within epsilon)
    /// at every sample where dominance held.
    pub fraction_bound_ok: bool,
}

/// Checks `M_s >= gain M - epsilon (1 + M)` at every sample `t >= start`.
pub fn verify_dominance(
    traj: &Trajectory,
    params: &ModelParams,
    gain: f64,
    start: f64,
    epsilon: f64,
) -> DominanceCheck {
    let mut check = DominanceCheck {
        verdict: Verdict::Inconclusive,
        gain,
        start,
        samples_checked: 0,
        first_violation: None,
        fraction_bound_ok: true,
    };
    let bound = 1.0 / (1.0 + params.gamma * gain);
    for (t, s) in traj.samples().filter(|(t, _)| *t >= start) {
        check.samples_checked += 1;
        if s.ms >= gain * s.m - epsilon * (1.0 + s.m) {
            let frac = fertile_mating_fraction(params, s.m, s.ms);
            if frac > bound * (1.0 + epsilon) + epsilon {
                check.fraction_bound_ok = false;
            }
        } else if check.first_violation.is_none() {
            check.first_violation = Some(t);
        }
    }
    if check.samples_checked > 0 {
        check.verdict = if check.first_violation.is_none() {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
    }
    check
}

/// First sample time from which `M_s >= gain M` holds at every later sample.
pub fn dominance_onset(traj: &Trajectory, gain: f64) -> Option<f64> {
    let last_violation = traj.states.iter().rposition(|s| s.ms < gain * s.m);
    match last_violation {
        None => traj.times.first().copied(),
        Some(i) => traj.times.get(i + 1).copied(),
    }
}

/// Least-squares fit of `ln ||x(t)||` (Euclidean norm) over a window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// Decay rate, i.e. minus the fitted slope.
    pub rate: f64,
    pub intercept: f64,
    pub window: (f64, f64),
    pub samples: usize,
}

pub fn fit_exponential_rate(traj: &Trajectory, window: (f64, f64)) -> Result<RateFit, AnalysisError> {
    let (lo, hi) = window;
    let mut points = Vec::new();
    for (t, s) in traj.samples().filter(|(t, _)| *t >= lo && *t <= hi) {
        let n = s.norm2();
        if n.is_nan() || n <= 0.0 {
            return Err(AnalysisError::ZeroNorm { time: t });
        }
        points.push((t, n.ln()));
    }
    if points.len() < 2 {
        return Err(AnalysisError::EmptyWindow { lo, hi });
    }
    let count = points.len() as f64;
    let mean_t = points.iter().map(|p| p.0).sum::<f64>() / count;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / count;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_t).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mean_t) * (p.1 - mean_y)).sum();
    let slope = sxy / sxx;
    Ok(RateFit {
        rate: -slope,
        intercept: mean_y - slope * mean_t,
        window,
        samples: points.len(),
    })
}

/// Default fit window: `[max(start, t_end / 2), t_end]`, or the second half of
/// the run when `start` lies beyond its end.
pub fn default_fit_window(traj: &Trajectory, start: f64) -> Option<(f64, f64)> {
    let t_end = traj.final_time()?;
    let lo = start.max(0.5 * t_end);
    if lo < t_end {
        Some((lo, t_end))
    } else {
        Some((0.5 * t_end, t_end))
    }
}

/// Envelope `||x(t)|| <= C ||x0|| e^{-c_r t}` with the smallest `C` that fits all samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeCheck {
    pub c_r: f64,
    pub required_c: f64,
    pub c_cap: f64,
    pub ok: bool,
}

pub fn envelope_check(traj: &Trajectory, c_r: f64, c_cap: f64) -> EnvelopeCheck {
    let x0 = traj.initial_state().map(|s| s.norm2()).unwrap_or(0.0);
    let worst = traj
        .samples()
        .map(|(t, s)| s.norm2() * (c_r * t).exp())
        .fold(0.0, f64::max);
    let required_c = if x0 > 0.0 {
        worst / x0
    } else if worst == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    EnvelopeCheck {
        c_r,
        required_c,
        c_cap,
        ok: required_c <= c_cap,
    }
}

/// `int_0^t e^{-a s} e^{-b (t - s)} ds`, with the resonant limit `t e^{-a t}`.
pub fn exp_convolution(a: f64, b: f64, t: f64) -> f64 {
    if (a - b).abs() < RESONANCE_TOLERANCE {
        t * (-a * t).exp()
    } else {
        ((-a * t).exp() - (-b * t).exp()) / (b - a)
    }
}

/// Pointwise comparison of a sampled quantity against an upper envelope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub verdict: Verdict,
    pub samples_checked: usize,
    pub first_violation: Option<f64>,
    /// Largest `value - bound`, in units of `1 + bound`.
    pub worst_excess: f64,
}

impl BoundCheck {
    fn new() -> Self {
        BoundCheck {
            verdict: Verdict::Inconclusive,
            samples_checked: 0,
            first_violation: None,
            worst_excess: f64::NEG_INFINITY,
        }
    }

    fn record(&mut self, t: f64, value: f64, bound: f64, epsilon: f64) {
        self.samples_checked += 1;
        let excess = (value - bound) / (1.0 + bound.abs());
        self.worst_excess = self.worst_excess.max(excess);
        if excess > epsilon && self.first_violation.is_none() {
            self.first_violation = Some(t);
        }
    }

    fn finish(mut self) -> Self {
        if self.samples_checked > 0 {
            self.verdict = if self.first_violation.is_none() {
                Verdict::Pass
            } else {
                Verdict::Fail
            };
        } else {
            self.worst_excess = 0.0;
        }
        self
    }
}

/// Results of the closed-form envelope checks on `M_s`, `F_s`, and on the
/// pre-crossing phase when `E(0) >= K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundChainReport {
    pub c_a: Option<f64>,
    /// Measured `max_t ||z(t)|| e^{c_a t}` (Euclidean norm on `(E, F, M)`),
    /// standing in for `C ||z(0)||` in the envelopes.
    pub calibrated_amplitude: Option<f64>,
    pub resonant: bool,
    /// `M_s` envelope (EMMs law only).
    pub ms_envelope: Option<BoundCheck>,
    pub fs_envelope: Option<BoundCheck>,
    /// `E, F, M, F_s` envelopes on `[0, t0]` where `E(t0) = K` (only when `E(0) >= K`).
    pub pre_crossing: Option<BoundCheck>,
    pub crossing_time: Option<f64>,
}

pub fn verify_bound_chain(
    traj: &Trajectory,
    params: &ModelParams,
    law: &ControlLaw,
    epsilon: f64,
) -> Result<BoundChainReport, AnalysisError> {
    let x0 = traj.initial_state().unwrap_or_default();
    let mut report = BoundChainReport {
        c_a: None,
        calibrated_amplitude: None,
        resonant: false,
        ms_envelope: None,
        fs_envelope: None,
        pre_crossing: None,
        crossing_time: None,
    };

    let female = params.female_emergence();
    let male = params.male_emergence();

    if let Some((kind, gain)) = law.gain() {
        if params.h(gain) < 1.0 {
            let c_a = predicted_rates(params, gain, kind)?.c_a;
            let amplitude = traj
                .samples()
                .map(|(t, s)| {
                    let [e, f, m] = s.wild();
                    (e * e + f * f + m * m).sqrt() * (c_a * t).exp()
                })
                .fold(0.0, f64::max);
            report.c_a = Some(c_a);
            report.calibrated_amplitude = Some(amplitude);

            let mut fs_check = BoundCheck::new();
            for (t, s) in traj.samples() {
                let bound = x0.fs * (-params.delta_f * t).exp()
                    + female * amplitude * exp_convolution(c_a, params.delta_f, t);
                fs_check.record(t, s.fs, bound, epsilon);
            }
            report.fs_envelope = Some(fs_check.finish());

            if let ControlLaw::Emms { psi } = *law {
                let dm = params.delta_m;
                let dh = params.delta_hat();
                report.resonant = (c_a - dm).abs() < RESONANCE_TOLERANCE;
                let mut ms_check = BoundCheck::new();
                for (t, s) in traj.samples() {
                    let decay = (-dm * t).exp();
                    let (first, second) = if report.resonant {
                        (t * decay, t * t * decay)
                    } else {
                        let gap = dm - c_a;
                        let first = ((-c_a * t).exp() - decay) / gap;
                        let second = ((-c_a * t).exp() - decay - gap * t * decay) / (gap * gap);
                        (first, second)
                    };
                    let bound = x0.ms * decay
                        + dh * x0.m * t * decay
                        + dh * amplitude * male * second
                        + psi * amplitude * male * first;
                    ms_check.record(t, s.ms, bound, epsilon);
                }
                report.ms_envelope = Some(ms_check.finish());
            }
        }
    }

    if x0.e >= params.k {
        let t0 = traj.k_crossing_time();
        report.crossing_time = t0;
        let t0 = t0.unwrap_or(f64::INFINITY);
        let aquatic = params.nu_e + params.delta_e;
        let mut check = BoundCheck::new();
        for (t, s) in traj.samples().filter(|(t, _)| *t <= t0) {
            let e_bound = x0.e * (-aquatic * t).exp();
            let f_bound = x0.f * (-params.delta_f * t).exp()
                + female * x0.e * exp_convolution(aquatic, params.delta_f, t);
            let m_bound = x0.m * (-params.delta_m * t).exp()
                + male * x0.e * exp_convolution(params.delta_f, params.delta_m, t);
            let fs_bound = x0.fs * (-params.delta_f * t).exp()
                + female * x0.e * exp_convolution(aquatic, params.delta_f, t);
            check.record(t, s.e, e_bound, epsilon);
            check.record(t, s.f, f_bound, epsilon);
            check.record(t, s.m, m_bound, epsilon);
            check.record(t, s.fs, fs_bound, epsilon);
        }
        report.pre_crossing = Some(check.finish());
    }
    Ok(report)
}

/// Grid used by [`scan_equilibria`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Points per axis, including the zero point.
    pub points_per_axis: usize,
    /// Smallest nonzero grid value as a fraction of the axis upper bound.
    pub min_fraction: f64,
    /// Upper bound of the `M_s` axis; derived from the law when absent.
    pub ms_max: Option<f64>,
    /// Residual below which a refined point counts as an equilibrium.
    pub residual_tol: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            points_per_axis: 20,
            min_fraction: 1e-6,
            ms_max: None,
            residual_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumCandidate {
    pub state: SitState,
    pub residual: f64,
    pub refined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    /// Deduplicated points with residual below the tolerance.
    pub equilibria: Vec<EquilibriumCandidate>,
    /// Grid minima where Newton did not reach the tolerance.
    pub unrefined: Vec<EquilibriumCandidate>,
    pub grid_points: usize,
    pub local_minima: usize,
}

fn closed_loop_residual(params: &ModelParams, law: &ControlLaw, x: &SitState) -> f64 {
    controlled_vector_field(params, x, law.evaluate(params, x)).norm2()
}

/// Axis upper bounds `(E, F, M, F_s, M_s)` of the scan box.
pub fn scan_bounds(params: &ModelParams, law: &ControlLaw, grid: &GridSpec) -> [f64; 5] {
    let f_max = params.female_emergence() * params.k / params.delta_f;
    let m_max = params.male_emergence() * params.k / params.delta_m;
    let ms_max = grid.ms_max.unwrap_or_else(|| {
        let corner = SitState::new(params.k, f_max, m_max, f_max, 0.0);
        (2.0 * law.evaluate(params, &corner) / params.delta_m).max(1.0)
    });
    [params.k, f_max, m_max, f_max, ms_max]
}

/// Searches `B_K x [0, ms_max]` for closed-loop equilibria: residual on a
/// log-spaced grid, damped Newton from every grid local minimum, then
/// deduplication.
pub fn scan_equilibria(params: &ModelParams, law: &ControlLaw, grid: &GridSpec) -> ScanResult {
    let n = grid.points_per_axis.max(2);
    let bounds = scan_bounds(params, law, grid);
    let axes: Vec<Vec<f64>> = bounds
        .iter()
        .map(|&upper| {
            let lo = (upper * grid.min_fraction).ln();
            let hi = upper.ln();
            std::iter::once(0.0)
                .chain((0..n - 1).map(|i| (lo + (hi - lo) * i as f64 / (n - 2).max(1) as f64).exp()))
                .collect()
        })
        .collect();
    let total = n.pow(5);
    let point = |idx: usize| -> ([usize; 5], SitState) {
        let mut rem = idx;
        let mut ix = [0usize; 5];
        for slot in ix.iter_mut().rev() {
            *slot = rem % n;
            rem /= n;
        }
        let x = SitState::from_array([
            axes[0][ix[0]],
            axes[1][ix[1]],
            axes[2][ix[2]],
            axes[3][ix[3]],
            axes[4][ix[4]],
        ]);
        (ix, x)
    };
    let residuals: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|idx| closed_loop_residual(params, law, &point(idx).1))
        .collect();
    let strides = [n.pow(4), n.pow(3), n.pow(2), n, 1];
    let minima: Vec<usize> = (0..total)
        .into_par_iter()
        .filter(|&idx| {
            let (ix, _) = point(idx);
            let r = residuals[idx];
            (0..5).all(|d| {
                let below = ix[d] == 0 || residuals[idx - strides[d]] >= r;
                let above = ix[d] + 1 == n || residuals[idx + strides[d]] >= r;
                below && above
            })
        })
        .collect();
    let refined: Vec<EquilibriumCandidate> = minima
        .par_iter()
        .map(|&idx| newton_refine(params, law, point(idx).1, &bounds, grid.residual_tol))
        .collect();

    let mut equilibria: Vec<EquilibriumCandidate> = Vec::new();
    let mut unrefined: Vec<EquilibriumCandidate> = Vec::new();
    for cand in refined {
        let bucket = if cand.refined {
            &mut equilibria
        } else {
            &mut unrefined
        };
        if !bucket.iter().any(|c| same_point(&c.state, &cand.state, &bounds)) {
            bucket.push(cand);
        }
    }
    equilibria.sort_by(|a, b| a.state.norm2().total_cmp(&b.state.norm2()));
    unrefined.sort_by(|a, b| a.residual.total_cmp(&b.residual));
    ScanResult {
        equilibria,
        unrefined,
        grid_points: total,
        local_minima: minima.len(),
    }
}

fn same_point(a: &SitState, b: &SitState, bounds: &[f64; 5]) -> bool {
    a.to_array()
        .iter()
        .zip(b.to_array())
        .zip(bounds)
        .all(|((x, y), s)| (x - y).abs() <= 1e-6 * s.max(1.0))
}

fn newton_refine(
    params: &ModelParams,
    law: &ControlLaw,
    start: SitState,
    bounds: &[f64; 5],
    tol: f64,
) -> EquilibriumCandidate {
    let field = |x: &Vector5<f64>| -> Vector5<f64> {
        let s = SitState::from_array([x[0], x[1], x[2], x[3], x[4]]);
        Vector5::from(controlled_vector_field(params, &s, law.evaluate(params, &s)).to_array())
    };
    let mut x = Vector5::from(start.to_array());
    let mut f = field(&x);
    let mut r = f.norm();
    let mut polish = 0;
    for _ in 0..200 {
        if r < tol {
            polish += 1;
            if r == 0.0 || polish > 3 {
                break;
            }
        }
        let mut jac = Matrix5::zeros();
        for j in 0..5 {
            let h = 1e-7 * x[j].abs().max(1e-6 * bounds[j]);
            let mut xp = x;
            xp[j] += h;
            let mut xm = x;
            let width = if x[j] >= h {
                xm[j] -= h;
                2.0 * h
            } else {
                h
            };
            let col = (field(&xp) - field(&xm)) / width;
            jac.set_column(j, &col);
        }
        let Some(step) = jac.lu().solve(&(-f)) else {
            break;
        };
        let mut lambda = 1.0;
        let mut accepted = false;
        while lambda > 1e-12 {
            let trial = (x + step * lambda).map(|v| v.max(0.0));
            let ft = field(&trial);
            let rt = ft.norm();
            if rt < (1.0 - 1e-4 * lambda) * r || (rt == 0.0 && r == 0.0) {
                x = trial;
                f = ft;
                r = rt;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    EquilibriumCandidate {
        state: SitState::from_array([x[0], x[1], x[2], x[3], x[4]]),
        residual: r,
        refined: r < tol,
    }
}

/// Options for [`stability_report`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub epsilon: f64,
    pub c_cap: f64,
    /// Envelope rate as a fraction of the predicted rate bound.
    pub envelope_fraction: f64,
    pub fit_window: Option<(f64, f64)>,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            epsilon: DEFAULT_EPSILON,
            c_cap: DEFAULT_C_CAP,
            envelope_fraction: 0.9,
            fit_window: None,
        }
    }
}

/// Verdicts and measured quantities for one closed-loop run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub law: ControlLaw,
    pub fit_norm: String,
    pub sandwich_norm: String,
    pub diagnostics: Option<LawDiagnostics>,
    pub rates: Option<PredictedRates>,
    pub c_a: Option<f64>,
    /// `c_e` (EMMs) or `c_b` (EM).
    pub c_bound: Option<f64>,
    pub dominance: Option<DominanceCheck>,
    /// Dominance check restarted at the certified time `-ln(1 - delta_hat sigma / alpha) / delta_hat`
    /// (EM law only).
    pub dominance_from_certified_time: Option<DominanceCheck>,
    pub dominance_onset: Option<f64>,
    pub lyapunov_decay: Option<DecayCheck>,
    /// Decay check restarted at the measured dominance onset.
    pub lyapunov_decay_from_onset: Option<DecayCheck>,
    pub fit: Option<RateFit>,
    pub fitted_rate: Option<f64>,
    pub envelope: Option<EnvelopeCheck>,
    pub bound_chain: Option<BoundChainReport>,
    pub extinction_time: Option<f64>,
    pub dominance_ok: bool,
    pub lyapunov_decay_ok: bool,
    pub envelope_ok: bool,
}

pub fn stability_report(
    traj: &Trajectory,
    params: &ModelParams,
    law: &ControlLaw,
    opts: &ReportOptions,
) -> Result<StabilityReport, AnalysisError> {
    let mut report = StabilityReport {
        law: *law,
        fit_norm: "euclidean".into(),
        sandwich_norm: "l1".into(),
        diagnostics: None,
        rates: None,
        c_a: None,
        c_bound: None,
        dominance: None,
        dominance_from_certified_time: None,
        dominance_onset: None,
        lyapunov_decay: None,
        lyapunov_decay_from_onset: None,
        fit: None,
        fitted_rate: None,
        envelope: None,
        bound_chain: None,
        extinction_time: traj.extinction_time(),
        dominance_ok: false,
        lyapunov_decay_ok: false,
        envelope_ok: false,
    };
    let mut check_start = 0.0;
    if let Some((kind, gain)) = law.gain() {
        let diag = law_diagnostics(law, params)?;
        report.diagnostics = Some(diag);
        check_start = diag.dominance_time.unwrap_or(f64::INFINITY);
        let dominance = verify_dominance(traj, params, gain, check_start, opts.epsilon);
        report.dominance_ok = dominance.verdict.passed();
        report.dominance = Some(dominance);
        if kind == LawKind::Em {
            if let Some(t) = diag.certified_dominance_time {
                report.dominance_from_certified_time =
                    Some(verify_dominance(traj, params, gain, t, opts.epsilon));
            }
        }
        report.dominance_onset = dominance_onset(traj, gain);
        if params.h(gain) < 1.0 {
            let rates = predicted_rates(params, gain, kind)?;
            let spec = LyapunovSpec::new(params, gain)?;
            let decay = verify_lyapunov_decay(traj, &spec, rates.c_a, check_start, opts.epsilon);
            report.lyapunov_decay_ok = decay.verdict.passed();
            report.lyapunov_decay = Some(decay);
            if let Some(onset) = report.dominance_onset {
                report.lyapunov_decay_from_onset =
                    Some(verify_lyapunov_decay(traj, &spec, rates.c_a, onset, opts.epsilon));
            }
            let envelope = envelope_check(traj, opts.envelope_fraction * rates.c_bound, opts.c_cap);
            report.envelope_ok = envelope.ok;
            report.envelope = Some(envelope);
            report.c_a = Some(rates.c_a);
            report.c_bound = Some(rates.c_bound);
            report.rates = Some(rates);
        }
        report.bound_chain = Some(verify_bound_chain(traj, params, law, opts.epsilon)?);
    }
    let window = opts
        .fit_window
        .or_else(|| default_fit_window(traj, if check_start.is_finite() { check_start } else { 0.0 }));
    if let Some(window) = window {
        if let Ok(fit) = fit_exponential_rate(traj, window) {
            report.fitted_rate = Some(fit.rate);
            report.fit = Some(fit);
        }
    }
    Ok(report)
}

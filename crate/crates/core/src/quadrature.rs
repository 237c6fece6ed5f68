//! Adaptive Simpson quadrature.

use crate::error::ControlError;

const MAX_DEPTH: u32 = 50;
const MAX_PANELS: usize = 1 << 20;

/// Integrates `f` over `[a, b]`, refining each panel until its Richardson
/// error estimate falls below `max(abs_tol, rel_tol * |whole|)` (split across
/// sub-panels).
pub fn adaptive_simpson<F>(f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> Result<f64, ControlError>
where
    F: Fn(f64) -> f64,
{
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    // a coarse 8-panel composite estimate sets the relative scale so the
    // tolerance does not depend on an unlucky first Simpson estimate
    let scale = composite_simpson(&f, a, b, 8).abs().max(whole.abs());
    let tol = abs_tol.max(rel_tol * scale);
    let mut budget = Budget { panels: MAX_PANELS, ok: true };
    let value = recurse(&f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH, &mut budget);
    if !budget.ok || !value.is_finite() {
        return Err(ControlError::Quadrature {
            a,
            b,
            tolerance: tol,
        });
    }
    Ok(value)
}

struct Budget {
    panels: usize,
    ok: bool,
}

fn composite_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|i| {
            let x0 = a + h * i as f64;
            h / 6.0 * (f(x0) + 4.0 * f(x0 + 0.5 * h) + f(x0 + h))
        })
        .sum()
}

#[allow(clippy::too_many_arguments)]
fn recurse<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    budget: &mut Budget,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    if depth == 0 || budget.panels == 0 || !budget.ok {
        budget.ok = false;
        return left + right + delta / 15.0;
    }
    budget.panels -= 1;
    recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, budget)
        + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, budget)
}

//! Adaptive Simpson quadrature.

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_DEPTH: u32 = 40;

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

/// Integral of `f` over `[a, b]` to absolute tolerance `tol`.
///
/// Uses the Richardson-corrected estimate `S₂ + (S₂ − S₁)/15` once
/// `|S₂ − S₁| ≤ 15·tol` on a panel; the tolerance is halved on each split.
/// Panels still unresolved at depth `max_depth` produce
/// [`Error::QuadratureNotConverged`] carrying the estimate reached.
pub fn adaptive_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, max_depth: u32) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let root = Panel { a, b, fa, fm, fb, whole: simpson(a, b, fa, fm, fb) };
    let mut total = 0.0;
    let mut unresolved = 0.0;
    let mut converged = true;
    // Explicit stack keeps deep refinements off the call stack.
    let mut stack = vec![(root, tol, max_depth)];
    while let Some((p, eps, depth)) = stack.pop() {
        let m = 0.5 * (p.a + p.b);
        let lm = 0.5 * (p.a + m);
        let rm = 0.5 * (m + p.b);
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(p.a, m, p.fa, flm, p.fm);
        let right = simpson(m, p.b, p.fm, frm, p.fb);
        let delta = left + right - p.whole;
        if delta.abs() <= 15.0 * eps || m <= p.a || m >= p.b {
            total += left + right + delta / 15.0;
        } else if depth == 0 {
            converged = false;
            unresolved += delta.abs();
            total += left + right + delta / 15.0;
        } else {
            stack.push((Panel { a: p.a, b: m, fa: p.fa, fm: flm, fb: p.fm, whole: left }, eps / 2.0, depth - 1));
            stack.push((Panel { a: m, b: p.b, fa: p.fm, fm: frm, fb: p.fb, whole: right }, eps / 2.0, depth - 1));
        }
    }
    if converged {
        Ok(total)
    } else {
        Err(Error::QuadratureNotConverged { estimate: total, error: unresolved })
    }
}

/// Composite trapezoid rule with `nodes` equally spaced nodes.
pub fn trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64, nodes: usize) -> f64 {
    assert!(nodes >= 2, "trapezoid needs at least two nodes");
    let h = (b - a) / (nodes - 1) as f64;
    let interior: f64 = (1..nodes - 1).map(|k| f(a + k as f64 * h)).sum();
    h * (0.5 * (f(a) + f(b)) + interior)
}

//! Adaptive Simpson quadrature with a combined absolute/relative stopping rule.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct SimpsonOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_depth: u32,
}

impl Default for SimpsonOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-10,
            max_depth: 48,
        }
    }
}

/// Integrate `f` over `[a, b]`.
///
/// The tolerance budget is `max(abs_tol, rel_tol * |I0|)` where `I0` is a
/// coarse 8-panel estimate; the budget is halved at each bisection and the
/// Richardson correction is added to each accepted panel.
pub fn adaptive_simpson<F>(f: F, a: f64, b: f64, opts: SimpsonOptions) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if a == b {
        return Ok(0.0);
    }
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Domain(format!("non-finite integration bounds [{a}, {b}]")));
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };

    let panels = 8;
    let h = (hi - lo) / panels as f64;
    let mut coarse = 0.0;
    let mut pieces = Vec::with_capacity(panels);
    for i in 0..panels {
        let x0 = lo + h * i as f64;
        let x1 = if i + 1 == panels { hi } else { x0 + h };
        let xm = 0.5 * (x0 + x1);
        let (f0, fm, f1) = (f(x0), f(xm), f(x1));
        let s = simpson(x0, x1, f0, fm, f1);
        coarse += s;
        pieces.push((x0, x1, f0, fm, f1, s));
    }
    let tol = opts.abs_tol.max(opts.rel_tol * coarse.abs());
    let panel_tol = tol / panels as f64;

    let mut total = 0.0;
    for (x0, x1, f0, fm, f1, s) in pieces {
        total += refine(&f, x0, x1, f0, fm, f1, s, panel_tol, opts.max_depth)?;
    }
    if !total.is_finite() {
        return Err(Error::QuadratureNonConvergence { a, b });
    }
    Ok(sign * total)
}

#[inline]
fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn refine<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 || !(m > a && m < b) {
        return Err(Error::QuadratureNonConvergence { a, b });
    }
    let l = refine(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?;
    let r = refine(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?;
    Ok(l + r)
}

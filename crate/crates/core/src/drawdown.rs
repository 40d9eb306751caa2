//! Drawdown functions and the transform pair `K_w`, `F_w`.
//!
//! `K_w(x) = v0 * exp(∫_{v0}^x du / (u - w(u)))` on `[v0, ∞)` and `F_w` is its
//! inverse, continued affinely below `v0` with slope `F_w'(v0+)` so that
//! `F_w(0) = w(v0)`.

use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::monotone::{solve_increasing, MonotoneCubic, MonotoneMap, INVERSION_REL_TOL};
use crate::quadrature::{adaptive_simpson, SimpsonOptions};

/// Upper end of the grid (as a multiple of `v0`) used for checks that cannot
/// be done analytically.
pub const CHECK_GRID_SPAN: f64 = 1e3;
const CHECK_GRID_POINTS: usize = 512;

/// Serialisable description of a drawdown function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DrawdownKind {
    /// `w(x) = alpha * x`
    Linear { alpha: f64 },
    /// `w(x) = c`
    Constant { c: f64 },
    /// Linear interpolation between `(x, w(x))` knots. Repeated abscissae
    /// encode upward jumps (the later value holds at the knot). Below the
    /// first knot `w` is proportional to `x`; above the last it grows with
    /// `tail_slope`.
    PiecewiseLinear {
        knots: Vec<(f64, f64)>,
        #[serde(default)]
        tail_slope: f64,
    },
    /// Monotone cubic interpolation through the knots, same continuation
    /// rules as `piecewise-linear`.
    Tabulated {
        knots: Vec<(f64, f64)>,
        #[serde(default)]
        tail_slope: f64,
    },
    /// `w_n(x) = (1 + 1/n) w(x) - x/n`, the relaxation of `base`.
    Relaxed { base: Box<DrawdownKind>, n: u64 },
}

/// A validated drawdown function.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "DrawdownKind", into = "DrawdownKind")]
pub struct DrawdownSpec {
    kind: DrawdownKind,
    #[serde(skip)]
    interp: Option<Arc<MonotoneCubic>>,
    #[serde(skip)]
    base: Option<Box<DrawdownSpec>>,
}

impl PartialEq for DrawdownSpec {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

impl From<DrawdownSpec> for DrawdownKind {
    fn from(s: DrawdownSpec) -> Self {
        s.kind
    }
}

impl TryFrom<DrawdownKind> for DrawdownSpec {
    type Error = Error;

    fn try_from(kind: DrawdownKind) -> Result<Self> {
        DrawdownSpec::new(kind)
    }
}

impl DrawdownSpec {
    pub fn new(kind: DrawdownKind) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidDrawdown(m));
        let mut interp = None;
        let mut base = None;
        match &kind {
            DrawdownKind::Linear { alpha } => {
                if !(*alpha > 0.0 && *alpha < 1.0) {
                    return bad(format!("linear ratio must lie in (0, 1), got {alpha}"));
                }
            }
            DrawdownKind::Constant { c } => {
                if !(*c > 0.0 && c.is_finite()) {
                    return bad(format!("constant floor must be positive, got {c}"));
                }
            }
            DrawdownKind::PiecewiseLinear { knots, tail_slope }
            | DrawdownKind::Tabulated { knots, tail_slope } => {
                if knots.is_empty() {
                    return bad("knot list is empty".into());
                }
                if knots.iter().any(|(x, w)| !(*x > 0.0 && *w > 0.0 && x.is_finite() && w.is_finite())) {
                    return bad("knots must have positive finite coordinates".into());
                }
                if knots.windows(2).any(|p| p[1].0 < p[0].0) {
                    return bad("knot abscissae must be ascending".into());
                }
                if knots.windows(2).any(|p| p[1].1 < p[0].1) {
                    return bad("w must be nondecreasing across knots".into());
                }
                if !(*tail_slope >= 0.0 && *tail_slope < 1.0) {
                    return bad(format!("tail slope must lie in [0, 1), got {tail_slope}"));
                }
                if matches!(kind, DrawdownKind::Tabulated { .. }) {
                    if knots.len() < 2 || knots.windows(2).any(|p| p[1].0 == p[0].0) {
                        return bad("tabulated w needs at least two distinct knots".into());
                    }
                    let (xs, ys): (Vec<f64>, Vec<f64>) = knots.iter().copied().unzip();
                    interp = Some(Arc::new(MonotoneCubic::new(xs, ys)?));
                }
            }
            DrawdownKind::Relaxed { base: b, n } => {
                if *n == 0 {
                    return bad("relaxation index must be positive".into());
                }
                base = Some(Box::new(DrawdownSpec::new((**b).clone())?));
            }
        }
        Ok(Self { kind, interp, base })
    }

    pub fn linear(alpha: f64) -> Result<Self> {
        Self::new(DrawdownKind::Linear { alpha })
    }

    pub fn constant(c: f64) -> Result<Self> {
        Self::new(DrawdownKind::Constant { c })
    }

    pub fn piecewise_linear(knots: Vec<(f64, f64)>, tail_slope: f64) -> Result<Self> {
        Self::new(DrawdownKind::PiecewiseLinear { knots, tail_slope })
    }

    pub fn tabulated(knots: Vec<(f64, f64)>, tail_slope: f64) -> Result<Self> {
        Self::new(DrawdownKind::Tabulated { knots, tail_slope })
    }

    pub fn kind(&self) -> &DrawdownKind {
        &self.kind
    }

    /// Whether `w` is nondecreasing everywhere (relaxations need not be).
    pub fn is_nondecreasing(&self) -> bool {
        !matches!(self.kind, DrawdownKind::Relaxed { .. })
    }

    /// `w(x)`, right-continuous at knots.
    pub fn eval(&self, x: f64) -> f64 {
        match &self.kind {
            DrawdownKind::Linear { alpha } => alpha * x,
            DrawdownKind::Constant { c } => *c,
            DrawdownKind::PiecewiseLinear { knots, tail_slope } => {
                piecewise_eval(knots, *tail_slope, x, false)
            }
            DrawdownKind::Tabulated { knots, tail_slope } => {
                self.tabulated_eval(knots, *tail_slope, x)
            }
            DrawdownKind::Relaxed { n, .. } => {
                let n = *n as f64;
                (1.0 + 1.0 / n) * self.base().eval(x) - x / n
            }
        }
    }

    /// Left limit `w(x-)`; differs from [`eval`](Self::eval) only at jumps.
    pub fn eval_left(&self, x: f64) -> f64 {
        match &self.kind {
            DrawdownKind::PiecewiseLinear { knots, tail_slope } => {
                piecewise_eval(knots, *tail_slope, x, true)
            }
            DrawdownKind::Relaxed { n, .. } => {
                let n = *n as f64;
                (1.0 + 1.0 / n) * self.base().eval_left(x) - x / n
            }
            _ => self.eval(x),
        }
    }

    fn base(&self) -> &DrawdownSpec {
        self.base.as_deref().expect("relaxed spec carries its base")
    }

    fn tabulated_eval(&self, knots: &[(f64, f64)], tail_slope: f64, x: f64) -> f64 {
        let (x0, w0) = knots[0];
        let (xl, wl) = knots[knots.len() - 1];
        if x < x0 {
            w0 * x / x0
        } else if x > xl {
            wl + tail_slope * (x - xl)
        } else {
            self.interp.as_ref().expect("tabulated spec carries interpolant").eval(x)
        }
    }

    /// Abscissae where `w` or its derivative may be discontinuous.
    pub fn breakpoints(&self) -> Vec<f64> {
        match &self.kind {
            DrawdownKind::PiecewiseLinear { knots, .. } | DrawdownKind::Tabulated { knots, .. } => {
                let mut v: Vec<f64> = knots.iter().map(|k| k.0).collect();
                v.dedup();
                v
            }
            DrawdownKind::Relaxed { .. } => self.base().breakpoints(),
            _ => Vec::new(),
        }
    }

    /// `lim w(x)/x` as `x → ∞`.
    pub fn asymptotic_ratio(&self) -> f64 {
        match &self.kind {
            DrawdownKind::Linear { alpha } => *alpha,
            DrawdownKind::Constant { .. } => 0.0,
            DrawdownKind::PiecewiseLinear { tail_slope, .. }
            | DrawdownKind::Tabulated { tail_slope, .. } => *tail_slope,
            DrawdownKind::Relaxed { n, .. } => {
                let n = *n as f64;
                (1.0 + 1.0 / n) * self.base().asymptotic_ratio() - 1.0 / n
            }
        }
    }

    /// `sup w(x)/x` over `[lo, ∞)` together with `inf w(x)/x` over the same
    /// range (grid-based where no closed form exists).
    fn ratio_bounds(&self, lo: f64) -> (f64, f64) {
        match &self.kind {
            DrawdownKind::Linear { alpha } => (*alpha, *alpha),
            DrawdownKind::Constant { c } => (c / lo, 0.0),
            DrawdownKind::PiecewiseLinear { knots, tail_slope } => {
                // w(x)/x is monotone on every affine piece, so endpoints suffice.
                let mut pts = vec![lo];
                pts.extend(knots.iter().map(|k| k.0).filter(|&x| x > lo));
                let mut sup = f64::NEG_INFINITY;
                let mut inf = f64::INFINITY;
                for &x in &pts {
                    for w in [self.eval_left(x), self.eval(x)] {
                        let r = w / x;
                        sup = sup.max(r);
                        inf = inf.min(r);
                    }
                }
                sup = sup.max(*tail_slope);
                inf = inf.min(*tail_slope);
                (sup, inf)
            }
            _ => {
                let mut sup = f64::NEG_INFINITY;
                let mut inf = f64::INFINITY;
                for x in check_grid(lo, &self.breakpoints()) {
                    for w in [self.eval_left(x), self.eval(x)] {
                        sup = sup.max(w / x);
                        inf = inf.min(w / x);
                    }
                }
                let tail = self.asymptotic_ratio();
                (sup.max(tail), inf.min(tail))
            }
        }
    }

    /// The bound `α₁` on `[lo, ∞)`.
    pub fn alpha1(&self, lo: f64) -> f64 {
        self.ratio_bounds(lo).0
    }

    /// Check `0 < w(x)/x ≤ α₁ < 1` on `[lo, ∞)` and return `α₁`.
    pub fn validate_from(&self, lo: f64) -> Result<f64> {
        if !(lo > 0.0 && lo.is_finite()) {
            return Err(Error::InvalidParameter(format!("v0 must be positive, got {lo}")));
        }
        let (sup, inf) = self.ratio_bounds(lo);
        if sup >= 1.0 {
            return Err(Error::InvalidDrawdown(format!(
                "w(x) >= x somewhere on [{lo}, ∞) (sup w(x)/x = {sup})"
            )));
        }
        let floor_positive = match &self.kind {
            // the tail ratio of a constant floor tends to zero but never reaches it
            DrawdownKind::Constant { .. } => true,
            DrawdownKind::PiecewiseLinear { .. } | DrawdownKind::Tabulated { .. } => {
                inf > 0.0 || self.eval(lo) > 0.0
            }
            _ => inf > 0.0,
        };
        if !floor_positive {
            return Err(Error::InvalidDrawdown(format!(
                "w(x)/x must stay positive on [{lo}, ∞) (inf = {inf})"
            )));
        }
        Ok(sup)
    }
}

fn piecewise_eval(knots: &[(f64, f64)], tail_slope: f64, x: f64, left: bool) -> f64 {
    let (x0, w0) = knots[0];
    if x < x0 || (left && x == x0) {
        return w0 * x / x0;
    }
    let (xl, wl) = knots[knots.len() - 1];
    if x > xl {
        return wl + tail_slope * (x - xl);
    }
    // index of the first knot strictly right of x (or at x for left limits)
    let k = if left {
        knots.partition_point(|k| k.0 < x)
    } else {
        knots.partition_point(|k| k.0 <= x)
    };
    if k >= knots.len() {
        return wl;
    }
    let (xa, wa) = knots[k - 1];
    let (xb, wb) = knots[k];
    if xb == xa {
        return wb;
    }
    wa + (wb - wa) * (x - xa) / (xb - xa)
}

/// Log-spaced grid on `[lo, CHECK_GRID_SPAN * lo]` merged with the given knots.
pub fn check_grid(lo: f64, knots: &[f64]) -> Vec<f64> {
    let hi = lo * CHECK_GRID_SPAN;
    let n = CHECK_GRID_POINTS;
    let mut g: Vec<f64> = (0..n)
        .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
        .collect();
    g.extend(knots.iter().copied().filter(|&x| x >= lo && x <= hi));
    g.sort_by(f64::total_cmp);
    g.dedup();
    g
}

/// `K_w` evaluated by adaptive quadrature from lazily filled checkpoints at
/// `v0 * 2^k`.
pub struct KIntegral {
    w: DrawdownSpec,
    v0: f64,
    alpha1: f64,
    breaks: Vec<f64>,
    opts: SimpsonOptions,
    checkpoints: RwLock<Vec<f64>>,
}

impl KIntegral {
    pub(crate) fn new(w: DrawdownSpec, v0: f64, alpha1: f64, opts: SimpsonOptions) -> Self {
        let breaks = w.breakpoints().into_iter().filter(|&b| b > v0).collect();
        Self {
            w,
            v0,
            alpha1,
            breaks,
            opts,
            checkpoints: RwLock::new(vec![v0.ln()]),
        }
    }

    pub fn v0(&self) -> f64 {
        self.v0
    }

    fn integrate(&self, a: f64, b: f64) -> Result<f64> {
        let mut total = 0.0;
        let mut left = a;
        let interior = self.breaks.iter().copied().filter(|&x| x > a && x < b);
        for right in interior.chain(std::iter::once(b)) {
            let w = &self.w;
            // on [left, right) w takes right-limits inside and the left limit at `right`
            let integrand = |u: f64| {
                let wu = if u >= right { w.eval_left(right) } else { w.eval(u) };
                1.0 / (u - wu)
            };
            total += adaptive_simpson(integrand, left, right, self.opts)?;
            left = right;
        }
        Ok(total)
    }

    fn checkpoint_x(&self, k: usize) -> f64 {
        self.v0 * 2f64.powi(k as i32)
    }

    /// `ln K(x)` for `x ≥ v0`.
    pub fn ln_eval(&self, x: f64) -> Result<f64> {
        if !(x >= self.v0) {
            return Err(Error::Domain(format!("K_w evaluated at {x} < v0 = {}", self.v0)));
        }
        if !x.is_finite() {
            return Ok(f64::INFINITY);
        }
        let k = ((x / self.v0).log2().floor().max(0.0)) as usize;
        let base = {
            let cps = self.checkpoints.read().expect("checkpoint lock");
            cps.get(k).copied()
        };
        let base = match base {
            Some(b) => b,
            None => {
                let mut cps = self.checkpoints.write().expect("checkpoint lock");
                while cps.len() <= k {
                    let j = cps.len();
                    let next = cps[j - 1] + self.integrate(self.checkpoint_x(j - 1), self.checkpoint_x(j))?;
                    cps.push(next);
                }
                cps[k]
            }
        };
        Ok(base + self.integrate(self.checkpoint_x(k), x)?)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.ln_eval(x).map(f64::exp).unwrap_or(f64::NAN)
    }

    /// `K'(x) = K(x) / (x - w(x))`, using right limits of `w`.
    pub fn deriv(&self, x: f64) -> f64 {
        self.eval_with_deriv(x).1
    }

    pub fn eval_with_deriv(&self, x: f64) -> (f64, f64) {
        let k = self.eval(x);
        (k, k / (x - self.w.eval(x)))
    }

    pub fn inverse(&self, y: f64) -> Result<f64> {
        if !(y >= self.v0) {
            return Err(Error::Inversion {
                target: y,
                reason: format!("below K_w(v0) = {}", self.v0),
            });
        }
        if y == self.v0 {
            return Ok(self.v0);
        }
        let ln_y = y.ln();
        // x/v0 ≤ K(x)/v0 ≤ (x/v0)^{1/(1-α₁)}
        // widened slightly: the root can sit on either end when w is linear
        let lo = (self.v0 * (y / self.v0).powf(1.0 - self.alpha1) * (1.0 - 1e-9)).max(self.v0);
        let hi = y * (1.0 + 1e-9);
        let g = |x: f64| match self.ln_eval(x) {
            Ok(l) => (l - ln_y, 1.0 / (x - self.w.eval(x))),
            Err(_) => (f64::NAN, f64::NAN),
        };
        solve_increasing(g, lo, hi, INVERSION_REL_TOL).map_err(|e| Error::Inversion {
            target: y,
            reason: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct KwOptions {
    /// Use quadrature even where a closed form exists.
    pub force_quadrature: bool,
    pub quadrature: SimpsonOptions,
}

/// Build `K_w` on `[v0, ∞)`.
pub fn build_kw(w: &DrawdownSpec, v0: f64) -> Result<MonotoneMap> {
    build_kw_with(w, v0, KwOptions::default())
}

pub fn build_kw_with(w: &DrawdownSpec, v0: f64, opts: KwOptions) -> Result<MonotoneMap> {
    let alpha1 = w.validate_from(v0)?;
    if !opts.force_quadrature {
        match w.kind() {
            DrawdownKind::Linear { alpha } => {
                let e = 1.0 / (1.0 - alpha);
                return MonotoneMap::power(v0.powf(1.0 - e), e, v0);
            }
            DrawdownKind::Constant { c } => {
                let s = v0 / (v0 - c);
                return MonotoneMap::affine(s, -c * s, v0);
            }
            _ => {}
        }
    }
    Ok(MonotoneMap::integral(KIntegral::new(w.clone(), v0, alpha1, opts.quadrature)))
}

/// How `F_w` is continued below `v0`.
#[derive(Debug, Clone, Default)]
pub enum Extension {
    /// Affine with slope `F_w'(v0+)`.
    #[default]
    Linear,
    /// A user map on `[0, v0]`; must be increasing, concave, positive at 0,
    /// continuous at `v0` and not flatter than `F_w'(v0+)` there.
    Custom(MonotoneMap),
}

/// Build `F_w`: the inverse of `K` on `[v0, ∞)`, extended to `[0, v0)`.
pub fn build_fw(k: &MonotoneMap, v0: f64, w: &DrawdownSpec) -> Result<MonotoneMap> {
    build_fw_with(k, v0, w, Extension::Linear)
}

pub fn build_fw_with(
    k: &MonotoneMap,
    v0: f64,
    w: &DrawdownSpec,
    extension: Extension,
) -> Result<MonotoneMap> {
    if (k.eval(v0) - v0).abs() > 1e-12 * v0 {
        return Err(Error::Domain(format!("K(v0) = {} differs from v0 = {v0}", k.eval(v0))));
    }
    let upper = k.inverse_map()?;
    let slope = 1.0 / k.deriv(v0);
    let linear = matches!(extension, Extension::Linear);
    let f = match extension {
        Extension::Linear => upper.linear_below(v0, slope, 0.0)?,
        Extension::Custom(below) => {
            check_extension(&below, v0, slope)?;
            upper.spliced_below(below, v0)
        }
    };
    let f0 = f.eval(0.0);
    if !(f0 > 0.0) {
        return Err(Error::InvalidDrawdown(format!(
            "F(0) = {f0} must be positive; K near identity implies w ≡ 0"
        )));
    }
    let expected = w.eval(v0);
    // only the affine continuation pins F(0) to w(v0)
    if linear {
        if (f0 - expected).abs() > 1e-8 * expected.max(1.0) {
            return Err(Error::Domain(format!(
                "F(0) = {f0} does not match w(v0) = {expected}; K was built for another w"
            )));
        }
    }
    Ok(f)
}

fn check_extension(below: &MonotoneMap, v0: f64, right_slope: f64) -> Result<()> {
    let n = 256;
    let xs: Vec<f64> = (0..=n).map(|i| v0 * i as f64 / n as f64).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| below.eval(x)).collect();
    if !(ys[0] > 0.0) {
        return Err(Error::InvalidDrawdown("extension must be positive at 0".into()));
    }
    if (ys[n] - v0).abs() > 1e-9 * v0 {
        return Err(Error::InvalidDrawdown(format!(
            "extension must equal v0 at v0, got {}",
            ys[n]
        )));
    }
    if ys.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::InvalidDrawdown("extension must be increasing".into()));
    }
    let tol = 1e-12 * v0;
    if ys.windows(3).any(|p| p[2] - 2.0 * p[1] + p[0] > tol) {
        return Err(Error::InvalidDrawdown("extension must be concave".into()));
    }
    let left_slope = (ys[n] - ys[n - 1]) / (xs[n] - xs[n - 1]);
    if left_slope < right_slope * (1.0 - 1e-9) {
        return Err(Error::InvalidDrawdown(
            "extension breaks concavity at v0 (left slope below F'(v0+))".into(),
        ));
    }
    Ok(())
}

/// `K_w`, `F_w` and the data they were built from.
#[derive(Debug, Clone)]
pub struct TransformPair {
    pub v0: f64,
    pub w: DrawdownSpec,
    pub k: MonotoneMap,
    pub f: MonotoneMap,
}

impl TransformPair {
    pub fn new(w: &DrawdownSpec, v0: f64) -> Result<Self> {
        Self::with_options(w, v0, KwOptions::default())
    }

    pub fn with_options(w: &DrawdownSpec, v0: f64, opts: KwOptions) -> Result<Self> {
        let k = build_kw_with(w, v0, opts)?;
        let f = build_fw(&k, v0, w)?;
        Ok(Self {
            v0,
            w: w.clone(),
            k,
            f,
        })
    }
}

/// The relaxation `w_n = (1 + 1/n) w - x/n` and its transform pair, with
/// `K_n = v0^{1/(1+n)} K^{n/(1+n)}` and `F_n(v) = F(v0^{-1/n} v^{(1+n)/n})`.
pub fn relax_wn(pair: &TransformPair, n: u64) -> Result<(DrawdownSpec, TransformPair)> {
    if n == 0 {
        return Err(Error::InvalidParameter("relaxation index must be positive".into()));
    }
    let v0 = pair.v0;
    let nf = n as f64;
    let wn = match pair.w.kind() {
        DrawdownKind::Linear { alpha } => {
            let a = (1.0 + 1.0 / nf) * alpha - 1.0 / nf;
            if !(a > 0.0) {
                return Err(Error::InvalidDrawdown(format!(
                    "w_{n}(x) = {a} x is not positive; n is below the admissible threshold"
                )));
            }
            DrawdownSpec::linear(a)?
        }
        _ => DrawdownSpec::new(DrawdownKind::Relaxed {
            base: Box::new(pair.w.kind().clone()),
            n,
        })?,
    };
    for x in check_grid(v0, &wn.breakpoints()) {
        let r = wn.eval(x).min(wn.eval_left(x)) / x;
        if !(r > 0.0) {
            return Err(Error::InvalidDrawdown(format!(
                "w_{n}(x)/x = {r} at x = {x}; n is below the admissible threshold"
            )));
        }
    }
    let k = pair.k.outer_power(v0.powf(1.0 / (1.0 + nf)), nf / (1.0 + nf));
    let upper = pair.k.inverse_map()?.inner_power(v0.powf(-1.0 / nf), (1.0 + nf) / nf);
    let slope = 1.0 / k.deriv(v0);
    let f = upper.linear_below(v0, slope, 0.0)?;
    if !(f.eval(0.0) > 0.0) {
        return Err(Error::InvalidDrawdown(format!("F_{n}(0) is not positive")));
    }
    let relaxed = TransformPair {
        v0,
        w: wn.clone(),
        k,
        f,
    };
    Ok((wn, relaxed))
}

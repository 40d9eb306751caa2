//! Strictly increasing maps with derivative and inverse.
//!
//! A [`MonotoneMap`] is immutable once built and cheap to clone: composite
//! representations share their inner maps through `Arc`.

use std::fmt;
use std::sync::Arc;

use crate::drawdown::KIntegral;
use crate::error::{Error, Result};

/// Relative tolerance used by every numerical inversion.
pub const INVERSION_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Representation {
    ClosedForm,
    Quadrature,
    Tabulated,
    /// Built from other maps (inverse, power reparametrisation, extension).
    Derived,
}

#[derive(Clone)]
enum Repr {
    /// `coef * x^exponent`
    Power { coef: f64, exponent: f64 },
    /// `slope * x + intercept`
    Affine { slope: f64, intercept: f64 },
    Integral(Arc<KIntegral>),
    InverseOf(Arc<MonotoneMap>),
    Tabulated(Arc<TabulatedMap>),
    /// `coef * inner(x)^exponent`
    OuterPower {
        inner: Arc<MonotoneMap>,
        coef: f64,
        exponent: f64,
    },
    /// `inner(coef * x^exponent)`
    InnerPower {
        inner: Arc<MonotoneMap>,
        coef: f64,
        exponent: f64,
    },
    /// `inner` on `[knot, ∞)`, affine with the given slope below `knot`.
    LinearBelow {
        inner: Arc<MonotoneMap>,
        knot: f64,
        value: f64,
        slope: f64,
    },
    /// `below` on `[lo, knot)`, `above` on `[knot, ∞)`.
    Spliced {
        below: Arc<MonotoneMap>,
        above: Arc<MonotoneMap>,
        knot: f64,
    },
}

/// An evaluable strictly increasing map on `[lo, hi]`.
#[derive(Clone)]
pub struct MonotoneMap {
    repr: Repr,
    lo: f64,
    hi: f64,
}

impl fmt::Debug for MonotoneMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.repr {
            Repr::Power { coef, exponent } => format!("Power({coef} * x^{exponent})"),
            Repr::Affine { slope, intercept } => format!("Affine({slope} * x + {intercept})"),
            Repr::Integral(_) => "Integral".to_string(),
            Repr::InverseOf(inner) => format!("InverseOf({inner:?})"),
            Repr::Tabulated(t) => format!("Tabulated({} nodes)", t.curve.len()),
            Repr::OuterPower { inner, coef, exponent } => {
                format!("{coef} * ({inner:?})^{exponent}")
            }
            Repr::InnerPower { inner, coef, exponent } => {
                format!("({inner:?})({coef} * x^{exponent})")
            }
            Repr::LinearBelow { inner, knot, .. } => format!("LinearBelow({knot}, {inner:?})"),
            Repr::Spliced { below, above, knot } => {
                format!("Spliced({below:?} | {knot} | {above:?})")
            }
        };
        write!(f, "MonotoneMap[{}, {}] {}", self.lo, self.hi, kind)
    }
}

impl MonotoneMap {
    pub fn power(coef: f64, exponent: f64, lo: f64) -> Result<Self> {
        if !(coef > 0.0 && exponent > 0.0 && coef.is_finite() && exponent.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "power map needs positive coefficient and exponent, got {coef}, {exponent}"
            )));
        }
        Ok(Self {
            repr: Repr::Power { coef, exponent },
            lo: lo.max(0.0),
            hi: f64::INFINITY,
        })
    }

    pub fn affine(slope: f64, intercept: f64, lo: f64) -> Result<Self> {
        if !(slope > 0.0 && slope.is_finite() && intercept.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "affine map needs a positive finite slope, got {slope}"
            )));
        }
        Ok(Self {
            repr: Repr::Affine { slope, intercept },
            lo,
            hi: f64::INFINITY,
        })
    }

    pub fn identity() -> Self {
        Self {
            repr: Repr::Affine {
                slope: 1.0,
                intercept: 0.0,
            },
            lo: 0.0,
            hi: f64::INFINITY,
        }
    }

    pub(crate) fn integral(k: KIntegral) -> Self {
        let lo = k.v0();
        Self {
            repr: Repr::Integral(Arc::new(k)),
            lo,
            hi: f64::INFINITY,
        }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn representation(&self) -> Representation {
        match &self.repr {
            Repr::Power { .. } | Repr::Affine { .. } => Representation::ClosedForm,
            Repr::Integral(_) => Representation::Quadrature,
            Repr::Tabulated(_) => Representation::Tabulated,
            _ => Representation::Derived,
        }
    }

    /// Exponent if the map is exactly `c * x^e` on its domain.
    pub fn power_exponent(&self) -> Option<f64> {
        match &self.repr {
            Repr::Power { exponent, .. } => Some(*exponent),
            Repr::Affine { intercept, .. } if *intercept == 0.0 => Some(1.0),
            Repr::InverseOf(inner) => inner.power_exponent().map(|e| 1.0 / e),
            Repr::OuterPower { inner, exponent, .. } | Repr::InnerPower { inner, exponent, .. } => {
                inner.power_exponent().map(|e| e * exponent)
            }
            _ => None,
        }
    }

    /// Exponent of the upper branch when it is a power, ignoring any
    /// continuation below a knot.
    pub fn tail_power_exponent(&self) -> Option<f64> {
        match &self.repr {
            Repr::LinearBelow { inner, .. } => inner.tail_power_exponent(),
            Repr::Spliced { above, .. } => above.tail_power_exponent(),
            Repr::Affine { .. } => Some(1.0),
            _ => self.power_exponent(),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match &self.repr {
            Repr::Power { coef, exponent } => coef * x.powf(*exponent),
            Repr::Affine { slope, intercept } => slope * x + intercept,
            Repr::Integral(k) => k.eval(x),
            Repr::InverseOf(inner) => inner.inverse(x).unwrap_or(f64::NAN),
            Repr::Tabulated(t) => t.eval(x),
            Repr::OuterPower {
                inner,
                coef,
                exponent,
            } => coef * inner.eval(x).powf(*exponent),
            Repr::InnerPower {
                inner,
                coef,
                exponent,
            } => inner.eval(coef * x.powf(*exponent)),
            Repr::LinearBelow {
                inner,
                knot,
                value,
                slope,
            } => {
                if x >= *knot {
                    inner.eval(x)
                } else {
                    value + slope * (x - knot)
                }
            }
            Repr::Spliced { below, above, knot } => {
                if x >= *knot {
                    above.eval(x)
                } else {
                    below.eval(x)
                }
            }
        }
    }

    /// Analytic (right) derivative.
    pub fn deriv(&self, x: f64) -> f64 {
        match &self.repr {
            Repr::Power { coef, exponent } => coef * exponent * x.powf(exponent - 1.0),
            Repr::Affine { slope, .. } => *slope,
            Repr::Integral(k) => k.deriv(x),
            Repr::InverseOf(inner) => match inner.inverse(x) {
                Ok(y) => 1.0 / inner.deriv(y),
                Err(_) => f64::NAN,
            },
            Repr::Tabulated(t) => t.deriv(x),
            Repr::OuterPower {
                inner,
                coef,
                exponent,
            } => coef * exponent * inner.eval(x).powf(exponent - 1.0) * inner.deriv(x),
            Repr::InnerPower {
                inner,
                coef,
                exponent,
            } => {
                let arg = coef * x.powf(*exponent);
                inner.deriv(arg) * coef * exponent * x.powf(exponent - 1.0)
            }
            Repr::LinearBelow {
                inner, knot, slope, ..
            } => {
                if x >= *knot {
                    inner.deriv(x)
                } else {
                    *slope
                }
            }
            Repr::Spliced { below, above, knot } => {
                if x >= *knot {
                    above.deriv(x)
                } else {
                    below.deriv(x)
                }
            }
        }
    }

    /// Value and derivative together; cheaper than two calls for inverse maps.
    pub fn eval_with_deriv(&self, x: f64) -> (f64, f64) {
        match &self.repr {
            Repr::InverseOf(inner) => match inner.inverse(x) {
                Ok(y) => (y, 1.0 / inner.deriv(y)),
                Err(_) => (f64::NAN, f64::NAN),
            },
            Repr::Integral(k) => k.eval_with_deriv(x),
            _ => (self.eval(x), self.deriv(x)),
        }
    }

    pub fn inverse(&self, y: f64) -> Result<f64> {
        match &self.repr {
            Repr::Power { coef, exponent } => {
                if y < 0.0 {
                    return Err(Error::Inversion {
                        target: y,
                        reason: "negative target for power map".into(),
                    });
                }
                Ok((y / coef).powf(1.0 / exponent))
            }
            Repr::Affine { slope, intercept } => Ok((y - intercept) / slope),
            Repr::Integral(k) => k.inverse(y),
            Repr::InverseOf(inner) => Ok(inner.eval(y)),
            Repr::Tabulated(t) => t.inverse(y),
            Repr::OuterPower {
                inner,
                coef,
                exponent,
            } => inner.inverse((y / coef).powf(1.0 / exponent)),
            Repr::InnerPower {
                inner,
                coef,
                exponent,
            } => {
                let z = inner.inverse(y)?;
                Ok((z / coef).powf(1.0 / exponent))
            }
            Repr::LinearBelow {
                inner,
                knot,
                value,
                slope,
            } => {
                if y >= *value {
                    inner.inverse(y)
                } else {
                    Ok(knot + (y - value) / slope)
                }
            }
            Repr::Spliced { below, above, knot } => {
                if y >= above.eval(*knot) {
                    above.inverse(y)
                } else {
                    below.inverse(y)
                }
            }
        }
    }

    /// The inverse as a map in its own right, closed form where possible.
    pub fn inverse_map(&self) -> Result<MonotoneMap> {
        let lo = self.eval(self.lo);
        let hi = if self.hi.is_finite() {
            self.eval(self.hi)
        } else {
            f64::INFINITY
        };
        let repr = match &self.repr {
            Repr::Power { coef, exponent } => Repr::Power {
                coef: coef.powf(-1.0 / exponent),
                exponent: 1.0 / exponent,
            },
            Repr::Affine { slope, intercept } => Repr::Affine {
                slope: 1.0 / slope,
                intercept: -intercept / slope,
            },
            Repr::InverseOf(inner) => return Ok((**inner).clone()),
            _ => Repr::InverseOf(Arc::new(self.clone())),
        };
        if !lo.is_finite() {
            return Err(Error::Domain("inverse of map with non-finite lower value".into()));
        }
        Ok(MonotoneMap { repr, lo, hi })
    }

    /// `coef * self(x)^exponent`.
    pub fn outer_power(&self, coef: f64, exponent: f64) -> MonotoneMap {
        let repr = match &self.repr {
            Repr::Power { coef: c, exponent: e } => Repr::Power {
                coef: coef * c.powf(exponent),
                exponent: e * exponent,
            },
            _ => Repr::OuterPower {
                inner: Arc::new(self.clone()),
                coef,
                exponent,
            },
        };
        MonotoneMap {
            repr,
            lo: self.lo,
            hi: self.hi,
        }
    }

    /// `self(coef * x^exponent)`, on the domain that maps into `self`'s.
    pub fn inner_power(&self, coef: f64, exponent: f64) -> MonotoneMap {
        let back = |y: f64| (y / coef).powf(1.0 / exponent);
        let repr = match &self.repr {
            Repr::Power { coef: c, exponent: e } => Repr::Power {
                coef: c * coef.powf(*e),
                exponent: e * exponent,
            },
            _ => Repr::InnerPower {
                inner: Arc::new(self.clone()),
                coef,
                exponent,
            },
        };
        MonotoneMap {
            repr,
            lo: back(self.lo),
            hi: if self.hi.is_finite() {
                back(self.hi)
            } else {
                f64::INFINITY
            },
        }
    }

    /// Continue the map affinely below `knot` with the given slope, down to `lo`.
    pub fn linear_below(&self, knot: f64, slope: f64, lo: f64) -> Result<MonotoneMap> {
        if !(slope > 0.0 && slope.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "extension slope must be positive, got {slope}"
            )));
        }
        if knot < self.lo {
            return Err(Error::Domain(format!(
                "extension knot {knot} below map domain {}",
                self.lo
            )));
        }
        Ok(MonotoneMap {
            repr: Repr::LinearBelow {
                inner: Arc::new(self.clone()),
                knot,
                value: self.eval(knot),
                slope,
            },
            lo,
            hi: self.hi,
        })
    }

    /// Use `below` under `knot` and `self` from `knot` upwards.
    pub fn spliced_below(&self, below: MonotoneMap, knot: f64) -> MonotoneMap {
        let lo = below.lo;
        MonotoneMap {
            repr: Repr::Spliced {
                below: Arc::new(below),
                above: Arc::new(self.clone()),
                knot,
            },
            lo,
            hi: self.hi,
        }
    }

    /// Tabulate on a log-spaced grid of `n` nodes over `[lo, hi]` with monotone
    /// cubic Hermite interpolation. Outside the grid the source map is used.
    pub fn tabulate(&self, lo: f64, hi: f64, n: usize) -> Result<MonotoneMap> {
        if !(lo > 0.0 && hi > lo && n >= 2) {
            return Err(Error::InvalidParameter(format!(
                "tabulation grid [{lo}, {hi}] with {n} nodes"
            )));
        }
        if lo < self.lo || hi > self.hi {
            return Err(Error::Domain(format!(
                "tabulation grid [{lo}, {hi}] exceeds map domain [{}, {}]",
                self.lo, self.hi
            )));
        }
        let (a, b) = (lo.ln(), hi.ln());
        let mut s = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        let mut d = Vec::with_capacity(n);
        for i in 0..n {
            let si = if i + 1 == n {
                b
            } else {
                a + (b - a) * i as f64 / (n - 1) as f64
            };
            let x = if i + 1 == n { hi } else { si.exp() };
            let (v, dv) = self.eval_with_deriv(x);
            s.push(si);
            y.push(v);
            d.push(dv * x);
        }
        let curve = MonotoneCubic::with_slopes(s, y, d)?;
        Ok(MonotoneMap {
            repr: Repr::Tabulated(Arc::new(TabulatedMap {
                curve,
                fallback: Some(self.clone()),
            })),
            lo: self.lo,
            hi: self.hi,
        })
    }

    /// A map interpolating the given strictly increasing points `(x, y)`,
    /// `x > 0`, log-spaced or not. The domain is exactly the table range.
    pub fn from_points(xs: &[f64], ys: &[f64]) -> Result<MonotoneMap> {
        if xs.len() != ys.len() || xs.len() < 2 {
            return Err(Error::InvalidParameter("need at least two points".into()));
        }
        if xs[0] <= 0.0 {
            return Err(Error::Domain("tabulated abscissae must be positive".into()));
        }
        let s: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
        let curve = MonotoneCubic::new(s, ys.to_vec())?;
        if ys.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("tabulated values must be strictly increasing".into()));
        }
        Ok(MonotoneMap {
            repr: Repr::Tabulated(Arc::new(TabulatedMap {
                curve,
                fallback: None,
            })),
            lo: xs[0],
            hi: *xs.last().unwrap(),
        })
    }

    /// The table's upper node, if this map is tabulated.
    pub fn table_extent(&self) -> Option<(f64, f64)> {
        match &self.repr {
            Repr::Tabulated(t) => Some((t.curve.xs[0].exp(), t.curve.xs.last().unwrap().exp())),
            _ => None,
        }
    }
}

/// Tabulated map in `(ln x, y)` coordinates.
struct TabulatedMap {
    curve: MonotoneCubic,
    fallback: Option<MonotoneMap>,
}

impl TabulatedMap {
    fn in_table(&self, s: f64) -> bool {
        s >= self.curve.xs[0] && s <= *self.curve.xs.last().unwrap()
    }

    fn eval(&self, x: f64) -> f64 {
        let s = x.ln();
        match &self.fallback {
            Some(f) if !self.in_table(s) => f.eval(x),
            _ => self.curve.eval(s),
        }
    }

    fn deriv(&self, x: f64) -> f64 {
        let s = x.ln();
        match &self.fallback {
            Some(f) if !self.in_table(s) => f.deriv(x),
            _ => self.curve.deriv(s) / x,
        }
    }

    fn inverse(&self, y: f64) -> Result<f64> {
        let y_lo = self.curve.ys[0];
        let y_hi = *self.curve.ys.last().unwrap();
        if y < y_lo || y > y_hi {
            return match &self.fallback {
                Some(f) => f.inverse(y),
                None => Err(Error::Inversion {
                    target: y,
                    reason: format!("outside tabulated range [{y_lo}, {y_hi}]"),
                }),
            };
        }
        let s = self.curve.inverse(y)?;
        Ok(s.exp())
    }
}

/// Monotone piecewise-cubic Hermite interpolant (Fritsch–Carlson limiter).
#[derive(Debug, Clone)]
pub struct MonotoneCubic {
    xs: Vec<f64>,
    ys: Vec<f64>,
    ds: Vec<f64>,
}

impl MonotoneCubic {
    /// Slopes estimated from the data by weighted three-point differences.
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        Self::check(&xs, &ys)?;
        let n = xs.len();
        let sec: Vec<f64> = (0..n - 1)
            .map(|i| (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]))
            .collect();
        let mut ds = vec![0.0; n];
        ds[0] = sec[0];
        ds[n - 1] = sec[n - 2];
        for i in 1..n - 1 {
            let (h0, h1) = (xs[i] - xs[i - 1], xs[i + 1] - xs[i]);
            ds[i] = if sec[i - 1] * sec[i] <= 0.0 {
                0.0
            } else {
                (h1 * sec[i - 1] + h0 * sec[i]) / (h0 + h1)
            };
        }
        Ok(Self::limited(xs, ys, ds, &sec))
    }

    /// Use the supplied slopes, limited where they would break monotonicity.
    pub fn with_slopes(xs: Vec<f64>, ys: Vec<f64>, ds: Vec<f64>) -> Result<Self> {
        Self::check(&xs, &ys)?;
        if ds.len() != xs.len() {
            return Err(Error::InvalidParameter("slope count mismatch".into()));
        }
        let sec: Vec<f64> = (0..xs.len() - 1)
            .map(|i| (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]))
            .collect();
        Ok(Self::limited(xs, ys, ds, &sec))
    }

    fn check(xs: &[f64], ys: &[f64]) -> Result<()> {
        if xs.len() != ys.len() || xs.len() < 2 {
            return Err(Error::InvalidParameter("need at least two nodes".into()));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("nodes must be strictly increasing".into()));
        }
        if ys.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Domain("values must be nondecreasing".into()));
        }
        if xs.iter().chain(ys).any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite node".into()));
        }
        Ok(())
    }

    fn limited(xs: Vec<f64>, ys: Vec<f64>, mut ds: Vec<f64>, sec: &[f64]) -> Self {
        for d in ds.iter_mut() {
            if !(*d >= 0.0) {
                *d = 0.0;
            }
        }
        for (i, &delta) in sec.iter().enumerate() {
            if delta == 0.0 {
                ds[i] = 0.0;
                ds[i + 1] = 0.0;
                continue;
            }
            let a = ds[i] / delta;
            let b = ds[i + 1] / delta;
            let r2 = a * a + b * b;
            if r2 > 9.0 {
                let tau = 3.0 / r2.sqrt();
                ds[i] = tau * a * delta;
                ds[i + 1] = tau * b * delta;
            }
        }
        Self { xs, ys, ds }
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    fn segment(&self, x: f64) -> usize {
        let n = self.xs.len();
        match self.xs.partition_point(|&v| v <= x) {
            0 => 0,
            k if k >= n => n - 2,
            k => k - 1,
        }
    }

    /// Evaluates the interpolant; linear extrapolation with end slopes.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0] + self.ds[0] * (x - self.xs[0]);
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1] + self.ds[n - 1] * (x - self.xs[n - 1]);
        }
        let i = self.segment(x);
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.ys[i] + h10 * h * self.ds[i] + h01 * self.ys[i + 1] + h11 * h * self.ds[i + 1]
    }

    pub fn deriv(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ds[0];
        }
        if x >= self.xs[n - 1] {
            return self.ds[n - 1];
        }
        let i = self.segment(x);
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let t2 = t * t;
        let d00 = (6.0 * t2 - 6.0 * t) / h;
        let d10 = 3.0 * t2 - 4.0 * t + 1.0;
        let d01 = (-6.0 * t2 + 6.0 * t) / h;
        let d11 = 3.0 * t2 - 2.0 * t;
        d00 * self.ys[i] + d10 * self.ds[i] + d01 * self.ys[i + 1] + d11 * self.ds[i + 1]
    }

    /// Inverse within the node range.
    pub fn inverse(&self, y: f64) -> Result<f64> {
        let n = self.xs.len();
        let k = self.ys.partition_point(|&v| v < y);
        let (lo, hi) = if k == 0 {
            (self.xs[0], self.xs[0])
        } else if k >= n {
            (self.xs[n - 1], self.xs[n - 1])
        } else {
            (self.xs[k - 1], self.xs[k])
        };
        if lo == hi {
            return Ok(lo);
        }
        solve_increasing(|x| (self.eval(x) - y, self.deriv(x)), lo, hi, INVERSION_REL_TOL)
            .map_err(|_| Error::Inversion {
                target: y,
                reason: "interpolant inversion failed".into(),
            })
    }
}

/// Root of an increasing function on a bracket `[lo, hi]` with `g(lo) <= 0 <= g(hi)`,
/// by Newton steps safeguarded with bisection. `g` returns value and derivative.
pub fn solve_increasing<G>(g: G, mut lo: f64, mut hi: f64, rel_tol: f64) -> Result<f64>
where
    G: Fn(f64) -> (f64, f64),
{
    let (glo, _) = g(lo);
    let (ghi, _) = g(hi);
    if glo == 0.0 {
        return Ok(lo);
    }
    if ghi == 0.0 {
        return Ok(hi);
    }
    if !(glo < 0.0 && ghi > 0.0) {
        return Err(Error::Inversion {
            target: f64::NAN,
            reason: format!("bracket [{lo}, {hi}] does not straddle the root ({glo}, {ghi})"),
        });
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..300 {
        let (gx, dgx) = g(x);
        if gx == 0.0 {
            return Ok(x);
        }
        if gx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let newton = x - gx / dgx;
        let next = if dgx > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let step = (next - x).abs();
        x = next;
        if step <= rel_tol * x.abs() || (hi - lo) <= rel_tol * x.abs() {
            return Ok(x);
        }
    }
    Err(Error::Inversion {
        target: f64::NAN,
        reason: "no convergence in 300 iterations".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_inverse_is_closed_form() {
        let k = MonotoneMap::power(1.0, 2.0, 1.0).unwrap();
        let f = k.inverse_map().unwrap();
        assert_eq!(f.representation(), Representation::ClosedForm);
        assert!((f.eval(16.0) - 4.0).abs() < 1e-14);
        assert!((f.deriv(16.0) - 0.125).abs() < 1e-14);
        assert_eq!(f.power_exponent(), Some(0.5));
    }

    #[test]
    fn outer_and_inner_power_fold_into_power() {
        let k = MonotoneMap::power(1.0, 2.0, 1.0).unwrap();
        let kn = k.outer_power(1.0, 2.0 / 3.0);
        assert_eq!(kn.representation(), Representation::ClosedForm);
        assert!((kn.eval(8.0) - 8f64.powf(4.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn linear_below_matches_value_and_slope() {
        let f = MonotoneMap::power(1.0, 0.5, 1.0).unwrap();
        let ext = f.linear_below(1.0, 0.5, 0.0).unwrap();
        assert_eq!(ext.eval(0.0), 0.5);
        assert_eq!(ext.eval(1.0), 1.0);
        assert!((ext.inverse(0.75).unwrap() - 0.5).abs() < 1e-15);
        assert!((ext.inverse(4.0).unwrap() - 16.0).abs() < 1e-12);
    }

    #[test]
    fn cubic_reproduces_nodes_and_stays_monotone() {
        let xs = vec![0.0, 1.0, 2.0, 3.0, 4.0];
        let ys = vec![0.0, 0.1, 0.1, 2.0, 2.1];
        let c = MonotoneCubic::new(xs.clone(), ys.clone()).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert!((c.eval(*x) - y).abs() < 1e-15);
        }
        let mut prev = c.eval(0.0);
        for i in 1..=400 {
            let v = c.eval(i as f64 / 100.0);
            assert!(v >= prev - 1e-15);
            prev = v;
        }
    }

    #[test]
    fn tabulated_power_is_accurate() {
        let k = MonotoneMap::power(1.0, 2.0, 1.0).unwrap();
        let t = k.tabulate(1.0, 1000.0, 2048).unwrap();
        for &x in &[1.0, 1.7, 33.3, 999.0] {
            assert!((t.eval(x) / (x * x) - 1.0).abs() < 1e-9, "{x}");
            assert!((t.deriv(x) / (2.0 * x) - 1.0).abs() < 1e-6, "{x}");
            assert!((t.inverse(x * x).unwrap() / x - 1.0).abs() < 1e-9);
        }
        // beyond the table the source takes over
        assert_eq!(t.eval(4000.0), 16e6);
    }

    #[test]
    fn solver_rejects_bad_bracket() {
        assert!(solve_increasing(|x| (x - 5.0, 1.0), 0.0, 1.0, 1e-12).is_err());
        let r = solve_increasing(|x| (x * x * x - 2.0, 3.0 * x * x), 0.0, 2.0, 1e-14).unwrap();
        assert!((r - 2f64.cbrt()).abs() < 1e-13);
    }
}

//! Utility functions, composition with `F_w` and the elasticity lemmas.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::monotone::MonotoneMap;

/// Relative slack below which a lemma inequality counts as satisfied.
pub const LEMMA_REL_TOL: f64 = 1e-12;

pub const DEFAULT_LAMBDAS: [f64; 5] = [1.01, 1.1, 2.0, 10.0, 100.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sign {
    Positive,
    Negative,
    /// Changes sign on `(0, ∞)`; only usable with the expected-utility objective.
    Indefinite,
}

impl Sign {
    pub fn as_f64(self) -> f64 {
        match self {
            Sign::Positive => 1.0,
            Sign::Negative => -1.0,
            Sign::Indefinite => 0.0,
        }
    }
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Kind {
    /// `x^p / p`
    Power(f64),
    Log,
    Composed(Box<UtilitySpec>, MonotoneMap),
    Shifted(Box<UtilitySpec>, f64),
    Custom {
        name: String,
        eval: ScalarFn,
        deriv: ScalarFn,
    },
}

/// A nondecreasing concave utility with analytic right derivative.
#[derive(Clone)]
pub struct UtilitySpec {
    kind: Kind,
    sign: Sign,
}

impl fmt::Debug for UtilitySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.describe())
    }
}

/// `x^p / p`, the power utility.
pub fn power_utility(p: f64, x: f64) -> f64 {
    x.powf(p) / p
}

impl UtilitySpec {
    pub fn power(p: f64) -> Result<Self> {
        if !(p < 1.0 && p != 0.0 && p.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "power exponent must lie in (-∞, 1) \\ {{0}}, got {p}"
            )));
        }
        let sign = if p > 0.0 { Sign::Positive } else { Sign::Negative };
        Ok(Self {
            kind: Kind::Power(p),
            sign,
        })
    }

    pub fn log() -> Self {
        Self {
            kind: Kind::Log,
            sign: Sign::Indefinite,
        }
    }

    /// A user utility; `deriv` must be its right derivative.
    pub fn custom<F, D>(name: &str, sign: Sign, eval: F, deriv: D) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            kind: Kind::Custom {
                name: name.to_string(),
                eval: Arc::new(eval),
                deriv: Arc::new(deriv),
            },
            sign,
        }
    }

    /// `U + kappa`; the shift must keep the sign of `U`.
    pub fn shifted(&self, kappa: f64) -> Result<Self> {
        let keeps = match self.sign {
            Sign::Positive => kappa >= 0.0,
            Sign::Negative => kappa <= 0.0,
            Sign::Indefinite => true,
        };
        if !keeps || !kappa.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "shift {kappa} does not preserve the sign of {}",
                self.describe()
            )));
        }
        Ok(Self {
            kind: Kind::Shifted(Box::new(self.clone()), kappa),
            sign: self.sign,
        })
    }

    /// `U ∘ F`.
    pub fn compose(&self, f: &MonotoneMap) -> Result<Self> {
        if !f.contains(0.0) {
            return Err(Error::Domain(format!(
                "composition needs F on [0, ∞), got domain starting at {}",
                f.lo()
            )));
        }
        // F(0) = 0 is tolerated when U stays finite there (positive powers)
        let f0 = f.eval(0.0);
        if !(f0 >= 0.0) || !self.eval(f0).is_finite() {
            return Err(Error::Domain(format!("U is not defined at F(0) = {f0}")));
        }
        Ok(Self {
            kind: Kind::Composed(Box::new(self.clone()), f.clone()),
            sign: self.sign,
        })
    }

    pub fn sign(&self) -> Sign {
        self.sign
    }

    pub fn is_log(&self) -> bool {
        matches!(self.kind, Kind::Log)
    }

    /// `Some(p)` for a plain power utility.
    pub fn power_exponent(&self) -> Option<f64> {
        match self.kind {
            Kind::Power(p) => Some(p),
            _ => None,
        }
    }

    /// Large-wealth power exponent: `p` for a power, `p e` for a power
    /// composed with a map whose upper branch is `c x^e`.
    pub fn composed_exponent(&self) -> Option<f64> {
        match &self.kind {
            Kind::Power(p) => Some(*p),
            Kind::Composed(base, f) => Some(base.composed_exponent()? * f.tail_power_exponent()?),
            Kind::Shifted(base, _) => base.composed_exponent(),
            _ => None,
        }
    }

    pub fn describe(&self) -> String {
        match &self.kind {
            Kind::Power(p) => format!("power({p})"),
            Kind::Log => "log".into(),
            Kind::Composed(u, f) => format!("{} ∘ {f:?}", u.describe()),
            Kind::Shifted(u, k) => format!("{} + {k}", u.describe()),
            Kind::Custom { name, .. } => format!("custom({name})"),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match &self.kind {
            Kind::Power(p) => power_utility(*p, x),
            Kind::Log => x.ln(),
            Kind::Composed(u, f) => u.eval(f.eval(x)),
            Kind::Shifted(u, k) => u.eval(x) + k,
            Kind::Custom { eval, .. } => eval(x),
        }
    }

    pub fn right_deriv(&self, x: f64) -> f64 {
        match &self.kind {
            Kind::Power(p) => x.powf(p - 1.0),
            Kind::Log => 1.0 / x,
            Kind::Composed(u, f) => {
                let (fx, dfx) = f.eval_with_deriv(x);
                u.right_deriv(fx) * dfx
            }
            Kind::Shifted(u, _) => u.right_deriv(x),
            Kind::Custom { deriv, .. } => deriv(x),
        }
    }

    /// `ln |U(x)|`, computed without forming `U(x)` where that could overflow.
    pub fn ln_abs(&self, x: f64) -> f64 {
        match &self.kind {
            Kind::Power(p) => p * x.ln() - p.abs().ln(),
            Kind::Log => x.ln().abs().ln(),
            Kind::Composed(u, f) => u.ln_abs(f.eval(x)),
            Kind::Shifted(u, k) => {
                let l = u.ln_abs(x);
                let s = u.sign.as_f64();
                if s == 0.0 {
                    return (u.eval(x) + k).abs().ln();
                }
                l + (s + k * (-l).exp()).abs().ln()
            }
            Kind::Custom { eval, .. } => eval(x).abs().ln(),
        }
    }

    /// `x U'₊(x) / |U(x)|`.
    pub fn elasticity(&self, x: f64) -> Result<f64> {
        if !(x > 0.0) {
            return Err(Error::Domain(format!("elasticity at non-positive wealth {x}")));
        }
        let u = self.eval(x);
        if u == 0.0 {
            return Err(Error::Domain(format!("elasticity undefined where U({x}) = 0")));
        }
        Ok(x * self.right_deriv(x) / u.abs())
    }

    /// Grid check of monotonicity and concavity (second differences in
    /// `ln x`-spacing adjusted to plain spacing).
    pub fn check_shape(&self, xs: &[f64]) -> Result<()> {
        let us: Vec<f64> = xs.iter().map(|&x| self.eval(x)).collect();
        let scale = |i: usize| us[i].abs().max(1.0);
        for i in 1..xs.len() {
            if us[i] < us[i - 1] - 1e-12 * scale(i) {
                return Err(Error::Domain(format!("{} decreases near {}", self.describe(), xs[i])));
            }
        }
        for i in 1..xs.len().saturating_sub(1) {
            let s1 = (us[i] - us[i - 1]) / (xs[i] - xs[i - 1]);
            let s2 = (us[i + 1] - us[i]) / (xs[i + 1] - xs[i]);
            if s2 > s1 * (1.0 + 1e-9) + 1e-12 {
                return Err(Error::Domain(format!("{} is not concave near {}", self.describe(), xs[i])));
            }
        }
        if self.sign != Sign::Indefinite {
            let s = self.sign.as_f64();
            if let Some(x) = xs.iter().zip(&us).find(|(_, u)| !(s * **u > 0.0)).map(|(x, _)| x) {
                return Err(Error::Domain(format!("{} is not sign-definite at {x}", self.describe())));
            }
        }
        Ok(())
    }
}

/// Risk aversion `α + ρ(1 - α)` of the unconstrained investor equivalent to a
/// constrained one with risk aversion `ρ` and linear drawdown `α`.
pub fn composed_risk_aversion(rho: f64, alpha: f64) -> f64 {
    alpha + rho * (1.0 - alpha)
}

/// `n` log-spaced points on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![lo];
    }
    (0..n)
        .map(|i| {
            if i + 1 == n {
                hi
            } else {
                lo * (hi / lo).powf(i as f64 / (n - 1) as f64)
            }
        })
        .collect()
}

/// The default lemma grid: 512 points on `[x0, 10⁶ x0]`.
pub fn default_lemma_grid(x0: f64) -> Vec<f64> {
    log_grid(x0, 1e6 * x0, 512)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElasticityReport {
    pub gamma: f64,
    pub x0: f64,
    /// Largest relative violation of the scaling inequality over the grid.
    pub grid_max_violation: f64,
    /// Grid pairs violating by more than [`LEMMA_REL_TOL`].
    pub violations: usize,
    pub max_elasticity: f64,
    /// False when the elasticity is still growing at the top of the grid,
    /// i.e. the asymptotic-elasticity bound looks infinite.
    pub ae_bounded: bool,
}

fn ae_bounded(xs: &[f64], el: &[f64]) -> bool {
    // slope of ln e against ln x over the top quarter of the grid
    let n = xs.len();
    let start = n - (n / 4).max(2);
    let (lx0, lx1) = (xs[start].ln(), xs[n - 1].ln());
    let (e0, e1) = (el[start].abs(), el[n - 1].abs());
    if e0 == 0.0 || e1 == 0.0 || lx1 == lx0 {
        return true;
    }
    (e1.ln() - e0.ln()) / (lx1 - lx0) < 0.05
}

/// Check `U(x) ≤ U(λx) ≤ λ^γ U(x)` with `γ = sign(U) sup x U'/|U|` on the
/// grid pairs.
pub fn verify_scaling_lemma(
    u: &UtilitySpec,
    x0: f64,
    lambdas: &[f64],
    xs: &[f64],
) -> Result<ElasticityReport> {
    let s = u.sign.as_f64();
    if s == 0.0 {
        return Err(Error::InvalidParameter(
            "scaling lemma needs a sign-definite utility; use the log variant".into(),
        ));
    }
    let xs: Vec<f64> = xs.iter().copied().filter(|&x| x >= x0).collect();
    if xs.len() < 2 {
        return Err(Error::InvalidParameter("lemma grid needs points above x0".into()));
    }
    let el = xs.iter().map(|&x| u.elasticity(x)).collect::<Result<Vec<_>>>()?;
    // the sup must also cover the scaled points λx that the check evaluates
    let mut max_e = el.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for &x in &xs {
        for &lam in lambdas {
            max_e = max_e.max(u.elasticity(lam * x)?);
        }
    }
    let gamma = s * max_e;
    let mut worst = 0.0f64;
    let mut violations = 0;
    for &x in &xs {
        let ux = u.eval(x);
        for &lam in lambdas {
            let ul = u.eval(lam * x);
            let lower = (ux - ul) / ux.abs();
            let upper = (ul - lam.powf(gamma) * ux) / ux.abs();
            let v = lower.max(upper).max(0.0);
            if v > LEMMA_REL_TOL {
                violations += 1;
            }
            worst = worst.max(v);
        }
    }
    Ok(ElasticityReport {
        gamma,
        x0,
        grid_max_violation: worst,
        violations,
        max_elasticity: max_e,
        ae_bounded: ae_bounded(&xs, &el),
    })
}

/// Logarithmic form `U(x) ≤ U(λx) ≤ U(x) + γ ln λ` with `γ = sup x U'(x)`,
/// for log-type utilities (possibly composed with `F_w`).
pub fn verify_log_scaling(
    u: &UtilitySpec,
    x0: f64,
    lambdas: &[f64],
    xs: &[f64],
) -> Result<ElasticityReport> {
    let xs: Vec<f64> = xs.iter().copied().filter(|&x| x >= x0).collect();
    if xs.len() < 2 {
        return Err(Error::InvalidParameter("lemma grid needs points above x0".into()));
    }
    let el: Vec<f64> = xs.iter().map(|&x| x * u.right_deriv(x)).collect();
    let mut gamma = el.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for &x in &xs {
        for &lam in lambdas {
            gamma = gamma.max(lam * x * u.right_deriv(lam * x));
        }
    }
    let mut worst = 0.0f64;
    let mut violations = 0;
    for &x in &xs {
        let ux = u.eval(x);
        for &lam in lambdas {
            let ul = u.eval(lam * x);
            let scale = ux.abs().max(1.0);
            let v = ((ux - ul) / scale).max((ul - ux - gamma * lam.ln()) / scale).max(0.0);
            if v > LEMMA_REL_TOL {
                violations += 1;
            }
            worst = worst.max(v);
        }
    }
    Ok(ElasticityReport {
        gamma,
        x0,
        grid_max_violation: worst,
        violations,
        max_elasticity: gamma,
        ae_bounded: ae_bounded(&xs, &el),
    })
}

/// `x (U∘F)'(x) / |U∘F(x)|` minus `F(x) U'(F(x)) / |U(F(x))|` at each grid
/// point; non-positive entries confirm the composition bound.
pub fn composition_elasticity_gaps(
    u: &UtilitySpec,
    f: &MonotoneMap,
    xs: &[f64],
) -> Result<Vec<f64>> {
    let c = u.compose(f)?;
    xs.iter()
        .map(|&x| Ok(c.elasticity(x)? - u.elasticity(f.eval(x))?))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SandwichBounds {
    pub c_minus: f64,
    pub c_plus: f64,
    /// Point beyond which the elasticity stays within `ε` of `γ` on the grid.
    pub y0: f64,
}

/// Constants with `c₋ U^{γ(1-ε)} ≤ U ≤ c₊ U^{γ(1+ε)}` on `[x0, ∞)`: ratio
/// extremes over `[x0, y0]`, beyond which the elasticity band makes the ratios
/// monotone in the right direction.
pub fn power_sandwich(u: &UtilitySpec, gamma: f64, eps: f64, x0: f64) -> Result<SandwichBounds> {
    power_sandwich_on(u, gamma, eps, &default_lemma_grid(x0))
}

pub fn power_sandwich_on(u: &UtilitySpec, gamma: f64, eps: f64, xs: &[f64]) -> Result<SandwichBounds> {
    if !(gamma < 1.0 && gamma != 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sandwich exponent must lie in (-∞, 1) \\ {{0}}, got {gamma}"
        )));
    }
    if !(eps > 0.0 && eps < 1.0) || u.sign == Sign::Indefinite {
        return Err(Error::InvalidParameter(
            "sandwich needs ε in (0, 1) and a sign-definite utility".into(),
        ));
    }
    let (q_lo, q_hi) = (gamma * (1.0 - eps), gamma * (1.0 + eps));
    let (band_lo, band_hi) = (q_lo.min(q_hi), q_lo.max(q_hi));
    // signed elasticity x U'/U tends to γ
    let signed: Vec<f64> = xs
        .iter()
        .map(|&x| x * u.right_deriv(x) / u.eval(x))
        .collect();
    let inside = |s: f64| s > band_lo && s < band_hi;
    let first_tail = signed
        .iter()
        .rposition(|&s| !inside(s))
        .map_or(0, |i| i + 1);
    if first_tail >= xs.len() - 1 {
        return Err(Error::NonConvergentElasticity(format!(
            "x U'/U leaves ({band_lo}, {band_hi}) at the top of the grid"
        )));
    }
    let y0 = xs[first_tail];
    let ratios = |q: f64| xs[..=first_tail].iter().map(move |&x| u.eval(x) / power_utility(q, x));
    let (c_minus, c_plus) = if gamma > 0.0 {
        (
            ratios(q_lo).fold(f64::INFINITY, f64::min),
            ratios(q_hi).fold(f64::NEG_INFINITY, f64::max),
        )
    } else {
        (
            ratios(q_lo).fold(f64::NEG_INFINITY, f64::max),
            ratios(q_hi).fold(f64::INFINITY, f64::min),
        )
    };
    Ok(SandwichBounds { c_minus, c_plus, y0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_basics() {
        let u = UtilitySpec::power(0.5).unwrap();
        assert!((u.eval(4.0) - 4.0).abs() < 1e-15);
        assert!((u.elasticity(7.0).unwrap() - 0.5).abs() < 1e-15);
        let n = UtilitySpec::power(-1.0).unwrap();
        assert_eq!(n.sign(), Sign::Negative);
        assert!((n.elasticity(3.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(UtilitySpec::power(1.0).is_err());
        assert!(UtilitySpec::power(0.0).is_err());
        assert!((u.ln_abs(9.0) - 6f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn log_elasticity_rejected_at_one() {
        assert!(UtilitySpec::log().elasticity(1.0).is_err());
    }

    #[test]
    fn compose_with_power_map() {
        let u = UtilitySpec::power(0.5).unwrap();
        let f = MonotoneMap::power(1.0, 0.5, 0.0).unwrap();
        let c = u.compose(&f).unwrap();
        assert!((c.eval(16.0) - 4.0).abs() < 1e-14);
        assert!((c.elasticity(5.0).unwrap() - 0.25).abs() < 1e-14);
        assert_eq!(c.composed_exponent(), Some(0.25));
    }

    #[test]
    fn compose_log_with_power() {
        let f = MonotoneMap::power(2.0, 0.5, 0.0).unwrap();
        let c = UtilitySpec::log().compose(&f);
        // log is not defined at F(0) = 0
        assert!(c.is_err());
        let f = MonotoneMap::affine(0.5, 0.5, 0.0).unwrap();
        let c = UtilitySpec::log().compose(&f).unwrap();
        assert!((c.eval(3.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn risk_aversion_mapping() {
        assert!((composed_risk_aversion(2.0, 0.5) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn shift_keeps_sign() {
        let u = UtilitySpec::power(0.5).unwrap();
        assert!(u.shifted(-1.0).is_err());
        let s = u.shifted(3.0).unwrap();
        assert!((s.ln_abs(4.0) - 7f64.ln()).abs() < 1e-14);
        let n = UtilitySpec::power(-1.0).unwrap().shifted(-0.5).unwrap();
        assert!((n.ln_abs(2.0) - 1f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn scaling_lemma_on_power() {
        let xs = default_lemma_grid(1.0);
        for p in [0.5, -1.0, -3.0, 0.1] {
            let u = UtilitySpec::power(p).unwrap();
            let r = verify_scaling_lemma(&u, 1.0, &DEFAULT_LAMBDAS, &xs).unwrap();
            assert!((r.gamma - p).abs() < 1e-12, "{p}: {}", r.gamma);
            assert_eq!(r.violations, 0, "{p}: {}", r.grid_max_violation);
            assert!(r.ae_bounded);
        }
    }

    #[test]
    fn exponential_utility_fails_ae() {
        let u = UtilitySpec::custom("-exp(-x)", Sign::Negative, |x| -(-x).exp(), |x| (-x).exp());
        // keep U away from underflow
        let xs = log_grid(1.0, 500.0, 256);
        let r = verify_scaling_lemma(&u, 1.0, &[1.01], &xs).unwrap();
        assert!(!r.ae_bounded);
        assert!(r.max_elasticity > 400.0);
    }

    #[test]
    fn sandwich_for_power_is_trivial() {
        let u = UtilitySpec::power(0.5).unwrap();
        let b = power_sandwich(&u, 0.5, 0.1, 1.0).unwrap();
        assert!((b.c_minus - 0.45 / 0.5).abs() < 1e-12);
        assert!((b.c_plus - 0.55 / 0.5).abs() < 1e-12);
        assert!(power_sandwich(&UtilitySpec::log(), 0.0, 0.1, 1.0).is_err());
    }
}

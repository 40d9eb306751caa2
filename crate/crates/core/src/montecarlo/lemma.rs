//! Grid checks of the elasticity lemmas on a fixed set of utilities.

use serde::{Deserialize, Serialize};

use crate::drawdown::{DrawdownSpec, TransformPair};
use crate::error::Result;
use crate::utility::{
    default_lemma_grid, power_sandwich, verify_log_scaling, verify_scaling_lemma, composition_elasticity_gaps,
    ElasticityReport, Sign, UtilitySpec, DEFAULT_LAMBDAS,
};

use super::verify::Check;

/// Relative slack allowed in grid comparisons.
pub const LEMMA_GRID_TOL: f64 = 1e-12;

/// `U(x) = x^½ (1 + 1/(1 + ln x))` on `[1, ∞)`; elasticity tends to ½ slowly.
pub fn sandwich_probe() -> UtilitySpec {
    UtilitySpec::custom(
        "sqrt-log-probe",
        Sign::Positive,
        |x: f64| x.sqrt() * (1.0 + 1.0 / (1.0 + x.ln())),
        |x: f64| {
            let u = 1.0 / (1.0 + x.ln());
            (0.5 * (1.0 + u) - u * u) / x.sqrt()
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingEntry {
    pub name: String,
    pub expected_gamma: f64,
    pub report: ElasticityReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichEntry {
    pub gamma: f64,
    pub eps: f64,
    pub c_minus: f64,
    pub c_plus: f64,
    pub y0: f64,
    /// Extremes of the ratios over the whole grid.
    pub oracle_c_minus: f64,
    pub oracle_c_plus: f64,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaSuiteReport {
    pub scaling: Vec<ScalingEntry>,
    /// Largest `elasticity(U∘F)(x) - elasticity(U)(F(x))` per composition.
    pub composition_gaps: Vec<(String, f64)>,
    pub sandwich: SandwichEntry,
    pub checks: Vec<Check>,
}

fn sandwich_entry(u: &UtilitySpec, gamma: f64, eps: f64, x0: f64) -> Result<SandwichEntry> {
    let b = power_sandwich(u, gamma, eps, x0)?;
    let xs = default_lemma_grid(x0);
    let pw = |q: f64, x: f64| x.powf(q) / q;
    let (q_lo, q_hi) = (gamma * (1.0 - eps), gamma * (1.0 + eps));
    let lower = xs.iter().map(|&x| u.eval(x) / pw(q_lo, x));
    let upper = xs.iter().map(|&x| u.eval(x) / pw(q_hi, x));
    let (oracle_c_minus, oracle_c_plus) = if gamma > 0.0 {
        (lower.fold(f64::INFINITY, f64::min), upper.fold(f64::NEG_INFINITY, f64::max))
    } else {
        (lower.fold(f64::NEG_INFINITY, f64::max), upper.fold(f64::INFINITY, f64::min))
    };
    let slack = |v: f64| LEMMA_GRID_TOL * v.abs().max(1.0);
    let violations = xs
        .iter()
        .filter(|&&x| {
            let v = u.eval(x);
            let lo = b.c_minus * pw(q_lo, x);
            let hi = b.c_plus * pw(q_hi, x);
            lo > v + slack(v) || v > hi + slack(v)
        })
        .count();
    Ok(SandwichEntry {
        gamma,
        eps,
        c_minus: b.c_minus,
        c_plus: b.c_plus,
        y0: b.y0,
        oracle_c_minus,
        oracle_c_plus,
        violations,
    })
}

/// Scaling inequality on power, composed-power and log utilities, the
/// composition elasticity bound, and the power sandwich on the probe utility.
pub fn lemma_suite(alpha: f64) -> Result<LemmaSuiteReport> {
    let x0 = 1.0;
    let xs = default_lemma_grid(x0);
    let linear = TransformPair::new(&DrawdownSpec::linear(alpha)?, x0)?;
    let stepped = TransformPair::new(
        &DrawdownSpec::piecewise_linear(vec![(1.0, 0.3), (3.0, 1.2)], 0.2)?,
        x0,
    )?;

    let mut scaling = Vec::new();
    for (name, u, g) in [
        ("power(0.5)", UtilitySpec::power(0.5)?, 0.5),
        ("power(-1)", UtilitySpec::power(-1.0)?, -1.0),
        (
            "power(0.5)∘F_linear",
            UtilitySpec::power(0.5)?.compose(&linear.f)?,
            0.5 * (1.0 - alpha),
        ),
        (
            "power(-1)∘F_linear",
            UtilitySpec::power(-1.0)?.compose(&linear.f)?,
            -(1.0 - alpha),
        ),
        (
            "power(0.5)∘F_piecewise",
            UtilitySpec::power(0.5)?.compose(&stepped.f)?,
            f64::NAN,
        ),
    ] {
        scaling.push(ScalingEntry {
            name: name.into(),
            expected_gamma: g,
            report: verify_scaling_lemma(&u, x0, &DEFAULT_LAMBDAS, &xs)?,
        });
    }
    scaling.push(ScalingEntry {
        name: "log".into(),
        expected_gamma: 1.0,
        report: verify_log_scaling(&UtilitySpec::log(), x0, &DEFAULT_LAMBDAS, &xs)?,
    });

    let mut composition_gaps = Vec::new();
    for (name, u, pair) in [
        ("power(0.5)∘F_linear", UtilitySpec::power(0.5)?, &linear),
        ("power(-1)∘F_linear", UtilitySpec::power(-1.0)?, &linear),
        ("power(0.5)∘F_piecewise", UtilitySpec::power(0.5)?, &stepped),
        ("power(-2)∘F_piecewise", UtilitySpec::power(-2.0)?, &stepped),
    ] {
        let gaps = composition_elasticity_gaps(&u, &pair.f, &xs)?;
        composition_gaps.push((name.to_string(), gaps.into_iter().fold(f64::NEG_INFINITY, f64::max)));
    }

    let sandwich = sandwich_entry(&sandwich_probe(), 0.5, 0.1, x0)?;

    let mut checks = Vec::new();
    for e in &scaling {
        checks.push(Check::absolute(&format!("{}_violations", e.name), e.report.violations as f64, 0.0, 0.0));
        if e.expected_gamma.is_finite() {
            checks.push(Check::absolute(
                &format!("{}_gamma", e.name),
                e.report.gamma,
                e.expected_gamma,
                1e-9,
            ));
        }
    }
    for (name, gap) in &composition_gaps {
        checks.push(Check::at_most(&format!("{name}_composition_bound"), *gap, 0.0, 1e-9));
    }
    checks.push(Check::absolute("sandwich_violations", sandwich.violations as f64, 0.0, 0.0));
    checks.push(Check::relative("sandwich_c_minus_vs_oracle", sandwich.c_minus, sandwich.oracle_c_minus, 1e-12));
    checks.push(Check::relative("sandwich_c_plus_vs_oracle", sandwich.c_plus, sandwich.oracle_c_plus, 1e-12));
    Ok(LemmaSuiteReport {
        scaling,
        composition_gaps,
        sandwich,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probe_derivative_matches_difference() {
        let u = sandwich_probe();
        for &x in &[1.5, 10.0, 400.0] {
            let h = 1e-6 * x;
            let fd = (u.eval(x + h) - u.eval(x - h)) / (2.0 * h);
            assert!((fd / u.right_deriv(x) - 1.0).abs() < 1e-7);
        }
    }
}

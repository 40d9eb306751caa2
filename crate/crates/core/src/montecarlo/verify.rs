//! Monte Carlo checks of the equivalence theorems against closed forms.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::azema_yor::{ay_inverse, ay_transform, check_drawdown, euler_integrate, SamplePath, SDE_STRICTNESS_TOL};
use crate::drawdown::{relax_wn, DrawdownSpec, TransformPair};
use crate::error::{Error, Result};
use crate::market::{
    bound_from_rate, cer_drawdown_closed_form, cer_power_closed_form, constant_policy_rate,
    deflator_bound, deflator_exponent, merton_fraction, CompleteMarketSpec, DeflatorBound, Units,
};
use crate::monotone::MonotoneMap;
use crate::utility::UtilitySpec;

use super::estimate::{estimate_growth, fit_signed_log_mean, CerEstimate, Objective};
use super::simulate::{
    simulate_horizons, simulate_log_deflator, simulate_wealth, DrawdownTracker, HorizonBatch,
    Policy, Scheme, SimConfig,
};

/// One pass/fail line of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub target: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    /// `|value / target - 1| ≤ tol`.
    pub fn relative(name: &str, value: f64, target: f64, tol: f64) -> Self {
        let pass = if target == 0.0 {
            value.abs() <= tol
        } else {
            (value / target - 1.0).abs() <= tol
        };
        Self {
            name: name.into(),
            value,
            target,
            tolerance: tol,
            pass,
        }
    }

    /// `|value - target| ≤ tol`.
    pub fn absolute(name: &str, value: f64, target: f64, tol: f64) -> Self {
        Self {
            name: name.into(),
            value,
            target,
            tolerance: tol,
            pass: (value - target).abs() <= tol,
        }
    }

    /// `value ≤ target + tol`.
    pub fn at_most(name: &str, value: f64, target: f64, tol: f64) -> Self {
        Self {
            name: name.into(),
            value,
            target,
            tolerance: tol,
            pass: value <= target + tol,
        }
    }

    pub fn flag(name: &str, ok: bool) -> Self {
        Self {
            name: name.into(),
            value: if ok { 1.0 } else { 0.0 },
            target: 1.0,
            tolerance: 0.0,
            pass: ok,
        }
    }
}

pub fn all_pass(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.pass)
}

fn combined(a: &CerEstimate, b: &CerEstimate) -> f64 {
    (a.stderr * a.stderr + b.stderr * b.stderr).sqrt()
}

/// Margins above `-DRAWDOWN_TOL` count as satisfying the constraint; this
/// absorbs round-off and the interpolation error of tabulated maps.
pub const DRAWDOWN_TOL: f64 = 1e-9;

/// Fraction of paths whose margin stayed above `-DRAWDOWN_TOL`, and the worst margin.
pub fn drawdown_stats(batch: &HorizonBatch) -> (f64, f64) {
    let n = batch.min_margin.len();
    if n == 0 {
        return (1.0, f64::INFINITY);
    }
    let ok = batch.min_margin.iter().filter(|&&m| m >= -DRAWDOWN_TOL).count();
    let min = batch.min_margin.iter().copied().fold(f64::INFINITY, f64::min);
    (ok as f64 / n as f64, min)
}

/// Nodes used when a non-closed-form `F_w` is tabulated for simulation.
pub const TABLE_NODES: usize = 4096;

/// A fast evaluator for `F_w`: closed forms pass through; otherwise `F` is
/// tabulated on `[v0, 4 × a generous wealth bound]` with the exact map as
/// fallback outside the table.
pub fn simulation_map(pair: &TransformPair, m: &CompleteMarketSpec, policy: &Policy, cfg: &SimConfig) -> Result<MonotoneMap> {
    use crate::drawdown::DrawdownKind;
    if matches!(pair.w.kind(), DrawdownKind::Linear { .. } | DrawdownKind::Constant { .. }) {
        return Ok(pair.f.clone());
    }
    let horizon = *cfg.horizons.last().unwrap();
    let pi = policy.fraction(m, 0.0)?;
    let s = m.sigma(0.0).transpose() * pi;
    let drift = s.dot(&crate::market::market_price_of_risk(m, 0.0)).abs();
    let hi = 4.0 * cfg.v0 * (drift * horizon + 8.0 * s.norm() * horizon.sqrt()).exp();
    let upper = pair.f.tabulate(pair.v0, hi.max(16.0 * pair.v0), TABLE_NODES)?;
    Ok(upper.spliced_below(pair.f.clone(), pair.v0))
}

/// Relative slack in `M^F(X) ≥ F(X)`; `F` off closed form comes from a root
/// solve and the two sides are equal at new maxima.
pub const DOMINATION_REL_TOL: f64 = 1e-12;
pub const ROUND_TRIP_REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformIdentityReport {
    pub n_paths: usize,
    /// Largest `|M^K(M^F(X)) / X - 1|`.
    pub round_trip: f64,
    /// Grid points where `runmax(M^F X) != F(runmax X)`.
    pub max_identity_mismatches: usize,
    /// Grid points where `M^F(X) < F(X)`.
    pub domination_violations: usize,
    pub drawdown_failures: usize,
    pub min_margin: f64,
    pub checks: Vec<Check>,
}

/// Pathwise identities of the transform pair on the given paths.
pub fn transform_identities(paths: &[SamplePath], pair: &TransformPair) -> Result<TransformIdentityReport> {
    let per_path = paths
        .par_iter()
        .map(|p| {
            let y = ay_transform(&pair.f, p)?;
            let back = ay_inverse(&pair.k, &y)?;
            let rt = back
                .values()
                .iter()
                .zip(p.values())
                .map(|(a, b)| (a / b - 1.0).abs())
                .fold(0.0, f64::max);
            let mismatch = y
                .runmax()
                .iter()
                .zip(p.runmax())
                .filter(|(ym, xm)| **ym != pair.f.eval(**xm))
                .count();
            let dominated = y
                .values()
                .iter()
                .zip(p.values())
                .filter(|(yv, xv)| **yv < pair.f.eval(**xv) * (1.0 - DOMINATION_REL_TOL))
                .count();
            let rep = check_drawdown(&y, &pair.w, SDE_STRICTNESS_TOL);
            Ok((rt, mismatch, dominated, rep))
        })
        .collect::<Result<Vec<_>>>()?;
    let round_trip = per_path.iter().map(|r| r.0).fold(0.0, f64::max);
    let max_identity_mismatches = per_path.iter().map(|r| r.1).sum();
    let domination_violations = per_path.iter().map(|r| r.2).sum();
    let drawdown_failures = per_path
        .iter()
        .filter(|r| !(r.3.satisfied && r.3.min_margin >= 0.0))
        .count();
    let min_margin = per_path.iter().map(|r| r.3.min_margin).fold(f64::INFINITY, f64::min);
    let checks = vec![
        Check::at_most("round_trip_rel_error", round_trip, 0.0, ROUND_TRIP_REL_TOL),
        Check::absolute("max_identity_mismatches", max_identity_mismatches as f64, 0.0, 0.0),
        Check::absolute("domination_violations", domination_violations as f64, 0.0, 0.0),
        Check::absolute("drawdown_failures", drawdown_failures as f64, 0.0, 0.0),
    ];
    Ok(TransformIdentityReport {
        n_paths: paths.len(),
        round_trip,
        max_identity_mismatches,
        domination_violations,
        drawdown_failures,
        min_margin,
        checks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MainOptions {
    pub gamma: f64,
    /// Linear drawdown ratio; 0 disables the constraint.
    pub alpha: f64,
    /// Multiplier on the optimal fraction (1 = optimal).
    #[serde(default = "one")]
    pub policy_scale: f64,
    #[serde(default = "ten_percent")]
    pub rel_tol: f64,
    #[serde(default = "two")]
    pub agreement_sigmas: f64,
}

fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}
fn ten_percent() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MainReport {
    pub gamma: f64,
    pub alpha: f64,
    pub closed_form: f64,
    /// Closed-form rate of the simulated policy (differs from `closed_form`
    /// only for a scaled policy).
    pub policy_closed_form: f64,
    pub unconstrained_closed_form: f64,
    /// `R_U(M^F(V))`
    pub constrained: CerEstimate,
    /// `R_{U∘F}(V)`
    pub composed: CerEstimate,
    pub unconstrained: CerEstimate,
    pub drawdown_pass_fraction: f64,
    pub min_margin: f64,
    pub checks: Vec<Check>,
}

fn transform_pair_or_identity(alpha: f64, v0: f64) -> Result<(Option<TransformPair>, MonotoneMap)> {
    if alpha == 0.0 {
        return Ok((None, MonotoneMap::identity()));
    }
    let pair = TransformPair::new(&DrawdownSpec::linear(alpha)?, v0)?;
    let f = pair.f.clone();
    Ok((Some(pair), f))
}

/// Main theorem on the closed-form instance: power `U_γ`, `w(x) = αx`.
pub fn verify_equivalence_main(m: &CompleteMarketSpec, opts: &MainOptions, cfg: &SimConfig) -> Result<MainReport> {
    let (gamma, alpha) = (opts.gamma, opts.alpha);
    let p = gamma * (1.0 - alpha);
    let theta_sq = m.theta_sq_tail();
    let closed_form = cer_power_closed_form(p, 0.0, theta_sq)?;
    let policy = Policy::Scaled(Box::new(Policy::Merton(p)), opts.policy_scale);
    let pi = policy.fraction(m, 0.0)?;
    let policy_closed_form = constant_policy_rate(m, p, &pi, Units::Numeraire)?;
    let u = UtilitySpec::power(gamma)?;
    let (pair, f) = transform_pair_or_identity(alpha, cfg.v0)?;
    let tracker = pair.as_ref().map(|p| DrawdownTracker {
        f: p.f.clone(),
        w: p.w.clone(),
    });
    let batch = simulate_horizons(m, &policy, cfg, true, tracker.as_ref())?;
    let constrained = estimate_growth(&batch.transformed(&f)?, &u, Objective::Cer, None)?;
    let composed = estimate_growth(&batch.wealth(), &u.compose(&f)?, Objective::Cer, None)?;
    let (frac, min_margin) = drawdown_stats(&batch);

    let unconstrained_closed_form = cer_power_closed_form(gamma, 0.0, theta_sq)?;
    let free = simulate_horizons(m, &Policy::Merton(gamma), &SimConfig {
        scheme: Scheme::ExactLognormal,
        ..cfg.clone()
    }, false, None)?;
    let unconstrained = estimate_growth(&free.wealth(), &u, Objective::Cer, None)?;

    let target = policy_closed_form;
    let mut checks = vec![
        Check::relative("constrained_vs_closed_form", constrained.slope, target, opts.rel_tol),
        Check::relative("composed_vs_closed_form", composed.slope, target, opts.rel_tol),
        Check::absolute(
            "constrained_vs_composed",
            constrained.slope,
            composed.slope,
            opts.agreement_sigmas * combined(&constrained, &composed),
        ),
        Check::absolute("drawdown_pass_fraction", frac, 1.0, 0.0),
        Check::at_most(
            "constraint_costs_growth",
            constrained.slope,
            unconstrained.slope,
            3.0 * unconstrained.stderr,
        ),
    ];
    if opts.policy_scale == 1.0 {
        checks.push(Check::at_most("optimum_nonnegative", 0.0, constrained.slope, 3.0 * constrained.stderr));
    }
    Ok(MainReport {
        gamma,
        alpha,
        closed_form,
        policy_closed_form,
        unconstrained_closed_form,
        constrained,
        composed,
        unconstrained,
        drawdown_pass_fraction: frac,
        min_margin,
        checks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DollarsReport {
    pub gamma: f64,
    /// `lim w(x)/x`
    pub alpha: f64,
    pub r_star: f64,
    pub closed_form: f64,
    pub estimate: CerEstimate,
    pub drawdown_pass_fraction: f64,
    pub min_margin: f64,
    pub identity_max_error: f64,
    pub checks: Vec<Check>,
}

/// Largest `|cer_drawdown(γ, α) - cer_power(γ(1-α)) - |γ|αr*|` over a 10×10
/// grid of `γ ∈ [-4, 0.9] \ {0}` and `α ∈ [0, 0.9]`.
pub fn dollars_identity_error(r_star: f64, theta_sq: f64) -> Result<(f64, usize)> {
    let gammas = [-4.0, -2.0, -1.0, -0.5, -0.1, 0.1, 0.3, 0.5, 0.7, 0.9];
    let alphas = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
    let mut worst = 0.0f64;
    let mut n = 0;
    for &g in &gammas {
        for &a in &alphas {
            let lhs = cer_drawdown_closed_form(g, a, r_star, theta_sq)?;
            let rhs = cer_power_closed_form(g * (1.0 - a), r_star, theta_sq)? + g.abs() * a * r_star;
            worst = worst.max((lhs - rhs).abs());
            n += 1;
        }
    }
    Ok((worst, n))
}

/// Dollars theorem: `¢ER^w_{U_γ} = ¢ER_{U^(γ(1-α))} + |γ|αr*` where
/// `α = lim w(x)/x`.
pub fn verify_equivalence_dollars(
    m: &CompleteMarketSpec,
    gamma: f64,
    w: &DrawdownSpec,
    rel_tol: f64,
    cfg: &SimConfig,
) -> Result<DollarsReport> {
    let alpha = w.asymptotic_ratio();
    let p = gamma * (1.0 - alpha);
    let r_star = m.r_star();
    let theta_sq = m.theta_sq_tail();
    let closed_form = cer_drawdown_closed_form(gamma, alpha, r_star, theta_sq)?;
    let pair = TransformPair::new(w, cfg.v0)?;
    let policy = Policy::Merton(p);
    let f = simulation_map(&pair, m, &policy, cfg)?;
    let tracker = DrawdownTracker {
        f: f.clone(),
        w: w.clone(),
    };
    let batch = simulate_horizons(m, &policy, cfg, true, Some(&tracker))?;
    let numeraire: Vec<f64> = cfg.horizons.iter().map(|&t| m.numeraire(t)).collect();
    let u = UtilitySpec::power(gamma)?;
    let estimate = estimate_growth(&batch.transformed(&f)?, &u, Objective::CentEr, Some(&numeraire))?;
    let (frac, min_margin) = drawdown_stats(&batch);
    let (identity_max_error, _) = dollars_identity_error(r_star, theta_sq)?;
    let checks = vec![
        Check::relative("cent_er_vs_closed_form", estimate.slope, closed_form, rel_tol),
        Check::absolute("drawdown_pass_fraction", frac, 1.0, 0.0),
        Check::at_most("closed_form_identity", identity_max_error, 0.0, 1e-12),
    ];
    Ok(DollarsReport {
        gamma,
        alpha,
        r_star,
        closed_form,
        estimate,
        drawdown_pass_fraction: frac,
        min_margin,
        identity_max_error,
        checks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogReport {
    pub alpha: f64,
    pub units: Units,
    pub closed_form: f64,
    /// `(1/T) E[log(X_T)]` (times `N_T` inside the log in dollars)
    pub constrained: CerEstimate,
    /// `(1/T) E[log F(V_T)]`
    pub composed: CerEstimate,
    pub drawdown_pass_fraction: f64,
    pub checks: Vec<Check>,
}

/// Log theorems: the tilde objective of the constrained log investor equals
/// `(1-α)·½||θ*||²` in numeraire units and `(1-α)(r* + ½||θ*||²) + αr*` in
/// dollars.
pub fn verify_log_theorem(
    m: &CompleteMarketSpec,
    w: &DrawdownSpec,
    units: Units,
    rel_tol: f64,
    cfg: &SimConfig,
) -> Result<LogReport> {
    let alpha = w.asymptotic_ratio();
    let theta_sq = m.theta_sq_tail();
    let r_star = m.r_star();
    let closed_form = match units {
        Units::Numeraire => (1.0 - alpha) * 0.5 * theta_sq,
        Units::Dollars => (1.0 - alpha) * (r_star + 0.5 * theta_sq) + alpha * r_star,
    };
    let pair = TransformPair::new(w, cfg.v0)?;
    let policy = Policy::LogOptimal;
    let f = simulation_map(&pair, m, &policy, cfg)?;
    let tracker = DrawdownTracker {
        f: f.clone(),
        w: w.clone(),
    };
    let batch = simulate_horizons(m, &policy, cfg, true, Some(&tracker))?;
    let (objective, numeraire) = match units {
        Units::Numeraire => (Objective::Tilde, None),
        Units::Dollars => (
            Objective::Tilde,
            Some(cfg.horizons.iter().map(|&t| m.numeraire(t)).collect::<Vec<_>>()),
        ),
    };
    let scale = |samples: super::estimate::WealthSamples| match &numeraire {
        Some(n) => samples.map(|k, v| v * n[k]),
        None => samples,
    };
    let log = UtilitySpec::log();
    let x = scale(batch.transformed(&f)?);
    let constrained = estimate_growth(&x, &log, objective, None)?;
    let fv = scale(batch.wealth().map(|_, v| f.eval(v)));
    let composed = estimate_growth(&fv, &log, objective, None)?;
    let (frac, _) = drawdown_stats(&batch);
    let checks = vec![
        Check::relative("constrained_vs_closed_form", constrained.slope, closed_form, rel_tol),
        Check::relative("composed_vs_closed_form", composed.slope, closed_form, rel_tol),
        Check::absolute("drawdown_pass_fraction", frac, 1.0, 0.0),
    ];
    Ok(LogReport {
        alpha,
        units,
        closed_form,
        constrained,
        composed,
        drawdown_pass_fraction: frac,
        checks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceOptions {
    pub gamma: f64,
    pub alpha: f64,
    pub ns: Vec<u64>,
    pub spot_n: u64,
    pub v0s: Vec<f64>,
    pub floor_eps: f64,
    /// Allowed relative gap between the largest-`n` value and the limit.
    pub limit_rel_tol: f64,
    pub spot_rel_tol: f64,
}

impl Default for ConvergenceOptions {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            alpha: 0.5,
            ns: vec![2, 5, 20, 100],
            spot_n: 5,
            v0s: vec![0.5, 1.0, 2.0],
            floor_eps: 0.1,
            limit_rel_tol: 0.01,
            spot_rel_tol: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxedValue {
    pub n: u64,
    /// Power exponent of `U∘F_n` on `[v0, ∞)`.
    pub exponent: f64,
    pub closed_form: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub limit: f64,
    pub sequence: Vec<RelaxedValue>,
    pub spot: CerEstimate,
    pub spot_closed_form: f64,
    pub v0_slopes: Vec<(f64, CerEstimate)>,
    pub floor_mixed: CerEstimate,
    pub checks: Vec<Check>,
}

/// Closed-form `CER_{U_γ ∘ F_n}` along the relaxation `w_n` of `w(x) = αx`,
/// with the exponent read off `F_n`'s power relation.
pub fn relaxed_sequence(gamma: f64, alpha: f64, ns: &[u64], theta_sq: f64, v0: f64) -> Result<Vec<RelaxedValue>> {
    let pair = TransformPair::new(&DrawdownSpec::linear(alpha)?, v0)?;
    ns.iter()
        .map(|&n| {
            let (_, pn) = relax_wn(&pair, n)?;
            let e = pn.f.tail_power_exponent().ok_or_else(|| {
                Error::Domain("relaxed transform lost its power form".into())
            })?;
            Ok(RelaxedValue {
                n,
                exponent: gamma * e,
                closed_form: cer_power_closed_form(gamma * e, 0.0, theta_sq)?,
            })
        })
        .collect()
}

/// Convergence lemma fixture along `w_n`, plus initial-wealth and floor-mix
/// invariance of the estimate.
pub fn verify_convergence_lemma(
    m: &CompleteMarketSpec,
    opts: &ConvergenceOptions,
    cfg: &SimConfig,
) -> Result<ConvergenceReport> {
    let theta_sq = m.theta_sq_tail();
    let limit = cer_power_closed_form(opts.gamma * (1.0 - opts.alpha), 0.0, theta_sq)?;
    let sequence = relaxed_sequence(opts.gamma, opts.alpha, &opts.ns, theta_sq, cfg.v0)?;
    let monotone = sequence.windows(2).all(|s| s[1].closed_form < s[0].closed_form)
        && sequence.iter().all(|s| s.closed_form > limit);
    let last = sequence.last().ok_or_else(|| Error::InvalidParameter("empty n list".into()))?;

    let u = UtilitySpec::power(opts.gamma)?;
    let spot_for = |v0: f64| -> Result<(CerEstimate, f64, super::estimate::WealthSamples, MonotoneMap)> {
        let pair = TransformPair::new(&DrawdownSpec::linear(opts.alpha)?, v0)?;
        let (_, pn) = relax_wn(&pair, opts.spot_n)?;
        let e = pn.f.tail_power_exponent().unwrap_or(f64::NAN);
        let p = opts.gamma * e;
        let c = SimConfig {
            v0,
            scheme: Scheme::ExactLognormal,
            ..cfg.clone()
        };
        let batch = simulate_horizons(m, &Policy::Merton(p), &c, false, None)?;
        let samples = batch.wealth();
        let est = estimate_growth(&samples, &u.compose(&pn.f)?, Objective::Cer, None)?;
        Ok((est, cer_power_closed_form(p, 0.0, theta_sq)?, samples, pn.f))
    };
    let (spot, spot_closed_form, samples, fn_map) = spot_for(cfg.v0)?;

    let mut v0_slopes = Vec::new();
    for &v0 in &opts.v0s {
        v0_slopes.push((v0, spot_for(v0)?.0));
    }
    let eps = opts.floor_eps;
    let mixed = samples.map(|_, v| eps * cfg.v0 + (1.0 - eps) * v);
    let floor_mixed = estimate_growth(&mixed, &u.compose(&fn_map)?, Objective::Cer, None)?;

    let mut checks = vec![
        Check::flag("closed_forms_decrease_to_limit", monotone),
        Check::relative(&format!("n{}_within_limit_tol", last.n), last.closed_form, limit, opts.limit_rel_tol),
        Check::relative(
            &format!("spot_n{}_vs_closed_form", opts.spot_n),
            spot.slope,
            spot_closed_form,
            opts.spot_rel_tol,
        ),
    ];
    for (v0, est) in &v0_slopes {
        checks.push(Check::absolute(
            &format!("v0_{v0}_invariance"),
            est.slope,
            spot.slope,
            2.0 * combined(est, &spot),
        ));
    }
    checks.push(Check::absolute(
        "floor_mix_invariance",
        floor_mixed.slope,
        spot.slope,
        2.0 * combined(&floor_mixed, &spot),
    ));
    Ok(ConvergenceReport {
        limit,
        sequence,
        spot,
        spot_closed_form,
        v0_slopes,
        floor_mixed,
        checks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdeConvergenceReport {
    pub dts: Vec<f64>,
    /// Mean over paths of `sup_t |X^Euler_t - M^F(V)_t|`.
    pub sup_errors: Vec<f64>,
    /// Fitted slope of `ln error` against `ln dt`.
    pub order: f64,
    pub checks: Vec<Check>,
}

/// Euler integration of `dX = (X - w(X̄)) dV/V` against the transform
/// `M^{F_w}(V)` on the same grid, for geometric Brownian `V` with the given
/// drift and volatility. `V` is simulated once on the finest grid and
/// subsampled for coarser steps.
pub fn sde_convergence(
    w: &DrawdownSpec,
    drift: f64,
    vol: f64,
    dts: &[f64],
    horizon: f64,
    n_paths: usize,
    seed: u64,
    min_order: f64,
) -> Result<SdeConvergenceReport> {
    let mut dts = dts.to_vec();
    dts.sort_by(f64::total_cmp);
    let fine = dts[0];
    let steps: Vec<usize> = dts.iter().map(|d| (d / fine).round() as usize).collect();
    if dts.iter().zip(&steps).any(|(d, &s)| ((s as f64) * fine - d).abs() > 1e-9 * d) {
        return Err(Error::InvalidParameter("step sizes must be multiples of the finest".into()));
    }
    let m = CompleteMarketSpec::black_scholes(0.0, drift, vol)?;
    let cfg = SimConfig {
        n_paths,
        dt: fine,
        horizons: vec![horizon],
        seed,
        scheme: Scheme::ExactLognormal,
        antithetic: false,
        v0: 1.0,
    };
    let pi = nalgebra::DVector::from_element(1, 1.0);
    let (paths, _) = simulate_wealth(&m, &Policy::Constant(pi), &cfg)?;
    let pair = TransformPair::new(w, 1.0)?;
    let per_path: Vec<Vec<f64>> = paths
        .par_iter()
        .map(|p| {
            steps
                .iter()
                .map(|&s| {
                    let sub = p.subsample(s)?;
                    let euler = euler_integrate(&sub, w)?;
                    let exact = ay_transform(&pair.f, &sub)?;
                    Ok(euler
                        .values()
                        .iter()
                        .zip(exact.values())
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let sup_errors: Vec<f64> = (0..dts.len())
        .map(|k| per_path.iter().map(|e| e[k]).sum::<f64>() / per_path.len() as f64)
        .collect();
    let xs: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let ys: Vec<f64> = sup_errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let order = sxy / sxx;
    let checks = vec![Check::at_most("empirical_order", min_order, order, 0.0)];
    Ok(SdeConvergenceReport {
        dts,
        sup_errors,
        order,
        checks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeflatorReport {
    pub closed_form: DeflatorBound,
    pub simulated: DeflatorBound,
    pub estimate: CerEstimate,
    pub checks: Vec<Check>,
}

/// Finiteness bound `CER_{U^(p)} ≤ -(1-p) R_{U^(q)}(Z)` from simulated `Z`
/// against its closed form.
pub fn deflator_check(
    m: &CompleteMarketSpec,
    p: f64,
    units: Units,
    rel_tol: f64,
    cfg: &SimConfig,
) -> Result<DeflatorReport> {
    let q = deflator_exponent(p)?;
    let closed_form = deflator_bound(m, p, units)?;
    let lz = simulate_log_deflator(m, cfg)?;
    let h = cfg.horizons.len();
    let shift: Vec<f64> = cfg
        .horizons
        .iter()
        .map(|&t| if units == Units::Dollars { m.numeraire(t).ln() } else { 0.0 })
        .collect();
    // ln |U^(q)(Z/N)| = q (ln Z - ln N) - ln |q|
    let ln_abs: Vec<f64> = lz
        .values
        .iter()
        .enumerate()
        .map(|(i, l)| q * (l - shift[i % h]) - q.abs().ln())
        .collect();
    let estimate = fit_signed_log_mean(&cfg.horizons, &ln_abs, q.signum(), Objective::Cer)?;
    let mut simulated = bound_from_rate(p, q, q.signum() * estimate.slope);
    simulated.finite = estimate.slope.is_finite();
    let checks = vec![
        Check::flag("bound_finite", simulated.finite),
        Check::relative("simulated_vs_closed_form_bound", simulated.cer_bound, closed_form.cer_bound, rel_tol),
    ];
    Ok(DeflatorReport {
        closed_form,
        simulated,
        estimate,
        checks,
    })
}

/// Closed-form Merton fraction for reporting.
pub fn merton_summary(m: &CompleteMarketSpec, p: f64) -> Result<Vec<f64>> {
    Ok(merton_fraction(m, p, 0.0)?.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(n_paths: usize) -> SimConfig {
        SimConfig {
            n_paths,
            dt: 1e-2,
            horizons: vec![1.0, 2.0, 3.0, 4.0],
            seed: 5,
            scheme: Scheme::ExactLognormal,
            antithetic: false,
            v0: 1.0,
        }
    }

    #[test]
    fn check_constructors() {
        assert!(Check::relative("a", 1.05, 1.0, 0.1).pass);
        assert!(!Check::relative("a", 1.2, 1.0, 0.1).pass);
        assert!(Check::relative("zero", 1e-3, 0.0, 1e-2).pass);
        assert!(Check::at_most("b", 1.0, 0.5, 0.5).pass);
        assert!(!Check::at_most("b", 1.0, 0.5, 0.4).pass);
        assert!(!Check::flag("c", false).pass);
        assert!(!all_pass(&[Check::flag("x", true), Check::absolute("y", f64::NAN, 0.0, 1.0)]));
    }

    #[test]
    fn dollars_identity_holds_on_grid() {
        let (err, n) = dollars_identity_error(0.03, 0.09).unwrap();
        assert_eq!(n, 100);
        assert!(err < 1e-14, "{err}");
    }

    #[test]
    fn relaxed_values_decrease_to_limit() {
        let seq = relaxed_sequence(0.5, 0.5, &[2, 5, 20, 100, 1000], 0.09, 1.0).unwrap();
        let limit = cer_power_closed_form(0.25, 0.0, 0.09).unwrap();
        assert!(seq.windows(2).all(|w| w[1].closed_form < w[0].closed_form));
        assert!(seq.iter().all(|s| s.closed_form > limit));
        assert!((seq.last().unwrap().closed_form / limit - 1.0).abs() < 2e-3);
    }

    #[test]
    fn simulation_map_tracks_exact_transform() {
        let m = CompleteMarketSpec::from_theta(0.0, 0.3, 0.2).unwrap();
        let w = DrawdownSpec::piecewise_linear(vec![(1.0, 0.3), (3.0, 1.2)], 0.2).unwrap();
        let pair = TransformPair::new(&w, 1.0).unwrap();
        let f = simulation_map(&pair, &m, &Policy::Merton(0.5), &small_config(10)).unwrap();
        for &x in &[0.5, 1.0, 1.7, 3.0, 9.0, 40.0] {
            assert!((f.eval(x) / pair.f.eval(x) - 1.0).abs() < 1e-6, "x = {x}");
        }
    }

    #[test]
    fn identities_on_a_few_paths() {
        let m = CompleteMarketSpec::black_scholes(0.0, 0.05, 0.2).unwrap();
        let cfg = SimConfig {
            horizons: vec![1.0],
            dt: 1e-3,
            ..small_config(20)
        };
        let pi = nalgebra::DVector::from_element(1, 1.0);
        let (paths, _) = simulate_wealth(&m, &Policy::Constant(pi), &cfg).unwrap();
        let pair = TransformPair::new(&DrawdownSpec::linear(0.4).unwrap(), 1.0).unwrap();
        let r = transform_identities(&paths, &pair).unwrap();
        assert!(all_pass(&r.checks), "{:?}", r.checks);
        assert_eq!(r.n_paths, 20);
    }

    #[test]
    fn deflator_bound_at_small_scale() {
        let m = CompleteMarketSpec::from_theta(0.0, 0.3, 0.2).unwrap();
        let r = deflator_check(&m, -1.0, Units::Numeraire, 0.2, &small_config(4000)).unwrap();
        assert!(r.simulated.finite);
        assert!(r.checks.iter().all(|c| c.pass), "{:?}", r.checks);
    }
}

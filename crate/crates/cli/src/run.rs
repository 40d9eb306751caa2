//! Dispatch of experiment kinds and artifact output.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ddlab_core::azema_yor::{ay_transform, check_drawdown, SDE_STRICTNESS_TOL};
use ddlab_core::drawdown::{build_kw_with, DrawdownSpec, KwOptions, TransformPair};
use ddlab_core::market::{
    cer_power_unconstrained, fleming_sheu_constrained, fleming_sheu_value_with, FlemingSheuOptions, KVariant,
};
use ddlab_core::montecarlo::lemma::lemma_suite;
use ddlab_core::montecarlo::verify::{
    all_pass, deflator_check, drawdown_stats, merton_summary, sde_convergence, simulation_map,
    transform_identities, verify_convergence_lemma, verify_equivalence_dollars, verify_equivalence_main,
    verify_log_theorem,
};
use ddlab_core::montecarlo::{estimate_growth, simulate_horizons, simulate_wealth, with_workers, DrawdownTracker};
use ddlab_core::utility::log_grid;
use ddlab_core::{Check, CompleteMarketSpec, Objective, Policy, SamplePath, SimConfig, UtilitySpec};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{Experiment, ExperimentConfig, PolicyConfig, UtilityConfig};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
    Json,
    #[default]
    Both,
}

/// Result of one experiment run, before it is written out.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub kind: &'static str,
    pub checks: Vec<Check>,
    pub report: Value,
    /// Extra CSV artifacts as `(file name, contents)`.
    pub tables: Vec<(String, String)>,
}

impl Outcome {
    pub fn pass(&self) -> bool {
        all_pass(&self.checks)
    }
}

fn require<'a, T>(x: &'a Option<T>, section: &str, kind: &str) -> Result<&'a T, CliError> {
    x.as_ref()
        .ok_or_else(|| CliError::Config(format!("experiment `{kind}` needs a [{section}] section")))
}

fn market(cfg: &ExperimentConfig) -> Result<CompleteMarketSpec, CliError> {
    let raw = require(&cfg.market, "market", cfg.experiment.kind())?;
    CompleteMarketSpec::try_from(raw.clone()).map_err(|e| CliError::Config(format!("at `market`: {e}")))
}

fn drawdown(cfg: &ExperimentConfig) -> Result<DrawdownSpec, CliError> {
    let kind = require(&cfg.drawdown, "drawdown", cfg.experiment.kind())?;
    DrawdownSpec::new(kind.clone()).map_err(|e| CliError::Config(format!("at `drawdown`: {e}")))
}

fn sim(cfg: &ExperimentConfig) -> Result<SimConfig, CliError> {
    let s = require(&cfg.sim, "sim", cfg.experiment.kind())?;
    s.validate().map_err(|e| CliError::Config(format!("at `sim`: {e}")))?;
    Ok(s.clone())
}

fn utility(cfg: &ExperimentConfig) -> Result<UtilitySpec, CliError> {
    match require(&cfg.utility, "utility", cfg.experiment.kind())? {
        UtilityConfig::Power { p } => {
            UtilitySpec::power(*p).map_err(|e| CliError::Config(format!("at `utility.p`: {e}")))
        }
        UtilityConfig::Log => Ok(UtilitySpec::log()),
    }
}

fn policy(p: &PolicyConfig, m: &CompleteMarketSpec) -> Result<Policy, CliError> {
    Ok(match p {
        PolicyConfig::Zero => Policy::Zero,
        PolicyConfig::Constant { fraction } => {
            if fraction.len() != m.dim() {
                return Err(CliError::Config(format!(
                    "at `experiment.policy.fraction`: expected {} entries, got {}",
                    m.dim(),
                    fraction.len()
                )));
            }
            Policy::Constant(DVector::from_column_slice(fraction))
        }
        PolicyConfig::Merton { p } => Policy::Merton(*p),
        PolicyConfig::LogOptimal => Policy::LogOptimal,
    })
}

fn to_value<T: Serialize>(x: &T) -> Result<Value, CliError> {
    Ok(serde_json::to_value(x)?)
}

fn path_csv(p: &SamplePath) -> Result<String, CliError> {
    let mut buf = Vec::new();
    p.write_csv(&mut buf)?;
    Ok(String::from_utf8(buf).expect("csv is utf-8"))
}

fn read_path(input: &Path, base: &Path) -> Result<SamplePath, CliError> {
    let full = if input.is_absolute() { input.to_path_buf() } else { base.join(input) };
    let f = File::open(&full).map_err(|e| CliError::Config(format!("cannot open {}: {e}", full.display())))?;
    Ok(SamplePath::read_csv(BufReader::new(f))?)
}

/// Run the configured experiment on the current thread pool. Relative input
/// paths resolve against `base`.
pub fn run_experiment(cfg: &ExperimentConfig, base: &Path) -> Result<Outcome, CliError> {
    let kind = cfg.experiment.kind();
    let mut tables = Vec::new();
    let (checks, report) = match &cfg.experiment {
        Experiment::Transform { v0, input, fraction } => {
            let w = drawdown(cfg)?;
            let pair = TransformPair::new(&w, *v0)?;
            match input {
                Some(input) => {
                    let path = read_path(input, base)?;
                    let x = ay_transform(&pair.f, &path)?;
                    let rep = check_drawdown(&x, &w, SDE_STRICTNESS_TOL);
                    tables.push(("transformed.csv".to_string(), path_csv(&x)?));
                    let checks = vec![Check::flag("drawdown_satisfied", rep.satisfied)];
                    (checks, json!({ "drawdown": to_value(&rep)?, "points": x.len() }))
                }
                None => {
                    let m = market(cfg)?;
                    let s = sim(cfg)?;
                    let pi = DVector::from_element(m.dim(), *fraction);
                    let (paths, aborted) = simulate_wealth(&m, &Policy::Constant(pi), &s)?;
                    let r = transform_identities(&paths, &pair)?;
                    let mut v = to_value(&r)?;
                    v["aborted_paths"] = json!(aborted.len());
                    (r.checks, v)
                }
            }
        }
        Experiment::TabulateKw {
            v0,
            lo,
            hi,
            n,
            reference_exponent,
            force_quadrature,
            rel_tol,
        } => {
            let w = drawdown(cfg)?;
            let opts = KwOptions {
                force_quadrature: *force_quadrature,
                ..Default::default()
            };
            let k = build_kw_with(&w, *v0, opts)?;
            let xs = log_grid(*lo, *hi, *n);
            let mut csv = String::from("v,K,dK\n");
            for &x in &xs {
                let (y, d) = k.eval_with_deriv(x);
                csv.push_str(&format!("{x},{y},{d}\n"));
            }
            tables.push(("kw.csv".to_string(), csv));
            let mut checks = Vec::new();
            let worst = |f: &dyn Fn(f64) -> f64| xs.iter().map(|&x| (k.eval(x) / f(x) - 1.0).abs()).fold(0.0, f64::max);
            let mut report = json!({ "nodes": xs.len(), "representation": format!("{:?}", k.representation()) });
            if let Some(e) = reference_exponent {
                let err = worst(&|x: f64| v0 * (x / v0).powf(*e));
                checks.push(Check::at_most("max_rel_error_vs_power", err, 0.0, *rel_tol));
                report["max_rel_error_vs_power"] = json!(err);
            }
            if *force_quadrature {
                let exact = build_kw_with(&w, *v0, KwOptions::default())?;
                let err = worst(&|x: f64| exact.eval(x));
                checks.push(Check::at_most("max_rel_error_vs_default", err, 0.0, *rel_tol));
                report["max_rel_error_vs_default"] = json!(err);
            }
            (checks, report)
        }
        Experiment::EstimateCer {
            objective,
            policy: pc,
            apply_drawdown,
            expected,
            rel_tol,
        } => {
            let m = market(cfg)?;
            let s = sim(cfg)?;
            let u = utility(cfg)?;
            let pol = policy(pc, &m)?;
            let numeraire: Vec<f64> = s.horizons.iter().map(|&t| m.numeraire(t)).collect();
            let numeraire = (*objective == Objective::CentEr).then_some(numeraire.as_slice());
            let mut checks = Vec::new();
            let mut report = json!({});
            let samples = if *apply_drawdown {
                let w = drawdown(cfg)?;
                let pair = TransformPair::new(&w, s.v0)?;
                let f = simulation_map(&pair, &m, &pol, &s)?;
                let tracker = DrawdownTracker { f: f.clone(), w };
                let batch = simulate_horizons(&m, &pol, &s, true, Some(&tracker))?;
                let (frac, min_margin) = drawdown_stats(&batch);
                checks.push(Check::absolute("drawdown_pass_fraction", frac, 1.0, 0.0));
                report["drawdown_pass_fraction"] = json!(frac);
                report["min_margin"] = json!(min_margin);
                batch.transformed(&f)?
            } else {
                simulate_horizons(&m, &pol, &s, false, None)?.wealth()
            };
            let est = estimate_growth(&samples, &u, *objective, numeraire)?;
            if let Some(e) = expected {
                checks.push(Check::relative("slope_vs_expected", est.slope, *e, *rel_tol));
            }
            report["utility"] = json!(u.describe());
            report["estimate"] = to_value(&est)?;
            (checks, report)
        }
        Experiment::Merton { p, rel_tol } => {
            let m = market(cfg)?;
            let s = sim(cfg)?;
            let closed_form = cer_power_unconstrained(&m, *p)?;
            let batch = simulate_horizons(&m, &Policy::Merton(*p), &s, false, None)?;
            let est = estimate_growth(&batch.wealth(), &UtilitySpec::power(*p)?, Objective::Cer, None)?;
            let checks = vec![Check::relative("slope_vs_closed_form", est.slope, closed_form, *rel_tol)];
            let report = json!({
                "p": p,
                "fraction": merton_summary(&m, *p)?,
                "closed_form": closed_form,
                "estimate": to_value(&est)?,
            });
            (checks, report)
        }
        Experiment::VerifyMain(opts) => {
            let r = verify_equivalence_main(&market(cfg)?, opts, &sim(cfg)?)?;
            (r.checks.clone(), to_value(&r)?)
        }
        Experiment::VerifyDollars { gamma, rel_tol } => {
            let r = verify_equivalence_dollars(&market(cfg)?, *gamma, &drawdown(cfg)?, *rel_tol, &sim(cfg)?)?;
            (r.checks.clone(), to_value(&r)?)
        }
        Experiment::VerifyLog { units, rel_tol } => {
            let r = verify_log_theorem(&market(cfg)?, &drawdown(cfg)?, *units, *rel_tol, &sim(cfg)?)?;
            (r.checks.clone(), to_value(&r)?)
        }
        Experiment::VerifyConvergence(opts) => {
            let r = verify_convergence_lemma(&market(cfg)?, opts, &sim(cfg)?)?;
            (r.checks.clone(), to_value(&r)?)
        }
        Experiment::FlemingSheu {
            gamma,
            alpha,
            variant,
            allow_positive_gamma,
            expected,
            tol,
            invalid,
            expect_printed_rejected,
        } => {
            let f = require(&cfg.factor, "factor", kind)?;
            let opts = FlemingSheuOptions {
                variant: *variant,
                allow_positive_gamma: *allow_positive_gamma,
            };
            let v = fleming_sheu_value_with(f, *gamma, opts)?;
            let mut checks = Vec::new();
            let mut report = json!({ "value": to_value(&v)? });
            if let Some(e) = expected {
                for (name, got, want) in [
                    ("E", v.e, e.e),
                    ("K", v.k, e.k),
                    ("D", v.d, e.d),
                    ("eta", v.eta, e.eta),
                    ("value", v.value, e.value),
                ] {
                    checks.push(Check::absolute(name, got, want, *tol));
                }
            }
            if let Some(a) = alpha {
                report["constrained"] = json!(fleming_sheu_constrained(f, *gamma, *a, opts)?);
            }
            if let Some(bad) = invalid {
                let r = fleming_sheu_value_with(bad, *gamma, opts);
                report["invalid_error"] = json!(r.as_ref().err().map(|e| e.to_string()));
                checks.push(Check::flag("validity_rejection", r.is_err()));
            }
            if *expect_printed_rejected {
                let printed = FlemingSheuOptions {
                    variant: KVariant::Printed,
                    ..opts
                };
                let r = fleming_sheu_value_with(f, *gamma, printed);
                report["printed_error"] = json!(r.as_ref().err().map(|e| e.to_string()));
                checks.push(Check::flag("printed_variant_rejected", r.is_err()));
            }
            (checks, report)
        }
        Experiment::DeflatorCheck { p, units, rel_tol } => {
            let r = deflator_check(&market(cfg)?, *p, *units, *rel_tol, &sim(cfg)?)?;
            (r.checks.clone(), to_value(&r)?)
        }
        Experiment::SdeConvergence {
            drift,
            vol,
            dts,
            horizon,
            n_paths,
            seed,
            min_order,
        } => {
            let r = sde_convergence(&drawdown(cfg)?, *drift, *vol, dts, *horizon, *n_paths, *seed, *min_order)?;
            (r.checks.clone(), to_value(&r)?)
        }
        Experiment::LemmaSuite { alpha } => {
            let r = lemma_suite(*alpha)?;
            (r.checks.clone(), to_value(&r)?)
        }
    };
    Ok(Outcome {
        kind,
        checks,
        report,
        tables,
    })
}

/// Every object in `v` carrying `slope`, `stderr` and `per_horizon`, keyed by
/// its dotted location.
pub fn estimates(v: &Value) -> Vec<(String, &Value)> {
    fn walk<'a>(v: &'a Value, at: String, out: &mut Vec<(String, &'a Value)>) {
        match v {
            Value::Object(o) => {
                if o.contains_key("slope") && o.contains_key("stderr") && o.contains_key("per_horizon") {
                    out.push((at, v));
                    return;
                }
                for (k, x) in o {
                    let next = if at.is_empty() { k.clone() } else { format!("{at}.{k}") };
                    walk(x, next, out);
                }
            }
            Value::Array(a) => {
                for (i, x) in a.iter().enumerate() {
                    walk(x, format!("{at}[{i}]"), out);
                }
            }
            _ => {}
        }
    }
    let mut out = Vec::new();
    walk(v, String::new(), &mut out);
    out
}

fn ordinates(est: &Value) -> Vec<u64> {
    est["per_horizon"]
        .as_array()
        .map(|a| {
            a.iter()
                .map(|p| p["ordinate"].as_f64().unwrap_or(f64::NAN).to_bits())
                .collect()
        })
        .unwrap_or_default()
}

/// Count per-horizon ordinates of `b` that differ bitwise from `a`.
pub fn ordinate_mismatches(a: &Value, b: &Value) -> usize {
    let (ea, eb) = (estimates(a), estimates(b));
    if ea.len() != eb.len() {
        return usize::MAX;
    }
    ea.iter()
        .zip(&eb)
        .map(|((la, xa), (lb, xb))| {
            let (oa, ob) = (ordinates(xa), ordinates(xb));
            if la != lb || oa.len() != ob.len() {
                return oa.len().max(ob.len()).max(1);
            }
            oa.iter().zip(&ob).filter(|(x, y)| x != y).count()
        })
        .sum()
}

fn estimate_csv(est: &Value) -> String {
    let mut s = String::from("T,ordinate,ci\n");
    for p in est["per_horizon"].as_array().into_iter().flatten() {
        s.push_str(&format!("{},{},{}\n", p["T"], p["ordinate"], p["ci"]));
    }
    s
}

/// Options from the command line that sit above the config.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Pool size for the main run; 0 keeps the default pool.
    pub workers: usize,
    pub out_dir: Option<PathBuf>,
    pub format: Format,
    /// Artifact directory name when the config has none.
    pub default_name: String,
}

#[derive(Debug, Clone)]
pub struct Completed {
    pub outcome: Outcome,
    pub out_dir: PathBuf,
    pub summary: Value,
}

/// Run the experiment, any reproducibility reruns, and write artifacts.
pub fn execute(cfg: &ExperimentConfig, base: &Path, opts: &RunOptions) -> Result<Completed, CliError> {
    let mut outcome = with_workers(opts.workers, || run_experiment(cfg, base))??;
    if let Some(rep) = &cfg.reproducibility {
        let mut total = 0usize;
        let mut per_run = Vec::new();
        for &w in &rep.workers {
            let again = with_workers(w, || run_experiment(cfg, base))??;
            let n = ordinate_mismatches(&outcome.report, &again.report);
            total = total.saturating_add(n);
            per_run.push(json!({ "workers": w, "ordinate_bit_mismatches": n }));
        }
        outcome
            .checks
            .push(Check::absolute("reproducibility_bit_mismatches", total as f64, 0.0, 0.0));
        outcome.report["reproducibility"] = Value::Array(per_run);
    }

    let name = cfg.output.name.clone().unwrap_or_else(|| opts.default_name.clone());
    let dir = opts.out_dir.clone().unwrap_or_else(|| cfg.output.dir.clone()).join(&name);
    fs::create_dir_all(&dir)?;
    let pass = outcome.pass();
    let seed = match &cfg.experiment {
        Experiment::SdeConvergence { seed, .. } => Some(*seed),
        _ => cfg.sim.as_ref().map(|s| s.seed),
    };
    let summary = json!({
        "kind": outcome.kind,
        "name": name,
        "config": to_value(cfg)?,
        "seed": seed,
        "workers": opts.workers,
        "pass": pass,
        "checks": to_value(&outcome.checks)?,
        "report": outcome.report,
    });
    let failed: Vec<&str> = outcome.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    write_json(&dir.join("verdict.json"), &json!({ "kind": outcome.kind, "name": name, "pass": pass, "failed": failed }))?;
    if matches!(opts.format, Format::Json | Format::Both) {
        write_json(&dir.join("summary.json"), &summary)?;
    }
    if matches!(opts.format, Format::Csv | Format::Both) {
        for (label, est) in estimates(&outcome.report) {
            let file = format!("estimate_{}.csv", label.replace(['.', '[', ']'], "_").trim_end_matches('_'));
            fs::write(dir.join(file), estimate_csv(est))?;
        }
        for (file, contents) in &outcome.tables {
            fs::write(dir.join(file), contents)?;
        }
    }
    Ok(Completed {
        outcome,
        out_dir: dir,
        summary,
    })
}

fn write_json(path: &Path, v: &Value) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, v)?;
    writeln!(w)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimates_are_found_by_shape() {
        let v = json!({
            "a": { "slope": 1.0, "stderr": 0.1, "per_horizon": [{ "T": 1.0, "ordinate": 2.0, "ci": 0.0 }] },
            "b": [{ "slope": 1.0, "stderr": 0.1, "per_horizon": [] }],
            "c": 3.0,
        });
        let found: Vec<String> = estimates(&v).into_iter().map(|(k, _)| k).collect();
        assert_eq!(found, vec!["a", "b[0]"]);
        assert_eq!(ordinate_mismatches(&v, &v), 0);
        let mut w = v.clone();
        w["a"]["per_horizon"][0]["ordinate"] = json!(2.0000000001);
        assert_eq!(ordinate_mismatches(&v, &w), 1);
    }
}

//! Experiment configuration: TOML sections plus dotted-path overrides.

use std::path::{Path, PathBuf};

use ddlab_core::drawdown::DrawdownKind;
use ddlab_core::market::{FactorModelSpec, KVariant, RawMarket};
use ddlab_core::montecarlo::verify::{ConvergenceOptions, MainOptions};
use ddlab_core::{Objective, SimConfig, Units};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    /// Market coefficients; rates and drifts per year, volatilities per √year.
    pub market: Option<RawMarket>,
    pub drawdown: Option<DrawdownKind>,
    pub utility: Option<UtilityConfig>,
    pub sim: Option<SimConfig>,
    pub factor: Option<FactorModelSpec>,
    #[serde(default)]
    pub output: OutputConfig,
    /// Rerun under each worker count and require bit-identical ordinates.
    pub reproducibility: Option<Reproducibility>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reproducibility {
    pub workers: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Artifacts go to `<dir>/<name>/`.
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    pub name: Option<String>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_out_dir(),
            name: None,
        }
    }
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum UtilityConfig {
    Power { p: f64 },
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PolicyConfig {
    Zero,
    Constant { fraction: Vec<f64> },
    Merton { p: f64 },
    LogOptimal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FsExpected {
    pub e: f64,
    pub k: f64,
    pub d: f64,
    pub eta: f64,
    pub value: f64,
}

fn default_v0() -> f64 {
    1.0
}
fn default_rel_tol() -> f64 {
    0.1
}
fn default_fraction() -> f64 {
    1.0
}
fn default_kw_tol() -> f64 {
    1e-8
}
fn default_fs_tol() -> f64 {
    1e-12
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Experiment {
    /// Transform a CSV path, or check the pathwise identities on simulated
    /// paths when no input is given.
    Transform {
        #[serde(default = "default_v0")]
        v0: f64,
        input: Option<PathBuf>,
        /// Fraction of wealth in the risky asset for simulated paths.
        #[serde(default = "default_fraction")]
        fraction: f64,
    },
    TabulateKw {
        #[serde(default = "default_v0")]
        v0: f64,
        lo: f64,
        hi: f64,
        n: usize,
        /// Compare `K` with `v0 (v/v0)^e`.
        reference_exponent: Option<f64>,
        /// Integrate numerically even where a closed form exists, and compare
        /// against it.
        #[serde(default)]
        force_quadrature: bool,
        #[serde(default = "default_kw_tol")]
        rel_tol: f64,
    },
    EstimateCer {
        objective: Objective,
        policy: PolicyConfig,
        /// Estimate on `M^F(V)` for the configured drawdown.
        #[serde(default)]
        apply_drawdown: bool,
        expected: Option<f64>,
        #[serde(default = "default_rel_tol")]
        rel_tol: f64,
    },
    /// Unconstrained Merton benchmark against the closed form.
    Merton {
        p: f64,
        #[serde(default = "default_rel_tol")]
        rel_tol: f64,
    },
    VerifyMain(MainOptions),
    VerifyDollars {
        gamma: f64,
        #[serde(default = "default_rel_tol")]
        rel_tol: f64,
    },
    VerifyLog {
        units: Units,
        #[serde(default = "default_rel_tol")]
        rel_tol: f64,
    },
    VerifyConvergence(ConvergenceOptions),
    FlemingSheu {
        gamma: f64,
        alpha: Option<f64>,
        #[serde(default)]
        variant: KVariant,
        #[serde(default)]
        allow_positive_gamma: bool,
        expected: Option<FsExpected>,
        #[serde(default = "default_fs_tol")]
        tol: f64,
        /// A parameter set that must be rejected.
        invalid: Option<FactorModelSpec>,
        /// Require the printed `K` expression to fail on `[factor]`.
        #[serde(default)]
        expect_printed_rejected: bool,
    },
    DeflatorCheck {
        p: f64,
        units: Units,
        #[serde(default = "default_rel_tol")]
        rel_tol: f64,
    },
    SdeConvergence {
        drift: f64,
        vol: f64,
        dts: Vec<f64>,
        horizon: f64,
        n_paths: usize,
        seed: u64,
        min_order: f64,
    },
    LemmaSuite {
        alpha: f64,
    },
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Transform { .. } => "transform",
            Experiment::TabulateKw { .. } => "tabulate-kw",
            Experiment::EstimateCer { .. } => "estimate-cer",
            Experiment::Merton { .. } => "merton",
            Experiment::VerifyMain(_) => "verify-main",
            Experiment::VerifyDollars { .. } => "verify-dollars",
            Experiment::VerifyLog { .. } => "verify-log",
            Experiment::VerifyConvergence(_) => "verify-convergence",
            Experiment::FlemingSheu { .. } => "fleming-sheu",
            Experiment::DeflatorCheck { .. } => "deflator-check",
            Experiment::SdeConvergence { .. } => "sde-convergence",
            Experiment::LemmaSuite { .. } => "lemma-suite",
        }
    }
}

/// Parse `a.b.c=value`; the value is read as TOML, falling back to a string.
pub fn parse_override(s: &str) -> Result<(Vec<String>, toml::Value), CliError> {
    let (path, raw) = s
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{s}` is not of the form key.path=value")))?;
    let keys: Vec<String> = path.trim().split('.').map(|k| k.trim().to_string()).collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Config(format!("override `{s}` has an empty key")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((keys, value))
}

pub fn apply_override(table: &mut toml::Table, keys: &[String], value: toml::Value) -> Result<(), CliError> {
    let (last, parents) = keys.split_last().expect("non-empty key path");
    let mut cur = table;
    for (i, k) in parents.iter().enumerate() {
        let entry = cur
            .entry(k.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| {
            CliError::Config(format!("override path `{}` crosses a non-table value", keys[..=i].join(".")))
        })?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

/// Read, override and deserialize a config. Errors carry the field path.
pub fn load(path: &Path, overrides: &[String]) -> Result<(ExperimentConfig, toml::Table), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut table: toml::Table =
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    for o in overrides {
        let (keys, value) = parse_override(o)?;
        apply_override(&mut table, &keys, value)?;
    }
    let cfg = from_table(table.clone())?;
    Ok((cfg, table))
}

pub fn from_table(table: toml::Table) -> Result<ExperimentConfig, CliError> {
    serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config(format!("at `{path}`: {}", e.into_inner().to_string().trim_end()))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_parse_typed_values() {
        let (k, v) = parse_override("sim.seed=7").unwrap();
        assert_eq!(k, vec!["sim", "seed"]);
        assert_eq!(v, toml::Value::Integer(7));
        let (_, v) = parse_override("sim.scheme=euler").unwrap();
        assert_eq!(v, toml::Value::String("euler".into()));
        let (_, v) = parse_override("sim.horizons=[1.0, 2.0]").unwrap();
        assert!(v.is_array());
        assert!(parse_override("no_equals").is_err());
    }

    #[test]
    fn override_creates_tables() {
        let mut t = toml::Table::new();
        apply_override(&mut t, &["a".into(), "b".into()], toml::Value::Float(1.5)).unwrap();
        assert_eq!(t["a"]["b"].as_float(), Some(1.5));
        let mut t: toml::Table = toml::from_str("a = 1").unwrap();
        assert!(apply_override(&mut t, &["a".into(), "b".into()], toml::Value::Integer(1)).is_err());
    }

    #[test]
    fn missing_field_reports_path() {
        let t: toml::Table = toml::from_str(
            r#"
            [experiment]
            kind = "merton"
            p = 0.5
            [market]
            pieces = [{ r = 0.0, mu = 0.06 }]
            "#,
        )
        .unwrap();
        let err = from_table(t).unwrap_err().to_string();
        assert!(err.contains("market.pieces[0]") && err.contains("sigma"), "{err}");
    }
}

//! Diff of two `summary.json` artifacts.

use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::CliError;

/// Two estimates agree when their slopes differ by at most this many
/// combined standard errors.
pub const AGREEMENT_SIGMAS: f64 = 2.0;

/// Keys that legitimately differ between otherwise comparable runs.
const IGNORED: &[&str] = &["seed", "per_horizon", "checks", "workers", "name", "output"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiffLevel {
    /// Inputs or closed forms differ; the runs answer different questions.
    Config,
    /// Slopes disagree beyond the statistical band.
    Statistical,
    /// Any other differing value.
    Value,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diff {
    pub path: String,
    pub level: DiffLevel,
    pub a: Value,
    pub b: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigmas: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub kind: String,
    pub diffs: Vec<Diff>,
}

impl Comparison {
    /// No config-level or statistical differences.
    pub fn consistent(&self) -> bool {
        self.diffs.iter().all(|d| d.level == DiffLevel::Value)
    }
}

fn is_estimate(v: &Value) -> bool {
    v.get("slope").is_some_and(Value::is_number) && v.get("stderr").is_some_and(Value::is_number)
}

fn walk(a: &Value, b: &Value, path: &str, config: bool, out: &mut Vec<Diff>) {
    let mut push = |level, sigmas| {
        out.push(Diff {
            path: path.to_string(),
            level,
            a: a.clone(),
            b: b.clone(),
            sigmas,
        })
    };
    if !config && is_estimate(a) && is_estimate(b) {
        let (sa, sb) = (a["slope"].as_f64().unwrap(), b["slope"].as_f64().unwrap());
        let (ea, eb) = (a["stderr"].as_f64().unwrap(), b["stderr"].as_f64().unwrap());
        let se = (ea * ea + eb * eb).sqrt();
        let gap = (sa - sb).abs();
        if gap > AGREEMENT_SIGMAS * se || (se == 0.0 && sa != sb) {
            push(DiffLevel::Statistical, Some(if se > 0.0 { gap / se } else { f64::INFINITY }));
        }
        return;
    }
    match (a, b) {
        (Value::Object(oa), Value::Object(ob)) => {
            let mut keys: Vec<&String> = oa.keys().chain(ob.keys()).collect();
            keys.sort();
            keys.dedup();
            for k in keys {
                if IGNORED.contains(&k.as_str()) {
                    continue;
                }
                let next = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                let cfg = config || k == "config" || k.starts_with("closed_form") || k.ends_with("closed_form");
                walk(
                    oa.get(k).unwrap_or(&Value::Null),
                    ob.get(k).unwrap_or(&Value::Null),
                    &next,
                    cfg,
                    out,
                );
            }
        }
        (Value::Array(xa), Value::Array(xb)) if xa.len() == xb.len() => {
            for (i, (x, y)) in xa.iter().zip(xb).enumerate() {
                walk(x, y, &format!("{path}[{i}]"), config, out);
            }
        }
        _ if a == b => {}
        _ => push(if config { DiffLevel::Config } else { DiffLevel::Value }, None),
    }
}

/// Compare two summaries of the same experiment kind.
pub fn compare_values(a: &Value, b: &Value) -> Result<Comparison, CliError> {
    let kind = |v: &Value| v["kind"].as_str().map(str::to_string);
    let (ka, kb) = (kind(a), kind(b));
    let (Some(ka), Some(kb)) = (ka, kb) else {
        return Err(CliError::Config("summary has no `kind` field".into()));
    };
    if ka != kb {
        return Err(CliError::Config(format!("cannot compare a `{ka}` run with a `{kb}` run")));
    }
    let mut diffs = Vec::new();
    walk(a, b, "", false, &mut diffs);
    Ok(Comparison { kind: ka, diffs })
}

pub fn compare_files(a: &Path, b: &Path) -> Result<Comparison, CliError> {
    let load = |p: &Path| -> Result<Value, CliError> {
        let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
    };
    compare_values(&load(a)?, &load(b)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn summary(slope: f64, seed: u64, r: f64) -> Value {
        json!({
            "kind": "merton",
            "seed": seed,
            "config": { "market": { "pieces": [{ "r": r }] } },
            "report": {
                "closed_form": 0.045,
                "estimate": { "slope": slope, "stderr": 0.001, "per_horizon": [{ "ordinate": slope }] },
            },
        })
    }

    #[test]
    fn identical_summaries_have_no_diff() {
        let a = summary(0.045, 1, 0.0);
        assert!(compare_values(&a, &a).unwrap().diffs.is_empty());
    }

    #[test]
    fn seed_and_small_noise_are_ignored() {
        let c = compare_values(&summary(0.045, 1, 0.0), &summary(0.046, 2, 0.0)).unwrap();
        assert!(c.diffs.is_empty(), "{:?}", c.diffs);
    }

    #[test]
    fn large_slope_gap_is_statistical() {
        let c = compare_values(&summary(0.045, 1, 0.0), &summary(0.05, 1, 0.0)).unwrap();
        assert_eq!(c.diffs.len(), 1);
        assert_eq!(c.diffs[0].level, DiffLevel::Statistical);
        assert!(!c.consistent());
    }

    #[test]
    fn config_changes_are_flagged() {
        let c = compare_values(&summary(0.045, 1, 0.0), &summary(0.045, 1, 0.02)).unwrap();
        assert_eq!(c.diffs[0].level, DiffLevel::Config);
        assert_eq!(c.diffs[0].path, "config.market.pieces[0].r");
    }

    #[test]
    fn kind_mismatch_is_an_error() {
        let mut b = summary(0.045, 1, 0.0);
        b["kind"] = json!("verify-main");
        assert!(compare_values(&summary(0.045, 1, 0.0), &b).is_err());
    }
}

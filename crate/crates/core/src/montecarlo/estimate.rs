//! Long-run growth-rate estimators.
//!
//! For CER and ¢ER the ordinate at horizon `T` is the signed log of the sample
//! mean of `U(V_T)` (`log x = -log(-x)` for `x < 0`), accumulated as a shifted
//! log-sum-exp of `ln |U|`. The tilde objective uses the plain sample mean of
//! `U(V_T)`. The slope is a weighted least-squares fit over the upper half of
//! the horizon grid; its standard error combines the per-path influence of
//! every horizon, so samples shared across horizons are accounted for.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::utility::{Sign, UtilitySpec};

/// Half-width multiplier of the reported confidence intervals.
pub const CI_Z: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// `(1/T) log E[U(V_T)]`
    Cer,
    /// `(1/T) log E[U(V_T N_T)]`
    CentEr,
    /// `(1/T) E[U(V_T)]`
    Tilde,
}

impl Objective {
    pub fn ordinate_name(self) -> &'static str {
        match self {
            Objective::Cer | Objective::CentEr => "signed_log_expected_utility",
            Objective::Tilde => "expected_utility",
        }
    }
}

/// Per-path wealth samples at each horizon, stored path-major.
#[derive(Debug, Clone, PartialEq)]
pub struct WealthSamples {
    pub horizons: Vec<f64>,
    pub n_paths: usize,
    pub values: Vec<f64>,
}

impl WealthSamples {
    pub fn new(horizons: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let h = horizons.len();
        if h == 0 || values.len() % h != 0 {
            return Err(Error::InvalidParameter(format!(
                "{} samples do not fill {h} horizons",
                values.len()
            )));
        }
        let n_paths = values.len() / h;
        Ok(Self {
            horizons,
            n_paths,
            values,
        })
    }

    pub fn at(&self, path: usize, horizon: usize) -> f64 {
        self.values[path * self.horizons.len() + horizon]
    }

    /// Apply `f` to every sample, passing the horizon index.
    pub fn map(&self, f: impl Fn(usize, f64) -> f64) -> Self {
        let h = self.horizons.len();
        Self {
            horizons: self.horizons.clone(),
            n_paths: self.n_paths,
            values: self
                .values
                .iter()
                .enumerate()
                .map(|(i, &v)| f(i % h, v))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonPoint {
    #[serde(rename = "T")]
    pub t: f64,
    pub ordinate: f64,
    pub ci: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CerEstimate {
    pub objective: Objective,
    pub slope: f64,
    pub stderr: f64,
    pub per_horizon: Vec<HorizonPoint>,
    /// First horizon index used in the fit.
    pub fit_start: usize,
    pub n_paths: usize,
}

impl CerEstimate {
    pub fn ci(&self) -> f64 {
        CI_Z * self.stderr
    }

    /// Write `T,ordinate,ci` rows with a header.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "T,ordinate,ci")?;
        for p in &self.per_horizon {
            writeln!(out, "{},{},{}", p.t, p.ordinate, p.ci)?;
        }
        Ok(())
    }
}

/// Index of the first horizon in the fit window.
pub fn fit_start(n_horizons: usize) -> usize {
    (n_horizons / 2).min(n_horizons.saturating_sub(2))
}

/// WLS coefficients `c_k` with `slope = Σ c_k y_k` over `ts[start..]`.
fn wls_coefficients(ts: &[f64], ses: &[f64], start: usize) -> Vec<f64> {
    let window = start..ts.len();
    let equal = ses[window.clone()].iter().any(|&s| !(s > 0.0) || !s.is_finite());
    let w: Vec<f64> = window
        .clone()
        .map(|k| if equal { 1.0 } else { 1.0 / (ses[k] * ses[k]) })
        .collect();
    let sw: f64 = w.iter().sum();
    let tbar: f64 = window.clone().zip(&w).map(|(k, wk)| wk * ts[k]).sum::<f64>() / sw;
    let sxx: f64 = window.clone().zip(&w).map(|(k, wk)| wk * (ts[k] - tbar).powi(2)).sum();
    let mut c = vec![0.0; ts.len()];
    for (k, wk) in window.zip(&w) {
        c[k] = wk * (ts[k] - tbar) / sxx;
    }
    c
}

fn check_horizons(ts: &[f64]) -> Result<()> {
    if ts.len() < 2 {
        return Err(Error::InvalidParameter("growth fit needs at least two horizons".into()));
    }
    if ts.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("horizons must be strictly increasing".into()));
    }
    Ok(())
}

fn sample_sd(xs: impl Iterator<Item = f64> + Clone, n: usize) -> f64 {
    if n < 2 {
        return 0.0;
    }
    let mean = xs.clone().sum::<f64>() / n as f64;
    let ss: f64 = xs.map(|x| (x - mean).powi(2)).sum();
    (ss / (n - 1) as f64).sqrt()
}

/// Fit from per-path `ln |U|` values sharing a common sign.
pub fn fit_signed_log_mean(
    horizons: &[f64],
    ln_abs: &[f64],
    sign: f64,
    objective: Objective,
) -> Result<CerEstimate> {
    check_horizons(horizons)?;
    let h = horizons.len();
    let n = ln_abs.len() / h;
    if n < 2 {
        return Err(Error::InvalidParameter("growth fit needs at least two paths".into()));
    }
    // relative contributions r_jk = U_jk / mean_k
    let mut rel = vec![0.0; ln_abs.len()];
    let mut ordinates = Vec::with_capacity(h);
    let mut ses = Vec::with_capacity(h);
    for k in 0..h {
        let col = (0..n).map(|j| ln_abs[j * h + k]);
        let shift = col.clone().fold(f64::NEG_INFINITY, f64::max);
        if !shift.is_finite() {
            return Err(Error::Domain(format!(
                "non-finite log-utility at horizon {}",
                horizons[k]
            )));
        }
        let sum: f64 = col.clone().map(|l| (l - shift).exp()).sum();
        let mean_scaled = sum / n as f64;
        for j in 0..n {
            rel[j * h + k] = (ln_abs[j * h + k] - shift).exp() / mean_scaled;
        }
        ordinates.push(sign * (shift + mean_scaled.ln()));
        let sd = sample_sd((0..n).map(|j| rel[j * h + k]), n);
        ses.push(sd / (n as f64).sqrt());
    }
    let start = fit_start(h);
    let c = wls_coefficients(horizons, &ses, start);
    let slope: f64 = c.iter().zip(&ordinates).map(|(ck, yk)| ck * yk).sum();
    let influence = (0..n).map(|j| (start..h).map(|k| c[k] * rel[j * h + k]).sum::<f64>());
    let stderr = sample_sd(influence, n) / (n as f64).sqrt();
    Ok(CerEstimate {
        objective,
        slope,
        stderr,
        per_horizon: (0..h)
            .map(|k| HorizonPoint {
                t: horizons[k],
                ordinate: ordinates[k],
                ci: CI_Z * ses[k],
            })
            .collect(),
        fit_start: start,
        n_paths: n,
    })
}

/// Fit from per-path utility values: ordinate is the sample mean.
pub fn fit_mean(horizons: &[f64], values: &[f64]) -> Result<CerEstimate> {
    check_horizons(horizons)?;
    let h = horizons.len();
    let n = values.len() / h;
    if n < 2 {
        return Err(Error::InvalidParameter("growth fit needs at least two paths".into()));
    }
    let mut ordinates = Vec::with_capacity(h);
    let mut ses = Vec::with_capacity(h);
    for k in 0..h {
        let col = (0..n).map(|j| values[j * h + k]);
        if col.clone().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite utility at horizon {}", horizons[k])));
        }
        ordinates.push(col.clone().sum::<f64>() / n as f64);
        ses.push(sample_sd(col, n) / (n as f64).sqrt());
    }
    let start = fit_start(h);
    let c = wls_coefficients(horizons, &ses, start);
    let slope: f64 = c.iter().zip(&ordinates).map(|(ck, yk)| ck * yk).sum();
    let influence = (0..n).map(|j| (start..h).map(|k| c[k] * values[j * h + k]).sum::<f64>());
    let stderr = sample_sd(influence, n) / (n as f64).sqrt();
    Ok(CerEstimate {
        objective: Objective::Tilde,
        slope,
        stderr,
        per_horizon: (0..h)
            .map(|k| HorizonPoint {
                t: horizons[k],
                ordinate: ordinates[k],
                ci: CI_Z * ses[k],
            })
            .collect(),
        fit_start: start,
        n_paths: n,
    })
}

/// Estimate the growth rate of `U` along the sampled wealth. For ¢ER the
/// numeraire values `N_T` at each horizon must be supplied.
pub fn estimate_growth(
    samples: &WealthSamples,
    u: &UtilitySpec,
    objective: Objective,
    numeraire: Option<&[f64]>,
) -> Result<CerEstimate> {
    let h = samples.horizons.len();
    let scale: Vec<f64> = match (objective, numeraire) {
        (Objective::CentEr, Some(n)) if n.len() == h => n.to_vec(),
        (Objective::CentEr, _) => {
            return Err(Error::InvalidParameter(
                "¢ER needs the numeraire at every horizon".into(),
            ))
        }
        _ => vec![1.0; h],
    };
    let wealth = |i: usize| samples.values[i] * scale[i % h];
    match objective {
        Objective::Tilde => {
            let vals: Vec<f64> = (0..samples.values.len()).map(|i| u.eval(wealth(i))).collect();
            fit_mean(&samples.horizons, &vals)
        }
        Objective::Cer | Objective::CentEr => {
            let sign = match u.sign() {
                Sign::Positive => 1.0,
                Sign::Negative => -1.0,
                Sign::Indefinite => {
                    return Err(Error::InvalidParameter(format!(
                        "{} changes sign; use the tilde objective",
                        u.describe()
                    )))
                }
            };
            let custom = u.power_exponent().is_none() && u.composed_exponent().is_none();
            let mut ln_abs = Vec::with_capacity(samples.values.len());
            for i in 0..samples.values.len() {
                let x = wealth(i);
                if custom && !(sign * u.eval(x) > 0.0) {
                    return Err(Error::SignFlip {
                        horizon: samples.horizons[i % h],
                    });
                }
                ln_abs.push(u.ln_abs(x));
            }
            fit_signed_log_mean(&samples.horizons, &ln_abs, sign, objective)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_wealth_has_zero_slope() {
        let s = WealthSamples::new(vec![1.0, 2.0, 3.0, 4.0], vec![2.0; 40]).unwrap();
        let u = UtilitySpec::power(0.5).unwrap();
        let e = estimate_growth(&s, &u, Objective::Cer, None).unwrap();
        assert!(e.slope.abs() < 1e-15);
        assert_eq!(e.stderr, 0.0);
        let t = estimate_growth(&s, &UtilitySpec::log(), Objective::Tilde, None).unwrap();
        assert!(t.slope.abs() < 1e-15);
    }

    #[test]
    fn deterministic_growth_is_recovered() {
        // V_T = e^{0.1 T}, U = x^{0.5}/0.5, so log U grows at 0.05
        let hs = vec![1.0, 2.0, 3.0, 4.0];
        let vals: Vec<f64> = (0..10).flat_map(|_| hs.iter().map(|t: &f64| (0.1 * t).exp())).collect();
        let s = WealthSamples::new(hs, vals).unwrap();
        let e = estimate_growth(&s, &UtilitySpec::power(0.5).unwrap(), Objective::Cer, None).unwrap();
        assert!((e.slope - 0.05).abs() < 1e-13);
        let n = estimate_growth(&s, &UtilitySpec::power(-1.0).unwrap(), Objective::Cer, None).unwrap();
        // E[U] = -e^{-0.1T}: signed log gives +0.1 T
        assert!((n.slope - 0.1).abs() < 1e-13);
    }

    #[test]
    fn cent_er_requires_numeraire() {
        let s = WealthSamples::new(vec![1.0, 2.0], vec![1.0; 4]).unwrap();
        let u = UtilitySpec::power(0.5).unwrap();
        assert!(estimate_growth(&s, &u, Objective::CentEr, None).is_err());
        let n = [0.02f64.exp(), 0.04f64.exp()];
        let e = estimate_growth(&s, &u, Objective::CentEr, Some(&n)).unwrap();
        assert!((e.slope - 0.01).abs() < 1e-13);
    }

    #[test]
    fn custom_sign_flip_is_reported() {
        let u = UtilitySpec::custom("x-2", Sign::Positive, |x| x - 2.0, |_| 1.0);
        let s = WealthSamples::new(vec![1.0, 2.0], vec![3.0, 3.0, 1.0, 3.0]).unwrap();
        assert_eq!(
            estimate_growth(&s, &u, Objective::Cer, None).unwrap_err(),
            Error::SignFlip { horizon: 1.0 }
        );
    }

    #[test]
    fn log_is_rejected_for_cer() {
        let s = WealthSamples::new(vec![1.0, 2.0], vec![3.0; 4]).unwrap();
        assert!(estimate_growth(&s, &UtilitySpec::log(), Objective::Cer, None).is_err());
    }
}

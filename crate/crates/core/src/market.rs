//! Closed-form market models.
//!
//! Rates are per year. In a [`CompleteMarketSpec`] the drift `mu` and the
//! rate `r` are quoted in the same (dollar) units; the numeraire is the
//! savings account `N_t = exp(∫ r)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::azema_yor::sde_euler_step;
use crate::drawdown::DrawdownSpec;
use crate::error::{Error, Result};

/// Units in which a growth rate is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Units {
    /// Wealth in units of the numeraire (CER).
    Numeraire,
    /// Wealth times the numeraire (¢ER).
    Dollars,
}

#[derive(Debug, Clone, PartialEq)]
struct Piece {
    start: f64,
    r: f64,
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    sigma_inv: DMatrix<f64>,
    theta: DVector<f64>,
}

/// Diffusion market with piecewise-constant coefficients; the last piece
/// extends to infinity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMarket", into = "RawMarket")]
pub struct CompleteMarketSpec {
    pieces: Vec<Piece>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VectorInput {
    Scalar(f64),
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixInput {
    Scalar(f64),
    /// Row-major.
    Rows(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawPiece {
    #[serde(default)]
    pub start: f64,
    pub r: f64,
    pub mu: VectorInput,
    pub sigma: MatrixInput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawMarket {
    pub pieces: Vec<RawPiece>,
}

impl TryFrom<RawMarket> for CompleteMarketSpec {
    type Error = Error;

    fn try_from(raw: RawMarket) -> Result<Self> {
        let mut pieces = Vec::new();
        for p in raw.pieces {
            let mu = match p.mu {
                VectorInput::Scalar(m) => DVector::from_element(1, m),
                VectorInput::Vector(v) => DVector::from_vec(v),
            };
            let sigma = match p.sigma {
                MatrixInput::Scalar(s) => DMatrix::from_element(1, 1, s),
                MatrixInput::Rows(rows) => {
                    let n = rows.len();
                    if rows.iter().any(|r| r.len() != n) {
                        return Err(Error::InvalidParameter(format!(
                            "sigma must be square, got {n} rows of unequal length"
                        )));
                    }
                    DMatrix::from_row_iterator(n, n, rows.into_iter().flatten())
                }
            };
            pieces.push((p.start, p.r, mu, sigma));
        }
        CompleteMarketSpec::new(pieces)
    }
}

impl From<CompleteMarketSpec> for RawMarket {
    fn from(m: CompleteMarketSpec) -> Self {
        RawMarket {
            pieces: m
                .pieces
                .iter()
                .map(|p| RawPiece {
                    start: p.start,
                    r: p.r,
                    mu: VectorInput::Vector(p.mu.iter().copied().collect()),
                    sigma: MatrixInput::Rows(
                        p.sigma.row_iter().map(|r| r.iter().copied().collect()).collect(),
                    ),
                })
                .collect(),
        }
    }
}

impl CompleteMarketSpec {
    /// Pieces as `(start, r, mu, sigma)`; starts ascending from 0.
    pub fn new(pieces: Vec<(f64, f64, DVector<f64>, DMatrix<f64>)>) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::InvalidParameter("market needs at least one piece".into()));
        }
        if pieces[0].0 != 0.0 {
            return Err(Error::InvalidParameter("first market piece must start at t = 0".into()));
        }
        let d = pieces[0].2.len();
        let mut out = Vec::with_capacity(pieces.len());
        let mut prev = f64::NEG_INFINITY;
        for (start, r, mu, sigma) in pieces {
            if !(start > prev) {
                return Err(Error::InvalidParameter("piece starts must be strictly increasing".into()));
            }
            prev = start;
            if mu.len() != d || sigma.nrows() != d || sigma.ncols() != d || d == 0 {
                return Err(Error::InvalidParameter(format!(
                    "piece at t = {start}: expected {d} assets, got mu {} and sigma {}x{}",
                    mu.len(),
                    sigma.nrows(),
                    sigma.ncols()
                )));
            }
            if !r.is_finite() || mu.iter().chain(sigma.iter()).any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!("non-finite coefficient at t = {start}")));
            }
            let sigma_inv = sigma
                .clone()
                .try_inverse()
                .filter(|inv| inv.iter().all(|v| v.is_finite()))
                .ok_or(Error::SingularVolatility { t: start })?;
            let excess = &mu - DVector::from_element(d, r);
            let theta = &sigma_inv * excess;
            out.push(Piece {
                start,
                r,
                mu,
                sigma,
                sigma_inv,
                theta,
            });
        }
        Ok(Self { pieces: out })
    }

    pub fn constant(r: f64, mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        Self::new(vec![(0.0, r, mu, sigma)])
    }

    /// One asset with constant coefficients.
    pub fn black_scholes(r: f64, mu: f64, sigma: f64) -> Result<Self> {
        Self::constant(r, DVector::from_element(1, mu), DMatrix::from_element(1, 1, sigma))
    }

    /// One asset with market price of risk `theta`: `mu = r + sigma theta`.
    pub fn from_theta(r: f64, theta: f64, sigma: f64) -> Result<Self> {
        Self::black_scholes(r, r + sigma * theta, sigma)
    }

    pub fn dim(&self) -> usize {
        self.pieces[0].mu.len()
    }

    fn piece(&self, t: f64) -> &Piece {
        let k = self.pieces.partition_point(|p| p.start <= t);
        &self.pieces[k.saturating_sub(1)]
    }

    fn tail(&self) -> &Piece {
        self.pieces.last().expect("non-empty")
    }

    pub fn is_constant(&self) -> bool {
        self.pieces.len() == 1
    }

    pub fn rate(&self, t: f64) -> f64 {
        self.piece(t).r
    }

    pub fn mu(&self, t: f64) -> &DVector<f64> {
        &self.piece(t).mu
    }

    pub fn sigma(&self, t: f64) -> &DMatrix<f64> {
        &self.piece(t).sigma
    }

    /// Start times of the coefficient pieces.
    pub fn breakpoints(&self) -> Vec<f64> {
        self.pieces.iter().map(|p| p.start).collect()
    }

    /// `r*`, the tail rate.
    pub fn r_star(&self) -> f64 {
        self.tail().r
    }

    /// `||θ*||²` from the tail piece.
    pub fn theta_sq_tail(&self) -> f64 {
        self.tail().theta.norm_squared()
    }

    fn running_average(&self, horizon: f64, f: impl Fn(&Piece) -> f64) -> f64 {
        if horizon <= 0.0 {
            return f(&self.pieces[0]);
        }
        let mut acc = 0.0;
        for (i, p) in self.pieces.iter().enumerate() {
            if p.start >= horizon {
                break;
            }
            let end = self.pieces.get(i + 1).map_or(horizon, |q| q.start.min(horizon));
            acc += f(p) * (end - p.start);
        }
        acc / horizon
    }

    /// `(1/T) ∫_0^T ||θ_u||² du`.
    pub fn theta_sq_average(&self, horizon: f64) -> f64 {
        self.running_average(horizon, |p| p.theta.norm_squared())
    }

    /// `(1/T) ∫_0^T r_u du`.
    pub fn r_average(&self, horizon: f64) -> f64 {
        self.running_average(horizon, |p| p.r)
    }

    /// `N_T = exp(∫_0^T r_u du)`.
    pub fn numeraire(&self, horizon: f64) -> f64 {
        (self.r_average(horizon) * horizon).exp()
    }

    /// Spectral condition number of `σ` on each piece.
    pub fn condition_numbers(&self) -> Vec<f64> {
        self.pieces
            .iter()
            .map(|p| {
                let sv = p.sigma.clone().svd(false, false).singular_values;
                sv.max() / sv.min()
            })
            .collect()
    }
}

/// `θ_t = σ_t⁻¹ (μ_t - r_t 𝕀)`.
pub fn market_price_of_risk(m: &CompleteMarketSpec, t: f64) -> DVector<f64> {
    m.piece(t).theta.clone()
}

fn check_exponent(p: f64) -> Result<()> {
    if !(p < 1.0 && p != 0.0 && p.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "power exponent must lie in (-∞, 1) \\ {{0}}, got {p}"
        )));
    }
    Ok(())
}

/// `π_t = (σ_t')⁻¹ θ_t / (1 - p)`, fractions of wealth per asset.
pub fn merton_fraction(m: &CompleteMarketSpec, p: f64, t: f64) -> Result<DVector<f64>> {
    check_exponent(p)?;
    let piece = m.piece(t);
    Ok(piece.sigma_inv.transpose() * &piece.theta / (1.0 - p))
}

/// `|p| r* + |p| ||θ*||² / (2(1 - p))`.
pub fn cer_power_closed_form(p: f64, r_star: f64, theta_sq: f64) -> Result<f64> {
    check_exponent(p)?;
    Ok(p.abs() * r_star + p.abs() * theta_sq / (2.0 * (1.0 - p)))
}

/// `|γ| (r* + (1 - α) ||θ*||² / (2(1 - γ(1 - α))))`.
pub fn cer_drawdown_closed_form(gamma: f64, alpha: f64, r_star: f64, theta_sq: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!("alpha must lie in [0, 1), got {alpha}")));
    }
    check_exponent(gamma)?;
    let q = gamma * (1.0 - alpha);
    check_exponent(q)?;
    Ok(gamma.abs() * (r_star + (1.0 - alpha) * theta_sq / (2.0 * (1.0 - q))))
}

/// Optimal growth rate of `U^(p)` in dollars (equal to CER when `r* = 0`).
pub fn cer_power_unconstrained(m: &CompleteMarketSpec, p: f64) -> Result<f64> {
    cer_power_closed_form(p, m.r_star(), m.theta_sq_tail())
}

/// Optimal growth rate of `U^(γ)` under the drawdown `w(x) = αx`, in dollars.
pub fn cer_drawdown_constrained(m: &CompleteMarketSpec, gamma: f64, alpha: f64) -> Result<f64> {
    cer_drawdown_closed_form(gamma, alpha, m.r_star(), m.theta_sq_tail())
}

/// Growth rate of `U^(p)` for the constant fraction vector `pi` on the tail
/// piece: with `s = σ'π`, `sign(p)[p s·θ - p(1-p)|s|²/2]`, plus `|p| r*` in
/// dollars.
pub fn constant_policy_rate(m: &CompleteMarketSpec, p: f64, pi: &DVector<f64>, units: Units) -> Result<f64> {
    check_exponent(p)?;
    let tail = m.tail();
    let s = tail.sigma.transpose() * pi;
    let core = p.signum() * (p * s.dot(&tail.theta) - 0.5 * p * (1.0 - p) * s.norm_squared());
    Ok(match units {
        Units::Numeraire => core,
        Units::Dollars => core + p.abs() * tail.r,
    })
}

/// `1 / (1 - γ(1 - α))`, the multiplier on `θ'σ⁻¹` in the constrained policy.
pub fn exposure_multiplier(gamma: f64, alpha: f64) -> f64 {
    1.0 / (1.0 - gamma * (1.0 - alpha))
}

/// One step of the constrained optimum
/// `dX = (X - w(X̄)) Σ_i π^i dS^i/S^i` with `π` the Merton fraction at
/// `γ(1 - α)`. `returns` are the numeraire-discounted asset returns.
pub fn constrained_policy_step(
    m: &CompleteMarketSpec,
    gamma: f64,
    alpha: f64,
    w: &DrawdownSpec,
    x: f64,
    xbar: f64,
    returns: &DVector<f64>,
    t: f64,
) -> Result<f64> {
    let pi = merton_fraction(m, gamma * (1.0 - alpha), t)?;
    sde_euler_step(x, xbar, w, pi.dot(returns))
}

/// Scalar coefficients of the factor model
/// `dS/S = (μ₁ + μ₂ x) dt + σ dW¹ + ρ dW²`, `dx = b x dt + dW¹`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorModelSpec {
    pub r: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub sigma: f64,
    pub rho: f64,
    pub b: f64,
}

/// Which expression to use for `K^(γ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KVariant {
    /// `(b + g/(σ²+ρ²))²` inside the root, exactly as printed.
    Printed,
    /// `(b + g μ₂σ/(σ²+ρ²))²`, matching `D^(γ)`.
    #[default]
    Corrected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlemingSheuValue {
    pub e: f64,
    pub k: f64,
    pub d: f64,
    pub eta: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FlemingSheuOptions {
    pub variant: KVariant,
    /// Accept `γ ∈ (0, 1)` where the formulas stay real.
    pub allow_positive_gamma: bool,
}

pub fn fleming_sheu_value(f: &FactorModelSpec, gamma: f64) -> Result<FlemingSheuValue> {
    fleming_sheu_value_with(f, gamma, FlemingSheuOptions::default())
}

pub fn fleming_sheu_value_with(
    f: &FactorModelSpec,
    gamma: f64,
    opts: FlemingSheuOptions,
) -> Result<FlemingSheuValue> {
    check_exponent(gamma)?;
    if gamma > 0.0 && !opts.allow_positive_gamma {
        return Err(Error::InvalidParameter(format!(
            "factor-model value requires γ < 0, got {gamma}"
        )));
    }
    let g = gamma / (1.0 - gamma);
    let s2 = f.sigma * f.sigma + f.rho * f.rho;
    if !(s2 > 0.0) {
        return Err(Error::InvalidParameter("σ² + ρ² must be positive".into()));
    }
    let e = 1.0 + g * f.sigma * f.sigma / s2;
    if !(e > 0.0) {
        return Err(Error::Domain(format!("E^(γ) = {e} is not positive")));
    }
    let shift = g * f.mu2 * f.sigma / s2;
    let radicand = |inner: f64| -g * f.mu2 * f.mu2 / s2 + (f.b + inner).powi(2) / e;
    let root = |inner: f64| {
        let q = radicand(inner);
        if q < 0.0 {
            Err(Error::Domain(format!("negative radicand {q} in the factor-model formulas")))
        } else {
            Ok(q.sqrt())
        }
    };
    let k_inner = match opts.variant {
        KVariant::Printed => g / s2,
        KVariant::Corrected => shift,
    };
    let k = -(f.b + shift) / e - root(k_inner)? / e.sqrt();
    let d = -e.sqrt() * root(shift)?;
    if f.mu2 * f.mu2 < f.sigma * f.sigma * k * k {
        return Err(Error::Domain(format!(
            "validity condition μ₂² ≥ σ²K² fails ({} < {})",
            f.mu2 * f.mu2,
            f.sigma * f.sigma * k * k
        )));
    }
    let denom = (d + k * e) * s2;
    let numer = f.mu2 + k * f.sigma * (f.mu1 - f.r);
    let eta = if numer == 0.0 { 0.0 } else { -g * numer / denom };
    if !eta.is_finite() {
        return Err(Error::Domain("η is undefined (D + K E = 0)".into()));
    }
    let excess = f.mu1 - f.r + f.sigma * eta;
    let value = 0.5 * k + 0.5 * eta * eta + 0.5 * g * excess * excess / s2 + gamma.abs() * f.r;
    Ok(FlemingSheuValue { e, k, d, eta, value })
}

/// Constrained value in dollars for `w(x) = αx`:
/// `value(γ(1 - α)) + |γ| α r`.
pub fn fleming_sheu_constrained(
    f: &FactorModelSpec,
    gamma: f64,
    alpha: f64,
    opts: FlemingSheuOptions,
) -> Result<f64> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!("alpha must lie in [0, 1), got {alpha}")));
    }
    let base = fleming_sheu_value_with(f, gamma * (1.0 - alpha), opts)?;
    Ok(base.value + gamma.abs() * alpha * f.r)
}

/// Finiteness bound from the state-price density: with `q = -p/(1-p)`,
/// `R = R_{U^(q)}(Z)` (or of `Z/N` in dollars) and `CER_{U^(p)} ≤ -(1-p) R`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeflatorBound {
    pub p: f64,
    pub q: f64,
    pub deflator_rate: f64,
    pub cer_bound: f64,
    pub finite: bool,
}

/// `E[Z_T^a] = exp((a² - a) ||θ||² T / 2)` for constant `θ`.
pub fn deflator_moment(a: f64, theta_sq: f64, horizon: f64) -> f64 {
    ((a * a - a) * theta_sq * horizon / 2.0).exp()
}

pub fn deflator_exponent(p: f64) -> Result<f64> {
    check_exponent(p)?;
    Ok(-p / (1.0 - p))
}

/// Closed-form bound for constant coefficients.
pub fn deflator_bound(m: &CompleteMarketSpec, p: f64, units: Units) -> Result<DeflatorBound> {
    let q = deflator_exponent(p)?;
    let theta_sq = m.theta_sq_tail();
    let mut log_moment_rate = (q * q - q) * theta_sq / 2.0;
    if units == Units::Dollars {
        log_moment_rate -= q * m.r_star();
    }
    Ok(bound_from_rate(p, q, log_moment_rate))
}

/// Bound from an estimated `lim (1/T) log E[(Z_T/N_T)^q]`.
pub fn bound_from_rate(p: f64, q: f64, log_moment_rate: f64) -> DeflatorBound {
    // signed-log convention for the negative utility when q < 0
    let deflator_rate = q.signum() * log_moment_rate;
    let cer_bound = -(1.0 - p) * deflator_rate;
    DeflatorBound {
        p,
        q,
        deflator_rate,
        cer_bound,
        finite: deflator_rate.is_finite(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theta_examples() {
        let m = CompleteMarketSpec::black_scholes(0.02, 0.08, 0.2).unwrap();
        assert!((market_price_of_risk(&m, 0.0)[0] - 0.3).abs() < 1e-15);
        let m2 = CompleteMarketSpec::constant(
            0.0,
            DVector::from_vec(vec![0.04, 0.08]),
            DMatrix::from_diagonal(&DVector::from_vec(vec![0.2, 0.4])),
        )
        .unwrap();
        let th = market_price_of_risk(&m2, 3.0);
        assert!((th[0] - 0.2).abs() < 1e-15 && (th[1] - 0.2).abs() < 1e-15);
        assert!((m2.theta_sq_tail() - 0.08).abs() < 1e-15);
        assert!((m2.condition_numbers()[0] - 2.0).abs() < 1e-12);
        let flat = CompleteMarketSpec::black_scholes(0.03, 0.03, 0.2).unwrap();
        assert_eq!(market_price_of_risk(&flat, 0.0)[0], 0.0);
    }

    #[test]
    fn singular_sigma_rejected() {
        let err = CompleteMarketSpec::constant(
            0.0,
            DVector::from_vec(vec![0.1, 0.1]),
            DMatrix::from_row_slice(2, 2, &[0.2, 0.2, 0.2, 0.2]),
        )
        .unwrap_err();
        assert_eq!(err, Error::SingularVolatility { t: 0.0 });
    }

    #[test]
    fn merton_examples() {
        let m = CompleteMarketSpec::from_theta(0.0, 0.3, 0.2).unwrap();
        assert!((merton_fraction(&m, 0.5, 0.0).unwrap()[0] - 3.0).abs() < 1e-12);
        assert!((merton_fraction(&m, -99.0, 0.0).unwrap()[0] - 0.015).abs() < 1e-12);
        assert!(merton_fraction(&m, 1.0, 0.0).is_err());
    }

    #[test]
    fn cer_examples() {
        assert!((cer_power_closed_form(0.5, 0.02, 0.09).unwrap() - 0.055).abs() < 1e-15);
        assert!((cer_drawdown_closed_form(0.5, 0.5, 0.02, 0.09).unwrap() - 0.025).abs() < 1e-15);
        assert!((cer_drawdown_closed_form(-1.0, 0.5, 0.02, 0.09).unwrap() - 0.035).abs() < 1e-15);
        assert!((cer_power_closed_form(0.25, 0.0, 0.09).unwrap() - 0.015).abs() < 1e-15);
        assert_eq!(cer_power_closed_form(0.5, 0.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn constant_policy_rate_peaks_at_merton() {
        let m = CompleteMarketSpec::from_theta(0.02, 0.3, 0.2).unwrap();
        for p in [0.5, -1.0] {
            let pi = merton_fraction(&m, p, 0.0).unwrap();
            let best = constant_policy_rate(&m, p, &pi, Units::Dollars).unwrap();
            assert!((best - cer_power_unconstrained(&m, p).unwrap()).abs() < 1e-15);
            let half = constant_policy_rate(&m, p, &(pi * 0.5), Units::Dollars).unwrap();
            assert!(half < best);
        }
    }

    #[test]
    fn piecewise_averages() {
        let m = CompleteMarketSpec::new(vec![
            (0.0, 0.01, DVector::from_element(1, 0.11), DMatrix::from_element(1, 1, 0.2)),
            (2.0, 0.02, DVector::from_element(1, 0.08), DMatrix::from_element(1, 1, 0.2)),
        ])
        .unwrap();
        assert!((m.theta_sq_tail() - 0.09).abs() < 1e-15);
        // 2 years at θ = 0.5, 2 at θ = 0.3
        assert!((m.theta_sq_average(4.0) - (0.25 + 0.09) / 2.0).abs() < 1e-15);
        assert!((m.r_average(4.0) - 0.015).abs() < 1e-15);
        assert_eq!(m.rate(1.999), 0.01);
        assert_eq!(m.rate(2.0), 0.02);
    }

    #[test]
    fn serde_shorthand() {
        let raw: RawMarket = serde_json::from_str(
            r#"{"pieces":[{"r":0.0,"mu":0.06,"sigma":0.2},{"start":5.0,"r":0.0,"mu":[0.08],"sigma":[[0.2]]}]}"#,
        )
        .unwrap();
        let m = CompleteMarketSpec::try_from(raw).unwrap();
        assert!((m.theta_sq_tail() - 0.16).abs() < 1e-15);
    }

    #[test]
    fn deflator_examples() {
        let m = CompleteMarketSpec::from_theta(0.0, 0.3, 0.2).unwrap();
        // p = 0.5: q = -1 and E[Z^-1] = exp(θ² T)
        assert!((deflator_moment(-1.0, 0.09, 1.0) - 0.09f64.exp()).abs() < 1e-15);
        assert!((deflator_moment(0.5, 0.09, 1.0) - (-0.09f64 / 8.0).exp()).abs() < 1e-15);
        for p in [0.5, -1.0] {
            let b = deflator_bound(&m, p, Units::Numeraire).unwrap();
            assert!(b.finite);
            assert!((b.cer_bound - cer_power_unconstrained(&m, p).unwrap()).abs() < 1e-15);
        }
        let zero = CompleteMarketSpec::from_theta(0.0, 0.0, 0.2).unwrap();
        assert_eq!(deflator_bound(&zero, 0.5, Units::Numeraire).unwrap().cer_bound, 0.0);
    }

    fn fs_example() -> FactorModelSpec {
        FactorModelSpec {
            r: 0.02,
            mu1: 0.08,
            mu2: 0.0,
            sigma: 0.2,
            rho: 0.2,
            b: -1.0,
        }
    }

    #[test]
    fn fleming_sheu_hand_instance() {
        let v = fleming_sheu_value(&fs_example(), -1.0).unwrap();
        assert!((v.e - 0.75).abs() < 1e-12);
        assert!(v.k.abs() < 1e-12);
        assert!((v.d + 1.0).abs() < 1e-12);
        assert!(v.eta.abs() < 1e-12);
        assert!((v.value - 0.00875).abs() < 1e-12);
    }

    #[test]
    fn printed_k_breaks_validity_at_the_hand_instance() {
        let opts = FlemingSheuOptions {
            variant: KVariant::Printed,
            ..Default::default()
        };
        let err = fleming_sheu_value_with(&fs_example(), -1.0, opts).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn fleming_sheu_small_gamma_vanishes() {
        let v = fleming_sheu_value(&fs_example(), -1e-9).unwrap();
        assert!(v.value.abs() < 1e-9);
    }

    #[test]
    fn fleming_sheu_rejects_positive_gamma_and_negative_radicand() {
        assert!(fleming_sheu_value(&fs_example(), 0.5).is_err());
        let f = FactorModelSpec {
            mu2: 1.0,
            b: 0.0,
            ..fs_example()
        };
        let opts = FlemingSheuOptions {
            allow_positive_gamma: true,
            ..Default::default()
        };
        let err = fleming_sheu_value_with(&f, 0.5, opts).unwrap_err();
        assert!(err.to_string().contains("radicand"), "{err}");
    }
}

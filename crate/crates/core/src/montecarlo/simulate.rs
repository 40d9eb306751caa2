//! Seeded path simulation of wealth under a fraction-of-wealth policy.
//!
//! Wealth is in numeraire units: `dV/V = π'σ(θ dt + dW)`. Only the scalar
//! `s·W` with `s = σ'π` enters, so one normal draw per step suffices.
//! Every path owns the ChaCha stream `(seed, path index)`; results are
//! collected in path order, so output does not depend on the worker count.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::azema_yor::SamplePath;
use crate::drawdown::DrawdownSpec;
use crate::error::{Error, Result};
use crate::market::{market_price_of_risk, merton_fraction, CompleteMarketSpec};
use crate::monotone::MonotoneMap;

use super::estimate::WealthSamples;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Exact log-normal increments (at horizons, or on the `dt` grid when the
    /// running maximum is needed).
    #[default]
    ExactLognormal,
    Euler,
}

fn default_v0() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n_paths: usize,
    /// Time step in years.
    pub dt: f64,
    /// Ascending horizons in years, multiples of `dt`.
    pub horizons: Vec<f64>,
    pub seed: u64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub antithetic: bool,
    #[serde(default = "default_v0")]
    pub v0: f64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n_paths < 2 {
            return bad(format!("n_paths must be at least 2, got {}", self.n_paths));
        }
        if self.antithetic && self.n_paths % 2 != 0 {
            return bad("antithetic sampling needs an even n_paths".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.v0 > 0.0) {
            return bad(format!("v0 must be positive, got {}", self.v0));
        }
        if self.horizons.is_empty() {
            return bad("horizon grid is empty".into());
        }
        let mut prev = 0.0;
        for &t in &self.horizons {
            if !(t > prev) {
                return bad("horizons must be positive and strictly increasing".into());
            }
            prev = t;
            let steps = t / self.dt;
            if (steps - steps.round()).abs() > 1e-6 * steps.max(1.0) {
                return bad(format!("horizon {t} is not a multiple of dt = {}", self.dt));
            }
        }
        Ok(())
    }

    /// Grid index of every horizon.
    pub fn horizon_steps(&self) -> Vec<usize> {
        self.horizons.iter().map(|t| (t / self.dt).round() as usize).collect()
    }

    pub fn total_steps(&self) -> usize {
        *self.horizon_steps().last().unwrap_or(&0)
    }
}

/// The RNG of path `index`; antithetic partners share a stream.
pub fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

struct NormalSource {
    rng: ChaCha8Rng,
    flip: bool,
}

impl NormalSource {
    fn new(cfg: &SimConfig, path: usize) -> Self {
        if cfg.antithetic {
            Self {
                rng: path_rng(cfg.seed, (path / 2) as u64),
                flip: path % 2 == 1,
            }
        } else {
            Self {
                rng: path_rng(cfg.seed, path as u64),
                flip: false,
            }
        }
    }

    #[inline]
    fn next(&mut self) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.rng);
        if self.flip {
            -z
        } else {
            z
        }
    }
}

/// Run `f` on a dedicated pool of `workers` threads (0 means the default).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Fraction-of-wealth policies.
#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    Zero,
    Constant(DVector<f64>),
    /// Merton fraction for `U^(p)`.
    Merton(f64),
    /// `(σ')⁻¹ θ`, the growth-optimal fraction.
    LogOptimal,
    Scaled(Box<Policy>, f64),
    /// `(start, fraction)` pieces, ascending from 0.
    Piecewise(Vec<(f64, DVector<f64>)>),
}

impl Policy {
    pub fn fraction(&self, m: &CompleteMarketSpec, t: f64) -> Result<DVector<f64>> {
        let d = m.dim();
        let pi = match self {
            Policy::Zero => DVector::zeros(d),
            Policy::Constant(pi) => pi.clone(),
            Policy::Merton(p) => merton_fraction(m, *p, t)?,
            Policy::LogOptimal => {
                let sigma_t = m.sigma(t).transpose();
                let inv = sigma_t
                    .try_inverse()
                    .ok_or(Error::SingularVolatility { t })?;
                inv * market_price_of_risk(m, t)
            }
            Policy::Scaled(inner, c) => inner.fraction(m, t)? * *c,
            Policy::Piecewise(pieces) => {
                let k = pieces.partition_point(|(s, _)| *s <= t);
                pieces
                    .get(k.saturating_sub(1))
                    .map(|p| p.1.clone())
                    .ok_or_else(|| Error::InvalidParameter("empty piecewise policy".into()))?
            }
        };
        if pi.len() != d {
            return Err(Error::InvalidParameter(format!(
                "policy has {} entries for {d} assets",
                pi.len()
            )));
        }
        Ok(pi)
    }

    fn breakpoints(&self) -> Vec<f64> {
        match self {
            Policy::Piecewise(p) => p.iter().map(|x| x.0).collect(),
            Policy::Scaled(inner, _) => inner.breakpoints(),
            _ => Vec::new(),
        }
    }
}

/// `(s·θ, |s|²)` on the segment starting at `t`.
fn local_coefficients(m: &CompleteMarketSpec, policy: &Policy, t: f64) -> Result<(f64, f64)> {
    let pi = policy.fraction(m, t)?;
    let s = m.sigma(t).transpose() * pi;
    Ok((s.dot(&market_price_of_risk(m, t)), s.norm_squared()))
}

/// Per-step coefficients on the `dt` grid.
struct StepTable {
    /// `(s·θ, |s|)` per step.
    coef: Vec<(f64, f64)>,
    /// Same for every step.
    constant: bool,
}

impl StepTable {
    fn build(m: &CompleteMarketSpec, policy: &Policy, dt: f64, steps: usize) -> Result<Self> {
        let mut breaks = m.breakpoints();
        breaks.extend(policy.breakpoints());
        breaks.retain(|&b| b > 0.0);
        if breaks.is_empty() {
            let (a, s2) = local_coefficients(m, policy, 0.0)?;
            return Ok(Self {
                coef: vec![(a, s2.sqrt())],
                constant: true,
            });
        }
        let coef = (0..steps)
            .map(|i| local_coefficients(m, policy, i as f64 * dt).map(|(a, s2)| (a, s2.sqrt())))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            coef,
            constant: false,
        })
    }

    #[inline]
    fn at(&self, i: usize) -> (f64, f64) {
        if self.constant {
            self.coef[0]
        } else {
            self.coef[i]
        }
    }
}

/// `(∫ (s·θ - |s|²/2), ∫ |s|²)` over `[t0, t1]`.
fn interval_moments(m: &CompleteMarketSpec, policy: &Policy, t0: f64, t1: f64) -> Result<(f64, f64)> {
    let mut cuts: Vec<f64> = m.breakpoints().into_iter().chain(policy.breakpoints()).filter(|&b| b > t0 && b < t1).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut lo = t0;
    let (mut drift, mut var) = (0.0, 0.0);
    for hi in cuts.into_iter().chain(std::iter::once(t1)) {
        let (a, s2) = local_coefficients(m, policy, lo)?;
        drift += (a - 0.5 * s2) * (hi - lo);
        var += s2 * (hi - lo);
        lo = hi;
    }
    Ok((drift, var))
}

/// Tracks `X = M^F(V)` on every grid point and the smallest drawdown margin
/// `X - w(X̄)`.
#[derive(Debug, Clone)]
pub struct DrawdownTracker {
    pub f: MonotoneMap,
    pub w: DrawdownSpec,
}

struct TrackState {
    m: f64,
    fm: f64,
    dfm: f64,
    xbar: f64,
    min_margin: f64,
}

impl DrawdownTracker {
    fn start(&self, v0: f64) -> TrackState {
        let (fm, dfm) = self.f.eval_with_deriv(v0);
        let mut st = TrackState {
            m: v0,
            fm,
            dfm,
            xbar: fm,
            min_margin: f64::INFINITY,
        };
        self.visit(&mut st, v0);
        st
    }

    #[inline]
    fn visit(&self, st: &mut TrackState, v: f64) {
        if v > st.m {
            st.m = v;
            let (fm, dfm) = self.f.eval_with_deriv(v);
            st.fm = fm;
            st.dfm = dfm;
        }
        let x = st.fm - st.dfm * (st.m - v);
        if x > st.xbar {
            st.xbar = x;
        }
        let margin = x - self.w.eval(st.xbar);
        if margin < st.min_margin {
            st.min_margin = margin;
        }
    }
}

/// Simulated wealth at the horizons.
#[derive(Debug, Clone)]
pub struct HorizonBatch {
    pub horizons: Vec<f64>,
    /// Completed paths.
    pub n_paths: usize,
    /// `V_T`, path-major.
    pub v: Vec<f64>,
    /// Running maximum on the grid at each horizon; empty unless tracked.
    pub vbar: Vec<f64>,
    /// Smallest drawdown margin per path; empty without a tracker.
    pub min_margin: Vec<f64>,
    /// Indices of paths stopped because wealth left `(0, ∞)` (Euler only).
    pub aborted: Vec<usize>,
}

impl HorizonBatch {
    pub fn wealth(&self) -> WealthSamples {
        WealthSamples {
            horizons: self.horizons.clone(),
            n_paths: self.n_paths,
            values: self.v.clone(),
        }
    }

    /// `X_T = F(V̄_T) - F'(V̄_T)(V̄_T - V_T)` for every path and horizon.
    pub fn transformed(&self, f: &MonotoneMap) -> Result<WealthSamples> {
        if self.vbar.len() != self.v.len() {
            return Err(Error::InvalidParameter(
                "running maximum was not tracked for this batch".into(),
            ));
        }
        let values = self
            .v
            .iter()
            .zip(&self.vbar)
            .map(|(&v, &m)| crate::azema_yor::ay_point(f, m, v))
            .collect();
        Ok(WealthSamples {
            horizons: self.horizons.clone(),
            n_paths: self.n_paths,
            values,
        })
    }
}

struct PathOutcome {
    v: Vec<f64>,
    vbar: Vec<f64>,
    margin: f64,
    aborted: bool,
}

/// Simulate wealth at the configured horizons. `track_max` forces stepping on
/// the `dt` grid; a tracker implies it.
pub fn simulate_horizons(
    m: &CompleteMarketSpec,
    policy: &Policy,
    cfg: &SimConfig,
    track_max: bool,
    tracker: Option<&DrawdownTracker>,
) -> Result<HorizonBatch> {
    cfg.validate()?;
    let grid = track_max || tracker.is_some() || cfg.scheme == Scheme::Euler;
    let h = cfg.horizons.len();
    let outcomes: Vec<PathOutcome> = if grid {
        let hsteps = cfg.horizon_steps();
        let table = StepTable::build(m, policy, cfg.dt, cfg.total_steps())?;
        let sqdt = cfg.dt.sqrt();
        let dt = cfg.dt;
        let euler = cfg.scheme == Scheme::Euler;
        (0..cfg.n_paths)
            .into_par_iter()
            .map(|j| {
                let mut z = NormalSource::new(cfg, j);
                let mut v = cfg.v0;
                let mut lnv = v.ln();
                let mut vbar = v;
                let mut st = tracker.map(|t| t.start(v));
                let mut out = PathOutcome {
                    v: Vec::with_capacity(h),
                    vbar: Vec::with_capacity(h),
                    margin: f64::INFINITY,
                    aborted: false,
                };
                let mut next = 0;
                for i in 0..hsteps[h - 1] {
                    let (a, s) = table.at(i);
                    let dz = z.next();
                    if euler {
                        v *= 1.0 + a * dt + s * sqdt * dz;
                        if !(v > 0.0) {
                            out.aborted = true;
                            return out;
                        }
                    } else {
                        lnv += (a - 0.5 * s * s) * dt + s * sqdt * dz;
                        v = lnv.exp();
                    }
                    if v > vbar {
                        vbar = v;
                    }
                    if let (Some(t), Some(st)) = (tracker, st.as_mut()) {
                        t.visit(st, v);
                    }
                    if i + 1 == hsteps[next] {
                        out.v.push(v);
                        out.vbar.push(vbar);
                        next += 1;
                    }
                }
                if let Some(st) = st {
                    out.margin = st.min_margin;
                }
                out
            })
            .collect()
    } else {
        let mut moments = Vec::with_capacity(h);
        let mut prev = 0.0;
        for &t in &cfg.horizons {
            moments.push(interval_moments(m, policy, prev, t)?);
            prev = t;
        }
        (0..cfg.n_paths)
            .into_par_iter()
            .map(|j| {
                let mut z = NormalSource::new(cfg, j);
                let mut lnv = cfg.v0.ln();
                let v = moments
                    .iter()
                    .map(|&(drift, var)| {
                        lnv += drift + var.sqrt() * z.next();
                        lnv.exp()
                    })
                    .collect();
                PathOutcome {
                    v,
                    vbar: Vec::new(),
                    margin: f64::INFINITY,
                    aborted: false,
                }
            })
            .collect()
    };
    let mut batch = HorizonBatch {
        horizons: cfg.horizons.clone(),
        n_paths: 0,
        v: Vec::with_capacity(cfg.n_paths * h),
        vbar: Vec::new(),
        min_margin: Vec::new(),
        aborted: Vec::new(),
    };
    for (j, o) in outcomes.into_iter().enumerate() {
        if o.aborted {
            batch.aborted.push(j);
            continue;
        }
        batch.n_paths += 1;
        batch.v.extend(o.v);
        if grid {
            batch.vbar.extend(o.vbar);
        }
        if tracker.is_some() {
            batch.min_margin.push(o.margin);
        }
    }
    if batch.n_paths < 2 {
        return Err(Error::Domain(format!(
            "only {} of {} paths stayed positive",
            batch.n_paths, cfg.n_paths
        )));
    }
    Ok(batch)
}

/// Full paths on the `dt` grid up to the last horizon. Paths that leave
/// `(0, ∞)` under the Euler scheme are dropped and their indices returned.
pub fn simulate_wealth(
    m: &CompleteMarketSpec,
    policy: &Policy,
    cfg: &SimConfig,
) -> Result<(Vec<SamplePath>, Vec<usize>)> {
    cfg.validate()?;
    let steps = cfg.total_steps();
    let table = StepTable::build(m, policy, cfg.dt, steps)?;
    let (dt, sqdt) = (cfg.dt, cfg.dt.sqrt());
    let euler = cfg.scheme == Scheme::Euler;
    let results: Vec<Option<Vec<f64>>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|j| {
            let mut z = NormalSource::new(cfg, j);
            let mut values = Vec::with_capacity(steps + 1);
            let mut v = cfg.v0;
            let mut lnv = v.ln();
            values.push(v);
            for i in 0..steps {
                let (a, s) = table.at(i);
                let dz = z.next();
                if euler {
                    v *= 1.0 + a * dt + s * sqdt * dz;
                    if !(v > 0.0) {
                        return None;
                    }
                } else {
                    lnv += (a - 0.5 * s * s) * dt + s * sqdt * dz;
                    v = lnv.exp();
                }
                values.push(v);
            }
            Some(values)
        })
        .collect();
    let mut paths = Vec::new();
    let mut aborted = Vec::new();
    for (j, r) in results.into_iter().enumerate() {
        match r {
            Some(values) => paths.push(SamplePath::uniform(dt, values)?),
            None => aborted.push(j),
        }
    }
    Ok((paths, aborted))
}

/// `ln Z_T` at the horizons for the state-price density
/// `Z = exp(-∫θ'dW - ½∫|θ|²)`, sampled exactly.
pub fn simulate_log_deflator(m: &CompleteMarketSpec, cfg: &SimConfig) -> Result<WealthSamples> {
    cfg.validate()?;
    let mut moments = Vec::new();
    let mut prev = 0.0;
    for &t in &cfg.horizons {
        let mut cuts: Vec<f64> = m.breakpoints().into_iter().filter(|&b| b > prev && b < t).collect();
        cuts.push(t);
        let mut lo = prev;
        let mut var = 0.0;
        for hi in cuts {
            var += market_price_of_risk(m, lo).norm_squared() * (hi - lo);
            lo = hi;
        }
        moments.push(var);
        prev = t;
    }
    let values: Vec<f64> = (0..cfg.n_paths)
        .into_par_iter()
        .flat_map_iter(|j| {
            let mut z = NormalSource::new(cfg, j);
            let mut lz = 0.0;
            moments
                .iter()
                .map(|&var| {
                    lz += -var.sqrt() * z.next() - 0.5 * var;
                    lz
                })
                .collect::<Vec<_>>()
        })
        .collect();
    WealthSamples::new(cfg.horizons.clone(), values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize, horizons: Vec<f64>) -> SimConfig {
        SimConfig {
            n_paths: n,
            dt: 0.01,
            horizons,
            seed: 11,
            scheme: Scheme::ExactLognormal,
            antithetic: false,
            v0: 1.0,
        }
    }

    #[test]
    fn config_validation() {
        assert!(cfg(1, vec![1.0]).validate().is_err());
        assert!(cfg(10, vec![1.005]).validate().is_err());
        assert!(cfg(10, vec![2.0, 1.0]).validate().is_err());
        assert!(cfg(10, vec![1.0, 2.0]).validate().is_ok());
    }

    #[test]
    fn zero_policy_keeps_wealth_constant() {
        let m = CompleteMarketSpec::from_theta(0.0, 0.3, 0.2).unwrap();
        let b = simulate_horizons(&m, &Policy::Zero, &cfg(20, vec![1.0, 2.0]), true, None).unwrap();
        assert!(b.v.iter().chain(&b.vbar).all(|&v| v == 1.0));
    }

    #[test]
    fn grid_and_coarse_exact_sampling_agree_in_law() {
        let m = CompleteMarketSpec::from_theta(0.0, 0.3, 0.2).unwrap();
        let c = cfg(4000, vec![1.0]);
        let coarse = simulate_horizons(&m, &Policy::Merton(0.5), &c, false, None).unwrap();
        let mean = coarse.v.iter().sum::<f64>() / 4000.0;
        // E[V_1] = exp(π σ θ) with π = 3
        let target = (3.0f64 * 0.2 * 0.3).exp();
        let sd = ((0.36f64).exp() - 1.0).sqrt() * target / 4000f64.sqrt();
        assert!((mean - target).abs() < 4.0 * sd, "{mean} vs {target}");
    }

    #[test]
    fn antithetic_pairs_mirror() {
        let m = CompleteMarketSpec::from_theta(0.0, 0.3, 0.2).unwrap();
        let mut c = cfg(4, vec![1.0]);
        c.antithetic = true;
        let b = simulate_horizons(&m, &Policy::Merton(0.5), &c, false, None).unwrap();
        // ln V = drift ± noise
        let drift = 2.0 * (3.0 * 0.2 * 0.3 - 0.5 * 0.36);
        assert!((b.v[0].ln() + b.v[1].ln() - drift).abs() < 1e-12);
    }

    #[test]
    fn worker_count_does_not_change_output() {
        let m = CompleteMarketSpec::from_theta(0.0, 0.3, 0.2).unwrap();
        let c = cfg(64, vec![0.5, 1.0]);
        let run = |w| {
            with_workers(w, || simulate_horizons(&m, &Policy::Merton(0.5), &c, true, None).unwrap().v)
                .unwrap()
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn deflator_log_mean() {
        let m = CompleteMarketSpec::from_theta(0.0, 0.3, 0.2).unwrap();
        let s = simulate_log_deflator(&m, &cfg(4000, vec![1.0, 2.0])).unwrap();
        let mean = (0..4000).map(|j| s.at(j, 1)).sum::<f64>() / 4000.0;
        // E ln Z_2 = -½ θ² 2
        assert!((mean + 0.09).abs() < 4.0 * (0.18f64 / 4000.0).sqrt());
    }
}

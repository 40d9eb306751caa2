//! Sampled paths and the Azéma–Yor transform
//! `M^F_t(X) = F(X̄_t) - F'(X̄_t)(X̄_t - X_t)`.

use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::drawdown::DrawdownSpec;
use crate::error::{Error, Result};
use crate::monotone::MonotoneMap;

/// Default strictness for paths integrated step by step.
pub const SDE_STRICTNESS_TOL: f64 = 1e-12;

/// A discretely sampled positive path with its running maximum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePath {
    times: Vec<f64>,
    values: Vec<f64>,
    runmax: Vec<f64>,
}

fn running_max(values: &[f64]) -> Vec<f64> {
    let mut m = f64::NEG_INFINITY;
    values
        .iter()
        .map(|&v| {
            m = m.max(v);
            m
        })
        .collect()
}

impl SamplePath {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::InvalidParameter(format!(
                "path needs matching non-empty grids ({} times, {} values)",
                times.len(),
                values.len()
            )));
        }
        if times[0] != 0.0 {
            return Err(Error::InvalidParameter(format!("path must start at t = 0, got {}", times[0])));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("times must be strictly increasing".into()));
        }
        if let Some(i) = values.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Domain(format!(
                "path value {} at t = {} is not positive",
                values[i], times[i]
            )));
        }
        let runmax = running_max(&values);
        Ok(Self {
            times,
            values,
            runmax,
        })
    }

    /// A path on the uniform grid `0, dt, 2dt, ...`.
    pub fn uniform(dt: f64, values: Vec<f64>) -> Result<Self> {
        let times = (0..values.len()).map(|i| i as f64 * dt).collect();
        Self::new(times, values)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn runmax(&self) -> &[f64] {
        &self.runmax
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn last(&self) -> f64 {
        *self.values.last().expect("paths are non-empty")
    }

    /// Keep every `step`-th sample (and always the first).
    pub fn subsample(&self, step: usize) -> Result<Self> {
        let step = step.max(1);
        let idx: Vec<usize> = (0..self.len()).step_by(step).collect();
        Self::new(
            idx.iter().map(|&i| self.times[i]).collect(),
            idx.iter().map(|&i| self.values[i]).collect(),
        )
    }

    /// Write `t,value,runmax` rows with a header.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,value,runmax")?;
        for i in 0..self.len() {
            writeln!(out, "{},{},{}", self.times[i], self.values[i], self.runmax[i])?;
        }
        Ok(())
    }

    /// Read the CSV layout of [`write_csv`](Self::write_csv). The runmax
    /// column is recomputed and must agree with the stored one.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if header.trim() != "t,value,runmax" {
            return Err(Error::Parse(format!("unexpected path header {header:?}")));
        }
        let (mut t, mut v, mut m) = (Vec::new(), Vec::new(), Vec::new());
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 {
                return Err(Error::Parse(format!("line {}: expected 3 columns", n + 2)));
            }
            let num = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", n + 2)))
            };
            t.push(num(cols[0])?);
            v.push(num(cols[1])?);
            m.push(num(cols[2])?);
        }
        let path = Self::new(t, v)?;
        if path.runmax != m {
            return Err(Error::Parse("runmax column is inconsistent with values".into()));
        }
        Ok(path)
    }
}

const BATCH_MAGIC: &[u8; 8] = b"DDLPATHS";
const BATCH_VERSION: u32 = 1;

/// Binary batch layout, all little-endian:
///
/// ```text
/// magic "DDLPATHS" | u32 version | u64 path count
/// per path: u64 length n | n × f64 times | n × f64 values
/// ```
pub fn write_batch<W: Write>(paths: &[SamplePath], mut out: W) -> Result<()> {
    out.write_all(BATCH_MAGIC)?;
    out.write_all(&BATCH_VERSION.to_le_bytes())?;
    out.write_all(&(paths.len() as u64).to_le_bytes())?;
    for p in paths {
        out.write_all(&(p.len() as u64).to_le_bytes())?;
        for x in p.times.iter().chain(&p.values) {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_batch<R: Read>(mut input: R) -> Result<Vec<SamplePath>> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != BATCH_MAGIC {
        return Err(Error::Parse("not a path batch".into()));
    }
    let mut b4 = [0u8; 4];
    input.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != BATCH_VERSION {
        return Err(Error::Parse(format!("unsupported batch version {version}")));
    }
    let mut b8 = [0u8; 8];
    input.read_exact(&mut b8)?;
    let count = u64::from_le_bytes(b8);
    let mut paths = Vec::new();
    for _ in 0..count {
        input.read_exact(&mut b8)?;
        let n = u64::from_le_bytes(b8) as usize;
        let mut read_vec = |n: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; 8 * n];
            input.read_exact(&mut buf)?;
            Ok(buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect())
        };
        let times = read_vec(n)?;
        let values = read_vec(n)?;
        paths.push(SamplePath::new(times, values)?);
    }
    Ok(paths)
}

/// `M^F` at a single state: `F(m) - F'(m)(m - x)`.
pub fn ay_point(f: &MonotoneMap, running_max: f64, x: f64) -> f64 {
    let (fm, dm) = f.eval_with_deriv(running_max);
    fm - dm * (running_max - x)
}

/// Running maxima this far (relatively) below the domain start are clamped to
/// it: `F(v0)` computed by a root solve can land an ulp under `v0`.
pub const DOMAIN_EDGE_REL_SLACK: f64 = 1e-12;

fn transform_with(map: &MonotoneMap, path: &SamplePath) -> Result<SamplePath> {
    let m0 = path.runmax[0];
    let lo = map.lo();
    let near_edge = m0 < lo && m0 >= lo - DOMAIN_EDGE_REL_SLACK * lo.abs().max(f64::MIN_POSITIVE);
    if !(map.contains(m0) || near_edge) || !map.contains(path.runmax.last().unwrap().max(lo)) {
        return Err(Error::Domain(format!(
            "running maximum range [{m0}, {}] leaves map domain [{}, {}]",
            path.runmax.last().unwrap(),
            map.lo(),
            map.hi()
        )));
    }
    let mut values = Vec::with_capacity(path.len());
    let mut cached = (f64::NAN, 0.0, 0.0);
    for (&x, &m) in path.values.iter().zip(&path.runmax) {
        // the running max is piecewise constant, so F and F' are reused
        if m != cached.0 {
            let (fm, dm) = map.eval_with_deriv(m.max(lo));
            cached = (m, fm, dm);
        }
        values.push(cached.1 - cached.2 * (m - x));
    }
    SamplePath::new(path.times.clone(), values)
}

/// `M^F(X)` at every grid point; the output running max is recomputed.
pub fn ay_transform(f: &MonotoneMap, path: &SamplePath) -> Result<SamplePath> {
    transform_with(f, path)
}

/// `M^K(Y)`; for `K = F^{-1}` this inverts [`ay_transform`].
pub fn ay_inverse(k: &MonotoneMap, path: &SamplePath) -> Result<SamplePath> {
    transform_with(k, path)
}

/// The affine map `ε v0 + (1 - ε) x` whose transform mixes a path with a floor.
pub fn floor_mix_map(eps: f64, v0: f64) -> Result<MonotoneMap> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::InvalidParameter(format!("floor weight must lie in [0, 1), got {eps}")));
    }
    MonotoneMap::affine(1.0 - eps, eps * v0, 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawdownReport {
    pub satisfied: bool,
    /// `min_i (values[i] - w(runmax[i]))`
    pub min_margin: f64,
    pub argmin_time: f64,
}

pub fn check_drawdown(path: &SamplePath, w: &DrawdownSpec, strictness_tol: f64) -> DrawdownReport {
    let mut min_margin = f64::INFINITY;
    let mut argmin_time = 0.0;
    for i in 0..path.len() {
        let margin = path.values[i] - w.eval(path.runmax[i]);
        if margin < min_margin {
            min_margin = margin;
            argmin_time = path.times[i];
        }
    }
    DrawdownReport {
        satisfied: min_margin > -strictness_tol,
        min_margin,
        argmin_time,
    }
}

/// One Euler step of `dX = (X - w(X̄)) dV/V`. The caller updates `X̄`.
pub fn sde_euler_step(x: f64, xbar: f64, w: &DrawdownSpec, dv_over_v: f64) -> Result<f64> {
    let floor = w.eval(xbar);
    if !(x > floor) {
        return Err(Error::ConstraintBreach { wealth: x, floor });
    }
    Ok(x + (x - floor) * dv_over_v)
}

/// Integrate the constrained SDE along the sampled path `v`, starting at
/// `X_0 = V_0`.
pub fn euler_integrate(v: &SamplePath, w: &DrawdownSpec) -> Result<SamplePath> {
    let vals = v.values();
    let mut out = Vec::with_capacity(vals.len());
    let mut x = vals[0];
    let mut xbar = x;
    out.push(x);
    for pair in vals.windows(2) {
        x = sde_euler_step(x, xbar, w, pair[1] / pair[0] - 1.0)?;
        xbar = xbar.max(x);
        out.push(x);
    }
    SamplePath::new(v.times().to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drawdown::TransformPair;

    fn sample() -> SamplePath {
        SamplePath::uniform(0.25, vec![1.0, 1.5, 4.0, 2.0, 3.0, 5.0, 4.5]).unwrap()
    }

    #[test]
    fn runmax_is_cached() {
        assert_eq!(sample().runmax(), &[1.0, 1.5, 4.0, 4.0, 4.0, 5.0, 5.0]);
        assert!(SamplePath::uniform(0.1, vec![1.0, 0.0]).is_err());
        assert!(SamplePath::new(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn linear_example_point() {
        let p = TransformPair::new(&DrawdownSpec::linear(0.5).unwrap(), 1.0).unwrap();
        // V̄ = 4, V = 2
        assert!((ay_point(&p.f, 4.0, 2.0) - 1.5).abs() < 1e-14);
        assert!((ay_point(&p.f, 4.0, 4.0) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn constant_drawdown_is_affine_and_invertible() {
        let p = TransformPair::new(&DrawdownSpec::constant(0.5).unwrap(), 1.0).unwrap();
        let v = sample();
        let x = ay_transform(&p.f, &v).unwrap();
        for (a, b) in x.values().iter().zip(v.values()) {
            assert!((a - (0.5 + 0.5 * b)).abs() < 1e-14);
        }
        let back = ay_inverse(&p.k, &x).unwrap();
        for (a, b) in back.values().iter().zip(v.values()) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn drawdown_reports() {
        let w = DrawdownSpec::linear(0.5).unwrap();
        let flat = SamplePath::uniform(0.1, vec![2.0; 5]).unwrap();
        let r = check_drawdown(&flat, &w, 0.0);
        assert!(r.satisfied && (r.min_margin - 1.0).abs() < 1e-15);
        let dip = SamplePath::uniform(0.1, vec![1.0, 2.0, 0.8, 1.9]).unwrap();
        let r = check_drawdown(&dip, &w, 0.0);
        assert!(!r.satisfied);
        assert!((r.argmin_time - 0.2).abs() < 1e-15);
    }

    #[test]
    fn euler_step_examples() {
        let w = DrawdownSpec::linear(0.5).unwrap();
        assert!((sde_euler_step(3.0, 4.0, &w, 0.01).unwrap() - 3.01).abs() < 1e-15);
        assert!(matches!(
            sde_euler_step(1.5, 4.0, &w, 0.01),
            Err(Error::ConstraintBreach { .. })
        ));
    }

    #[test]
    fn csv_and_batch_round_trip() {
        let p = sample();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        assert_eq!(SamplePath::read_csv(&buf[..]).unwrap(), p);
        let mut bin = Vec::new();
        write_batch(&[p.clone(), p.subsample(2).unwrap()], &mut bin).unwrap();
        let back = read_batch(&bin[..]).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0], p);
        assert_eq!(back[1].values(), &[1.0, 4.0, 3.0, 4.5]);
        assert!(read_batch(&b"garbage!"[..]).is_err());
    }
}

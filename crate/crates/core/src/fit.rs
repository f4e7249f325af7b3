//! Least-squares helpers: straight lines, geometric decay, power-law rates.

use crate::error::{Error, Result};
use crate::rng::substream;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    let n = x.len().min(y.len());
    if n < 2 {
        return Err(Error::FitPoints(n));
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let dx = x[i] - mx;
        let dy = y[i] - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::FitPoints(1));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(LinearFit { slope, intercept, r2 })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometricFit {
    /// fitted δ in v_n ≈ C δ^n
    pub rate: f64,
    pub prefactor: f64,
    pub r2: f64,
}

/// Fits `v_n ≈ C δ^n` on the log scale. Non-positive values are skipped.
pub fn geometric_fit(ns: &[f64], values: &[f64]) -> Result<GeometricFit> {
    let (x, y): (Vec<f64>, Vec<f64>) = ns
        .iter()
        .zip(values)
        .filter(|(_, v)| **v > 0.0 && v.is_finite())
        .map(|(n, v)| (*n, v.ln()))
        .unzip();
    let f = linear_fit(&x, &y)?;
    Ok(GeometricFit { rate: f.slope.exp(), prefactor: f.intercept.exp(), r2: f.r2 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub ci95: (f64, f64),
    pub points: usize,
}

/// Power-law fit of `distance ≈ c σ^slope` with a residual-bootstrap interval.
pub fn rate_fit(points: &[(f64, f64)], resamples: usize, seed: u64) -> Result<RateFit> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(s, d)| *s > 0.0 && *d > 0.0 && d.is_finite())
        .map(|(s, d)| (s.ln(), d.ln()))
        .collect();
    if pts.len() < 5 {
        return Err(Error::FitPoints(pts.len()));
    }
    let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let base = linear_fit(&x, &y)?;
    let resid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| b - base.intercept - base.slope * a).collect();
    let mut rng = substream(seed, "rate_fit", 0);
    let mut slopes = Vec::with_capacity(resamples);
    let mut yb = vec![0.0; y.len()];
    for _ in 0..resamples {
        for (i, v) in yb.iter_mut().enumerate() {
            *v = base.intercept + base.slope * x[i] + resid[rng.random_range(0..resid.len())];
        }
        if let Ok(f) = linear_fit(&x, &yb) {
            slopes.push(f.slope);
        }
    }
    slopes.sort_by(|a, b| a.total_cmp(b));
    let ci95 = if slopes.is_empty() {
        (base.slope, base.slope)
    } else {
        let q = |p: f64| slopes[((p * (slopes.len() - 1) as f64).round()) as usize];
        (q(0.025), q(0.975))
    };
    Ok(RateFit { slope: base.slope, intercept: base.intercept, r2: base.r2, ci95, points: pts.len() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_laws() {
        let pts: Vec<(f64, f64)> = (4..13).map(|k| {
            let s = (2f64.powi(k) / 2.0).sqrt();
            (s, 3.0 / s)
        }).collect();
        let f = rate_fit(&pts, 1000, 1).unwrap();
        assert!((f.slope + 1.0).abs() < 1e-6);
        let pts2: Vec<(f64, f64)> = pts.iter().map(|(s, _)| (*s, 1.0 / (s * s))).collect();
        assert!((rate_fit(&pts2, 100, 1).unwrap().slope + 2.0).abs() < 1e-9);
    }

    #[test]
    fn geometric_halving() {
        let ns: Vec<f64> = (0..20).map(|n| n as f64).collect();
        let v: Vec<f64> = ns.iter().map(|n| 5.0 * 0.5f64.powf(*n)).collect();
        let g = geometric_fit(&ns, &v).unwrap();
        assert!((g.rate - 0.5).abs() < 1e-12 && (g.prefactor - 5.0).abs() < 1e-9);
    }

    #[test]
    fn too_few_points() {
        assert!(rate_fit(&[(1.0, 1.0), (2.0, 0.5)], 10, 0).is_err());
    }
}

//! Distances between the law of S̄_n/σ_n and the standard normal, from Monte
//! Carlo samples, and power-law rate fits against σ_n.

use crate::error::{Error, Result};
use crate::fit::{rate_fit, RateFit};
use crate::gibbs::{GibbsSystem, SinaiReduction, TwoSidedObservable};
use crate::martingale::exact_variance;
use crate::model::Model;
use crate::montecarlo::{simulate, Samples};
use crate::rng::substream;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use libm::erfc;
use statrs::function::erf::erfc_inv;
use std::f64::consts::{PI, SQRT_2};
use std::sync::OnceLock;

pub fn normal_cdf(t: f64) -> f64 {
    0.5 * erfc(-t / SQRT_2)
}

pub fn normal_pdf(t: f64) -> f64 {
    (-0.5 * t * t).exp() / (2.0 * PI).sqrt()
}

/// Φ^{-1}(u): inverse-erfc starting value refined by one Newton step against `normal_cdf`.
pub fn normal_quantile(u: f64) -> f64 {
    if u <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if u >= 1.0 {
        return f64::INFINITY;
    }
    let x = -SQRT_2 * erfc_inv(2.0 * u);
    let d = normal_pdf(x);
    if d > 1e-300 {
        // work with the smaller tail to keep the residual accurate
        let r = if x > 0.0 { (1.0 - u) - normal_cdf(-x) } else { normal_cdf(x) - u };
        x - r / d
    } else {
        x
    }
}

/// Gauss–Legendre nodes and weights on [−1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p0 = 1.0;
                p1 = x;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        xs[i] = x;
        ws[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (xs, ws)
}

fn gl16() -> &'static (Vec<f64>, Vec<f64>) {
    static G: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    G.get_or_init(|| gauss_legendre(16))
}

fn gl8() -> &'static (Vec<f64>, Vec<f64>) {
    static G: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    G.get_or_init(|| gauss_legendre(8))
}

fn integrate(rule: &(Vec<f64>, Vec<f64>), a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let (c, h) = ((a + b) / 2.0, (b - a) / 2.0);
    rule.0.iter().zip(&rule.1).map(|(x, w)| w * f(c + h * x)).sum::<f64>() * h
}

/// ∫ f over [a, b] on unit-width panels with 16 nodes each.
fn integrate_panels(a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let panels = ((b - a).ceil() as usize).max(1);
    let h = (b - a) / panels as f64;
    (0..panels).map(|k| integrate(gl16(), a + k as f64 * h, a + (k + 1) as f64 * h, &f)).sum()
}

/// `integrate_panels` split at an interior kink.
fn kinked(a: f64, b: f64, kink: f64, f: impl Fn(f64) -> f64) -> f64 {
    if kink > a && kink < b {
        integrate_panels(a, kink, &f) + integrate_panels(kink, b, &f)
    } else {
        integrate_panels(a, b, f)
    }
}

fn golden_max(a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (a, b);
    let mut best = f(a).max(f(b));
    for _ in 0..80 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        let (fc, fd) = (f(c), f(d));
        best = best.max(fc).max(fd);
        if fc > fd {
            b = d;
        } else {
            a = c;
        }
        if b - a < 1e-12 {
            break;
        }
    }
    best
}

/// Dense scan of [a, b] followed by golden refinement around the best point.
fn scan_max(a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    if b <= a {
        return f(a);
    }
    let k = 4000;
    let h = (b - a) / k as f64;
    let (mut best, mut at) = (f64::NEG_INFINITY, 0usize);
    for i in 0..=k {
        let v = f(a + i as f64 * h);
        if v > best {
            best = v;
            at = i;
        }
    }
    let lo = a + (at.saturating_sub(1)) as f64 * h;
    let hi = (a + (at + 1) as f64 * h).min(b);
    best.max(golden_max(lo, hi, f))
}

/// Reference measure used to start the orbits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum InitDescriptor {
    Reference,
    Density(String),
}

/// Sorted draws of S̄_n/σ_n.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub n: usize,
    pub sigma: f64,
    pub seed: u64,
    pub init: InitDescriptor,
    pub values: Vec<f64>,
}

impl SampleSet {
    pub fn new(n: usize, sums: &[f64], sigma: f64, seed: u64, init: InitDescriptor) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::SigmaBounded { max_var: sigma * sigma });
        }
        let mut values: Vec<f64> = sums.iter().map(|s| s / sigma).collect();
        values.sort_by(|a, b| a.total_cmp(b));
        Ok(SampleSet { n, sigma, seed, init, values })
    }

    /// Already-standardized values.
    pub fn from_values(mut values: Vec<f64>) -> Self {
        values.sort_by(|a, b| a.total_cmp(b));
        SampleSet { n: 0, sigma: 1.0, seed: 0, init: InitDescriptor::Reference, values }
    }

    pub fn count(&self) -> usize {
        self.values.len()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// DKW 95% half-width 1.36/√N.
    pub fn mc_error(&self) -> f64 {
        1.36 / (self.values.len() as f64).sqrt()
    }
}

/// One sample set per n with σ_n from the exact operator variance.
pub fn sample_sets(model: &dyn Model, samples: &Samples, seed: u64, init: InitDescriptor) -> Result<Vec<SampleSet>> {
    samples
        .n_list
        .iter()
        .zip(&samples.sums)
        .map(|(&n, s)| {
            let v = exact_variance(model, 0, n)?;
            SampleSet::new(n, s, v.sqrt(), seed, init.clone())
        })
        .collect()
}

pub fn kolmogorov(s: &SampleSet) -> f64 {
    weighted_distance(s, 0.0)
}

/// sup_t (1+|t|^p)|F̂(t) − Φ(t)|, including the Gaussian tails beyond the sample range.
pub fn weighted_distance(s: &SampleSet, p: f64) -> f64 {
    let x = &s.values;
    let n = x.len();
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    let w = |t: f64| if p == 0.0 { 1.0 } else { 1.0 + t.abs().powf(p) };
    let mut best = 0.0f64;
    for (i, &xi) in x.iter().enumerate() {
        let phi = normal_cdf(xi);
        let lo = (i as f64 / nf - phi).abs();
        let hi = ((i + 1) as f64 / nf - phi).abs();
        best = best.max(w(xi) * lo.max(hi));
    }
    if p > 0.0 {
        for i in 0..n - 1 {
            let (a, b) = (x[i], x[i + 1]);
            if b - a > 1e-3 {
                let c = (i + 1) as f64 / nf;
                best = best.max(golden_max(a, b, |t| w(t) * (c - normal_cdf(t)).abs()));
            }
        }
        let left = scan_max(x[0].min(0.0) - 40.0, x[0], |t| w(t) * normal_cdf(t));
        let right = scan_max(x[n - 1], x[n - 1].max(0.0) + 40.0, |t| w(t) * normal_cdf(-t));
        best = best.max(left).max(right);
    }
    best
}

/// ∥F̂ − Φ∥_{L^p(dx)}, panel by panel between order statistics.
pub fn lp_distance(s: &SampleSet, p: f64) -> f64 {
    let x = &s.values;
    let n = x.len();
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    let piece = |a: f64, b: f64, c: f64| -> f64 {
        // split at Φ(t) = c so each part is smooth
        let f = |t: f64| (c - normal_cdf(t)).abs().powf(p);
        let rule = if b - a > 1e-2 { gl16() } else { gl8() };
        let q = if c > 0.0 && c < 1.0 { normal_quantile(c) } else { f64::NAN };
        if q > a && q < b {
            integrate(rule, a, q, f) + integrate(rule, q, b, f)
        } else {
            integrate(rule, a, b, f)
        }
    };
    let interior: f64 = (0..n - 1).into_par_iter().map(|i| piece(x[i], x[i + 1], (i + 1) as f64 / nf)).sum();
    let left = integrate_panels(x[0].min(0.0) - 40.0, x[0], |t| normal_cdf(t).powf(p));
    let right = integrate_panels(x[n - 1], x[n - 1].max(0.0) + 40.0, |t| normal_cdf(-t).powf(p));
    (interior + left + right).powf(1.0 / p)
}

/// W_p by quantile coupling, 16 Gauss nodes per order-statistic cell; the two
/// end cells are integrated in t-space against the normal density.
pub fn wasserstein(s: &SampleSet, ps: &[f64]) -> Vec<f64> {
    let x = &s.values;
    let n = x.len();
    if n == 0 {
        return vec![0.0; ps.len()];
    }
    let nf = n as f64;
    let (nodes, weights) = gl16();
    let cell = |i: usize| -> Vec<f64> {
        let mut acc = vec![0.0; ps.len()];
        if n > 1 && (i == 0 || i == n - 1) {
            let (a, b) = if i == 0 { (-40.0, normal_quantile(1.0 / nf)) } else { (normal_quantile(1.0 - 1.0 / nf), 40.0) };
            for (k, &p) in ps.iter().enumerate() {
                acc[k] = kinked(a, b, x[i], |t| (x[i] - t).abs().powf(p) * normal_pdf(t));
            }
            return acc;
        }
        if n == 1 {
            for (k, &p) in ps.iter().enumerate() {
                acc[k] = kinked(-40.0, 40.0, x[0], |t| (x[0] - t).abs().powf(p) * normal_pdf(t));
            }
            return acc;
        }
        // |x_i − Φ^{-1}(u)| has a kink at u = Φ(x_i)
        let (a, b) = (i as f64 / nf, (i + 1) as f64 / nf);
        let k0 = normal_cdf(x[i]);
        let parts = if k0 > a && k0 < b { [(a, k0), (k0, b)] } else { [(a, b), (b, b)] };
        for (a, b) in parts {
            let (c, h) = ((a + b) / 2.0, (b - a) / 2.0);
            if h <= 0.0 {
                continue;
            }
            for (u, w) in nodes.iter().zip(weights) {
                let q = normal_quantile(c + h * u);
                let d = (x[i] - q).abs();
                for (k, &p) in ps.iter().enumerate() {
                    acc[k] += w * h * d.powf(p);
                }
            }
        }
        acc
    };
    let tot = (0..n).into_par_iter().map(cell).reduce(|| vec![0.0; ps.len()], |a, b| a.iter().zip(&b).map(|(x, y)| x + y).collect());
    tot.iter().zip(ps).map(|(v, p)| v.powf(1.0 / p)).collect()
}

/// Absolutely continuous test function given by h, h′ and the kinks of h′.
pub struct TestFunction {
    pub h: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    pub dh: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    pub breaks: Vec<f64>,
}

impl TestFunction {
    pub fn identity() -> Self {
        TestFunction { h: Box::new(|x| x), dh: Box::new(|_| 1.0), breaks: vec![] }
    }

    pub fn constant(c: f64) -> Self {
        TestFunction { h: Box::new(move |_| c), dh: Box::new(|_| 0.0), breaks: vec![] }
    }

    /// min(x³, cap)
    pub fn capped_cube(cap: f64) -> Self {
        let b = cap.cbrt();
        TestFunction { h: Box::new(move |x| (x * x * x).min(cap)), dh: Box::new(move |x| if x < b { 3.0 * x * x } else { 0.0 }), breaks: vec![b] }
    }
}

fn split_integral(a: f64, b: f64, breaks: &[f64], f: &dyn Fn(f64) -> f64) -> f64 {
    let mut pts = vec![a];
    pts.extend(breaks.iter().filter(|x| **x > a && **x < b));
    pts.push(b);
    pts.windows(2).map(|w| integrate_panels(w[0], w[1], f)).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpectationGap {
    pub gap: f64,
    pub h_s: f64,
}

/// |Ê h − ∫ h dΦ| with H_s(h) = ∫ |h′|/(1+|x|^s) dx.
pub fn gaussian_expectation_gap(s: &SampleSet, h: &TestFunction, s_exp: f64) -> Result<ExpectationGap> {
    let hs = |r: f64| split_integral(-r, r, &h.breaks, &|x| (h.dh)(x).abs() / (1.0 + x.abs().powf(s_exp)));
    // increments over [40, 400] and [400, 4000] shrink for a convergent integral
    let (h1, h2, h3) = (hs(40.0), hs(400.0), hs(4000.0));
    if !h3.is_finite() || (h3 - h2) > 0.5 * (h2 - h1) + 1e-12 * (1.0 + h3) {
        return Err(Error::RejectedTestFunction("divergent H_s".into()));
    }
    let gauss = split_integral(-40.0, 40.0, &h.breaks, &|x| (h.h)(x) * normal_pdf(x));
    let emp = s.values.iter().map(|x| (h.h)(*x)).sum::<f64>() / s.count() as f64;
    Ok(ExpectationGap { gap: (emp - gauss).abs(), h_s: h3 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub n: usize,
    pub sigma: f64,
    pub kolmogorov: f64,
    /// (p, Δ_{p,n})
    pub weighted: Vec<(f64, f64)>,
    pub l1: f64,
    pub l2: f64,
    pub w1: f64,
    pub w2: f64,
    pub mc_error: f64,
}

impl DistanceReport {
    pub const CSV_HEADER: &'static str = "n,sigma_n,kolm,d_p1,d_p3,l1,l2,w1,w2,mc_err";

    pub fn weighted_at(&self, p: f64) -> Option<f64> {
        self.weighted.iter().find(|w| w.0 == p).map(|w| w.1)
    }

    pub fn csv_row(&self) -> String {
        let d = |p| self.weighted_at(p).map_or(String::from("nan"), |v| format!("{v:e}"));
        format!(
            "{},{:e},{:e},{},{},{:e},{:e},{:e},{:e},{:e}",
            self.n,
            self.sigma,
            self.kolmogorov,
            d(1.0),
            d(3.0),
            self.l1,
            self.l2,
            self.w1,
            self.w2,
            self.mc_error
        )
    }
}

pub fn distances(s: &SampleSet, weighted_ps: &[f64]) -> DistanceReport {
    let w = wasserstein(s, &[1.0, 2.0]);
    DistanceReport {
        n: s.n,
        sigma: s.sigma,
        kolmogorov: kolmogorov(s),
        weighted: weighted_ps.iter().map(|&p| (p, weighted_distance(s, p))).collect(),
        l1: lp_distance(s, 1.0),
        l2: lp_distance(s, 2.0),
        w1: w[0],
        w2: w[1],
        mc_error: s.mc_error(),
    }
}

/// Rate fits of every distance family against σ_n.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltReport {
    pub rows: Vec<DistanceReport>,
    pub kolmogorov: RateFit,
    pub weighted3: RateFit,
    pub l1: RateFit,
    pub l2: RateFit,
    pub w1: RateFit,
    pub w2: RateFit,
}

/// Bootstrap resamples used by every rate fit.
pub const RATE_RESAMPLES: usize = 1000;

pub fn clt_report(rows: Vec<DistanceReport>, seed: u64) -> Result<CltReport> {
    let fit = |g: &dyn Fn(&DistanceReport) -> f64| -> Result<RateFit> {
        let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.sigma, g(r))).collect();
        rate_fit(&pts, RATE_RESAMPLES, seed)
    };
    Ok(CltReport {
        kolmogorov: fit(&|r| r.kolmogorov)?,
        weighted3: fit(&|r| r.weighted_at(3.0).unwrap_or(f64::NAN))?,
        l1: fit(&|r| r.l1)?,
        l2: fit(&|r| r.l2)?,
        w1: fit(&|r| r.w1)?,
        w2: fit(&|r| r.w2)?,
        rows,
    })
}

/// Simulates the model once for all n and reports every distance family.
pub fn clt_run(model: &dyn Model, n_list: &[usize], count: usize, seed: u64, init: InitDescriptor) -> Result<CltReport> {
    let samples = simulate(model, n_list, count, seed, "clt")?;
    let sets = sample_sets(model, &samples, seed, init)?;
    drop(samples);
    let rows: Vec<DistanceReport> = sets.iter().map(|s| distances(s, &[1.0, 3.0])).collect();
    clt_report(rows, seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoSidedGap {
    pub a_hat: f64,
    pub bound: f64,
    pub paths: usize,
}

/// max over sampled paths and n ≤ n_max of |S_nψ − S_nφ| against 2 sup|u|.
/// The Gibbs window of `sys` must cover [−m, n_max + 2m].
pub fn two_sided_gap(sys: &GibbsSystem, obs: &TwoSidedObservable, red: &SinaiReduction, n_max: usize, paths: usize, seed: u64) -> Result<TwoSidedGap> {
    let m = obs.m;
    if red.window.0 != 0 || red.window.1 < n_max as i64 - 1 {
        return Err(Error::InvalidInput("reduction window must be [0, n_max)".into()));
    }
    let gaps: Vec<Result<f64>> = (0..paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = substream(seed, "two_sided", p as u64);
            let mut path = vec![0usize; n_max + 3 * m + 1];
            sys.sample_path_into(-(m as i64), &mut rng, &mut path)?;
            let (mut sp, mut sf, mut gap) = (0.0, 0.0, 0.0f64);
            for j in 0..n_max {
                // path[k] is the symbol at time k − m
                sp += obs.psi(&sys.seq, j as i64, &path[j..j + 2 * m + 1])?;
                sf += red.phi_on_path(j as i64, &path, j + m);
                gap = gap.max((sp - sf).abs());
            }
            Ok(gap)
        })
        .collect();
    let mut a_hat = 0.0f64;
    for g in gaps {
        a_hat = a_hat.max(g?);
    }
    Ok(TwoSidedGap { a_hat, bound: 2.0 * red.sup_u, paths })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Box–Muller control draws.
    fn standard_normals(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n)
            .map(|_| {
                let u: f64 = 1.0 - rng.random::<f64>();
                let v: f64 = rng.random();
                (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
            })
            .collect()
    }

    // Φ(t) to 20 digits
    const TABLE: [(f64, f64); 7] = [
        (-8.0, 6.2209605742717841235e-16),
        (-5.0, 2.8665157187919391167e-7),
        (-2.0, 0.022750131948179207200),
        (-0.5, 0.30853753872598689637),
        (0.0, 0.5),
        (1.0, 0.84134474606854294859),
        (3.0, 0.99865010196836990547),
    ];

    #[test]
    fn normal_functions() {
        for (t, v) in TABLE {
            assert!((normal_cdf(t) - v).abs() < 1e-14 && (normal_cdf(t) - v).abs() <= 1e-12 * v.max(1e-3), "{t} {:e}", normal_cdf(t) - v);
        }
        for u in [1e-10, 1e-4, 0.01, 0.3, 0.5, 0.77, 0.999, 1.0 - 1e-9] {
            let q = normal_quantile(u);
            assert!((normal_cdf(q) - u).abs() < 1e-12 * u.min(1.0 - u).max(1e-3), "{u}");
        }
        // CDF shift bound
        for i in 0..=800 {
            let x = -8.0 + i as f64 * 0.02;
            for e in [1e-3, 0.1, 1.0] {
                assert!(normal_cdf(x + e) - normal_cdf(x) <= e / (2.0 * PI).sqrt() + 1e-16);
            }
        }
    }

    #[test]
    fn point_mass_and_shift() {
        let s = SampleSet::from_values(vec![0.0; 100]);
        assert!((kolmogorov(&s) - 0.5).abs() < 1e-15);
        assert!((weighted_distance(&s, 2.0) - 0.5).abs() < 1e-12);
        // ∫ Φ² over (−∞,0) + ∫ (1−Φ)² over (0,∞) = 2∫_0^∞ Φ(−t)² dt = (√2 − 1)/√π
        let l2 = lp_distance(&s, 2.0);
        let oracle = integrate_panels(0.0, 40.0, |t| 2.0 * normal_cdf(-t).powi(2));
        assert!((l2 * l2 - oracle).abs() < 1e-12, "{l2} {oracle}");
        assert!((l2 * l2 - (2f64.sqrt() - 1.0) / PI.sqrt()).abs() < 1e-12);
        // Φ(·−0.1) sampled at its quantiles
        let n = 200_000;
        let c = 0.1;
        let v: Vec<f64> = (0..n).map(|i| normal_quantile((i as f64 + 0.5) / n as f64) + c).collect();
        let s = SampleSet::from_values(v);
        assert!((kolmogorov(&s) - (2.0 * normal_cdf(0.05) - 1.0)).abs() < 1e-4);
        assert!((lp_distance(&s, 1.0) - c).abs() < 1e-4);
        let w = wasserstein(&s, &[1.0, 2.0]);
        assert!((w[0] - c).abs() < 1e-3 && (w[1] - c).abs() < 1e-3, "{w:?}");
        // N(0, 1.2²) by quantiles: W_2 = 0.2
        let v: Vec<f64> = (0..n).map(|i| 1.2 * normal_quantile((i as f64 + 0.5) / n as f64)).collect();
        let w = wasserstein(&SampleSet::from_values(v), &[2.0]);
        assert!((w[0] - 0.2).abs() < 2e-3, "{w:?}");
    }

    #[test]
    fn control_samples() {
        let mut rng = substream(3, "control", 0);
        let s = SampleSet::from_values(standard_normals(&mut rng, 1_000_000));
        let k = kolmogorov(&s);
        assert!(k < 0.0014);
        let d3 = weighted_distance(&s, 3.0);
        assert!(d3 >= k && d3 < 0.0014 * 28.0);
        assert!(wasserstein(&s, &[1.0])[0] < 0.003);
        let g = gaussian_expectation_gap(&s, &TestFunction::identity(), 2.0).unwrap();
        assert!((g.gap - s.mean().abs()).abs() < 1e-12);
        assert!(gaussian_expectation_gap(&s, &TestFunction::identity(), 0.0).is_err());
        let c = gaussian_expectation_gap(&s, &TestFunction::constant(2.0), 2.0).unwrap();
        assert!(c.gap < 1e-12 && c.h_s == 0.0);
        let cube = gaussian_expectation_gap(&s, &TestFunction::capped_cube(8.0), 4.0).unwrap();
        assert!(cube.h_s.is_finite() && cube.gap < 0.05);
    }

    #[test]
    fn gauss_legendre_exactness() {
        let (x, w) = gauss_legendre(16);
        let i: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(30)).sum();
        assert!((i - 2.0 / 31.0).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }
}

//! Twisted operators L̃_{j,z} = L̃_j ∘ e^{z f_j}: perturbed triplets, window
//! log-moment generating functions, Π windows, derivative estimates, and the
//! rank-one splitting A = P + E of the untwisted raw operators.

use crate::error::{Error, Result};
use crate::fit::{geometric_fit, linear_fit, GeometricFit};
use crate::funcspace::{bv_of, Basis};
use crate::gibbs::GibbsSystem;
use crate::martingale::exact_variance;
use crate::model::Model;
use crate::transfer::{sample_bv, sft_raw};
use crate::C64;
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

fn cdot(a: &[C64], w: &[f64]) -> C64 {
    a.iter().zip(w).map(|(x, y)| x * y).sum()
}

fn cdot2(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn ones(n: usize) -> Vec<C64> {
    vec![C64::new(1.0, 0.0); n]
}

fn bv_c(model: &dyn Model, j: i64, v: &[C64]) -> Result<f64> {
    let b = model.ops().basis(j)?;
    let w = model.ops().weights(j)?;
    Ok(bv_of(&b, v, &w))
}

fn l1_masked(b: &Basis, v: &[C64]) -> f64 {
    match b {
        Basis::Words { allowed, .. } => v.iter().zip(allowed.iter()).filter(|(_, a)| **a).map(|(x, _)| x.norm()).sum(),
        Basis::Grid(_) => v.iter().map(|x| x.norm()).sum(),
    }
}

/// (λ_j(z), h_j^{(z)}, ν_j^{(z)}) for j in the window; densities and duals
/// also hold j_max + 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwistedTriplet {
    pub z: C64,
    pub window: (i64, i64),
    pub lambdas: Vec<C64>,
    pub densities: Vec<Vec<C64>>,
    pub duals: Vec<Vec<C64>>,
    pub burn_in: usize,
    /// max_j ∥ν_{j+1} L̃_{j,z} − λ_j(z) ν_j∥_1 / ∥ν_j∥_1, the forward λ tested
    /// against the independently computed backward duals
    pub residual: f64,
    pub min_abs_lambda: f64,
}

impl TwistedTriplet {
    fn k(&self, j: i64) -> Result<usize> {
        if j < self.window.0 || j > self.window.1 + 1 {
            return Err(Error::InvalidInput(format!("time {j} outside twisted window {:?}", self.window)));
        }
        Ok((j - self.window.0) as usize)
    }

    pub fn lambda(&self, j: i64) -> Result<C64> {
        let k = self.k(j)?;
        self.lambdas.get(k).copied().ok_or_else(|| Error::InvalidInput(format!("no λ at time {j}")))
    }

    pub fn h(&self, j: i64) -> Result<&[C64]> {
        Ok(&self.densities[self.k(j)?])
    }

    pub fn nu(&self, j: i64) -> Result<&[C64]> {
        Ok(&self.duals[self.k(j)?])
    }
}

/// Residual threshold for a certified triplet.
pub const TRIPLET_TOL: f64 = 1e-8;

fn forward_sweep(model: &dyn Model, z: C64, window: (i64, i64), burn_in: usize, keep: bool) -> Result<(Vec<C64>, Vec<Vec<C64>>)> {
    let ops = model.ops();
    let (j_min, j_max) = window;
    let start = (j_min - burn_in as i64).max(0);
    let top = j_max + 1;
    let mut h = ones(ops.basis(start)?.len());
    let mut lambdas = Vec::new();
    let mut dens = Vec::new();
    for t in start..=top {
        if t >= j_min && keep {
            dens.push(h.clone());
        }
        if t == top {
            break;
        }
        let g = model.twisted(t, z)?.apply(&h);
        let lam = cdot(&g, &ops.weights(t + 1)?);
        if !(lam.norm() > 1e-300) {
            return Err(Error::Underflow);
        }
        h = g.iter().map(|x| x / lam).collect();
        if t >= j_min {
            lambdas.push(lam);
        }
    }
    Ok((lambdas, dens))
}

/// λ_j(z) only, for j in the window.
pub fn twisted_lambdas(model: &dyn Model, z: C64, window: (i64, i64), burn_in: usize) -> Result<Vec<C64>> {
    Ok(forward_sweep(model, z, window, burn_in, false)?.0)
}

pub fn twisted_triplet(model: &dyn Model, z: C64, window: (i64, i64), burn_in: usize) -> Result<TwistedTriplet> {
    let (j_min, j_max) = window;
    if j_max < j_min || burn_in == 0 {
        return Err(Error::InvalidInput("empty window or zero burn-in".into()));
    }
    let ops = model.ops();
    let (lambdas, densities) = forward_sweep(model, z, window, burn_in, true)?;
    let top = j_max + 1;
    // backward duals from top + burn_in, started at the reference weights;
    // duals_rev[i] is the dual at time top − i
    let mut nu: Vec<C64> = ops.weights(top + burn_in as i64)?.iter().map(|&w| C64::new(w, 0.0)).collect();
    let mut duals_rev: Vec<Vec<C64>> = Vec::new();
    let mut t = top + burn_in as i64;
    loop {
        if t <= top {
            duals_rev.push(nu.clone());
        }
        if t == j_min {
            break;
        }
        t -= 1;
        let v = model.twisted(t, z)?.apply_transpose(&nu);
        let s: C64 = v.iter().sum();
        if !(s.norm() > 1e-300) {
            return Err(Error::Underflow);
        }
        nu = v.iter().map(|x| x / s).collect();
    }
    let mut duals: Vec<Vec<C64>> = Vec::new();
    for (i, j) in (j_min..=top).enumerate() {
        let mut v = duals_rev[(top - j) as usize].clone();
        let c = cdot2(&v, &densities[i]);
        if !(c.norm() > 1e-300) {
            return Err(Error::Underflow);
        }
        v.iter_mut().for_each(|x| *x /= c);
        duals.push(v);
    }
    let mut residual = 0.0f64;
    for (i, j) in (j_min..top).enumerate() {
        let lhs = model.twisted(j, z)?.apply_transpose(&duals[i + 1]);
        let b = ops.basis(j)?;
        let diff: Vec<C64> = lhs.iter().zip(&duals[i]).map(|(a, n)| a - lambdas[i] * n).collect();
        let r = l1_masked(&b, &diff) / (l1_masked(&b, &duals[i]) * lambdas[i].norm()).max(1e-300);
        residual = residual.max(r);
    }
    let min_abs_lambda = lambdas.iter().map(|l| l.norm()).fold(f64::INFINITY, f64::min);
    Ok(TwistedTriplet { z, window, lambdas, densities, duals, burn_in, residual, min_abs_lambda })
}

/// Twisted triplet that fails with an out-of-radius error above TRIPLET_TOL.
pub fn certified_triplet(model: &dyn Model, z: C64, window: (i64, i64), burn_in: usize) -> Result<TwistedTriplet> {
    let t = twisted_triplet(model, z, window, burn_in)?;
    if !(t.residual < TRIPLET_TOL) || t.min_abs_lambda <= 0.1 {
        return Err(Error::OutOfRadius { z: format!("{z}"), residual: t.residual });
    }
    Ok(t)
}

/// Largest radius on the grid 2^{-k}, k = 0..=12, such that the triplets at
/// ±r and ±ir all certify.
pub fn pilot_radius(model: &dyn Model, window: (i64, i64), burn_in: usize) -> Result<f64> {
    for k in 0..=12 {
        let r = 2f64.powi(-k);
        let ok = [C64::new(r, 0.0), C64::new(-r, 0.0), C64::new(0.0, r), C64::new(0.0, -r)]
            .iter()
            .all(|&z| certified_triplet(model, z, window, burn_in).is_ok());
        if ok {
            return Ok(r);
        }
    }
    Err(Error::OutOfRadius { z: "2^-12".into(), residual: f64::NAN })
}

/// Continuous branch of log λ_k along z_s = s z / steps, s = 0..=steps;
/// returns log λ_k(z) for k in the window.
pub fn branch_logs(model: &dyn Model, z: C64, window: (i64, i64), burn_in: usize, steps: usize) -> Result<Vec<C64>> {
    let len = (window.1 - window.0 + 1) as usize;
    let mut logs = vec![C64::new(0.0, 0.0); len];
    for s in 1..=steps.max(1) {
        let zs = z * (s as f64 / steps.max(1) as f64);
        let lam = twisted_lambdas(model, zs, window, burn_in)?;
        for (k, l) in lam.iter().enumerate() {
            let prev = logs[k].im;
            let mut a = l.arg();
            let jump = a - prev;
            let wrapped = jump - TAU * (jump / TAU).round();
            a = prev + wrapped;
            if wrapped.abs() > PI / 2.0 {
                return Err(Error::BranchJump { jump: wrapped });
            }
            logs[k] = C64::new(l.norm().ln(), a);
        }
    }
    Ok(logs)
}

/// Π_{j,n}(z) for every n ≤ n_max: prefix sums of branch-tracked log λ_k.
pub fn pi_window(logs: &[C64], window_start: i64, j: i64, n_max: usize) -> Result<Vec<C64>> {
    let off = j - window_start;
    if off < 0 || off as usize + n_max > logs.len() {
        return Err(Error::InvalidInput("Π window exceeds the triplet window".into()));
    }
    let mut out = vec![C64::new(0.0, 0.0); n_max + 1];
    for n in 0..n_max {
        out[n + 1] = out[n] + logs[off as usize + n];
    }
    Ok(out)
}

/// Λ̃_{j,n}(z) = log m̃_{j+n}(L̃_{j,z}^n 1) for n = 0..=n_max, as a sum of
/// per-step normalizer logs.
pub fn window_cgf(model: &dyn Model, j: i64, n_max: usize, z: C64) -> Result<Vec<C64>> {
    let ops = model.ops();
    let mut v = ones(ops.basis(j)?.len());
    let mut out = vec![C64::new(0.0, 0.0); n_max + 1];
    for n in 0..n_max {
        let t = j + n as i64;
        let g = model.twisted(t, z)?.apply(&v);
        let c = cdot(&g, &ops.weights(t + 1)?);
        let size = g.iter().map(|x| x.norm()).fold(0.0, f64::max);
        if !(c.norm() > 1e-12 * size) || !(c.norm() > 1e-300) {
            return Err(Error::Underflow);
        }
        v = g.iter().map(|x| x / c).collect();
        out[n + 1] = out[n] + c.ln();
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LllReport {
    pub z: C64,
    /// (n, max_j |Λ̃_{j,n} − Π_{j,n}|)
    pub curve: Vec<(usize, f64)>,
    pub max_gap: f64,
    pub slope: f64,
}

/// Gap curve over starts `js` and n ≤ n_max.
pub fn lll_gap(model: &dyn Model, z: C64, js: &[i64], n_max: usize, burn_in: usize, steps: usize) -> Result<LllReport> {
    let j0 = *js.iter().min().ok_or_else(|| Error::InvalidInput("no window starts".into()))?;
    let j1 = *js.iter().max().unwrap() + n_max as i64;
    let logs = branch_logs(model, z, (j0, j1), burn_in, steps)?;
    let mut curve: Vec<(usize, f64)> = (0..=n_max).map(|n| (n, 0.0)).collect();
    for &j in js {
        let lt = window_cgf(model, j, n_max, z)?;
        let pi = pi_window(&logs, j0, j, n_max)?;
        for n in 0..=n_max {
            curve[n].1 = curve[n].1.max((lt[n] - pi[n]).norm());
        }
    }
    let max_gap = curve.iter().map(|c| c.1).fold(0.0, f64::max);
    let xs: Vec<f64> = curve.iter().skip(1).map(|c| c.0 as f64).collect();
    let ys: Vec<f64> = curve.iter().skip(1).map(|c| c.1).collect();
    let slope = linear_fit(&xs, &ys)?.slope;
    Ok(LllReport { z, curve, max_gap, slope })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Scheme {
    /// central differences with step h
    Finite { h: f64 },
    /// trapezoid rule on a circle of radius r with q nodes
    Cauchy { r: f64, q: usize },
}

/// Relative size of the highest resolved Fourier coefficient above which a
/// Cauchy circle is taken to leave the analyticity domain.
pub const ALIAS_TOL: f64 = 1e-9;

/// k-th derivative of an analytic function at z0.
pub fn derivative(f: &dyn Fn(C64) -> Result<C64>, z0: C64, k: usize, scheme: Scheme) -> Result<C64> {
    match scheme {
        Scheme::Cauchy { r, q } => {
            if q < 2 * k + 4 {
                return Err(Error::InvalidInput("too few Cauchy nodes".into()));
            }
            let mut vals = Vec::with_capacity(q);
            for s in 0..q {
                let w = C64::from_polar(1.0, TAU * s as f64 / q as f64);
                vals.push(f(z0 + r * w).map_err(|_| Error::CircleTooLarge(r))?);
            }
            // Fourier coefficients c_m = a_m r^m
            let coef = |m: usize| -> C64 { vals.iter().enumerate().map(|(s, v)| v * C64::from_polar(1.0, -TAU * (m * s) as f64 / q as f64)).sum::<C64>() / q as f64 };
            let scale = (0..=k + 2).map(|m| coef(m).norm()).fold(0.0, f64::max).max(1e-300);
            if coef(q / 2).norm() > ALIAS_TOL * scale {
                return Err(Error::CircleTooLarge(r));
            }
            let fact: f64 = (1..=k).map(|x| x as f64).product();
            Ok(coef(k) * fact / r.powi(k as i32))
        }
        Scheme::Finite { h } => {
            let e = |s: f64| f(z0 + h * s);
            Ok(match k {
                0 => e(0.0)?,
                1 => (e(1.0)? - e(-1.0)?) / (2.0 * h),
                2 => (e(1.0)? - 2.0 * e(0.0)? + e(-1.0)?) / (h * h),
                3 => (e(2.0)? - 2.0 * e(1.0)? + 2.0 * e(-1.0)? - e(-2.0)?) / (2.0 * h.powi(3)),
                4 => (e(2.0)? - 4.0 * e(1.0)? + 6.0 * e(0.0)? - 4.0 * e(-1.0)? + e(-2.0)?) / h.powi(4),
                _ => return Err(Error::InvalidInput("finite differences support k ≤ 4".into())),
            })
        }
    }
}

/// Default Cauchy scheme for radius r0.
pub fn default_scheme(r0: f64) -> Scheme {
    Scheme::Cauchy { r: r0 / 4.0, q: 64 }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub k: usize,
    /// (n, σ_n, sup_t σ_n^{k−2}|Λ_n^{(k)}(t)|)
    pub rows: Vec<(usize, f64, f64)>,
    /// slope of log value against log σ_n
    pub slope: f64,
}

/// sup over |t| ≤ δσ_n of σ_n^{k−2}|Λ_n^{(k)}(t)| with Λ_n(t) = Λ̃_{0,n}(it/σ_n),
/// i.e. |Λ̃_{0,n}^{(k)}(iu)|/σ_n² for |u| ≤ δ. 33 points, then ×4 refinement
/// around the worst point.
pub fn growth_check(model: &dyn Model, n_list: &[usize], k: usize, delta: f64, r0: f64) -> Result<GrowthReport> {
    if k < 3 {
        return Err(Error::InvalidInput("k must be at least 3".into()));
    }
    let scheme = default_scheme(r0);
    let mut vars = Vec::new();
    for &n in n_list {
        vars.push(exact_variance(model, 0, n)?);
    }
    let max_var = vars.iter().cloned().fold(0.0, f64::max);
    let first = vars.first().copied().unwrap_or(0.0);
    if max_var < 10.0 || max_var < 4.0 * first {
        return Err(Error::SigmaBounded { max_var });
    }
    let mut rows = Vec::new();
    for (&n, &v) in n_list.iter().zip(&vars) {
        let f = |z: C64| -> Result<C64> { Ok(window_cgf(model, 0, n, z)?[n]) };
        let eval = |u: f64| -> Result<f64> { Ok(derivative(&f, C64::new(0.0, u), k, scheme)?.norm() / v) };
        let pts: Vec<f64> = (0..33).map(|i| -delta + 2.0 * delta * i as f64 / 32.0).collect();
        let mut best = (0.0f64, 0usize);
        for (i, &u) in pts.iter().enumerate() {
            let val = eval(u)?;
            if val > best.0 {
                best = (val, i);
            }
        }
        let step = 2.0 * delta / 32.0;
        let centre = pts[best.1];
        let mut sup = best.0;
        for s in 1..4 {
            for sign in [-1.0, 1.0] {
                let u = centre + sign * step * s as f64 / 4.0;
                if u.abs() <= delta {
                    sup = sup.max(eval(u)?);
                }
            }
        }
        rows.push((n, v.sqrt(), sup));
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.1.ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.2.max(1e-300).ln()).collect();
    let slope = linear_fit(&xs, &ys)?.slope;
    Ok(GrowthReport { k, rows, slope })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwistedDecay {
    pub z: C64,
    pub profile: Vec<f64>,
    pub fit: GeometricFit,
}

/// max over sampled g of ∥λ_{j,n}(z)^{-1} L̃_{j,z}^n g − ν_j^{(z)}(g) h_{j+n}^{(z)}∥_BV / ∥g∥_BV.
pub fn twisted_decay(model: &dyn Model, tri: &TwistedTriplet, j: i64, n_max: usize, samples: usize, rng: &mut impl Rng) -> Result<TwistedDecay> {
    let basis = model.ops().basis(j)?;
    let gs = sample_bv(&basis, samples, rng);
    let mut profile = vec![0.0f64; n_max + 1];
    for g in gs {
        let gc: Vec<C64> = g.iter().map(|&x| C64::new(x, 0.0)).collect();
        let norm = bv_c(model, j, &gc)?.max(1e-300);
        let c = cdot2(&gc, tri.nu(j)?);
        let mut cur = gc.clone();
        for n in 0..=n_max {
            let t = j + n as i64;
            if n > 0 {
                let lam = tri.lambda(t - 1)?;
                cur = model.twisted(t - 1, tri.z)?.apply(&cur);
                cur.iter_mut().for_each(|x| *x /= lam);
            }
            let h = tri.h(t)?;
            let diff: Vec<C64> = cur.iter().zip(h).map(|(a, b)| a - c * b).collect();
            profile[n] = profile[n].max(bv_c(model, t, &diff)? / norm);
        }
    }
    let fit = crate::rpf::fit_decay(&profile)?;
    Ok(TwistedDecay { z: tri.z, profile, fit })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThirdDerivativeReport {
    /// (j, n, Var(S_{j,n}), max_t |Π'''_{j,n}(it)|, ratio)
    pub rows: Vec<(i64, usize, f64, f64, f64)>,
    pub max_ratio: f64,
}

/// max over t of |Π'''_{j,n}(it)|/(1 + Var(S_{j,n})) on a grid of windows.
/// Derivatives use logs of λ_k(node)/λ_k(it) around each Cauchy circle.
pub fn third_derivative_window(model: &dyn Model, windows: &[(i64, usize)], ts: &[f64], r0: f64, burn_in: usize) -> Result<ThirdDerivativeReport> {
    let j0 = windows.iter().map(|w| w.0).min().ok_or_else(|| Error::InvalidInput("no windows".into()))?;
    let j1 = windows.iter().map(|w| w.0 + w.1 as i64).max().unwrap();
    let (r, q) = (r0 / 4.0, 64usize);
    let mut best = vec![0.0f64; windows.len()];
    for &t in ts {
        let z0 = C64::new(0.0, t);
        let base = twisted_lambdas(model, z0, (j0, j1), burn_in)?;
        let mut nodes = Vec::with_capacity(q);
        for s in 0..q {
            let w = C64::from_polar(1.0, TAU * s as f64 / q as f64);
            let lam = twisted_lambdas(model, z0 + r * w, (j0, j1), burn_in)?;
            let logs: Vec<C64> = lam
                .iter()
                .zip(&base)
                .map(|(a, b)| {
                    let ratio = a / b;
                    if ratio.arg().abs() > PI / 2.0 {
                        Err(Error::BranchJump { jump: ratio.arg() })
                    } else {
                        Ok(ratio.ln())
                    }
                })
                .collect::<Result<_>>()?;
            nodes.push((w, logs));
        }
        for (i, &(j, n)) in windows.iter().enumerate() {
            let off = (j - j0) as usize;
            let coef: C64 = nodes.iter().map(|(w, logs)| logs[off..off + n].iter().sum::<C64>() * w.powi(-3)).sum::<C64>() / q as f64;
            best[i] = best[i].max((coef * 6.0 / r.powi(3)).norm());
        }
    }
    let mut rows = Vec::new();
    let mut max_ratio = 0.0f64;
    for (i, &(j, n)) in windows.iter().enumerate() {
        let v = exact_variance(model, j, n)?;
        let ratio = best[i] / (1.0 + v);
        max_ratio = max_ratio.max(ratio);
        rows.push((j, n, v, best[i], ratio));
    }
    Ok(ThirdDerivativeReport { rows, max_ratio })
}

/// Raw symbol-basis matrices A_j with their Gibbs triplet, as dense matrices.
pub struct RankOneSplit {
    pub j0: i64,
    pub a: Vec<DMatrix<f64>>,
    /// P_j = λ_j h_{j+1} ν_j^T
    pub p: Vec<DMatrix<f64>>,
    pub lambdas: Vec<f64>,
}

pub fn rank_one_split(sys: &GibbsSystem, j0: i64, len: usize) -> Result<RankOneSplit> {
    let mut a = Vec::new();
    let mut p = Vec::new();
    let mut lambdas = Vec::new();
    for k in 0..len {
        let j = j0 + k as i64;
        let m = sft_raw(sys.stage(j)?, j).to_dense().map(|c| c.re);
        let lam = sys.lambda(j)?;
        let h1 = sys.h(j + 1)?;
        let nu = sys.triplet.nu(j)?;
        let pm = DMatrix::from_fn(h1.len(), nu.len(), |r, c| lam * h1[r] * nu[c]);
        a.push(m);
        p.push(pm);
        lambdas.push(lam);
    }
    Ok(RankOneSplit { j0, a, p, lambdas })
}

fn product(ms: &[DMatrix<f64>]) -> DMatrix<f64> {
    let mut out = DMatrix::identity(ms[0].ncols(), ms[0].ncols());
    for m in ms {
        out = m * out;
    }
    out
}

fn inf_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows()).map(|r| m.row(r).iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpLemmaReport {
    /// max relative |P_j^n − λ_{j,n} h_{j+n} ν_j^T|
    pub projection_gap: f64,
    /// max relative |A_j^n − P_j^n − E_{j+n−1}⋯E_j|
    pub splitting_gap: f64,
    /// max |E_j h_j| and |ν_{j+1} E_j|
    pub kernel_gap: f64,
}

impl RankOneSplit {
    pub fn e(&self, k: usize) -> DMatrix<f64> {
        &self.a[k] - &self.p[k]
    }

    pub fn op_lemma(&self, sys: &GibbsSystem, n_max: usize) -> Result<OpLemmaReport> {
        let len = self.a.len();
        let (mut pg, mut sg, mut kg) = (0.0f64, 0.0f64, 0.0f64);
        for k in 0..len {
            let j = self.j0 + k as i64;
            let e = self.e(k);
            let h = nalgebra::DVector::from_column_slice(sys.h(j)?);
            let nu1 = nalgebra::DVector::from_column_slice(sys.triplet.nu(j + 1)?);
            kg = kg.max((&e * &h).amax()).max((nu1.transpose() * &e).amax());
            for n in 1..=n_max.min(len - k) {
                let an = product(&self.a[k..k + n]);
                let pn = product(&self.p[k..k + n]);
                let en = product(&(k..k + n).map(|i| self.e(i)).collect::<Vec<_>>());
                let lam: f64 = self.lambdas[k..k + n].iter().product();
                let hn = sys.h(j + n as i64)?;
                let nu = sys.triplet.nu(j)?;
                let expect = DMatrix::from_fn(hn.len(), nu.len(), |r, c| lam * hn[r] * nu[c]);
                let scale = an.amax().max(1e-300);
                pg = pg.max((&pn - &expect).amax() / scale);
                sg = sg.max((&an - &pn - &en).amax() / scale);
            }
        }
        Ok(OpLemmaReport { projection_gap: pg, splitting_gap: sg, kernel_gap: kg })
    }

    /// ∥λ_{j,n}^{-1}(A_j^n g − λ_{j,n} ν_j(g) h_{j+n})∥_∞ / ∥g∥_∞, max over samples.
    pub fn ex_conv_profile(&self, sys: &GibbsSystem, n_max: usize, samples: usize, rng: &mut impl Rng) -> Result<(Vec<f64>, GeometricFit)> {
        let d = self.a[0].ncols();
        let mut prof = vec![0.0f64; n_max + 1];
        for _ in 0..samples {
            let g: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let gn = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let nu_g: f64 = g.iter().zip(sys.triplet.nu(self.j0)?).map(|(a, b)| a * b).sum();
            let mut cur = nalgebra::DVector::from_vec(g.clone());
            for n in 0..=n_max.min(self.a.len()) {
                if n > 0 {
                    cur = &self.a[n - 1] * cur / self.lambdas[n - 1];
                }
                let h = sys.h(self.j0 + n as i64)?;
                let r = cur.iter().zip(h).map(|(a, b)| (a - nu_g * b).abs()).fold(0.0, f64::max);
                prof[n] = prof[n].max(r / gn);
            }
        }
        let (ns, vs): (Vec<f64>, Vec<f64>) = prof.iter().enumerate().skip(1).filter(|(_, v)| **v > 1e-14).map(|(n, v)| (n as f64, *v)).unzip();
        let fit = geometric_fit(&ns, &vs)?;
        Ok((prof, fit))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub c0: f64,
    pub delta0: f64,
    pub delta1: f64,
    pub n0: usize,
    pub m: f64,
    pub eps0: f64,
    /// max_r<n0 ((M + ε0)/δ1)^r, the bound on ∥S^n∥/δ1^n implied by the block argument
    pub bound: f64,
    /// per draw: sup_n ∥S_j^n∥/δ1^n
    pub draws: Vec<f64>,
    pub pass: bool,
}

/// Perturbs R_j = E_j/λ_j by ε_jΔ_j with ∥Δ_j∥_∞ = 1 and ε_j ≤ ε0 and checks
/// sup_n ∥S_j^n∥/δ1^n against the block bound.
pub fn spec_rad_test(split: &RankOneSplit, n_max: usize, draws: usize, rng: &mut impl Rng) -> Result<StabilityReport> {
    let len = split.a.len();
    if len < n_max {
        return Err(Error::InvalidInput("split shorter than n_max".into()));
    }
    let r: Vec<DMatrix<f64>> = (0..len).map(|k| split.e(k) / split.lambdas[k]).collect();
    // ∥R_j^n∥ over the first start, for the (C0, δ0) fit
    let mut norms = Vec::new();
    let mut cur = DMatrix::identity(r[0].ncols(), r[0].ncols());
    for n in 1..=n_max {
        cur = &r[n - 1] * cur;
        norms.push(inf_norm(&cur));
    }
    let (ns, vs): (Vec<f64>, Vec<f64>) = norms.iter().enumerate().filter(|(_, v)| **v > 1e-13).map(|(i, v)| ((i + 1) as f64, *v)).unzip();
    let fit = geometric_fit(&ns, &vs)?;
    let delta0 = fit.rate.clamp(1e-6, 1.0 - 1e-9);
    let c0 = norms.iter().enumerate().map(|(i, v)| v / delta0.powi(i as i32 + 1)).fold(1.0f64, f64::max);
    let delta1 = (1.0 + delta0) / 2.0;
    let mut n0 = 1;
    while c0 * delta0.powi(n0 as i32) >= delta1.powi(n0 as i32) / 2.0 {
        n0 += 1;
        if n0 > 10_000 {
            return Err(Error::InvalidInput("no admissible block length".into()));
        }
    }
    let m = r.iter().map(inf_norm).fold(0.0, f64::max);
    // (M+ε)^{n0} − M^{n0} ≤ δ1^{n0}/2
    let target = delta1.powi(n0 as i32) / 2.0;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = (lo + hi) / 2.0;
        if (m + mid).powi(n0 as i32) - m.powi(n0 as i32) <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let eps0 = lo;
    let bound = (0..n0).map(|k| ((m + eps0) / delta1).powi(k as i32)).fold(1.0f64, f64::max);
    let d = r[0].ncols();
    let mut out = Vec::new();
    for _ in 0..draws {
        let s: Vec<DMatrix<f64>> = r
            .iter()
            .map(|rk| {
                let mut delta = DMatrix::from_fn(rk.nrows(), rk.ncols(), |_, _| rng.random_range(-1.0..1.0));
                let nn = inf_norm(&delta).max(1e-300);
                delta /= nn;
                let eps = eps0 * rng.random::<f64>();
                rk + delta * eps
            })
            .collect();
        let mut cur = DMatrix::identity(d, d);
        let mut sup = 1.0f64;
        for n in 1..=n_max {
            cur = &s[n - 1] * cur;
            sup = sup.max(inf_norm(&cur) / delta1.powi(n as i32));
        }
        out.push(sup);
    }
    let pass = out.iter().all(|x| *x <= bound * (1.0 + 1e-9));
    Ok(StabilityReport { c0, delta0, delta1, n0, m, eps0, bound, draws: out, pass })
}

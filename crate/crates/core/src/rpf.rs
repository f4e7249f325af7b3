//! Sequential RPF triplets by burn-in power iteration, decay diagnostics,
//! change of reference measure and cone contraction.

use crate::error::{Error, Result};
use crate::fit::{geometric_fit, GeometricFit};
use crate::funcspace::{hilbert_metric, Basis, Grid};
use crate::maps::IntervalStage;
use crate::transfer::{apply_n_re, bv_re, derive_kind, sample_cone, Context, OperatorSequence, TransferMatrix, SINGULAR_DENSITY};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// How h_j is normalized during the forward sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Normalization {
    /// m_j(h_j) = 1 against the reference weights
    Reference,
    /// ν_j(h_j) = 1 against the backward duals
    Dual,
}

/// (λ_j, h_j, ν_j) for j in [j_min, j_max]; `densities` and `duals` also
/// hold index j_max + 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RpfTriplet {
    pub window: (i64, i64),
    pub lambdas: Vec<f64>,
    pub densities: Vec<Vec<f64>>,
    pub duals: Vec<Vec<f64>>,
    pub burn_in: usize,
    pub residual: f64,
    pub dual_residual: f64,
    pub normalization: Normalization,
}

impl RpfTriplet {
    fn k(&self, j: i64) -> Result<usize> {
        if j < self.window.0 || j > self.window.1 + 1 {
            return Err(Error::InvalidInput(format!("time {j} outside triplet window {:?}", self.window)));
        }
        Ok((j - self.window.0) as usize)
    }

    pub fn h(&self, j: i64) -> Result<&[f64]> {
        Ok(&self.densities[self.k(j)?])
    }

    pub fn nu(&self, j: i64) -> Result<&[f64]> {
        Ok(&self.duals[self.k(j)?])
    }

    pub fn lambda(&self, j: i64) -> Result<f64> {
        let k = self.k(j)?;
        self.lambdas.get(k).copied().ok_or_else(|| Error::InvalidInput(format!("no λ at time {j}")))
    }

    /// λ_{j,n} = λ_j ⋯ λ_{j+n−1}
    pub fn lambda_product(&self, j: i64, n: usize) -> Result<f64> {
        (0..n).try_fold(1.0, |acc, k| Ok(acc * self.lambda(j + k as i64)?))
    }

    pub fn min_density(&self) -> f64 {
        self.densities.iter().flatten().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_density(&self) -> f64 {
        self.densities.iter().flatten().cloned().fold(0.0, f64::max)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn mask_of(b: &Basis) -> Option<Arc<Vec<bool>>> {
    match b {
        Basis::Words { allowed, .. } => Some(allowed.clone()),
        _ => None,
    }
}

fn min_masked(v: &[f64], m: &Option<Arc<Vec<bool>>>) -> f64 {
    v.iter().enumerate().filter(|(i, _)| m.as_ref().map_or(true, |a| a[*i])).map(|(_, x)| *x).fold(f64::INFINITY, f64::min)
}

/// Start of the burn-in; one-sided sequences use the rank-one extension,
/// which collapses every negative-time history to the constant at time 0.
fn burn_start(ops: &dyn OperatorSequence, j: i64, k: usize) -> i64 {
    let s = j - k as i64;
    if s < 0 && !ops.two_sided() { 0 } else { s }
}

pub fn build_triplet(ops: &dyn OperatorSequence, window: (i64, i64), burn_in: usize, norm: Normalization) -> Result<RpfTriplet> {
    let (j_min, j_max) = window;
    if j_max < j_min || burn_in == 0 {
        return Err(Error::InvalidInput("empty window or zero burn-in".into()));
    }
    let start = burn_start(ops, j_min, burn_in);
    let top = j_max + 1;
    // backward duals from top + burn_in down to start
    let mut nu = ops.weights(top + burn_in as i64)?.to_vec();
    let mut duals_rev: Vec<Vec<f64>> = Vec::new();
    let mut t = top + burn_in as i64;
    while t > start {
        t -= 1;
        let op = ops.operator(t)?;
        let mut v = op.apply_transpose_re(&nu);
        let s: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= s);
        nu = v;
        if t <= top {
            duals_rev.push(nu.clone());
        }
    }
    // duals_rev[i] is time top - i ... down to start
    let dual_at = |j: i64| -> &Vec<f64> { &duals_rev[(top - j) as usize] };
    let dual = |j: i64| -> Vec<f64> { dual_at(j).clone() };

    let mut h = vec![1.0; ops.basis(start)?.len()];
    let scale = match norm {
        Normalization::Reference => dot(&h, &ops.weights(start)?),
        Normalization::Dual => dot(&h, &dual(start)),
    };
    h.iter_mut().for_each(|x| *x /= scale);
    let mut densities = Vec::new();
    let mut lambdas = Vec::new();
    let mut residual = 0.0f64;
    for t in start..=top {
        if t >= j_min {
            let mask = mask_of(&ops.basis(t)?);
            let mn = min_masked(&h, &mask);
            if !(mn >= SINGULAR_DENSITY) {
                return Err(Error::SingularDensity { j: t, min: mn });
            }
            densities.push(h.clone());
        }
        if t == top {
            break;
        }
        let op = ops.operator(t)?;
        let g = op.apply_re(&h);
        let lam = match norm {
            Normalization::Reference => dot(&g, &ops.weights(t + 1)?),
            Normalization::Dual => dot(&g, &dual(t + 1)),
        };
        let next: Vec<f64> = g.iter().map(|x| x / lam).collect();
        if t >= j_min {
            lambdas.push(lam);
            let diff: Vec<f64> = g.iter().zip(&next).map(|(a, b)| a - lam * b).collect();
            residual = residual.max(bv_re(&ops.basis(t + 1)?, &diff, &ops.weights(t + 1)?));
        }
        h = next;
    }
    let mut duals = Vec::new();
    for (i, j) in (j_min..=top).enumerate() {
        let mut v = dual(j);
        let c = dot(&v, &densities[i]);
        v.iter_mut().for_each(|x| *x /= c);
        duals.push(v);
    }
    let mut dual_residual = 0.0f64;
    for (i, j) in (j_min..top).enumerate() {
        let lhs = ops.operator(j)?.apply_transpose_re(&duals[i + 1]);
        let r: f64 = lhs.iter().zip(&duals[i]).map(|(a, b)| (a - lambdas[i] * b).abs()).sum();
        dual_residual = dual_residual.max(r);
    }
    Ok(RpfTriplet { window, lambdas, densities, duals, burn_in, residual, dual_residual, normalization: norm })
}

/// h_j from normalized L_{j−K}^K 1 with m_j(h_j) = 1.
pub fn forward_density(ops: &dyn OperatorSequence, window: (i64, i64), burn_in: usize) -> Result<RpfTriplet> {
    build_triplet(ops, window, burn_in, Normalization::Reference)
}

/// ⌈log(1e-12)/log δ̂⌉ from a pilot decay fit, clamped to [10, 4000].
pub fn default_burn_in(ops: &dyn OperatorSequence, rng: &mut impl Rng) -> Result<usize> {
    let pilot = build_triplet(ops, (0, 60), 30, Normalization::Reference)?;
    let b = ops.basis(0)?;
    let g = crate::transfer::sample_bv(&b, 1, rng).pop().unwrap();
    let prof = decay_profile(ops, &pilot, &g, 60)?;
    let fit = fit_decay(&prof)?;
    let k = if fit.rate <= 0.0 || fit.rate >= 1.0 { 4000.0 } else { (1e-12f64.ln() / fit.rate.ln()).ceil() };
    Ok((k as usize).clamp(10, 4000))
}

/// ‖λ_{j,n}^{-1} L_j^n g − ν_j(g) h_{j+n}‖_BV for n = 0..=n_max, j = window start.
pub fn decay_profile(ops: &dyn OperatorSequence, tri: &RpfTriplet, g: &[f64], n_max: usize) -> Result<Vec<f64>> {
    decay_profile_at(ops, tri, tri.window.0, g, n_max)
}

pub fn decay_profile_at(ops: &dyn OperatorSequence, tri: &RpfTriplet, j: i64, g: &[f64], n_max: usize) -> Result<Vec<f64>> {
    if n_max < 2 {
        return Err(Error::InvalidInput("n_max must be at least 2".into()));
    }
    let c = dot(g, tri.nu(j)?);
    let mut cur = g.to_vec();
    let mut out = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        let t = j + n as i64;
        if n > 0 {
            let lam = tri.lambda(t - 1)?;
            cur = ops.operator(t - 1)?.apply_re(&cur);
            cur.iter_mut().for_each(|x| *x /= lam);
        }
        let h = tri.h(t)?;
        let diff: Vec<f64> = cur.iter().zip(h).map(|(a, b)| a - c * b).collect();
        out.push(bv_re(&ops.basis(t)?, &diff, &ops.weights(t)?));
    }
    Ok(out)
}

/// Geometric fit over n ≥ 5, dropping entries at the roundoff floor.
pub fn fit_decay(profile: &[f64]) -> Result<GeometricFit> {
    let floor = 1e-13 * profile.iter().cloned().fold(0.0, f64::max).max(1e-300);
    let (ns, vs): (Vec<f64>, Vec<f64>) = profile
        .iter()
        .enumerate()
        .skip(5)
        .take_while(|(_, v)| **v > floor.max(1e-14))
        .map(|(n, v)| (n as f64, *v))
        .unzip();
    if ns.len() < 3 {
        return Ok(GeometricFit { rate: 0.0, prefactor: 0.0, r2: 1.0 });
    }
    geometric_fit(&ns, &vs)
}

/// ‖L_0^n g0 − h_n‖_BV for a probability density g0.
pub fn uniqueness_gap(ops: &dyn OperatorSequence, tri: &RpfTriplet, g0: &[f64], n_max: usize) -> Result<Vec<f64>> {
    let j = tri.window.0;
    let w = ops.weights(j)?;
    if g0.iter().any(|x| *x < 0.0) || (dot(g0, &w) - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidInput("g0 must be a probability density".into()));
    }
    decay_profile_at(ops, tri, j, g0, n_max)
}

/// Operators L_j^μ g = L_j(g h_j)/(λ_j h_{j+1}) with reference μ_j = h_j ν_j.
pub struct DerivedOperators<'a> {
    pub base: &'a dyn OperatorSequence,
    pub triplet: &'a RpfTriplet,
}

pub fn change_reference<'a>(ops: &'a dyn OperatorSequence, tri: &'a RpfTriplet) -> Result<DerivedOperators<'a>> {
    if tri.min_density() < SINGULAR_DENSITY {
        return Err(Error::SingularDensity { j: tri.window.0, min: tri.min_density() });
    }
    Ok(DerivedOperators { base: ops, triplet: tri })
}

impl OperatorSequence for DerivedOperators<'_> {
    fn operator(&self, j: i64) -> Result<TransferMatrix> {
        let raw = self.base.operator(j)?;
        derive_kind(&raw, Context::Normalized { lambda: self.triplet.lambda(j)?, h: self.triplet.h(j)?, h_next: self.triplet.h(j + 1)? })
    }

    fn weights(&self, j: i64) -> Result<Arc<Vec<f64>>> {
        let h = self.triplet.h(j)?;
        let nu = self.triplet.nu(j)?;
        Ok(Arc::new(h.iter().zip(nu).map(|(a, b)| a * b).collect()))
    }

    fn basis(&self, j: i64) -> Result<Basis> {
        self.base.basis(j)
    }

    fn two_sided(&self) -> bool {
        false
    }
}

/// |μ_j(φ∘T_j) − μ_{j+1}(φ)| for an interval stage, with μ_j = h_j dx and h_j
/// piecewise linear; cells are integrated by 8-point Gauss–Legendre.
pub fn interval_equivariance_gap(stage: &IntervalStage, grid: Grid, h: &[f64], h_next: &[f64], phi: impl Fn(f64) -> f64) -> f64 {
    let lhs = gauss_cells(grid, |x| grid.interp(h, x) * phi(stage.apply(x)), &branch_breaks(stage));
    let rhs = gauss_cells(grid, |x| grid.interp(h_next, x) * phi(x), &[]);
    (lhs - rhs).abs()
}

fn branch_breaks(stage: &IntervalStage) -> Vec<f64> {
    stage.branches.iter().skip(1).map(|b| b.lo).collect()
}

const GL8: [(f64, f64); 8] = [
    (-0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (-0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (-0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
];

/// ∫_0^1 f over grid cells, further split at `breaks`.
pub fn gauss_cells(grid: Grid, f: impl Fn(f64) -> f64, breaks: &[f64]) -> f64 {
    let mut total = 0.0;
    for c in 0..grid.cells {
        let (a, b) = (grid.node(c), grid.node(c + 1));
        let mut pts = vec![a];
        pts.extend(breaks.iter().cloned().filter(|&x| x > a && x < b));
        pts.push(b);
        for w in pts.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let (m, r) = (0.5 * (lo + hi), 0.5 * (hi - lo));
            total += GL8.iter().map(|(x, wt)| wt * f(m + r * x)).sum::<f64>() * r;
        }
    }
    total
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub r_hat: f64,
    pub per_m_contraction: f64,
    pub birkhoff_bound: f64,
    pub pass: bool,
}

/// Sampled projective diameter of L_j^M applied to cone pairs, and the
/// per-M contraction of the positive-cone metric.
pub fn contraction_diagnostic(ops: &dyn OperatorSequence, j: i64, a: f64, m: usize, sample_pairs: usize, rng: &mut impl Rng) -> Result<ContractionReport> {
    if m == 0 {
        return Err(Error::InvalidInput("M must be at least 1".into()));
    }
    let b = ops.basis(j)?;
    let w = ops.weights(j)?;
    let cone = sample_cone(&b, &w, a, 2 * sample_pairs + 1, rng);
    let positive = |v: &[f64]| v.iter().all(|x| *x > 0.0);
    let images: Vec<Vec<f64>> = cone.iter().map(|h| apply_n_re(ops, j, m, h)).collect::<Result<_>>()?;
    let mask = mask_of(&ops.basis(j + m as i64)?);
    let pick = |v: &[f64]| -> Vec<f64> { v.iter().enumerate().filter(|(i, _)| mask.as_ref().map_or(true, |a| a[*i])).map(|(_, x)| *x).collect() };
    let mask0 = mask_of(&b);
    let pick0 = |v: &[f64]| -> Vec<f64> { v.iter().enumerate().filter(|(i, _)| mask0.as_ref().map_or(true, |a| a[*i])).map(|(_, x)| *x).collect() };
    let (mut r_hat, mut ratio) = (0.0f64, 0.0f64);
    for p in 0..sample_pairs {
        let (f, g) = (&cone[2 * p + 1], &cone[2 * p + 2]);
        let (lf, lg) = (&images[2 * p + 1], &images[2 * p + 2]);
        let (pf, pg, plf, plg) = (pick0(f), pick0(g), pick(lf), pick(lg));
        if !positive(&pf) || !positive(&pg) || !positive(&plf) || !positive(&plg) {
            continue;
        }
        let d0 = hilbert_metric(&pf, &pg)?;
        let d1 = hilbert_metric(&plf, &plg)?;
        r_hat = r_hat.max(d1);
        if d0 > 0.0 {
            ratio = ratio.max(d1 / d0);
        }
    }
    for (i, img) in images.iter().enumerate() {
        let p = pick(img);
        if positive(&p) {
            let one = pick(&images[0]);
            if i > 0 && positive(&one) {
                r_hat = r_hat.max(hilbert_metric(&p, &one)?);
            }
        }
    }
    let bound = (r_hat / 4.0).tanh();
    Ok(ContractionReport { r_hat, per_m_contraction: ratio, birkhoff_bound: bound, pass: ratio <= bound + 1e-9 && ratio < 1.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::{IntervalObservable, IntervalSequence};
    use crate::rng::substream;
    use crate::transfer::IntervalOperators;
    use std::f64::consts::TAU;

    fn ops_of(stages: Vec<IntervalStage>, g: usize) -> IntervalOperators {
        IntervalOperators::new(IntervalSequence::periodic(stages, IntervalObservable::Zero), Grid::new(g).unwrap())
    }

    #[test]
    fn lebesgue_preserving_densities() {
        for st in [IntervalStage::doubling(), IntervalStage::tent()] {
            let ops = ops_of(vec![st], 1024);
            let t = forward_density(&ops, (0, 10), 20).unwrap();
            assert!(t.residual < 1e-12);
            assert!(t.densities.iter().flatten().all(|v| (v - 1.0).abs() < 1e-12));
            assert!(t.lambdas.iter().all(|l| (l - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn skew_density_matches_closed_form_step() {
        // one skew step from Lebesgue: 3/(3−y)² + 1/2
        let ops = ops_of(vec![IntervalStage::skew()], 2048);
        let one = ops.operator(0).unwrap().apply_re(&vec![1.0; 2049]);
        for (i, v) in one.iter().enumerate() {
            let y = ops.grid.node(i);
            assert!((v - (3.0 / ((3.0 - y) * (3.0 - y)) + 0.5)).abs() < 1e-6);
        }
    }

    #[test]
    fn burn_in_stable() {
        let ops = ops_of(vec![IntervalStage::doubling(), IntervalStage::skew()], 1024);
        let a = forward_density(&ops, (0, 6), 40).unwrap();
        let b = forward_density(&ops, (0, 6), 80).unwrap();
        for j in 0..7 {
            let d: Vec<f64> = a.h(j).unwrap().iter().zip(b.h(j).unwrap()).map(|(x, y)| x - y).collect();
            assert!(bv_re(&ops.basis(j).unwrap(), &d, &ops.weights(j).unwrap()) < 1e-10);
        }
        assert!(a.min_density() > 0.5 && a.max_density() < 2.0);
    }

    #[test]
    fn decay_of_linear_function_halves() {
        let ops = ops_of(vec![IntervalStage::doubling()], 1024);
        let t = forward_density(&ops, (0, 40), 10).unwrap();
        let h0 = t.h(0).unwrap().to_vec();
        assert!(decay_profile(&ops, &t, &h0, 30).unwrap().iter().all(|v| *v < 1e-12));
        let x = ops.grid.nodes();
        let prof = decay_profile(&ops, &t, &x, 30).unwrap();
        let fit = fit_decay(&prof).unwrap();
        assert!((fit.rate - 0.5).abs() < 1e-6, "{fit:?}");
        // cos(2πx) is annihilated in one step
        let c = ops.grid.sample(|x| (TAU * x).cos());
        let pc = decay_profile(&ops, &t, &c, 5).unwrap();
        assert!(pc[1] < 1e-12);
    }

    #[test]
    fn uniqueness_rate() {
        let ops = ops_of(vec![IntervalStage::doubling()], 1024);
        let t = forward_density(&ops, (0, 40), 10).unwrap();
        let g0 = ops.grid.sample(|x| 1.0 + 0.3 * (TAU * x).cos() + 0.2 * (x - 0.5));
        let prof = uniqueness_gap(&ops, &t, &g0, 30).unwrap();
        assert!((fit_decay(&prof).unwrap().rate - 0.5).abs() < 1e-3);
        let bad = vec![2.0; 1025];
        assert!(uniqueness_gap(&ops, &t, &bad, 10).is_err());
    }

    #[test]
    fn derived_operators_fix_one() {
        let ops = ops_of(vec![IntervalStage::doubling(), IntervalStage::skew()], 512);
        let t = forward_density(&ops, (0, 20), 60).unwrap();
        let d = change_reference(&ops, &t).unwrap();
        for j in 0..20 {
            let one = d.operator(j).unwrap().apply_re(&vec![1.0; 513]);
            assert!(one.iter().all(|v| (v - 1.0).abs() < 1e-10));
        }
        let dbl = ops_of(vec![IntervalStage::doubling()], 256);
        let td = forward_density(&dbl, (0, 4), 10).unwrap();
        let dd = change_reference(&dbl, &td).unwrap();
        assert!(dd.operator(1).unwrap().max_abs_diff(&dbl.operator(1).unwrap()) < 1e-14);
    }

    #[test]
    fn equivariance_markov_alternation() {
        let ops = ops_of(vec![IntervalStage::doubling(), IntervalStage::markov_w()], 1024);
        let t = forward_density(&ops, (0, 4), 60).unwrap();
        for j in 0..4 {
            let st = ops.seq.stage_at(j as usize).unwrap();
            for k in 1..4 {
                let gap = interval_equivariance_gap(st, ops.grid, t.h(j).unwrap(), t.h(j + 1).unwrap(), |x| (TAU * k as f64 * x).sin() + x * x);
                assert!(gap < 1e-8, "{gap}");
            }
        }
    }

    #[test]
    fn contraction_doubling() {
        let ops = ops_of(vec![IntervalStage::doubling()], 512);
        let mut rng = substream(5, "contraction", 0);
        let r = contraction_diagnostic(&ops, 0, 2.0, 5, 20, &mut rng).unwrap();
        assert!(r.per_m_contraction < 1.0, "{r:?}");
    }
}

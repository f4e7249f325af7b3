//! Martingale–coboundary decomposition for pulled-back operators, exact
//! variances via operator covariances, and moment diagnostics.

use crate::error::{Error, Result};
use crate::fit::linear_fit;
use crate::funcspace::{bv_of, Basis};
use crate::model::{dot, Model, PathPoint};
use crate::montecarlo::{lp_norm, simulate, Samples};
use crate::rng::substream;
use crate::C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Hard cap on covariance lags.
pub const MAX_LAG: usize = 5000;

fn sup_on(basis: &Basis, v: &[f64]) -> f64 {
    match basis {
        Basis::Grid(_) => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        Basis::Words { allowed, .. } => v.iter().zip(allowed.iter()).filter(|(_, a)| **a).fold(0.0, |m, (x, _)| m.max(x.abs())),
    }
}

fn bv(model: &dyn Model, j: i64, v: &[f64]) -> Result<f64> {
    let b = model.ops().basis(j)?;
    let w = model.ops().weights(j)?;
    let c: Vec<C64> = v.iter().map(|&x| C64::new(x, 0.0)).collect();
    Ok(bv_of(&b, &c, &w))
}

fn center(model: &dyn Model, j: i64, mut v: Vec<f64>) -> Result<Vec<f64>> {
    let m = dot(&v, &model.ops().weights(j)?);
    v.iter_mut().for_each(|x| *x -= m);
    Ok(v)
}

/// c[a][k] = m̃_{a+k}(g̃_{a+k} · L̃^k g̃_a) for a window of centered observables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceTable {
    pub start: i64,
    pub c: Vec<Vec<f64>>,
    pub max_lag: usize,
}

impl CovarianceTable {
    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }

    /// Var of the sum over the sub-window [a0, a0+n) (relative indices).
    pub fn window_variance(&self, a0: usize, n: usize) -> f64 {
        let mut v = 0.0;
        for a in a0..a0 + n {
            let row = &self.c[a];
            v += row[0];
            for k in 1..row.len().min(a0 + n - a) {
                v += 2.0 * row[k];
            }
        }
        v
    }

    /// Var(S_{start, n}) for n = 0..=len.
    pub fn prefix_variances(&self) -> Vec<f64> {
        let len = self.c.len();
        let mut out = vec![0.0; len + 1];
        for b in 0..len {
            let mut inc = self.c[b][0];
            for k in 1..=b.min(self.max_lag) {
                if let Some(x) = self.c[b - k].get(k) {
                    inc += 2.0 * x;
                }
            }
            out[b + 1] = out[b] + inc;
        }
        out
    }
}

/// Covariances of the observables `obs(j)` over [start, start+len), stopping
/// each lag series once sup|L̃^k g̃_a| falls below `tol`·(1 + sup|g̃_a|).
pub fn covariance_table(
    model: &dyn Model,
    obs: &(dyn Fn(i64) -> Result<Vec<f64>> + Sync),
    start: i64,
    len: usize,
    tol: f64,
) -> Result<CovarianceTable> {
    let ops = model.ops();
    let centered: Vec<Vec<f64>> = (0..len).map(|a| center(model, start + a as i64, obs(start + a as i64)?)).collect::<Result<_>>()?;
    let rows: Vec<Result<Vec<f64>>> = (0..len)
        .into_par_iter()
        .map(|a| {
            let ja = start + a as i64;
            let basis = ops.basis(ja)?;
            let scale = 1.0 + sup_on(&basis, &centered[a]);
            let mut g = centered[a].clone();
            let mut row = Vec::new();
            for k in 0..(len - a).min(MAX_LAG + 1) {
                let t = ja + k as i64;
                row.push(dot(&centered[a + k], &g.iter().zip(ops.weights(t)?.iter()).map(|(x, w)| x * w).collect::<Vec<_>>()));
                if a + k + 1 == len {
                    break;
                }
                g = center(model, t + 1, ops.operator(t)?.apply_re(&g))?;
                if sup_on(&ops.basis(t + 1)?, &g) <= tol * scale {
                    break;
                }
                if k == MAX_LAG {
                    return Err(Error::TailNotDecaying { steps: k, last: sup_on(&ops.basis(t + 1)?, &g) });
                }
            }
            Ok(row)
        })
        .collect();
    let c: Vec<Vec<f64>> = rows.into_iter().collect::<Result<_>>()?;
    let max_lag = c.iter().map(|r| r.len().saturating_sub(1)).max().unwrap_or(0);
    Ok(CovarianceTable { start, c, max_lag })
}

pub const COV_TOL: f64 = 1e-17;

/// Var_{m_0}(S_{j,n} f).
pub fn exact_variance(model: &dyn Model, j: i64, n: usize) -> Result<f64> {
    let t = covariance_table(model, &|t| Ok(model.observable(t)?.to_vec()), j, n, COV_TOL)?;
    Ok(t.window_variance(0, n))
}

/// Var(S_{0,n}) for all n ≤ n_max.
pub fn variance_curve(model: &dyn Model, n_max: usize) -> Result<Vec<f64>> {
    Ok(covariance_table(model, &|t| Ok(model.observable(t)?.to_vec()), 0, n_max, COV_TOL)?.prefix_variances())
}

/// One step of the decomposition at time j.
pub struct Step<'a> {
    pub j: i64,
    pub f_tilde: &'a [f64],
    pub u: &'a [f64],
    pub u_next: &'a [f64],
    pub m: &'a [f64],
    /// sup|L̃_j M_j|
    pub martingale_residual: f64,
    /// sup|f̃_j − (M_j + u_{j+1}∘T_j − u_j)|
    pub reconstruction_residual: f64,
}

/// u_J = Σ_{k=1}^{K} L̃^k_{J−k} f̃_{J−k}, truncated once a term's BV norm is below
/// tail_tol; summed in nested form from the largest k down.
pub fn coboundary_at(model: &dyn Model, jj: i64, tail_tol: f64) -> Result<(Vec<f64>, usize)> {
    let ops = model.ops();
    let size = ops.basis(jj)?.len();
    if jj == 0 {
        return Ok((vec![0.0; size], 0));
    }
    let mut k_stop = jj as usize;
    for k in 1..=jj as usize {
        let mut g = model.centered(jj - k as i64)?;
        for s in 0..k {
            g = ops.operator(jj - k as i64 + s as i64)?.apply_re(&g);
        }
        if bv(model, jj, &g)? < tail_tol {
            k_stop = k;
            break;
        }
        if k == MAX_LAG {
            return Err(Error::TailNotDecaying { steps: k, last: bv(model, jj, &g)? });
        }
    }
    let first = jj - k_stop as i64;
    let mut v = vec![0.0; ops.basis(first)?.len()];
    for t in first..jj {
        let f = model.centered(t)?;
        let s: Vec<f64> = f.iter().zip(&v).map(|(a, b)| a + b).collect();
        v = ops.operator(t)?.apply_re(&s);
    }
    Ok((v, k_stop))
}

/// Runs the decomposition on [J, J+n), calling `visit` for each step.
pub fn decompose_stream(model: &dyn Model, jj: i64, n: usize, tail_tol: f64, mut visit: impl FnMut(&Step) -> Result<()>) -> Result<()> {
    if !(tail_tol > 0.0) {
        return Err(Error::InvalidInput("tail_tol must be positive".into()));
    }
    let (mut u, _) = coboundary_at(model, jj, tail_tol)?;
    for j in jj..jj + n as i64 {
        let f = model.centered(j)?;
        let s: Vec<f64> = f.iter().zip(&u).map(|(a, b)| a + b).collect();
        let u_next = model.ops().operator(j)?.apply_re(&s);
        let comp = model.compose_next(j, &u_next)?;
        let m: Vec<f64> = s.iter().zip(&comp).map(|(a, b)| a - b).collect();
        let basis = model.ops().basis(j)?;
        let recon: Vec<f64> = f.iter().zip(&m).zip(&comp).zip(&u).map(|(((f, m), c), u)| f - (m + c - u)).collect();
        let lm = model.apply_minus_composed(j, &s, &u_next)?;
        let step = Step {
            j,
            f_tilde: &f,
            u: &u,
            u_next: &u_next,
            m: &m,
            martingale_residual: sup_on(&model.ops().basis(j + 1)?, &lm),
            reconstruction_residual: sup_on(&basis, &recon),
        };
        visit(&step)?;
        u = u_next;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MartingaleDecomposition {
    pub window: (i64, usize),
    pub f_tilde: Vec<Vec<f64>>,
    /// u_j for j in [J, J+n]
    pub u: Vec<Vec<f64>>,
    pub m: Vec<Vec<f64>>,
    pub tail_tol: f64,
    pub sup_u: f64,
    pub sup_u_bv: f64,
    pub martingale_residual: f64,
    pub reconstruction_residual: f64,
    /// per j: (j, ∥u_j∥_BV, ∥M_j∥_BV, sup|L̃_j M_j|)
    pub rows: Vec<(i64, f64, f64, f64)>,
}

pub fn decompose(model: &dyn Model, jj: i64, n: usize, tail_tol: f64) -> Result<MartingaleDecomposition> {
    let mut d = MartingaleDecomposition {
        window: (jj, n),
        f_tilde: vec![],
        u: vec![],
        m: vec![],
        tail_tol,
        sup_u: 0.0,
        sup_u_bv: 0.0,
        martingale_residual: 0.0,
        reconstruction_residual: 0.0,
        rows: vec![],
    };
    decompose_stream(model, jj, n, tail_tol, |s| {
        if d.u.is_empty() {
            d.u.push(s.u.to_vec());
        }
        d.u.push(s.u_next.to_vec());
        d.f_tilde.push(s.f_tilde.to_vec());
        d.m.push(s.m.to_vec());
        d.martingale_residual = d.martingale_residual.max(s.martingale_residual);
        d.reconstruction_residual = d.reconstruction_residual.max(s.reconstruction_residual);
        d.rows.push((s.j, bv(model, s.j, s.u)?, bv(model, s.j, s.m)?, s.martingale_residual));
        Ok(())
    })?;
    for (k, u) in d.u.iter().enumerate() {
        let j = jj + k as i64;
        d.sup_u = d.sup_u.max(sup_on(&model.ops().basis(j)?, u));
        d.sup_u_bv = d.sup_u_bv.max(bv(model, j, u)?);
    }
    Ok(d)
}

impl MartingaleDecomposition {
    /// CSV rows j,u_bv,m_bv,martingale_residual.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("j,u_bv,m_bv,martingale_residual\n");
        for (j, u, m, r) in &self.rows {
            s.push_str(&format!("{j},{u:e},{m:e},{r:e}\n"));
        }
        s
    }
}

/// max_j ∥u_j(tol) − u_j(tol/2)∥_BV over the window.
pub fn tail_soundness(model: &dyn Model, jj: i64, n: usize, tail_tol: f64) -> Result<f64> {
    let a = decompose(model, jj, n, tail_tol)?;
    let b = decompose(model, jj, n, tail_tol / 2.0)?;
    let mut worst = 0.0f64;
    for (k, (x, y)) in a.u.iter().zip(&b.u).enumerate() {
        let d: Vec<f64> = x.iter().zip(y).map(|(p, q)| p - q).collect();
        worst = worst.max(bv(model, jj + k as i64, &d)?);
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Verdict {
    Bounded,
    Divergent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DichotomyReport {
    pub verdict: Verdict,
    /// Var(S_n), n = 0..=n_max
    pub var_s: Vec<f64>,
    /// Σ_{j<n} Var(M_j∘T_0^j), n = 0..=n_max
    pub sum_var_m: Vec<f64>,
    pub sup_u: f64,
    /// max_n (|∥S_n∥₂ − (ΣVar M)^{1/2}| − 2 sup|u|); ≤ 0 when the bound holds
    pub approx_excess: f64,
    /// Σ Var(M_j) over the last quarter of the window
    pub tail_increment: f64,
    pub threshold: f64,
}

/// Threshold on the last-quarter martingale variance for a bounded verdict (heuristic).
pub const BOUNDED_THRESHOLD: f64 = 1e-6;

pub fn variance_dichotomy(model: &dyn Model, n_max: usize, tail_tol: f64) -> Result<DichotomyReport> {
    let var_s = variance_curve(model, n_max)?;
    let mut sum_var_m = vec![0.0];
    let mut sup_u = 0.0f64;
    decompose_stream(model, 0, n_max, tail_tol, |s| {
        let w = model.ops().weights(s.j)?;
        let v: f64 = s.m.iter().zip(w.iter()).map(|(m, w)| m * m * w).sum();
        sum_var_m.push(sum_var_m.last().unwrap() + v);
        sup_u = sup_u.max(sup_on(&model.ops().basis(s.j + 1)?, s.u_next));
        Ok(())
    })?;
    let approx_excess = var_s
        .iter()
        .zip(&sum_var_m)
        .map(|(a, b)| (a.max(0.0).sqrt() - b.max(0.0).sqrt()).abs() - 2.0 * sup_u)
        .fold(f64::NEG_INFINITY, f64::max);
    let q = n_max - n_max / 4;
    let tail_increment = sum_var_m[n_max] - sum_var_m[q];
    let verdict = if tail_increment < BOUNDED_THRESHOLD { Verdict::Bounded } else { Verdict::Divergent };
    Ok(DichotomyReport { verdict, var_s, sum_var_m, sup_u, approx_excess, tail_increment, threshold: BOUNDED_THRESHOLD })
}

/// Var(S_{j,n}Q)/(1 + Var(S_{j,n}f)) with Q_k = M_k².
pub fn quadratic_variation_ratio(model: &dyn Model, j: i64, n: usize, tail_tol: f64) -> Result<f64> {
    let d = decompose(model, j, n, tail_tol)?;
    let q: Vec<Vec<f64>> = d.m.iter().map(|m| m.iter().map(|x| x * x).collect()).collect();
    let tq = covariance_table(model, &|t| Ok(q[(t - j) as usize].clone()), j, n, COV_TOL)?;
    let vq = tq.window_variance(0, n);
    let vf = exact_variance(model, j, n)?;
    Ok(vq / (1.0 + vf))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub p: f64,
    /// (n, ∥S̄_n∥_p, ∥S̄_n∥₂, ratio)
    pub rows: Vec<(usize, f64, f64, f64)>,
    /// least-squares slope of the ratio against log2 n
    pub slope_log2: f64,
    /// least-squares slope of the ratio against ln n
    pub slope_ln: f64,
}

pub fn moment_ratio_from(samples: &Samples, p: f64) -> Result<MomentReport> {
    if samples.count() < 2 {
        return Err(Error::InvalidInput("need samples".into()));
    }
    let rows: Vec<(usize, f64, f64, f64)> = samples
        .n_list
        .iter()
        .zip(&samples.sums)
        .map(|(&n, s)| {
            let np = lp_norm(s, p);
            let n2 = lp_norm(s, 2.0);
            (n, np, n2, np / (1.0 + n2))
        })
        .collect();
    let x2: Vec<f64> = rows.iter().map(|r| (r.0 as f64).log2()).collect();
    let xe: Vec<f64> = rows.iter().map(|r| (r.0 as f64).ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.3).collect();
    Ok(MomentReport { p, slope_log2: linear_fit(&x2, &y)?.slope, slope_ln: linear_fit(&xe, &y)?.slope, rows })
}

/// ∥S̄_n∥_p/(1 + ∥S̄_n∥₂) by Monte Carlo; p ∈ {4, 8}.
pub fn moment_ratio(model: &dyn Model, n_list: &[usize], p: u32, sample_count: usize, seed: u64) -> Result<MomentReport> {
    if p != 4 && p != 8 {
        return Err(Error::InvalidInput("p must be 4 or 8".into()));
    }
    let s = simulate(model, n_list, sample_count, seed, "moments")?;
    moment_ratio_from(&s, p as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitReport {
    pub paths: usize,
    pub n: usize,
    /// max over paths and k ≤ n of |S̄_k − Σ_{j<k} M_j(x_j)|
    pub max_gap: f64,
    pub sup_u: f64,
    /// (∥D_n∥_4, ∥E_n∥_2^{1/2}) with D_n = Σ M_j∘T_0^j, E_n = Σ M_j²∘T_0^j
    pub d4: f64,
    pub e2_sqrt: f64,
    pub burkholder_lower: bool,
    pub burkholder_upper: bool,
}

/// Burkholder constants for p = 4: (p−1)^{-1} and p−1.
pub const BURKHOLDER_4: (f64, f64) = (1.0 / 3.0, 3.0);

/// Samples orbits, evaluates the decomposition along them and checks
/// |S_n − S_nM| ≤ 2 sup|u| and the p = 4 Burkholder inequalities.
pub fn orbit_checks(model: &dyn Model, n: usize, paths: usize, tail_tol: f64, seed: u64) -> Result<OrbitReport> {
    let d = decompose(model, 0, n, tail_tol)?;
    let means: Vec<f64> = (0..n).map(|j| model.mean(j as i64)).collect::<Result<_>>()?;
    let per: Vec<Result<(f64, f64, f64)>> = (0..paths)
        .into_par_iter()
        .map(|s| {
            let mut rng = substream(seed, "orbit", s as u64);
            let pts: Vec<PathPoint> = model.sample_points(&mut rng, n)?;
            let (mut sf, mut sm, mut e, mut gap) = (0.0, 0.0, 0.0, 0.0f64);
            for j in 0..n {
                let jj = j as i64;
                let ft = model.observable_point(jj, &pts[j])? - means[j];
                let m = ft + model.eval_point(jj, &d.u[j], &pts[j]) - model.eval_point(jj + 1, &d.u[j + 1], &pts[j + 1]);
                sf += ft;
                sm += m;
                e += m * m;
                gap = gap.max((sf - sm).abs());
            }
            Ok((gap, sm, e))
        })
        .collect();
    let per: Vec<(f64, f64, f64)> = per.into_iter().collect::<Result<_>>()?;
    let max_gap = per.iter().map(|p| p.0).fold(0.0, f64::max);
    let dn: Vec<f64> = per.iter().map(|p| p.1).collect();
    let en: Vec<f64> = per.iter().map(|p| p.2).collect();
    let d4 = lp_norm(&dn, 4.0);
    let e2_sqrt = lp_norm(&en, 2.0).sqrt();
    Ok(OrbitReport {
        paths,
        n,
        max_gap,
        sup_u: d.sup_u,
        d4,
        e2_sqrt,
        burkholder_lower: BURKHOLDER_4.0 * e2_sqrt <= d4,
        burkholder_upper: d4 <= BURKHOLDER_4.1 * e2_sqrt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funcspace::Grid;
    use crate::gibbs;
    use crate::maps::{IntervalObservable, IntervalSequence, IntervalStage, PairObservable, SftSequence, SftStage};
    use crate::model::{IntervalModel, SftModel};

    fn doubling(f: IntervalObservable, cells: usize) -> std::sync::Arc<IntervalModel> {
        IntervalModel::new(IntervalSequence::autonomous(IntervalStage::doubling(), f), Grid::new(cells).unwrap(), None).unwrap()
    }

    fn cos1() -> IntervalObservable {
        IntervalObservable::Cos { amp: 1.0, freq: 1.0 }
    }

    #[test]
    fn doubling_cos_is_a_martingale() {
        let m = doubling(cos1(), 512);
        let d = decompose(m.as_ref(), 0, 20, 1e-12).unwrap();
        assert!(d.sup_u < 1e-12);
        assert!(d.martingale_residual < 1e-12 && d.reconstruction_residual < 1e-12);
        assert!((exact_variance(m.as_ref(), 0, 100).unwrap() - 50.0).abs() < 1e-6);
        let r = variance_dichotomy(m.as_ref(), 400, 1e-12).unwrap();
        assert_eq!(r.verdict, Verdict::Divergent);
        assert!((r.var_s[400] - 200.0).abs() < 1e-6);
    }

    #[test]
    fn coboundary_input() {
        let v = IntervalObservable::Cos { amp: 0.2, freq: 1.0 };
        // collocation error in M_j is O(G^-2): about 2.4e-7 at G = 4096
        let m = doubling(IntervalObservable::Coboundary { v: Box::new(v.clone()) }, 1 << 16);
        let d = decompose(m.as_ref(), 0, 30, 1e-12).unwrap();
        // u_0 = 0 puts the boundary term into M_0 = −v; afterwards M_j = 0 and u_j = v
        let max_m = d.m[1..].iter().flatten().fold(0.0f64, |a, x| a.max(x.abs()));
        assert!(max_m < 1e-8, "{max_m}");
        let g = Grid::new(1 << 16).unwrap();
        let diff = d.u[10].iter().enumerate().map(|(i, u)| (u - 0.2 * (std::f64::consts::TAU * g.node(i)).cos()).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-8, "{diff}");
        let m = doubling(IntervalObservable::Coboundary { v: Box::new(v) }, 4096);
        let r = variance_dichotomy(m.as_ref(), 2000, 1e-12).unwrap();
        assert_eq!(r.verdict, Verdict::Bounded);
        assert!(r.var_s.iter().all(|x| *x <= 4.0 * 0.04 + 1e-12));
        assert!(r.approx_excess <= 0.0);
    }

    #[test]
    fn rademacher_variance_and_qv() {
        let seq = SftSequence::autonomous(SftStage::full_shift(2, 0.5f64.ln()), PairObservable::from_symbols(&[1.0, -1.0], 2));
        let sys = gibbs::build(&seq, (0, 60), 40).unwrap();
        let m = SftModel::new(sys);
        assert!((exact_variance(m.as_ref(), 0, 20).unwrap() - 20.0).abs() < 1e-12);
        let d = decompose(m.as_ref(), 0, 30, 1e-12).unwrap();
        assert!(d.martingale_residual < 1e-13 && d.sup_u < 1e-13);
        // M_j = ±1, Q ≡ 1 has zero variance
        assert!(quadratic_variation_ratio(m.as_ref(), 0, 20, 1e-12).unwrap() < 1e-20);
    }

    #[test]
    fn qv_ratio_doubling() {
        let m = doubling(cos1(), 1024);
        let n = 200;
        let r = quadratic_variation_ratio(m.as_ref(), 0, n, 1e-12).unwrap();
        let expected = (n as f64 / 8.0) / (1.0 + n as f64 / 2.0);
        assert!((r - expected).abs() < 1e-6, "{r} {expected}");
    }

    #[test]
    fn sft_decomposition_and_orthogonality() {
        let st = SftStage::new("r", vec![vec![true, true, false], vec![true, false, true], vec![true, true, true]], vec![vec![0.3, -0.2, 0.0], vec![0.1, 0.0, 0.4], vec![-0.3, 0.2, 0.1]]).unwrap();
        let f = PairObservable { table: vec![vec![1.0, -0.5, 0.0], vec![0.2, 0.0, 0.7], vec![-1.0, 0.3, 0.4]] };
        let seq = SftSequence::autonomous(st, f);
        let m = SftModel::new(gibbs::build(&seq, (0, 120), 60).unwrap());
        let n = 40;
        let d = decompose(m.as_ref(), 0, n, 1e-14).unwrap();
        assert!(d.martingale_residual < 1e-12, "{}", d.martingale_residual);
        assert!(d.reconstruction_residual < 1e-12);
        let ms = d.m.clone();
        let t = covariance_table(m.as_ref(), &|j| Ok(ms[j as usize].clone()), 0, n, COV_TOL).unwrap();
        let total = t.window_variance(0, n);
        let diag: f64 = (0..n).map(|a| t.c[a][0]).sum();
        assert!((total - diag).abs() < 1e-8);
        let o = orbit_checks(m.as_ref(), 60, 2000, 1e-14, 5).unwrap();
        assert!(o.max_gap <= 2.0 * o.sup_u + 1e-12);
        assert!(o.burkholder_lower && o.burkholder_upper);
        assert!(tail_soundness(m.as_ref(), 20, 10, 1e-6).unwrap() < 1e-5);
    }
}

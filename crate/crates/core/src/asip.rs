//! Block structure behind the almost sure invariance principle: variance
//! block plans, the k_n band, block covariances, characteristic-function
//! factorization gaps, twisted norm scans and Monte Carlo block diagnostics.

use crate::error::{Error, Result};
use crate::fit::{geometric_fit, linear_fit, GeometricFit, LinearFit};
use crate::funcspace::bv_of;
use crate::martingale::{covariance_table, CovarianceTable, COV_TOL};
use crate::model::Model;
use crate::montecarlo::{centering, lp_norm, simulate, SHARD};
use crate::rng::substream;
use crate::transfer::sample_bv;
use crate::C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Blocks I_1..I_k tiling [0, n) with B ≤ Var(S_I) ≤ 2B, plus a flagged tail.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockPlan {
    pub b: f64,
    pub n: usize,
    /// closed blocks as (start, len)
    pub blocks: Vec<(usize, usize)>,
    pub variances: Vec<f64>,
    /// trailing block that never reached B: (start, len, variance)
    pub partial: Option<(usize, usize, f64)>,
}

impl BlockPlan {
    pub fn k_n(&self) -> usize {
        self.blocks.len()
    }

    /// Every closed block lies in [B, 2B].
    pub fn within_bounds(&self) -> bool {
        self.variances.iter().all(|v| *v >= self.b && *v <= 2.0 * self.b)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("block,start,len,variance,partial\n");
        for (i, ((a, l), v)) in self.blocks.iter().zip(&self.variances).enumerate() {
            s += &format!("{i},{a},{l},{v:e},0\n");
        }
        if let Some((a, l, v)) = self.partial {
            s += &format!("{},{a},{l},{v:e},1\n", self.blocks.len());
        }
        s
    }
}

/// Covariance table of f over [0, n).
pub fn observable_table(model: &dyn Model, n: usize) -> Result<CovarianceTable> {
    covariance_table(model, &|t| Ok(model.observable(t)?.to_vec()), 0, n, COV_TOL)
}

/// Greedy left-to-right plan: a block closes at the first index where its
/// variance reaches B.
pub fn plan_from_table(table: &CovarianceTable, b: f64) -> Result<BlockPlan> {
    if !(b > 0.0) {
        return Err(Error::InvalidInput("B must be positive".into()));
    }
    let n = table.len();
    let mut blocks = Vec::new();
    let mut variances = Vec::new();
    let (mut a, mut v) = (0usize, 0.0f64);
    let mut max_var = 0.0f64;
    for e in 0..n {
        // Var(S_[a, e+1)) − Var(S_[a, e))
        let mut inc = table.c[e][0];
        for s in a..e {
            if let Some(x) = table.c[s].get(e - s) {
                inc += 2.0 * x;
            }
        }
        v += inc;
        max_var = max_var.max(v);
        if v >= b {
            if v > 2.0 * b {
                return Err(Error::BlockOvershoot { increment: inc, b });
            }
            blocks.push((a, e + 1 - a));
            variances.push(v);
            a = e + 1;
            v = 0.0;
        }
    }
    if blocks.is_empty() {
        return Err(Error::SigmaBounded { max_var });
    }
    let partial = (a < n).then_some((a, n - a, v));
    Ok(BlockPlan { b, n, blocks, variances, partial })
}

pub fn plan_blocks(model: &dyn Model, n: usize, b: f64) -> Result<BlockPlan> {
    plan_from_table(&observable_table(model, n)?, b)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnBand {
    /// (n, k_n, σ_n², k_n/σ_n²)
    pub rows: Vec<(usize, usize, f64, f64)>,
    /// max ratio / min ratio
    pub width: f64,
}

/// k_n/σ_n² for plans built with one B; σ_n² from the same table.
pub fn kn_band(model: &dyn Model, n_list: &[usize], b: f64) -> Result<KnBand> {
    let n_max = *n_list.iter().max().ok_or_else(|| Error::InvalidInput("empty n list".into()))?;
    let table = observable_table(model, n_max)?;
    let prefix = table.prefix_variances();
    let mut rows = Vec::new();
    for &n in n_list {
        let sub = CovarianceTable { start: table.start, c: table.c[..n].to_vec(), max_lag: table.max_lag };
        let plan = plan_from_table(&sub, b)?;
        let s2 = prefix[n];
        rows.push((n, plan.k_n(), s2, plan.k_n() as f64 / s2));
    }
    let max = rows.iter().map(|r| r.3).fold(0.0, f64::max);
    let min = rows.iter().map(|r| r.3).fold(f64::INFINITY, f64::min);
    Ok(KnBand { rows, width: max / min })
}

/// Cov(A_i, A_l) for blocks i < l from the lag table.
pub fn block_covariance(table: &CovarianceTable, bi: (usize, usize), bl: (usize, usize)) -> f64 {
    let mut c = 0.0;
    for s in bi.0..bi.0 + bi.1 {
        let row = &table.c[s];
        let lo = bl.0 - s;
        let hi = (bl.0 + bl.1 - s).min(row.len());
        if lo < hi {
            c += row[lo..hi].iter().sum::<f64>();
        }
    }
    c
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockCovReport {
    /// (k, max_j |Cov(A_j, A_{j+k})|)
    pub cov: Vec<(usize, f64)>,
    /// None when every covariance sits below the floor
    pub fit: Option<GeometricFit>,
}

/// Covariances below this are treated as zero in the decay fit.
pub const COV_FLOOR: f64 = 1e-14;

pub fn block_cov_decay(table: &CovarianceTable, plan: &BlockPlan, k_max: usize) -> Result<BlockCovReport> {
    let kb = plan.blocks.len();
    let mut cov = Vec::new();
    for k in 1..=k_max.min(kb.saturating_sub(1)) {
        let m = (0..kb - k).map(|j| block_covariance(table, plan.blocks[j], plan.blocks[j + k]).abs()).fold(0.0, f64::max);
        cov.push((k, m));
    }
    let (ks, vs): (Vec<f64>, Vec<f64>) = cov.iter().filter(|c| c.1 > COV_FLOOR).map(|c| (c.0 as f64, c.1)).unzip();
    let fit = if ks.len() >= 3 { Some(geometric_fit(&ks, &vs)?) } else { None };
    Ok(BlockCovReport { cov, fit })
}

/// E_{m_0} exp(Σ_j z_j f_j∘T_0^j) = m̃_N(L̃_{N−1,z_{N−1}} ⋯ L̃_{0,z_0} 1).
pub fn characteristic(model: &dyn Model, j0: i64, zs: &[C64]) -> Result<C64> {
    let ops = model.ops();
    let mut v = vec![C64::new(1.0, 0.0); ops.basis(j0)?.len()];
    for (k, z) in zs.iter().enumerate() {
        let t = j0 + k as i64;
        v = if *z == C64::new(0.0, 0.0) { ops.operator(t)?.apply(&v) } else { model.twisted(t, *z)?.apply(&v) };
    }
    let w = ops.weights(j0 + zs.len() as i64)?;
    Ok(v.iter().zip(w.iter()).map(|(a, b)| a * b).sum())
}

/// Blocks of a factorization test: left groups, a gap of k steps, right groups.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GouzelSetup {
    pub start: i64,
    pub left: Vec<(usize, f64)>,
    pub right: Vec<(usize, f64)>,
}

impl GouzelSetup {
    fn twists(&self, k: usize, use_left: bool, use_right: bool) -> Vec<C64> {
        let mut zs = Vec::new();
        for &(len, t) in &self.left {
            zs.extend(std::iter::repeat_n(C64::new(0.0, if use_left { t } else { 0.0 }), len));
        }
        zs.extend(std::iter::repeat_n(C64::new(0.0, 0.0), k));
        for &(len, t) in &self.right {
            zs.extend(std::iter::repeat_n(C64::new(0.0, if use_right { t } else { 0.0 }), len));
        }
        zs
    }
}

/// |E e^{i(Σ_left + Σ_right)} − E e^{iΣ_left} · E e^{iΣ_right}|.
pub fn gouzel_gap(model: &dyn Model, setup: &GouzelSetup, k: usize) -> Result<f64> {
    if setup.left.len() + setup.right.len() > 6 || setup.left.iter().chain(&setup.right).any(|b| b.0 > 64 || b.0 == 0) {
        return Err(Error::InvalidInput("at most 6 groups of length 1..=64".into()));
    }
    let joint = characteristic(model, setup.start, &setup.twists(k, true, true))?;
    let left = characteristic(model, setup.start, &setup.twists(k, true, false))?;
    let right = characteristic(model, setup.start, &setup.twists(k, false, true))?;
    Ok((joint - left * right).norm())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GouzelReport {
    pub gaps: Vec<(usize, f64)>,
    pub fit: Option<GeometricFit>,
}

/// Gap decay floor.
pub const GAP_FLOOR: f64 = 1e-15;

pub fn gouzel_scan(model: &dyn Model, setup: &GouzelSetup, ks: &[usize]) -> Result<GouzelReport> {
    let gaps: Vec<(usize, f64)> = ks.par_iter().map(|&k| Ok((k, gouzel_gap(model, setup, k)?))).collect::<Result<_>>()?;
    let (x, y): (Vec<f64>, Vec<f64>) = gaps.iter().filter(|g| g.0 > 0 && g.1 > GAP_FLOOR).map(|g| (g.0 as f64, g.1)).unzip();
    let fit = if x.len() >= 3 { Some(geometric_fit(&x, &y)?) } else { None };
    Ok(GouzelReport { gaps, fit })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormScan {
    /// (t, j, n, ∥L̃^n 1∥_BV, max over sampled g of ∥L̃^n g∥_BV/∥g∥_BV, Var(S_{j,n}))
    pub rows: Vec<(f64, i64, usize, f64, f64, f64)>,
    pub sup: f64,
    /// per t: fit of ln ∥L̃^n 1∥ against Var(S_{j,n}); −slope estimates the envelope exponent
    pub envelopes: Vec<(f64, LinearFit)>,
    /// slope of ln max_{j,t} norm over the second half of n
    pub late_growth: f64,
}

/// Norms of L̃^n_{j,it} in BV on the grid of t, starts js and n ≤ n_max.
pub fn twisted_norm_scan(model: &dyn Model, ts: &[f64], js: &[i64], n_max: usize, samples: usize, seed: u64) -> Result<NormScan> {
    let ops = model.ops();
    let cells: Vec<(f64, i64)> = ts.iter().flat_map(|&t| js.iter().map(move |&j| (t, j))).collect();
    let per: Vec<Result<Vec<(f64, i64, usize, f64, f64, f64)>>> = cells
        .par_iter()
        .enumerate()
        .map(|(ci, &(t, j))| {
            let mut rng = substream(seed, "norm_scan", ci as u64);
            let basis = ops.basis(j)?;
            let mut gs: Vec<Vec<C64>> = vec![vec![C64::new(1.0, 0.0); basis.len()]];
            gs.extend(sample_bv(&basis, samples, &mut rng).into_iter().map(|g| g.into_iter().map(|x| C64::new(x, 0.0)).collect()));
            let w0 = ops.weights(j)?;
            let norms0: Vec<f64> = gs.iter().map(|g| bv_of(&basis, g, &w0).max(1e-300)).collect();
            let table = covariance_table(model, &|s| Ok(model.observable(s)?.to_vec()), j, n_max, COV_TOL)?;
            let var = table.prefix_variances();
            let z = C64::new(0.0, t);
            let mut out = Vec::new();
            for n in 1..=n_max {
                let s = j + n as i64 - 1;
                let op = model.twisted(s, z)?;
                gs.iter_mut().for_each(|g| *g = op.apply(g));
                let b = ops.basis(s + 1)?;
                let w = ops.weights(s + 1)?;
                let one = bv_of(&b, &gs[0], &w);
                let sampled = gs.iter().zip(&norms0).map(|(g, n0)| bv_of(&b, g, &w) / n0).fold(0.0, f64::max);
                out.push((t, j, n, one, sampled, var[n]));
            }
            Ok(out)
        })
        .collect();
    let mut rows = Vec::new();
    for p in per {
        rows.extend(p?);
    }
    let sup = rows.iter().map(|r| r.4).fold(0.0, f64::max);
    let mut envelopes = Vec::new();
    for &t in ts {
        if t == 0.0 {
            continue;
        }
        let (x, y): (Vec<f64>, Vec<f64>) = rows.iter().filter(|r| r.0 == t && r.3 > 1e-300).map(|r| (r.5, r.3.ln())).unzip();
        if x.len() >= 2 {
            envelopes.push((t, linear_fit(&x, &y)?));
        }
    }
    let half = n_max / 2;
    let (x, y): (Vec<f64>, Vec<f64>) = (half.max(1)..=n_max)
        .map(|n| (n as f64, rows.iter().filter(|r| r.2 == n).map(|r| r.4).fold(0.0, f64::max).max(1e-300).ln()))
        .unzip();
    let late_growth = if x.len() >= 2 { linear_fit(&x, &y)?.slope } else { 0.0 };
    Ok(NormScan { rows, sup, envelopes, late_growth })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockMatch {
    /// per block: (skewness, kurtosis) of the centered block sum
    pub moments: Vec<(f64, f64)>,
    pub max_abs_skew: f64,
    pub max_kurtosis_gap: f64,
    /// max |corr(A_i, A_l)| over pairs among the first 32 blocks
    pub max_abs_corr: f64,
    pub count: usize,
}

/// Monte Carlo moments and correlations of the closed blocks of a plan.
pub fn block_gaussian_match(model: &dyn Model, plan: &BlockPlan, count: usize, seed: u64) -> Result<BlockMatch> {
    let ends: Vec<usize> = plan.blocks.iter().map(|(a, l)| a + l).collect();
    let s = simulate(model, &ends, count, seed, "blocks")?;
    let blocks: Vec<Vec<f64>> = (0..ends.len())
        .map(|i| if i == 0 { s.sums[0].clone() } else { s.sums[i].iter().zip(&s.sums[i - 1]).map(|(a, b)| a - b).collect() })
        .collect();
    let nf = count as f64;
    let moments: Vec<(f64, f64)> = blocks
        .iter()
        .map(|x| {
            let m = x.iter().sum::<f64>() / nf;
            let (m2, m3, m4) = x.iter().fold((0.0, 0.0, 0.0), |(a, b, c), v| {
                let d = v - m;
                (a + d * d, b + d * d * d, c + d * d * d * d)
            });
            let (m2, m3, m4) = (m2 / nf, m3 / nf, m4 / nf);
            (m3 / m2.powf(1.5), m4 / (m2 * m2))
        })
        .collect();
    let q = blocks.len().min(32);
    let sd: Vec<f64> = blocks[..q].iter().map(|x| lp_norm(x, 2.0)).collect();
    let mut max_abs_corr = 0.0f64;
    for i in 0..q {
        for l in i + 1..q {
            let c = blocks[i].iter().zip(&blocks[l]).map(|(a, b)| a * b).sum::<f64>() / nf;
            max_abs_corr = max_abs_corr.max((c / (sd[i] * sd[l])).abs());
        }
    }
    Ok(BlockMatch {
        max_abs_skew: moments.iter().map(|m| m.0.abs()).fold(0.0, f64::max),
        max_kurtosis_gap: moments.iter().map(|m| (m.1 - 3.0).abs()).fold(0.0, f64::max),
        moments,
        max_abs_corr,
        count,
    })
}

/// |Σ_j Var(A_j) − V_n| for the plan, exact.
pub fn variance_sum_gap(table: &CovarianceTable, plan: &BlockPlan) -> (f64, f64) {
    let covered: usize = plan.blocks.iter().map(|b| b.1).sum();
    let v_n = table.window_variance(0, covered);
    let s: f64 = plan.variances.iter().sum();
    (v_n, (s - v_n).abs())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoobReport {
    /// per block ∥max_{s ∈ I_j} |S̄_{[a_j, s]}|∥_4 / √Var(A_j)
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
}

/// Maximal in-block deviations: the L⁴ norm of the running maximum,
/// relative to the block standard deviation.
pub fn doob_maximal(model: &dyn Model, plan: &BlockPlan, count: usize, seed: u64) -> Result<DoobReport> {
    let covered: usize = plan.blocks.iter().map(|b| b.1).sum();
    let center = centering(model, covered)?;
    let sampler = model.path_sampler(covered)?;
    let kb = plan.blocks.len();
    let shards = count.div_ceil(SHARD);
    let parts: Vec<Result<Vec<f64>>> = (0..shards)
        .into_par_iter()
        .map(|shard| {
            let mut rng = substream(seed, "doob", shard as u64);
            let m = SHARD.min(count - shard * SHARD);
            let mut acc = vec![0.0; kb];
            let mut path = vec![0.0; covered];
            for _ in 0..m {
                sampler.sample(&mut rng, &mut path)?;
                for (bi, &(a, l)) in plan.blocks.iter().enumerate() {
                    let (mut s, mut mx) = (0.0f64, 0.0f64);
                    for t in a..a + l {
                        s += path[t] - (center[t + 1] - center[t]);
                        mx = mx.max(s.abs());
                    }
                    acc[bi] += mx.powi(4);
                }
            }
            Ok(acc)
        })
        .collect();
    let mut acc = vec![0.0; kb];
    for p in parts {
        for (a, b) in acc.iter_mut().zip(p?) {
            *a += b;
        }
    }
    let ratios: Vec<f64> = acc.iter().zip(&plan.variances).map(|(a, v)| (a / count as f64).powf(0.25) / v.sqrt()).collect();
    Ok(DoobReport { max_ratio: ratios.iter().cloned().fold(0.0, f64::max), ratios })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funcspace::Grid;
    use crate::gibbs;
    use crate::maps::{IntervalObservable, IntervalSequence, IntervalStage, PairObservable, SftSequence, SftStage};
    use crate::model::{IntervalModel, SftModel};

    fn doubling_cos() -> std::sync::Arc<IntervalModel> {
        let seq = IntervalSequence::autonomous(IntervalStage::doubling(), IntervalObservable::Cos { amp: 1.0, freq: 1.0 });
        IntervalModel::new(seq, Grid::new(1024).unwrap(), None).unwrap()
    }

    fn rademacher() -> std::sync::Arc<SftModel> {
        let seq = SftSequence::autonomous(SftStage::full_shift(2, 0.5f64.ln()), PairObservable::from_symbols(&[1.0, -1.0], 2));
        SftModel::new(gibbs::build(&seq, (0, 600), 40).unwrap())
    }

    #[test]
    fn doubling_plan() {
        let m = doubling_cos();
        let p = plan_blocks(m.as_ref(), 500, 25.0).unwrap();
        // per-step variance 1/2
        assert!(p.blocks.iter().all(|b| b.1 == 50));
        assert!(p.within_bounds() && p.k_n() == 10 && p.partial.is_none());
        let mut cover = 0;
        for b in &p.blocks {
            assert_eq!(b.0, cover);
            cover += b.1;
        }
        let band = kn_band(m.as_ref(), &[256, 512, 1024], 25.0).unwrap();
        // k_n ≈ σ_n²/B
        assert!(band.rows.iter().all(|r| (r.3 - 1.0 / 25.0).abs() < 0.003), "{band:?}");
        let table = observable_table(m.as_ref(), 500).unwrap();
        let cov = block_cov_decay(&table, &p, 5).unwrap();
        assert!(cov.cov.iter().all(|c| c.1 < 1e-12) && cov.fit.is_none());
        assert!(variance_sum_gap(&table, &p).1 < 1e-9);
    }

    #[test]
    fn coboundary_and_overshoot() {
        let v = IntervalObservable::Cos { amp: 0.2, freq: 1.0 };
        let seq = IntervalSequence::autonomous(IntervalStage::doubling(), IntervalObservable::Coboundary { v: Box::new(v) });
        let m = IntervalModel::new(seq, Grid::new(1024).unwrap(), None).unwrap();
        assert!(matches!(plan_blocks(m.as_ref(), 200, 5.0), Err(Error::SigmaBounded { .. })));
        let r = rademacher();
        assert!(matches!(plan_blocks(r.as_ref(), 50, 0.4), Err(Error::BlockOvershoot { .. })));
        let p = plan_blocks(r.as_ref(), 50, 4.0).unwrap();
        assert!(p.blocks.iter().all(|b| b.1 == 4) && p.partial == Some((48, 2, 2.0)));
    }

    #[test]
    fn rademacher_characteristic_and_norms() {
        let r = rademacher();
        let t = 0.3;
        let setup = GouzelSetup { start: 0, left: vec![(5, t)], right: vec![(4, -0.2)] };
        assert!(gouzel_gap(r.as_ref(), &setup, 0).unwrap() < 1e-15);
        let zero = GouzelSetup { start: 0, left: vec![(3, 0.0)], right: vec![(3, 0.0)] };
        assert!(gouzel_gap(r.as_ref(), &zero, 4).unwrap() < 1e-15);
        let phi = characteristic(r.as_ref(), 0, &vec![C64::new(0.0, t); 7]).unwrap();
        assert!((phi - t.cos().powi(7)).norm() < 1e-14);
        let scan = twisted_norm_scan(r.as_ref(), &[0.0, t], &[0], 30, 4, 1).unwrap();
        for row in scan.rows.iter().filter(|x| x.0 == t) {
            assert!((row.3 - t.cos().powi(row.2 as i32)).abs() < 1e-13);
        }
        let env = &scan.envelopes[0].1;
        assert!((env.slope - t.cos().ln()).abs() < 1e-12 && env.r2 > 0.999999);
        assert!(scan.late_growth < 1e-9);
    }

    #[test]
    fn gouzel_decay_on_mixing_sft() {
        let st = SftStage::new("g", vec![vec![true, true, false], vec![true, false, true], vec![true, true, true]], vec![vec![0.1, -0.3, 0.0], vec![0.2, 0.0, 0.4], vec![-0.5, 0.3, 0.0]]).unwrap();
        let seq = SftSequence::autonomous(st, PairObservable::from_symbols(&[1.0, -0.5, 0.2], 3));
        let m = SftModel::new(gibbs::build(&seq, (0, 200), 60).unwrap());
        let setup = GouzelSetup { start: 3, left: vec![(4, 0.3), (3, -0.2)], right: vec![(5, 0.25)] };
        let rep = gouzel_scan(m.as_ref(), &setup, &(1..=40).collect::<Vec<_>>()).unwrap();
        let fit = rep.fit.unwrap();
        assert!(fit.rate < 1.0 && fit.r2 > 0.9, "{fit:?}");
        assert!(rep.gaps.last().unwrap().1 < 1e-12, "{rep:?}");
    }

    #[test]
    fn block_diagnostics() {
        let r = rademacher();
        let p = plan_blocks(r.as_ref(), 400, 25.0).unwrap();
        let bm = block_gaussian_match(r.as_ref(), &p, 20_000, 5).unwrap();
        // binomial(25) kurtosis 3 − 2/25
        assert!(bm.max_kurtosis_gap < 0.2 && bm.max_abs_corr < 0.05 && bm.max_abs_skew < 0.1, "{bm:?}");
        let d = doob_maximal(r.as_ref(), &p, 4000, 6).unwrap();
        assert!(d.max_ratio < 4.0 / 3.0 * 3f64.powf(0.25) * 1.2, "{d:?}");
    }
}

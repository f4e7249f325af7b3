//! Sequential Gibbs measures on subshifts of finite type with memory-1
//! potentials: triplets, cylinder masses, sampling, the Sinai reduction of
//! two-sided observables, and λ-equivalence.

use crate::error::{Error, Result};
use crate::funcspace::Basis;
use crate::maps::{Schedule, SftSequence, SftStage};
use crate::rpf::{build_triplet, Normalization, RpfTriplet};
use crate::transfer::{sft_raw, OpKind, OperatorSequence, TransferMatrix};
use crate::C64;
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

/// Raw symbol-basis operators M_{b,a} = A_{ab} e^{φ(a,b)}.
pub struct SftRawOperators<'a> {
    pub seq: &'a SftSequence,
    cache: Mutex<HashMap<usize, TransferMatrix>>,
}

impl<'a> SftRawOperators<'a> {
    pub fn new(seq: &'a SftSequence) -> Self {
        SftRawOperators { seq, cache: Mutex::new(HashMap::new()) }
    }
}

fn stage_signed(seq: &SftSequence, j: i64) -> Result<&SftStage> {
    seq.stage_at_signed(j)
}

impl OperatorSequence for SftRawOperators<'_> {
    fn operator(&self, j: i64) -> Result<TransferMatrix> {
        let idx = if j < 0 && !self.seq.schedule.two_sided() {
            return Err(Error::ScheduleRange { j, len: 0 });
        } else {
            self.seq.stage_index(j)?
        };
        let mut c = self.cache.lock().unwrap();
        Ok(c.entry(idx).or_insert_with(|| sft_raw(&self.seq.family[idx], 0)).at_time(j))
    }

    fn weights(&self, j: i64) -> Result<Arc<Vec<f64>>> {
        let d = stage_signed(self.seq, j)?.d_in();
        Ok(Arc::new(vec![1.0 / d as f64; d]))
    }

    fn basis(&self, j: i64) -> Result<Basis> {
        Ok(Basis::full_words(vec![stage_signed(self.seq, j)?.d_in()]))
    }

    fn two_sided(&self) -> bool {
        self.seq.schedule.two_sided()
    }

    fn period(&self) -> Option<usize> {
        self.seq.schedule.period()
    }
}

/// Gibbs family over a window: triplet with probability duals, marginals
/// π_j = h_j ν_j and forward transitions p_j(a→b).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GibbsSystem {
    pub seq: SftSequence,
    pub window: (i64, i64),
    pub triplet: RpfTriplet,
    /// π_j for j in [j_min, j_max + 1]
    pub marginals: Vec<Vec<f64>>,
    /// p_j[a][b] for j in [j_min, j_max]
    pub transitions: Vec<Vec<Vec<f64>>>,
}

pub fn build(seq: &SftSequence, window: (i64, i64), burn_in: usize) -> Result<GibbsSystem> {
    let probe = window.0.max(0) as usize;
    let horizon = seq.mixing_horizon.max(1) * 4 + 8;
    let span = seq.period().unwrap_or(8).max(1);
    for j in probe..probe + span {
        let st = seq.stage_at(j)?;
        for a in 0..st.d_in() {
            seq.verify_covering(j, &[a], horizon).map_err(|_| Error::NotMixing(format!("symbol {a} at time {j} does not cover")))?;
        }
    }
    let ops = SftRawOperators::new(seq);
    let mut tri = build_triplet(&ops, window, burn_in, Normalization::Dual)?;
    // probability duals, rescaling h to keep ν_j(h_j) = 1
    for k in 0..tri.duals.len() {
        let s: f64 = tri.duals[k].iter().sum();
        tri.duals[k].iter_mut().for_each(|x| *x /= s);
        tri.densities[k].iter_mut().for_each(|x| *x *= s);
    }
    for (k, j) in (window.0..=window.1).enumerate() {
        let g = ops.operator(j)?.apply_re(&tri.densities[k]);
        tri.lambdas[k] = g.iter().zip(&tri.duals[k + 1]).map(|(a, b)| a * b).sum();
    }
    let mut residual = 0.0f64;
    let mut dual_residual = 0.0f64;
    for (k, j) in (window.0..=window.1).enumerate() {
        let op = ops.operator(j)?;
        let g = op.apply_re(&tri.densities[k]);
        residual = residual.max(g.iter().zip(&tri.densities[k + 1]).map(|(a, b)| (a - tri.lambdas[k] * b).abs()).fold(0.0, f64::max));
        let t = op.apply_transpose_re(&tri.duals[k + 1]);
        dual_residual = dual_residual.max(t.iter().zip(&tri.duals[k]).map(|(a, b)| (a - tri.lambdas[k] * b).abs()).fold(0.0, f64::max));
    }
    tri.residual = residual;
    tri.dual_residual = dual_residual;
    let marginals: Vec<Vec<f64>> = tri.densities.iter().zip(&tri.duals).map(|(h, n)| h.iter().zip(n).map(|(a, b)| a * b).collect()).collect();
    let mut transitions = Vec::new();
    for (k, j) in (window.0..=window.1).enumerate() {
        let st = stage_signed(seq, j)?;
        let lam = tri.lambdas[k];
        let p: Vec<Vec<f64>> = (0..st.d_in())
            .map(|a| {
                (0..st.d_out())
                    .map(|b| if st.allowed(a, b) { st.potential[a][b].exp() * tri.duals[k + 1][b] / (lam * tri.duals[k][a]) } else { 0.0 })
                    .collect()
            })
            .collect();
        transitions.push(p);
    }
    Ok(GibbsSystem { seq: seq.clone(), window, triplet: tri, marginals, transitions })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CylinderMass {
    pub mass: f64,
    pub admissible: bool,
}

impl GibbsSystem {
    fn k(&self, j: i64) -> Result<usize> {
        if j < self.window.0 || j > self.window.1 + 1 {
            return Err(Error::InvalidInput(format!("time {j} outside Gibbs window {:?}", self.window)));
        }
        Ok((j - self.window.0) as usize)
    }

    pub fn stage(&self, j: i64) -> Result<&SftStage> {
        stage_signed(&self.seq, j)
    }

    pub fn pi(&self, j: i64) -> Result<&[f64]> {
        Ok(&self.marginals[self.k(j)?])
    }

    pub fn p(&self, j: i64) -> Result<&Vec<Vec<f64>>> {
        let k = self.k(j)?;
        self.transitions.get(k).ok_or_else(|| Error::InvalidInput(format!("no transitions at time {j}")))
    }

    pub fn h(&self, j: i64) -> Result<&[f64]> {
        self.triplet.h(j)
    }

    pub fn lambda(&self, j: i64) -> Result<f64> {
        self.triplet.lambda(j)
    }

    /// μ_j([w]) = π_j(w_0) Π p_{j+s}(w_s → w_{s+1}).
    pub fn cylinder_mass(&self, j: i64, w: &[usize]) -> Result<CylinderMass> {
        if w.is_empty() {
            return Err(Error::InvalidInput("empty word".into()));
        }
        let pi = self.pi(j)?;
        if w[0] >= pi.len() {
            return Err(Error::InvalidInput("symbol out of range".into()));
        }
        let mut m = pi[w[0]];
        for s in 0..w.len() - 1 {
            let st = self.stage(j + s as i64)?;
            if w[s + 1] >= st.d_out() || !st.allowed(w[s], w[s + 1]) {
                return Ok(CylinderMass { mass: 0.0, admissible: false });
            }
            m *= self.p(j + s as i64)?[w[s]][w[s + 1]];
        }
        Ok(CylinderMass { mass: m, admissible: true })
    }

    /// Draws x_0..x_{n−1} from μ_j into `out`.
    pub fn sample_path_into(&self, j: i64, rng: &mut impl Rng, out: &mut [usize]) -> Result<()> {
        let mut a = draw(self.pi(j)?, rng);
        let n = out.len();
        for (s, slot) in out.iter_mut().enumerate() {
            *slot = a;
            if s + 1 < n {
                a = draw(&self.p(j + s as i64)?[a], rng);
            }
        }
        Ok(())
    }

    /// Normalized operators on functions of two consecutive symbols, with
    /// reference μ_j on pairs.
    pub fn pair_operators(self: &Arc<Self>) -> PairOperators {
        PairOperators { sys: self.clone(), cache: Mutex::new(HashMap::new()) }
    }

    /// Normalized symbol-basis operator L_j(g h_j)/(λ_j h_{j+1}).
    pub fn normalized_symbol_operator(&self, j: i64) -> Result<TransferMatrix> {
        let raw = sft_raw(self.stage(j)?, j);
        crate::transfer::derive_kind(&raw, crate::transfer::Context::Normalized { lambda: self.lambda(j)?, h: self.h(j)?, h_next: self.h(j + 1)? })
    }
}

fn draw(p: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|x| *x > 0.0).unwrap_or(p.len() - 1)
}

/// `count` independent paths of length n from μ_0.
pub fn markov_sample(sys: &GibbsSystem, n: usize, count: usize, rng: &mut impl Rng) -> Result<Vec<Vec<usize>>> {
    if n == 0 {
        return Err(Error::InvalidInput("n must be at least 1".into()));
    }
    (0..count)
        .map(|_| {
            let mut v = vec![0; n];
            sys.sample_path_into(0, rng, &mut v)?;
            Ok(v)
        })
        .collect()
}

/// L̂_j on pair functions g(x_0, x_1): (L̂ g)(b, c) = Σ_a q_j(b→a) g(a, b).
pub struct PairOperators {
    pub sys: Arc<GibbsSystem>,
    cache: Mutex<HashMap<i64, (TransferMatrix, Arc<Vec<f64>>)>>,
}

impl PairOperators {
    fn dims(&self, j: i64) -> Result<(usize, usize)> {
        let st = self.sys.stage(j)?;
        Ok((st.d_in(), st.d_out()))
    }

    fn build(&self, j: i64) -> Result<(TransferMatrix, Arc<Vec<f64>>)> {
        let st = self.sys.stage(j)?;
        let (d0, d1) = (st.d_in(), st.d_out());
        let d2 = self.sys.stage(j + 1)?.d_out();
        let h = self.sys.h(j)?;
        let h1 = self.sys.h(j + 1)?;
        let lam = self.sys.lambda(j)?;
        let mut m = DMatrix::from_element(d1 * d2, d0 * d1, C64::new(0.0, 0.0));
        for b in 0..d1 {
            for a in 0..d0 {
                if st.allowed(a, b) {
                    let q = st.potential[a][b].exp() * h[a] / (lam * h1[b]);
                    for c in 0..d2 {
                        m[(b * d2 + c, a * d1 + b)] = C64::new(q, 0.0);
                    }
                }
            }
        }
        let pi = self.sys.pi(j)?;
        let p = self.sys.p(j)?;
        let w: Vec<f64> = (0..d0 * d1).map(|i| pi[i / d1] * p[i / d1][i % d1]).collect();
        Ok((TransferMatrix::from_dense(OpKind::Normalized, j, m), Arc::new(w)))
    }

    fn get(&self, j: i64) -> Result<(TransferMatrix, Arc<Vec<f64>>)> {
        let mut c = self.cache.lock().unwrap();
        if let Some(v) = c.get(&j) {
            return Ok(v.clone());
        }
        let v = self.build(j)?;
        c.insert(j, v.clone());
        Ok(v)
    }
}

impl OperatorSequence for PairOperators {
    fn operator(&self, j: i64) -> Result<TransferMatrix> {
        Ok(self.get(j)?.0)
    }

    fn weights(&self, j: i64) -> Result<Arc<Vec<f64>>> {
        Ok(self.get(j)?.1)
    }

    fn basis(&self, j: i64) -> Result<Basis> {
        let st = self.sys.stage(j)?;
        let (d0, d1) = self.dims(j)?;
        let allowed = (0..d0 * d1).map(|i| st.allowed(i / d1, i % d1)).collect();
        Ok(Basis::words(vec![d0, d1], allowed))
    }

    fn two_sided(&self) -> bool {
        false
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GibbsRatioReport {
    pub c_hat: f64,
    /// (depth r, min ratio, max ratio, C_r)
    pub per_depth: Vec<(usize, f64, f64, f64)>,
    /// max |C_{r+p} − C_r| over settled depths r, p the schedule period (1 if aperiodic)
    pub drift: f64,
}

/// Ratios μ_j([w_0..w_r]) λ_{j,r} / e^{S_{j,r}φ(w)} over all admissible words
/// of depth r ≤ depth_max and j in `times`.
pub fn gibbs_ratio_check(sys: &GibbsSystem, times: std::ops::Range<i64>, depth_max: usize) -> Result<GibbsRatioReport> {
    if depth_max < 2 {
        return Err(Error::InvalidInput("depth_max must be at least 2".into()));
    }
    let mut per_depth = Vec::new();
    for r in 1..=depth_max {
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for j in times.clone() {
            let lam = sys.triplet.lambda_product(j, r)?;
            let d0 = sys.stage(j)?.d_in();
            let mut stack: Vec<(Vec<usize>, f64, f64)> = (0..d0).map(|a| (vec![a], 0.0, sys.pi(j).unwrap()[a])).collect();
            while let Some((w, s, m)) = stack.pop() {
                let depth = w.len() - 1;
                if depth == r {
                    let ratio = m * lam / s.exp();
                    lo = lo.min(ratio);
                    hi = hi.max(ratio);
                    continue;
                }
                let t = j + depth as i64;
                let st = sys.stage(t)?;
                let p = sys.p(t)?;
                let a = *w.last().unwrap();
                for b in 0..st.d_out() {
                    if st.allowed(a, b) {
                        let mut w2 = w.clone();
                        w2.push(b);
                        stack.push((w2, s + st.potential[a][b], m * p[a][b]));
                    }
                }
            }
        }
        per_depth.push((r, lo, hi, hi.max(1.0 / lo)));
    }
    let c_hat = per_depth.iter().map(|p| p.3).fold(0.0, f64::max);
    // the extremal ratios depend on the phase of j + r, so depths are compared one period apart
    let lag = sys.seq.period().unwrap_or(1).max(1);
    let settled = sys.seq.mixing_horizon.max(3);
    let drift = per_depth
        .iter()
        .zip(per_depth.iter().skip(lag))
        .filter(|(a, _)| a.0 >= settled)
        .map(|(a, b)| (b.3 - a.3).abs())
        .fold(0.0, f64::max);
    Ok(GibbsRatioReport { c_hat, per_depth, drift })
}

/// Two-sided observable ψ_j(x_{−m}, …, x_m).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoSidedObservable {
    pub m: usize,
    /// tables[i] indexed row-major over the 2m+1 symbols
    pub tables: Vec<Vec<f64>>,
    pub schedule: Schedule,
}

/// Dense table over words at relative positions `start .. start+len` of time j.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordTable {
    pub start: i64,
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
    pub admissible: Vec<bool>,
}

impl WordTable {
    pub fn index(&self, w: &[usize]) -> usize {
        w.iter().zip(&self.dims).fold(0, |acc, (s, d)| acc * d + s)
    }

    pub fn get(&self, w: &[usize]) -> f64 {
        self.values[self.index(w)]
    }
}

/// Output of the Sinai reduction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinaiReduction {
    pub m: usize,
    pub window: (i64, i64),
    /// φ_j on (x_0..x_{2m})
    pub phi: Vec<WordTable>,
    /// u_j on (x_{−m}..x_{2m−1})
    pub u: Vec<WordTable>,
    pub sup_u: f64,
    /// max over admissible (x_{−m}..x_{2m}) of |ψ_j − (u_j − u_{j+1}∘σ + φ_j)|
    pub identity_residual: f64,
}

fn alphabet(seq: &SftSequence, t: i64) -> Result<usize> {
    Ok(stage_signed(seq, t)?.d_in())
}

fn admissible_word(seq: &SftSequence, t0: i64, w: &[usize]) -> Result<bool> {
    for (s, pair) in w.windows(2).enumerate() {
        if !stage_signed(seq, t0 + s as i64)?.allowed(pair[0], pair[1]) {
            return Ok(false);
        }
    }
    Ok(true)
}

fn for_each_word(dims: &[usize], mut f: impl FnMut(&[usize])) {
    let total: usize = dims.iter().product();
    let mut w = vec![0usize; dims.len()];
    for mut i in 0..total {
        for k in (0..dims.len()).rev() {
            w[k] = i % dims[k];
            i /= dims[k];
        }
        f(&w);
    }
}

impl TwoSidedObservable {
    pub fn psi(&self, seq: &SftSequence, j: i64, w: &[usize]) -> Result<f64> {
        let t = &self.tables[self.schedule.index_at(j, self.tables.len())?];
        let mut idx = 0;
        for (k, s) in w.iter().enumerate() {
            idx = idx * alphabet(seq, j - self.m as i64 + k as i64)? + s;
        }
        Ok(t[idx])
    }

    /// Lexicographically minimal admissible past (x_{−m}..x_{−1}) before symbol t at time j.
    pub fn anchor(&self, seq: &SftSequence, j: i64, t: usize) -> Result<Vec<usize>> {
        let m = self.m;
        if m == 0 {
            return Ok(vec![]);
        }
        let dims: Vec<usize> = (0..m).map(|k| alphabet(seq, j - m as i64 + k as i64)).collect::<Result<_>>()?;
        let mut found = None;
        let mut err = None;
        for_each_word(&dims, |w| {
            if found.is_some() || err.is_some() {
                return;
            }
            let mut full = w.to_vec();
            full.push(t);
            match admissible_word(seq, j - m as i64, &full) {
                Ok(true) => found = Some(w.to_vec()),
                Ok(false) => {}
                Err(e) => err = Some(e),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        found.ok_or(Error::AnchorFailure { j, symbol: t })
    }
}

/// Rewrites ψ_j = u_j − u_{j+1}∘σ_j + φ_j∘π_j with φ_j one-sided, for j in the window.
pub fn sinai_reduce(seq: &SftSequence, obs: &TwoSidedObservable, window: (i64, i64)) -> Result<SinaiReduction> {
    let m = obs.m as i64;
    // ψ at time t on an absolute-position word; `word(p)` gives the symbol at
    // position p relative to time j
    let psi_at = |t: i64, word: &dyn Fn(i64) -> usize, shift: i64| -> Result<f64> {
        let w: Vec<usize> = (-m..=m).map(|p| word(p + shift)).collect();
        obs.psi(seq, t, &w)
    };
    let anchors = |j: i64| -> Result<Vec<Vec<usize>>> { (0..alphabet(seq, j)?).map(|t| obs.anchor(seq, j, t)).collect() };

    let u_table = |j: i64| -> Result<WordTable> {
        let start = -m;
        let len = (3 * m) as usize;
        let dims: Vec<usize> = (0..len).map(|k| alphabet(seq, j + start + k as i64)).collect::<Result<_>>()?;
        let anc = anchors(j)?;
        let mut values = vec![0.0; dims.iter().product()];
        let mut admissible = vec![false; values.len()];
        let mut idx = 0;
        let mut err = None;
        for_each_word(&dims, |w| {
            let i = idx;
            idx += 1;
            if err.is_some() {
                return;
            }
            match admissible_word(seq, j + start, w) {
                Ok(true) => {}
                Ok(false) => return,
                Err(e) => {
                    err = Some(e);
                    return;
                }
            }
            admissible[i] = true;
            if m == 0 {
                return;
            }
            let y = |p: i64| w[(p - start) as usize];
            let a = &anc[y(0)];
            let ry = |p: i64| if p < 0 { a[(p + m) as usize] } else { y(p) };
            let mut s = 0.0;
            for k in 0..m {
                match (psi_at(j + k, &y, k), psi_at(j + k, &ry, k)) {
                    (Ok(x), Ok(z)) => s += x - z,
                    (Err(e), _) | (_, Err(e)) => err = Some(e),
                }
            }
            values[i] = s;
        });
        if let Some(e) = err {
            return Err(e);
        }
        Ok(WordTable { start, dims, values, admissible })
    };

    let mut u = Vec::new();
    for j in window.0..=window.1 + 1 {
        u.push(u_table(j)?);
    }
    let u_eval = |k: usize, word: &dyn Fn(i64) -> usize, shift: i64| -> f64 {
        let t = &u[k];
        let w: Vec<usize> = (0..t.dims.len()).map(|q| word(t.start + q as i64 + shift)).collect();
        t.get(&w)
    };

    let mut phi = Vec::new();
    let mut residual = 0.0f64;
    for (k, j) in (window.0..=window.1).enumerate() {
        // φ_j(y) = ψ_j(y) − u_j(y) + u_{j+1}(σy), evaluated with the past
        // replaced by the anchor of y_0 (the right side does not depend on it)
        let len = (2 * m + 1) as usize;
        let dims: Vec<usize> = (0..len).map(|q| alphabet(seq, j + q as i64)).collect::<Result<_>>()?;
        let anc = anchors(j)?;
        let mut values = vec![0.0; dims.iter().product()];
        let mut admissible = vec![false; values.len()];
        let mut idx = 0;
        let mut err = None;
        for_each_word(&dims, |w| {
            let i = idx;
            idx += 1;
            if err.is_some() {
                return;
            }
            if !admissible_word(seq, j, w).unwrap_or(false) {
                return;
            }
            admissible[i] = true;
            let a = &anc[w[0]];
            let y = |p: i64| if p < 0 { a[(p + m) as usize] } else { w[p as usize] };
            match psi_at(j, &y, 0) {
                Ok(p) => values[i] = p - u_eval(k, &y, 0) + u_eval(k + 1, &y, 1),
                Err(e) => err = Some(e),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        let ptab = WordTable { start: 0, dims, values, admissible };
        // identity on every admissible (x_{−m}..x_{2m})
        let len_full = (3 * m + 1) as usize;
        let dims_full: Vec<usize> = (0..len_full).map(|q| alphabet(seq, j - m + q as i64)).collect::<Result<_>>()?;
        let mut res_err = None;
        for_each_word(&dims_full, |w| {
            if res_err.is_some() || !admissible_word(seq, j - m, w).unwrap_or(false) {
                return;
            }
            let y = |p: i64| w[(p + m) as usize];
            let ph: Vec<usize> = (0..=2 * m).map(|p| y(p)).collect();
            match psi_at(j, &y, 0) {
                Ok(p) => {
                    let r = p - (u_eval(k, &y, 0) - u_eval(k + 1, &y, 1) + ptab.get(&ph));
                    residual = residual.max(r.abs());
                }
                Err(e) => res_err = Some(e),
            }
        });
        if let Some(e) = res_err {
            return Err(e);
        }
        phi.push(ptab);
    }
    let sup_u = u
        .iter()
        .flat_map(|t| t.values.iter().zip(&t.admissible).filter(|(_, a)| **a).map(|(v, _)| v.abs()))
        .fold(0.0, f64::max);
    Ok(SinaiReduction { m: obs.m, window, phi, u, sup_u, identity_residual: residual })
}

impl SinaiReduction {
    /// φ_j at the path position `pos` (path index of x_0 at time j).
    pub fn phi_on_path(&self, j: i64, path: &[usize], pos: usize) -> f64 {
        let t = &self.phi[(j - self.window.0) as usize];
        t.get(&path[pos..pos + t.dims.len()])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub equivalent: bool,
    pub zeta: Vec<f64>,
    pub log_range: f64,
}

/// ζ_j = Π_{k<j} lam_a[k]/lam_b[k]; equivalent when log ζ stays in a bounded
/// range that does not widen over the second half of the window.
pub fn lambda_equivalence(lam_a: &[f64], lam_b: &[f64], bound: f64) -> Result<EquivalenceReport> {
    if lam_a.len() != lam_b.len() || lam_a.iter().chain(lam_b).any(|x| !(*x > 0.0)) {
        return Err(Error::InvalidInput("sequences must be positive and of equal length".into()));
    }
    let mut z = Vec::with_capacity(lam_a.len() + 1);
    let mut l = 0.0f64;
    z.push(0.0);
    for (a, b) in lam_a.iter().zip(lam_b) {
        l += a.ln() - b.ln();
        z.push(l);
    }
    let range = |s: &[f64]| s.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - s.iter().cloned().fold(f64::INFINITY, f64::min);
    let half = z.len() / 2;
    let total = range(&z);
    let first = range(&z[..=half]);
    let equivalent = total <= bound && total <= first + 1e-12;
    Ok(EquivalenceReport { equivalent, zeta: z.iter().map(|x| x.exp()).collect(), log_range: total })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoSidedReport {
    pub checked: usize,
    pub max_gap: f64,
}

/// Compares the mass of two-sided cylinders [x_{−r}..x_s] at time j, built from
/// μ_j([x_0..x_s]) and the time-reversed chain, against μ_{j−r}([x_{−r}..x_s]).
pub fn two_sided_extend(sys: &GibbsSystem, j: i64, cylinders: usize, max_depth: usize, rng: &mut impl Rng) -> Result<TwoSidedReport> {
    let mut max_gap = 0.0f64;
    for _ in 0..cylinders {
        let r = rng.random_range(1..=max_depth.max(1));
        let s = rng.random_range(0..max_depth.max(1));
        let mut path = vec![0; r + s + 1];
        sys.sample_path_into(j - r as i64, rng, &mut path)?;
        let direct = sys.cylinder_mass(j - r as i64, &path)?.mass;
        let mut m = sys.cylinder_mass(j, &path[r..])?.mass;
        for k in (0..r).rev() {
            let t = j - (r - k) as i64;
            let (a, b) = (path[k], path[k + 1]);
            m *= sys.pi(t)?[a] * sys.p(t)?[a][b] / sys.pi(t + 1)?[b];
        }
        max_gap = max_gap.max((direct - m).abs() / direct.max(1e-300));
    }
    Ok(TwoSidedReport { checked: cylinders, max_gap })
}

/// Cylinder mass of `w` at time j computed directly from the weights
/// e^{φ_t(a,b)} of admissible words extended `margin` steps into the past
/// (truncated at time 0 for one-sided schedules) and into the future, without
/// the triplet.
pub fn finite_volume_mass(seq: &SftSequence, j: i64, w: &[usize], margin: usize) -> Result<f64> {
    if w.is_empty() {
        return Err(Error::InvalidInput("empty word".into()));
    }
    let weight = |t: i64, a: usize, b: usize| -> Result<f64> {
        let st = stage_signed(seq, t)?;
        Ok(if st.allowed(a, b) { st.potential[a][b].exp() } else { 0.0 })
    };
    let t0 = if seq.schedule.two_sided() { j - margin as i64 } else { (j - margin as i64).max(0) };
    let mut left = vec![1.0; alphabet(seq, t0)?];
    for t in t0..j {
        let d = stage_signed(seq, t)?.d_out();
        let mut next = vec![0.0; d];
        for (a, la) in left.iter().enumerate() {
            for (b, nb) in next.iter_mut().enumerate() {
                *nb += la * weight(t, a, b)?;
            }
        }
        let s: f64 = next.iter().sum();
        left = next.into_iter().map(|x| x / s).collect();
    }
    let r = (w.len() - 1) as i64;
    let t1 = j + r + margin as i64;
    let mut right = vec![1.0; alphabet(seq, t1)?];
    let mut t = t1;
    while t > j + r {
        t -= 1;
        let st = stage_signed(seq, t)?;
        let mut prev = vec![0.0; st.d_in()];
        for (a, pa) in prev.iter_mut().enumerate() {
            for (b, rb) in right.iter().enumerate() {
                *pa += weight(t, a, b)? * rb;
            }
        }
        let s: f64 = prev.iter().sum();
        right = prev.into_iter().map(|x| x / s).collect();
    }
    if w[0] >= left.len() {
        return Err(Error::InvalidInput("symbol out of range".into()));
    }
    let mut num = left[w[0]];
    let mut all = left.clone();
    for s in 0..w.len() - 1 {
        let tt = j + s as i64;
        let d = stage_signed(seq, tt)?.d_out();
        if w[s + 1] >= d {
            return Err(Error::InvalidInput("symbol out of range".into()));
        }
        num *= weight(tt, w[s], w[s + 1])?;
        let mut next = vec![0.0; d];
        for (a, la) in all.iter().enumerate() {
            for (b, nb) in next.iter_mut().enumerate() {
                *nb += la * weight(tt, a, b)?;
            }
        }
        // common rescaling of numerator and denominator
        let sc: f64 = next.iter().sum();
        all = next.into_iter().map(|x| x / sc).collect();
        num /= sc;
    }
    let z: f64 = all.iter().zip(&right).map(|(a, b)| a * b).sum();
    Ok(num * right[*w.last().unwrap()] / z)
}

/// Every admissible word of length depth + 1 starting at time j.
pub fn admissible_words(seq: &SftSequence, j: i64, depth: usize) -> Result<Vec<Vec<usize>>> {
    let mut out: Vec<Vec<usize>> = (0..alphabet(seq, j)?).map(|a| vec![a]).collect();
    for s in 0..depth {
        let st = stage_signed(seq, j + s as i64)?;
        let mut next = Vec::new();
        for w in &out {
            let a = *w.last().unwrap();
            for b in 0..st.d_out() {
                if st.allowed(a, b) {
                    let mut w2 = w.clone();
                    w2.push(b);
                    next.push(w2);
                }
            }
        }
        out = next;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::PairObservable;
    use crate::rng::substream;

    fn auto(st: SftStage) -> SftSequence {
        let d = st.d_out();
        SftSequence::autonomous(st, PairObservable::from_symbols(&vec![0.0; d], d))
    }

    #[test]
    fn full_shift_bernoulli() {
        let seq = auto(SftStage::full_shift(2, 0.5f64.ln()));
        let sys = build(&seq, (0, 20), 30).unwrap();
        for j in 0..=20 {
            assert!((sys.lambda(j).unwrap() - 1.0).abs() < 1e-12);
            assert!(sys.h(j).unwrap().iter().all(|x| (x - 1.0).abs() < 1e-12));
            assert!(sys.triplet.nu(j).unwrap().iter().all(|x| (x - 0.5).abs() < 1e-12));
        }
        for r in 1..6 {
            let w = vec![1; r];
            assert!((sys.cylinder_mass(0, &w).unwrap().mass - 0.5f64.powi(r as i32)).abs() < 1e-14);
        }
        let rep = gibbs_ratio_check(&sys, 0..3, 6).unwrap();
        assert!((rep.c_hat - 2.0).abs() < 1e-12 && rep.drift < 1e-12);
    }

    #[test]
    fn golden_mean_parry() {
        let seq = auto(SftStage::golden_mean(0.0));
        let sys = build(&seq, (0, 40), 60).unwrap();
        let g = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((sys.lambda(5).unwrap() - g).abs() < 1e-12);
        assert!((sys.cylinder_mass(3, &[0]).unwrap().mass - g * g / (1.0 + g * g)).abs() < 1e-12);
        let bad = sys.cylinder_mass(3, &[1, 1]).unwrap();
        assert_eq!(bad, CylinderMass { mass: 0.0, admissible: false });
        let rep = gibbs_ratio_check(&sys, 0..3, 12).unwrap();
        assert!(rep.drift < 1e-10, "{rep:?}");
    }

    #[test]
    fn pair_operator_fixes_one_and_preserves_mass() {
        let st = SftStage::new("r", vec![vec![true, true, false], vec![true, false, true], vec![true, true, true]], vec![vec![0.3, -0.2, 0.0], vec![0.1, 0.0, 0.4], vec![-0.3, 0.2, 0.1]]).unwrap();
        let sys = Arc::new(build(&auto(st), (0, 10), 60).unwrap());
        let ops = sys.pair_operators();
        for j in 0..8 {
            let op = ops.operator(j).unwrap();
            let one = op.apply_re(&vec![1.0; 9]);
            let b1 = ops.basis(j + 1).unwrap();
            if let Basis::Words { allowed, .. } = b1 {
                for i in 0..9 {
                    if allowed[i] {
                        assert!((one[i] - 1.0).abs() < 1e-12);
                    }
                }
            }
            let g: Vec<f64> = (0..9).map(|i| (i as f64).sin()).collect();
            let lg = op.apply_re(&g);
            let m0: f64 = g.iter().zip(ops.weights(j).unwrap().iter()).map(|(a, b)| a * b).sum();
            let m1: f64 = lg.iter().zip(ops.weights(j + 1).unwrap().iter()).map(|(a, b)| a * b).sum();
            assert!((m0 - m1).abs() < 1e-13);
        }
    }

    #[test]
    fn sampler_frequencies() {
        let seq = auto(SftStage::golden_mean(0.0));
        let sys = build(&seq, (0, 10), 60).unwrap();
        let mut rng = substream(11, "gibbs", 0);
        let paths = markov_sample(&sys, 3, 200_000, &mut rng).unwrap();
        let f0 = paths.iter().filter(|p| p[0] == 0).count() as f64 / paths.len() as f64;
        assert!((f0 - 0.7236).abs() < 0.004);
        assert!(!paths.iter().any(|p| p[0] == 1 && p[1] == 1));
    }

    #[test]
    fn sinai_examples() {
        let seq = auto(SftStage::full_shift(2, 0.5f64.ln()));
        let one_sided = TwoSidedObservable { m: 0, tables: vec![vec![1.0, -1.0]], schedule: Schedule::Periodic { pattern: vec![0] } };
        let r = sinai_reduce(&seq, &one_sided, (0, 3)).unwrap();
        assert_eq!(r.sup_u, 0.0);
        assert!(r.identity_residual < 1e-15);
        // ψ(x_{-1}, x_0, x_1) = x_{-1} − 0.5 x_0
        let t: Vec<f64> = (0..8).map(|i| ((i >> 2) & 1) as f64 - 0.5 * ((i >> 1) & 1) as f64).collect();
        let two = TwoSidedObservable { m: 1, tables: vec![t], schedule: Schedule::Periodic { pattern: vec![0] } };
        let r = sinai_reduce(&seq, &two, (0, 3)).unwrap();
        assert!(r.identity_residual < 1e-14 && r.sup_u > 0.0);
    }

    #[test]
    fn equivalence_examples() {
        let a: Vec<f64> = (0..200).map(|k| 1.5 + 0.3 * (k as f64).sin()).collect();
        let r = lambda_equivalence(&a, &a, 20.0).unwrap();
        assert!(r.equivalent && r.zeta.iter().all(|z| (z - 1.0).abs() < 1e-15));
        let b: Vec<f64> = a.iter().map(|x| 2.0 * x).collect();
        let r = lambda_equivalence(&a, &b, 20.0).unwrap();
        assert!(!r.equivalent && (r.zeta[10] - 2f64.powi(-10)).abs() < 1e-15);
        let mut c = a.clone();
        c[7] *= 3.0;
        let r = lambda_equivalence(&a, &c, 20.0).unwrap();
        assert!(r.equivalent && (r.zeta[199] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn two_sided_consistency() {
        let seq = auto(SftStage::golden_mean(0.0));
        let sys = build(&seq, (-20, 40), 60).unwrap();
        let mut rng = substream(2, "two", 0);
        let r = two_sided_extend(&sys, 10, 100, 8, &mut rng).unwrap();
        assert!(r.max_gap < 1e-10, "{r:?}");
    }

    #[test]
    fn finite_volume_matches_chain() {
        let st = SftStage::new("m3", vec![vec![true, true, false], vec![true, false, true], vec![true, true, true]], vec![vec![0.1, -0.3, 0.0], vec![0.4, 0.0, 0.2], vec![-0.5, 0.3, 0.0]]).unwrap();
        let seq = SftSequence::new(
            vec![st, SftStage::full_shift(3, 0.0)],
            Schedule::Periodic { pattern: vec![0, 1, 0, 0] },
            vec![PairObservable::from_symbols(&[0.0; 3], 3)],
            Schedule::Periodic { pattern: vec![0] },
        )
        .unwrap();
        let sys = build(&seq, (0, 40), 80).unwrap();
        for j in [0, 5, 13] {
            let words = admissible_words(&seq, j, 4).unwrap();
            let total: f64 = words.iter().map(|w| finite_volume_mass(&seq, j, w, 80).unwrap()).sum();
            assert!((total - 1.0).abs() < 1e-12);
            for w in &words {
                let a = sys.cylinder_mass(j, w).unwrap().mass;
                let b = finite_volume_mass(&seq, j, w, 80).unwrap();
                assert!((a - b).abs() < 1e-12 * b.max(1e-300) + 1e-15, "{w:?} {a} {b}");
            }
        }
    }
}

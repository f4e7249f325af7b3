//! Pulled-back models: operators L̃_j g = L_j(g ρ_j)/ρ_{j+1} with reference
//! m̃_j = ρ_j m_j, observables sampled on each B_j, exact composition with
//! T_j, and path samplers for Monte Carlo.

use crate::error::{Error, Result};
use crate::funcspace::{Basis, Grid};
use crate::gibbs::{GibbsSystem, PairOperators};
use crate::maps::{BranchMap, IntervalSequence, EDGE_TOL};
use crate::transfer::{derive_kind, Context, IntervalOperators, OpKind, OperatorSequence, TransferMatrix};
use crate::C64;
use rand::Rng;
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

/// Sequential system seen through its pulled-back operators.
pub trait Model: Send + Sync {
    /// Pulled-back operators, with weights of m̃_j.
    fn ops(&self) -> &dyn OperatorSequence;

    /// f_j on the basis of B_j (uncentered).
    fn observable(&self, j: i64) -> Result<Arc<Vec<f64>>>;

    /// v∘T_j on the basis of B_j, for v given on B_{j+1}.
    fn compose_next(&self, j: i64, v: &[f64]) -> Result<Vec<f64>>;

    /// L̃_j(g − v∘T_j), evaluating the composition exactly at preimages.
    fn apply_minus_composed(&self, j: i64, g: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let c = self.compose_next(j, v)?;
        let d: Vec<f64> = g.iter().zip(&c).map(|(a, b)| a - b).collect();
        Ok(self.ops().operator(j)?.apply_re(&d))
    }

    /// Writes f_j(x_j) for j < out.len() along one path drawn from m_0.
    fn sample_path(&self, rng: &mut dyn rand::RngCore, out: &mut [f64]) -> Result<()>;

    /// Sampler for paths of length n with per-time lookups done once.
    fn path_sampler(&self, n: usize) -> Result<Box<dyn PathSampler + '_>> {
        Ok(Box::new(Direct { model: self, n }))
    }

    /// States x_0..x_n along one path drawn from m_0.
    fn sample_points(&self, rng: &mut dyn rand::RngCore, n: usize) -> Result<Vec<PathPoint>>;

    /// Value at `p` of a function given on the basis of B_j.
    fn eval_point(&self, j: i64, v: &[f64], p: &PathPoint) -> f64;

    /// f_j(p) in closed form.
    fn observable_point(&self, j: i64, p: &PathPoint) -> Result<f64>;

    fn mixing_horizon(&self) -> usize {
        1
    }

    /// m̃_j(f_j).
    fn mean(&self, j: i64) -> Result<f64> {
        let f = self.observable(j)?;
        let w = self.ops().weights(j)?;
        Ok(f.iter().zip(w.iter()).map(|(a, b)| a * b).sum())
    }

    /// f̃_j = f_j − m̃_j(f_j).
    fn centered(&self, j: i64) -> Result<Vec<f64>> {
        let m = self.mean(j)?;
        Ok(self.observable(j)?.iter().map(|x| x - m).collect())
    }

    /// L̃_{j,z} = L̃_j ∘ diag(e^{z f_j}) with f_j uncentered.
    fn twisted(&self, j: i64, z: C64) -> Result<TransferMatrix> {
        let f = self.observable(j)?;
        derive_kind(&self.ops().operator(j)?, Context::Twisted { f: &f, z })
    }
}

/// Draws f_0(x_0), …, f_{n−1}(x_{n−1}) along paths from m_0.
pub trait PathSampler: Send + Sync {
    fn len(&self) -> usize;

    fn sample(&self, rng: &mut dyn rand::RngCore, out: &mut [f64]) -> Result<()>;
}

struct Direct<'a, M: ?Sized> {
    model: &'a M,
    n: usize,
}

impl<M: Model + ?Sized> PathSampler for Direct<'_, M> {
    fn len(&self) -> usize {
        self.n
    }

    fn sample(&self, rng: &mut dyn rand::RngCore, out: &mut [f64]) -> Result<()> {
        self.model.sample_path(rng, &mut out[..self.n])
    }
}

/// Point of the state space at some time: a position in [0,1] or a pair of
/// consecutive symbols (x_j, x_{j+1}) encoded as a pair-basis index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PathPoint {
    X(f64),
    Pair(usize),
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Default)]
struct DensityCache {
    rho: Vec<Arc<Vec<f64>>>,
    /// (c, p): ρ_k = ρ_{c + (k−c) mod p} for k ≥ c
    cycle: Option<(usize, usize)>,
}

const CYCLE_TOL: f64 = 1e-14;

/// Raw operators plus the pushed densities ρ_j.
pub struct IntervalCore {
    pub raw: IntervalOperators,
    densities: Mutex<DensityCache>,
    pulled: Mutex<HashMap<usize, (TransferMatrix, Arc<Vec<f64>>)>>,
    /// ρ_0 ≡ 1 and every stage preserves Lebesgue measure
    lebesgue: bool,
}

impl IntervalCore {
    fn canonical(&self, j: usize) -> Result<usize> {
        let mut c = self.densities.lock().unwrap();
        loop {
            if let Some((c0, p)) = c.cycle {
                if j >= c0 {
                    return Ok(c0 + (j - c0) % p);
                }
            }
            if j < c.rho.len() {
                return Ok(j);
            }
            let k = c.rho.len() - 1;
            let mut next = self.raw.operator(k as i64)?.apply_re(&c.rho[k]);
            let mass = dot(&next, &self.raw.weights(0)?);
            next.iter_mut().for_each(|x| *x /= mass);
            c.rho.push(Arc::new(next));
            if let Some(p) = self.raw.seq.schedule.period() {
                let k1 = k + 1;
                if k1 >= p {
                    let d = c.rho[k1].iter().zip(c.rho[k1 - p].iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                    if d <= CYCLE_TOL {
                        c.rho.pop();
                        c.cycle = Some((k1 - p, p));
                    }
                }
            }
        }
    }

    fn density(&self, j: i64) -> Result<Arc<Vec<f64>>> {
        if j < 0 {
            return Err(Error::ScheduleRange { j, len: 0 });
        }
        let k = self.canonical(j as usize)?;
        Ok(self.densities.lock().unwrap().rho[k].clone())
    }

    fn pulled_at(&self, j: i64) -> Result<(TransferMatrix, Arc<Vec<f64>>)> {
        if j < 0 {
            return Err(Error::ScheduleRange { j, len: 0 });
        }
        self.canonical(j as usize + 1)?;
        let key = self.canonical(j as usize)?;
        if let Some((op, w)) = self.pulled.lock().unwrap().get(&key) {
            return Ok((op.at_time(j), w.clone()));
        }
        let rho = self.density(j)?;
        let raw = self.raw.operator(j)?;
        // dividing by L_j ρ_j rather than the renormalized ρ_{j+1} keeps L̃_j 1 = 1
        let image = raw.apply_re(&rho);
        let op = if self.lebesgue { raw.with_kind(OpKind::PulledBack) } else { derive_kind(&raw, Context::PulledBack { rho: &rho, rho_next: &image })? };
        let w: Vec<f64> = self.raw.weights(j)?.iter().zip(rho.iter()).map(|(a, b)| a * b).collect();
        let w = Arc::new(w);
        self.pulled.lock().unwrap().insert(key, (op.clone(), w.clone()));
        Ok((op, w))
    }
}

/// Pulled-back operators of an interval model.
pub struct IntervalPulled(Arc<IntervalCore>);

impl OperatorSequence for IntervalPulled {
    fn operator(&self, j: i64) -> Result<TransferMatrix> {
        Ok(self.0.pulled_at(j)?.0)
    }

    fn weights(&self, j: i64) -> Result<Arc<Vec<f64>>> {
        Ok(self.0.pulled_at(j)?.1)
    }

    fn basis(&self, _j: i64) -> Result<Basis> {
        Ok(Basis::Grid(self.0.raw.grid))
    }

    fn two_sided(&self) -> bool {
        false
    }
}

/// Interval-map sequence on a grid, started from m_0 = ρ_0 dx.
pub struct IntervalModel {
    core: Arc<IntervalCore>,
    pulled: IntervalPulled,
    observables: Mutex<HashMap<usize, Arc<Vec<f64>>>>,
}

impl IntervalModel {
    /// Builds the model; ρ_0 is normalized to unit mass.
    pub fn new(seq: IntervalSequence, grid: Grid, rho0: Option<Vec<f64>>) -> Result<Arc<Self>> {
        let w = grid.weights();
        let rho0: Vec<f64> = match rho0 {
            Some(r) => {
                if r.len() != grid.len() {
                    return Err(Error::Dimension(format!("initial density has {} values, grid has {}", r.len(), grid.len())));
                }
                let mass = dot(&r, &w);
                if !(mass > 0.0) || r.iter().any(|x| *x < 0.0) {
                    return Err(Error::NonPositive);
                }
                r.iter().map(|x| x / mass).collect()
            }
            None => vec![1.0; grid.len()],
        };
        let lebesgue = rho0.iter().all(|x| (x - 1.0).abs() < 1e-15)
            && seq.family.iter().all(|st| crate::transfer::interval_raw(st, grid, 0).apply_re(&vec![1.0; grid.len()]).iter().all(|x| (x - 1.0).abs() < 1e-13));
        let core = Arc::new(IntervalCore {
            raw: IntervalOperators::new(seq, grid),
            densities: Mutex::new(DensityCache { rho: vec![Arc::new(rho0)], cycle: None }),
            pulled: Mutex::new(HashMap::new()),
            lebesgue,
        });
        Ok(Arc::new(IntervalModel { pulled: IntervalPulled(core.clone()), core, observables: Mutex::new(HashMap::new()) }))
    }

    pub fn grid(&self) -> Grid {
        self.core.raw.grid
    }

    pub fn seq(&self) -> &IntervalSequence {
        &self.core.raw.seq
    }

    pub fn raw(&self) -> &IntervalOperators {
        &self.core.raw
    }

    pub fn is_lebesgue(&self) -> bool {
        self.core.lebesgue
    }

    /// ρ_j = L_0^j ρ_0 at grid nodes, renormalized to unit mass each step
    /// (collocation conserves mass only up to the discretization error).
    pub fn density(&self, j: i64) -> Result<Arc<Vec<f64>>> {
        self.core.density(j)
    }

    /// Number of stored densities (the cache stops growing once ρ_j cycles).
    pub fn stored_densities(&self) -> usize {
        self.core.densities.lock().unwrap().rho.len()
    }

    /// f_j at a point x.
    pub fn observable_at(&self, j: i64, x: f64) -> Result<f64> {
        let seq = self.seq();
        Ok(seq.observable_at(j)?.eval(seq.stage_at_signed(j)?, x))
    }

    fn prepared(&self, n: usize) -> Result<IntervalSampler<'_>> {
        let seq = self.seq();
        let inverses = seq
            .family
            .iter()
            .map(|st| {
                st.branches
                    .iter()
                    .map(|b| {
                        let (img_lo, img_hi) = b.image();
                        BranchInverse { img_lo, img_hi, lo: b.lo, hi: b.hi, map: b.map.clone() }
                    })
                    .collect()
            })
            .collect();
        let mut steps = Vec::with_capacity(n);
        for j in 0..n {
            let rho = if self.core.lebesgue { None } else { Some(self.density(j as i64)?) };
            steps.push((seq.stage_index(j as i64)?, seq.observable_index(j as i64)?, rho));
        }
        Ok(IntervalSampler { model: self, inverses, steps })
    }

    /// Draws x from the piecewise-linear density ρ_j by rejection.
    fn draw_from_density(&self, j: i64, rng: &mut dyn rand::RngCore) -> Result<f64> {
        if self.core.lebesgue {
            return Ok(rng.random::<f64>());
        }
        let rho = self.density(j)?;
        let max = rho.iter().cloned().fold(0.0, f64::max);
        // unit mass, so the acceptance rate is 1/max
        if max > 100.0 {
            return Err(Error::DensityTooPeaked(1.0 / max));
        }
        let grid = self.grid();
        loop {
            let x: f64 = rng.random();
            if rng.random::<f64>() * max <= grid.interp(&rho, x) {
                return Ok(x);
            }
        }
    }
}

struct BranchInverse {
    img_lo: f64,
    img_hi: f64,
    lo: f64,
    hi: f64,
    map: BranchMap,
}

/// Backward chain: x_n ~ ρ_n, then a preimage y of x_{j+1} with weight ρ_j(y)/|T_j'(y)|.
struct IntervalSampler<'a> {
    model: &'a IntervalModel,
    inverses: Vec<Vec<BranchInverse>>,
    /// (stage index, observable index, ρ_j unless Lebesgue)
    steps: Vec<(usize, usize, Option<Arc<Vec<f64>>>)>,
}

impl PathSampler for IntervalSampler<'_> {
    fn len(&self) -> usize {
        self.steps.len()
    }

    fn sample(&self, rng: &mut dyn rand::RngCore, out: &mut [f64]) -> Result<()> {
        let n = self.steps.len().min(out.len());
        let seq = self.model.seq();
        let grid = self.model.grid();
        let mut x = self.model.draw_from_density(n as i64, rng)?;
        let mut cand = [(0.0f64, 0.0f64); 16];
        for j in (0..n).rev() {
            let (si, oi, rho) = &self.steps[j];
            let mut k = 0;
            for b in &self.inverses[*si] {
                if x >= b.img_lo - EDGE_TOL && x <= b.img_hi + EDGE_TOL {
                    let y = b.map.inverse(x.clamp(b.img_lo, b.img_hi), b.lo, b.hi);
                    let d = b.map.deriv(y).abs();
                    let w = match rho {
                        Some(r) => grid.interp(r, y) / d,
                        None => 1.0 / d,
                    };
                    if k == cand.len() {
                        return Err(Error::InvalidStage("more than 16 preimages".into()));
                    }
                    cand[k] = (y, w);
                    k += 1;
                }
            }
            let total: f64 = cand[..k].iter().map(|c| c.1).sum();
            let mut u = rng.random::<f64>() * total;
            let mut pick = k - 1;
            for (i, c) in cand[..k].iter().enumerate() {
                if u < c.1 {
                    pick = i;
                    break;
                }
                u -= c.1;
            }
            x = cand[pick].0;
            out[j] = seq.observables[*oi].eval(&seq.family[*si], x);
        }
        Ok(())
    }
}

impl Model for IntervalModel {
    fn ops(&self) -> &dyn OperatorSequence {
        &self.pulled
    }

    fn observable(&self, j: i64) -> Result<Arc<Vec<f64>>> {
        let seq = self.seq();
        let key = match seq.period() {
            Some(p) if j >= 0 => (j as usize) % p,
            _ => j.max(0) as usize,
        };
        if let Some(v) = self.observables.lock().unwrap().get(&key) {
            return Ok(v.clone());
        }
        let st = seq.stage_at_signed(j)?;
        let f = seq.observable_at(j)?;
        let v = Arc::new(self.grid().sample(|x| f.eval(st, x)));
        self.observables.lock().unwrap().insert(key, v.clone());
        Ok(v)
    }

    fn compose_next(&self, j: i64, v: &[f64]) -> Result<Vec<f64>> {
        let st = self.seq().stage_at_signed(j)?;
        let g = self.grid();
        Ok((0..g.len()).map(|i| g.interp(v, st.apply(g.node(i)))).collect())
    }

    fn apply_minus_composed(&self, j: i64, g: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        // L̃(g − v∘T) = L̃g − v·L̃1, exact since T maps each preimage onto the node
        let op = self.ops().operator(j)?;
        let lg = op.apply_re(g);
        let l1 = op.apply_re(&vec![1.0; g.len()]);
        Ok(lg.iter().zip(&l1).zip(v).map(|((a, b), c)| a - c * b).collect())
    }

    fn sample_path(&self, rng: &mut dyn rand::RngCore, out: &mut [f64]) -> Result<()> {
        self.prepared(out.len())?.sample(rng, out)
    }

    fn path_sampler(&self, n: usize) -> Result<Box<dyn PathSampler + '_>> {
        Ok(Box::new(self.prepared(n)?))
    }

    fn sample_points(&self, rng: &mut dyn rand::RngCore, n: usize) -> Result<Vec<PathPoint>> {
        let seq = self.seq();
        let grid = self.grid();
        let mut pts = vec![PathPoint::X(0.0); n + 1];
        let mut x = self.draw_from_density(n as i64, rng)?;
        pts[n] = PathPoint::X(x);
        let mut cand: Vec<(f64, f64)> = Vec::with_capacity(8);
        for j in (0..n).rev() {
            let st = seq.stage_at(j)?;
            let rho = self.density(j as i64)?;
            cand.clear();
            st.for_each_preimage(x, |y, d| cand.push((y, grid.interp(&rho, y) / d)));
            let total: f64 = cand.iter().map(|c| c.1).sum();
            let mut u = rng.random::<f64>() * total;
            let mut pick = cand.len() - 1;
            for (k, c) in cand.iter().enumerate() {
                if u < c.1 {
                    pick = k;
                    break;
                }
                u -= c.1;
            }
            x = cand[pick].0;
            pts[j] = PathPoint::X(x);
        }
        Ok(pts)
    }

    fn eval_point(&self, _j: i64, v: &[f64], p: &PathPoint) -> f64 {
        match p {
            PathPoint::X(x) => self.grid().interp(v, *x),
            PathPoint::Pair(_) => f64::NAN,
        }
    }

    fn observable_point(&self, j: i64, p: &PathPoint) -> Result<f64> {
        match p {
            PathPoint::X(x) => self.observable_at(j, *x),
            PathPoint::Pair(_) => Err(Error::InvalidInput("symbolic point on an interval model".into())),
        }
    }

    fn mixing_horizon(&self) -> usize {
        self.seq().mixing_horizon
    }
}

/// Sequential SFT started from the Gibbs measure μ_0, acting on pair functions.
pub struct SftModel {
    pub sys: Arc<GibbsSystem>,
    ops: PairOperators,
}

impl SftModel {
    pub fn new(sys: GibbsSystem) -> Arc<Self> {
        let sys = Arc::new(sys);
        let ops = sys.pair_operators();
        Arc::new(SftModel { sys, ops })
    }

    fn dims(&self, j: i64) -> Result<(usize, usize)> {
        let st = self.sys.stage(j)?;
        Ok((st.d_in(), st.d_out()))
    }

    /// Symbol path x_0..x_n from μ_0.
    pub fn sample_symbols(&self, rng: &mut dyn rand::RngCore, out: &mut [usize]) -> Result<()> {
        let mut r = RngRef(rng);
        self.sys.sample_path_into(0, &mut r, out)
    }
}

struct RngRef<'a>(&'a mut dyn rand::RngCore);

impl rand::RngCore for RngRef<'_> {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}

impl Model for SftModel {
    fn ops(&self) -> &dyn OperatorSequence {
        &self.ops
    }

    fn observable(&self, j: i64) -> Result<Arc<Vec<f64>>> {
        let (d0, d1) = self.dims(j)?;
        let f = self.sys.seq.observable_at(j)?;
        Ok(Arc::new((0..d0 * d1).map(|i| f.eval(i / d1, i % d1)).collect()))
    }

    fn compose_next(&self, j: i64, v: &[f64]) -> Result<Vec<f64>> {
        let (d0, d1) = self.dims(j)?;
        let st1 = self.sys.stage(j + 1)?;
        let d2 = st1.d_out();
        if v.len() != d1 * d2 {
            return Err(Error::Dimension(format!("expected {} values, got {}", d1 * d2, v.len())));
        }
        // v must be a function of its first symbol on admissible pairs
        let mut first = vec![f64::NAN; d1];
        for b in 0..d1 {
            for c in 0..d2 {
                if st1.allowed(b, c) {
                    let x = v[b * d2 + c];
                    if first[b].is_nan() {
                        first[b] = x;
                    } else if (first[b] - x).abs() > 1e-12 * (1.0 + x.abs()) {
                        return Err(Error::InvalidInput(format!("composition needs a function of x_0; differs at symbol {b}")));
                    }
                }
            }
        }
        Ok((0..d0 * d1).map(|i| first[i % d1]).collect())
    }

    fn sample_path(&self, rng: &mut dyn rand::RngCore, out: &mut [f64]) -> Result<()> {
        let mut sym = vec![0usize; out.len() + 1];
        self.sample_symbols(rng, &mut sym)?;
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.sys.seq.observable_at(j as i64)?.eval(sym[j], sym[j + 1]);
        }
        Ok(())
    }

    fn sample_points(&self, rng: &mut dyn rand::RngCore, n: usize) -> Result<Vec<PathPoint>> {
        let mut sym = vec![0usize; n + 2];
        self.sample_symbols(rng, &mut sym)?;
        (0..=n)
            .map(|j| {
                let d1 = self.sys.stage(j as i64)?.d_out();
                Ok(PathPoint::Pair(sym[j] * d1 + sym[j + 1]))
            })
            .collect()
    }

    fn eval_point(&self, _j: i64, v: &[f64], p: &PathPoint) -> f64 {
        match p {
            PathPoint::Pair(i) => v[*i],
            PathPoint::X(_) => f64::NAN,
        }
    }

    fn observable_point(&self, j: i64, p: &PathPoint) -> Result<f64> {
        match p {
            PathPoint::Pair(i) => Ok(self.observable(j)?[*i]),
            PathPoint::X(_) => Err(Error::InvalidInput("interval point on a symbolic model".into())),
        }
    }

    fn mixing_horizon(&self) -> usize {
        self.sys.seq.mixing_horizon
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::{IntervalObservable, IntervalStage};
    use crate::rng::substream;

    #[test]
    fn lebesgue_fast_path_and_density_cycle() {
        let seq = IntervalSequence::periodic(vec![IntervalStage::doubling(), IntervalStage::markov_w()], IntervalObservable::Cos { amp: 1.0, freq: 1.0 });
        let m = IntervalModel::new(seq.clone(), Grid::new(256).unwrap(), None).unwrap();
        assert!(m.is_lebesgue());
        let skew = IntervalSequence::periodic(vec![IntervalStage::doubling(), IntervalStage::skew()], IntervalObservable::Cos { amp: 1.0, freq: 1.0 });
        let m2 = IntervalModel::new(skew, Grid::new(256).unwrap(), None).unwrap();
        assert!(!m2.is_lebesgue());
        let r = m2.density(500).unwrap();
        assert!(m2.stored_densities() < 200);
        let w = m2.ops().weights(500).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let l1 = m2.ops().operator(7).unwrap().apply_re(&vec![1.0; 257]);
        assert!(l1.iter().all(|x| (x - 1.0).abs() < 1e-13));
        assert!(r.iter().all(|x| *x > 0.0));
    }

    #[test]
    fn backward_chain_marginal() {
        let seq = IntervalSequence::autonomous(IntervalStage::doubling(), IntervalObservable::Poly { coeffs: vec![0.0, 1.0] });
        let m = IntervalModel::new(seq, Grid::new(64).unwrap(), Some(Grid::new(64).unwrap().sample(|x| 2.0 * x))).unwrap();
        let mut rng = substream(3, "bc", 0);
        let mut out = vec![0.0; 3];
        let (mut s0, mut s1) = (0.0, 0.0);
        let n = 200_000;
        for _ in 0..n {
            m.sample_path(&mut rng, &mut out).unwrap();
            s0 += out[0];
            s1 += out[1];
        }
        // x_0 ~ 2x dx has mean 2/3; x_1 = 2x_0 mod 1 has density y + 1/2
        assert!((s0 / n as f64 - 2.0 / 3.0).abs() < 0.003);
        assert!((s1 / n as f64 - 7.0 / 12.0).abs() < 0.003);
    }
}

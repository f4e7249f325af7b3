//! Transfer operators as finite matrices: raw, normalized, pulled-back and
//! twisted kinds, composition, and empirical (LY2)/(SC) diagnostics.

use crate::error::{Error, Result};
use crate::fit::{geometric_fit, linear_fit, GeometricFit};
use crate::funcspace::{variation_of, Basis, Grid};
use crate::maps::{IntervalSequence, IntervalStage, SftStage};
use crate::C64;
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::Write;
use std::sync::{Arc, Mutex};

pub const SINGULAR_DENSITY: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum OpKind {
    Raw,
    Normalized,
    PulledBack,
    Twisted { re: f64, im: f64 },
    Mixed,
}

impl OpKind {
    pub fn twisted(z: C64) -> Self {
        OpKind::Twisted { re: z.re, im: z.im }
    }
}

#[derive(Clone, Debug)]
enum Repr {
    /// CSR rows
    Sparse { indptr: Vec<usize>, idx: Vec<u32>, val: Vec<C64>, real: bool },
    Dense(DMatrix<C64>),
}

/// Matrix of L_j^{steps}: B_time → B_{time+steps}. Columns index the source basis.
#[derive(Clone, Debug)]
pub struct TransferMatrix {
    pub kind: OpKind,
    pub time: i64,
    pub steps: usize,
    pub rows: usize,
    pub cols: usize,
    repr: Arc<Repr>,
}

impl TransferMatrix {
    pub fn from_dense(kind: OpKind, time: i64, m: DMatrix<C64>) -> Self {
        TransferMatrix { kind, time, steps: 1, rows: m.nrows(), cols: m.ncols(), repr: Arc::new(Repr::Dense(m)) }
    }

    pub fn from_rows(kind: OpKind, time: i64, cols: usize, rows: Vec<Vec<(usize, C64)>>) -> Self {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut idx = Vec::new();
        let mut val = Vec::new();
        indptr.push(0);
        for mut r in rows.iter().cloned() {
            r.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (c, v) in r {
                if last == Some(c) {
                    *val.last_mut().unwrap() += v;
                } else {
                    idx.push(c as u32);
                    val.push(v);
                    last = Some(c);
                }
            }
            indptr.push(idx.len());
        }
        let real = val.iter().all(|v: &C64| v.im == 0.0);
        TransferMatrix { kind, time, steps: 1, rows: rows.len(), cols, repr: Arc::new(Repr::Sparse { indptr, idx, val, real }) }
    }

    /// Cheap copy with a different time label (operators shared across a periodic schedule).
    pub fn at_time(&self, time: i64) -> Self {
        let mut t = self.clone();
        t.time = time;
        t
    }

    pub fn with_kind(mut self, kind: OpKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn is_sparse(&self) -> bool {
        matches!(*self.repr, Repr::Sparse { .. })
    }

    pub fn nnz(&self) -> usize {
        match &*self.repr {
            Repr::Sparse { idx, .. } => idx.len(),
            Repr::Dense(m) => m.len(),
        }
    }

    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); self.rows];
        self.apply_into(v, &mut out);
        out
    }

    pub fn apply_into(&self, v: &[C64], out: &mut [C64]) {
        debug_assert_eq!(v.len(), self.cols);
        match &*self.repr {
            Repr::Sparse { indptr, idx, val, .. } => {
                for r in 0..self.rows {
                    let mut s = C64::new(0.0, 0.0);
                    for k in indptr[r]..indptr[r + 1] {
                        s += val[k] * v[idx[k] as usize];
                    }
                    out[r] = s;
                }
            }
            Repr::Dense(m) => {
                for r in 0..self.rows {
                    let mut s = C64::new(0.0, 0.0);
                    for c in 0..self.cols {
                        s += m[(r, c)] * v[c];
                    }
                    out[r] = s;
                }
            }
        }
    }

    /// Real application using the real parts of the entries.
    pub fn apply_re(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.apply_re_into(v, &mut out);
        out
    }

    pub fn apply_re_into(&self, v: &[f64], out: &mut [f64]) {
        match &*self.repr {
            Repr::Sparse { indptr, idx, val, .. } => {
                for r in 0..self.rows {
                    let mut s = 0.0;
                    for k in indptr[r]..indptr[r + 1] {
                        s += val[k].re * v[idx[k] as usize];
                    }
                    out[r] = s;
                }
            }
            Repr::Dense(m) => {
                for r in 0..self.rows {
                    let mut s = 0.0;
                    for c in 0..self.cols {
                        s += m[(r, c)].re * v[c];
                    }
                    out[r] = s;
                }
            }
        }
    }

    pub fn is_real(&self) -> bool {
        match &*self.repr {
            Repr::Sparse { real, .. } => *real,
            Repr::Dense(m) => m.iter().all(|v| v.im == 0.0),
        }
    }

    /// Transpose (no conjugation): the dual action on weight vectors.
    pub fn apply_transpose(&self, w: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); self.cols];
        match &*self.repr {
            Repr::Sparse { indptr, idx, val, .. } => {
                for r in 0..self.rows {
                    for k in indptr[r]..indptr[r + 1] {
                        out[idx[k] as usize] += val[k] * w[r];
                    }
                }
            }
            Repr::Dense(m) => {
                for r in 0..self.rows {
                    for c in 0..self.cols {
                        out[c] += m[(r, c)] * w[r];
                    }
                }
            }
        }
        out
    }

    pub fn apply_transpose_re(&self, w: &[f64]) -> Vec<f64> {
        let wc: Vec<C64> = w.iter().map(|&x| C64::new(x, 0.0)).collect();
        self.apply_transpose(&wc).into_iter().map(|v| v.re).collect()
    }

    fn map_entries(&self, f: impl Fn(usize, usize, C64) -> C64) -> Arc<Repr> {
        Arc::new(match &*self.repr {
            Repr::Sparse { indptr, idx, val, .. } => {
                let mut nv = val.clone();
                for r in 0..self.rows {
                    for k in indptr[r]..indptr[r + 1] {
                        nv[k] = f(r, idx[k] as usize, val[k]);
                    }
                }
                let real = nv.iter().all(|v| v.im == 0.0);
                Repr::Sparse { indptr: indptr.clone(), idx: idx.clone(), val: nv, real }
            }
            Repr::Dense(m) => Repr::Dense(DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| f(r, c, m[(r, c)]))),
        })
    }

    /// L ∘ diag(d)
    pub fn scale_cols(&self, d: &[C64]) -> Self {
        let mut t = self.clone();
        t.repr = self.map_entries(|_, c, v| v * d[c]);
        t
    }

    /// diag(d) ∘ L
    pub fn scale_rows(&self, d: &[C64]) -> Self {
        let mut t = self.clone();
        t.repr = self.map_entries(|r, _, v| v * d[r]);
        t
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        match &*self.repr {
            Repr::Sparse { indptr, idx, val, .. } => {
                for k in indptr[r]..indptr[r + 1] {
                    if idx[k] as usize == c {
                        return val[k];
                    }
                }
                C64::new(0.0, 0.0)
            }
            Repr::Dense(m) => m[(r, c)],
        }
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        match &*self.repr {
            Repr::Dense(m) => m.clone(),
            Repr::Sparse { indptr, idx, val, .. } => {
                let mut m = DMatrix::from_element(self.rows, self.cols, C64::new(0.0, 0.0));
                for r in 0..self.rows {
                    for k in indptr[r]..indptr[r + 1] {
                        m[(r, idx[k] as usize)] += val[k];
                    }
                }
                m
            }
        }
    }

    /// next ∘ self
    pub fn then(&self, next: &TransferMatrix) -> Result<TransferMatrix> {
        let expected = self.time + self.steps as i64;
        if next.time != expected {
            return Err(Error::IndexMismatch { expected, got: next.time });
        }
        if next.cols != self.rows {
            return Err(Error::Dimension(format!("compose {}x{} after {}x{}", next.rows, next.cols, self.rows, self.cols)));
        }
        let kind = if next.kind == self.kind { self.kind } else { OpKind::Mixed };
        let repr = match (&*self.repr, &*next.repr) {
            (Repr::Sparse { indptr: ia, idx: ja, val: va, .. }, Repr::Sparse { indptr: ib, idx: jb, val: vb, .. }) => {
                let mut rows = Vec::with_capacity(next.rows);
                let mut acc: HashMap<usize, C64> = HashMap::new();
                for r in 0..next.rows {
                    acc.clear();
                    for k in ib[r]..ib[r + 1] {
                        let mid = jb[k] as usize;
                        for l in ia[mid]..ia[mid + 1] {
                            *acc.entry(ja[l] as usize).or_insert(C64::new(0.0, 0.0)) += vb[k] * va[l];
                        }
                    }
                    rows.push(acc.iter().map(|(c, v)| (*c, *v)).collect::<Vec<_>>());
                }
                let mut t = TransferMatrix::from_rows(kind, self.time, self.cols, rows);
                t.steps = self.steps + next.steps;
                return Ok(t);
            }
            _ => Repr::Dense(next.to_dense() * self.to_dense()),
        };
        Ok(TransferMatrix { kind, time: self.time, steps: self.steps + next.steps, rows: next.rows, cols: self.cols, repr: Arc::new(repr) })
    }

    pub fn max_abs_diff(&self, other: &TransferMatrix) -> f64 {
        (self.to_dense() - other.to_dense()).iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Row-major CSV with a header line `kind,j,z_re,z_im,rows,cols`.
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        let (zr, zi) = match self.kind {
            OpKind::Twisted { re, im } => (re, im),
            _ => (0.0, 0.0),
        };
        writeln!(w, "kind,j,z_re,z_im,rows,cols")?;
        writeln!(w, "{:?},{},{},{},{},{}", self.kind, self.time, zr, zi, self.rows, self.cols)?;
        let m = self.to_dense();
        for r in 0..self.rows {
            let line: Vec<String> = (0..self.cols)
                .map(|c| {
                    let v = m[(r, c)];
                    if v.im == 0.0 { format!("{}", v.re) } else { format!("{}{:+}i", v.re, v.im) }
                })
                .collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// Composition L_{j+n-1}∘⋯∘L_j of consecutive operators.
pub fn compose(ops: &[TransferMatrix]) -> Result<TransferMatrix> {
    let mut it = ops.iter();
    let first = it.next().ok_or_else(|| Error::InvalidInput("empty composition".into()))?.clone();
    it.try_fold(first, |acc, op| acc.then(op))
}

/// Stage plus the basis it acts on.
#[derive(Clone, Copy, Debug)]
pub enum StageRef<'a> {
    Interval(&'a IntervalStage, Grid),
    Sft(&'a SftStage),
}

/// Data needed by each operator kind.
#[derive(Clone, Copy, Debug)]
pub enum Context<'a> {
    Raw,
    Normalized { lambda: f64, h: &'a [f64], h_next: &'a [f64] },
    PulledBack { rho: &'a [f64], rho_next: &'a [f64] },
    Twisted { f: &'a [f64], z: C64 },
}

/// Collocation (L g)(x_i) = Σ_k g(y_k)/|T'(y_k)| with linear interpolation of g.
pub fn interval_raw(stage: &IntervalStage, grid: Grid, time: i64) -> TransferMatrix {
    let rows = (0..grid.len())
        .map(|i| {
            let mut row = Vec::with_capacity(2 * stage.branch_count());
            stage.for_each_preimage(grid.node(i), |y, d| {
                let (c, t) = grid.locate(y);
                row.push((c, C64::new((1.0 - t) / d, 0.0)));
                if t > 0.0 {
                    row.push((c + 1, C64::new(t / d, 0.0)));
                }
            });
            row
        })
        .collect();
    TransferMatrix::from_rows(OpKind::Raw, time, grid.len(), rows)
}

/// M_{b,a} = A_{ab} e^{φ(a,b)} on functions of the current symbol.
pub fn sft_raw(stage: &SftStage, time: i64) -> TransferMatrix {
    let m = DMatrix::from_fn(stage.d_out(), stage.d_in(), |b, a| {
        if stage.allowed(a, b) { C64::new(stage.potential[a][b].exp(), 0.0) } else { C64::new(0.0, 0.0) }
    });
    TransferMatrix::from_dense(OpKind::Raw, time, m)
}

fn check_density(d: &[f64], j: i64) -> Result<()> {
    let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min >= SINGULAR_DENSITY) {
        return Err(Error::SingularDensity { j, min });
    }
    Ok(())
}

fn cvec(v: impl Iterator<Item = f64>) -> Vec<C64> {
    v.map(|x| C64::new(x, 0.0)).collect()
}

/// Applies the kind-specific conjugation or twist to a raw operator.
pub fn derive_kind(raw: &TransferMatrix, ctx: Context) -> Result<TransferMatrix> {
    Ok(match ctx {
        Context::Raw => raw.clone(),
        Context::Normalized { lambda, h, h_next } => {
            check_density(h, raw.time)?;
            check_density(h_next, raw.time + 1)?;
            raw.scale_cols(&cvec(h.iter().cloned()))
                .scale_rows(&cvec(h_next.iter().map(|x| 1.0 / (lambda * x))))
                .with_kind(OpKind::Normalized)
        }
        Context::PulledBack { rho, rho_next } => {
            check_density(rho, raw.time)?;
            check_density(rho_next, raw.time + 1)?;
            raw.scale_cols(&cvec(rho.iter().cloned()))
                .scale_rows(&cvec(rho_next.iter().map(|x| 1.0 / x)))
                .with_kind(OpKind::PulledBack)
        }
        Context::Twisted { f, z } => {
            let e: Vec<C64> = f.iter().map(|&x| (z * x).exp()).collect();
            raw.scale_cols(&e).with_kind(OpKind::twisted(z))
        }
    })
}

pub fn assemble(stage: StageRef, ctx: Context, time: i64) -> Result<TransferMatrix> {
    let raw = match stage {
        StageRef::Interval(st, g) => interval_raw(st, g, time),
        StageRef::Sft(st) => sft_raw(st, time),
    };
    derive_kind(&raw, ctx)
}

/// Indexed family of operators L_j with reference measures m_j.
pub trait OperatorSequence: Send + Sync {
    fn operator(&self, j: i64) -> Result<TransferMatrix>;
    /// Weights of the reference measure m_j in the basis of B_j.
    fn weights(&self, j: i64) -> Result<Arc<Vec<f64>>>;
    fn basis(&self, j: i64) -> Result<Basis>;
    /// Whether operators exist for negative times.
    fn two_sided(&self) -> bool;
    /// Period of the operator sequence, if any.
    fn period(&self) -> Option<usize> {
        None
    }
}

/// Raw collocation operators of an interval-map sequence on a fixed grid.
pub struct IntervalOperators {
    pub seq: IntervalSequence,
    pub grid: Grid,
    weights: Arc<Vec<f64>>,
    cache: Mutex<HashMap<usize, TransferMatrix>>,
}

impl IntervalOperators {
    pub fn new(seq: IntervalSequence, grid: Grid) -> Self {
        IntervalOperators { weights: Arc::new(grid.weights()), seq, grid, cache: Mutex::new(HashMap::new()) }
    }
}

impl OperatorSequence for IntervalOperators {
    fn operator(&self, j: i64) -> Result<TransferMatrix> {
        let idx = if j < 0 && !self.seq.schedule.two_sided() {
            return Err(Error::ScheduleRange { j, len: 0 });
        } else {
            self.seq.stage_index(j)?
        };
        let mut cache = self.cache.lock().unwrap();
        let op = cache.entry(idx).or_insert_with(|| interval_raw(&self.seq.family[idx], self.grid, 0));
        Ok(op.at_time(j))
    }

    fn weights(&self, _j: i64) -> Result<Arc<Vec<f64>>> {
        Ok(self.weights.clone())
    }

    fn basis(&self, _j: i64) -> Result<Basis> {
        Ok(Basis::Grid(self.grid))
    }

    fn two_sided(&self) -> bool {
        self.seq.schedule.two_sided()
    }

    fn period(&self) -> Option<usize> {
        self.seq.schedule.period()
    }
}

/// Applies L_j^n to v.
pub fn apply_n(ops: &dyn OperatorSequence, j: i64, n: usize, v: &[C64]) -> Result<Vec<C64>> {
    let mut cur = v.to_vec();
    for k in 0..n {
        cur = ops.operator(j + k as i64)?.apply(&cur);
    }
    Ok(cur)
}

pub fn apply_n_re(ops: &dyn OperatorSequence, j: i64, n: usize, v: &[f64]) -> Result<Vec<f64>> {
    let mut cur = v.to_vec();
    for k in 0..n {
        cur = ops.operator(j + k as i64)?.apply_re(&cur);
    }
    Ok(cur)
}

fn allowed_mask(b: &Basis) -> Option<Arc<Vec<bool>>> {
    match b {
        Basis::Words { allowed, .. } => Some(allowed.clone()),
        _ => None,
    }
}

fn masked_min(v: &[f64], mask: &Option<Arc<Vec<bool>>>) -> f64 {
    v.iter()
        .enumerate()
        .filter(|(i, _)| mask.as_ref().map_or(true, |m| m[*i]))
        .map(|(_, x)| *x)
        .fold(f64::INFINITY, f64::min)
}

fn var_re(b: &Basis, v: &[f64]) -> f64 {
    variation_of(b, &cvec(v.iter().cloned()))
}

/// Random real BV test functions: trigonometric polynomials and step functions
/// on grids, random tables on word bases.
pub fn sample_bv(basis: &Basis, count: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..count)
        .map(|s| match basis {
            Basis::Grid(g) => {
                if s % 2 == 0 {
                    let terms: Vec<(f64, f64, f64)> = (1..=rng.random_range(1..=6))
                        .map(|k| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), k as f64))
                        .collect();
                    let c0 = rng.random_range(-1.0..1.0);
                    g.sample(|x| {
                        c0 + terms.iter().map(|(a, b, k)| a * (std::f64::consts::TAU * k * x).cos() + b * (std::f64::consts::TAU * k * x).sin()).sum::<f64>()
                    })
                } else {
                    let jumps = rng.random_range(1..=8);
                    let mut br: Vec<f64> = (0..jumps).map(|_| rng.random::<f64>()).collect();
                    br.sort_by(|a, b| a.total_cmp(b));
                    let vals: Vec<f64> = (0..=jumps).map(|_| rng.random_range(-1.0..1.0)).collect();
                    g.sample(|x| vals[br.iter().filter(|&&b| x >= b).count()])
                }
            }
            Basis::Words { allowed, .. } => allowed.iter().map(|&a| if a { rng.random_range(-1.0..1.0) } else { 0.0 }).collect(),
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyReport {
    pub rho_hat: f64,
    pub k_hat: f64,
    pub pass: bool,
}

/// Fits the tightest line var(L^N h) ≤ ρ var(h) + K ‖h‖₁ supporting the sample
/// points from above at the median abscissa.
pub fn verify_ly(ops: &dyn OperatorSequence, j: i64, n: usize, sample_count: usize, rng: &mut impl Rng) -> Result<LyReport> {
    if n == 0 {
        return Err(Error::InvalidInput("N must be at least 1".into()));
    }
    let b0 = ops.basis(j)?;
    let bn = ops.basis(j + n as i64)?;
    let w = ops.weights(j)?;
    let mut pts = Vec::new();
    for h in sample_bv(&b0, sample_count, rng) {
        let l1: f64 = h.iter().zip(w.iter()).map(|(a, b)| a.abs() * b).sum();
        if l1 <= 0.0 {
            continue;
        }
        let lh = apply_n_re(ops, j, n, &h)?;
        pts.push((var_re(&b0, &h) / l1, var_re(&bn, &lh) / l1));
    }
    if pts.is_empty() {
        return Err(Error::InvalidInput("no usable samples".into()));
    }
    let mut xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    xs.sort_by(|a, b| a.total_cmp(b));
    let x_mid = xs[xs.len() / 2];
    // candidate lines: through pairs of points and horizontal through the max
    let feasible = |rho: f64| pts.iter().map(|(x, y)| y - rho * x).fold(f64::NEG_INFINITY, f64::max).max(0.0);
    let mut best = (0.0, feasible(0.0));
    let mut best_obj = best.1;
    for a in &pts {
        for b in &pts {
            if b.0 > a.0 {
                let rho = (b.1 - a.1) / (b.0 - a.0);
                if rho >= 0.0 {
                    let k = feasible(rho);
                    let obj = rho * x_mid + k;
                    if obj < best_obj - 1e-15 {
                        best_obj = obj;
                        best = (rho, k);
                    }
                }
            }
        }
    }
    Ok(LyReport { rho_hat: best.0, k_hat: best.1, pass: best.0 < 1.0 })
}

/// Cone members h ≥ 0 with v(h) ≤ a m(h), including the constant 1.
pub fn sample_cone(basis: &Basis, weights: &[f64], a: f64, count: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut out = vec![vec![1.0; basis.len()]];
    for g in sample_bv(basis, count.saturating_sub(1), rng) {
        let lo = g.iter().cloned().fold(f64::INFINITY, f64::min);
        let g: Vec<f64> = g.iter().map(|x| x - lo).collect();
        let v = var_re(basis, &g);
        let m: f64 = g.iter().zip(weights).map(|(x, w)| x * w).sum();
        let theta: f64 = rng.random_range(0.5..=1.0);
        let c = (v / (a * theta) - m).max(0.0);
        out.push(g.iter().map(|x| x + c).collect());
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScReport {
    pub n_a: Option<usize>,
    pub alpha_a: f64,
    pub pass: bool,
    /// (time, sample index) with the smallest ratio at the horizon when failing
    pub offending: Option<(i64, usize)>,
}

/// Smallest n with min(L_j^n h) ≥ α m_j(h), α > 0, uniformly over sampled cone
/// members and j in the window.
pub fn verify_sc(
    ops: &dyn OperatorSequence,
    a: f64,
    window: std::ops::Range<i64>,
    horizon: usize,
    sample_count: usize,
    rng: &mut impl Rng,
) -> Result<ScReport> {
    if a <= 0.0 {
        return Err(Error::ConeParameter { a, v: 0.0 });
    }
    let mut worst = vec![(f64::INFINITY, 0i64, 0usize); horizon + 1];
    for j in window {
        let basis = ops.basis(j)?;
        let w = ops.weights(j)?;
        for (s, h) in sample_cone(&basis, &w, a, sample_count, rng).into_iter().enumerate() {
            let m: f64 = h.iter().zip(w.iter()).map(|(x, y)| x * y).sum();
            let mut cur = h;
            for n in 1..=horizon {
                cur = ops.operator(j + n as i64 - 1)?.apply_re(&cur);
                let mask = allowed_mask(&ops.basis(j + n as i64)?);
                let r = masked_min(&cur, &mask) / m;
                if r < worst[n].0 {
                    worst[n] = (r, j, s);
                }
            }
        }
    }
    for n in 1..=horizon {
        if worst[n].0 > SINGULAR_DENSITY {
            return Ok(ScReport { n_a: Some(n), alpha_a: worst[n].0, pass: true, offending: None });
        }
    }
    Ok(ScReport { n_a: None, alpha_a: worst[horizon].0.max(0.0), pass: false, offending: Some((worst[horizon].1, worst[horizon].2)) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinReport {
    pub delta0: f64,
    pub sup_norm: f64,
    pub delta2: f64,
    pub decay: GeometricFit,
    pub n_a: usize,
    pub alpha_a: f64,
}

/// Derives (SC) constants from ess-inf L_0^n 1 ≥ δ0 and the decay of mean-zero parts.
pub fn verify_min_implies_sc(ops: &dyn OperatorSequence, a: f64, horizon: usize, sample_count: usize, rng: &mut impl Rng) -> Result<MinReport> {
    let b0 = ops.basis(0)?;
    let w0 = ops.weights(0)?;
    let mut one = vec![1.0; b0.len()];
    let (mut delta0, mut sup_norm) = (f64::INFINITY, 0.0f64);
    for n in 1..=horizon {
        one = ops.operator(n as i64 - 1)?.apply_re(&one);
        let mask = allowed_mask(&ops.basis(n as i64)?);
        delta0 = delta0.min(masked_min(&one, &mask));
        sup_norm = sup_norm.max(one.iter().map(|x| x.abs()).fold(0.0, f64::max));
    }
    if delta0 <= SINGULAR_DENSITY {
        return Err(Error::SingularDensity { j: horizon as i64, min: delta0 });
    }
    let mut prof = vec![0.0f64; horizon + 1];
    for g in sample_bv(&b0, sample_count, rng) {
        let m: f64 = g.iter().zip(w0.iter()).map(|(x, y)| x * y).sum();
        let g: Vec<f64> = g.iter().map(|x| x - m).collect();
        let nb = bv_re(&b0, &g, &w0);
        if nb == 0.0 {
            continue;
        }
        let mut cur = g;
        for n in 1..=horizon {
            cur = ops.operator(n as i64 - 1)?.apply_re(&cur);
            let wn = ops.weights(n as i64)?;
            prof[n] = prof[n].max(bv_re(&ops.basis(n as i64)?, &cur, &wn) / nb);
        }
    }
    let ns: Vec<f64> = (1..=horizon).map(|n| n as f64).collect();
    let floor = 1e-13;
    let (xs, ys): (Vec<f64>, Vec<f64>) = ns.iter().zip(&prof[1..]).filter(|(_, v)| **v > floor).map(|(a, b)| (*a, *b)).unzip();
    let decay = if xs.len() >= 2 {
        geometric_fit(&xs, &ys)?
    } else {
        GeometricFit { rate: 0.0, prefactor: prof[1].max(floor), r2: 1.0 }
    };
    let c = decay.prefactor.max(1.0);
    let n_a = (1..=10_000).find(|&n| c * (2.0 + a) * decay.rate.powi(n as i32) <= delta0 / 2.0).unwrap_or(10_000);
    let delta2 = delta0 / sup_norm;
    Ok(MinReport { delta0, sup_norm, delta2, decay, n_a, alpha_a: delta2 / 2.0 })
}

pub fn bv_re(b: &Basis, v: &[f64], w: &[f64]) -> f64 {
    v.iter().zip(w).map(|(x, y)| x.abs() * y).sum::<f64>() + var_re(b, v)
}

/// sup over j in the window of ‖L_j^n 1‖_∞ for n = 1..=n_max, and the slope of
/// its log against n.
pub fn bound1_profile(ops: &dyn OperatorSequence, window: std::ops::Range<i64>, n_max: usize) -> Result<(Vec<f64>, f64)> {
    let mut prof = vec![0.0f64; n_max];
    for j in window {
        let mut cur = vec![1.0; ops.basis(j)?.len()];
        for n in 0..n_max {
            cur = ops.operator(j + n as i64)?.apply_re(&cur);
            prof[n] = prof[n].max(cur.iter().map(|x| x.abs()).fold(0.0, f64::max));
        }
    }
    let xs: Vec<f64> = (1..=n_max).map(|n| n as f64).collect();
    let ys: Vec<f64> = prof.iter().map(|v| v.ln()).collect();
    let slope = linear_fit(&xs, &ys).map(|f| f.slope).unwrap_or(0.0);
    Ok((prof, slope))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::{IntervalObservable, PairObservable, SftSequence};
    use crate::rng::substream;

    fn doubling_ops(g: usize) -> IntervalOperators {
        IntervalOperators::new(IntervalSequence::autonomous(IntervalStage::doubling(), IntervalObservable::Zero), Grid::new(g).unwrap())
    }

    #[test]
    fn doubling_examples() {
        let ops = doubling_ops(1024);
        let l = ops.operator(0).unwrap();
        let one = l.apply_re(&vec![1.0; 1025]);
        assert!(one.iter().all(|v| (v - 1.0).abs() < 1e-14));
        let x = ops.grid.nodes();
        let lx = l.apply_re(&x);
        for (i, v) in lx.iter().enumerate() {
            assert!((v - (x[i] / 2.0 + 0.25)).abs() < 1e-14);
        }
        let five: Vec<TransferMatrix> = (0..5).map(|j| ops.operator(j).unwrap()).collect();
        let l5 = compose(&five).unwrap();
        assert!(l5.apply_re(&vec![1.0; 1025]).iter().all(|v| (v - 1.0).abs() < 1e-13));
        assert_eq!(compose(&five[..1]).unwrap().max_abs_diff(&five[0]), 0.0);
        assert!(matches!(five[1].then(&five[0]), Err(Error::IndexMismatch { .. })));
    }

    #[test]
    fn sft_examples() {
        let m = sft_raw(&SftStage::full_shift(2, 0.5f64.ln()), 0);
        for r in 0..2 {
            for c in 0..2 {
                assert!((m.get(r, c).re - 0.5).abs() < 1e-15);
            }
        }
        let gm = sft_raw(&SftStage::golden_mean(0.0), 0);
        let mut v = vec![C64::new(1.0, 0.0); 2];
        let mut last = 1.0;
        let mut ratio = 0.0;
        for _ in 0..60 {
            v = gm.apply(&v);
            let s: f64 = v.iter().map(|x| x.re).sum();
            ratio = s / last;
            last = s;
        }
        assert!((ratio - (1.0 + 5f64.sqrt()) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn kinds() {
        let ops = doubling_ops(256);
        let raw = ops.operator(0).unwrap();
        let f = ops.grid.sample(|x| (std::f64::consts::TAU * x).cos());
        let tw = derive_kind(&raw, Context::Twisted { f: &f, z: C64::new(0.0, 0.0) }).unwrap();
        assert!(tw.max_abs_diff(&raw) < 1e-14);
        let rho: Vec<f64> = ops.grid.sample(|x| 1.0 + 0.5 * (std::f64::consts::TAU * x).cos());
        let rho1 = raw.apply_re(&rho);
        let pb = derive_kind(&raw, Context::PulledBack { rho: &rho, rho_next: &rho1 }).unwrap();
        assert!(pb.apply_re(&vec![1.0; 257]).iter().all(|v| (v - 1.0).abs() < 1e-10));
        let zero = vec![0.0; 257];
        assert!(matches!(derive_kind(&raw, Context::PulledBack { rho: &zero, rho_next: &rho1 }), Err(Error::SingularDensity { .. })));
    }

    #[test]
    fn lasota_yorke_doubling_and_tent() {
        let mut rng = substream(3, "ly", 0);
        let r = verify_ly(&doubling_ops(1024), 0, 1, 200, &mut rng).unwrap();
        assert!(r.pass && r.rho_hat <= 0.5 + 1e-3, "{r:?}");
        let tent = IntervalOperators::new(IntervalSequence::autonomous(IntervalStage::tent(), IntervalObservable::Zero), Grid::new(1024).unwrap());
        let r = verify_ly(&tent, 0, 1, 200, &mut rng).unwrap();
        assert!(r.pass && r.rho_hat <= 0.5 + 1e-3, "{r:?}");
    }

    #[test]
    fn covering_doubling() {
        let mut rng = substream(4, "sc", 0);
        let r = verify_sc(&doubling_ops(1024), 1.0, 0..2, 5, 50, &mut rng).unwrap();
        assert_eq!(r.n_a, Some(1));
        assert!(r.alpha_a >= 0.25, "{r:?}");
        let m = verify_min_implies_sc(&doubling_ops(1024), 1.0, 20, 20, &mut rng).unwrap();
        assert!((m.delta0 - 1.0).abs() < 1e-12 && (m.delta2 - 1.0).abs() < 1e-12 && (m.alpha_a - 0.5).abs() < 1e-12);
    }

    #[test]
    fn bound1_is_flat() {
        let seq = IntervalSequence::periodic(vec![IntervalStage::doubling(), IntervalStage::skew()], IntervalObservable::Zero);
        let ops = IntervalOperators::new(seq, Grid::new(512).unwrap());
        let (prof, slope) = bound1_profile(&ops, 0..4, 200).unwrap();
        assert!(prof.iter().all(|v| v.is_finite() && *v < 3.0));
        assert!(slope.abs() < 1e-3);
        let _ = SftSequence::autonomous(SftStage::full_shift(2, 0.0), PairObservable::from_symbols(&[0.0, 0.0], 2));
    }

    #[test]
    fn csv_dump() {
        let m = sft_raw(&SftStage::golden_mean(0.0), 3);
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("kind,j,z_re,z_im,rows,cols\nRaw,3,0,0,2,2\n1,1\n1,0"));
    }
}

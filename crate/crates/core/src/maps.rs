//! Sequences of interval stages and SFT stages, schedules, observables,
//! and checks of expansion and covering.

use crate::error::{Error, Result};
use crate::rng::mix64;
use serde::{Deserialize, Serialize};

/// Closed-form monotone branch map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum BranchMap {
    /// slope·x + offset
    Affine { slope: f64, offset: f64 },
    /// (a x + b)/(c x + d)
    Mobius { a: f64, b: f64, c: f64, d: f64 },
    /// Σ coeffs[k] x^k
    Poly { coeffs: Vec<f64> },
}

impl BranchMap {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            BranchMap::Affine { slope, offset } => slope * x + offset,
            BranchMap::Mobius { a, b, c, d } => (a * x + b) / (c * x + d),
            BranchMap::Poly { coeffs } => coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c),
        }
    }

    pub fn deriv(&self, x: f64) -> f64 {
        match self {
            BranchMap::Affine { slope, .. } => *slope,
            BranchMap::Mobius { a, b, c, d } => {
                let den = c * x + d;
                (a * d - b * c) / (den * den)
            }
            BranchMap::Poly { coeffs } => coeffs
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(0.0, |acc, (k, c)| acc * x + k as f64 * c),
        }
    }

    pub fn second_deriv(&self, x: f64) -> f64 {
        match self {
            BranchMap::Affine { .. } => 0.0,
            BranchMap::Mobius { a, b, c, d } => {
                let den = c * x + d;
                -2.0 * c * (a * d - b * c) / (den * den * den)
            }
            BranchMap::Poly { coeffs } => coeffs
                .iter()
                .enumerate()
                .skip(2)
                .rev()
                .fold(0.0, |acc, (k, c)| acc * x + (k * (k - 1)) as f64 * c),
        }
    }

    /// Solves T(y) = x on [lo, hi]; caller guarantees x lies in the closed image.
    pub fn inverse(&self, x: f64, lo: f64, hi: f64) -> f64 {
        let y = match self {
            BranchMap::Affine { slope, offset } => (x - offset) / slope,
            BranchMap::Mobius { a, b, c, d } => (d * x - b) / (a - c * x),
            BranchMap::Poly { .. } => {
                let (mut l, mut h) = (lo, hi);
                let up = self.eval(hi) > self.eval(lo);
                for _ in 0..200 {
                    let m = 0.5 * (l + h);
                    if (self.eval(m) < x) == up {
                        l = m;
                    } else {
                        h = m;
                    }
                }
                0.5 * (l + h)
            }
        };
        y.clamp(lo, hi)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub lo: f64,
    pub hi: f64,
    pub map: BranchMap,
    /// (inf|T'|, sup|T'|, sup|T''|) on the domain
    #[serde(skip)]
    pub derivative_bounds: (f64, f64, f64),
}

impl Branch {
    pub fn new(lo: f64, hi: f64, map: BranchMap) -> Result<Self> {
        if !(hi > lo) {
            return Err(Error::InvalidStage(format!("empty branch domain [{lo},{hi})")));
        }
        let mut b = Branch { lo, hi, map, derivative_bounds: (0.0, 0.0, 0.0) };
        b.derivative_bounds = b.compute_bounds()?;
        Ok(b)
    }

    // Affine and Möbius derivatives are monotone on an interval avoiding the
    // pole, so endpoint values are exact; dense sampling covers the rest.
    fn compute_bounds(&self) -> Result<(f64, f64, f64)> {
        let samples = 2049;
        let (mut lo_d, mut hi_d, mut hi_dd) = (f64::INFINITY, 0.0f64, 0.0f64);
        let mut sign = 0.0;
        for i in 0..samples {
            let x = self.lo + (self.hi - self.lo) * i as f64 / (samples - 1) as f64;
            let d = self.map.deriv(x);
            if !d.is_finite() || d == 0.0 {
                return Err(Error::InvalidStage("branch derivative vanishes or is singular".into()));
            }
            if sign == 0.0 {
                sign = d.signum();
            } else if d.signum() != sign {
                return Err(Error::InvalidStage("branch map is not injective".into()));
            }
            lo_d = lo_d.min(d.abs());
            hi_d = hi_d.max(d.abs());
            hi_dd = hi_dd.max(self.map.second_deriv(x).abs());
        }
        Ok((lo_d, hi_d, hi_dd))
    }

    /// Closed image interval (min, max).
    pub fn image(&self) -> (f64, f64) {
        let a = self.map.eval(self.lo);
        let b = self.map.eval(self.hi);
        (a.min(b), a.max(b))
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x < self.hi
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalStage {
    pub name: String,
    pub branches: Vec<Branch>,
}

/// Tolerance on branch endpoints and images.
pub const EDGE_TOL: f64 = 1e-12;

impl IntervalStage {
    pub fn new(name: &str, branches: Vec<Branch>) -> Result<Self> {
        if branches.is_empty() {
            return Err(Error::InvalidStage("no branches".into()));
        }
        let mut bs = branches;
        bs.sort_by(|a, b| a.lo.total_cmp(&b.lo));
        if bs[0].lo.abs() > EDGE_TOL || (bs[bs.len() - 1].hi - 1.0).abs() > EDGE_TOL {
            return Err(Error::InvalidStage("branch domains must cover [0,1]".into()));
        }
        for w in bs.windows(2) {
            if (w[0].hi - w[1].lo).abs() > EDGE_TOL {
                return Err(Error::InvalidStage("branch domains must be contiguous".into()));
            }
        }
        for b in &bs {
            let (lo, hi) = b.image();
            if lo < -EDGE_TOL || hi > 1.0 + EDGE_TOL {
                return Err(Error::InvalidStage(format!("branch image [{lo},{hi}] leaves [0,1]")));
            }
        }
        Ok(IntervalStage { name: name.to_string(), branches: bs })
    }

    fn affine_full(name: &str, pieces: &[(f64, f64, bool)]) -> Self {
        let branches = pieces
            .iter()
            .map(|&(lo, hi, up)| {
                let s = 1.0 / (hi - lo);
                let map = if up {
                    BranchMap::Affine { slope: s, offset: -s * lo }
                } else {
                    BranchMap::Affine { slope: -s, offset: s * hi }
                };
                Branch::new(lo, hi, map).expect("valid affine branch")
            })
            .collect();
        IntervalStage::new(name, branches).expect("valid stage")
    }

    pub fn doubling() -> Self {
        Self::affine_full("doubling", &[(0.0, 0.5, true), (0.5, 1.0, true)])
    }

    pub fn tent() -> Self {
        Self::affine_full("tent", &[(0.0, 0.5, true), (0.5, 1.0, false)])
    }

    pub fn tripling() -> Self {
        Self::affine_full("tripling", &[(0.0, 1.0 / 3.0, true), (1.0 / 3.0, 2.0 / 3.0, true), (2.0 / 3.0, 1.0, true)])
    }

    /// 3x on [0,1/3), 3/2(x−1/3) on [1/3,1).
    pub fn markov_w() -> Self {
        Self::affine_full("markov_w", &[(0.0, 1.0 / 3.0, true), (1.0 / 3.0, 1.0, true)])
    }

    /// 3x/(1+x) on [0,1/2), 2x−1 on [1/2,1). Does not preserve Lebesgue measure.
    pub fn skew() -> Self {
        let b1 = Branch::new(0.0, 0.5, BranchMap::Mobius { a: 3.0, b: 0.0, c: 1.0, d: 1.0 }).unwrap();
        let b2 = Branch::new(0.5, 1.0, BranchMap::Affine { slope: 2.0, offset: -1.0 }).unwrap();
        IntervalStage::new("skew", vec![b1, b2]).unwrap()
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "doubling" => Ok(Self::doubling()),
            "tent" => Ok(Self::tent()),
            "tripling" => Ok(Self::tripling()),
            "markov_w" => Ok(Self::markov_w()),
            "skew" => Ok(Self::skew()),
            other => Err(Error::InvalidStage(format!("unknown interval stage '{other}'"))),
        }
    }

    pub fn branch_count(&self) -> usize {
        self.branches.len()
    }

    /// Half-open convention: the branch whose [lo,hi) holds x; x=1 uses the last branch.
    pub fn branch_index(&self, x: f64) -> usize {
        self.branches.iter().position(|b| b.contains(x)).unwrap_or(self.branches.len() - 1)
    }

    pub fn apply(&self, x: f64) -> f64 {
        let y = self.branches[self.branch_index(x)].map.eval(x);
        // 2x−1 style branches land on 1.0 only at the excluded right endpoint
        if y >= 1.0 { y - 1.0 } else { y.max(0.0) }
    }

    /// Preimages of x with |T'| at each; images are treated as closed so the
    /// operator is continuous at branch endpoints.
    pub fn inverse_branches(&self, x: f64) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.branches.len());
        self.for_each_preimage(x, |y, d| out.push((y, d)));
        out
    }

    #[inline]
    pub fn for_each_preimage(&self, x: f64, mut f: impl FnMut(f64, f64)) {
        for b in &self.branches {
            let (lo, hi) = b.image();
            if x >= lo - EDGE_TOL && x <= hi + EDGE_TOL {
                let y = b.map.inverse(x.clamp(lo, hi), b.lo, b.hi);
                f(y, b.map.deriv(y).abs());
            }
        }
    }

    pub fn verify_expansion(&self) -> ExpansionReport {
        let min_derivative = self.branches.iter().map(|b| b.derivative_bounds.0).fold(f64::INFINITY, f64::min);
        let max_second_derivative = self.branches.iter().map(|b| b.derivative_bounds.2).fold(0.0, f64::max);
        let min_branch_length = self.branches.iter().map(|b| b.len()).fold(f64::INFINITY, f64::min);
        ExpansionReport {
            min_derivative,
            max_second_derivative,
            min_branch_length,
            pass: min_derivative > 1.0 && min_branch_length > 0.0 && max_second_derivative.is_finite(),
        }
    }

    /// Image of a finite union of intervals.
    pub fn image_of(&self, region: &[(f64, f64)]) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for &(a, b) in region {
            for br in &self.branches {
                let lo = a.max(br.lo);
                let hi = b.min(br.hi);
                if hi > lo {
                    let (u, v) = (br.map.eval(lo), br.map.eval(hi));
                    out.push((u.min(v).max(0.0), u.max(v).min(1.0)));
                }
            }
        }
        merge_intervals(out)
    }
}

fn merge_intervals(mut v: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (a, b) in v {
        if let Some(last) = out.last_mut() {
            if a <= last.1 + EDGE_TOL {
                last.1 = last.1.max(b);
                continue;
            }
        }
        out.push((a, b));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionReport {
    pub min_derivative: f64,
    pub max_second_derivative: f64,
    pub min_branch_length: f64,
    pub pass: bool,
}

/// One step of a sequential subshift of finite type with a memory-1 potential.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SftStage {
    pub name: String,
    /// adjacency[a][b] for a in the alphabet at time j, b at time j+1
    pub adjacency: Vec<Vec<bool>>,
    /// φ_j(a,b); ignored where adjacency is false
    pub potential: Vec<Vec<f64>>,
}

impl SftStage {
    pub fn new(name: &str, adjacency: Vec<Vec<bool>>, potential: Vec<Vec<f64>>) -> Result<Self> {
        let d_in = adjacency.len();
        if d_in == 0 {
            return Err(Error::InvalidStage("empty alphabet".into()));
        }
        let d_out = adjacency[0].len();
        if adjacency.iter().any(|r| r.len() != d_out) || potential.len() != d_in || potential.iter().any(|r| r.len() != d_out) {
            return Err(Error::InvalidStage("ragged adjacency or potential".into()));
        }
        for (a, row) in adjacency.iter().enumerate() {
            if !row.iter().any(|&x| x) {
                return Err(Error::InvalidStage(format!("row {a} of adjacency is empty")));
            }
            for b in 0..d_out {
                if row[b] && !potential[a][b].is_finite() {
                    return Err(Error::InvalidStage(format!("potential infinite at ({a},{b})")));
                }
            }
        }
        for b in 0..d_out {
            if !adjacency.iter().any(|r| r[b]) {
                return Err(Error::InvalidStage(format!("column {b} of adjacency is empty")));
            }
        }
        Ok(SftStage { name: name.to_string(), adjacency, potential })
    }

    pub fn full_shift(d: usize, phi: f64) -> Self {
        SftStage::new("full_shift", vec![vec![true; d]; d], vec![vec![phi; d]; d]).unwrap()
    }

    pub fn golden_mean(phi: f64) -> Self {
        SftStage::new("golden_mean", vec![vec![true, true], vec![true, false]], vec![vec![phi; 2]; 2]).unwrap()
    }

    pub fn d_in(&self) -> usize {
        self.adjacency.len()
    }

    pub fn d_out(&self) -> usize {
        self.adjacency[0].len()
    }

    pub fn allowed(&self, a: usize, b: usize) -> bool {
        self.adjacency[a][b]
    }

    /// Left shift of a word; the first pair must be admissible.
    pub fn apply(&self, word: &[usize]) -> Result<Vec<usize>> {
        if word.len() < 2 {
            return Err(Error::InvalidInput("need at least two symbols to shift".into()));
        }
        if !self.allowed(word[0], word[1]) {
            return Err(Error::InvalidInput("inadmissible word".into()));
        }
        Ok(word[1..].to_vec())
    }

    pub fn image_symbols(&self, set: &[usize]) -> Vec<usize> {
        (0..self.d_out()).filter(|&b| set.iter().any(|&a| self.adjacency[a][b])).collect()
    }
}

/// How stage indices are drawn over time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    Periodic { pattern: Vec<usize> },
    Explicit { indices: Vec<usize> },
    Seeded { seed: u64 },
}

impl Schedule {
    pub fn index_at(&self, j: i64, family_len: usize) -> Result<usize> {
        match self {
            Schedule::Periodic { pattern } => Ok(pattern[j.rem_euclid(pattern.len() as i64) as usize]),
            Schedule::Explicit { indices } => {
                if j < 0 || j as usize >= indices.len() {
                    Err(Error::ScheduleRange { j, len: indices.len() })
                } else {
                    Ok(indices[j as usize])
                }
            }
            Schedule::Seeded { seed } => Ok((mix64(seed ^ mix64(j as u64)) % family_len as u64) as usize),
        }
    }

    /// Whether negative times have a natural meaning.
    pub fn two_sided(&self) -> bool {
        !matches!(self, Schedule::Explicit { .. })
    }

    pub fn period(&self) -> Option<usize> {
        match self {
            Schedule::Periodic { pattern } => Some(pattern.len()),
            _ => None,
        }
    }

    pub fn validate(&self, family_len: usize) -> Result<()> {
        let bad = match self {
            Schedule::Periodic { pattern } => pattern.is_empty() || pattern.iter().any(|&i| i >= family_len),
            Schedule::Explicit { indices } => indices.iter().any(|&i| i >= family_len),
            Schedule::Seeded { .. } => family_len == 0,
        };
        if bad {
            Err(Error::InvalidInput("schedule references a missing family member".into()))
        } else {
            Ok(())
        }
    }
}

/// Observable on [0,1], closed form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum IntervalObservable {
    Zero,
    Const { value: f64 },
    /// amp·cos(2π·freq·x)
    Cos { amp: f64, freq: f64 },
    /// amp·sin(2π·freq·x)
    Sin { amp: f64, freq: f64 },
    Poly { coeffs: Vec<f64> },
    /// piecewise constant: values[k] on [breaks[k], breaks[k+1])
    Step { breaks: Vec<f64>, values: Vec<f64> },
    Sum { terms: Vec<IntervalObservable> },
    /// v∘T_j − v for the stage active at time j
    Coboundary { v: Box<IntervalObservable> },
}

impl IntervalObservable {
    pub fn eval(&self, stage: &IntervalStage, x: f64) -> f64 {
        use std::f64::consts::TAU;
        match self {
            IntervalObservable::Zero => 0.0,
            IntervalObservable::Const { value } => *value,
            IntervalObservable::Cos { amp, freq } => amp * (TAU * freq * x).cos(),
            IntervalObservable::Sin { amp, freq } => amp * (TAU * freq * x).sin(),
            IntervalObservable::Poly { coeffs } => coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c),
            IntervalObservable::Step { breaks, values } => {
                let k = breaks.iter().rposition(|&b| x >= b).unwrap_or(0);
                values[k.min(values.len() - 1)]
            }
            IntervalObservable::Sum { terms } => terms.iter().map(|t| t.eval(stage, x)).sum(),
            IntervalObservable::Coboundary { v } => v.eval(stage, stage.apply(x)) - v.eval(stage, x),
        }
    }

    /// Whether the observable needs the stage (only coboundaries do).
    pub fn is_stage_free(&self) -> bool {
        match self {
            IntervalObservable::Coboundary { .. } => false,
            IntervalObservable::Sum { terms } => terms.iter().all(|t| t.is_stage_free()),
            _ => true,
        }
    }
}

/// Observable on two consecutive symbols: f_j(x_0, x_1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairObservable {
    pub table: Vec<Vec<f64>>,
}

impl PairObservable {
    pub fn from_symbols(values: &[f64], d_out: usize) -> Self {
        PairObservable { table: values.iter().map(|&v| vec![v; d_out]).collect() }
    }

    pub fn eval(&self, a: usize, b: usize) -> f64 {
        self.table[a][b]
    }
}

/// Family + schedule for stages and observables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapSequence<S, O> {
    pub family: Vec<S>,
    pub schedule: Schedule,
    pub observables: Vec<O>,
    pub observable_schedule: Schedule,
    pub mixing_horizon: usize,
}

pub type IntervalSequence = MapSequence<IntervalStage, IntervalObservable>;
pub type SftSequence = MapSequence<SftStage, PairObservable>;

impl<S, O> MapSequence<S, O> {
    pub fn new(family: Vec<S>, schedule: Schedule, observables: Vec<O>, observable_schedule: Schedule) -> Result<Self> {
        schedule.validate(family.len())?;
        observable_schedule.validate(observables.len())?;
        Ok(MapSequence { family, schedule, observables, observable_schedule, mixing_horizon: 1 })
    }

    pub fn with_mixing_horizon(mut self, m: usize) -> Self {
        self.mixing_horizon = m;
        self
    }

    pub fn stage_index(&self, j: i64) -> Result<usize> {
        self.schedule.index_at(j, self.family.len())
    }

    /// Stage at time j ≥ 0.
    pub fn stage_at(&self, j: usize) -> Result<&S> {
        Ok(&self.family[self.stage_index(j as i64)?])
    }

    /// Stage at a possibly negative time; only periodic and seeded schedules extend.
    pub fn stage_at_signed(&self, j: i64) -> Result<&S> {
        if j < 0 && !self.schedule.two_sided() {
            return Err(Error::ScheduleRange { j, len: 0 });
        }
        Ok(&self.family[self.stage_index(j)?])
    }

    pub fn observable_index(&self, j: i64) -> Result<usize> {
        self.observable_schedule.index_at(j, self.observables.len())
    }

    pub fn observable_at(&self, j: i64) -> Result<&O> {
        Ok(&self.observables[self.observable_index(j)?])
    }

    /// Common period of stage and observable schedules, if both are periodic.
    pub fn period(&self) -> Option<usize> {
        let a = self.schedule.period()?;
        let b = self.observable_schedule.period()?;
        Some(lcm(a, b))
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 { a } else { gcd(b, a % b) }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

impl IntervalSequence {
    pub fn autonomous(stage: IntervalStage, f: IntervalObservable) -> Self {
        MapSequence::new(vec![stage], Schedule::Periodic { pattern: vec![0] }, vec![f], Schedule::Periodic { pattern: vec![0] }).unwrap()
    }

    pub fn periodic(stages: Vec<IntervalStage>, f: IntervalObservable) -> Self {
        let p = (0..stages.len()).collect();
        MapSequence::new(stages, Schedule::Periodic { pattern: p }, vec![f], Schedule::Periodic { pattern: vec![0] }).unwrap()
    }

    pub fn apply_composed(&self, j: usize, n: usize, mut x: f64) -> Result<f64> {
        for k in 0..n {
            x = self.stage_at(j + k)?.apply(x);
        }
        Ok(x)
    }

    /// Smallest n ≤ horizon with T_j^n(region) = [0,1] up to endpoints.
    pub fn verify_covering(&self, j: usize, region: (f64, f64), horizon: usize) -> Result<usize> {
        if !(region.1 > region.0) || horizon == 0 {
            return Err(Error::InvalidInput("empty region or zero horizon".into()));
        }
        let mut img = vec![region];
        for n in 1..=horizon {
            img = self.stage_at(j + n - 1)?.image_of(&img);
            if img.len() == 1 && img[0].0 <= EDGE_TOL && img[0].1 >= 1.0 - EDGE_TOL {
                return Ok(n);
            }
        }
        Err(Error::CoveringFailed { horizon, image: img })
    }
}

impl SftSequence {
    pub fn autonomous(stage: SftStage, f: PairObservable) -> Self {
        MapSequence::new(vec![stage], Schedule::Periodic { pattern: vec![0] }, vec![f], Schedule::Periodic { pattern: vec![0] }).unwrap()
    }

    /// Smallest n ≤ horizon such that the symbols reachable from `symbols` at
    /// time j fill the alphabet at time j+n. Failure carries the last image as
    /// degenerate intervals (symbol, symbol).
    pub fn verify_covering(&self, j: usize, symbols: &[usize], horizon: usize) -> Result<usize> {
        if symbols.is_empty() || horizon == 0 {
            return Err(Error::InvalidInput("empty region or zero horizon".into()));
        }
        let mut set = symbols.to_vec();
        for n in 1..=horizon {
            let st = self.stage_at(j + n - 1)?;
            set = st.image_symbols(&set);
            if set.len() == st.d_out() {
                return Ok(n);
            }
        }
        Err(Error::CoveringFailed { horizon, image: set.iter().map(|&s| (s as f64, s as f64)).collect() })
    }

    /// Smallest M such that every product A^{(j)}⋯A^{(j+M)} over the window is positive.
    pub fn product_positivity_horizon(&self, window: usize, max_m: usize) -> Result<usize> {
        for m in 0..=max_m {
            let mut ok = true;
            for j in 0..window {
                let st = self.stage_at(j)?;
                for a in 0..st.d_in() {
                    if self.verify_covering(j, &[a], m + 1).map(|n| n > m + 1).unwrap_or(true) {
                        ok = false;
                        break;
                    }
                }
                if !ok {
                    break;
                }
            }
            if ok {
                return Ok(m);
            }
        }
        Err(Error::NotMixing(format!("no positive product within horizon {max_m}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn schedules() {
        let seq = IntervalSequence::periodic(vec![IntervalStage::doubling(), IntervalStage::tent()], IntervalObservable::Zero);
        assert_eq!(seq.stage_at(3).unwrap().name, "tent");
        let ex = MapSequence::new(vec![IntervalStage::doubling()], Schedule::Explicit { indices: vec![0] }, vec![IntervalObservable::Zero], Schedule::Periodic { pattern: vec![0] }).unwrap();
        assert!(matches!(ex.stage_at(1), Err(Error::ScheduleRange { .. })));
        let sd = MapSequence::new(vec![IntervalStage::doubling(), IntervalStage::tent()], Schedule::Seeded { seed: 9 }, vec![IntervalObservable::Zero], Schedule::Periodic { pattern: vec![0] }).unwrap();
        assert_eq!(sd.stage_index(7).unwrap(), sd.stage_index(7).unwrap());
    }

    #[test]
    fn apply_examples() {
        let d = IntervalStage::doubling();
        assert!(close(d.apply(0.3), 0.6, 1e-15));
        assert!(close(d.apply(0.75), 0.5, 1e-15));
        let s = SftStage::full_shift(2, 0.0);
        assert_eq!(s.apply(&[0, 1, 1]).unwrap(), vec![1, 1]);
    }

    #[test]
    fn preimages() {
        let d = IntervalStage::doubling().inverse_branches(0.5);
        assert_eq!(d.len(), 2);
        assert!(close(d[0].0, 0.25, 1e-15) && close(d[1].0, 0.75, 1e-15) && d[0].1 == 2.0);
        let t = IntervalStage::tent().inverse_branches(0.5);
        assert!(close(t[0].0, 0.25, 1e-15) && close(t[1].0, 0.75, 1e-15));
        let tr = IntervalStage::tripling().inverse_branches(0.1);
        let want = [0.1 / 3.0, 1.1 / 3.0, 2.1 / 3.0];
        assert_eq!(tr.len(), 3);
        for (p, w) in tr.iter().zip(want) {
            assert!(close(p.0, w, 1e-15) && close(p.1, 3.0, 1e-15));
        }
    }

    #[test]
    fn expansion_reports() {
        let r = IntervalStage::doubling().verify_expansion();
        assert_eq!((r.min_derivative, r.max_second_derivative, r.min_branch_length, r.pass), (2.0, 0.0, 0.5, true));
        let slow = IntervalStage::new(
            "slow",
            vec![
                Branch::new(0.0, 0.5, BranchMap::Affine { slope: 0.9, offset: 0.0 }).unwrap(),
                Branch::new(0.5, 1.0, BranchMap::Affine { slope: 2.0, offset: -1.0 }).unwrap(),
            ],
        )
        .unwrap();
        assert!(!slow.verify_expansion().pass);
        let sk = IntervalStage::skew().verify_expansion();
        assert!(sk.pass && close(sk.min_derivative, 4.0 / 3.0, 1e-12));
        // Möbius second derivative −6/(1+x)^3 peaks at x=0
        assert!(close(sk.max_second_derivative, 6.0, 1e-12));
    }

    #[test]
    fn coverings() {
        let seq = IntervalSequence::autonomous(IntervalStage::doubling(), IntervalObservable::Zero);
        assert_eq!(seq.verify_covering(0, (0.0, 0.25), 10).unwrap(), 2);
        let full = SftSequence::autonomous(SftStage::full_shift(2, 0.0), PairObservable::from_symbols(&[0.0, 0.0], 2));
        assert_eq!(full.verify_covering(0, &[1], 5).unwrap(), 1);
        let gm = SftSequence::autonomous(SftStage::golden_mean(0.0), PairObservable::from_symbols(&[0.0, 0.0], 2));
        assert!(matches!(gm.verify_covering(0, &[1], 1), Err(Error::CoveringFailed { .. })));
        assert_eq!(gm.verify_covering(0, &[1], 2).unwrap(), 2);
        assert_eq!(gm.product_positivity_horizon(4, 5).unwrap(), 1);
    }

    #[test]
    fn right_inverse() {
        for st in [IntervalStage::doubling(), IntervalStage::tent(), IntervalStage::skew(), IntervalStage::markov_w()] {
            for i in 0..1000 {
                let x = i as f64 / 1000.0;
                for (y, _) in st.inverse_branches(x) {
                    let tx = st.branches[st.branch_index(y)].map.eval(y);
                    let img = if y >= 1.0 { x } else { st.apply(y) };
                    assert!(close(tx, x, 1e-12) || close(img, x, 1e-12), "{} {x} {y}", st.name);
                }
            }
        }
    }
}

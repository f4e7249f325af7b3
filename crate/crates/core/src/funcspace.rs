//! Discrete function spaces: grid functions on [0,1] and word tables over an
//! alphabet, with variation, BV norms, cones and the Hilbert metric.

use crate::error::{Error, Result};
use crate::C64;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Uniform grid with `cells` cells and `cells + 1` nodes x_i = i/cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub cells: usize,
}

impl Grid {
    pub fn new(cells: usize) -> Result<Self> {
        if cells < 2 {
            return Err(Error::InvalidInput("grid size must be at least 2".into()));
        }
        Ok(Grid { cells })
    }

    pub fn len(&self) -> usize {
        self.cells + 1
    }

    pub fn node(&self, i: usize) -> f64 {
        i as f64 / self.cells as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }

    /// Trapezoid weights (sum to 1).
    pub fn weights(&self) -> Vec<f64> {
        let h = 1.0 / self.cells as f64;
        let mut w = vec![h; self.len()];
        w[0] = 0.5 * h;
        w[self.cells] = 0.5 * h;
        w
    }

    /// Left node index and fractional offset of x.
    #[inline]
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let s = x.clamp(0.0, 1.0) * self.cells as f64;
        let c = (s.floor() as usize).min(self.cells - 1);
        (c, s - c as f64)
    }

    #[inline]
    pub fn interp<T>(&self, v: &[T], x: f64) -> T
    where
        T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T>,
    {
        let (c, t) = self.locate(x);
        v[c] * (1.0 - t) + v[c + 1] * t
    }

    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.nodes().into_iter().map(f).collect()
    }
}

/// Basis of a discrete space B_j.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Basis {
    Grid(Grid),
    /// Table over words (x_0..x_{m-1}) with x_k in an alphabet of size dims[k],
    /// stored row-major. `allowed` marks admissible words; `alpha` is the
    /// Hölder exponent of the base-2 metric.
    Words { dims: Vec<usize>, allowed: Arc<Vec<bool>>, alpha: f64 },
}

impl Basis {
    pub fn len(&self) -> usize {
        match self {
            Basis::Grid(g) => g.len(),
            Basis::Words { dims, .. } => dims.iter().product(),
        }
    }

    pub fn words(dims: Vec<usize>, allowed: Vec<bool>) -> Self {
        Basis::Words { dims, allowed: Arc::new(allowed), alpha: 1.0 }
    }

    /// All words admissible.
    pub fn full_words(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Basis::words(dims, vec![true; n])
    }
}

/// Element of B_j in a discrete basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldFunction {
    pub basis: Basis,
    pub values: Vec<C64>,
    pub time: i64,
}

impl FieldFunction {
    pub fn new(basis: Basis, values: Vec<C64>, time: i64) -> Result<Self> {
        if values.len() != basis.len() {
            return Err(Error::Dimension(format!("{} values for basis of size {}", values.len(), basis.len())));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::InvalidInput("non-finite values".into()));
        }
        Ok(FieldFunction { basis, values, time })
    }

    pub fn real(basis: Basis, values: &[f64], time: i64) -> Result<Self> {
        Self::new(basis, values.iter().map(|&v| C64::new(v, 0.0)).collect(), time)
    }

    pub fn on_grid(grid: Grid, f: impl Fn(f64) -> f64, time: i64) -> Self {
        Self::real(Basis::Grid(grid), &grid.sample(f), time).expect("finite samples")
    }

    pub fn constant(basis: Basis, c: f64, time: i64) -> Self {
        let n = basis.len();
        Self::real(basis, &vec![c; n], time).unwrap()
    }

    pub fn re(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }

    pub fn sup(&self) -> f64 {
        self.mask_iter().map(|(_, v)| v.norm()).fold(0.0, f64::max)
    }

    fn mask_iter(&self) -> impl Iterator<Item = (usize, &C64)> {
        let allowed = match &self.basis {
            Basis::Words { allowed, .. } => Some(allowed.clone()),
            _ => None,
        };
        self.values.iter().enumerate().filter(move |(i, _)| allowed.as_ref().map_or(true, |a| a[*i]))
    }
}

/// Total variation on the grid; Hölder-constant surrogate on word tables.
pub fn variation(h: &FieldFunction) -> f64 {
    variation_of(&h.basis, &h.values)
}

pub fn variation_of(basis: &Basis, v: &[C64]) -> f64 {
    match basis {
        Basis::Grid(_) => v.windows(2).map(|w| (w[1] - w[0]).norm()).sum(),
        Basis::Words { dims, allowed, alpha } => word_variation(dims, allowed, *alpha, v),
    }
}

/// Real-valued grid TV, the hot path for operator diagnostics.
pub fn grid_tv(v: &[f64]) -> f64 {
    v.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

fn word_variation(dims: &[usize], allowed: &[bool], alpha: f64, v: &[C64]) -> f64 {
    // Words agreeing on the first k symbols and differing at position k are
    // at distance 2^{-k}.
    let m = dims.len();
    let mut best = 0.0f64;
    let mut stride = vec![1usize; m];
    for k in (0..m.saturating_sub(1)).rev() {
        stride[k] = stride[k + 1] * dims[k + 1];
    }
    for k in 0..m {
        let scale = 2f64.powf(alpha * k as f64);
        let block = stride[k] * dims[k];
        for base in (0..v.len()).step_by(block) {
            for tail in 0..stride[k] {
                for s in 0..dims[k] {
                    let i = base + s * stride[k] + tail;
                    if !allowed[i] {
                        continue;
                    }
                    for t in (s + 1)..dims[k] {
                        let j = base + t * stride[k] + tail;
                        if allowed[j] {
                            best = best.max((v[i] - v[j]).norm() * scale);
                        }
                    }
                }
            }
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub l1: f64,
    pub variation: f64,
    pub sup: f64,
    pub bv: f64,
}

/// Norms of h with respect to the measure whose weights are `weights`.
pub fn bv_norm(h: &FieldFunction, weights: &[f64]) -> NormReport {
    let l1 = h.values.iter().zip(weights).map(|(v, w)| v.norm() * w).sum();
    let var = variation(h);
    NormReport { l1, variation: var, sup: h.sup(), bv: l1 + var }
}

pub fn bv_of(basis: &Basis, v: &[C64], weights: &[f64]) -> f64 {
    v.iter().zip(weights).map(|(x, w)| x.norm() * w).sum::<f64>() + variation_of(basis, v)
}

pub fn mean(v: &[C64], weights: &[f64]) -> C64 {
    v.iter().zip(weights).map(|(x, w)| x * w).sum()
}

pub fn mean_re(v: &[f64], weights: &[f64]) -> f64 {
    v.iter().zip(weights).map(|(x, w)| x * w).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeCheck {
    pub member: bool,
    pub ratio: f64,
}

/// Membership in {h ≥ 0, v(h) ≤ a·m(h)}.
pub fn cone_check(h: &FieldFunction, a: f64, weights: &[f64]) -> ConeCheck {
    let var = variation(h);
    let m: f64 = h.values.iter().zip(weights).map(|(v, w)| v.re * w).sum();
    let nonneg = h.mask_iter().all(|(_, v)| v.re >= 0.0 && v.im == 0.0);
    let ratio = if m > 0.0 {
        var / m
    } else if var > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    ConeCheck { member: nonneg && m >= 0.0 && var <= a * m, ratio }
}

/// Projective metric of the pointwise-positive cone.
pub fn hilbert_metric(f: &[f64], g: &[f64]) -> Result<f64> {
    if f.len() != g.len() {
        return Err(Error::Dimension("Hilbert metric operands differ in length".into()));
    }
    let (mut hi, mut lo) = (0.0f64, f64::INFINITY);
    for (a, b) in f.iter().zip(g) {
        if !(*a > 0.0 && *b > 0.0) {
            return Err(Error::NonPositive);
        }
        let r = a / b;
        hi = hi.max(r);
        lo = lo.min(r);
    }
    Ok((hi / lo).ln().max(0.0))
}

pub fn hilbert_metric_ff(f: &FieldFunction, g: &FieldFunction) -> Result<f64> {
    let pick = |h: &FieldFunction| -> Vec<f64> { h.mask_iter().map(|(_, v)| v.re).collect() };
    hilbert_metric(&pick(f), &pick(g))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BvSplit {
    pub g1: FieldFunction,
    pub g2: FieldFunction,
    pub c0: f64,
    /// (‖g1‖_BV + ‖g2‖_BV)/‖g‖_BV
    pub r0: f64,
}

/// Writes a real g as g1 − g2 with both parts in the cone C_a, using
/// g1 = g + C0, g2 = C0.
pub fn split_bv(g: &FieldFunction, a: f64, weights: &[f64]) -> Result<BvSplit> {
    let v_const = 0.0;
    if a <= v_const {
        return Err(Error::ConeParameter { a, v: v_const });
    }
    let nr = bv_norm(g, weights);
    let c0 = nr.sup + (1.0 + a) / (a - v_const) * nr.bv;
    let g1 = FieldFunction::new(g.basis.clone(), g.values.iter().map(|v| C64::new(v.re + c0, 0.0)).collect(), g.time)?;
    let g2 = FieldFunction::constant(g.basis.clone(), c0, g.time);
    let r0 = if nr.bv > 0.0 { (bv_norm(&g1, weights).bv + bv_norm(&g2, weights).bv) / nr.bv } else { 0.0 };
    Ok(BvSplit { g1, g2, c0, r0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    #[test]
    fn variation_examples() {
        let g = Grid::new(1024).unwrap();
        assert_eq!(variation(&FieldFunction::constant(Basis::Grid(g), 1.0, 0)), 0.0);
        assert!((variation(&FieldFunction::on_grid(g, |x| x, 0)) - 1.0).abs() < 1e-12);
        let g4 = Grid::new(4096).unwrap();
        assert!((variation(&FieldFunction::on_grid(g4, |x| (TAU * x).cos(), 0)) - 4.0).abs() < 1e-3);
        let w = Basis::full_words(vec![2, 2]);
        assert_eq!(variation(&FieldFunction::constant(w, 1.0, 0)), 0.0);
    }

    #[test]
    fn word_variation_scales_by_depth() {
        // h(a,b) = b: words differ only in the second symbol, distance 1/2
        let w = Basis::full_words(vec![2, 2]);
        let h = FieldFunction::real(w, &[0.0, 1.0, 0.0, 1.0], 0).unwrap();
        assert!((variation(&h) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn norm_examples() {
        let g = Grid::new(1024).unwrap();
        let w = g.weights();
        let one = bv_norm(&FieldFunction::constant(Basis::Grid(g), 1.0, 0), &w);
        assert_eq!((one.l1, one.variation, one.sup, one.bv), (1.0, 0.0, 1.0, 1.0));
        let x = bv_norm(&FieldFunction::on_grid(g, |x| x, 0), &w);
        assert!((x.l1 - 0.5).abs() < 1e-12 && (x.variation - 1.0).abs() < 1e-12 && (x.sup - 1.0).abs() < 1e-15);
        assert!((x.bv - 1.5).abs() < 1e-12);
        let z = bv_norm(&FieldFunction::constant(Basis::Grid(g), 0.0, 0), &w);
        assert_eq!((z.l1, z.variation, z.sup, z.bv), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn cone_examples() {
        let g = Grid::new(1024).unwrap();
        let w = g.weights();
        let one = cone_check(&FieldFunction::constant(Basis::Grid(g), 1.0, 0), 0.5, &w);
        assert_eq!(one, ConeCheck { member: true, ratio: 0.0 });
        let x = FieldFunction::on_grid(g, |x| x, 0);
        let c1 = cone_check(&x, 1.0, &w);
        assert!(!c1.member && (c1.ratio - 2.0).abs() < 1e-12);
        assert!(cone_check(&x, 3.0, &w).member);
    }

    #[test]
    fn hilbert_examples() {
        assert_eq!(hilbert_metric(&[1.0, 1.0], &[2.0, 2.0]).unwrap(), 0.0);
        assert!((hilbert_metric(&[1.0, 2.0], &[2.0, 1.0]).unwrap() - 4f64.ln()).abs() < 1e-15);
        assert!((hilbert_metric(&[1.0, 1.0, 1.0], &[1.0, 2.0, 4.0]).unwrap() - 4f64.ln()).abs() < 1e-15);
        assert_eq!(hilbert_metric(&[1.0, 0.0], &[1.0, 1.0]), Err(Error::NonPositive));
    }

    #[test]
    fn split_examples() {
        let g = Grid::new(1024).unwrap();
        let w = g.weights();
        let zero = split_bv(&FieldFunction::constant(Basis::Grid(g), 0.0, 0), 1.0, &w).unwrap();
        assert_eq!(zero.c0, 0.0);
        let one = split_bv(&FieldFunction::constant(Basis::Grid(g), 1.0, 0), 2.0, &w).unwrap();
        assert!(cone_check(&one.g1, 2.0, &w).member && cone_check(&one.g2, 2.0, &w).member);
        let h = FieldFunction::on_grid(g, |x| x - 0.5, 0);
        let s = split_bv(&h, 2.0, &w).unwrap();
        assert!(cone_check(&s.g1, 2.0, &w).member && cone_check(&s.g2, 2.0, &w).member);
        for i in 0..h.values.len() {
            assert!((s.g1.values[i] - s.g2.values[i] - h.values[i]).norm() < 1e-12);
        }
        assert!(split_bv(&h, 0.0, &w).is_err());
    }
}

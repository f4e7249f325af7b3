//! Monte Carlo sums S̄_n = S_n − E S_n along paths drawn from m_0.

use crate::error::{Error, Result};
use crate::model::Model;
use crate::rng::substream;
use rayon::prelude::*;

/// Paths per substream shard.
pub const SHARD: usize = 4096;

#[derive(Clone, Debug)]
pub struct Samples {
    pub n_list: Vec<usize>,
    /// sums[i][s] = S̄_{n_list[i]} on path s
    pub sums: Vec<Vec<f64>>,
}

impl Samples {
    pub fn count(&self) -> usize {
        self.sums.first().map_or(0, |s| s.len())
    }

    pub fn at(&self, n: usize) -> Option<&[f64]> {
        self.n_list.iter().position(|&m| m == n).map(|i| self.sums[i].as_slice())
    }
}

/// E S_n = Σ_{j<n} m̃_j(f_j) for every n ≤ n_max.
pub fn centering(model: &dyn Model, n_max: usize) -> Result<Vec<f64>> {
    let mut c = vec![0.0; n_max + 1];
    for j in 0..n_max {
        c[j + 1] = c[j] + model.mean(j as i64)?;
    }
    Ok(c)
}

/// One path of length max(n_list) per sample; every S_n is a prefix sum of it.
pub fn simulate(model: &dyn Model, n_list: &[usize], count: usize, seed: u64, stream: &str) -> Result<Samples> {
    if n_list.is_empty() || count == 0 || n_list.contains(&0) {
        return Err(Error::InvalidInput("need positive window sizes and at least one sample".into()));
    }
    let n_max = *n_list.iter().max().unwrap();
    let center = centering(model, n_max)?;
    let sampler = model.path_sampler(n_max)?;
    let shards = count.div_ceil(SHARD);
    let parts: Vec<Result<Vec<Vec<f64>>>> = (0..shards)
        .into_par_iter()
        .map(|shard| {
            let mut rng = substream(seed, stream, shard as u64);
            let m = SHARD.min(count - shard * SHARD);
            let mut out = vec![Vec::with_capacity(m); n_list.len()];
            let mut path = vec![0.0; n_max];
            let mut sums = vec![0.0; n_max + 1];
            for _ in 0..m {
                sampler.sample(&mut rng, &mut path)?;
                let mut s = 0.0;
                for (j, v) in path.iter().enumerate() {
                    s += v;
                    sums[j + 1] = s;
                }
                for (i, &n) in n_list.iter().enumerate() {
                    out[i].push(sums[n] - center[n]);
                }
            }
            Ok(out)
        })
        .collect();
    let mut sums = vec![Vec::with_capacity(count); n_list.len()];
    for p in parts {
        for (i, v) in p?.into_iter().enumerate() {
            sums[i].extend(v);
        }
    }
    Ok(Samples { n_list: n_list.to_vec(), sums })
}

/// (E|X|^p)^{1/p}.
pub fn lp_norm(x: &[f64], p: f64) -> f64 {
    (x.iter().map(|v| v.abs().powf(p)).sum::<f64>() / x.len() as f64).powf(1.0 / p)
}

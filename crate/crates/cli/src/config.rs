//! Experiment configuration. Every table rejects unknown keys; parse errors
//! carry the dotted path of the offending field.

use seqlimits_core::maps::{IntervalObservable, Schedule};
use serde::Deserialize;
use std::path::PathBuf;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(path: &str, msg: impl std::fmt::Display) -> Result<T, ConfigError> {
    Err(ConfigError(format!("{path}: {msg}")))
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// default output root; overridden by --out and the environment
    pub output: Option<PathBuf>,
    pub interval: Option<IntervalSystem>,
    pub sft: Option<SftSystem>,
    #[serde(default)]
    pub stages: Stages,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntervalSystem {
    pub grid: usize,
    pub family: Vec<String>,
    pub schedule: Schedule,
    pub observable: IntervalObservable,
    /// density of m_0 with respect to Lebesgue, normalized on load
    pub initial_density: Option<IntervalObservable>,
    pub mixing_horizon: Option<usize>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SftStageConfig {
    pub name: String,
    /// 0/1 entries, rows indexed by the symbol at time j
    pub adjacency: Vec<Vec<u8>>,
    pub potential: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SftObservable {
    /// f(a, b) = values[a]
    pub values: Option<Vec<f64>>,
    /// f(a, b) = table[a][b]
    pub table: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SftSystem {
    pub stages: Vec<SftStageConfig>,
    pub schedule: Schedule,
    pub observable: SftObservable,
    #[serde(default = "d_sft_burn_in")]
    pub burn_in: usize,
    /// last time of the Gibbs window; derived from the stages when absent
    pub horizon: Option<usize>,
}

fn d_sft_burn_in() -> usize {
    80
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stages {
    pub rpf: Option<RpfStage>,
    pub gibbs: Option<GibbsStage>,
    pub martingale: Option<MartingaleStage>,
    pub cumulant: Option<CumulantStage>,
    pub limits: Option<LimitsStage>,
    pub asip: Option<AsipStage>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RpfStage {
    /// pilot fit when absent
    pub burn_in: Option<usize>,
    #[serde(default = "d_rpf_window")]
    pub window: usize,
    #[serde(default = "d_rpf_steps")]
    pub decay_steps: usize,
    #[serde(default = "d_rpf_samples")]
    pub samples: usize,
    #[serde(default = "d_rpf_residual")]
    pub residual_tol: f64,
    #[serde(default = "d_rpf_rate")]
    pub max_rate: f64,
    #[serde(default = "d_rpf_r2")]
    pub min_r2: f64,
}

fn d_rpf_window() -> usize {
    40
}
fn d_rpf_steps() -> usize {
    40
}
fn d_rpf_samples() -> usize {
    20
}
fn d_rpf_residual() -> f64 {
    1e-8
}
fn d_rpf_rate() -> f64 {
    0.9
}
fn d_rpf_r2() -> f64 {
    0.98
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GibbsStage {
    #[serde(default = "d_gibbs_times")]
    pub times: Vec<i64>,
    #[serde(default = "d_gibbs_depth")]
    pub depth: usize,
    #[serde(default = "d_gibbs_margin")]
    pub margin: usize,
    #[serde(default = "d_gibbs_mass_tol")]
    pub mass_tol: f64,
    #[serde(default = "d_gibbs_depth")]
    pub ratio_depth: usize,
    #[serde(default = "d_gibbs_drift_tol")]
    pub drift_tol: f64,
    #[serde(default)]
    pub export_paths: usize,
    #[serde(default = "d_gibbs_path_len")]
    pub path_len: usize,
}

fn d_gibbs_times() -> Vec<i64> {
    vec![0, 1, 2]
}
fn d_gibbs_depth() -> usize {
    8
}
fn d_gibbs_margin() -> usize {
    80
}
fn d_gibbs_mass_tol() -> f64 {
    1e-10
}
fn d_gibbs_drift_tol() -> f64 {
    1e-8
}
fn d_gibbs_path_len() -> usize {
    64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expect {
    Bounded,
    Divergent,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MartingaleStage {
    #[serde(default = "d_mart_n")]
    pub n: usize,
    #[serde(default = "d_mart_tail")]
    pub tail_tol: f64,
    #[serde(default = "d_mart_tol")]
    pub martingale_tol: f64,
    #[serde(default = "d_mart_rec")]
    pub reconstruction_tol: f64,
    #[serde(default = "d_mart_vn")]
    pub variance_n_max: usize,
    pub expect: Option<Expect>,
    /// Var(S_n) = rate·n is checked when given
    pub variance_rate: Option<f64>,
    #[serde(default = "d_mart_vtol")]
    pub variance_tol: f64,
}

fn d_mart_n() -> usize {
    200
}
fn d_mart_tail() -> f64 {
    1e-13
}
fn d_mart_tol() -> f64 {
    1e-8
}
fn d_mart_rec() -> f64 {
    1e-10
}
fn d_mart_vn() -> usize {
    1000
}
fn d_mart_vtol() -> f64 {
    1e-6
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CumulantStage {
    /// points z = re + i·im for the gap curve
    #[serde(default)]
    pub z: Vec<[f64; 2]>,
    #[serde(default = "d_cum_starts")]
    pub starts: Vec<i64>,
    #[serde(default = "d_cum_n")]
    pub n_max: usize,
    #[serde(default = "d_cum_burn")]
    pub burn_in: usize,
    #[serde(default = "d_cum_steps")]
    pub steps: usize,
    #[serde(default = "d_cum_flat")]
    pub flat_slope: f64,
    #[serde(default)]
    pub growth_k: Vec<usize>,
    #[serde(default)]
    pub growth_n: Vec<usize>,
    #[serde(default = "d_cum_delta")]
    pub delta: f64,
    /// pilot scan when absent
    pub radius: Option<f64>,
    #[serde(default = "d_cum_plateau")]
    pub plateau_tol: f64,
}

fn d_cum_starts() -> Vec<i64> {
    vec![100, 150, 200]
}
fn d_cum_n() -> usize {
    400
}
fn d_cum_burn() -> usize {
    64
}
fn d_cum_steps() -> usize {
    8
}
fn d_cum_flat() -> f64 {
    1e-4
}
fn d_cum_delta() -> f64 {
    0.5
}
fn d_cum_plateau() -> f64 {
    0.1
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitsStage {
    pub n_list: Vec<usize>,
    pub count: usize,
    #[serde(default = "d_lim_p")]
    pub weighted_p: Vec<f64>,
    #[serde(default = "d_lim_lo")]
    pub slope_min: f64,
    #[serde(default = "d_lim_hi")]
    pub slope_max: f64,
    #[serde(default = "d_true")]
    pub moments: bool,
    #[serde(default = "d_lim_mp")]
    pub moment_p: f64,
    #[serde(default = "d_lim_mtol")]
    pub moment_slope_tol: f64,
}

fn d_lim_p() -> Vec<f64> {
    vec![1.0, 3.0]
}
fn d_lim_lo() -> f64 {
    -1.35
}
fn d_lim_hi() -> f64 {
    -0.65
}
fn d_true() -> bool {
    true
}
fn d_lim_mp() -> f64 {
    4.0
}
fn d_lim_mtol() -> f64 {
    0.05
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GouzelStage {
    #[serde(default)]
    pub start: i64,
    /// (length, t) per group
    pub left: Vec<(usize, f64)>,
    pub right: Vec<(usize, f64)>,
    pub ks: Vec<usize>,
    /// gap checked against `gap_tol`; 30 × mixing horizon when absent
    pub gap_at: Option<usize>,
    #[serde(default = "d_gouzel_tol")]
    pub gap_tol: f64,
}

fn d_gouzel_tol() -> f64 {
    1e-12
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsipStage {
    pub b: f64,
    pub n: usize,
    #[serde(default)]
    pub kn_list: Vec<usize>,
    #[serde(default = "d_asip_band")]
    pub band_max: f64,
    #[serde(default = "d_asip_k")]
    pub cov_k_max: usize,
    #[serde(default = "d_asip_r2")]
    pub cov_r2: f64,
    pub gouzel: Option<GouzelStage>,
}

fn d_asip_band() -> f64 {
    3.0
}
fn d_asip_k() -> usize {
    16
}
fn d_asip_r2() -> f64 {
    0.95
}

/// Stage names in pipeline order.
pub const STAGE_ORDER: [&str; 6] = ["rpf", "gibbs", "martingale", "cumulant", "limits", "asip"];

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::parse(text)
            .map_err(|e| ConfigError(format!("parse error: {e}")))?;
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ConfigError(format!("{path}: {}", e.into_inner().to_string().trim_end()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn enabled_stages(&self) -> Vec<&'static str> {
        let s = &self.stages;
        let on = [
            s.rpf.is_some(),
            s.gibbs.is_some(),
            s.martingale.is_some(),
            s.cumulant.is_some(),
            s.limits.is_some(),
            s.asip.is_some(),
        ];
        STAGE_ORDER
            .iter()
            .zip(on)
            .filter(|(_, b)| *b)
            .map(|(n, _)| *n)
            .collect()
    }

    /// Largest time index any enabled stage touches.
    /// `mixing` is the product-positivity horizon of the system.
    pub fn time_horizon(&self, mixing: usize) -> usize {
        let s = &self.stages;
        let mut h = 64usize;
        if let Some(r) = &s.rpf {
            h = h.max(r.window + r.decay_steps + 1);
        }
        if let Some(g) = &s.gibbs {
            let t = g.times.iter().copied().max().unwrap_or(0).max(0) as usize;
            h = h
                .max(t + g.depth.max(g.ratio_depth) + 2)
                .max(g.path_len + 1);
        }
        if let Some(m) = &s.martingale {
            h = h.max(m.n + 1).max(m.variance_n_max + 1);
        }
        if let Some(c) = &s.cumulant {
            let t = c.starts.iter().copied().max().unwrap_or(0).max(0) as usize;
            h = h.max(t + c.n_max + c.burn_in + 2);
            h = h.max(c.growth_n.iter().copied().max().unwrap_or(0) + 1);
        }
        if let Some(l) = &s.limits {
            h = h.max(l.n_list.iter().copied().max().unwrap_or(0) + 1);
        }
        if let Some(a) = &s.asip {
            h = h
                .max(a.n + 1)
                .max(a.kn_list.iter().copied().max().unwrap_or(0) + 1);
            if let Some(g) = &a.gouzel {
                let len: usize = g.left.iter().chain(&g.right).map(|x| x.0).sum();
                let k = g.ks.iter().copied().chain(Some(g.gap_at.unwrap_or(30 * mixing))).max().unwrap_or(0);
                h = h.max(g.start.max(0) as usize + len + k + 1);
            }
        }
        h
    }

    fn validate(&self) -> Result<(), ConfigError> {
        match (&self.interval, &self.sft) {
            (Some(_), Some(_)) => {
                return err(
                    "interval",
                    "exactly one of [interval] and [sft] may be given",
                )
            }
            (None, None) => {
                return err("interval", "a system table [interval] or [sft] is required")
            }
            _ => {}
        }
        if let Some(iv) = &self.interval {
            if iv.grid < 2 {
                return err("interval.grid", "must be at least 2");
            }
            if iv.family.is_empty() {
                return err("interval.family", "must name at least one stage");
            }
            for (i, name) in iv.family.iter().enumerate() {
                if let Err(e) = seqlimits_core::maps::IntervalStage::by_name(name) {
                    return err(&format!("interval.family[{i}]"), e);
                }
            }
            if let Err(e) = iv.schedule.validate(iv.family.len()) {
                return err("interval.schedule", e);
            }
            if self.stages.gibbs.is_some() {
                return err("stages.gibbs", "the gibbs stage needs an [sft] system");
            }
        }
        if let Some(sft) = &self.sft {
            if sft.stages.is_empty() {
                return err("sft.stages", "must list at least one stage");
            }
            if let Err(e) = sft.schedule.validate(sft.stages.len()) {
                return err("sft.schedule", e);
            }
            if sft.burn_in == 0 {
                return err("sft.burn_in", "must be positive");
            }
            match (&sft.observable.values, &sft.observable.table) {
                (Some(_), None) | (None, Some(_)) => {}
                _ => return err("sft.observable", "give exactly one of `values` and `table`"),
            }
        }
        let s = &self.stages;
        if let Some(r) = &s.rpf {
            positive("stages.rpf.residual_tol", r.residual_tol)?;
            if r.window < 2 || r.decay_steps < 2 || r.decay_steps > r.window {
                return err("stages.rpf.decay_steps", "need 2 ≤ decay_steps ≤ window");
            }
            if r.samples == 0 {
                return err("stages.rpf.samples", "must be positive");
            }
            if r.burn_in == Some(0) {
                return err("stages.rpf.burn_in", "must be positive");
            }
        }
        if let Some(g) = &s.gibbs {
            positive("stages.gibbs.mass_tol", g.mass_tol)?;
            positive("stages.gibbs.drift_tol", g.drift_tol)?;
            if g.times.is_empty() {
                return err("stages.gibbs.times", "must not be empty");
            }
            if g.times.iter().any(|t| *t < 0) {
                return err("stages.gibbs.times", "times must be non-negative");
            }
            if g.ratio_depth < 2 {
                return err("stages.gibbs.ratio_depth", "must be at least 2");
            }
            if g.margin == 0 {
                return err("stages.gibbs.margin", "must be positive");
            }
        }
        if let Some(m) = &s.martingale {
            positive("stages.martingale.tail_tol", m.tail_tol)?;
            positive("stages.martingale.martingale_tol", m.martingale_tol)?;
            positive("stages.martingale.reconstruction_tol", m.reconstruction_tol)?;
            positive("stages.martingale.variance_tol", m.variance_tol)?;
            if m.n == 0 {
                return err("stages.martingale.n", "must be positive");
            }
            if m.variance_n_max < 4 {
                return err("stages.martingale.variance_n_max", "must be at least 4");
            }
        }
        if let Some(c) = &s.cumulant {
            positive("stages.cumulant.flat_slope", c.flat_slope)?;
            positive("stages.cumulant.plateau_tol", c.plateau_tol)?;
            positive("stages.cumulant.delta", c.delta)?;
            if let Some(r) = c.radius {
                positive("stages.cumulant.radius", r)?;
            }
            if !c.z.is_empty() && (c.starts.is_empty() || c.n_max < 2) {
                return err(
                    "stages.cumulant.n_max",
                    "need starts and n_max ≥ 2 for the gap curve",
                );
            }
            if c.starts.iter().any(|t| *t < 0) {
                return err("stages.cumulant.starts", "starts must be non-negative");
            }
            if c.burn_in == 0 {
                return err("stages.cumulant.burn_in", "must be positive");
            }
            if !c.growth_k.is_empty() {
                increasing("stages.cumulant.growth_n", &c.growth_n)?;
                if c.growth_k.iter().any(|k| !(3..=8).contains(k)) {
                    return err("stages.cumulant.growth_k", "orders must lie in 3..=8");
                }
            }
        }
        if let Some(l) = &s.limits {
            increasing("stages.limits.n_list", &l.n_list)?;
            if l.n_list.len() < 5 {
                return err(
                    "stages.limits.n_list",
                    "need at least 5 window sizes for a rate fit",
                );
            }
            if l.count < 16 {
                return err("stages.limits.count", "need at least 16 paths");
            }
            if l.weighted_p.iter().any(|p| !(*p >= 0.0)) {
                return err("stages.limits.weighted_p", "weights must be non-negative");
            }
            if !(l.slope_min < l.slope_max) {
                return err("stages.limits.slope_min", "must be below slope_max");
            }
            if l.moment_p != 4.0 && l.moment_p != 8.0 {
                return err("stages.limits.moment_p", "must be 4 or 8");
            }
            positive("stages.limits.moment_slope_tol", l.moment_slope_tol)?;
        }
        if let Some(a) = &s.asip {
            positive("stages.asip.b", a.b)?;
            positive("stages.asip.band_max", a.band_max)?;
            positive("stages.asip.cov_r2", a.cov_r2)?;
            if a.n == 0 {
                return err("stages.asip.n", "must be positive");
            }
            if !a.kn_list.is_empty() {
                increasing("stages.asip.kn_list", &a.kn_list)?;
            }
            if let Some(g) = &a.gouzel {
                positive("stages.asip.gouzel.gap_tol", g.gap_tol)?;
                if g.left.is_empty() || g.right.is_empty() || g.left.len() + g.right.len() > 6 {
                    return err(
                        "stages.asip.gouzel.left",
                        "need 1..=6 groups split over both sides",
                    );
                }
                if g.left.iter().chain(&g.right).any(|b| b.0 == 0 || b.0 > 64) {
                    return err(
                        "stages.asip.gouzel.left",
                        "group lengths must lie in 1..=64",
                    );
                }
                if g.ks.len() < 3 {
                    return err("stages.asip.gouzel.ks", "need at least 3 gaps");
                }
                if g.start < 0 {
                    return err("stages.asip.gouzel.start", "must be non-negative");
                }
            }
        }
        Ok(())
    }
}

fn positive(path: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        err(path, format!("must be positive, got {v}"))
    }
}

fn increasing(path: &str, v: &[usize]) -> Result<(), ConfigError> {
    if v.is_empty() || v[0] == 0 || v.windows(2).any(|w| w[1] <= w[0]) {
        return err(path, "must be positive and strictly increasing");
    }
    Ok(())
}

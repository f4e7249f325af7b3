//! Stage orchestration: rpf → gibbs → martingale → cumulant → limits → asip.

use crate::config::*;
use crate::report::{csv, ReportDir, StageStatus, Timing, VerdictRecord};
use crate::system::System;
use seqlimits_core::asip;
use seqlimits_core::cumulant;
use seqlimits_core::error::Error;
use seqlimits_core::gibbs::{self, SftRawOperators};
use seqlimits_core::limits::{self, DistanceReport};
use seqlimits_core::martingale::{self, Verdict};
use seqlimits_core::montecarlo::simulate;
use seqlimits_core::rng::substream;
use seqlimits_core::rpf;
use seqlimits_core::transfer::{sample_bv, OperatorSequence};
use seqlimits_core::C64;
use std::time::Instant;

pub struct StageResult {
    pub timing: Timing,
    pub verdicts: Vec<VerdictRecord>,
}

enum Outcome {
    Done(Vec<VerdictRecord>),
    Skipped(String),
}

enum StageError {
    Core(Error),
    Io(std::io::Error),
}

impl From<Error> for StageError {
    fn from(e: Error) -> Self {
        StageError::Core(e)
    }
}

type StageRun = std::result::Result<Outcome, StageError>;

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    system: &'a System,
    out: &'a ReportDir,
    dichotomy: Option<Verdict>,
}

/// Fatal errors are I/O failures while persisting.
pub fn run_all(
    cfg: &ExperimentConfig,
    system: &System,
    out: &ReportDir,
) -> std::io::Result<Vec<StageResult>> {
    let mut ctx = Ctx {
        cfg,
        system,
        out,
        dichotomy: None,
    };
    let mut results: Vec<StageResult> = Vec::new();
    let mut failed: Vec<&'static str> = Vec::new();
    for stage in cfg.enabled_stages() {
        let deps: &[&str] = match stage {
            "gibbs" => &["rpf"],
            "cumulant" | "limits" | "asip" => &["martingale"],
            _ => &[],
        };
        if let Some(d) = deps.iter().find(|d| failed.contains(d)) {
            failed.push(stage);
            results.push(StageResult {
                timing: Timing {
                    stage: stage.into(),
                    status: StageStatus::Skipped,
                    seconds: 0.0,
                    message: Some(format!("depends on failed stage {d}")),
                },
                verdicts: vec![],
            });
            continue;
        }
        let t0 = Instant::now();
        let r = match stage {
            "rpf" => rpf_stage(&ctx, cfg.stages.rpf.as_ref().unwrap()),
            "gibbs" => gibbs_stage(&ctx, cfg.stages.gibbs.as_ref().unwrap()),
            "martingale" => martingale_stage(&mut ctx, cfg.stages.martingale.as_ref().unwrap()),
            "cumulant" => cumulant_stage(&ctx, cfg.stages.cumulant.as_ref().unwrap()),
            "limits" => limits_stage(&mut ctx, cfg.stages.limits.as_ref().unwrap()),
            "asip" => asip_stage(&ctx, cfg.stages.asip.as_ref().unwrap()),
            _ => unreachable!(),
        };
        let seconds = t0.elapsed().as_secs_f64();
        let (status, message, verdicts) = match r {
            Ok(Outcome::Done(v)) => {
                let st = if v.iter().all(|x| x.pass) {
                    StageStatus::Passed
                } else {
                    StageStatus::Failed
                };
                (st, None, v)
            }
            Ok(Outcome::Skipped(why)) => (StageStatus::Skipped, Some(why), vec![]),
            Err(StageError::Core(Error::SigmaBounded { max_var })) => (
                StageStatus::Skipped,
                Some(format!("sigma bounded (max variance {max_var:e})")),
                vec![],
            ),
            Err(StageError::Io(e)) => return Err(e),
            Err(StageError::Core(e)) => {
                failed.push(stage);
                (StageStatus::Error, Some(e.to_string()), vec![])
            }
        };
        results.push(StageResult {
            timing: Timing {
                stage: stage.into(),
                status,
                seconds,
                message,
            },
            verdicts,
        });
    }
    Ok(results)
}

fn write(out: &ReportDir, name: &str, content: String) -> Result<(), StageError> {
    out.write(name, &content).map_err(StageError::Io)
}

struct V {
    id: String,
    stage: &'static str,
}

impl V {
    fn new(stage: &'static str, id: impl Into<String>) -> Self {
        V {
            id: format!("{stage}.{}", id.into()),
            stage,
        }
    }

    fn rec(
        self,
        pass: bool,
        value: f64,
        condition: impl Into<String>,
        error_bar: Option<f64>,
        artifact: &str,
    ) -> VerdictRecord {
        VerdictRecord {
            id: self.id,
            stage: self.stage.into(),
            pass,
            value: value.is_finite().then_some(value),
            condition: condition.into(),
            error_bar,
            artifact: artifact.into(),
            note: None,
        }
    }
}

fn rpf_stage(ctx: &Ctx, c: &RpfStage) -> StageRun {
    let sft_ops;
    let ops: &dyn OperatorSequence = match ctx.system {
        System::Interval { model, .. } => model.raw(),
        System::Sft { model } => {
            sft_ops = SftRawOperators::new(&model.sys.seq);
            &sft_ops
        }
    };
    let mut rng = substream(ctx.cfg.seed, "rpf", 0);
    let burn = match c.burn_in {
        Some(b) => b,
        None => rpf::default_burn_in(ops, &mut rng)?,
    };
    let tri = rpf::forward_density(ops, (0, c.window as i64), burn)?;
    let gs = sample_bv(&ops.basis(0)?, c.samples, &mut rng);
    let mut env = vec![0.0f64; c.decay_steps + 1];
    for g in &gs {
        for (e, v) in env
            .iter_mut()
            .zip(rpf::decay_profile(ops, &tri, g, c.decay_steps)?)
        {
            *e = e.max(v);
        }
    }
    let fit = rpf::fit_decay(&env)?;
    let residual = equivariance_residual(ctx.system, &tri, c.window)?;
    let rows = (0..=c.window as i64).map(|j| {
        let h = tri.h(j).unwrap();
        let lam = if j < c.window as i64 {
            format!("{:e}", tri.lambda(j).unwrap())
        } else {
            String::new()
        };
        format!(
            "{j},{lam},{:e},{:e}",
            h.iter().cloned().fold(f64::INFINITY, f64::min),
            h.iter().cloned().fold(0.0, f64::max)
        )
    });
    write(
        ctx.out,
        "rpf_triplet.csv",
        csv("j,lambda,h_min,h_max", rows),
    )?;
    write(
        ctx.out,
        "rpf_decay.csv",
        csv(
            "n,max_bv_gap",
            env.iter().enumerate().map(|(n, v)| format!("{n},{v:e}")),
        ),
    )?;
    Ok(Outcome::Done(vec![
        V::new("rpf", "equivariance_residual").rec(
            residual < c.residual_tol,
            residual,
            format!("< {:e}", c.residual_tol),
            None,
            "rpf_triplet.csv",
        ),
        V::new("rpf", "decay_rate").rec(
            fit.rate < c.max_rate,
            fit.rate,
            format!("< {}", c.max_rate),
            None,
            "rpf_decay.csv",
        ),
        V::new("rpf", "decay_r2").rec(
            fit.r2 > c.min_r2,
            fit.r2,
            format!("> {}", c.min_r2),
            None,
            "rpf_decay.csv",
        ),
    ]))
}

/// Interval: |∫φ∘T_j h_j − ∫φ h_{j+1}| by quadrature for a few smooth φ.
/// SFT: the Gibbs marginals against their transitions, max |π_j p_j − π_{j+1}|.
fn equivariance_residual(system: &System, tri: &rpf::RpfTriplet, window: usize) -> Result<f64, StageError> {
    let mut worst = 0.0f64;
    match system {
        System::Interval { model, .. } => {
            let seq = model.seq();
            for j in 0..window {
                let st = seq.stage_at(j)?;
                for k in 1..=3 {
                    let phi = |x: f64| (std::f64::consts::TAU * k as f64 * x).sin() + x * x;
                    let g = rpf::interval_equivariance_gap(st, model.grid(), tri.h(j as i64)?, tri.h(j as i64 + 1)?, phi);
                    worst = worst.max(g);
                }
            }
        }
        System::Sft { model } => {
            let sys = &model.sys;
            for j in 0..window as i64 {
                let (pi, p, next) = (sys.pi(j)?, sys.p(j)?, sys.pi(j + 1)?);
                for (b, nb) in next.iter().enumerate() {
                    let push: f64 = pi.iter().zip(p).map(|(a, row)| a * row[b]).sum();
                    worst = worst.max((push - nb).abs());
                }
            }
            worst = worst.max(tri.dual_residual);
        }
    }
    Ok(worst)
}

fn gibbs_stage(ctx: &Ctx, c: &GibbsStage) -> StageRun {
    let sys = ctx.system.gibbs().expect("validated");
    let seq = &sys.seq;
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    for &j in &c.times {
        for depth in 0..=c.depth {
            let words = gibbs::admissible_words(seq, j, depth)?;
            let mut gap = 0.0f64;
            for w in &words {
                let a = sys.cylinder_mass(j, w)?.mass;
                let b = gibbs::finite_volume_mass(seq, j, w, c.margin)?;
                gap = gap.max((a - b).abs() / b.max(f64::MIN_POSITIVE));
            }
            worst = worst.max(gap);
            rows.push(format!("{j},{depth},{},{gap:e}", words.len()));
        }
    }
    write(
        ctx.out,
        "gibbs_cylinders.csv",
        csv("time,depth,words,max_rel_gap", rows),
    )?;
    let t0 = *c.times.iter().min().unwrap();
    let t1 = *c.times.iter().max().unwrap() + 1;
    let ratio = gibbs::gibbs_ratio_check(sys, t0..t1, c.ratio_depth)?;
    write(
        ctx.out,
        "gibbs_ratio.csv",
        csv(
            "depth,min_ratio,max_ratio,c_r",
            ratio
                .per_depth
                .iter()
                .map(|(r, lo, hi, cr)| format!("{r},{lo:e},{hi:e},{cr:e}")),
        ),
    )?;
    if c.export_paths > 0 {
        let mut rng = substream(ctx.cfg.seed, "gibbs-paths", 0);
        let mut out = vec![0usize; c.path_len];
        let mut lines = Vec::new();
        for _ in 0..c.export_paths {
            sys.sample_path_into(0, &mut rng, &mut out)?;
            lines.push(
                out.iter()
                    .map(|s| s.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            );
        }
        let header = (0..c.path_len)
            .map(|t| format!("x{t}"))
            .collect::<Vec<_>>()
            .join(",");
        write(ctx.out, "paths.csv", csv(&header, lines))?;
    }
    Ok(Outcome::Done(vec![
        V::new("gibbs", "cylinder_rel_gap").rec(
            worst < c.mass_tol,
            worst,
            format!("< {:e}", c.mass_tol),
            None,
            "gibbs_cylinders.csv",
        ),
        V::new("gibbs", "ratio_drift").rec(
            ratio.drift < c.drift_tol,
            ratio.drift,
            format!("< {:e}", c.drift_tol),
            None,
            "gibbs_ratio.csv",
        ),
    ]))
}

fn martingale_stage(ctx: &mut Ctx, c: &MartingaleStage) -> StageRun {
    let model = ctx.system.model();
    let d = martingale::decompose(model, 0, c.n, c.tail_tol)?;
    write(
        ctx.out,
        "martingale.csv",
        csv(
            "j,u_bv,m_bv,lm_sup",
            d.rows
                .iter()
                .map(|(j, u, m, l)| format!("{j},{u:e},{m:e},{l:e}")),
        ),
    )?;
    let dich = martingale::variance_dichotomy(model, c.variance_n_max, c.tail_tol)?;
    write(
        ctx.out,
        "variance.csv",
        csv(
            "n,var_s,sum_var_m",
            dich.var_s
                .iter()
                .zip(&dich.sum_var_m)
                .enumerate()
                .map(|(n, (a, b))| format!("{n},{a:e},{b:e}")),
        ),
    )?;
    ctx.dichotomy = Some(dich.verdict.clone());
    let mut v = vec![
        V::new("martingale", "reverse_residual").rec(
            d.martingale_residual < c.martingale_tol,
            d.martingale_residual,
            format!("< {:e}", c.martingale_tol),
            None,
            "martingale.csv",
        ),
        V::new("martingale", "reconstruction_residual").rec(
            d.reconstruction_residual < c.reconstruction_tol,
            d.reconstruction_residual,
            format!("< {:e}", c.reconstruction_tol),
            None,
            "martingale.csv",
        ),
    ];
    if dich.verdict == Verdict::Bounded {
        let max_var = dich.var_s.iter().cloned().fold(0.0, f64::max);
        let bound = 4.0 * dich.sup_u * dich.sup_u;
        v.push(V::new("martingale", "bounded_variance").rec(
            max_var <= bound,
            max_var,
            format!("<= 4 sup|u|^2 = {bound:e}"),
            None,
            "variance.csv",
        ));
    }
    if let Some(e) = c.expect {
        let want = match e {
            Expect::Bounded => Verdict::Bounded,
            Expect::Divergent => Verdict::Divergent,
        };
        let mut r = V::new("martingale", "dichotomy").rec(
            dich.verdict == want,
            dich.tail_increment,
            format!("verdict {want:?}"),
            None,
            "variance.csv",
        );
        r.note = Some(format!("{:?}", dich.verdict));
        v.push(r);
    }
    if let Some(rate) = c.variance_rate {
        let gap = dich
            .var_s
            .iter()
            .enumerate()
            .map(|(n, s)| (s - rate * n as f64).abs())
            .fold(0.0, f64::max);
        v.push(V::new("martingale", "variance_oracle").rec(
            gap < c.variance_tol,
            gap,
            format!("max |Var S_n - {rate} n| < {:e}", c.variance_tol),
            None,
            "variance.csv",
        ));
    }
    Ok(Outcome::Done(v))
}

fn cumulant_stage(ctx: &Ctx, c: &CumulantStage) -> StageRun {
    let model = ctx.system.model();
    let mut v = Vec::new();
    let mut lll_rows = Vec::new();
    for z in &c.z {
        let zc = C64::new(z[0], z[1]);
        let r = cumulant::lll_gap(model, zc, &c.starts, c.n_max, c.burn_in, c.steps)?;
        lll_rows.extend(
            r.curve
                .iter()
                .map(|(n, g)| format!("{},{},{n},{g:e}", z[0], z[1])),
        );
        v.push(
            V::new("cumulant", format!("lll_slope[{}{:+}i]", z[0], z[1])).rec(
                r.slope.abs() < c.flat_slope,
                r.slope,
                format!("|slope| < {:e}", c.flat_slope),
                None,
                "cumulant_lll.csv",
            ),
        );
    }
    if !c.z.is_empty() {
        write(
            ctx.out,
            "cumulant_lll.csv",
            csv("z_re,z_im,n,max_gap", lll_rows),
        )?;
    }
    if !c.growth_k.is_empty() {
        let r0 = match c.radius {
            Some(r) => r,
            None => cumulant::pilot_radius(model, (0, 64), c.burn_in)?,
        };
        let mut rows = Vec::new();
        for &k in &c.growth_k {
            let g = cumulant::growth_check(model, &c.growth_n, k, c.delta, r0)?;
            rows.extend(
                g.rows
                    .iter()
                    .map(|(n, s, val)| format!("{k},{n},{s:e},{val:e}")),
            );
            v.push(V::new("cumulant", format!("growth_slope[k={k}]")).rec(
                g.slope.abs() <= c.plateau_tol,
                g.slope,
                format!("|slope| <= {}", c.plateau_tol),
                None,
                "cumulant_growth.csv",
            ));
        }
        write(
            ctx.out,
            "cumulant_growth.csv",
            csv("k,n,sigma_n,scaled_sup", rows),
        )?;
    }
    Ok(Outcome::Done(v))
}

fn limits_stage(ctx: &mut Ctx, c: &LimitsStage) -> StageRun {
    let model = ctx.system.model();
    let n_max = *c.n_list.last().unwrap();
    let verdict = match &ctx.dichotomy {
        Some(v) => v.clone(),
        None => martingale::variance_dichotomy(model, n_max.max(4), 1e-13)?.verdict,
    };
    if verdict == Verdict::Bounded {
        return Ok(Outcome::Skipped(
            "sigma bounded: Var(S_n) stays bounded, no normal limit".into(),
        ));
    }
    let seed = ctx.cfg.seed;
    let samples = simulate(model, &c.n_list, c.count, seed, "clt")?;
    let sets = limits::sample_sets(model, &samples, seed, ctx.system.init())?;
    let rows: Vec<DistanceReport> = sets
        .iter()
        .map(|s| limits::distances(s, &c.weighted_p))
        .collect();
    drop(sets);
    write(
        ctx.out,
        "distances.csv",
        csv(DistanceReport::CSV_HEADER, rows.iter().map(|r| r.csv_row())),
    )?;
    let report = limits::clt_report(rows, seed)?;
    let fits = [
        ("kolmogorov", &report.kolmogorov),
        ("weighted3", &report.weighted3),
        ("l1", &report.l1),
        ("l2", &report.l2),
        ("w1", &report.w1),
        ("w2", &report.w2),
    ];
    write(
        ctx.out,
        "rates.csv",
        csv(
            "metric,slope,ci_lo,ci_hi,r2,points",
            fits.iter().map(|(m, f)| {
                format!(
                    "{m},{:e},{:e},{:e},{:e},{}",
                    f.slope, f.ci95.0, f.ci95.1, f.r2, f.points
                )
            }),
        ),
    )?;
    let mut v = Vec::new();
    for (m, f) in fits {
        if !f.slope.is_finite() {
            continue;
        }
        let ok =
            f.slope >= c.slope_min && f.slope <= c.slope_max && f.ci95.0 > -2.0 && f.ci95.1 < 0.0;
        let half = 0.5 * (f.ci95.1 - f.ci95.0);
        v.push(V::new("limits", format!("rate[{m}]")).rec(
            ok,
            f.slope,
            format!(
                "in [{}, {}], ci95 excludes 0 and -2",
                c.slope_min, c.slope_max
            ),
            Some(half),
            "rates.csv",
        ));
    }
    if c.moments {
        let mr = martingale::moment_ratio_from(&samples, c.moment_p)?;
        write(
            ctx.out,
            "moments.csv",
            csv(
                "n,norm_p,norm_2,ratio",
                mr.rows
                    .iter()
                    .map(|(n, a, b, r)| format!("{n},{a:e},{b:e},{r:e}")),
            ),
        )?;
        v.push(V::new("limits", "moment_slope").rec(
            mr.slope_log2.abs() <= c.moment_slope_tol,
            mr.slope_log2,
            format!("|slope vs log2 n| <= {}", c.moment_slope_tol),
            None,
            "moments.csv",
        ));
    }
    Ok(Outcome::Done(v))
}

fn asip_stage(ctx: &Ctx, c: &AsipStage) -> StageRun {
    let model = ctx.system.model();
    let table = asip::observable_table(model, c.n)?;
    let plan = asip::plan_from_table(&table, c.b)?;
    write(ctx.out, "block_plan.csv", plan.to_csv())?;
    let worst = plan.variances.iter().map(|x| x / c.b).fold(1.0, f64::max);
    let mut v = vec![V::new("asip", "blocks_within_bounds").rec(
        plan.within_bounds(),
        worst,
        "closed block variances in [B, 2B] (value: max variance / B)",
        None,
        "block_plan.csv",
    )];
    if !c.kn_list.is_empty() {
        let band = asip::kn_band(model, &c.kn_list, c.b)?;
        write(
            ctx.out,
            "kn_band.csv",
            csv(
                "n,k_n,sigma2,ratio",
                band.rows
                    .iter()
                    .map(|(n, k, s, r)| format!("{n},{k},{s:e},{r:e}")),
            ),
        )?;
        v.push(V::new("asip", "kn_band_width").rec(
            band.width < c.band_max,
            band.width,
            format!("< {}", c.band_max),
            None,
            "kn_band.csv",
        ));
    }
    let cov = asip::block_cov_decay(&table, &plan, c.cov_k_max)?;
    write(
        ctx.out,
        "block_cov.csv",
        csv(
            "k,max_abs_cov",
            cov.cov.iter().map(|(k, x)| format!("{k},{x:e}")),
        ),
    )?;
    match cov.fit {
        Some(f) => v.push(V::new("asip", "block_cov_r2").rec(
            f.r2 > c.cov_r2,
            f.r2,
            format!("> {}", c.cov_r2),
            None,
            "block_cov.csv",
        )),
        None => {
            let mut r = V::new("asip", "block_cov_r2").rec(
                true,
                f64::NAN,
                format!("> {}", c.cov_r2),
                None,
                "block_cov.csv",
            );
            r.note = Some(format!(
                "every block covariance below {:e}; no fit",
                asip::COV_FLOOR
            ));
            v.push(r);
        }
    }
    if let Some(g) = &c.gouzel {
        let setup = asip::GouzelSetup {
            start: g.start,
            left: g.left.clone(),
            right: g.right.clone(),
        };
        let k_at = g.gap_at.unwrap_or(30 * model.mixing_horizon());
        let mut ks = g.ks.clone();
        if !ks.contains(&k_at) {
            ks.push(k_at);
        }
        ks.sort_unstable();
        let scan = asip::gouzel_scan(model, &setup, &ks)?;
        write(
            ctx.out,
            "gouzel.csv",
            csv("k,gap", scan.gaps.iter().map(|(k, x)| format!("{k},{x:e}"))),
        )?;
        match scan.fit {
            Some(f) => v.push(V::new("asip", "gouzel_rate").rec(
                f.rate < 1.0,
                f.rate,
                "< 1",
                None,
                "gouzel.csv",
            )),
            None => {
                let mut r =
                    V::new("asip", "gouzel_rate").rec(false, f64::NAN, "< 1", None, "gouzel.csv");
                r.note = Some("fewer than 3 gaps above the floor".into());
                v.push(r);
            }
        }
        let gap = scan.gaps.iter().find(|x| x.0 == k_at).unwrap().1;
        v.push(V::new("asip", format!("gouzel_gap[k={k_at}]")).rec(
            gap < g.gap_tol,
            gap,
            format!("< {:e}", g.gap_tol),
            None,
            "gouzel.csv",
        ));
    }
    Ok(Outcome::Done(v))
}

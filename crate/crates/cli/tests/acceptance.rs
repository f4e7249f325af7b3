//! Acceptance run: executes the bundled configurations at full scale, checks
//! the direct-API criteria, and prints one line per criterion.

use rand::Rng;
use seqlimits_core::cumulant::{rank_one_split, spec_rad_test};
use seqlimits_core::gibbs::{self, sinai_reduce, TwoSidedObservable};
use seqlimits_core::limits::two_sided_gap;
use seqlimits_core::maps::{PairObservable, Schedule, SftSequence, SftStage};
use seqlimits_core::rng::substream;
use serde_json::Value;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

const RATE_WINDOW: (f64, f64) = (-1.35, -0.65);

struct Report {
    summary: Value,
}

impl Report {
    fn verdict(&self, id: &str) -> Option<&Value> {
        self.summary["verdicts"]
            .as_array()?
            .iter()
            .find(|v| v["id"] == id)
    }

    fn value(&self, id: &str) -> Option<f64> {
        self.verdict(id)?["value"].as_f64()
    }

    fn passed(&self, id: &str) -> bool {
        self.verdict(id).is_some_and(|v| v["pass"] == true)
    }

    fn ids(&self, prefix: &str) -> Vec<String> {
        self.summary["verdicts"]
            .as_array()
            .map(|a| {
                a.iter()
                    .filter_map(|v| v["id"].as_str())
                    .filter(|s| s.starts_with(prefix))
                    .map(String::from)
                    .collect()
            })
            .unwrap_or_default()
    }

    fn seconds(&self, stage: &str) -> f64 {
        self.summary["timings"]
            .as_array()
            .and_then(|a| a.iter().find(|t| t["stage"] == stage))
            .and_then(|t| t["seconds"].as_f64())
            .unwrap_or(f64::INFINITY)
    }

    fn status(&self, stage: &str) -> String {
        self.summary["timings"]
            .as_array()
            .and_then(|a| a.iter().find(|t| t["stage"] == stage))
            .and_then(|t| t["status"].as_str())
            .unwrap_or("absent")
            .to_string()
    }
}

fn run_config(name: &str, out: &Path) -> Report {
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(format!("{name}.toml"));
    let t = Instant::now();
    let o = Command::new(env!("CARGO_BIN_EXE_seqlimits"))
        .arg("run")
        .arg(&cfg)
        .arg("--out")
        .arg(out)
        .output()
        .expect("cannot start seqlimits");
    let dir = PathBuf::from(String::from_utf8_lossy(&o.stdout).trim());
    eprintln!(
        "  ran {name} in {:.0}s (exit {:?})",
        t.elapsed().as_secs_f64(),
        o.status.code()
    );
    let summary = std::fs::read_to_string(dir.join("summary.json"))
        .ok()
        .and_then(|s| serde_json::from_str(&s).ok())
        .unwrap_or(Value::Null);
    Report { summary }
}

struct Line {
    pass: bool,
    detail: String,
}

fn line(pass: bool, detail: String) -> Line {
    Line { pass, detail }
}

fn below(r: &Report, id: &str, tol: f64) -> (bool, String) {
    let v = r.value(id);
    (v.is_some_and(|x| x.abs() < tol), format!("{id}={}", fmt(v)))
}

fn fmt(v: Option<f64>) -> String {
    v.map_or("missing".into(), |x| format!("{x:.3e}"))
}

fn rate(r: &Report, metric: &str) -> (bool, String) {
    let id = format!("limits.rate[{metric}]");
    let v = r.value(&id);
    // the CI part of the condition is evaluated by the stage itself
    let ok = v.is_some_and(|x| x >= RATE_WINDOW.0 && x <= RATE_WINDOW.1) && r.passed(&id);
    (ok, format!("{metric}={}", fmt(v)))
}

fn all(parts: Vec<(bool, String)>) -> Line {
    let pass = parts.iter().all(|p| p.0);
    line(
        pass,
        parts.into_iter().map(|p| p.1).collect::<Vec<_>>().join(" "),
    )
}

fn sft3() -> SftSequence {
    let adj = vec![
        vec![true, true, false],
        vec![true, false, true],
        vec![true, true, true],
    ];
    let a = SftStage::new(
        "a",
        adj.clone(),
        vec![
            vec![0.1, -0.3, 0.0],
            vec![0.2, 0.0, 0.4],
            vec![-0.5, 0.3, 0.0],
        ],
    )
    .unwrap();
    let b = SftStage::new(
        "b",
        adj,
        vec![
            vec![-0.2, 0.1, 0.0],
            vec![0.0, 0.0, -0.3],
            vec![0.3, 0.1, 0.2],
        ],
    )
    .unwrap();
    SftSequence::new(
        vec![a, b],
        Schedule::Periodic {
            pattern: vec![0, 1],
        },
        vec![PairObservable::from_symbols(&[1.0, -0.5, 0.2], 3)],
        Schedule::Periodic { pattern: vec![0] },
    )
    .unwrap()
}

fn sinai() -> seqlimits_core::Result<Line> {
    let seq = sft3();
    let (m, n_max, paths) = (1usize, 1000usize, 10_000usize);
    let mut rng = substream(314, "acceptance-sinai", 0);
    let tables: Vec<Vec<f64>> = (0..2)
        .map(|_| (0..27).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let obs = TwoSidedObservable {
        m,
        tables,
        schedule: Schedule::Periodic {
            pattern: vec![0, 1],
        },
    };
    let red = sinai_reduce(&seq, &obs, (0, n_max as i64 - 1))?;
    let sys = gibbs::build(&seq, (-(m as i64), (n_max + 3 * m + 1) as i64), 80)?;
    let gap = two_sided_gap(&sys, &obs, &red, n_max, paths, 315)?;
    let ok = red.identity_residual < 1e-13 && gap.a_hat <= gap.bound + 1e-12 && red.sup_u > 0.0;
    Ok(line(ok, format!("identity residual={:.3e} max|S_nψ−S_nφ|={:.4} bound 2sup|u|={:.4} ({paths} paths, n<={n_max})", red.identity_residual, gap.a_hat, gap.bound)))
}

fn appendix_d() -> seqlimits_core::Result<Line> {
    let seq = sft3();
    let sys = gibbs::build(&seq, (0, 120), 80)?;
    let split = rank_one_split(&sys, 10, 60)?;
    let op = split.op_lemma(&sys, 20)?;
    let mut rng = substream(2718, "acceptance-appendix-d", 0);
    let (_, fit) = split.ex_conv_profile(&sys, 40, 20, &mut rng)?;
    let st = spec_rad_test(&split, 60, 20, &mut rng)?;
    let exact = op.projection_gap < 1e-12 && op.splitting_gap < 1e-12 && op.kernel_gap < 1e-12;
    let ok = exact && fit.rate < 1.0 && fit.r2 > 0.95 && st.pass && st.draws.len() == 20;
    Ok(line(
        ok,
        format!(
            "projection={:.1e} splitting={:.1e} kernel={:.1e} E-decay rate={:.3} r2={:.4} perturbation draws={} worst={:.3} bound={:.3}",
            op.projection_gap,
            op.splitting_gap,
            op.kernel_gap,
            fit.rate,
            fit.r2,
            st.draws.len(),
            st.draws.iter().cloned().fold(0.0, f64::max),
            st.bound
        ),
    ))
}

fn main() {
    // `cargo test -- --list` and filters other than "acceptance" skip the run
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    if let Some(f) = args.iter().find(|a| !a.starts_with('-')) {
        if !"acceptance".contains(f.as_str()) {
            return;
        }
    }
    let out = tempfile::tempdir().unwrap();
    let names = [
        "doubling_cos",
        "mixed",
        "mixed_density",
        "coboundary",
        "sft3",
        "golden",
        "sticky",
    ];
    let runs: BTreeMap<&str, Report> = names
        .iter()
        .map(|n| (*n, run_config(n, out.path())))
        .collect();
    let r = |n: &str| &runs[n];

    let mut lines: Vec<(u32, &str, Line)> = Vec::new();
    let mixed = r("mixed");
    lines.push((
        1,
        "RPF decay",
        all(vec![
            (
                mixed.value("rpf.decay_rate").is_some_and(|x| x < 0.9),
                format!("rate={}", fmt(mixed.value("rpf.decay_rate"))),
            ),
            (
                mixed.value("rpf.decay_r2").is_some_and(|x| x > 0.98),
                format!("r2={}", fmt(mixed.value("rpf.decay_r2"))),
            ),
            below(mixed, "rpf.equivariance_residual", 1e-8),
            (
                mixed.seconds("rpf") < 120.0,
                format!("{:.1}s", mixed.seconds("rpf")),
            ),
        ]),
    ));

    let mut c2 = Vec::new();
    for n in ["golden", "sft3"] {
        c2.push(below(r(n), "gibbs.cylinder_rel_gap", 1e-10));
        c2.push(below(r(n), "gibbs.ratio_drift", 1e-8));
        c2.push((
            r(n).seconds("gibbs") < 60.0,
            format!("{n} {:.1}s", r(n).seconds("gibbs")),
        ));
    }
    lines.push((2, "Gibbs exactness", all(c2)));

    let mut c3 = Vec::new();
    for n in names {
        let (a, _) = below(r(n), "martingale.reverse_residual", 1e-8);
        let (b, _) = below(r(n), "martingale.reconstruction_residual", 1e-10);
        c3.push((
            a && b,
            format!(
                "{n}={}/{}",
                fmt(r(n).value("martingale.reverse_residual")),
                fmt(r(n).value("martingale.reconstruction_residual"))
            ),
        ));
    }
    lines.push((3, "martingale decomposition", all(c3)));

    let cob = r("coboundary");
    let dc = r("doubling_cos");
    lines.push((
        4,
        "variance dichotomy",
        all(vec![
            (
                cob.passed("martingale.dichotomy")
                    && cob
                        .verdict("martingale.dichotomy")
                        .is_some_and(|v| v["condition"].as_str().unwrap_or("").contains("Bounded")),
                "coboundary bounded".into(),
            ),
            (
                cob.passed("martingale.bounded_variance"),
                format!("max Var={}", fmt(cob.value("martingale.bounded_variance"))),
            ),
            (
                cob.status("limits") == "skipped",
                format!("limits {}", cob.status("limits")),
            ),
            below(dc, "martingale.variance_oracle", 1e-6),
        ]),
    ));

    let rates = |metrics: &[&str]| {
        let mut v = Vec::new();
        for n in ["doubling_cos", "mixed"] {
            for m in metrics {
                let (ok, d) = rate(r(n), m);
                v.push((ok, format!("{n}:{d}")));
            }
        }
        v
    };
    let mut c5 = rates(&["kolmogorov"]);
    for n in ["doubling_cos", "mixed"] {
        c5.push((
            r(n).seconds("limits") < 1800.0,
            format!("{n} {:.0}s", r(n).seconds("limits")),
        ));
    }
    lines.push((5, "Berry-Esseen rate", all(c5)));
    lines.push((
        6,
        "weighted and L^p rates",
        all(rates(&["weighted3", "l1", "l2"])),
    ));
    lines.push((7, "Wasserstein rates", all(rates(&["w1", "w2"]))));
    lines.push((
        8,
        "moment ratio trend",
        all(["doubling_cos", "mixed"]
            .iter()
            .map(|n| {
                let (ok, d) = below(r(n), "limits.moment_slope", 0.05 + 1e-15);
                (ok, format!("{n}:{d}"))
            })
            .collect()),
    ));

    let mut c9 = Vec::new();
    for n in ["sft3", "golden"] {
        for k in [3, 4] {
            let (ok, d) = below(r(n), &format!("cumulant.growth_slope[k={k}]"), 0.1 + 1e-15);
            c9.push((ok, format!("{n}:{d}")));
        }
    }
    lines.push((9, "growth plateau", all(c9)));

    let mut c10 = Vec::new();
    for n in ["doubling_cos", "mixed", "sft3"] {
        let ids = r(n).ids("cumulant.lll_slope");
        c10.push((ids.len() == 3, format!("{n}: {} points", ids.len())));
        for id in ids {
            let (ok, d) = below(r(n), &id, 1e-4);
            c10.push((ok, d.replace("cumulant.lll_slope", "")));
        }
    }
    lines.push((10, "LLL gap flat", all(c10)));

    let st = r("sticky");
    lines.push((
        11,
        "ASIP blocks",
        all(vec![
            (
                st.passed("asip.blocks_within_bounds"),
                format!("max var/B={}", fmt(st.value("asip.blocks_within_bounds"))),
            ),
            below(st, "asip.kn_band_width", 3.0),
            (
                st.value("asip.block_cov_r2").is_some_and(|x| x > 0.95),
                format!("cov r2={}", fmt(st.value("asip.block_cov_r2"))),
            ),
        ]),
    ));

    let s3 = r("sft3");
    let gap_ids = s3.ids("asip.gouzel_gap");
    let mut c12 = vec![(
        s3.value("asip.gouzel_rate").is_some_and(|x| x < 1.0),
        format!("rate={}", fmt(s3.value("asip.gouzel_rate"))),
    )];
    c12.push((
        gap_ids.len() == 1,
        format!("{} gap point(s)", gap_ids.len()),
    ));
    for id in gap_ids {
        c12.push(below(s3, &id, 1e-12));
    }
    lines.push((12, "Gouzel factorization", all(c12)));

    let md = r("mixed_density");
    lines.push((
        13,
        "change of reference measure",
        all(vec![rate(md, "kolmogorov")]),
    ));

    let t = Instant::now();
    lines.push((
        14,
        "Sinai reduction",
        sinai().unwrap_or_else(|e| line(false, format!("error: {e}"))),
    ));
    eprintln!("  Sinai check in {:.0}s", t.elapsed().as_secs_f64());
    lines.push((
        15,
        "Appendix D algebra",
        appendix_d().unwrap_or_else(|e| line(false, format!("error: {e}"))),
    ));

    let mut failed = 0;
    for (k, name, l) in &lines {
        println!(
            "criterion {k:>2} [{}] {name}: {}",
            if l.pass { "PASS" } else { "FAIL" },
            l.detail
        );
        failed += usize::from(!l.pass);
    }
    println!("{} of {} criteria pass", lines.len() - failed, lines.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

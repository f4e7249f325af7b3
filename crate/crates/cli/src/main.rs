//! `seqlimits`: runs, describes and compares experiments on sequential
//! expanding systems.

mod compare;
mod config;
mod pipeline;
mod report;
mod system;

use clap::{Parser, Subcommand};
use config::ExperimentConfig;
use report::{ReportDir, StageStatus, Summary, SUMMARY_FILE, SUMMARY_VERSION};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_ACCEPTANCE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(
    name = "seqlimits",
    version,
    about = "Limit-theorem experiments for sequential expanding maps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured stage and write a report directory.
    Run {
        config: PathBuf,
        /// worker threads (default: all cores)
        #[arg(long)]
        threads: Option<usize>,
        /// output root; a timestamped subdirectory is created inside
        #[arg(long, env = "SEQLIMITS_OUT")]
        out: Option<PathBuf>,
        /// replaces the root seed of the configuration
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the stage plan, operator sizes and Monte Carlo budgets.
    Describe { config: PathBuf },
    /// Per-metric differences between two report directories.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// relative tolerance for metrics without an error bar
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Gibbs mass of the cylinder [w] at time j (SFT configurations).
    QueryCylinder {
        config: PathBuf,
        #[arg(long)]
        time: i64,
        /// symbols separated by commas, e.g. 0,1,2
        #[arg(long)]
        word: String,
    },
}

fn load(path: &Path) -> Result<(ExperimentConfig, Vec<u8>), String> {
    let raw = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let text =
        String::from_utf8(raw.clone()).map_err(|_| format!("{}: not UTF-8", path.display()))?;
    let cfg = ExperimentConfig::parse(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok((cfg, raw))
}

fn config_hash(raw: &[u8], seed_override: Option<u64>) -> String {
    let mut h = Sha256::new();
    h.update(raw);
    if let Some(s) = seed_override {
        h.update(format!("\nseed-override={s}").as_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            threads,
            out,
            seed,
        } => run(&config, threads, out, seed),
        Command::Describe { config } => match load(&config) {
            Ok((cfg, _)) => {
                print!("{}", describe(&cfg));
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("config error: {e}");
                ExitCode::from(EXIT_CONFIG)
            }
        },
        Command::Compare { a, b, tol } => match compare::compare(&a, &b, tol) {
            Ok(diffs) => {
                println!(
                    "{:<40} {:>12} {:>8} {:>8}",
                    "metric", "max_rel", "flagged", "entries"
                );
                for d in &diffs {
                    println!(
                        "{:<40} {:>12.3e} {:>8} {:>8}",
                        d.metric, d.max_rel, d.flagged, d.compared
                    );
                }
                let flagged: usize = diffs.iter().map(|d| d.flagged).sum();
                println!("{flagged} entries beyond error bars");
                if flagged == 0 {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(EXIT_ACCEPTANCE)
                }
            }
            Err(e) => {
                eprintln!("compare: {e:#}");
                ExitCode::from(EXIT_CONFIG)
            }
        },
        Command::QueryCylinder { config, time, word } => query_cylinder(&config, time, &word),
    }
}

fn run(path: &Path, threads: Option<usize>, out: Option<PathBuf>, seed: Option<u64>) -> ExitCode {
    let (mut cfg, raw) = match load(path) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Some(t) = threads {
        if t == 0 {
            eprintln!("config error: --threads must be positive");
            return ExitCode::from(EXIT_CONFIG);
        }
        // only fails if a pool already exists
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global();
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let root = out
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("reports"));
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    let dir = match ReportDir::create(&root, &stem) {
        Ok(d) => d,
        Err(e) => {
            eprintln!(
                "cannot create report directory under {}: {e}",
                root.display()
            );
            return ExitCode::from(EXIT_NUMERIC);
        }
    };
    let config_hash = config_hash(&raw, seed);
    let _ = dir.write("config.toml", &String::from_utf8_lossy(&raw));
    let t0 = std::time::Instant::now();
    let system = match system::build(&cfg) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("building the system failed: {e}");
            let summary = Summary {
                version: SUMMARY_VERSION,
                config_hash,
                verdicts: vec![],
                timings: vec![report::Timing {
                    stage: "system".into(),
                    status: StageStatus::Error,
                    seconds: t0.elapsed().as_secs_f64(),
                    message: Some(e.to_string()),
                }],
            };
            let _ = dir.write(
                SUMMARY_FILE,
                &serde_json::to_string_pretty(&summary).unwrap(),
            );
            println!("{}", dir.path.display());
            return ExitCode::from(EXIT_NUMERIC);
        }
    };
    let mut timings = vec![report::Timing {
        stage: "system".into(),
        status: StageStatus::Passed,
        seconds: t0.elapsed().as_secs_f64(),
        message: None,
    }];
    let results = match pipeline::run_all(&cfg, &system, &dir) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("writing artifacts failed: {e}");
            return ExitCode::from(EXIT_NUMERIC);
        }
    };
    let mut verdicts = Vec::new();
    for r in results {
        let t = &r.timing;
        let msg = t
            .message
            .as_deref()
            .map(|m| format!(" ({m})"))
            .unwrap_or_default();
        eprintln!(
            "{:<11} {:<8} {:>9.2}s{msg}",
            t.stage,
            format!("{:?}", t.status).to_lowercase(),
            t.seconds
        );
        timings.push(r.timing);
        verdicts.extend(r.verdicts);
    }
    for v in &verdicts {
        let val = v.value.map_or("-".to_string(), |x| format!("{x:.4e}"));
        eprintln!(
            "  [{}] {:<36} {val:>12}  {}",
            if v.pass { "pass" } else { "FAIL" },
            v.id,
            v.condition
        );
    }
    let summary = Summary {
        version: SUMMARY_VERSION,
        config_hash,
        verdicts,
        timings,
    };
    if let Err(e) = dir.write(
        SUMMARY_FILE,
        &(serde_json::to_string_pretty(&summary).unwrap() + "\n"),
    ) {
        eprintln!("writing summary failed: {e}");
        return ExitCode::from(EXIT_NUMERIC);
    }
    println!("{}", dir.path.display());
    if summary
        .timings
        .iter()
        .any(|t| t.status == StageStatus::Error)
    {
        ExitCode::from(EXIT_NUMERIC)
    } else if summary.verdicts.iter().any(|v| !v.pass) {
        ExitCode::from(EXIT_ACCEPTANCE)
    } else {
        ExitCode::SUCCESS
    }
}

fn describe(cfg: &ExperimentConfig) -> String {
    let mut s = String::new();
    let mixing = cfg.sft.as_ref().and_then(|s| system::sft_sequence(s).ok()).map_or(1, |q| q.mixing_horizon);
    let horizon = cfg.time_horizon(mixing);
    if let Some(iv) = &cfg.interval {
        let g = iv.grid;
        s += &format!(
            "system: interval maps, family [{}], schedule {:?}\n",
            iv.family.join(", "),
            iv.schedule
        );
        s += &format!("grid: G = {g} cells, {} nodes\n", g + 1);
        s += &format!(
            "operators: {g}^2 = {} dense entries per step ({}x{} node matrix, stored sparse)\n",
            g * g,
            g + 1,
            g + 1
        );
        s += &format!(
            "initial law: {}\n",
            if iv.initial_density.is_some() {
                "density on [0,1]"
            } else {
                "Lebesgue"
            }
        );
    }
    if let Some(sft) = &cfg.sft {
        let d: Vec<String> = sft
            .stages
            .iter()
            .map(|st| {
                format!(
                    "{}x{}",
                    st.adjacency.len(),
                    st.adjacency.first().map_or(0, |r| r.len())
                )
            })
            .collect();
        s += &format!(
            "system: sequential SFT, {} stage(s), memory 1, schedule {:?}\n",
            sft.stages.len(),
            sft.schedule
        );
        s += &format!(
            "operators: symbol matrices {} per step; pair basis of size d^2\n",
            d.join(", ")
        );
        s += &format!(
            "gibbs window: [0, {}], burn-in {}\n",
            sft.horizon.unwrap_or(horizon),
            sft.burn_in
        );
    }
    s += &format!("time horizon: {horizon}\nseed: {}\n", cfg.seed);
    let st = &cfg.stages;
    for (i, name) in cfg.enabled_stages().iter().enumerate() {
        let detail = match *name {
            "rpf" => {
                let r = st.rpf.as_ref().unwrap();
                let b = r.burn_in.map_or("pilot".to_string(), |b| b.to_string());
                format!(
                    "triplet on [0, {}], burn-in {b}; decay of {} BV functions over {} steps",
                    r.window, r.samples, r.decay_steps
                )
            }
            "gibbs" => {
                let g = st.gibbs.as_ref().unwrap();
                format!("cylinders of depth <= {} at times {:?} vs finite-volume sums (margin {}); ratio check to depth {}", g.depth, g.times, g.margin, g.ratio_depth)
            }
            "martingale" => {
                let m = st.martingale.as_ref().unwrap();
                format!(
                    "decomposition on [0, {}]; variance dichotomy up to n = {}",
                    m.n, m.variance_n_max
                )
            }
            "cumulant" => {
                let c = st.cumulant.as_ref().unwrap();
                format!("gap curve at {} point(s) for n <= {} from {} start(s); growth orders {:?} over n in {:?}", c.z.len(), c.n_max, c.starts.len(), c.growth_k, c.growth_n)
            }
            "limits" => {
                let l = st.limits.as_ref().unwrap();
                let steps = l.count as u128 * *l.n_list.last().unwrap() as u128;
                format!("Monte Carlo budget: N = {} paths x {} steps = {steps} map evaluations; n in {:?}", l.count, l.n_list.last().unwrap(), l.n_list)
            }
            "asip" => {
                let a = st.asip.as_ref().unwrap();
                let g = a.gouzel.as_ref().map_or(String::new(), |g| {
                    format!("; factorization gaps at k in {:?}", g.ks)
                });
                format!(
                    "block plan with B = {} over n = {}; k_n band over {:?}{g}",
                    a.b, a.n, a.kn_list
                )
            }
            _ => unreachable!(),
        };
        s += &format!("{}. {name}: {detail}\n", i + 1);
    }
    s
}

fn query_cylinder(path: &Path, time: i64, word: &str) -> ExitCode {
    let (cfg, _) = match load(path) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let Some(sft) = &cfg.sft else {
        eprintln!("config error: query-cylinder needs an [sft] system");
        return ExitCode::from(EXIT_CONFIG);
    };
    let w: Result<Vec<usize>, _> = word.split(',').map(|s| s.trim().parse::<usize>()).collect();
    let Ok(w) = w else {
        eprintln!("config error: --word must be comma-separated symbols");
        return ExitCode::from(EXIT_CONFIG);
    };
    if w.is_empty() || time < 0 {
        eprintln!("config error: need a non-empty word and a non-negative time");
        return ExitCode::from(EXIT_CONFIG);
    }
    let res = (|| -> seqlimits_core::error::Result<serde_json::Value> {
        let seq = system::sft_sequence(sft)?;
        let top = time + w.len() as i64 + 1;
        let sys = seqlimits_core::gibbs::build(&seq, (0, top), sft.burn_in)?;
        let m = sys.cylinder_mass(time, &w)?;
        Ok(
            serde_json::json!({ "time": time, "word": w, "admissible": m.admissible, "mass": m.mass }),
        )
    })();
    match res {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(seqlimits_core::error::Error::InvalidInput(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(e) => {
            eprintln!("numeric failure: {e}");
            ExitCode::from(EXIT_NUMERIC)
        }
    }
}

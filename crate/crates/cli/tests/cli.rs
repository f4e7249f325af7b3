use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"seed = 11

[interval]
grid = 512
family = ["doubling"]
schedule = { type = "periodic", pattern = [0] }
observable = { type = "cos", amp = 1.0, freq = 1.0 }

[stages.martingale]
n = 100
variance_n_max = 400
expect = "divergent"
variance_rate = 0.5

[stages.limits]
n_list = [16, 32, 64, 128, 256]
count = 200000
# the moment-ratio transient dominates below n = 2^12
moments = false
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_seqlimits"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run(cfg: &Path, out: &Path, extra: &[&str]) -> (Output, PathBuf) {
    let o = bin()
        .arg("run")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap();
    let dir = PathBuf::from(String::from_utf8_lossy(&o.stdout).trim());
    (o, dir)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn csvs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

#[test]
fn small_doubling_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "small.toml", SMALL);
    let (o, dir) = run(&cfg, tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = summary(&dir);
    assert_eq!(s["version"], 1);
    assert_eq!(s["config_hash"].as_str().unwrap().len(), 64);
    let rates = fs::read_to_string(dir.join("rates.csv")).unwrap();
    let kolm = rates
        .lines()
        .find(|l| l.starts_with("kolmogorov,"))
        .unwrap();
    let slope: f64 = kolm.split(',').nth(1).unwrap().parse().unwrap();
    assert!((-1.35..=-0.65).contains(&slope), "{slope}");
    assert!(dir.join("config.toml").exists());
    // no temporary files left behind
    assert!(fs::read_dir(&dir).unwrap().all(|e| !e
        .unwrap()
        .file_name()
        .to_string_lossy()
        .starts_with('.')));
}

#[test]
fn same_seed_same_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "small.toml", SMALL);
    let (o1, d1) = run(&cfg, tmp.path(), &["--threads", "1"]);
    let (o2, d2) = run(&cfg, tmp.path(), &[]);
    assert!(o1.status.success() && o2.status.success());
    assert_ne!(d1, d2);
    let (a, b) = (csvs(&d1), csvs(&d2));
    assert!(!a.is_empty());
    assert_eq!(a, b);
    assert_eq!(summary(&d1)["config_hash"], summary(&d2)["config_hash"]);

    let c = bin().arg("compare").arg(&d1).arg(&d2).output().unwrap();
    assert_eq!(c.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&c.stdout).contains("0 entries beyond error bars"));

    // another seed: the distance curves agree within their Monte Carlo error bars
    let (o3, d3) = run(&cfg, tmp.path(), &["--seed", "12"]);
    assert!(o3.status.success());
    assert_ne!(summary(&d1)["config_hash"], summary(&d3)["config_hash"]);
    let c = bin().arg("compare").arg(&d1).arg(&d3).output().unwrap();
    let text = String::from_utf8_lossy(&c.stdout).into_owned();
    let mut seen = 0;
    for line in text.lines().filter(|l| l.starts_with("distances.csv:")) {
        let f: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(f[2], "0", "{line}");
        seen += 1;
    }
    assert!(seen >= 9, "{text}");
}

#[test]
fn compare_schema_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "small.toml", SMALL);
    let (_, d1) = run(&cfg, tmp.path(), &[]);
    let fewer = SMALL.replace("variance_rate = 0.5\n", "");
    let cfg2 = write(tmp.path(), "fewer.toml", &fewer);
    let (_, d2) = run(&cfg2, tmp.path(), &[]);
    let c = bin().arg("compare").arg(&d1).arg(&d2).output().unwrap();
    assert_eq!(c.status.code(), Some(2));
    assert!(stderr(&c).contains("schema mismatch"));

    let mut s = summary(&d2);
    s["version"] = 99.into();
    fs::write(d2.join("summary.json"), s.to_string()).unwrap();
    let c = bin().arg("compare").arg(&d1).arg(&d2).output().unwrap();
    assert_eq!(c.status.code(), Some(2));
}

#[test]
fn negative_count_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "bad.toml",
        &SMALL.replace("count = 200000", "count = -5"),
    );
    let (o, _) = run(&cfg, tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("stages.limits.count"), "{}", stderr(&o));

    let cfg = write(
        tmp.path(),
        "typo.toml",
        &SMALL.replace("variance_n_max", "variance_nmax"),
    );
    let (o, _) = run(&cfg, tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("variance_nmax"), "{}", stderr(&o));
}

#[test]
fn coboundary_skips_limits() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(configs().join("coboundary.toml"))
        .unwrap()
        .replace("grid = 4096", "grid = 512")
        .replace("variance_n_max = 10000", "variance_n_max = 500");
    let cfg = write(tmp.path(), "cob.toml", &text);
    let (o, dir) = run(&cfg, tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = summary(&dir);
    let limits = s["timings"]
        .as_array()
        .unwrap()
        .iter()
        .find(|t| t["stage"] == "limits")
        .unwrap();
    assert_eq!(limits["status"], "skipped");
    assert!(limits["message"]
        .as_str()
        .unwrap()
        .contains("sigma bounded"));
    assert!(!dir.join("distances.csv").exists());
}

#[test]
fn describe_reports_sizes_and_plan() {
    let d = bin()
        .arg("describe")
        .arg(configs().join("doubling_cos.toml"))
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&d.stdout).into_owned();
    assert!(d.status.success());
    assert!(text.contains("4096^2 = 16777216"), "{text}");
    assert!(text.contains("1000000 paths"), "{text}");

    let d = bin()
        .arg("describe")
        .arg(configs().join("sft3.toml"))
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&d.stdout).into_owned();
    assert!(text.contains("3x3"), "{text}");

    let tmp = tempfile::tempdir().unwrap();
    let six = fs::read_to_string(configs().join("sft3.toml")).unwrap()
        + "\n[stages.limits]\nn_list = [16, 32, 64, 128, 256]\ncount = 100\n";
    let cfg = write(tmp.path(), "six.toml", &six);
    let d = bin().arg("describe").arg(&cfg).output().unwrap();
    let text = String::from_utf8_lossy(&d.stdout).into_owned();
    let plan: Vec<&str> = text
        .lines()
        .filter(|l| l.chars().next().is_some_and(|c| c.is_ascii_digit()))
        .map(|l| l.split(':').next().unwrap().split(". ").nth(1).unwrap())
        .collect();
    assert_eq!(
        plan,
        ["rpf", "gibbs", "martingale", "cumulant", "limits", "asip"]
    );
}

#[test]
fn bundled_configs_parse() {
    let mut n = 0;
    for e in fs::read_dir(configs()).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "toml") {
            let d = bin().arg("describe").arg(&p).output().unwrap();
            assert!(d.status.success(), "{}: {}", p.display(), stderr(&d));
            n += 1;
        }
    }
    assert!(n >= 6);
}

#[test]
fn query_cylinder_prints_mass() {
    let golden = configs().join("golden.toml");
    let q = |w: &str| {
        bin()
            .args(["query-cylinder"])
            .arg(&golden)
            .args(["--time", "2", "--word", w])
            .output()
            .unwrap()
    };
    let o = q("0,1,0");
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["admissible"], true);
    let m = v["mass"].as_f64().unwrap();
    assert!(m > 0.0 && m < 1.0);
    // the masses of the one-symbol extensions add up
    let ext: f64 = ["0,1,0,0", "0,1,0,1"]
        .iter()
        .map(|w| {
            serde_json::from_slice::<serde_json::Value>(&q(w).stdout).unwrap()["mass"]
                .as_f64()
                .unwrap()
        })
        .sum();
    assert!((ext - m).abs() < 1e-14);
    let o = q("0,1,1");
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["admissible"], false);
    assert_eq!(v["mass"], 0.0);
    assert_eq!(q("0,x").status.code(), Some(2));
    let o = bin()
        .args(["query-cylinder"])
        .arg(configs().join("mixed.toml"))
        .args(["--time", "0", "--word", "0"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

//! Differences between two report directories.

use crate::report::read_summary;
use anyhow::{bail, Context, Result};
use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

#[derive(Clone, Debug, PartialEq)]
pub struct MetricDiff {
    /// `verdict:<id>` or `<file>:<column>`
    pub metric: String,
    pub max_rel: f64,
    /// entries differing beyond their error bar (or the tolerance without one)
    pub flagged: usize,
    pub compared: usize,
}

fn rel(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if a == b || s == 0.0 {
        0.0
    } else if a.is_nan() || b.is_nan() {
        f64::INFINITY
    } else {
        (a - b).abs() / s
    }
}

/// Beyond 3 combined error bars when one is known, else relative tolerance.
fn beyond(a: f64, b: f64, bars: Option<(f64, f64)>, tol: f64) -> bool {
    match bars {
        Some((ea, eb)) => (a - b).abs() > 3.0 * (ea * ea + eb * eb).sqrt(),
        None => rel(a, b) > tol,
    }
}

fn csv_files(dir: &Path) -> Result<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    for e in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let name = e?.file_name().to_string_lossy().into_owned();
        if name.ends_with(".csv") && !name.starts_with('.') {
            out.insert(name);
        }
    }
    Ok(out)
}

fn parse(v: &str) -> f64 {
    v.trim().parse().unwrap_or(f64::NAN)
}

pub fn compare(a: &Path, b: &Path, tol: f64) -> Result<Vec<MetricDiff>> {
    let sa = read_summary(a)?;
    let sb = read_summary(b)?;
    let ids_a: Vec<&str> = sa.verdicts.iter().map(|v| v.id.as_str()).collect();
    let ids_b: Vec<&str> = sb.verdicts.iter().map(|v| v.id.as_str()).collect();
    if ids_a != ids_b {
        bail!("schema mismatch: verdict lists differ ({ids_a:?} vs {ids_b:?})");
    }
    let mut out = Vec::new();
    for (va, vb) in sa.verdicts.iter().zip(&sb.verdicts) {
        let (x, y) = (va.value.unwrap_or(f64::NAN), vb.value.unwrap_or(f64::NAN));
        let bars = va.error_bar.zip(vb.error_bar);
        let same_missing = va.value.is_none() && vb.value.is_none();
        out.push(MetricDiff {
            metric: format!("verdict:{}", va.id),
            max_rel: if same_missing { 0.0 } else { rel(x, y) },
            flagged: usize::from(!same_missing && beyond(x, y, bars, tol)),
            compared: 1,
        });
    }
    let fa = csv_files(a)?;
    let fb = csv_files(b)?;
    if fa != fb {
        bail!("schema mismatch: artifact sets differ ({fa:?} vs {fb:?})");
    }
    for name in &fa {
        let ta = fs::read_to_string(a.join(name))?;
        let tb = fs::read_to_string(b.join(name))?;
        let (la, lb): (Vec<&str>, Vec<&str>) = (ta.lines().collect(), tb.lines().collect());
        if la.first() != lb.first() {
            bail!("schema mismatch: header of {name} differs");
        }
        if la.len() != lb.len() {
            bail!(
                "schema mismatch: {name} has {} rows vs {}",
                la.len(),
                lb.len()
            );
        }
        let header: Vec<&str> = la
            .first()
            .map(|h| h.split(',').collect())
            .unwrap_or_default();
        let err_col = header.iter().position(|h| *h == "mc_err");
        let mut diffs: Vec<MetricDiff> = header
            .iter()
            .map(|h| MetricDiff {
                metric: format!("{name}:{h}"),
                max_rel: 0.0,
                flagged: 0,
                compared: 0,
            })
            .collect();
        for (ra, rb) in la.iter().zip(&lb).skip(1) {
            let ca: Vec<&str> = ra.split(',').collect();
            let cb: Vec<&str> = rb.split(',').collect();
            if ca.len() != header.len() || cb.len() != header.len() {
                bail!("schema mismatch: ragged row in {name}");
            }
            let bars = err_col.map(|k| (parse(ca[k]), parse(cb[k])));
            for (k, d) in diffs.iter_mut().enumerate() {
                if Some(k) == err_col {
                    continue;
                }
                let (x, y) = (parse(ca[k]), parse(cb[k]));
                if x.is_nan() && y.is_nan() {
                    if ca[k] != cb[k] {
                        d.flagged += 1;
                    }
                    d.compared += 1;
                    continue;
                }
                // columns of the sampling design (sizes, σ_n) carry no MC error
                let exact = matches!(header[k], "n" | "sigma_n");
                d.max_rel = d.max_rel.max(rel(x, y));
                if beyond(x, y, if exact { None } else { bars }, tol) {
                    d.flagged += 1;
                }
                d.compared += 1;
            }
        }
        out.extend(diffs.into_iter().filter(|d| d.compared > 0));
    }
    Ok(out)
}

//! Report directories, atomic artifact writes and the JSON summary.

use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const SUMMARY_VERSION: u32 = 1;
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub id: String,
    pub stage: String,
    pub pass: bool,
    pub value: Option<f64>,
    /// human-readable acceptance condition
    pub condition: String,
    /// half-width of the uncertainty on `value`, when known
    pub error_bar: Option<f64>,
    pub artifact: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Passed,
    Failed,
    Error,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub stage: String,
    pub status: StageStatus,
    pub seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub version: u32,
    pub config_hash: String,
    pub verdicts: Vec<VerdictRecord>,
    pub timings: Vec<Timing>,
}

pub struct ReportDir {
    pub path: PathBuf,
}

impl ReportDir {
    /// Creates `<root>/<stem>-<UTC timestamp>`, adding a counter on collision.
    pub fn create(root: &Path, stem: &str) -> std::io::Result<Self> {
        fs::create_dir_all(root)?;
        let ts = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
        let base = format!("{stem}-{ts}");
        for k in 0.. {
            let name = if k == 0 {
                base.clone()
            } else {
                format!("{base}-{k}")
            };
            let p = root.join(name);
            match fs::create_dir(&p) {
                Ok(()) => return Ok(ReportDir { path: p }),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(e),
            }
        }
        unreachable!()
    }

    /// Writes to a hidden temporary file, syncs it and renames it into place.
    pub fn write(&self, name: &str, content: &str) -> std::io::Result<()> {
        let tmp = self.path.join(format!(".{name}.tmp"));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(content.as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, self.path.join(name))
    }
}

pub fn read_summary(dir: &Path) -> anyhow::Result<Summary> {
    let p = dir.join(SUMMARY_FILE);
    let text = fs::read_to_string(&p).map_err(|e| anyhow::anyhow!("{}: {e}", p.display()))?;
    let s: Summary = serde_json::from_str(&text)
        .map_err(|e| anyhow::anyhow!("{}: schema mismatch: {e}", p.display()))?;
    if s.version != SUMMARY_VERSION {
        anyhow::bail!(
            "{}: schema mismatch: version {} (expected {SUMMARY_VERSION})",
            p.display(),
            s.version
        );
    }
    Ok(s)
}

/// Joins a header and rows into CSV text with a trailing newline.
pub fn csv(header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    s
}

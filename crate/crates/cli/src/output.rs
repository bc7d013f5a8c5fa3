//! Artifact writers and the audit-failure report.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

/// Wall-clock data lives only in this file, so every other artifact is
/// byte-reproducible.
pub const METADATA_FILE: &str = "metadata.json";
pub const FAILURE_FILE: &str = "failure_report.json";

#[derive(Debug, Clone, Serialize)]
pub struct AuditFailure {
    pub check: String,
    pub detail: String,
}

impl AuditFailure {
    pub fn new(check: &str, detail: impl Into<String>) -> Self {
        Self {
            check: check.into(),
            detail: detail.into(),
        }
    }
}

/// What a command produced and which audits failed.
#[derive(Debug, Default)]
pub struct Report {
    pub dir: PathBuf,
    pub failures: Vec<AuditFailure>,
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Metadata<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    started_at: String,
    finished_at: String,
}

pub fn write_metadata(
    dir: &Path,
    command: &str,
    seed: u64,
    started: chrono::DateTime<chrono::Utc>,
) -> Result<()> {
    write_json(
        &dir.join(METADATA_FILE),
        &Metadata {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed,
            started_at: started.to_rfc3339(),
            finished_at: chrono::Utc::now().to_rfc3339(),
        },
    )
}

#[derive(Serialize)]
struct FailureReport<'a> {
    command: &'a str,
    ok: bool,
    failures: &'a [AuditFailure],
}

/// Writes the machine-readable report when audits failed and clears a stale
/// one otherwise.
pub fn write_failures(
    dir: &Path,
    command: &str,
    failures: &[AuditFailure],
) -> Result<Option<String>> {
    let path = dir.join(FAILURE_FILE);
    if failures.is_empty() {
        if path.exists() {
            std::fs::remove_file(&path).with_context(|| format!("removing {}", path.display()))?;
        }
        return Ok(None);
    }
    let report = FailureReport {
        command,
        ok: false,
        failures,
    };
    write_json(&path, &report)?;
    Ok(Some(serde_json::to_string(&report)?))
}

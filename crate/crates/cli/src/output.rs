//! Report envelopes, manifests and writers.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;

use mpd_core::limit_sim::LIMIT_FORMAT_VERSION;

/// Version of the JSON report layout.
pub const REPORT_FORMAT_VERSION: &str = "1";

#[derive(Debug, Serialize)]
pub struct Versions {
    pub tool: &'static str,
    pub report_format: &'static str,
    pub limit_format: &'static str,
}

/// Everything needed to replay a run: the argument vector reproduces every
/// numeric artifact exactly.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub versions: Versions,
    pub started_unix: f64,
    pub finished_unix: f64,
}

pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

impl RunManifest {
    pub fn new<C: Serialize>(command: &str, config: &C, seed: Option<u64>, started: f64) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            argv: std::env::args().collect(),
            config: serde_json::to_value(config)?,
            seed,
            versions: Versions {
                tool: env!("CARGO_PKG_VERSION"),
                report_format: REPORT_FORMAT_VERSION,
                limit_format: LIMIT_FORMAT_VERSION,
            },
            started_unix: started,
            finished_unix: unix_now(),
        })
    }
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    manifest: &'a RunManifest,
    result: &'a T,
}

fn open(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) if p != Path::new("-") => {
            Box::new(BufWriter::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?))
        }
        _ => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// Writes `{"manifest": ..., "result": ...}` as pretty JSON.
pub fn write_json<T: Serialize>(out: Option<&Path>, manifest: &RunManifest, result: &T) -> Result<()> {
    let mut w = open(out)?;
    serde_json::to_writer_pretty(&mut w, &Envelope { manifest, result })?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Sidecar manifest path for a CSV artifact.
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

/// Writes CSV through `emit`; a file output gets a `<file>.manifest.json` sidecar.
pub fn write_csv<F>(out: Option<&Path>, manifest: &RunManifest, emit: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> mpd_core::Result<()>,
{
    let mut w = open(out)?;
    emit(&mut w)?;
    w.flush()?;
    if let Some(p) = out.filter(|p| *p != Path::new("-")) {
        let file = BufWriter::new(File::create(manifest_path(p))?);
        serde_json::to_writer_pretty(file, manifest)?;
    }
    Ok(())
}

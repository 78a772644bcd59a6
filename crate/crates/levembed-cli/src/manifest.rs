//! Run manifests: the resolved configuration, seeds, inputs, and outputs of
//! every subcommand, written on success and on failure.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;

#[derive(Serialize)]
pub struct RunManifest {
    pub tool_version: &'static str,
    pub subcommand: &'static str,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub wall_seconds: f64,
    pub status: String,
}

/// Runs a subcommand body and writes the manifest next to its outputs whether
/// the body succeeded or not. Returns the body's error afterwards, so the
/// process still exits non-zero on failure.
pub fn with_manifest(
    manifest_path: &Path,
    subcommand: &'static str,
    config: serde_json::Value,
    seeds: Vec<u64>,
    inputs: Vec<String>,
    body: impl FnOnce() -> Result<Vec<PathBuf>>,
) -> Result<()> {
    let started = Instant::now();
    let outcome = body();
    let (status, outputs) = match &outcome {
        Ok(outputs) => (
            "ok".to_string(),
            outputs.iter().map(|p| p.display().to_string()).collect(),
        ),
        Err(e) => (format!("error: {e:#}"), Vec::new()),
    };
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION"),
        subcommand,
        config,
        seeds,
        inputs,
        outputs,
        wall_seconds: started.elapsed().as_secs_f64(),
        status,
    };
    if let Some(parent) = manifest_path.parent() {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }
    let file = std::fs::File::create(manifest_path)
        .with_context(|| format!("writing {}", manifest_path.display()))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &manifest)
        .with_context(|| format!("serializing {}", manifest_path.display()))?;

    // declared outputs must exist for a zero exit status
    if let Ok(outputs) = &outcome {
        for path in outputs {
            anyhow::ensure!(
                path.exists(),
                "declared output {} was not written",
                path.display()
            );
        }
    }
    outcome.map(|_| ())
}

//! Library half of the `mhd` command: stage definitions, run configuration and
//! the manifest that lets any stage be replayed byte for byte.

pub mod config;
pub mod stages;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub use stages::Stage;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TOOL: &str = "mhd";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to rerun a stage: its resolved arguments (seed included)
/// and the digests of what it read and wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub run: Stage,
    pub inputs: BTreeMap<String, FileDigest>,
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn input_digests(stage: &Stage) -> Result<BTreeMap<String, FileDigest>> {
    stage
        .inputs()
        .into_iter()
        .map(|(role, path)| Ok((role.to_string(), FileDigest { path: path.to_path_buf(), sha256: sha256_file(path)? })))
        .collect()
}

/// Runs `stage` into `out` and writes `out/manifest.json`.
pub fn execute(stage: &Stage, out: &Path) -> Result<Manifest> {
    let inputs = input_digests(stage)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let written = stage.run(out).with_context(|| format!("{} stage failed", stage.name()))?;
    let outputs = written
        .into_iter()
        .map(|name| {
            let digest = sha256_file(&out.join(&name))?;
            Ok((name, digest))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    let manifest = Manifest {
        tool: TOOL.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        run: stage.clone(),
        inputs,
        outputs,
    };
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    std::fs::write(out.join(MANIFEST_FILE), text).context("writing manifest")?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
}

/// Replays the stage recorded in a manifest into `out`. Fails if any input
/// changed since, or if the regenerated outputs differ from the recorded ones.
pub fn rerun(manifest_path: &Path, out: &Path) -> Result<Manifest> {
    let recorded = read_manifest(manifest_path)?;
    if recorded.tool != TOOL {
        bail!("{} was not written by {TOOL}", manifest_path.display());
    }
    for (role, d) in &recorded.inputs {
        let now = sha256_file(&d.path).with_context(|| format!("input {role}"))?;
        if now != d.sha256 {
            bail!("input {role} ({}) changed since the manifest was written", d.path.display());
        }
    }
    let fresh = execute(&recorded.run, out)?;
    let differing: Vec<&str> = recorded
        .outputs
        .iter()
        .filter(|(name, digest)| fresh.outputs.get(*name) != Some(*digest))
        .map(|(name, _)| name.as_str())
        .collect();
    if !differing.is_empty() || fresh.outputs.len() != recorded.outputs.len() {
        bail!("rerun outputs differ from the manifest: {}", differing.join(", "));
    }
    Ok(fresh)
}

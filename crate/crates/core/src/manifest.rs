//! Run manifests: every stage output directory carries a
//! `run_manifest.json` recording what produced it, hashes of the inputs
//! it consumed, and a hash of its own payload. Downstream stages verify
//! the payload hash before consuming a directory, so a tampered or
//! half-written artifact fails fast instead of silently skewing results.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const RUN_MANIFEST_NAME: &str = "run_manifest.json";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("no {RUN_MANIFEST_NAME} in {0}")]
    MissingManifest(PathBuf),
    #[error("artifact hash mismatch in {dir}: manifest says {declared}, payload is {actual}")]
    HashMismatch { dir: PathBuf, declared: String, actual: String },
    #[error("output directory {0} is not empty (pass --force to overwrite)")]
    OutputNotEmpty(PathBuf),
}

/// A consumed artifact directory, pinned by payload hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRef {
    pub path: String,
    pub sha256: String,
}

/// Provenance record written next to every stage output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    /// Subcommand that produced the directory.
    pub command: String,
    /// Full config snapshot after flag overrides.
    pub config: serde_json::Value,
    pub seed: u64,
    pub inputs: Vec<InputRef>,
    /// Hash of every payload file in the directory (the manifest itself
    /// is excluded, so re-runs compare equal even though timestamps
    /// differ).
    pub output_sha256: String,
    pub created_unix_s: u64,
}

fn walk_sorted(dir: &Path, base: &Path, out: &mut Vec<(String, PathBuf)>) -> std::io::Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            walk_sorted(&path, base, out)?;
        } else {
            let rel = path.strip_prefix(base).unwrap().to_string_lossy().replace('\\', "/");
            if rel != RUN_MANIFEST_NAME {
                out.push((rel, path));
            }
        }
    }
    Ok(())
}

/// Hashes all payload files under `dir` (recursively, sorted by relative
/// path, `run_manifest.json` excluded) into one hex digest. Path names
/// and file lengths are folded in, so renames and truncations change the
/// digest too.
pub fn hash_dir(dir: &Path) -> Result<String, ManifestError> {
    let mut files = Vec::new();
    walk_sorted(dir, dir, &mut files)?;
    let mut hasher = Sha256::new();
    for (rel, path) in files {
        let bytes = fs::read(&path)?;
        hasher.update(rel.as_bytes());
        hasher.update([0u8]);
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn hash_file(path: &Path) -> Result<String, ManifestError> {
    let mut hasher = Sha256::new();
    hasher.update(fs::read(path)?);
    Ok(hex::encode(hasher.finalize()))
}

fn now_unix_s() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Hashes the payload already present in `dir` and writes the manifest
/// beside it. Call once, after the stage has written all outputs.
pub fn seal_dir(
    dir: &Path,
    command: &str,
    config: &impl Serialize,
    seed: u64,
    inputs: Vec<InputRef>,
) -> Result<RunManifest, ManifestError> {
    let manifest = RunManifest {
        tool_version: TOOL_VERSION.into(),
        command: command.into(),
        config: serde_json::to_value(config)?,
        seed,
        inputs,
        output_sha256: hash_dir(dir)?,
        created_unix_s: now_unix_s(),
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(dir.join(RUN_MANIFEST_NAME), json + "\n")?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest, ManifestError> {
    let path = dir.join(RUN_MANIFEST_NAME);
    if !path.exists() {
        return Err(ManifestError::MissingManifest(dir.to_path_buf()));
    }
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Re-hashes the payload and checks it against the sealed manifest.
/// Returns the manifest so callers can chain provenance.
pub fn verify_dir(dir: &Path) -> Result<RunManifest, ManifestError> {
    let manifest = read_manifest(dir)?;
    let actual = hash_dir(dir)?;
    if actual != manifest.output_sha256 {
        return Err(ManifestError::HashMismatch {
            dir: dir.to_path_buf(),
            declared: manifest.output_sha256,
            actual,
        });
    }
    Ok(manifest)
}

/// Verifies an upstream directory and converts it into an input pin for
/// the consuming stage's manifest.
pub fn input_ref(dir: &Path) -> Result<InputRef, ManifestError> {
    let manifest = verify_dir(dir)?;
    Ok(InputRef { path: dir.to_string_lossy().into_owned(), sha256: manifest.output_sha256 })
}

/// Stage outputs are immutable: an existing non-empty directory is an
/// error unless `force`, which clears it.
pub fn prepare_out_dir(dir: &Path, force: bool) -> Result<(), ManifestError> {
    if dir.exists() && fs::read_dir(dir)?.next().is_some() {
        if !force {
            return Err(ManifestError::OutputNotEmpty(dir.to_path_buf()));
        }
        fs::remove_dir_all(dir)?;
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

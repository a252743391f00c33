//! Run manifests: what was executed, on which inputs, producing which files.

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Written next to the outputs of `run`. The wall time is the only
/// non-reproducible field of any command output.
#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub tool_version: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<String>,
    pub wall_time_ms: u128,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn digest_file(path: &Path) -> std::io::Result<FileDigest> {
    let bytes = std::fs::read(path)?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

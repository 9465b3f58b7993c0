use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Hash of one input file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

impl InputDigest {
    pub fn of(role: &str, path: &Path) -> Result<Self> {
        Ok(Self {
            role: role.to_string(),
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
        })
    }
}

/// Provenance of one command invocation.
///
/// The id hashes the command, tool version, seed, configuration and input
/// contents. Paths and timings are recorded but do not enter the id, so the
/// same run in another directory gets the same id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub id: String,
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    #[serde(default)]
    pub epoch_seconds: Vec<f64>,
}

#[derive(Serialize)]
struct IdMaterial<'a> {
    command: &'a str,
    tool_version: &'a str,
    seed: u64,
    config: &'a serde_json::Value,
    inputs: Vec<(&'a str, &'a str)>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: &impl Serialize, inputs: Vec<InputDigest>) -> Result<Self> {
        let config = serde_json::to_value(config)?;
        let tool_version = env!("CARGO_PKG_VERSION").to_string();
        let material = IdMaterial {
            command,
            tool_version: &tool_version,
            seed,
            config: &config,
            inputs: inputs.iter().map(|i| (i.role.as_str(), i.sha256.as_str())).collect(),
        };
        let digest = Sha256::digest(serde_json::to_vec(&material)?);
        Ok(Self {
            id: hex::encode(&digest[..8]),
            command: command.to_string(),
            tool_version,
            seed,
            config,
            inputs,
            epoch_seconds: Vec::new(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = r.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

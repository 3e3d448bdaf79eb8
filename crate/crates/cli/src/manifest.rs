//! Run manifests.
//!
//! Every command that writes results records how they were produced: the
//! command line, the effective seed and settings, and a SHA-256 digest of
//! each input. Manifests carry no timestamps or host details, so rerunning
//! the same command on the same inputs reproduces the manifest byte for byte.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliResult, Context};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub args: Vec<String>,
    pub seed: u64,
    /// Input label to `sha256:<hex>`.
    pub inputs: BTreeMap<String, String>,
    pub settings: Value,
}

impl Manifest {
    pub fn new(command: &'static str, seed: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            tool: env!("CARGO_BIN_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            args: std::env::args().skip(1).collect(),
            seed,
            inputs: BTreeMap::new(),
            settings: Value::Null,
        }
    }

    pub fn input(&mut self, label: impl Into<String>, bytes: &[u8]) {
        self.inputs.insert(label.into(), digest(bytes));
    }
}

pub fn digest(bytes: &[u8]) -> String {
    let hash = Sha256::digest(bytes);
    let hex: String = hash.iter().map(|b| format!("{b:02x}")).collect();
    format!("sha256:{hex}")
}

/// Seed of the named substream of `seed`.
///
/// Each consumer of randomness (sampling, cropping, sweeps, training) draws
/// from its own stream, so adding one does not shift the others.
pub fn substream(seed: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 output is 32 bytes"))
}

pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("plain data serializes");
    text.push('\n');
    text
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    std::fs::write(path, contents).context(format_args!("cannot write {}", path.display()))
}

/// Write `manifest` merged with `extra` next to `out`.
pub fn write_sidecar(out: &Path, manifest: &Manifest, extra: Value) -> CliResult<()> {
    let mut doc = serde_json::to_value(manifest).expect("manifest serializes");
    if let (Value::Object(map), Value::Object(more)) = (&mut doc, extra) {
        map.extend(more);
    }
    write_file(&sidecar_path(out), to_json(&doc))
}

//! Run manifests embedded in every output file.
//!
//! A manifest records what produced an output: the command, its arguments,
//! hashes of every input read, the effective configuration, and the seed.
//! Identical manifests imply identical outputs, which is why the timestamp
//! is omitted exactly when a seed pins the run (seeded reruns must be
//! byte-identical).

use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

/// One consumed input file and its content hash.
#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Provenance block serialized into every output document.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: &'static str,
    pub argv: Vec<String>,
    pub version: &'static str,
    pub inputs: Vec<InputDigest>,
    /// Effective configuration after defaults and flag resolution.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

impl RunManifest {
    pub fn new(command: &'static str, seed: Option<u64>) -> Self {
        let timestamp = match seed {
            Some(_) => None,
            None => Some(chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)),
        };
        RunManifest {
            command,
            argv: std::env::args().skip(1).collect(),
            version: env!("CARGO_PKG_VERSION"),
            inputs: Vec::new(),
            config: None,
            seed,
            timestamp,
        }
    }

    /// Registers an input file's content hash.
    pub fn record_input(&mut self, path: &Path, bytes: &[u8]) {
        let mut hasher = Sha256::new();
        hasher.update(bytes);
        let digest = hasher.finalize();
        let mut sha256 = String::with_capacity(64);
        for byte in digest {
            use std::fmt::Write;
            write!(sha256, "{byte:02x}").expect("writing to a String cannot fail");
        }
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256,
        });
    }
}

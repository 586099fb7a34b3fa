//! Output directory bookkeeping: the resolved-config snapshot and a
//! `.meta.json` sidecar beside every artifact recording tool version,
//! config hash and input hashes.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config;

pub const SNAPSHOT_NAME: &str = "run_config.txt";

/// An error carrying its own machine-readable code.
#[derive(Debug)]
pub struct Coded {
    pub code: &'static str,
    pub message: String,
}

impl Coded {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl fmt::Display for Coded {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Coded {}

/// Code of the innermost recognized error in the chain.
pub fn error_code(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        if let Some(c) = cause.downcast_ref::<Coded>() {
            return c.code;
        }
        if let Some(c) = cause.downcast_ref::<shortcut_grammar::Error>() {
            return c.code();
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "E_IO";
        }
    }
    "E_RUNTIME"
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize)]
struct InputHash {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config_sha256: &'a str,
    inputs: &'a [InputHash],
    output_sha256: String,
}

/// One invocation's output directory.
pub struct Run {
    out: PathBuf,
    command: &'static str,
    config_sha256: String,
    inputs: Vec<InputHash>,
}

impl Run {
    /// Creates `out`, hashes `inputs` and writes the config snapshot.
    pub fn start(out: &Path, command: &'static str, args: &impl Serialize, inputs: &[&Path]) -> Result<Self> {
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let snapshot = config::snapshot(command, args)?;
        let mut inputs_hashed = Vec::new();
        for p in inputs {
            let bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            inputs_hashed.push(InputHash {
                path: p.display().to_string(),
                sha256: sha256_hex(&bytes),
            });
        }
        let run = Self {
            out: out.to_path_buf(),
            command,
            config_sha256: sha256_hex(snapshot.as_bytes()),
            inputs: inputs_hashed,
        };
        run.write(SNAPSHOT_NAME, snapshot.as_bytes())?;
        Ok(run)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Writes `name` and its sidecar.
    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.sidecar(&path)?;
        Ok(path)
    }

    /// Writes the sidecar of a file some library call already produced.
    pub fn sidecar(&self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let meta = Sidecar {
            tool: "shortcut",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            config_sha256: &self.config_sha256,
            inputs: &self.inputs,
            output_sha256: sha256_hex(&bytes),
        };
        let mut name = path.file_name().unwrap_or_default().to_os_string();
        name.push(".meta.json");
        let meta_path = path.with_file_name(name);
        let mut text = serde_json::to_string_pretty(&meta)?;
        text.push('\n');
        std::fs::write(&meta_path, text).with_context(|| format!("writing {}", meta_path.display()))?;
        Ok(())
    }
}

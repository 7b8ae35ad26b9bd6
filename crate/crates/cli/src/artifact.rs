use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Provenance stamped into every file a subcommand writes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    pub code_version: String,
}

impl Header {
    pub fn new(command: &str, cfg: &RunConfig) -> Self {
        Header {
            command: command.into(),
            seed: cfg.seed,
            config_hash: cfg.hash(),
            code_version: CODE_VERSION.into(),
        }
    }
}

/// JSON document with the provenance header beside the payload.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub header: Header,
    pub body: T,
}

pub fn write_json<T: Serialize>(path: &Path, header: &Header, body: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let doc = serde_json::json!({ "header": header, "body": body });
    let text = serde_json::to_string_pretty(&doc)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Artifact<T>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// JSON-lines log whose first line is the header.
pub struct JsonLog {
    out: fs::File,
}

impl JsonLog {
    pub fn create(path: &Path, header: &Header) -> Result<Self> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut log = JsonLog {
            out: fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
        };
        log.push(&serde_json::json!({ "header": header }))?;
        Ok(log)
    }

    pub fn push<T: Serialize>(&mut self, rec: &T) -> Result<()> {
        use std::io::Write;
        serde_json::to_writer(&mut self.out, rec)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }
}

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

use crate::config::PipelineConfig;
use crate::error::{io_err, CliError, Result};

pub const MANIFEST_FORMAT: &str = "mpq-manifest-v1";

#[derive(Debug, Serialize)]
struct Versions {
    mpq: &'static str,
    checkpoint: &'static str,
    integer_model: &'static str,
    ir: u32,
}

/// Enough to rerun the command: the full config, the seed and the hashes
/// of everything read and written.
#[derive(Debug, Serialize)]
struct Manifest<'a> {
    format: &'static str,
    command: &'a str,
    config_hash: String,
    seed: u64,
    versions: Versions,
    inputs: &'a BTreeMap<String, String>,
    outputs: &'a BTreeMap<String, String>,
    config: &'a PipelineConfig,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// One subcommand invocation: reads upstream artifacts from and writes
/// its own into the output directory.
pub struct Run {
    pub cfg: PipelineConfig,
    command: &'static str,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl Run {
    pub fn new(cfg: PipelineConfig, command: &'static str) -> Result<Self> {
        std::fs::create_dir_all(&cfg.out).map_err(io_err(format!("creating {}", cfg.out.display())))?;
        Ok(Self {
            cfg,
            command,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.cfg.out.join(name)
    }

    /// Checks that an upstream artifact exists and records its hash.
    pub fn require(&mut self, name: &str, producer: &'static str) -> Result<PathBuf> {
        let path = self.path(name);
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(CliError::MissingArtifact { path, producer })
            }
            Err(e) => return Err(io_err(format!("reading {}", path.display()))(e)),
        };
        self.inputs.insert(name.to_string(), sha256_hex(&bytes));
        Ok(path)
    }

    pub fn read_text(&mut self, name: &str, producer: &'static str) -> Result<String> {
        let path = self.require(name, producer)?;
        std::fs::read_to_string(&path).map_err(io_err(format!("reading {}", path.display())))
    }

    /// Records an input that lives outside the output directory.
    pub fn record_external(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).map_err(io_err(format!("reading {}", path.display())))?;
        self.inputs.insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(())
    }

    /// Writes through a temporary file in the same directory, then renames.
    pub fn write_with<F>(&mut self, name: &str, fill: F) -> Result<()>
    where
        F: FnOnce(&Path) -> Result<()>,
    {
        let target = self.path(name);
        let tmp = NamedTempFile::new_in(&self.cfg.out).map_err(io_err(format!("creating temp file for {name}")))?;
        fill(tmp.path())?;
        tmp.persist(&target)
            .map_err(|e| io_err(format!("renaming into {}", target.display()))(e.error))?;
        let bytes = std::fs::read(&target).map_err(io_err(format!("reading back {}", target.display())))?;
        if name.starts_with("manifest-") {
            return Ok(());
        }
        self.outputs.insert(name.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        self.write_with(name, |p| {
            let mut f = std::fs::File::create(p).map_err(io_err(format!("writing {name}")))?;
            f.write_all(bytes)
                .and_then(|_| f.sync_all())
                .map_err(io_err(format!("writing {name}")))
        })
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(mpq_core::Error::from)?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    /// Writes `manifest-<command>.json`. The config hash ignores the
    /// output directory so reruns elsewhere hash the same.
    pub fn finish(mut self) -> Result<PathBuf> {
        let mut hashed = self.cfg.clone();
        hashed.out = PathBuf::new();
        let inputs = std::mem::take(&mut self.inputs);
        let outputs = std::mem::take(&mut self.outputs);
        let manifest = Manifest {
            format: MANIFEST_FORMAT,
            command: self.command,
            config_hash: sha256_hex(hashed.canonical_json().as_bytes()),
            seed: self.cfg.seed,
            versions: Versions {
                mpq: env!("CARGO_PKG_VERSION"),
                checkpoint: mpq_core::nn::CHECKPOINT_FORMAT,
                integer_model: mpq_core::quant::INTEGER_MODEL_FORMAT,
                ir: mpq_core::qir::IR_VERSION,
            },
            inputs: &inputs,
            outputs: &outputs,
            config: &self.cfg,
        };
        let name = format!("manifest-{}.json", self.command);
        let cfg_json = serde_json::to_string_pretty(&manifest).map_err(mpq_core::Error::from)? + "\n";
        self.write_bytes(&name, cfg_json.as_bytes())?;
        Ok(self.path(&name))
    }
}

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

pub const MANIFEST: &str = "manifest.json";

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Output directory of one command, tracking what was read and written.
pub struct Output {
    dir: PathBuf,
    files: Vec<String>,
    inputs: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct Versions {
    regimefactor: &'static str,
    cli: &'static str,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config: &'a RunConfig,
    config_sha256: String,
    seed: u64,
    threads: usize,
    versions: Versions,
    /// SHA-256 of every input file, keyed by path as given.
    inputs: &'a BTreeMap<String, String>,
    outputs: &'a [String],
}

impl Output {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::invalid(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            inputs: BTreeMap::new(),
        })
    }

    pub fn record_input(&mut self, path: &Path) -> Result<(), CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::invalid(format!("cannot read {}: {e}", path.display())))?;
        self.inputs.insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents)
            .map_err(|e| CliError::invalid(format!("cannot write {}: {e}", path.display())))?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::invalid(e.to_string()))?;
        self.write(name, &(text + "\n"))
    }

    /// Writes `manifest.json`. The embedded config is a valid `--config` file
    /// that reproduces the run.
    pub fn finish(mut self, command: &str, config: &RunConfig) -> Result<(), CliError> {
        let canonical = serde_json::to_vec(config).map_err(|e| CliError::invalid(e.to_string()))?;
        let outputs = self.files.clone();
        let inputs = self.inputs.clone();
        let manifest = Manifest {
            command,
            config,
            config_sha256: sha256_hex(&canonical),
            seed: config.seed,
            threads: rayon::current_num_threads(),
            versions: Versions {
                regimefactor: regimefactor::VERSION,
                cli: env!("CARGO_PKG_VERSION"),
            },
            inputs: &inputs,
            outputs: &outputs,
        };
        self.write_json(MANIFEST, &manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}

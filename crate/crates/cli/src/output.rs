use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::LoadedConfig;
use crate::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct FileRecord {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_sha256: String,
    pub config_source: Option<String>,
    pub master_seed: u64,
    pub seeds: Vec<u64>,
    pub timestamp_unix: u64,
    pub files: Vec<FileRecord>,
}

/// Per-subcommand output directory that records everything it writes.
pub struct OutputDir {
    pub dir: PathBuf,
    svg: bool,
    files: Vec<FileRecord>,
}

impl OutputDir {
    /// `<root>/<command>`, where the root comes from the flag, then the
    /// environment, then the config.
    pub fn create(flag: Option<&Path>, loaded: &LoadedConfig, command: &str) -> Result<Self, CliError> {
        let root = flag
            .map(Path::to_path_buf)
            .or_else(|| std::env::var_os(crate::OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(&loaded.config.output.directory));
        let dir = root.join(command);
        std::fs::create_dir_all(&dir)
            .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", dir.display())))?;
        let svg = loaded
            .config
            .output
            .formats
            .iter()
            .any(|f| f.eq_ignore_ascii_case("svg"));
        Ok(Self {
            dir,
            svg,
            files: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents)
            .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))?;
        self.files.push(FileRecord {
            name: name.to_owned(),
            sha256: sha256_hex(contents.as_bytes()),
        });
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::runtime(e.to_string()))?;
        self.write(name, &(text + "\n"))
    }

    /// Written only when `svg` is among the configured formats.
    pub fn write_svg(&mut self, name: &str, render: impl FnOnce() -> String) -> Result<(), CliError> {
        if self.svg {
            self.write(name, &render())?;
        }
        Ok(())
    }

    pub fn finish(self, command: &str, loaded: &LoadedConfig, seeds: Vec<u64>) -> Result<PathBuf, CliError> {
        let manifest = Manifest {
            command: command.to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            config_sha256: sha256_hex(loaded.canonical().as_bytes()),
            config_source: loaded.source.as_ref().map(|p| p.display().to_string()),
            master_seed: loaded.config.noise.master_seed,
            seeds,
            timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            files: self.files,
        };
        let path = self.dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::runtime(e.to_string()))?;
        std::fs::write(&path, text + "\n")?;
        Ok(self.dir)
    }
}

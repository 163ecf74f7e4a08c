use std::path::{Path, PathBuf};
use std::time::SystemTime;

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::failure::Failure;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Debug, Serialize)]
pub struct FileRecord {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

/// Output directory of one command, recording every file it writes.
pub struct Output {
    dir: PathBuf,
    pub format: Format,
    files: Vec<FileRecord>,
    pub config: Option<Value>,
    pub seeds: Value,
    started: SystemTime,
}

pub const MANIFEST: &str = "manifest.json";

impl Output {
    pub fn new(dir: &Path, format: Format) -> Self {
        Self {
            dir: dir.to_path_buf(),
            format,
            files: Vec::new(),
            config: None,
            seeds: json!({}),
            started: SystemTime::now(),
        }
    }

    pub fn write(&mut self, name: &str, contents: &[u8]) -> Result<(), Failure> {
        std::fs::create_dir_all(&self.dir)?;
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
        self.files.retain(|f| f.path != name);
        self.files.push(FileRecord {
            path: name.to_string(),
            bytes: contents.len(),
            sha256: hex::encode(Sha256::digest(contents)),
        });
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<(), Failure> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Numeric(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Writes `stem.csv` or `stem.json` depending on the format flag.
    pub fn write_table<S: Serialize>(
        &mut self,
        stem: &str,
        csv: impl FnOnce() -> String,
        json: impl FnOnce() -> S,
    ) -> Result<(), Failure> {
        match self.format {
            Format::Csv => self.write(&format!("{stem}.csv"), csv().as_bytes()),
            Format::Json => self.write_json(&format!("{stem}.json"), &json()),
        }
    }

    pub fn files(&self) -> &[FileRecord] {
        &self.files
    }

    /// Writes the manifest; it lists every other file of the run.
    pub fn finish(
        &mut self,
        command: &str,
        threads: Option<usize>,
        outcome: &Result<(), Failure>,
    ) -> Result<PathBuf, Failure> {
        let (status, message) = match outcome {
            Ok(()) => ("ok", Value::Null),
            Err(f) => (f.status(), Value::String(f.to_string())),
        };
        let manifest = json!({
            "command": command,
            "status": status,
            "message": message,
            "tool_version": env!("CARGO_PKG_VERSION"),
            "config": self.config.clone().unwrap_or(Value::Null),
            "seeds": self.seeds,
            "parallel": rrde::parallel::is_parallel(),
            "threads": threads,
            "started_at": humantime::format_rfc3339_millis(self.started).to_string(),
            "finished_at": humantime::format_rfc3339_millis(SystemTime::now()).to_string(),
            "files": self.files,
        });
        std::fs::create_dir_all(&self.dir)?;
        let path = self.dir.join(MANIFEST);
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Failure::Numeric(e.to_string()))?;
        text.push('\n');
        std::fs::write(&path, text)?;
        Ok(path)
    }
}

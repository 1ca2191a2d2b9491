use std::fs;
use std::path::{Path, PathBuf};

use gbtd::io::{export_table, ExportFormat, Table};
use serde_json::{json, Value};

use crate::error::CliError;

/// Output directory that remembers every artifact written under it.
pub struct OutDir {
    root: PathBuf,
    artifacts: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root)
            .map_err(|e| CliError::Data(format!("{}: {e}", root.display())))?;
        Ok(Self {
            root: root.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Absolute path of `rel`, with its parent directory created.
    pub fn path(&self, rel: &str) -> Result<PathBuf, CliError> {
        let p = self.root.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)
                .map_err(|e| CliError::Data(format!("{}: {e}", parent.display())))?;
        }
        Ok(p)
    }

    pub fn record(&mut self, rel: impl Into<String>) {
        self.artifacts.push(rel.into());
    }

    pub fn table(&mut self, rel: &str, table: &Table) -> Result<(), CliError> {
        export_table(table, self.path(rel)?, ExportFormat::Csv)?;
        self.record(rel);
        Ok(())
    }

    /// Writes `manifest.json` listing the artifacts in sorted order.
    pub fn finish(mut self, command: &str, config: Value, results: Value) -> Result<(), CliError> {
        self.artifacts.sort();
        self.artifacts.dedup();
        let manifest = json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "config": config,
            "results": results,
            "artifacts": self.artifacts,
        });
        let path = self.root.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }
}

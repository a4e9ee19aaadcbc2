//! Config resolution: command-line flags override the TOML config file, which
//! overrides built-in defaults. Every run echoes the resolved config to a run
//! manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::CliError;

/// Parsed TOML config file: one table per subcommand, e.g. `[gen-dataset]`.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    path: Option<PathBuf>,
    table: toml::Table,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let table: toml::Table = text
            .parse()
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        Ok(Self {
            path: Some(path.to_owned()),
            table,
        })
    }

    fn section(&self, name: &str) -> Result<toml::Table, CliError> {
        match self.table.get(name) {
            None => Ok(toml::Table::new()),
            Some(toml::Value::Table(t)) => Ok(t.clone()),
            Some(_) => Err(CliError::Usage(format!(
                "config {}: [{name}] must be a table",
                self.path.as_deref().unwrap_or(Path::new("?")).display()
            ))),
        }
    }

    /// Layers `defaults`, the `[section]` table and the explicitly set flags,
    /// in increasing precedence, and deserializes the result.
    pub fn resolve<C>(&self, section: &str, flags: &[toml::Table]) -> Result<C, CliError>
    where
        C: Serialize + DeserializeOwned + Default,
    {
        let mut merged = to_table(&C::default())?;
        merged.extend(self.section(section)?);
        for layer in flags {
            merged.extend(layer.clone());
        }
        toml::Value::Table(merged)
            .try_into()
            .map_err(|e| CliError::Usage(format!("[{section}] {e}")))
    }
}

/// Serializes `value` to a TOML table; `None` fields are left out.
pub fn to_table<T: Serialize>(value: &T) -> Result<toml::Table, CliError> {
    match toml::Value::try_from(value) {
        Ok(toml::Value::Table(t)) => Ok(t),
        Ok(other) => Err(CliError::Usage(format!("expected a table, got {other}"))),
        Err(e) => Err(CliError::Usage(e.to_string())),
    }
}

/// Written next to every output as `run.json`.
#[derive(Debug, Serialize)]
pub struct RunManifest<'a, C: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub config: &'a C,
}

pub const RUN_MANIFEST_FILE: &str = "run.json";

pub fn run_manifest_json<C: Serialize>(command: &str, config: &C) -> String {
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        config,
    };
    serde_json::to_string_pretty(&manifest).expect("run manifest serializes")
}

/// Logs the resolved config and writes it to `<out>/run.json`.
pub fn record_run<C: Serialize>(command: &str, config: &C, out: &Path) -> Result<(), CliError> {
    let json = run_manifest_json(command, config);
    log::info!("{command} resolved config: {json}");
    fs::create_dir_all(out).map_err(CliError::io(out))?;
    let path = out.join(RUN_MANIFEST_FILE);
    fs::write(&path, json + "\n").map_err(CliError::io(&path))
}

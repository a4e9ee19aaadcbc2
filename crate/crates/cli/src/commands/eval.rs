use std::fs::{self, File};
use std::io::BufReader;
use std::path::PathBuf;

use glyphtext_core::metrics::{evaluate, read_pairs};
use serde::{Deserialize, Serialize};

use super::is_false;
use crate::cli::Parallelism;
use crate::config::record_run;
use crate::error::CliError;

pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, clap::Args, Serialize)]
pub struct Args {
    /// JSONL file of {id, pred: [...], gt: [...], prompt_chars}.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairs: Option<PathBuf>,
    /// Case-sensitive precision, recall and image accuracy.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    pub case_sensitive: bool,
    /// Also write report.json and run.json here.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub pairs: Option<PathBuf>,
    pub case_sensitive: bool,
    pub out: Option<PathBuf>,
    pub workers: usize,
    pub sequential: bool,
}

pub fn run(cfg: &Config) -> Result<(), CliError> {
    let path = cfg
        .pairs
        .as_deref()
        .ok_or_else(|| CliError::Usage("eval: --pairs is required (flag or config)".into()))?;
    let file = File::open(path).map_err(CliError::io(path))?;
    let pairs = read_pairs(BufReader::new(file))
        .map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))?;
    if pairs.is_empty() {
        return Err(CliError::Domain(format!(
            "{}: no pairs to score",
            path.display()
        )));
    }
    if let Some(p) = pairs.iter().find(|p| p.gt.is_empty()) {
        return Err(CliError::Domain(format!(
            "pair {:?} has an empty ground truth",
            p.id
        )));
    }
    match &cfg.out {
        Some(out) => record_run("eval", cfg, out)?,
        None => log::info!(
            "eval resolved config: {}",
            crate::config::run_manifest_json("eval", cfg)
        ),
    }
    let parallelism = Parallelism {
        workers: cfg.workers,
        sequential: cfg.sequential,
    };
    let report = parallelism.install(|exec| evaluate(&pairs, cfg.case_sensitive, exec));
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    if let Some(out) = &cfg.out {
        let p = out.join(REPORT_FILE);
        fs::write(&p, json.clone() + "\n").map_err(CliError::io(&p))?;
    }
    println!("{json}");
    Ok(())
}

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;

use glyphtext_core::align::{
    toy_documents, toy_sample_config, train_align, AlignCheckpoint, AlignData, AlignHyper,
    HardDenominator, HistoryRow, CHECKPOINT_VERSION,
};
use glyphtext_core::dataset::FontCodebook;
use serde::{Deserialize, Serialize};

use super::{is_false, require_out};
use crate::cli::Parallelism;
use crate::config::record_run;
use crate::error::CliError;

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, clap::Args, Serialize)]
pub struct Args {
    /// Synthetic training documents (128x128, up to 4 word boxes each).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_docs: Option<usize>,
    /// Held-out documents for retrieval and the perturbation probe.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heldout_docs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_temperature: Option<f64>,
    /// Hard negatives per box (0 disables the hard-negative loss).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g: Option<usize>,
    /// Embedding width D.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    /// ROIAlign output size S.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub roi_size: Option<usize>,
    /// Visual patch size in pixels (multiple of 4).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patch: Option<u32>,
    /// Images per SGD step.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Sum the hard-negative denominators over the negatives only.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    pub negatives_only: bool,
    /// Output directory (checkpoint.json, history.csv, summary.json, run.json).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub train_docs: usize,
    pub heldout_docs: usize,
    pub steps: usize,
    pub lr: f64,
    pub lr_temperature: f64,
    pub g: usize,
    pub dim: usize,
    pub roi_size: usize,
    pub patch: u32,
    pub batch: usize,
    pub seed: u64,
    pub negatives_only: bool,
    pub out: Option<PathBuf>,
    pub workers: usize,
    pub sequential: bool,
}

impl Default for Config {
    fn default() -> Self {
        let h = AlignHyper::toy();
        Self {
            train_docs: 256,
            heldout_docs: 40,
            steps: h.steps,
            lr: h.lr,
            lr_temperature: h.lr_temperature,
            g: h.g,
            dim: h.dim,
            roi_size: h.roi_size,
            patch: h.patch,
            batch: h.batch,
            seed: 0,
            negatives_only: false,
            out: None,
            workers: 0,
            sequential: false,
        }
    }
}

impl Config {
    pub fn hyper(&self) -> AlignHyper {
        AlignHyper {
            lr: self.lr,
            lr_temperature: self.lr_temperature,
            steps: self.steps,
            batch: self.batch,
            g: self.g,
            roi_size: self.roi_size,
            dim: self.dim,
            seed: self.seed,
            patch: self.patch,
            denominator: if self.negatives_only {
                HardDenominator::NegativesOnly
            } else {
                HardDenominator::IncludePositive
            },
            ..AlignHyper::toy()
        }
    }
}

#[derive(Debug, Serialize)]
struct Summary {
    train_boxes: usize,
    heldout_boxes: usize,
    retrieval_at_1: f64,
    probe_accuracy: f64,
    temperature: f64,
    final_loss_box: f64,
    final_loss_hard: f64,
}

pub fn run(cfg: &Config) -> Result<(), CliError> {
    let out = require_out(&cfg.out, "train-align")?;
    let hyper = cfg.hyper();
    hyper
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    if cfg.train_docs == 0 || cfg.heldout_docs == 0 {
        return Err(CliError::Usage(
            "train-docs and heldout-docs must be positive".into(),
        ));
    }
    record_run("train-align", cfg, out)?;

    let codebook = FontCodebook::standard(cfg.seed);
    let sample = toy_sample_config();
    let train =
        toy_documents(cfg.train_docs, &codebook, &sample, cfg.seed).map_err(CliError::domain)?;
    let held = toy_documents(
        cfg.heldout_docs,
        &codebook,
        &sample,
        cfg.seed.wrapping_add(1000),
    )
    .map_err(CliError::domain)?;
    let parallelism = Parallelism {
        workers: cfg.workers,
        sequential: cfg.sequential,
    };
    let data = parallelism
        .install(|exec| AlignData::build(&train, &held, &codebook, &hyper, hyper.g, exec))
        .map_err(CliError::domain)?;
    log::info!(
        "training on {} boxes, {} held-out boxes",
        data.train_box_count(),
        data.heldout.len()
    );
    let outcome = train_align(&data, &hyper).map_err(CliError::domain)?;

    let ckpt = AlignCheckpoint {
        version: CHECKPOINT_VERSION,
        hyper: hyper.clone(),
        params: outcome.params.clone(),
    };
    let path = out.join(CHECKPOINT_FILE);
    fs::write(&path, ckpt.to_json()).map_err(CliError::io(&path))?;
    let path = out.join(HISTORY_FILE);
    HistoryRow::write_csv(
        &outcome.history,
        BufWriter::new(File::create(&path).map_err(CliError::io(&path))?),
    )
    .map_err(CliError::io(&path))?;

    let last = outcome.history.last();
    let summary = Summary {
        train_boxes: data.train_box_count(),
        heldout_boxes: data.heldout.len().min(hyper.retrieval_batch),
        retrieval_at_1: outcome.retrieval,
        probe_accuracy: outcome.probe_accuracy,
        temperature: outcome.params.temperature(),
        final_loss_box: last.map_or(f64::NAN, |r| r.loss_box),
        final_loss_hard: last.map_or(f64::NAN, |r| r.loss_hard),
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    let path = out.join(SUMMARY_FILE);
    fs::write(&path, json.clone() + "\n").map_err(CliError::io(&path))?;
    println!("{json}");
    Ok(())
}

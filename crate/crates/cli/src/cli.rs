use std::path::PathBuf;

use clap::{Parser, Subcommand};
use glyphtext_core::exec::Exec;
use serde::{Deserialize, Serialize};

use crate::commands::{augment, eval, gen_dataset, mask_dump, sdedit_demo, train_align};

#[derive(Debug, Parser)]
#[command(
    name = "glyphtext",
    version,
    about = "Synthetic glyph-text data, box-level alignment, region attention masks, region SDEdit and OCR metrics"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// TOML config file with one table per subcommand, e.g. [gen-dataset].
    /// Flags override the file; the file overrides built-in defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Worker threads for data-parallel stages (0 = all cores).
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,

    /// Run every data-parallel stage on the calling thread.
    #[arg(long, global = true)]
    pub sequential: bool,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    /// Only log errors.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic glyph-text dataset (manifest, codebook, PPM rasters).
    GenDataset(gen_dataset::Args),
    /// Print or render glyph-augmented hard negatives.
    Augment(augment::Args),
    /// Train the toy box-level alignment model and write a checkpoint.
    TrainAlign(train_align::Args),
    /// Build a region-wise cross-attention mask and dump it as PBM + JSON.
    MaskDump(mask_dump::Args),
    /// Run region-wise SDEdit with the toy denoiser and write snapshots.
    SdeditDemo(sdedit_demo::Args),
    /// Score OCR predictions against ground truth.
    Eval(eval::Args),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenDataset(_) => "gen-dataset",
            Command::Augment(_) => "augment",
            Command::TrainAlign(_) => "train-align",
            Command::MaskDump(_) => "mask-dump",
            Command::SdeditDemo(_) => "sdedit-demo",
            Command::Eval(_) => "eval",
        }
    }
}

/// The global flags that take part in config resolution.
#[derive(Debug, Serialize)]
pub struct GlobalFlags {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub sequential: bool,
}

/// Parallelism settings shared by every subcommand config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Parallelism {
    pub workers: usize,
    pub sequential: bool,
}

impl Parallelism {
    pub fn exec(&self) -> Exec {
        if self.sequential {
            Exec::Sequential
        } else {
            Exec::Parallel
        }
    }

    /// Runs `op` with the configured worker pool installed.
    pub fn install<R: Send>(&self, op: impl FnOnce(Exec) -> R + Send) -> R {
        let exec = self.exec();
        exec.with_workers(self.workers, move || op(exec))
    }
}

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use glyphtext_core::dataset::{
    generate_dataset, Corpus, DatasetStats, GenerateConfig, SampleConfig, Split, SplitMix,
};
use serde::{Deserialize, Serialize};

use super::{is_false, require_out};
use crate::cli::Parallelism;
use crate::config::record_run;
use crate::error::CliError;

#[derive(Debug, clap::Args, Serialize)]
pub struct Args {
    /// Number of records.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Output directory (manifest.jsonl, codebook.json, images/, run.json).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Whitespace-separated word list; the bundled corpus when absent.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub width: Option<u32>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub height: Option<u32>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_boxes: Option<usize>,
    /// Relative weight of word-split records.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub word_weight: Option<f64>,
    /// Relative weight of sentence-split records.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sentence_weight: Option<f64>,
    /// Relative weight of paragraph-split records.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paragraph_weight: Option<f64>,
    /// Paragraph records only (sets the split weights to 0/0/1).
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    pub paragraph_tier: bool,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub font_tokens: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub color_tokens: Option<usize>,
    /// Codebook embedding width.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub emb_dim: Option<usize>,
    /// Write the manifest and codebook only.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    pub no_images: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub count: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub width: u32,
    pub height: u32,
    pub max_boxes: usize,
    pub word_weight: f64,
    pub sentence_weight: f64,
    pub paragraph_weight: f64,
    pub paragraph_tier: bool,
    pub font_tokens: usize,
    pub color_tokens: usize,
    pub emb_dim: usize,
    pub no_images: bool,
    pub workers: usize,
    pub sequential: bool,
}

impl Default for Config {
    fn default() -> Self {
        let gen = GenerateConfig::default();
        Self {
            count: gen.count,
            seed: gen.seed,
            out: None,
            corpus: None,
            width: gen.sample.width,
            height: gen.sample.height,
            max_boxes: gen.sample.max_boxes,
            word_weight: gen.mix.word,
            sentence_weight: gen.mix.sentence,
            paragraph_weight: gen.mix.paragraph,
            paragraph_tier: false,
            font_tokens: gen.font_tokens,
            color_tokens: gen.color_tokens,
            emb_dim: gen.emb_dim,
            no_images: false,
            workers: 0,
            sequential: false,
        }
    }
}

impl Config {
    pub fn generate_config(&self) -> GenerateConfig {
        let mix = if self.paragraph_tier {
            SplitMix::PARAGRAPH_TIER
        } else {
            SplitMix {
                word: self.word_weight,
                sentence: self.sentence_weight,
                paragraph: self.paragraph_weight,
            }
        };
        GenerateConfig {
            count: self.count,
            seed: self.seed,
            mix,
            sample: SampleConfig {
                width: self.width,
                height: self.height,
                max_boxes: self.max_boxes,
                ..SampleConfig::default()
            },
            font_tokens: self.font_tokens,
            color_tokens: self.color_tokens,
            emb_dim: self.emb_dim,
            skip_images: self.no_images,
        }
    }
}

pub const STATS_FILE: &str = "stats.json";

#[derive(Debug, Serialize)]
struct Summary {
    manifest: PathBuf,
    records: usize,
    records_per_split: BTreeMap<Split, usize>,
    mean_chars_per_box: BTreeMap<Split, f64>,
    mean_words_per_box: BTreeMap<Split, f64>,
}

pub fn run(cfg: &Config) -> Result<(), CliError> {
    let out = require_out(&cfg.out, "gen-dataset")?;
    let gen = cfg.generate_config();
    gen.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if cfg.max_boxes == 0 || cfg.width == 0 || cfg.height == 0 {
        return Err(CliError::Usage(
            "width, height and max-boxes must be positive".into(),
        ));
    }
    let corpus = match &cfg.corpus {
        None => Corpus::default(),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(CliError::io(path))?;
            Corpus::from_text(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
    };
    record_run("gen-dataset", cfg, out)?;
    let parallelism = Parallelism {
        workers: cfg.workers,
        sequential: cfg.sequential,
    };
    let manifest = parallelism
        .install(|exec| generate_dataset(&gen, &corpus, out, exec))
        .map_err(CliError::domain)?;
    let stats = DatasetStats::collect(&manifest.records);
    let stats_path = out.join(STATS_FILE);
    let stats_json = serde_json::to_string_pretty(&stats).expect("stats serialize");
    fs::write(&stats_path, stats_json + "\n").map_err(CliError::io(&stats_path))?;
    let summary = Summary {
        manifest: manifest.path.clone(),
        records: manifest.records.len(),
        records_per_split: stats.records.clone(),
        mean_chars_per_box: Split::ALL
            .iter()
            .map(|&s| (s, stats.mean_chars(s)))
            .collect(),
        mean_words_per_box: Split::ALL
            .iter()
            .map(|&s| (s, stats.mean_words(s)))
            .collect(),
    };
    println!(
        "{}",
        serde_json::to_string(&summary).expect("summary serializes")
    );
    Ok(())
}

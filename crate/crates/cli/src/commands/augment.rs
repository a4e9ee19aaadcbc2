use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use glyphtext_core::augment::{
    augment_text, gen_hard_negatives, gen_hard_negatives_fitting, AugmentStrategy,
};
use glyphtext_core::dataset::{read_manifest, FontCodebook, CODEBOOK_FILE};
use glyphtext_core::render::{rasterize, validate_text, Align, BBox, StyleLookup, TextBox};
use glyphtext_core::rng::stream;
use serde::{Deserialize, Serialize};

use super::{is_false, require_out};
use crate::config::record_run;
use crate::error::CliError;

pub const NEGATIVES_FILE: &str = "negatives.jsonl";

#[derive(Debug, clap::Args, Serialize)]
pub struct Args {
    /// Augment this text and print JSON lines to stdout.
    #[arg(long, conflicts_with = "manifest")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    /// One strategy (e.g. char-replace, word-drop); otherwise strategies are
    /// drawn uniformly among the applicable ones.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strategy: Option<String>,
    /// Negatives per box.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Dataset manifest whose boxes get augmented; writes under --out.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// Number of leading manifest records to augment.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Skip the PPM previews of the augmented records.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    pub no_previews: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub text: Option<String>,
    pub strategy: Option<String>,
    pub g: usize,
    pub seed: u64,
    pub manifest: Option<PathBuf>,
    pub limit: usize,
    pub out: Option<PathBuf>,
    pub no_previews: bool,
    pub workers: usize,
    pub sequential: bool,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            text: None,
            strategy: None,
            g: 16,
            seed: 0,
            manifest: None,
            limit: 8,
            out: None,
            no_previews: false,
            workers: 0,
            sequential: false,
        }
    }
}

/// One line of `negatives.jsonl`.
#[derive(Debug, Serialize, Deserialize)]
pub struct NegativeLine {
    /// `<record id>#<box index>`
    pub anchor_id: String,
    pub record_id: String,
    pub box_index: usize,
    pub negative_index: usize,
    pub strategy: String,
    pub text_box: TextBox,
}

#[derive(Debug, Serialize)]
struct TextLine<'a> {
    strategy: String,
    text: &'a str,
}

fn parse_strategy(name: &str) -> Result<AugmentStrategy, CliError> {
    AugmentStrategy::parse(name).ok_or_else(|| {
        let all: Vec<String> = AugmentStrategy::ALL.iter().map(|s| s.to_string()).collect();
        CliError::Usage(format!(
            "unknown strategy {name:?}; expected one of {}",
            all.join(", ")
        ))
    })
}

pub fn run(cfg: &Config) -> Result<(), CliError> {
    if cfg.g == 0 {
        return Err(CliError::Usage("augment: --g must be at least 1".into()));
    }
    let strategy = cfg.strategy.as_deref().map(parse_strategy).transpose()?;
    match (&cfg.text, &cfg.manifest) {
        (Some(text), None) => run_text(cfg, text, strategy),
        (None, Some(manifest)) => {
            if strategy.is_some() {
                return Err(CliError::Usage(
                    "augment: --strategy applies to --text only".into(),
                ));
            }
            let out = require_out(&cfg.out, "augment")?;
            run_manifest(cfg, manifest, out)
        }
        _ => Err(CliError::Usage(
            "augment: give exactly one of --text or --manifest".into(),
        )),
    }
}

fn run_text(cfg: &Config, text: &str, strategy: Option<AugmentStrategy>) -> Result<(), CliError> {
    validate_text(text).map_err(|e| CliError::Usage(e.to_string()))?;
    log::info!(
        "augment resolved config: {}",
        crate::config::run_manifest_json("augment", cfg)
    );
    let mut rng = stream(cfg.seed, &[0]);
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    let mut emit = |strategy: AugmentStrategy, text: &str| {
        let line = TextLine {
            strategy: strategy.to_string(),
            text,
        };
        writeln!(
            w,
            "{}",
            serde_json::to_string(&line).expect("line serializes")
        )
        .map_err(CliError::io(Path::new("<stdout>")))
    };
    match strategy {
        Some(s) => {
            for _ in 0..cfg.g {
                let t = augment_text(text, s, &mut rng).map_err(CliError::domain)?;
                emit(s, &t)?;
            }
        }
        None => {
            let anchor = TextBox {
                bbox: BBox::new(0, 0, 1, 1),
                text: text.to_owned(),
                font_id: 0,
                color_id: 0,
                align: Align::Left,
            };
            let set = gen_hard_negatives(&anchor, cfg.g, &mut rng).map_err(CliError::domain)?;
            for n in &set.negatives {
                emit(n.strategy, &n.text_box.text)?;
            }
        }
    }
    Ok(())
}

fn run_manifest(cfg: &Config, manifest: &Path, out: &Path) -> Result<(), CliError> {
    let records = read_manifest(manifest)
        .map_err(|e| CliError::Domain(format!("{}: {e}", manifest.display())))?;
    let root = manifest.parent().unwrap_or(Path::new("."));
    let cb_path = root.join(CODEBOOK_FILE);
    let cb_text = fs::read_to_string(&cb_path).map_err(CliError::io(&cb_path))?;
    let codebook = FontCodebook::from_json(&cb_text)
        .map_err(|e| CliError::Domain(format!("{}: {e}", cb_path.display())))?;
    record_run("augment", cfg, out)?;
    if !cfg.no_previews {
        let dir = out.join("previews");
        fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
    }

    let path = out.join(NEGATIVES_FILE);
    let mut w = BufWriter::new(File::create(&path).map_err(CliError::io(&path))?);
    let mut lines = 0usize;
    for (r, rec) in records.iter().take(cfg.limit).enumerate() {
        let doc = rec.document();
        for (k, anchor) in rec.boxes.iter().enumerate() {
            let atlas = codebook.font(anchor.font_id).ok_or_else(|| {
                CliError::Domain(format!(
                    "record {}: unknown font id {}",
                    rec.id, anchor.font_id
                ))
            })?;
            let mut rng = stream(cfg.seed, &[r as u64, k as u64]);
            let set = match gen_hard_negatives_fitting(anchor, cfg.g, atlas, &mut rng) {
                Ok(set) => set,
                Err(e) => {
                    log::warn!("record {} box {k}: {e}; skipped", rec.id);
                    continue;
                }
            };
            for (j, neg) in set.negatives.iter().enumerate() {
                let line = NegativeLine {
                    anchor_id: format!("{}#{k}", rec.id),
                    record_id: rec.id.clone(),
                    box_index: k,
                    negative_index: j,
                    strategy: neg.strategy.to_string(),
                    text_box: neg.text_box.clone(),
                };
                serde_json::to_writer(&mut w, &line).expect("line serializes");
                w.write_all(b"\n").map_err(CliError::io(&path))?;
                lines += 1;
                if !cfg.no_previews {
                    let mut variant = doc.clone();
                    variant.boxes[k] = neg.text_box.clone();
                    let img = rasterize(&variant, &codebook).map_err(CliError::domain)?;
                    let p = out
                        .join("previews")
                        .join(format!("{}-b{k}-n{j}.ppm", rec.id));
                    img.write_ppm(BufWriter::new(File::create(&p).map_err(CliError::io(&p))?))
                        .map_err(CliError::io(&p))?;
                }
            }
        }
    }
    w.flush().map_err(CliError::io(&path))?;
    println!(
        "{}",
        serde_json::json!({ "negatives": path, "lines": lines })
    );
    Ok(())
}

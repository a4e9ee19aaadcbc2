use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use glyphtext_core::dataset::read_manifest;
use glyphtext_core::image::write_pbm;
use glyphtext_core::region_attn::{assign_pixels, build_attention_mask, TokenGrouping};
use glyphtext_core::render::BBox;
use serde::{Deserialize, Serialize};

use super::require_out;
use crate::config::record_run;
use crate::error::CliError;

pub const MASK_PBM_FILE: &str = "mask.pbm";
pub const ASSIGNMENT_PBM_FILE: &str = "assignment.pbm";
pub const MASK_JSON_FILE: &str = "mask.json";

fn parse_box(s: &str) -> Result<BBox, String> {
    let parts: Vec<u32> = s
        .split(',')
        .map(|p| p.trim().parse::<u32>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [x, y, w, h] => Ok(BBox::new(x, y, w, h)),
        _ => Err(format!("expected x,y,w,h, got {s:?}")),
    }
}

#[derive(Debug, clap::Args, Serialize)]
pub struct Args {
    /// Query grid rows.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_rows: Option<usize>,
    /// Query grid columns.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_cols: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub canvas_width: Option<u32>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub canvas_height: Option<u32>,
    /// Text box as x,y,w,h in canvas pixels; repeatable.
    #[arg(long = "box", value_parser = parse_box, value_name = "X,Y,W,H")]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub boxes: Vec<BBox>,
    /// Global prompt tokens (group 0).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub global_tokens: Option<usize>,
    /// Glyph tokens per explicit --box.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tokens_per_box: Option<usize>,
    /// Take canvas and boxes from a dataset record instead (with --record).
    #[arg(long, conflicts_with = "boxes")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[arg(long, requires = "manifest")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record: Option<String>,
    /// Output directory (mask.pbm, assignment.pbm, mask.json, run.json).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub canvas_width: u32,
    pub canvas_height: u32,
    pub boxes: Vec<BBox>,
    pub global_tokens: usize,
    pub tokens_per_box: usize,
    pub manifest: Option<PathBuf>,
    pub record: Option<String>,
    pub out: Option<PathBuf>,
    pub workers: usize,
    pub sequential: bool,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            grid_rows: 16,
            grid_cols: 16,
            canvas_width: 128,
            canvas_height: 128,
            boxes: Vec::new(),
            global_tokens: 8,
            tokens_per_box: 4,
            manifest: None,
            record: None,
            out: None,
            workers: 0,
            sequential: false,
        }
    }
}

/// The summary written to `mask.json`.
#[derive(Debug, Serialize, Deserialize)]
pub struct MaskSummary {
    #[serde(rename = "P")]
    pub pixels: usize,
    #[serde(rename = "T")]
    pub tokens: usize,
    /// Number of groups, the global group included.
    pub groups: usize,
    pub rows_ok: bool,
    pub grid: [usize; 2],
    /// Query cells per group, global first.
    pub cells_per_group: Vec<usize>,
    /// Tokens per group, global first.
    pub tokens_per_group: Vec<usize>,
}

/// Canvas size, boxes and per-box token counts.
type Scene = ((u32, u32), Vec<BBox>, Vec<usize>);

/// The scene from flags or a dataset record. Record boxes get one token per
/// text byte plus the color and font tokens.
fn scene(cfg: &Config) -> Result<Scene, CliError> {
    match (&cfg.manifest, &cfg.record) {
        (Some(manifest), Some(id)) => {
            let records = read_manifest(manifest)
                .map_err(|e| CliError::Domain(format!("{}: {e}", manifest.display())))?;
            let rec = records.iter().find(|r| &r.id == id).ok_or_else(|| {
                CliError::Domain(format!("record {id:?} not in {}", manifest.display()))
            })?;
            Ok((
                (rec.width, rec.height),
                rec.boxes.iter().map(|b| b.bbox).collect(),
                rec.boxes.iter().map(|b| b.text.len() + 2).collect(),
            ))
        }
        (Some(_), None) => Err(CliError::Usage(
            "mask-dump: --manifest needs --record".into(),
        )),
        (None, _) => {
            let (w, h) = (cfg.canvas_width, cfg.canvas_height);
            if let Some(b) = cfg
                .boxes
                .iter()
                .find(|b| !b.fits_in(w, h) || b.w == 0 || b.h == 0)
            {
                return Err(CliError::Usage(format!(
                    "box {b:?} is empty or exceeds the {w}x{h} canvas"
                )));
            }
            if cfg.tokens_per_box == 0 && !cfg.boxes.is_empty() {
                return Err(CliError::Usage(
                    "mask-dump: every box needs at least one token".into(),
                ));
            }
            Ok((
                (w, h),
                cfg.boxes.clone(),
                vec![cfg.tokens_per_box; cfg.boxes.len()],
            ))
        }
    }
}

pub fn run(cfg: &Config) -> Result<(), CliError> {
    let out = require_out(&cfg.out, "mask-dump")?;
    if cfg.grid_rows == 0 || cfg.grid_cols == 0 || cfg.canvas_width == 0 || cfg.canvas_height == 0 {
        return Err(CliError::Usage(
            "grid and canvas dimensions must be positive".into(),
        ));
    }
    if cfg.global_tokens == 0 {
        return Err(CliError::Usage(
            "mask-dump: at least one global token is required".into(),
        ));
    }
    let (canvas, boxes, per_box) = scene(cfg)?;
    record_run("mask-dump", cfg, out)?;

    let pa = assign_pixels((cfg.grid_rows, cfg.grid_cols), canvas, &boxes);
    let tg = TokenGrouping::from_counts(cfg.global_tokens, &per_box).map_err(CliError::domain)?;
    let mask = build_attention_mask(&pa, &tg).map_err(CliError::domain)?;

    write_bits(
        &out.join(MASK_PBM_FILE),
        mask.tokens,
        mask.pixels,
        &mask.allowed,
    )?;
    let in_box: Vec<bool> = pa.groups.iter().map(|&g| g != 0).collect();
    write_bits(&out.join(ASSIGNMENT_PBM_FILE), pa.cols, pa.rows, &in_box)?;

    let mut cells_per_group = vec![0; boxes.len() + 1];
    for &g in &pa.groups {
        cells_per_group[g] += 1;
    }
    let mut tokens_per_group = vec![0; boxes.len() + 1];
    for &g in &tg.groups {
        tokens_per_group[g] += 1;
    }
    let summary = MaskSummary {
        pixels: mask.pixels,
        tokens: mask.tokens,
        groups: boxes.len() + 1,
        rows_ok: mask.rows_ok(),
        grid: [pa.rows, pa.cols],
        cells_per_group,
        tokens_per_group,
    };
    let json = serde_json::to_string(&summary).expect("summary serializes");
    let path = out.join(MASK_JSON_FILE);
    fs::write(&path, json.clone() + "\n").map_err(CliError::io(&path))?;
    println!("{json}");
    Ok(())
}

fn write_bits(path: &Path, width: usize, height: usize, bits: &[bool]) -> Result<(), CliError> {
    let f = File::create(path).map_err(CliError::io(path))?;
    write_pbm(BufWriter::new(f), width, height, bits).map_err(CliError::io(path))
}

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::image::Rgb;
use crate::render::{CodebookKind, FontAtlas, FontStyle, StyleLookup};
use crate::rng::stream;

pub const DEFAULT_FONT_TOKENS: usize = 512;
pub const DEFAULT_COLOR_TOKENS: usize = 100;
pub const DEFAULT_EMB_DIM: usize = 32;

/// Number of distinct programmatic faces; font tokens cycle through them.
pub const FONT_VARIANTS: usize = 16;

/// Style of variant `v`: cell scale 1-2, optional bold, italic skew 0-3.
pub fn variant_style(v: usize) -> FontStyle {
    let v = v % FONT_VARIANTS;
    FontStyle {
        cell_scale: 1 + (v / 8) as u32,
        bold: v / 4 % 2 == 1,
        italic_skew: (v % 4) as u32,
    }
}

/// Fixed palette: golden-ratio hue walk at three brightness levels. Never
/// black, pairwise distinct.
pub fn palette(n: usize) -> Vec<Rgb> {
    let mut out: Vec<Rgb> = Vec::with_capacity(n);
    let mut k = 0usize;
    while out.len() < n {
        let hue = (k as f64 * 0.618_033_988_749_895).fract();
        let (sat, val) = [(0.85, 1.0), (0.55, 0.9), (1.0, 0.7)][k % 3];
        let rgb = hsv_to_rgb(hue, sat, val);
        if !out.contains(&rgb) && rgb != Rgb::BLACK {
            out.push(rgb);
        }
        k += 1;
    }
    out
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> Rgb {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - f * s), v * (1.0 - (1.0 - f) * s));
    let (r, g, b) = match i as i64 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    let c = |x: f64| (x * 255.0).round().clamp(0.0, 255.0) as u8;
    Rgb([c(r), c(g), c(b)])
}

/// Token tables for `[font-type-k]` and `[font-color-k]` plus one global
/// embedding vector per token.
#[derive(Debug, Clone)]
pub struct FontCodebook {
    fonts: Vec<FontAtlas>,
    colors: Vec<Rgb>,
    font_emb: Vec<Vec<f64>>,
    color_emb: Vec<Vec<f64>>,
    emb_dim: usize,
    seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FontEntry {
    pub token: String,
    #[serde(flatten)]
    pub style: FontStyle,
}

/// On-disk form. Embeddings are regenerated from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookFile {
    pub fonts: Vec<FontEntry>,
    pub colors: Vec<Rgb>,
    pub emb_dim: usize,
    pub seed: u64,
}

const FONT_STREAM: u64 = 1;
const COLOR_STREAM: u64 = 2;

fn embedding(seed: u64, kind: u64, k: usize, dim: usize) -> Vec<f64> {
    let mut rng = stream(seed, &[kind, k as u64]);
    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

impl FontCodebook {
    pub fn from_parts(styles: &[FontStyle], colors: Vec<Rgb>, emb_dim: usize, seed: u64) -> Self {
        let mut variants: Vec<(FontStyle, FontAtlas)> = Vec::new();
        let fonts = styles
            .iter()
            .enumerate()
            .map(
                |(k, style)| match variants.iter().find(|(s, _)| s == style) {
                    Some((_, atlas)) => atlas.with_face_id(k),
                    None => {
                        let atlas = FontAtlas::styled(k, *style);
                        variants.push((*style, atlas.clone()));
                        atlas
                    }
                },
            )
            .collect::<Vec<_>>();
        let font_emb = (0..fonts.len())
            .map(|k| embedding(seed, FONT_STREAM, k, emb_dim))
            .collect();
        let color_emb = (0..colors.len())
            .map(|k| embedding(seed, COLOR_STREAM, k, emb_dim))
            .collect();
        Self {
            fonts,
            colors,
            font_emb,
            color_emb,
            emb_dim,
            seed,
        }
    }

    pub fn build(n_fonts: usize, n_colors: usize, emb_dim: usize, seed: u64) -> Self {
        let styles: Vec<FontStyle> = (0..n_fonts).map(variant_style).collect();
        Self::from_parts(&styles, palette(n_colors), emb_dim, seed)
    }

    /// 512 font tokens, 100 colors, 32-dimensional embeddings.
    pub fn standard(seed: u64) -> Self {
        Self::build(
            DEFAULT_FONT_TOKENS,
            DEFAULT_COLOR_TOKENS,
            DEFAULT_EMB_DIM,
            seed,
        )
    }

    pub fn font_count(&self) -> usize {
        self.fonts.len()
    }

    pub fn color_count(&self) -> usize {
        self.colors.len()
    }

    pub fn emb_dim(&self) -> usize {
        self.emb_dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn font_embedding(&self, k: usize) -> Result<&[f64], DatasetError> {
        self.font_emb
            .get(k)
            .map(Vec::as_slice)
            .ok_or(DatasetError::UnknownCodebookId {
                kind: CodebookKind::Font,
                id: k,
            })
    }

    pub fn color_embedding(&self, k: usize) -> Result<&[f64], DatasetError> {
        self.color_emb
            .get(k)
            .map(Vec::as_slice)
            .ok_or(DatasetError::UnknownCodebookId {
                kind: CodebookKind::Color,
                id: k,
            })
    }

    pub fn to_file(&self) -> CodebookFile {
        CodebookFile {
            fonts: self
                .fonts
                .iter()
                .enumerate()
                .map(|(k, a)| FontEntry {
                    token: font_token(k),
                    style: a.style(),
                })
                .collect(),
            colors: self.colors.clone(),
            emb_dim: self.emb_dim,
            seed: self.seed,
        }
    }

    pub fn from_file(file: &CodebookFile) -> Result<Self, DatasetError> {
        for (k, entry) in file.fonts.iter().enumerate() {
            if entry.token != font_token(k) {
                return Err(DatasetError::Codebook(format!(
                    "font entry {k} has token {:?}",
                    entry.token
                )));
            }
            if entry.style.cell_scale == 0
                || 8 * entry.style.cell_scale + 1 + entry.style.italic_skew > 32
            {
                return Err(DatasetError::Codebook(format!(
                    "font entry {k} has an unusable style"
                )));
            }
        }
        let styles: Vec<FontStyle> = file.fonts.iter().map(|e| e.style).collect();
        Ok(Self::from_parts(
            &styles,
            file.colors.clone(),
            file.emb_dim,
            file.seed,
        ))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("codebook serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, DatasetError> {
        let file: CodebookFile =
            serde_json::from_str(s).map_err(|e| DatasetError::Codebook(e.to_string()))?;
        Self::from_file(&file)
    }
}

pub fn font_token(k: usize) -> String {
    format!("[font-type-{k}]")
}

pub fn color_token(k: usize) -> String {
    format!("[font-color-{k}]")
}

impl StyleLookup for FontCodebook {
    fn font(&self, font_id: usize) -> Option<&FontAtlas> {
        self.fonts.get(font_id)
    }

    fn color(&self, color_id: usize) -> Option<Rgb> {
        self.colors.get(color_id).copied()
    }
}

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetError, FontCodebook};
use crate::image::Rgb;
use crate::render::{
    greedy_wrap, is_printable, layout_box, line_spacing, Align, BBox, GlyphDocument, StyleLookup,
    TextBox,
};
use crate::rng::GenRng;

/// Word list the random box texts are drawn from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    words: Vec<String>,
}

const DEFAULT_WORDS: &str = include_str!("words.txt");

impl Corpus {
    /// Whitespace-separated words; each must be printable ASCII.
    pub fn from_text(text: &str) -> Result<Self, DatasetError> {
        let words: Vec<String> = text.split_whitespace().map(str::to_owned).collect();
        if words.is_empty() {
            return Err(DatasetError::EmptyCorpus);
        }
        if let Some(bad) = words.iter().find(|w| !w.chars().all(is_printable)) {
            return Err(DatasetError::BadCorpusWord(bad.clone()));
        }
        Ok(Self { words })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    fn pick<'a>(&'a self, rng: &mut GenRng) -> &'a str {
        &self.words[rng.gen_range(0..self.words.len())]
    }
}

impl Default for Corpus {
    fn default() -> Self {
        Self::from_text(DEFAULT_WORDS).expect("bundled corpus is valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Word,
    Sentence,
    Paragraph,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Word, Split::Sentence, Split::Paragraph];
}

/// A paragraph holds more than 10 words or more than 100 characters.
pub fn is_paragraph_text(text: &str) -> bool {
    text.len() > 100 || text.split_whitespace().count() > 10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleConfig {
    pub width: u32,
    pub height: u32,
    pub max_boxes: usize,
    /// Rejection budget per document.
    pub max_attempts: usize,
    /// Only the first `font_pool` font tokens are used (all when 0).
    pub font_pool: usize,
    /// Only the first `color_pool` color tokens are used (all when 0).
    pub color_pool: usize,
    pub center_prob: f64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            max_boxes: 10,
            max_attempts: 1000,
            font_pool: 0,
            color_pool: 0,
            center_prob: 0.25,
        }
    }
}

fn pool(limit: usize, available: usize) -> usize {
    if limit == 0 {
        available
    } else {
        limit.min(available)
    }
}

fn sample_text(corpus: &Corpus, split: Split, rng: &mut GenRng) -> String {
    let mut text = String::new();
    let push = |text: &mut String, w: &str| {
        if !text.is_empty() {
            text.push(' ');
        }
        text.push_str(w);
    };
    match split {
        Split::Word => {
            for _ in 0..rng.gen_range(1..=3) {
                push(&mut text, corpus.pick(rng));
            }
        }
        Split::Sentence => {
            let target = rng.gen_range(10..=50);
            loop {
                let w = corpus.pick(rng);
                if !text.is_empty() && text.len() + 1 + w.len() > target {
                    break;
                }
                push(&mut text, w);
            }
        }
        Split::Paragraph => {
            let target = rng.gen_range(101..=180);
            while text.len() < target {
                push(&mut text, corpus.pick(rng));
            }
        }
    }
    text
}

// One placement attempt: text, style, box size and position.
fn propose_box(
    corpus: &Corpus,
    codebook: &FontCodebook,
    cfg: &SampleConfig,
    split: Split,
    rng: &mut GenRng,
) -> Option<TextBox> {
    let text = sample_text(corpus, split, rng);
    let font_id = rng.gen_range(0..pool(cfg.font_pool, codebook.font_count()));
    let color_id = rng.gen_range(0..pool(cfg.color_pool, codebook.color_count()));
    let align = if rng.gen_bool(cfg.center_prob) {
        Align::Center
    } else {
        Align::Left
    };
    let atlas = codebook.font(font_id)?;
    let scale = if split == Split::Paragraph {
        1
    } else {
        rng.gen_range(1..=2)
    };
    let (gw, gh) = (atlas.cell_width() * scale, atlas.cell_height() * scale);
    let words: Vec<&str> = text.split(' ').collect();
    let longest = words.iter().map(|w| w.len()).max()?;
    let chars_per_line = match split {
        Split::Paragraph => {
            let lo = longest.max(16);
            let hi = (text.len() - 1).min(48).max(lo);
            rng.gen_range(lo..=hi)
        }
        _ => text.len() + rng.gen_range(0..=3),
    };
    let lines = greedy_wrap(&words, chars_per_line)?.len() as u32;
    let w = chars_per_line as u32 * gw + rng.gen_range(0..gw);
    let h = lines * gh + (lines - 1) * line_spacing(gh) + rng.gen_range(0..=gh / 2);
    if w > cfg.width || h > cfg.height {
        return None;
    }
    let bbox = BBox::new(
        rng.gen_range(0..=cfg.width - w),
        rng.gen_range(0..=cfg.height - h),
        w,
        h,
    );
    Some(TextBox {
        bbox,
        text,
        font_id,
        color_id,
        align,
    })
}

/// Samples a document with 1 to `max_boxes` non-overlapping boxes by
/// rejection. Paragraph documents start with a paragraph box that wraps to
/// at least two lines; their other boxes carry sentence-length text.
pub fn sample_document(
    corpus: &Corpus,
    codebook: &FontCodebook,
    cfg: &SampleConfig,
    split: Split,
    rng: &mut GenRng,
) -> Result<GlyphDocument, DatasetError> {
    let target = match split {
        Split::Paragraph => rng.gen_range(1..=cfg.max_boxes.clamp(1, 3)),
        _ => rng.gen_range(1..=cfg.max_boxes.max(1)),
    };
    let mut doc = GlyphDocument {
        width: cfg.width,
        height: cfg.height,
        background: Rgb::BLACK,
        boxes: Vec::new(),
    };
    let mut attempts = 0;
    while doc.boxes.len() < target && attempts < cfg.max_attempts {
        attempts += 1;
        let box_split = match (split, doc.boxes.is_empty()) {
            (Split::Paragraph, false) => Split::Sentence,
            _ => split,
        };
        let Some(candidate) = propose_box(corpus, codebook, cfg, box_split, rng) else {
            continue;
        };
        if doc.boxes.iter().any(|b| b.bbox.intersects(&candidate.bbox)) {
            continue;
        }
        let atlas = codebook
            .font(candidate.font_id)
            .expect("font id drawn from the codebook");
        let Ok(plan) = layout_box(&candidate.text, &candidate.bbox, candidate.align, atlas) else {
            continue;
        };
        if box_split == Split::Paragraph && plan.lines.len() < 2 {
            continue;
        }
        doc.boxes.push(candidate);
    }
    if doc.boxes.is_empty() {
        return Err(DatasetError::PlacementFailure { attempts });
    }
    Ok(doc)
}

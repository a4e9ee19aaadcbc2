use serde::{Deserialize, Serialize};

use super::{is_printable, Align, BBox, FontAtlas, RenderError};

/// One wrapped line; `(x, y)` is the top-left corner of its first glyph cell
/// in canvas coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutLine {
    pub text: String,
    pub x: u32,
    pub y: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutPlan {
    /// Integer multiplier of the atlas cell.
    pub scale: u32,
    pub glyph_width: u32,
    pub glyph_height: u32,
    pub line_spacing: u32,
    pub lines: Vec<LayoutLine>,
}

impl LayoutPlan {
    pub fn line_width(&self, line: &LayoutLine) -> u32 {
        line.text.len() as u32 * self.glyph_width
    }

    pub fn block_height(&self) -> u32 {
        block_height(
            self.lines.len() as u32,
            self.glyph_height,
            self.line_spacing,
        )
    }

    /// Line fragments re-joined with single spaces.
    pub fn joined(&self) -> String {
        self.lines
            .iter()
            .map(|l| l.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Gap between consecutive lines: a quarter of the glyph height, rounded up.
pub fn line_spacing(glyph_height: u32) -> u32 {
    glyph_height.div_ceil(4)
}

pub(crate) fn block_height(lines: u32, glyph_height: u32, spacing: u32) -> u32 {
    if lines == 0 {
        0
    } else {
        lines * glyph_height + (lines - 1) * spacing
    }
}

/// Accepts printable ASCII words joined by single spaces.
pub fn validate_text(text: &str) -> Result<(), RenderError> {
    let ok = !text.is_empty()
        && text.chars().all(is_printable)
        && !text.starts_with(' ')
        && !text.ends_with(' ')
        && !text.contains("  ");
    if ok {
        Ok(())
    } else {
        Err(RenderError::InvalidText(text.to_string()))
    }
}

/// Greedy first-fit wrap of `words` into lines of at most `max_chars`
/// characters. `None` if some word is longer than a line.
pub fn greedy_wrap(words: &[&str], max_chars: usize) -> Option<Vec<String>> {
    let mut lines: Vec<String> = Vec::new();
    let mut current = String::new();
    for &word in words {
        if word.len() > max_chars {
            return None;
        }
        if current.is_empty() {
            current.push_str(word);
        } else if current.len() + 1 + word.len() <= max_chars {
            current.push(' ');
            current.push_str(word);
        } else {
            lines.push(std::mem::replace(&mut current, word.to_string()));
        }
    }
    if !current.is_empty() {
        lines.push(current);
    }
    Some(lines)
}

/// Wrapped lines if `words` fit `bbox` at integer `scale`.
pub(crate) fn wrap_at_scale(
    words: &[&str],
    bbox: &BBox,
    atlas: &FontAtlas,
    scale: u32,
) -> Option<Vec<String>> {
    let gw = atlas.cell_width() * scale;
    let gh = atlas.cell_height() * scale;
    let max_chars = (bbox.w / gw) as usize;
    if max_chars == 0 || gh > bbox.h {
        return None;
    }
    let lines = greedy_wrap(words, max_chars)?;
    (block_height(lines.len() as u32, gh, line_spacing(gh)) <= bbox.h).then_some(lines)
}

pub(crate) fn max_scale(bbox: &BBox, atlas: &FontAtlas) -> u32 {
    (bbox.w / atlas.cell_width()).min(bbox.h / atlas.cell_height())
}

pub(crate) fn place_lines(
    lines: Vec<String>,
    bbox: &BBox,
    align: Align,
    atlas: &FontAtlas,
    scale: u32,
) -> LayoutPlan {
    let gw = atlas.cell_width() * scale;
    let gh = atlas.cell_height() * scale;
    let spacing = line_spacing(gh);
    let top = bbox.y + (bbox.h - block_height(lines.len() as u32, gh, spacing)) / 2;
    let lines = lines
        .into_iter()
        .enumerate()
        .map(|(k, text)| {
            let width = text.len() as u32 * gw;
            let x = match align {
                Align::Left => bbox.x,
                Align::Center => bbox.x + (bbox.w - width) / 2,
            };
            LayoutLine {
                text,
                x,
                y: top + k as u32 * (gh + spacing),
            }
        })
        .collect();
    LayoutPlan {
        scale,
        glyph_width: gw,
        glyph_height: gh,
        line_spacing: spacing,
        lines,
    }
}

/// Lays `text` out inside `bbox` at the largest integer scale for which a
/// greedy word wrap fits. The line block is vertically centered.
pub fn layout_box(
    text: &str,
    bbox: &BBox,
    align: Align,
    atlas: &FontAtlas,
) -> Result<LayoutPlan, RenderError> {
    validate_text(text)?;
    let words: Vec<&str> = text.split(' ').collect();
    (1..=max_scale(bbox, atlas))
        .rev()
        .find_map(|scale| wrap_at_scale(&words, bbox, atlas, scale).map(|lines| (scale, lines)))
        .map(|(scale, lines)| place_lines(lines, bbox, align, atlas, scale))
        .ok_or_else(|| RenderError::Unfittable {
            text: text.to_string(),
            w: bbox.w,
            h: bbox.h,
        })
}

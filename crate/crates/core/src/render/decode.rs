use std::collections::HashMap;

use super::layout::{block_height, line_spacing, max_scale};
use super::{
    layout_box, lookup_style, printable_chars, BBox, FontAtlas, LayoutPlan, RenderError,
    StyleLookup, TextBox,
};
use crate::image::RasterImage;
use crate::render::Align;

/// Coverage mask of one box: `true` where the pixel carries the box color.
struct BoxMask {
    w: u32,
    h: u32,
    bits: Vec<bool>,
}

impl BoxMask {
    fn at(&self, x: u32, y: u32) -> bool {
        self.bits[(y * self.w + x) as usize]
    }

    fn lit_columns(&self, y0: u32, y1: u32) -> Option<(u32, u32)> {
        let mut span: Option<(u32, u32)> = None;
        for y in y0..y1.min(self.h) {
            for x in 0..self.w {
                if self.at(x, y) {
                    span = Some(span.map_or((x, x), |(l, r)| (l.min(x), r.max(x))));
                }
            }
        }
        span
    }
}

fn paint(plan: &LayoutPlan, bbox: &BBox, atlas: &FontAtlas) -> Vec<bool> {
    let mut bits = vec![false; (bbox.w * bbox.h) as usize];
    let s = plan.scale;
    for line in &plan.lines {
        for (i, c) in line.text.chars().enumerate() {
            let Some(rows) = atlas.glyph(c) else { continue };
            let x0 = line.x - bbox.x + i as u32 * plan.glyph_width;
            let y0 = line.y - bbox.y;
            for (gy, &row) in rows.iter().enumerate() {
                for gx in 0..atlas.cell_width() {
                    if row >> gx & 1 == 1 {
                        for dy in 0..s {
                            for dx in 0..s {
                                bits[((y0 + gy as u32 * s + dy) * bbox.w + x0 + gx * s + dx)
                                    as usize] = true;
                            }
                        }
                    }
                }
            }
        }
    }
    bits
}

struct Decoder<'a> {
    atlas: &'a FontAtlas,
    table: HashMap<Vec<u32>, char>,
}

impl<'a> Decoder<'a> {
    fn new(atlas: &'a FontAtlas) -> Self {
        let table = printable_chars()
            .map(|c| (atlas.glyph(c).unwrap().to_vec(), c))
            .collect();
        Self { atlas, table }
    }

    // Samples one glyph cell at atlas resolution and looks it up.
    fn read_cell(&self, mask: &BoxMask, x0: u32, y0: u32, scale: u32) -> Option<char> {
        let key: Vec<u32> = (0..self.atlas.cell_height())
            .map(|gy| {
                (0..self.atlas.cell_width())
                    .filter(|&gx| mask.at(x0 + gx * scale, y0 + gy * scale))
                    .fold(0u32, |acc, gx| acc | 1 << gx)
            })
            .collect();
        self.table.get(&key).copied()
    }

    fn read_line(&self, mask: &BoxMask, align: Align, y: u32, scale: u32) -> Option<String> {
        let gw = self.atlas.cell_width() * scale;
        let gh = self.atlas.cell_height() * scale;
        // The first and last glyphs of a line are never spaces, so the ink
        // extent pins the line length.
        let (xl, xr) = mask.lit_columns(y, y + gh)?;
        let max_len = mask.w / gw;
        let candidates: Vec<(u32, u32)> = match align {
            Align::Left => vec![(0, xr / gw + 1)],
            Align::Center => (1..=max_len)
                .map(|len| ((mask.w - len * gw) / 2, len))
                .collect(),
        };
        candidates.into_iter().find_map(|(x0, len)| {
            if len > max_len
                || xl < x0
                || xl >= x0 + gw
                || xr < x0 + (len - 1) * gw
                || xr >= x0 + len * gw
            {
                return None;
            }
            (0..len)
                .map(|j| self.read_cell(mask, x0 + j * gw, y, scale))
                .collect::<Option<String>>()
        })
    }

    fn decode(&self, mask: &BoxMask, bbox: &BBox, align: Align) -> Option<String> {
        let lit_rows: Vec<u32> = (0..mask.h)
            .filter(|&y| (0..mask.w).any(|x| mask.at(x, y)))
            .collect();
        let (top, bottom) = (*lit_rows.first()?, *lit_rows.last()?);
        for scale in (1..=max_scale(bbox, self.atlas)).rev() {
            let gh = self.atlas.cell_height() * scale;
            let sp = line_spacing(gh);
            let max_lines = (mask.h + sp) / (gh + sp);
            for n in 1..=max_lines {
                let block = block_height(n, gh, sp);
                let y0 = (mask.h - block) / 2;
                if top < y0 || bottom >= y0 + block {
                    continue;
                }
                let lines: Option<Vec<String>> = (0..n)
                    .map(|k| self.read_line(mask, align, y0 + k * (gh + sp), scale))
                    .collect();
                let Some(lines) = lines else { continue };
                let text = lines.join(" ");
                // Accept only a reading that re-renders to the exact same mask.
                let Ok(plan) = layout_box(&text, bbox, align, self.atlas) else {
                    continue;
                };
                if plan.scale == scale && paint(&plan, bbox, self.atlas) == mask.bits {
                    return Some(text);
                }
            }
        }
        None
    }
}

/// Recovers the words of every box by exact template matching against the
/// box's atlas. A box without any pixel of its color decodes to no words.
pub fn decode_glyph_image<C: StyleLookup>(
    img: &RasterImage,
    boxes: &[TextBox],
    codebook: &C,
) -> Result<Vec<Vec<String>>, RenderError> {
    boxes
        .iter()
        .enumerate()
        .map(|(index, tb)| {
            if !tb.bbox.fits_in(img.width(), img.height()) {
                return Err(RenderError::ImageTooSmall {
                    got_w: img.width(),
                    got_h: img.height(),
                });
            }
            let (atlas, color) = lookup_style(codebook, tb)?;
            let b = tb.bbox;
            let bits = (0..b.h)
                .flat_map(|y| (0..b.w).map(move |x| (x, y)))
                .map(|(x, y)| img.get(b.x + x, b.y + y) == color)
                .collect::<Vec<_>>();
            if !bits.iter().any(|&v| v) {
                return Ok(Vec::new());
            }
            let mask = BoxMask {
                w: b.w,
                h: b.h,
                bits,
            };
            Decoder::new(atlas)
                .decode(&mask, &b, tb.align)
                .map(|text| text.split(' ').map(str::to_owned).collect())
                .ok_or(RenderError::DecodeMismatch { index })
        })
        .collect()
}

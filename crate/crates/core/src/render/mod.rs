//! Glyph documents: layout, rasterization and exact decoding.

mod atlas;
mod decode;
mod layout;
mod raster;

pub use atlas::{
    is_printable, printable_chars, AtlasError, FontAtlas, FontStyle, BASE_CELL_HEIGHT,
    BASE_CELL_WIDTH, FIRST_PRINTABLE, GLYPH_COUNT, LAST_PRINTABLE,
};
pub use decode::decode_glyph_image;
pub use layout::{greedy_wrap, layout_box, line_spacing, validate_text, LayoutLine, LayoutPlan};
pub use raster::{draw_box, rasterize};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::Rgb;

/// Axis-aligned pixel rectangle, origin top-left. Serialized as `[x, y, w, h]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 4]", into = "[u32; 4]")]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl From<[u32; 4]> for BBox {
    fn from([x, y, w, h]: [u32; 4]) -> Self {
        Self { x, y, w, h }
    }
}

impl From<BBox> for [u32; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl BBox {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn intersects(&self, other: &BBox) -> bool {
        self.x < other.right()
            && other.x < self.right()
            && self.y < other.bottom()
            && other.y < self.bottom()
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x && x < self.right() && y >= self.y && y < self.bottom()
    }

    pub fn fits_in(&self, width: u32, height: u32) -> bool {
        self.w > 0 && self.h > 0 && self.right() <= width && self.bottom() <= height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Align {
    #[default]
    Left,
    Center,
}

impl Align {
    pub fn is_left(&self) -> bool {
        *self == Align::Left
    }
}

/// One styled text run inside a rectangle.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TextBox {
    pub bbox: BBox,
    pub text: String,
    pub font_id: usize,
    pub color_id: usize,
    #[serde(default, skip_serializing_if = "Align::is_left")]
    pub align: Align,
}

impl TextBox {
    pub fn words(&self) -> Vec<String> {
        self.text.split_whitespace().map(str::to_owned).collect()
    }
}

/// A synthetic design image: canvas, background and non-overlapping boxes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlyphDocument {
    pub width: u32,
    pub height: u32,
    pub background: Rgb,
    pub boxes: Vec<TextBox>,
}

impl GlyphDocument {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            background: Rgb::BLACK,
            boxes: Vec::new(),
        }
    }

    pub fn words(&self) -> Vec<Vec<String>> {
        self.boxes.iter().map(TextBox::words).collect()
    }
}

/// Font and color tables addressed by codebook index.
pub trait StyleLookup {
    fn font(&self, font_id: usize) -> Option<&FontAtlas>;
    fn color(&self, color_id: usize) -> Option<Rgb>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodebookKind {
    Font,
    Color,
}

impl std::fmt::Display for CodebookKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CodebookKind::Font => "font",
            CodebookKind::Color => "color",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RenderError {
    #[error("text {text:?} does not fit a {w}x{h} box even at scale 1")]
    Unfittable { text: String, w: u32, h: u32 },
    #[error("text {0:?} must be printable ASCII words separated by single spaces")]
    InvalidText(String),
    #[error("unknown {kind} codebook id {id}")]
    UnknownCodebookId { kind: CodebookKind, id: usize },
    #[error("box {index} lies outside the {width}x{height} canvas")]
    BoxOutsideCanvas {
        index: usize,
        width: u32,
        height: u32,
    },
    #[error("box {index}: glyph cells do not match any atlas glyph")]
    DecodeMismatch { index: usize },
    #[error("image is {got_w}x{got_h}, expected at least the box extents")]
    ImageTooSmall { got_w: u32, got_h: u32 },
}

pub(crate) fn lookup_style<'a, C: StyleLookup>(
    codebook: &'a C,
    tb: &TextBox,
) -> Result<(&'a FontAtlas, Rgb), RenderError> {
    let atlas = codebook
        .font(tb.font_id)
        .ok_or(RenderError::UnknownCodebookId {
            kind: CodebookKind::Font,
            id: tb.font_id,
        })?;
    let color = codebook
        .color(tb.color_id)
        .ok_or(RenderError::UnknownCodebookId {
            kind: CodebookKind::Color,
            id: tb.color_id,
        })?;
    Ok((atlas, color))
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bbox_serializes_as_array() {
        let tb = TextBox {
            bbox: BBox::new(1, 2, 3, 4),
            text: "hi".into(),
            font_id: 5,
            color_id: 6,
            align: Align::Left,
        };
        let json = serde_json::to_string(&tb).unwrap();
        assert_eq!(
            json,
            r#"{"bbox":[1,2,3,4],"text":"hi","font_id":5,"color_id":6}"#
        );
        let centered = TextBox {
            align: Align::Center,
            ..tb
        };
        let json = serde_json::to_string(&centered).unwrap();
        assert!(json.ends_with(r#""align":"center"}"#));
        assert_eq!(serde_json::from_str::<TextBox>(&json).unwrap(), centered);
    }

    #[test]
    fn bbox_geometry() {
        let a = BBox::new(0, 0, 10, 10);
        assert!(a.intersects(&BBox::new(9, 9, 5, 5)));
        assert!(!a.intersects(&BBox::new(10, 0, 5, 5)));
        assert!(a.contains(9, 9) && !a.contains(10, 9));
        assert!(a.fits_in(10, 10) && !a.fits_in(9, 10));
        assert!(!BBox::new(0, 0, 0, 4).fits_in(10, 10));
    }
}

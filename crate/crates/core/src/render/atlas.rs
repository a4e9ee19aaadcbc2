use std::fmt::Write as _;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FIRST_PRINTABLE: u8 = 0x20;
pub const LAST_PRINTABLE: u8 = 0x7E;
pub const GLYPH_COUNT: usize = (LAST_PRINTABLE - FIRST_PRINTABLE + 1) as usize;

pub const BASE_CELL_WIDTH: u32 = 8;
pub const BASE_CELL_HEIGHT: u32 = 16;

/// Every character the atlases can draw, in code order.
pub fn printable_chars() -> impl Iterator<Item = char> + Clone {
    (FIRST_PRINTABLE..=LAST_PRINTABLE).map(char::from)
}

pub fn is_printable(c: char) -> bool {
    (FIRST_PRINTABLE as char..=LAST_PRINTABLE as char).contains(&c)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AtlasError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("atlas is missing a bitmap for {0:?}")]
    MissingGlyph(char),
    #[error("cell width {0} exceeds the 32-pixel row limit")]
    TooWide(u32),
}

/// Programmatic variant of the base face.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FontStyle {
    /// Integer magnification of the 8x16 base cell.
    pub cell_scale: u32,
    /// One-pixel horizontal dilation.
    pub bold: bool,
    /// Horizontal shear in pixels between the bottom and the top row.
    pub italic_skew: u32,
}

impl Default for FontStyle {
    fn default() -> Self {
        Self {
            cell_scale: 1,
            bold: false,
            italic_skew: 0,
        }
    }
}

/// Monospaced binary bitmap face covering printable ASCII.
///
/// Each glyph is `cell_height` rows; bit `x` of a row is the pixel in column
/// `x` (least significant bit on the left). Bitmaps are shared between atlases
/// with the same style.
#[derive(Debug, Clone)]
pub struct FontAtlas {
    face_id: usize,
    style: FontStyle,
    cell_width: u32,
    cell_height: u32,
    glyphs: Arc<Vec<Vec<u32>>>,
}

impl PartialEq for FontAtlas {
    fn eq(&self, other: &Self) -> bool {
        self.face_id == other.face_id
            && self.cell_width == other.cell_width
            && self.cell_height == other.cell_height
            && self.glyphs == other.glyphs
    }
}

fn base_glyphs() -> &'static Arc<Vec<Vec<u32>>> {
    static BASE: OnceLock<Arc<Vec<Vec<u32>>>> = OnceLock::new();
    BASE.get_or_init(|| {
        // 8x8 public-domain face, each row doubled to reach 8x16.
        let glyphs = (FIRST_PRINTABLE..=LAST_PRINTABLE)
            .map(|code| {
                font8x8::legacy::BASIC_LEGACY[code as usize]
                    .iter()
                    .flat_map(|&row| [row as u32, row as u32])
                    .collect()
            })
            .collect();
        Arc::new(glyphs)
    })
}

fn italic_offset(row: u32, height: u32, skew: u32) -> u32 {
    if height <= 1 {
        return 0;
    }
    let span = height - 1;
    (skew * (span - row) + span / 2) / span
}

impl FontAtlas {
    /// The plain 8x16 face.
    pub fn base(face_id: usize) -> Self {
        Self {
            face_id,
            style: FontStyle::default(),
            cell_width: BASE_CELL_WIDTH,
            cell_height: BASE_CELL_HEIGHT,
            glyphs: Arc::clone(base_glyphs()),
        }
    }

    /// Derives a styled variant: magnify, then dilate, then shear.
    pub fn styled(face_id: usize, style: FontStyle) -> Self {
        assert!(style.cell_scale >= 1, "cell scale must be positive");
        let m = style.cell_scale;
        let width = BASE_CELL_WIDTH * m + u32::from(style.bold) + style.italic_skew;
        assert!(width <= 32, "styled cell is wider than 32 pixels");
        let height = BASE_CELL_HEIGHT * m;
        let glyphs = base_glyphs()
            .iter()
            .map(|rows| {
                let mut out = Vec::with_capacity(height as usize);
                for &row in rows {
                    let mut wide = 0u32;
                    for x in 0..BASE_CELL_WIDTH {
                        if row >> x & 1 == 1 {
                            wide |= ((1u32 << m) - 1) << (x * m);
                        }
                    }
                    out.extend(std::iter::repeat_n(wide, m as usize));
                }
                if style.bold {
                    out.iter_mut().for_each(|r| *r |= *r << 1);
                }
                if style.italic_skew > 0 {
                    for (y, r) in out.iter_mut().enumerate() {
                        *r <<= italic_offset(y as u32, height, style.italic_skew);
                    }
                }
                out
            })
            .collect();
        Self {
            face_id,
            style,
            cell_width: width,
            cell_height: height,
            glyphs: Arc::new(glyphs),
        }
    }

    /// Same bitmaps under a different face id.
    pub fn with_face_id(&self, face_id: usize) -> Self {
        Self {
            face_id,
            ..self.clone()
        }
    }

    pub fn face_id(&self) -> usize {
        self.face_id
    }

    pub fn style(&self) -> FontStyle {
        self.style
    }

    pub fn cell_width(&self) -> u32 {
        self.cell_width
    }

    pub fn cell_height(&self) -> u32 {
        self.cell_height
    }

    pub fn glyph(&self, c: char) -> Option<&[u32]> {
        is_printable(c).then(|| self.glyphs[c as usize - FIRST_PRINTABLE as usize].as_slice())
    }

    #[inline]
    pub fn is_lit(&self, c: char, x: u32, y: u32) -> bool {
        self.glyph(c)
            .is_some_and(|rows| rows[y as usize] >> x & 1 == 1)
    }

    /// Serializes to the `GATLAS1` text format: a header line
    /// `GATLAS1 <cell_w> <cell_h>`, then one line per character holding its
    /// code and `cell_h` hex rows.
    pub fn to_gatlas(&self) -> String {
        let digits = self.cell_width.div_ceil(4) as usize;
        let mut out = format!("GATLAS1 {} {}\n", self.cell_width, self.cell_height);
        for (c, rows) in printable_chars().zip(self.glyphs.iter()) {
            write!(out, "{:02X}", c as u32).unwrap();
            for r in rows {
                write!(out, " {r:0digits$X}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_gatlas(face_id: usize, text: &str) -> Result<Self, AtlasError> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let syntax = |line: usize, msg: &str| AtlasError::Syntax {
            line: line + 1,
            msg: msg.to_string(),
        };
        let (hline, header) = lines.next().ok_or_else(|| syntax(0, "empty atlas"))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some("GATLAS1") {
            return Err(syntax(hline, "missing GATLAS1 header"));
        }
        let mut dim = || -> Result<u32, AtlasError> {
            parts
                .next()
                .and_then(|t| t.parse().ok())
                .filter(|&v: &u32| v > 0)
                .ok_or_else(|| syntax(hline, "bad cell dimensions"))
        };
        let (cell_width, cell_height) = (dim()?, dim()?);
        if cell_width > 32 {
            return Err(AtlasError::TooWide(cell_width));
        }
        let mut glyphs: Vec<Option<Vec<u32>>> = vec![None; GLYPH_COUNT];
        for (ln, line) in lines {
            let mut toks = line.split_whitespace();
            let code = toks
                .next()
                .and_then(|t| u8::from_str_radix(t, 16).ok())
                .filter(|&c| (FIRST_PRINTABLE..=LAST_PRINTABLE).contains(&c))
                .ok_or_else(|| syntax(ln, "bad character code"))?;
            let rows = toks
                .map(|t| u32::from_str_radix(t, 16).map_err(|_| syntax(ln, "bad hex row")))
                .collect::<Result<Vec<_>, _>>()?;
            if rows.len() != cell_height as usize {
                return Err(syntax(ln, "row count does not match cell height"));
            }
            if rows
                .iter()
                .any(|&r| cell_width < 32 && r >> cell_width != 0)
            {
                return Err(syntax(ln, "row has pixels outside the cell"));
            }
            glyphs[(code - FIRST_PRINTABLE) as usize] = Some(rows);
        }
        let glyphs = glyphs
            .into_iter()
            .zip(printable_chars())
            .map(|(g, c)| g.ok_or(AtlasError::MissingGlyph(c)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            face_id,
            style: FontStyle::default(),
            cell_width,
            cell_height,
            glyphs: Arc::new(glyphs),
        })
    }
}

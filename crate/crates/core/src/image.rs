//! RGB rasters and the netpbm codecs used for every image the crate writes.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Rgb(pub [u8; 3]);

impl Rgb {
    pub const BLACK: Rgb = Rgb([0, 0, 0]);
    pub const WHITE: Rgb = Rgb([255, 255, 255]);
}

/// Row-major 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl RasterImage {
    pub fn filled(width: u32, height: u32, color: Rgb) -> Self {
        let n = width as usize * height as usize;
        let mut data = Vec::with_capacity(n * 3);
        for _ in 0..n {
            data.extend_from_slice(&color.0);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Option<Self> {
        (data.len() == width as usize * height as usize * 3).then_some(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> Rgb {
        let o = self.offset(x, y);
        Rgb([self.data[o], self.data[o + 1], self.data[o + 2]])
    }

    #[inline]
    pub fn put(&mut self, x: u32, y: u32, color: Rgb) {
        let o = self.offset(x, y);
        self.data[o..o + 3].copy_from_slice(&color.0);
    }

    pub fn pixels(&self) -> impl Iterator<Item = Rgb> + '_ {
        self.data.chunks_exact(3).map(|c| Rgb([c[0], c[1], c[2]]))
    }

    /// Binary PPM (P6, maxval 255).
    pub fn write_ppm<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.data)
    }

    pub fn to_ppm_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.data.len() + 20);
        self.write_ppm(&mut buf)
            .expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_ppm<R: BufRead>(mut r: R) -> io::Result<Self> {
        let magic = read_token(&mut r)?;
        if magic != "P6" {
            return Err(invalid(format!("expected P6 magic, found {magic:?}")));
        }
        let width = parse_header_num(&mut r)?;
        let height = parse_header_num(&mut r)?;
        let maxval = parse_header_num(&mut r)?;
        if maxval != 255 {
            return Err(invalid(format!("unsupported maxval {maxval}")));
        }
        let mut data = vec![0u8; width as usize * height as usize * 3];
        r.read_exact(&mut data)?;
        Ok(Self {
            width,
            height,
            data,
        })
    }
}

/// Writes a boolean grid as binary PBM (P4); `true` is printed black.
pub fn write_pbm<W: Write>(mut w: W, width: usize, height: usize, bits: &[bool]) -> io::Result<()> {
    assert_eq!(
        bits.len(),
        width * height,
        "bit grid does not match dimensions"
    );
    write!(w, "P4\n{width} {height}\n")?;
    let row_bytes = width.div_ceil(8);
    let mut row = vec![0u8; row_bytes];
    for y in 0..height {
        row.fill(0);
        for x in 0..width {
            if bits[y * width + x] {
                row[x / 8] |= 0x80 >> (x % 8);
            }
        }
        w.write_all(&row)?;
    }
    Ok(())
}

fn invalid(msg: String) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg)
}

// Netpbm header token: skips whitespace and `#` comments, consumes exactly
// one trailing whitespace byte.
fn read_token<R: BufRead>(r: &mut R) -> io::Result<String> {
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    loop {
        r.read_exact(&mut byte)?;
        match byte[0] {
            b'#' if tok.is_empty() => {
                let mut skip = Vec::new();
                r.read_until(b'\n', &mut skip)?;
            }
            b if b.is_ascii_whitespace() => {
                if !tok.is_empty() {
                    return Ok(tok);
                }
            }
            b => tok.push(b as char),
        }
    }
}

fn parse_header_num<R: BufRead>(r: &mut R) -> io::Result<u32> {
    let tok = read_token(r)?;
    tok.parse()
        .map_err(|_| invalid(format!("bad header number {tok:?}")))
}

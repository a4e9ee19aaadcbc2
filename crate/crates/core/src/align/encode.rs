use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{normalized, AlignError};
use crate::dataset::{DatasetError, FontCodebook, PromptToken};
use crate::image::{RasterImage, Rgb};
use crate::render::{BBox, FIRST_PRINTABLE, GLYPH_COUNT};
use crate::rng::{derive_seed, stream};

/// Mean RGB offset from the background (3) and 4x4 sub-block ink coverage
/// (16). Background-only patches map to the zero vector.
pub const PATCH_FEATURES: usize = 19;

// Balances the three color features against the sixteen coverage features.
const RGB_WEIGHT: f64 = 4.0;

/// `rows x cols` grid of `dim`-vectors, one per patch.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub rows: usize,
    pub cols: usize,
    pub dim: usize,
    pub canvas_width: u32,
    pub canvas_height: u32,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn from_cells(
        rows: usize,
        cols: usize,
        dim: usize,
        canvas: (u32, u32),
        data: Vec<f64>,
    ) -> Self {
        assert_eq!(data.len(), rows * cols * dim);
        Self {
            rows,
            cols,
            dim,
            canvas_width: canvas.0,
            canvas_height: canvas.1,
            data,
        }
    }

    pub fn cell(&self, r: usize, c: usize) -> &[f64] {
        let o = (r * self.cols + c) * self.dim;
        &self.data[o..o + self.dim]
    }

    fn cell_mut(&mut self, r: usize, c: usize) -> &mut [f64] {
        let o = (r * self.cols + c) * self.dim;
        &mut self.data[o..o + self.dim]
    }

    /// Each cell scaled to unit L2 norm (all-zero cells stay zero).
    pub fn normalized(&self) -> Self {
        let mut out = self.clone();
        for chunk in out.data.chunks_exact_mut(self.dim) {
            let n = chunk.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 {
                chunk.iter_mut().for_each(|v| *v /= n);
            }
        }
        out
    }
}

/// Frozen visual encoder: patch statistics through a seeded random
/// projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualEncoder {
    pub patch: u32,
    pub dim: usize,
    pub background: Rgb,
    /// `dim x PATCH_FEATURES`, row-major.
    pub proj: Vec<f64>,
}

impl VisualEncoder {
    pub fn new(dim: usize, patch: u32, seed: u64) -> Self {
        let mut rng = stream(seed, &[0x7615]);
        let scale = 1.0 / (PATCH_FEATURES as f64).sqrt();
        let proj = (0..dim * PATCH_FEATURES)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                scale * z
            })
            .collect();
        Self {
            patch,
            dim,
            background: Rgb::BLACK,
            proj,
        }
    }

    fn patch_features(&self, img: &RasterImage, r: usize, c: usize) -> [f64; PATCH_FEATURES] {
        let p = self.patch;
        let sub = p / 4;
        let (x0, y0) = (c as u32 * p, r as u32 * p);
        let mut f = [0.0; PATCH_FEATURES];
        for y in 0..p {
            for x in 0..p {
                let px = img.get(x0 + x, y0 + y);
                for (k, fk) in f.iter_mut().take(3).enumerate() {
                    *fk += px.0[k] as f64 - self.background.0[k] as f64;
                }
                if px != self.background {
                    f[3 + (y / sub * 4 + x / sub) as usize] += 1.0;
                }
            }
        }
        let n = (p * p) as f64;
        for v in &mut f[..3] {
            *v *= RGB_WEIGHT / (n * 255.0);
        }
        for v in &mut f[3..] {
            *v /= (sub * sub) as f64;
        }
        f
    }

    fn encode_cell(&self, img: &RasterImage, r: usize, c: usize, out: &mut [f64]) {
        let f = self.patch_features(img, r, c);
        for (d, o) in out.iter_mut().enumerate() {
            *o = super::dot(&self.proj[d * PATCH_FEATURES..(d + 1) * PATCH_FEATURES], &f);
        }
    }

    fn check_dims(&self, img: &RasterImage) -> Result<(usize, usize), AlignError> {
        let p = self.patch;
        if p == 0
            || !p.is_multiple_of(4)
            || img.width() == 0
            || img.height() == 0
            || !img.width().is_multiple_of(p)
            || !img.height().is_multiple_of(p)
        {
            return Err(AlignError::BadDims {
                width: img.width(),
                height: img.height(),
                patch: p,
            });
        }
        Ok(((img.height() / p) as usize, (img.width() / p) as usize))
    }

    /// Raw (unnormalized) feature map.
    pub fn encode_image(&self, img: &RasterImage) -> Result<FeatureMap, AlignError> {
        let (rows, cols) = self.check_dims(img)?;
        let mut fm = FeatureMap::from_cells(
            rows,
            cols,
            self.dim,
            (img.width(), img.height()),
            vec![0.0; rows * cols * self.dim],
        );
        for r in 0..rows {
            for c in 0..cols {
                self.encode_cell(img, r, c, fm.cell_mut(r, c));
            }
        }
        Ok(fm)
    }

    /// Recomputes only the cells overlapping `bbox` after `img` changed
    /// inside it.
    pub fn refresh_region(
        &self,
        fm: &mut FeatureMap,
        img: &RasterImage,
        bbox: &BBox,
    ) -> Result<(), AlignError> {
        let (rows, cols) = self.check_dims(img)?;
        if (rows, cols) != (fm.rows, fm.cols) {
            return Err(AlignError::DimMismatch(format!(
                "map {}x{} vs image {rows}x{cols}",
                fm.rows, fm.cols
            )));
        }
        let p = self.patch;
        let r1 = (bbox.bottom().min(img.height()).div_ceil(p) as usize).min(rows);
        let c1 = (bbox.right().min(img.width()).div_ceil(p) as usize).min(cols);
        for r in (bbox.y / p) as usize..r1 {
            for c in (bbox.x / p) as usize..c1 {
                let mut cell = vec![0.0; self.dim];
                self.encode_cell(img, r, c, &mut cell);
                fm.cell_mut(r, c).copy_from_slice(&cell);
            }
        }
        Ok(())
    }
}

/// Sorted, duplicate-free sparse vector.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseFeatures(pub Vec<(usize, f64)>);

impl SparseFeatures {
    fn from_unsorted(mut v: Vec<(usize, f64)>) -> Self {
        v.sort_by_key(|e| e.0);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(v.len());
        for (i, x) in v {
            match out.last_mut() {
                Some(last) if last.0 == i => last.1 += x,
                _ => out.push((i, x)),
            }
        }
        out.retain(|e| e.1 != 0.0);
        Self(out)
    }

    pub fn to_dense(&self, len: usize) -> Vec<f64> {
        let mut d = vec![0.0; len];
        for &(i, x) in &self.0 {
            d[i] = x;
        }
        d
    }
}

fn bigram_bucket(a: u8, b: u8, buckets: usize) -> usize {
    (derive_seed(a as u64, &[b as u64]) % buckets as u64) as usize
}

/// Encoder input for one text segment: byte n-gram features plus the
/// codebook tokens that follow it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextInput {
    pub bytes: SparseFeatures,
    pub colors: Vec<usize>,
    pub fonts: Vec<usize>,
}

/// Width of the byte part: unigram frequencies over the printable range,
/// hashed bigram frequencies, log length and a bias slot.
pub fn byte_feature_dim(buckets: usize) -> usize {
    GLYPH_COUNT + buckets + 2
}

pub fn text_features(
    tokens: &[PromptToken],
    codebook: &FontCodebook,
    buckets: usize,
) -> Result<TextInput, DatasetError> {
    let (uni, bi, len_at, bias_at) = (
        0,
        GLYPH_COUNT,
        GLYPH_COUNT + buckets,
        GLYPH_COUNT + buckets + 1,
    );
    let mut bytes = Vec::new();
    let mut colors = Vec::new();
    let mut fonts = Vec::new();
    for t in tokens {
        match *t {
            PromptToken::Byte(b) => bytes.push(b),
            PromptToken::Color(k) => {
                codebook.color_embedding(k)?;
                colors.push(k);
            }
            PromptToken::Font(k) => {
                codebook.font_embedding(k)?;
                fonts.push(k);
            }
        }
    }
    let mut v = Vec::with_capacity(2 * bytes.len() + 2);
    let n = bytes.len().max(1) as f64;
    for &b in &bytes {
        let idx = (b as usize).wrapping_sub(FIRST_PRINTABLE as usize);
        if idx < GLYPH_COUNT {
            v.push((uni + idx, 1.0 / n));
        }
    }
    let pairs = bytes.len().saturating_sub(1).max(1) as f64;
    for w in bytes.windows(2) {
        v.push((bi + bigram_bucket(w[0], w[1], buckets), 1.0 / pairs));
    }
    v.push((len_at, (1.0 + bytes.len() as f64).ln() / 4.0));
    v.push((bias_at, 1.0));
    Ok(TextInput {
        bytes: SparseFeatures::from_unsorted(v),
        colors,
        fonts,
    })
}

/// Text tower: `y = W [bytes; Σ color emb; Σ font emb] / |·|`. Both `W` and
/// the codebook embedding tables are trainable; the tables start from the
/// codebook's global embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextEncoder {
    pub dim: usize,
    pub buckets: usize,
    pub emb_dim: usize,
    /// `dim x input_dim`, row-major.
    pub w: Vec<f64>,
    /// `colors x emb_dim`
    pub color_emb: Vec<f64>,
    /// `fonts x emb_dim`
    pub font_emb: Vec<f64>,
}

/// Gradient buffers matching [`TextEncoder`]'s trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct TextGrad {
    pub w: Vec<f64>,
    pub color_emb: Vec<f64>,
    pub font_emb: Vec<f64>,
}

impl TextGrad {
    pub fn zero(&mut self) {
        for buf in [&mut self.w, &mut self.color_emb, &mut self.font_emb] {
            buf.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

impl TextEncoder {
    pub fn new(dim: usize, buckets: usize, codebook: &FontCodebook, seed: u64) -> Self {
        let emb_dim = codebook.emb_dim();
        let input = byte_feature_dim(buckets) + 2 * emb_dim;
        let mut rng = stream(seed, &[0x7E47]);
        let normal = Normal::new(0.0, 0.1).expect("valid std");
        let scale = 1.0 / (emb_dim.max(1) as f64).sqrt();
        let color_emb = (0..codebook.color_count())
            .flat_map(|k| {
                codebook
                    .color_embedding(k)
                    .expect("index in range")
                    .iter()
                    .map(move |v| v * scale)
            })
            .collect();
        let font_emb = (0..codebook.font_count())
            .flat_map(|k| {
                codebook
                    .font_embedding(k)
                    .expect("index in range")
                    .iter()
                    .map(move |v| v * scale)
            })
            .collect();
        Self {
            dim,
            buckets,
            emb_dim,
            w: (0..dim * input).map(|_| normal.sample(&mut rng)).collect(),
            color_emb,
            font_emb,
        }
    }

    pub fn input_dim(&self) -> usize {
        byte_feature_dim(self.buckets) + 2 * self.emb_dim
    }

    pub fn zero_grad(&self) -> TextGrad {
        TextGrad {
            w: vec![0.0; self.w.len()],
            color_emb: vec![0.0; self.color_emb.len()],
            font_emb: vec![0.0; self.font_emb.len()],
        }
    }

    pub fn features(
        &self,
        tokens: &[PromptToken],
        codebook: &FontCodebook,
    ) -> Result<TextInput, DatasetError> {
        text_features(tokens, codebook, self.buckets)
    }

    // Concatenated input as a sparse vector.
    fn input_vector(&self, input: &TextInput) -> Vec<(usize, f64)> {
        let b = byte_feature_dim(self.buckets);
        let e = self.emb_dim;
        let mut v = input.bytes.0.clone();
        for (base, ids, table) in [
            (b, &input.colors, &self.color_emb),
            (b + e, &input.fonts, &self.font_emb),
        ] {
            if ids.is_empty() {
                continue;
            }
            let mut acc = vec![0.0; e];
            for &k in ids {
                for (a, x) in acc.iter_mut().zip(&table[k * e..(k + 1) * e]) {
                    *a += x;
                }
            }
            v.extend(acc.into_iter().enumerate().map(|(d, x)| (base + d, x)));
        }
        v
    }

    /// Pre-normalization projection.
    pub fn project(&self, input: &TextInput) -> Vec<f64> {
        let x = self.input_vector(input);
        let n = self.input_dim();
        (0..self.dim)
            .map(|d| {
                let row = &self.w[d * n..(d + 1) * n];
                x.iter().map(|&(i, v)| row[i] * v).sum()
            })
            .collect()
    }

    /// Unit-norm text embedding.
    pub fn embed(&self, input: &TextInput) -> Vec<f64> {
        normalized(&self.project(input))
    }

    /// Adds the parameter gradient given `dL/dy` at `y = u/|u|`.
    pub fn accumulate_grad(&self, input: &TextInput, u: &[f64], dy: &[f64], grad: &mut TextGrad) {
        let n = super::norm(u);
        if n == 0.0 {
            return;
        }
        let y: Vec<f64> = u.iter().map(|v| v / n).collect();
        let proj = super::dot(&y, dy);
        let du: Vec<f64> = (0..self.dim).map(|d| (dy[d] - y[d] * proj) / n).collect();
        let x = self.input_vector(input);
        let width = self.input_dim();
        for (d, &g) in du.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &mut grad.w[d * width..(d + 1) * width];
            for &(i, v) in &x {
                row[i] += g * v;
            }
        }
        let b = byte_feature_dim(self.buckets);
        let e = self.emb_dim;
        for (base, ids, table) in [
            (b, &input.colors, &mut grad.color_emb),
            (b + e, &input.fonts, &mut grad.font_emb),
        ] {
            for k in 0..e {
                let col: f64 = (0..self.dim)
                    .map(|d| du[d] * self.w[d * width + base + k])
                    .sum();
                for &id in ids.iter() {
                    table[id * e + k] += col;
                }
            }
        }
    }

    pub fn apply(&mut self, grad: &TextGrad, lr: f64) {
        for (p, g) in [
            (&mut self.w, &grad.w),
            (&mut self.color_emb, &grad.color_emb),
            (&mut self.font_emb, &grad.font_emb),
        ] {
            for (a, b) in p.iter_mut().zip(g) {
                *a -= lr * b;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.w
            .iter()
            .chain(&self.color_emb)
            .chain(&self.font_emb)
            .all(|v| v.is_finite())
    }
}

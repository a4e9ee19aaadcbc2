//! Region-wise cross-attention masks.
//!
//! Pixels (or latent cells) inside a text box may only attend to the glyph
//! tokens of that box; pixels outside every box attend only to the global
//! prompt tokens. The mask is applied additively to the attention logits, so
//! disallowed tokens receive exactly zero weight.
//!
//! A small residual MLP stands in for the glyph-to-key/value mapper, and
//! [`mapper_probe`] measures what it buys on a toy reconstruction task.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Exec;
use crate::render::BBox;
use crate::rng::{stream, GenRng};

/// Additive logit for disallowed (pixel, token) pairs.
pub const MASKED_LOGIT: f64 = -1e30;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegionAttnError {
    #[error("pixel group {group} has no tokens")]
    MissingGroup { group: usize },
    #[error("token grouping has no global token")]
    NoGlobalToken,
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// # Panics
    /// If `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn random(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, std).expect("finite std");
        Self {
            rows,
            cols,
            data: (0..rows * cols).map(|_| normal.sample(rng)).collect(),
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

/// Group id per grid cell, row-major: 0 is global, `k >= 1` is box `k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelAssignment {
    pub rows: usize,
    pub cols: usize,
    pub groups: Vec<usize>,
}

impl PixelAssignment {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn group(&self, p: usize) -> usize {
        self.groups[p]
    }

    /// Number of cells in each group `0..=max_group`.
    pub fn group_sizes(&self) -> Vec<usize> {
        let max = self.groups.iter().copied().max().unwrap_or(0);
        let mut sizes = vec![0; max + 1];
        for &g in &self.groups {
            sizes[g] += 1;
        }
        sizes
    }
}

/// Assigns each cell of a `rows x cols` grid laid over a `width x height`
/// canvas to the box it overlaps (with positive area). A cell overlapping
/// several boxes goes to the smallest-area one, ties to the lowest index;
/// a cell overlapping none is global. When the grid matches the canvas,
/// cells are pixels and overlap means containment.
///
/// # Panics
/// If any of the grid or canvas dimensions is zero.
pub fn assign_pixels(grid: (usize, usize), canvas: (u32, u32), boxes: &[BBox]) -> PixelAssignment {
    let (rows, cols) = grid;
    let (width, height) = (canvas.0 as u64, canvas.1 as u64);
    assert!(
        rows > 0 && cols > 0 && width > 0 && height > 0,
        "grid and canvas must be non-empty"
    );
    let (rows_u, cols_u) = (rows as u64, cols as u64);
    // cell c spans [c*W, (c+1)*W) and box x spans [x*cols, (x+w)*cols), both
    // in units of 1/cols pixel
    let overlaps = |lo_cell: u64, extent: u64, n: u64, start: u32, len: u32| {
        let (b0, b1) = (start as u64 * n, (start as u64 + len as u64) * n);
        lo_cell * extent < b1 && b0 < (lo_cell + 1) * extent
    };
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by_key(|&i| (boxes[i].w as u64 * boxes[i].h as u64, i));
    let mut groups = vec![0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            groups[r * cols + c] = order
                .iter()
                .find(|&&i| {
                    let b = &boxes[i];
                    b.w > 0
                        && b.h > 0
                        && overlaps(c as u64, width, cols_u, b.x, b.w)
                        && overlaps(r as u64, height, rows_u, b.y, b.h)
                })
                .map_or(0, |&i| i + 1);
        }
    }
    PixelAssignment { rows, cols, groups }
}

/// Group id per token: 0 for global prompt tokens, `k >= 1` for the glyph
/// tokens of box `k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenGrouping {
    pub groups: Vec<usize>,
}

impl TokenGrouping {
    pub fn new(groups: Vec<usize>) -> Result<Self, RegionAttnError> {
        if !groups.contains(&0) {
            return Err(RegionAttnError::NoGlobalToken);
        }
        Ok(Self { groups })
    }

    /// `global` global tokens followed by `per_box[k]` tokens for box `k + 1`.
    pub fn from_counts(global: usize, per_box: &[usize]) -> Result<Self, RegionAttnError> {
        let mut groups = vec![0; global];
        for (k, &n) in per_box.iter().enumerate() {
            groups.extend(std::iter::repeat_n(k + 1, n));
        }
        Self::new(groups)
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

/// `P x T` boolean mask, row-major; `true` means the pixel may attend to the
/// token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionMask {
    pub pixels: usize,
    pub tokens: usize,
    pub allowed: Vec<bool>,
}

impl AttentionMask {
    /// Every pixel attends to every token: the naive concatenation of global
    /// and glyph tokens.
    pub fn all_true(pixels: usize, tokens: usize) -> Self {
        Self {
            pixels,
            tokens,
            allowed: vec![true; pixels * tokens],
        }
    }

    pub fn get(&self, p: usize, t: usize) -> bool {
        self.allowed[p * self.tokens + t]
    }

    pub fn row(&self, p: usize) -> &[bool] {
        &self.allowed[p * self.tokens..(p + 1) * self.tokens]
    }

    /// Whether every row has at least one allowed token.
    pub fn rows_ok(&self) -> bool {
        self.tokens > 0 && (0..self.pixels).all(|p| self.row(p).contains(&true))
    }
}

/// `mask[p, t] = group(p) == group(t)`.
pub fn build_attention_mask(
    pa: &PixelAssignment,
    tg: &TokenGrouping,
) -> Result<AttentionMask, RegionAttnError> {
    let mut present = vec![false; tg.groups.iter().copied().max().unwrap_or(0) + 1];
    for &g in &tg.groups {
        present[g] = true;
    }
    if let Some(&group) = pa
        .groups
        .iter()
        .find(|&&g| !present.get(g).copied().unwrap_or(false))
    {
        return Err(RegionAttnError::MissingGroup { group });
    }
    let allowed = pa
        .groups
        .iter()
        .flat_map(|&gp| tg.groups.iter().map(move |&gt| gp == gt))
        .collect();
    Ok(AttentionMask {
        pixels: pa.len(),
        tokens: tg.len(),
        allowed,
    })
}

fn check_attention_dims(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    mask: &AttentionMask,
    heads: usize,
) -> Result<(), RegionAttnError> {
    let bad = |m: String| Err(RegionAttnError::DimMismatch(m));
    if heads == 0 {
        return bad("head count must be positive".into());
    }
    if q.cols != k.cols {
        return bad(format!("query width {} vs key width {}", q.cols, k.cols));
    }
    if k.rows != v.rows {
        return bad(format!("{} keys vs {} values", k.rows, v.rows));
    }
    if mask.pixels != q.rows || mask.tokens != k.rows {
        return bad(format!(
            "mask {}x{} for {} queries and {} tokens",
            mask.pixels, mask.tokens, q.rows, k.rows
        ));
    }
    if !q.cols.is_multiple_of(heads) || !v.cols.is_multiple_of(heads) {
        return bad(format!(
            "widths {} and {} not divisible into {heads} heads",
            q.cols, v.cols
        ));
    }
    Ok(())
}

// Attention weights of one query row in one head.
fn head_weights(
    q: &Matrix,
    k: &Matrix,
    mask: &AttentionMask,
    heads: usize,
    p: usize,
    h: usize,
) -> Vec<f64> {
    let dh = q.cols / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let qh = &q.row(p)[h * dh..(h + 1) * dh];
    let logits: Vec<f64> = (0..k.rows)
        .map(|t| {
            let kh = &k.row(t)[h * dh..(h + 1) * dh];
            let s: f64 = qh.iter().zip(kh).map(|(a, b)| a * b).sum::<f64>() * scale;
            s + if mask.get(p, t) { 0.0 } else { MASKED_LOGIT }
        })
        .collect();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Per-head attention weights, each a `P x T` matrix.
pub fn attention_weights(
    q: &Matrix,
    k: &Matrix,
    mask: &AttentionMask,
    heads: usize,
    exec: Exec,
) -> Result<Vec<Matrix>, RegionAttnError> {
    let v = Matrix::zeros(k.rows, heads);
    check_attention_dims(q, k, &v, mask, heads)?;
    Ok((0..heads)
        .map(|h| {
            let rows = exec.map_range(q.rows, |p| head_weights(q, k, mask, heads, p, h));
            Matrix::from_vec(q.rows, k.rows, rows.concat())
        })
        .collect())
}

/// Multi-head attention of `P` queries over `T` tokens with the additive
/// mask; each head reads its slice of the query/key width and writes its
/// slice of the value width.
pub fn masked_cross_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    mask: &AttentionMask,
    heads: usize,
) -> Result<Matrix, RegionAttnError> {
    masked_cross_attention_with(q, k, v, mask, heads, Exec::default())
}

/// [`masked_cross_attention`] with an explicit execution strategy; rows are
/// independent, so the result does not depend on it.
pub fn masked_cross_attention_with(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    mask: &AttentionMask,
    heads: usize,
    exec: Exec,
) -> Result<Matrix, RegionAttnError> {
    check_attention_dims(q, k, v, mask, heads)?;
    let dv = v.cols / heads;
    let rows = exec.map_range(q.rows, |p| {
        let mut out = vec![0.0; v.cols];
        for h in 0..heads {
            let w = head_weights(q, k, mask, heads, p, h);
            let slot = &mut out[h * dv..(h + 1) * dv];
            for (t, &wt) in w.iter().enumerate() {
                if wt != 0.0 {
                    for (o, x) in slot.iter_mut().zip(&v.row(t)[h * dv..(h + 1) * dv]) {
                        *o += wt * x;
                    }
                }
            }
        }
        out
    });
    Ok(Matrix::from_vec(q.rows, v.cols, rows.concat()))
}

/// Residual two-layer mapper from glyph-embedding width `D` to key/value
/// width `D_kv`: `y = P x + W2 tanh(W1 x + b1) + b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlyphMapper {
    pub input_dim: usize,
    pub hidden: usize,
    pub output_dim: usize,
    /// `output_dim x input_dim` skip projection.
    pub skip: Matrix,
    /// `hidden x input_dim`
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// `output_dim x hidden`
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

/// Gradients of a [`GlyphMapper`], same layout as its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MapperGrad {
    pub skip: Matrix,
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl GlyphMapper {
    /// Skip projection starts as the (rectangular) identity and the MLP
    /// branch as zero, so with `D = D_kv` the initial mapper is the identity.
    pub fn identity_init(input_dim: usize, hidden: usize, output_dim: usize, seed: u64) -> Self {
        let mut rng = stream(seed, &[0x3A9]);
        let mut skip = Matrix::zeros(output_dim, input_dim);
        for i in 0..input_dim.min(output_dim) {
            skip.data[i * input_dim + i] = 1.0;
        }
        Self {
            input_dim,
            hidden,
            output_dim,
            skip,
            w1: Matrix::random(
                hidden,
                input_dim,
                1.0 / (input_dim.max(1) as f64).sqrt(),
                &mut rng,
            ),
            b1: vec![0.0; hidden],
            w2: Matrix::zeros(output_dim, hidden),
            b2: vec![0.0; output_dim],
        }
    }

    fn hidden_act(&self, x: &[f64]) -> Vec<f64> {
        (0..self.hidden)
            .map(|j| {
                (self.b1[j]
                    + self
                        .w1
                        .row(j)
                        .iter()
                        .zip(x)
                        .map(|(a, b)| a * b)
                        .sum::<f64>())
                .tanh()
            })
            .collect()
    }

    fn forward_row(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let a = self.hidden_act(x);
        let y = (0..self.output_dim)
            .map(|o| {
                let skip: f64 = self.skip.row(o).iter().zip(x).map(|(p, v)| p * v).sum();
                let mlp: f64 = self.w2.row(o).iter().zip(&a).map(|(w, v)| w * v).sum();
                skip + mlp + self.b2[o]
            })
            .collect();
        (y, a)
    }

    pub fn zero_grad(&self) -> MapperGrad {
        MapperGrad {
            skip: Matrix::zeros(self.output_dim, self.input_dim),
            w1: Matrix::zeros(self.hidden, self.input_dim),
            b1: vec![0.0; self.hidden],
            w2: Matrix::zeros(self.output_dim, self.hidden),
            b2: vec![0.0; self.output_dim],
        }
    }

    /// Accumulates parameter gradients for input rows `x` given `dL/dy`.
    pub fn backward(&self, x: &Matrix, dy: &Matrix, grad: &mut MapperGrad) {
        for r in 0..x.rows {
            let xr = x.row(r);
            let dyr = dy.row(r);
            let a = self.hidden_act(xr);
            let mut da = vec![0.0; self.hidden];
            for (o, &g) in dyr.iter().enumerate() {
                grad.b2[o] += g;
                for (i, &xv) in xr.iter().enumerate() {
                    grad.skip.data[o * self.input_dim + i] += g * xv;
                }
                for j in 0..self.hidden {
                    grad.w2.data[o * self.hidden + j] += g * a[j];
                    da[j] += g * self.w2.get(o, j);
                }
            }
            for j in 0..self.hidden {
                let dz = da[j] * (1.0 - a[j] * a[j]);
                grad.b1[j] += dz;
                for (i, &xv) in xr.iter().enumerate() {
                    grad.w1.data[j * self.input_dim + i] += dz * xv;
                }
            }
        }
    }

    pub fn apply(&mut self, grad: &MapperGrad, lr: f64) {
        let pairs = [
            (&mut self.skip.data, &grad.skip.data),
            (&mut self.w1.data, &grad.w1.data),
            (&mut self.b1, &grad.b1),
            (&mut self.w2.data, &grad.w2.data),
            (&mut self.b2, &grad.b2),
        ];
        for (p, g) in pairs {
            for (a, b) in p.iter_mut().zip(g) {
                *a -= lr * b;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        [
            &self.skip.data,
            &self.w1.data,
            &self.b1,
            &self.w2.data,
            &self.b2,
        ]
        .iter()
        .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Maps each row of `embeddings` (width `D`) into key/value space.
pub fn map_glyph_embeddings(
    embeddings: &Matrix,
    mapper: &GlyphMapper,
) -> Result<Matrix, RegionAttnError> {
    if embeddings.cols != mapper.input_dim {
        return Err(RegionAttnError::DimMismatch(format!(
            "embedding width {} vs mapper input {}",
            embeddings.cols, mapper.input_dim
        )));
    }
    let rows: Vec<Vec<f64>> = (0..embeddings.rows)
        .map(|r| mapper.forward_row(embeddings.row(r)).0)
        .collect();
    Ok(Matrix::from_vec(
        embeddings.rows,
        mapper.output_dim,
        rows.concat(),
    ))
}

/// Settings of the mapper ablation probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapperProbeConfig {
    /// Glyph-embedding width `D`.
    pub embed_dim: usize,
    /// Key/value width `D_kv`; the probe is meant for `D != D_kv`.
    pub kv_dim: usize,
    pub hidden: usize,
    pub heads: usize,
    pub grid: usize,
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub steps: usize,
    pub lr: f64,
}

impl Default for MapperProbeConfig {
    fn default() -> Self {
        Self {
            embed_dim: 8,
            kv_dim: 12,
            hidden: 32,
            heads: 2,
            grid: 8,
            train_scenes: 24,
            test_scenes: 24,
            steps: 400,
            lr: 0.5,
        }
    }
}

/// Held-out reconstruction losses of the two probe arms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapperProbeOutcome {
    pub loss_with_mapper: f64,
    pub loss_without_mapper: f64,
}

/// One scene of the probe: fixed attention weights over global and glyph
/// tokens, glyph embeddings and the fixed global values.
struct Scene {
    weights: Vec<Matrix>,
    glyph: Matrix,
    global_values: Matrix,
    target: Matrix,
}

fn random_boxes(rng: &mut impl Rng, grid: usize) -> Vec<BBox> {
    (0..rng.gen_range(1..=3))
        .map(|_| {
            let w = rng.gen_range(1..=grid as u32 / 2);
            let h = rng.gen_range(1..=grid as u32 / 2);
            BBox::new(
                rng.gen_range(0..=grid as u32 - w),
                rng.gen_range(0..=grid as u32 - h),
                w,
                h,
            )
        })
        .collect()
}

/// Multiplies per-head weights (P x T) into `values` (T x D_kv) split by head.
fn attend(weights: &[Matrix], values: &Matrix) -> Matrix {
    let heads = weights.len();
    let dv = values.cols / heads;
    let p = weights[0].rows;
    let mut out = Matrix::zeros(p, values.cols);
    for (h, w) in weights.iter().enumerate() {
        for r in 0..p {
            for t in 0..w.cols {
                let wt = w.get(r, t);
                if wt != 0.0 {
                    for c in h * dv..(h + 1) * dv {
                        out.data[r * values.cols + c] += wt * values.get(t, c);
                    }
                }
            }
        }
    }
    out
}

// dL/dV for out = attend(weights, V).
fn attend_backward(weights: &[Matrix], d_out: &Matrix, tokens: usize) -> Matrix {
    let heads = weights.len();
    let dv = d_out.cols / heads;
    let mut dvals = Matrix::zeros(tokens, d_out.cols);
    for (h, w) in weights.iter().enumerate() {
        for r in 0..w.rows {
            for t in 0..tokens {
                let wt = w.get(r, t);
                if wt != 0.0 {
                    for c in h * dv..(h + 1) * dv {
                        dvals.data[t * d_out.cols + c] += wt * d_out.get(r, c);
                    }
                }
            }
        }
    }
    dvals
}

fn stack(global: &Matrix, glyph: &Matrix) -> Matrix {
    let mut data = global.data.clone();
    data.extend(&glyph.data);
    Matrix::from_vec(global.rows + glyph.rows, global.cols, data)
}

/// Toy reconstruction probe for the glyph mapper.
///
/// A fixed random teacher `V* = 2 tanh(A e + c) + s` maps glyph embeddings
/// into key/value space with a different scale, offset and curvature than
/// the embeddings themselves. Each scene lays random boxes over a grid, builds
/// the region mask and fixed queries/keys, and asks the attention output with
/// student values to reproduce the output with teacher values. Both arms get
/// a trainable affine projection `D -> D_kv` (the attention's own value
/// projection); only the mapper arm adds the nonlinear branch. Both are
/// trained by full-batch gradient descent from the same starting point and
/// scored on held-out scenes.
pub fn mapper_probe(
    cfg: &MapperProbeConfig,
    seed: u64,
) -> Result<MapperProbeOutcome, RegionAttnError> {
    let mut rng = stream(seed, &[0x7AB6]);
    let (d, dkv) = (cfg.embed_dim, cfg.kv_dim);
    let teacher_a = Matrix::random(dkv, d, 1.5 / (d as f64).sqrt(), &mut rng);
    let teacher_c: Vec<f64> = (0..dkv).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let teacher_s: Vec<f64> = (0..dkv).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let teacher = |e: &Matrix| {
        let mut out = Matrix::zeros(e.rows, dkv);
        for r in 0..e.rows {
            for o in 0..dkv {
                let z: f64 = teacher_a
                    .row(o)
                    .iter()
                    .zip(e.row(r))
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    + teacher_c[o];
                out.data[r * dkv + o] = 2.0 * z.tanh() + teacher_s[o];
            }
        }
        out
    };
    let qk_dim = 4 * cfg.heads;
    let make_scene = |rng: &mut GenRng| -> Result<Scene, RegionAttnError> {
        let boxes = random_boxes(rng, cfg.grid);
        let pa = assign_pixels(
            (cfg.grid, cfg.grid),
            (cfg.grid as u32, cfg.grid as u32),
            &boxes,
        );
        let per_box: Vec<usize> = boxes.iter().map(|_| rng.gen_range(1..=3)).collect();
        let global = 2;
        let tg = TokenGrouping::from_counts(global, &per_box)?;
        let mask = build_attention_mask(&pa, &tg)?;
        let q = Matrix::random(pa.len(), qk_dim, 1.0, rng);
        let k = Matrix::random(tg.len(), qk_dim, 1.0, rng);
        let weights = attention_weights(&q, &k, &mask, cfg.heads, Exec::Sequential)?;
        let glyph = Matrix::random(tg.len() - global, d, 1.0, rng);
        let global_values = Matrix::random(global, dkv, 1.0, rng);
        let target = attend(&weights, &stack(&global_values, &teacher(&glyph)));
        Ok(Scene {
            weights,
            glyph,
            global_values,
            target,
        })
    };
    let train: Vec<Scene> = (0..cfg.train_scenes)
        .map(|_| make_scene(&mut rng))
        .collect::<Result<_, _>>()?;
    let test: Vec<Scene> = (0..cfg.test_scenes)
        .map(|_| make_scene(&mut rng))
        .collect::<Result<_, _>>()?;

    let base = GlyphMapper::identity_init(d, cfg.hidden, dkv, seed);
    let with_mapper = train_mapper(base.clone(), &train, cfg, true)?;
    let without_mapper = train_mapper(base, &train, cfg, false)?;
    Ok(MapperProbeOutcome {
        loss_with_mapper: scene_loss(&with_mapper, &test, None).0,
        loss_without_mapper: scene_loss(&without_mapper, &test, None).0,
    })
}

// Mean squared reconstruction error over all scenes; optionally accumulates
// the mapper gradient.
fn scene_loss(
    mapper: &GlyphMapper,
    scenes: &[Scene],
    mut grad: Option<&mut MapperGrad>,
) -> (f64, usize) {
    let count: usize = scenes.iter().map(|s| s.target.data.len()).sum();
    let mut total = 0.0;
    for s in scenes {
        let mapped = map_glyph_embeddings(&s.glyph, mapper).expect("probe dims are consistent");
        let out = attend(&s.weights, &stack(&s.global_values, &mapped));
        let diff: Vec<f64> = out
            .data
            .iter()
            .zip(&s.target.data)
            .map(|(a, b)| a - b)
            .collect();
        total += diff.iter().map(|v| v * v).sum::<f64>();
        if let Some(g) = grad.as_deref_mut() {
            let d_out = Matrix::from_vec(
                out.rows,
                out.cols,
                diff.iter().map(|v| 2.0 * v / count as f64).collect(),
            );
            let dvals = attend_backward(&s.weights, &d_out, s.global_values.rows + s.glyph.rows);
            let start = s.global_values.rows * dvals.cols;
            let d_glyph = Matrix::from_vec(s.glyph.rows, dvals.cols, dvals.data[start..].to_vec());
            mapper.backward(&s.glyph, &d_glyph, g);
        }
    }
    (total / count as f64, count)
}

fn train_mapper(
    mut mapper: GlyphMapper,
    scenes: &[Scene],
    cfg: &MapperProbeConfig,
    nonlinear: bool,
) -> Result<GlyphMapper, RegionAttnError> {
    for _ in 0..cfg.steps {
        let mut grad = mapper.zero_grad();
        scene_loss(&mapper, scenes, Some(&mut grad));
        if !nonlinear {
            // the affine arm: only the skip projection and output bias train
            grad.w1
                .data
                .iter_mut()
                .chain(&mut grad.b1)
                .chain(&mut grad.w2.data)
                .for_each(|v| *v = 0.0);
        }
        mapper.apply(&grad, cfg.lr);
        if !mapper.is_finite() {
            return Err(RegionAttnError::DimMismatch("mapper probe diverged".into()));
        }
    }
    Ok(mapper)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assignment_examples() {
        let pa = assign_pixels((4, 5), (5, 4), &[]);
        assert!(pa.groups.iter().all(|&g| g == 0));
        let pa = assign_pixels((4, 5), (5, 4), &[BBox::new(0, 0, 5, 4)]);
        assert!(pa.groups.iter().all(|&g| g == 1));
        // nested: the inner box is smaller and wins inside itself
        let pa = assign_pixels(
            (6, 6),
            (6, 6),
            &[BBox::new(0, 0, 6, 6), BBox::new(2, 2, 2, 2)],
        );
        for r in 0..6 {
            for c in 0..6 {
                let inner = (2..4).contains(&r) && (2..4).contains(&c);
                assert_eq!(pa.groups[r * 6 + c], if inner { 2 } else { 1 });
            }
        }
        // equal areas: lowest index wins on the overlap
        let pa = assign_pixels(
            (4, 4),
            (4, 4),
            &[BBox::new(0, 0, 2, 2), BBox::new(1, 1, 2, 2)],
        );
        assert_eq!(pa.groups[4 + 1], 1);
        assert_eq!(pa.groups[2 * 4 + 2], 2);
    }

    #[test]
    fn coarse_grid_uses_area_overlap() {
        // 16x16 canvas on a 2x2 grid: a box touching only the top-left
        // quadrant claims exactly that cell
        let pa = assign_pixels((2, 2), (16, 16), &[BBox::new(3, 3, 5, 5)]);
        assert_eq!(pa.groups, vec![1, 0, 0, 0]);
        // a box ending exactly on the cell border does not leak into the next cell
        let pa = assign_pixels((2, 2), (16, 16), &[BBox::new(0, 0, 8, 16)]);
        assert_eq!(pa.groups, vec![1, 0, 1, 0]);
    }

    #[test]
    fn mask_rows_follow_groups() {
        let pa = PixelAssignment {
            rows: 1,
            cols: 3,
            groups: vec![0, 2, 1],
        };
        let tg = TokenGrouping::from_counts(2, &[1, 2]).unwrap();
        let m = build_attention_mask(&pa, &tg).unwrap();
        assert_eq!(m.row(0), &[true, true, false, false, false]);
        assert_eq!(m.row(1), &[false, false, false, true, true]);
        assert_eq!(m.row(2), &[false, false, true, false, false]);
        assert!(m.rows_ok());
        let empty_box = TokenGrouping::from_counts(2, &[1, 0]).unwrap();
        assert_eq!(
            build_attention_mask(&pa, &empty_box),
            Err(RegionAttnError::MissingGroup { group: 2 })
        );
        assert_eq!(
            TokenGrouping::from_counts(0, &[1]),
            Err(RegionAttnError::NoGlobalToken)
        );
    }

    #[test]
    fn singleton_softmax_returns_the_value() {
        let mut rng = stream(1, &[]);
        let q = Matrix::random(5, 4, 1.0, &mut rng);
        let k = Matrix::random(1, 4, 1.0, &mut rng);
        let v = Matrix::from_vec(1, 6, vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]);
        let out = masked_cross_attention(&q, &k, &v, &AttentionMask::all_true(5, 1), 2).unwrap();
        for p in 0..5 {
            assert_eq!(out.row(p), v.row(0));
        }
    }

    #[test]
    fn dimension_errors() {
        let q = Matrix::zeros(3, 4);
        let k = Matrix::zeros(2, 4);
        let v = Matrix::zeros(2, 6);
        let m = AttentionMask::all_true(3, 2);
        assert!(masked_cross_attention(&q, &k, &v, &m, 2).is_ok());
        assert!(matches!(
            masked_cross_attention(&q, &k, &v, &m, 3),
            Err(RegionAttnError::DimMismatch(_))
        ));
        assert!(matches!(
            masked_cross_attention(&q, &Matrix::zeros(2, 5), &v, &m, 1),
            Err(RegionAttnError::DimMismatch(_))
        ));
        assert!(matches!(
            masked_cross_attention(&q, &k, &Matrix::zeros(3, 6), &m, 1),
            Err(RegionAttnError::DimMismatch(_))
        ));
        assert!(matches!(
            masked_cross_attention(&q, &k, &v, &AttentionMask::all_true(3, 3), 1),
            Err(RegionAttnError::DimMismatch(_))
        ));
        let mapper = GlyphMapper::identity_init(4, 8, 6, 0);
        assert!(matches!(
            map_glyph_embeddings(&Matrix::zeros(2, 5), &mapper),
            Err(RegionAttnError::DimMismatch(_))
        ));
    }

    #[test]
    fn mapper_identity_and_bias_path() {
        let mut rng = stream(2, &[]);
        let mapper = GlyphMapper::identity_init(6, 10, 6, 3);
        let x = Matrix::random(4, 6, 1.0, &mut rng);
        assert_eq!(map_glyph_embeddings(&x, &mapper).unwrap(), x);

        let mut m = GlyphMapper::identity_init(3, 5, 4, 4);
        m.w2 = Matrix::random(4, 5, 1.0, &mut rng);
        m.b1 = (0..5).map(|i| 0.1 * i as f64).collect();
        m.b2 = vec![1.0, 2.0, 3.0, 4.0];
        let y = map_glyph_embeddings(&Matrix::zeros(1, 3), &m).unwrap();
        for o in 0..4 {
            let expect: f64 =
                m.b2[o] + (0..5).map(|j| m.w2.get(o, j) * m.b1[j].tanh()).sum::<f64>();
            assert!((y.get(0, o) - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn execution_strategy_does_not_change_output() {
        let mut rng = stream(5, &[]);
        let q = Matrix::random(40, 8, 1.0, &mut rng);
        let k = Matrix::random(7, 8, 1.0, &mut rng);
        let v = Matrix::random(7, 6, 1.0, &mut rng);
        let m = AttentionMask::all_true(40, 7);
        let a = masked_cross_attention_with(&q, &k, &v, &m, 2, Exec::Sequential).unwrap();
        let b = masked_cross_attention_with(&q, &k, &v, &m, 2, Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }
}

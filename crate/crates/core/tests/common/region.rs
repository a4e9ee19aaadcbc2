//! Random region-attention configurations and an independent checker for the
//! mask invariants, shared by the property tests and the acceptance suite.

use glyphtext_core::exec::Exec;
use glyphtext_core::region_attn::{
    assign_pixels, attention_weights, build_attention_mask, masked_cross_attention, AttentionMask,
    Matrix, TokenGrouping,
};
use glyphtext_core::render::BBox;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub struct RegionConfig {
    pub grid: (usize, usize),
    pub canvas: (u32, u32),
    pub boxes: Vec<BBox>,
    pub tokens: TokenGrouping,
    pub heads: usize,
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
}

/// Grid up to 12x12 over a canvas 1x or 4x larger, 1-4 possibly overlapping
/// boxes with 1-3 glyph tokens each, 1-3 global tokens, 1, 2 or 4 heads.
pub fn random_config(rng: &mut ChaCha8Rng) -> RegionConfig {
    let grid = (rng.gen_range(1..=12), rng.gen_range(1..=12));
    let scale = if rng.gen_bool(0.5) { 1 } else { 4 };
    let canvas = (grid.1 as u32 * scale, grid.0 as u32 * scale);
    let boxes: Vec<BBox> = (0..rng.gen_range(1..=4))
        .map(|_| {
            let w = rng.gen_range(1..=canvas.0);
            let h = rng.gen_range(1..=canvas.1);
            BBox::new(
                rng.gen_range(0..=canvas.0 - w),
                rng.gen_range(0..=canvas.1 - h),
                w,
                h,
            )
        })
        .collect();
    let per_box: Vec<usize> = boxes.iter().map(|_| rng.gen_range(1..=3)).collect();
    let tokens =
        TokenGrouping::from_counts(rng.gen_range(1..=3), &per_box).expect("has global tokens");
    let heads = [1, 2, 4][rng.gen_range(0..3)];
    let p = grid.0 * grid.1;
    let t = tokens.len();
    let q = Matrix::random(p, 4 * heads, 1.0, rng);
    let k = Matrix::random(t, 4 * heads, 1.0, rng);
    let v = Matrix::random(t, 2 * heads, 1.0, rng);
    RegionConfig {
        grid,
        canvas,
        boxes,
        tokens,
        heads,
        q,
        k,
        v,
    }
}

// Independent oracle for the owner of a cell: real-valued rectangle overlap,
// smallest area first, then lowest index.
fn expected_group(cfg: &RegionConfig, r: usize, c: usize) -> usize {
    let cw = cfg.canvas.0 as f64 / cfg.grid.1 as f64;
    let ch = cfg.canvas.1 as f64 / cfg.grid.0 as f64;
    let (x0, x1, y0, y1) = (
        c as f64 * cw,
        (c + 1) as f64 * cw,
        r as f64 * ch,
        (r + 1) as f64 * ch,
    );
    let mut best: Option<(u64, usize)> = None;
    for (i, b) in cfg.boxes.iter().enumerate() {
        let ox = (x1.min(b.right() as f64) - x0.max(b.x as f64)).max(0.0);
        let oy = (y1.min(b.bottom() as f64) - y0.max(b.y as f64)).max(0.0);
        if ox * oy > 0.0 {
            let key = (b.w as u64 * b.h as u64, i);
            if best.is_none_or(|bk| key < bk) {
                best = Some(key);
            }
        }
    }
    best.map_or(0, |(_, i)| i + 1)
}

/// Largest attention weight a pixel puts on a token of another group.
pub fn leakage(cfg: &RegionConfig, mask: &AttentionMask) -> f64 {
    let pa = assign_pixels(cfg.grid, cfg.canvas, &cfg.boxes);
    let weights = attention_weights(&cfg.q, &cfg.k, mask, cfg.heads, Exec::Sequential)
        .expect("consistent dims");
    let mut worst: f64 = 0.0;
    for w in &weights {
        for p in 0..w.rows {
            for t in 0..w.cols {
                if pa.groups[p] != cfg.tokens.groups[t] {
                    worst = worst.max(w.get(p, t));
                }
            }
        }
    }
    worst
}

/// Checks partition, row-stochasticity, zero leakage and locality for the
/// region mask of `cfg`.
pub fn check_region_invariants(cfg: &RegionConfig, rng: &mut ChaCha8Rng) -> Result<(), String> {
    let pa = assign_pixels(cfg.grid, cfg.canvas, &cfg.boxes);
    // partition: exactly one group per pixel, matching the oracle
    if pa.groups.len() != cfg.grid.0 * cfg.grid.1 {
        return Err("assignment size".into());
    }
    for r in 0..cfg.grid.0 {
        for c in 0..cfg.grid.1 {
            let (got, want) = (pa.groups[r * cfg.grid.1 + c], expected_group(cfg, r, c));
            if got != want {
                return Err(format!("cell ({r},{c}) in group {got}, expected {want}"));
            }
        }
    }
    let mask = build_attention_mask(&pa, &cfg.tokens).map_err(|e| e.to_string())?;
    if !mask.rows_ok() {
        return Err("empty mask row".into());
    }
    let weights = attention_weights(&cfg.q, &cfg.k, &mask, cfg.heads, Exec::Sequential)
        .map_err(|e| e.to_string())?;
    for (h, w) in weights.iter().enumerate() {
        for p in 0..w.rows {
            let sum: f64 = w.row(p).iter().sum();
            if (sum - 1.0).abs() >= 1e-9 {
                return Err(format!("head {h} row {p} sums to {sum}"));
            }
            for t in 0..w.cols {
                if !mask.get(p, t) && w.get(p, t) != 0.0 {
                    return Err(format!(
                        "head {h} pixel {p} leaks {} onto token {t}",
                        w.get(p, t)
                    ));
                }
            }
        }
    }
    // locality: perturb the values of one group's tokens
    let base = masked_cross_attention(&cfg.q, &cfg.k, &cfg.v, &mask, cfg.heads)
        .map_err(|e| e.to_string())?;
    let k = rng.gen_range(0..=cfg.boxes.len());
    let mut v2 = cfg.v.clone();
    for (t, &g) in cfg.tokens.groups.iter().enumerate() {
        if g == k {
            for x in v2.row_mut(t) {
                *x += rng.gen_range(-5.0..5.0);
            }
        }
    }
    let out =
        masked_cross_attention(&cfg.q, &cfg.k, &v2, &mask, cfg.heads).map_err(|e| e.to_string())?;
    for p in 0..out.rows {
        let diff = out
            .row(p)
            .iter()
            .zip(base.row(p))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if pa.groups[p] != k && diff != 0.0 {
            return Err(format!(
                "perturbing group {k} moved pixel {p} (group {}) by {diff}",
                pa.groups[p]
            ));
        }
        if pa.groups[p] == k && diff == 0.0 {
            return Err(format!(
                "perturbing group {k} left its own pixel {p} unchanged"
            ));
        }
    }
    Ok(())
}

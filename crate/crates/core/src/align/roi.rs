use super::{AlignError, FeatureMap};
use crate::render::BBox;

// Bilinear read at continuous grid position (u, v); cell (r, c) is centred
// at (c + 0.5, r + 0.5). Out-of-range positions clamp to the border cells.
fn bilinear(fm: &FeatureMap, u: f64, v: f64, out: &mut [f64]) {
    let cu = (u - 0.5).clamp(0.0, (fm.cols - 1) as f64);
    let cv = (v - 0.5).clamp(0.0, (fm.rows - 1) as f64);
    let (c0, r0) = (cu.floor() as usize, cv.floor() as usize);
    let (c1, r1) = ((c0 + 1).min(fm.cols - 1), (r0 + 1).min(fm.rows - 1));
    let (fx, fy) = (cu - c0 as f64, cv - r0 as f64);
    let weights = [
        ((1.0 - fx) * (1.0 - fy), r0, c0),
        (fx * (1.0 - fy), r0, c1),
        ((1.0 - fx) * fy, r1, c0),
        (fx * fy, r1, c1),
    ];
    for (w, r, c) in weights {
        if w != 0.0 {
            for (o, x) in out.iter_mut().zip(fm.cell(r, c)) {
                *o += w * x;
            }
        }
    }
}

/// ROIAlign with an `s x s` output grid and 2x2 bilinear samples per bin,
/// averaged over all bins into one vector. The box is clipped to the canvas
/// first; no renormalization is applied.
pub fn roi_align(fm: &FeatureMap, bbox: &BBox, s: usize) -> Result<Vec<f64>, AlignError> {
    if s == 0 {
        return Err(AlignError::Precondition(
            "ROIAlign output size must be at least 1".into(),
        ));
    }
    let (x1, y1) = (
        bbox.right().min(fm.canvas_width),
        bbox.bottom().min(fm.canvas_height),
    );
    if bbox.x >= x1 || bbox.y >= y1 {
        return Err(AlignError::EmptyIntersection);
    }
    let sx = fm.cols as f64 / fm.canvas_width as f64;
    let sy = fm.rows as f64 / fm.canvas_height as f64;
    let (gx0, gx1) = (bbox.x as f64 * sx, x1 as f64 * sx);
    let (gy0, gy1) = (bbox.y as f64 * sy, y1 as f64 * sy);
    let mut acc = vec![0.0; fm.dim];
    for by in 0..s {
        for bx in 0..s {
            for sy_i in 0..2 {
                for sx_i in 0..2 {
                    let u = gx0 + (gx1 - gx0) * (bx as f64 + (sx_i as f64 + 0.5) / 2.0) / s as f64;
                    let v = gy0 + (gy1 - gy0) * (by as f64 + (sy_i as f64 + 0.5) / 2.0) / s as f64;
                    bilinear(fm, u, v, &mut acc);
                }
            }
        }
    }
    let n = (4 * s * s) as f64;
    acc.iter_mut().for_each(|v| *v /= n);
    Ok(acc)
}

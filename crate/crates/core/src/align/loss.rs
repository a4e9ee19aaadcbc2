use serde::{Deserialize, Serialize};

use super::{dot, log_sum_exp, AlignError};

/// A box embedding `x` and its text embedding `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxPair {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Boxes grouped by image. Losses treat every box of every image as one
/// instance; gradients are returned in flattened (image-major) order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingBatch {
    pub images: Vec<Vec<BoxPair>>,
}

impl EmbeddingBatch {
    pub fn boxes(&self) -> impl Iterator<Item = &BoxPair> {
        self.images.iter().flatten()
    }

    pub fn box_count(&self) -> usize {
        self.images.iter().map(Vec::len).sum()
    }
}

/// Augmented pairs per box, in the batch's flattened order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HardNegativeBatch {
    pub per_box: Vec<Vec<BoxPair>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxGrad {
    pub loss: f64,
    pub dx: Vec<Vec<f64>>,
    pub dy: Vec<Vec<f64>>,
    /// Derivative with respect to the log-temperature `s` (`t = e^s`).
    pub ds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HardGrad {
    pub loss: f64,
    pub dx: Vec<Vec<f64>>,
    pub dy: Vec<Vec<f64>>,
    pub dx_neg: Vec<Vec<Vec<f64>>>,
    pub dy_neg: Vec<Vec<Vec<f64>>>,
    pub ds: f64,
}

/// Which terms the hard-negative denominators sum over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HardDenominator {
    /// Positive plus all augmented terms: a proper softmax.
    #[default]
    IncludePositive,
    /// Augmented terms only.
    NegativesOnly,
}

fn check_finite(v: &[f64], what: &'static str) -> Result<(), AlignError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(AlignError::NonFinite(what))
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|l| (l - lse).exp()).collect()
}

fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

/// Box-level symmetric contrastive loss over all boxes of all images with
/// temperature `t = e^s`:
///
/// `L = -1/(2N) Σ_n [log softmax_row(n)[n] + log softmax_col(n)[n]]`
/// with logits `t x_n·y_m`.
pub fn box_contrastive_loss(batch: &EmbeddingBatch, s: f64) -> Result<BoxGrad, AlignError> {
    let pairs: Vec<&BoxPair> = batch.boxes().collect();
    let n = pairs.len();
    if n == 0 {
        return Err(AlignError::Precondition("batch has no boxes".into()));
    }
    for p in &pairs {
        check_finite(&p.x, "box embedding")?;
        check_finite(&p.y, "text embedding")?;
    }
    check_finite(&[s], "log-temperature")?;
    let t = s.exp();
    let sim: Vec<Vec<f64>> = pairs
        .iter()
        .map(|a| pairs.iter().map(|b| dot(&a.x, &b.y)).collect())
        .collect();
    let logits: Vec<Vec<f64>> = sim
        .iter()
        .map(|row| row.iter().map(|v| t * v).collect())
        .collect();

    let mut loss = 0.0;
    // g[a][b] = dL/dlogit[a][b]
    let mut g = vec![vec![0.0; n]; n];
    let scale = 1.0 / (2.0 * n as f64);
    for a in 0..n {
        let row = &logits[a];
        loss -= row[a] - log_sum_exp(row);
        for (b, p) in softmax(row).into_iter().enumerate() {
            g[a][b] += scale * p;
        }
        g[a][a] -= scale;

        let col: Vec<f64> = (0..n).map(|b| logits[b][a]).collect();
        loss -= col[a] - log_sum_exp(&col);
        for (b, p) in softmax(&col).into_iter().enumerate() {
            g[b][a] += scale * p;
        }
        g[a][a] -= scale;
    }
    loss *= scale;

    let dim_x = pairs[0].x.len();
    let dim_y = pairs[0].y.len();
    let mut dx = vec![vec![0.0; dim_x]; n];
    let mut dy = vec![vec![0.0; dim_y]; n];
    let mut ds = 0.0;
    for a in 0..n {
        for b in 0..n {
            let w = g[a][b];
            if w == 0.0 {
                continue;
            }
            axpy(&mut dx[a], t * w, &pairs[b].y);
            axpy(&mut dy[b], t * w, &pairs[a].x);
            ds += w * logits[a][b];
        }
    }
    if !loss.is_finite() || !ds.is_finite() {
        return Err(AlignError::NonFinite("box loss"));
    }
    Ok(BoxGrad { loss, dx, dy, ds })
}

// -log of the first entry's share. Returns (loss, dloss/dlogit).
fn anchor_term(logits: &[f64], denom: HardDenominator) -> (f64, Vec<f64>) {
    match denom {
        HardDenominator::IncludePositive => {
            let mut g = softmax(logits);
            g[0] -= 1.0;
            (log_sum_exp(logits) - logits[0], g)
        }
        HardDenominator::NegativesOnly => {
            let rest = &logits[1..];
            let mut g = vec![-1.0];
            g.extend(softmax(rest));
            (log_sum_exp(rest) - logits[0], g)
        }
    }
}

/// Hard-negative loss: for every box, the anchor image embedding must pick
/// its own text over the augmented texts and the anchor text must pick its
/// own image over the augmented images. Normalized by `2N`.
pub fn hard_negative_loss(
    batch: &EmbeddingBatch,
    negatives: &HardNegativeBatch,
    s: f64,
    denom: HardDenominator,
) -> Result<HardGrad, AlignError> {
    let pairs: Vec<&BoxPair> = batch.boxes().collect();
    let n = pairs.len();
    if n == 0 {
        return Err(AlignError::Precondition("batch has no boxes".into()));
    }
    if negatives.per_box.len() != n {
        return Err(AlignError::DimMismatch(format!(
            "{} negative sets for {n} boxes",
            negatives.per_box.len()
        )));
    }
    if negatives.per_box.iter().any(Vec::is_empty) {
        return Err(AlignError::Precondition(
            "every box needs at least one augmented pair".into(),
        ));
    }
    check_finite(&[s], "log-temperature")?;
    let t = s.exp();
    let scale = 1.0 / (2.0 * n as f64);
    let mut out = HardGrad {
        loss: 0.0,
        dx: Vec::with_capacity(n),
        dy: Vec::with_capacity(n),
        dx_neg: Vec::with_capacity(n),
        dy_neg: Vec::with_capacity(n),
        ds: 0.0,
    };
    for (p, negs) in pairs.iter().zip(&negatives.per_box) {
        check_finite(&p.x, "box embedding")?;
        check_finite(&p.y, "text embedding")?;
        for q in negs {
            check_finite(&q.x, "augmented box embedding")?;
            check_finite(&q.y, "augmented text embedding")?;
        }
        let pos = dot(&p.x, &p.y);
        // image anchor against augmented texts
        let sims_a: Vec<f64> = std::iter::once(pos)
            .chain(negs.iter().map(|q| dot(&p.x, &q.y)))
            .collect();
        // text anchor against augmented images
        let sims_b: Vec<f64> = std::iter::once(pos)
            .chain(negs.iter().map(|q| dot(&q.x, &p.y)))
            .collect();
        let (la, ga) = anchor_term(&sims_a.iter().map(|v| t * v).collect::<Vec<_>>(), denom);
        let (lb, gb) = anchor_term(&sims_b.iter().map(|v| t * v).collect::<Vec<_>>(), denom);
        out.loss += scale * (la + lb);

        let mut dx = vec![0.0; p.x.len()];
        let mut dy = vec![0.0; p.y.len()];
        let mut dxn = vec![vec![0.0; p.x.len()]; negs.len()];
        let mut dyn_ = vec![vec![0.0; p.y.len()]; negs.len()];
        // positive logit appears on both sides
        let w0 = scale * (ga[0] + gb[0]);
        axpy(&mut dx, t * w0, &p.y);
        axpy(&mut dy, t * w0, &p.x);
        out.ds += w0 * t * pos;
        for (k, q) in negs.iter().enumerate() {
            let wa = scale * ga[k + 1];
            axpy(&mut dx, t * wa, &q.y);
            axpy(&mut dyn_[k], t * wa, &p.x);
            out.ds += wa * t * sims_a[k + 1];
            let wb = scale * gb[k + 1];
            axpy(&mut dy, t * wb, &q.x);
            axpy(&mut dxn[k], t * wb, &p.y);
            out.ds += wb * t * sims_b[k + 1];
        }
        out.dx.push(dx);
        out.dy.push(dy);
        out.dx_neg.push(dxn);
        out.dy_neg.push(dyn_);
    }
    if !out.loss.is_finite() || !out.ds.is_finite() {
        return Err(AlignError::NonFinite("hard-negative loss"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn e(dim: usize, k: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[k] = 1.0;
        v
    }

    fn unit(rng: &mut impl Rng, d: usize) -> Vec<f64> {
        super::super::normalized(
            &(0..d)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect::<Vec<f64>>(),
        )
    }

    #[test]
    fn closed_forms() {
        let single = EmbeddingBatch {
            images: vec![vec![BoxPair {
                x: vec![0.6, 0.8],
                y: vec![0.0, 1.0],
            }]],
        };
        assert_eq!(box_contrastive_loss(&single, 2.7).unwrap().loss, 0.0);

        let two = EmbeddingBatch {
            images: vec![vec![
                BoxPair {
                    x: e(2, 0),
                    y: e(2, 0),
                },
                BoxPair {
                    x: e(2, 1),
                    y: e(2, 1),
                },
            ]],
        };
        let expected = (1.0 + (-1.0f64).exp()).ln();
        assert!((box_contrastive_loss(&two, 0.0).unwrap().loss - expected).abs() < 1e-12);

        let anchor = EmbeddingBatch {
            images: vec![vec![BoxPair {
                x: e(3, 0),
                y: e(3, 0),
            }]],
        };
        let orth = HardNegativeBatch {
            per_box: vec![vec![BoxPair {
                x: e(3, 1),
                y: e(3, 2),
            }]],
        };
        let h = hard_negative_loss(&anchor, &orth, 0.0, HardDenominator::IncludePositive).unwrap();
        assert!((h.loss - expected).abs() < 1e-12);

        for g in [1usize, 3] {
            let same = HardNegativeBatch {
                per_box: vec![vec![
                    BoxPair {
                        x: e(3, 0),
                        y: e(3, 0)
                    };
                    g
                ]],
            };
            let h =
                hard_negative_loss(&anchor, &same, 0.0, HardDenominator::IncludePositive).unwrap();
            assert!((h.loss - (1.0 + g as f64).ln()).abs() < 1e-12);
            let lit =
                hard_negative_loss(&anchor, &same, 0.0, HardDenominator::NegativesOnly).unwrap();
            assert!((lit.loss - (g as f64).ln()).abs() < 1e-12);
        }
        assert!(hard_negative_loss(
            &anchor,
            &HardNegativeBatch {
                per_box: vec![vec![]]
            },
            0.0,
            HardDenominator::default()
        )
        .is_err());
    }

    #[test]
    fn relabeling_invariance() {
        let mut rng = seeded(3);
        let images: Vec<Vec<BoxPair>> = (0..3)
            .map(|i| {
                (0..=i)
                    .map(|_| BoxPair {
                        x: unit(&mut rng, 5),
                        y: unit(&mut rng, 5),
                    })
                    .collect()
            })
            .collect();
        let a = box_contrastive_loss(
            &EmbeddingBatch {
                images: images.clone(),
            },
            1.3,
        )
        .unwrap()
        .loss;
        let mut shuffled = images;
        shuffled.reverse();
        shuffled[0].reverse();
        let b = box_contrastive_loss(&EmbeddingBatch { images: shuffled }, 1.3)
            .unwrap()
            .loss;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn off_diagonal_similarity_monotonicity() {
        let mut rng = seeded(4);
        for _ in 0..50 {
            let pairs: Vec<BoxPair> = (0..3)
                .map(|_| BoxPair {
                    x: unit(&mut rng, 4),
                    y: unit(&mut rng, 4),
                })
                .collect();
            let base = box_contrastive_loss(
                &EmbeddingBatch {
                    images: vec![pairs.clone()],
                },
                0.5,
            )
            .unwrap();
            // move x_0 against y_1 orthogonally to y_0 and y_2: only x_0·y_1 drops
            let mut moved = pairs.clone();
            let y1 = &pairs[1].y;
            let o0 = super::super::normalized(&pairs[0].y);
            let mut o2 = pairs[2].y.clone();
            let c = dot(&o2, &o0);
            axpy(&mut o2, -c, &o0);
            let o2 = super::super::normalized(&o2);
            let mut proj = y1.clone();
            axpy(&mut proj, -dot(y1, &o0), &o0);
            axpy(&mut proj, -dot(y1, &o2), &o2);
            if super::super::norm(&proj) < 1e-3 {
                continue;
            }
            axpy(&mut moved[0].x, -0.05, &proj);
            let after = box_contrastive_loss(
                &EmbeddingBatch {
                    images: vec![moved.clone()],
                },
                0.5,
            )
            .unwrap();
            assert!(dot(&moved[0].x, y1) < dot(&pairs[0].x, y1));
            assert!(after.loss < base.loss, "{} !< {}", after.loss, base.loss);
        }
    }

    #[test]
    fn large_logits_stay_finite() {
        let two = EmbeddingBatch {
            images: vec![vec![
                BoxPair {
                    x: e(2, 0),
                    y: e(2, 0),
                },
                BoxPair {
                    x: e(2, 1),
                    y: vec![-1.0, 0.0],
                },
            ]],
        };
        let r = box_contrastive_loss(&two, 700f64.ln()).unwrap();
        assert!(r.loss.is_finite() && r.ds.is_finite());
        assert!(r.dx.iter().flatten().all(|v| v.is_finite()));
    }
}

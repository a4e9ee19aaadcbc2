//! Finite-difference oracle for the alignment objective, shared by the core
//! integration tests and the acceptance suite.

use glyphtext_core::align::{
    align_objective, BoxSample, HardDenominator, SparseFeatures, TextEncoder, TextInput,
};
use glyphtext_core::dataset::FontCodebook;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-4;
/// Blocks whose gradient is smaller than this everywhere are compared
/// absolutely.
pub const SCALE_FLOOR: f64 = 1e-8;
pub const DIM: usize = 8;
pub const BUCKETS: usize = 4;

pub struct Problem {
    pub codebook: FontCodebook,
    pub text: TextEncoder,
    pub log_t: f64,
    pub images: Vec<Vec<BoxSample>>,
    pub g: usize,
}

fn random_input(rng: &mut ChaCha8Rng, byte_dim: usize, cb: &FontCodebook) -> TextInput {
    let k = rng.gen_range(1..=6);
    let mut bytes: Vec<(usize, f64)> = (0..k)
        .map(|_| (rng.gen_range(0..byte_dim), rng.gen_range(0.1..1.0)))
        .collect();
    bytes.sort_by_key(|e| e.0);
    bytes.dedup_by_key(|e| e.0);
    TextInput {
        bytes: SparseFeatures(bytes),
        colors: vec![rng.gen_range(0..cb.color_count())],
        fonts: vec![rng.gen_range(0..cb.font_count())],
    }
}

fn random_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// A random batch: 1-2 images of 1-3 boxes, G in 1..=4 augmented pairs per
/// box, D = 8, temperature between 1 and 1/0.07.
pub fn random_problem(rng: &mut ChaCha8Rng) -> Problem {
    let codebook = FontCodebook::build(4, 5, 4, rng.gen());
    let mut text = TextEncoder::new(DIM, BUCKETS, &codebook, rng.gen());
    // move the tables off their initial values so their gradients are generic
    for v in text.color_emb.iter_mut().chain(text.font_emb.iter_mut()) {
        *v += rng.gen_range(-0.3..0.3);
    }
    let byte_dim = glyphtext_core::align::byte_feature_dim(BUCKETS);
    let g = rng.gen_range(1..=4);
    let images = (0..rng.gen_range(1..=2))
        .map(|_| {
            (0..rng.gen_range(1..=3))
                .map(|_| BoxSample {
                    text: String::new(),
                    x: random_vec(rng, DIM),
                    phi: random_input(rng, byte_dim, &codebook),
                    negatives: (0..g)
                        .map(|_| (random_vec(rng, DIM), random_input(rng, byte_dim, &codebook)))
                        .collect(),
                })
                .collect()
        })
        .collect();
    Problem {
        codebook,
        text,
        log_t: rng.gen_range(0.0..(1.0f64 / 0.07).ln()),
        images,
        g,
    }
}

fn loss(p: &Problem, text: &TextEncoder, log_t: f64, denom: HardDenominator) -> f64 {
    let boxes: Vec<&BoxSample> = p.images.iter().flatten().collect();
    align_objective(text, log_t, &boxes, p.g, denom)
        .expect("finite objective")
        .loss()
}

/// Relative error of a gradient block: the largest componentwise deviation
/// divided by the block's largest magnitude. The central-difference
/// truncation error is O(h^2) in absolute terms, so dividing a near-zero
/// component by itself would measure only that noise.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let dev = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|v| v.abs())
        .fold(SCALE_FLOOR, f64::max);
    dev / scale
}

/// Largest relative error between the analytic gradient and central
/// differences over the parameter blocks W, color table, font table and
/// the log-temperature.
pub fn max_relative_error(p: &Problem, denom: HardDenominator) -> f64 {
    max_relative_error_with_step(p, denom, STEP)
}

pub fn max_relative_error_with_step(p: &Problem, denom: HardDenominator, h: f64) -> f64 {
    let boxes: Vec<&BoxSample> = p.images.iter().flatten().collect();
    let obj = align_objective(&p.text, p.log_t, &boxes, p.g, denom).expect("finite objective");
    let mut worst = relative_error(
        &[obj.ds],
        &[
            (loss(p, &p.text, p.log_t + h, denom) - loss(p, &p.text, p.log_t - h, denom))
                / (2.0 * h),
        ],
    );
    type Field = fn(&mut TextEncoder) -> &mut Vec<f64>;
    let fields: [(Field, &Vec<f64>); 3] = [
        (|t| &mut t.w, &obj.grad.w),
        (|t| &mut t.color_emb, &obj.grad.color_emb),
        (|t| &mut t.font_emb, &obj.grad.font_emb),
    ];
    for (field, analytic) in fields {
        let mut probe = p.text.clone();
        let mut numeric = Vec::with_capacity(analytic.len());
        for i in 0..analytic.len() {
            let orig = field(&mut probe)[i];
            field(&mut probe)[i] = orig + h;
            let up = loss(p, &probe, p.log_t, denom);
            field(&mut probe)[i] = orig - h;
            let down = loss(p, &probe, p.log_t, denom);
            field(&mut probe)[i] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
        worst = worst.max(relative_error(analytic, &numeric));
    }
    worst
}

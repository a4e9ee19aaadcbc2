mod common;

use common::gradcheck::{max_relative_error, random_problem, relative_error, STEP};
use glyphtext_core::align::{
    box_contrastive_loss, hard_negative_loss, BoxPair, EmbeddingBatch, HardDenominator,
    HardNegativeBatch,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn objective_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..20 {
        let p = random_problem(&mut rng);
        let err = max_relative_error(&p, HardDenominator::IncludePositive);
        assert!(err < 1e-4, "trial {trial}: relative error {err:e}");
    }
}

#[test]
fn negatives_only_denominator_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for trial in 0..10 {
        let p = random_problem(&mut rng);
        let err = max_relative_error(&p, HardDenominator::NegativesOnly);
        assert!(err < 1e-4, "trial {trial}: relative error {err:e}");
    }
}

fn pair(rng: &mut ChaCha8Rng, d: usize) -> BoxPair {
    BoxPair {
        x: (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        y: (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    }
}

// Embedding-level gradients, with x and y treated as free vectors.
#[test]
fn loss_gradients_wrt_embeddings() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let d = 8;
    for _ in 0..10 {
        let images: Vec<Vec<BoxPair>> = (0..rng.gen_range(1..=2))
            .map(|_| {
                (0..rng.gen_range(1..=3))
                    .map(|_| pair(&mut rng, d))
                    .collect()
            })
            .collect();
        let g = rng.gen_range(1..=4);
        let n: usize = images.iter().map(Vec::len).sum();
        let negs: Vec<Vec<BoxPair>> = (0..n)
            .map(|_| (0..g).map(|_| pair(&mut rng, d)).collect())
            .collect();
        let s: f64 = rng.gen_range(0.0..2.0);

        // all embeddings as one flat vector: anchors (x then y) followed by negatives
        let mut flat: Vec<f64> = Vec::new();
        for p in images.iter().flatten().chain(negs.iter().flatten()) {
            flat.extend(&p.x);
            flat.extend(&p.y);
        }
        let unflatten = |v: &[f64]| {
            let mut it = v.chunks(d);
            let mut take = || BoxPair {
                x: it.next().unwrap().to_vec(),
                y: it.next().unwrap().to_vec(),
            };
            let b = EmbeddingBatch {
                images: images
                    .iter()
                    .map(|img| img.iter().map(|_| take()).collect())
                    .collect(),
            };
            let ng = HardNegativeBatch {
                per_box: negs
                    .iter()
                    .map(|set| set.iter().map(|_| take()).collect())
                    .collect(),
            };
            (b, ng)
        };
        let total = |v: &[f64], s: f64| {
            let (b, ng) = unflatten(v);
            box_contrastive_loss(&b, s).unwrap().loss
                + hard_negative_loss(&b, &ng, s, HardDenominator::IncludePositive)
                    .unwrap()
                    .loss
        };

        let (batch, hard) = unflatten(&flat);
        let gb = box_contrastive_loss(&batch, s).unwrap();
        let gh = hard_negative_loss(&batch, &hard, s, HardDenominator::IncludePositive).unwrap();
        let mut analytic = Vec::new();
        for k in 0..n {
            analytic.extend(gb.dx[k].iter().zip(&gh.dx[k]).map(|(a, b)| a + b));
            analytic.extend(gb.dy[k].iter().zip(&gh.dy[k]).map(|(a, b)| a + b));
        }
        for k in 0..n {
            for q in 0..g {
                analytic.extend(&gh.dx_neg[k][q]);
                analytic.extend(&gh.dy_neg[k][q]);
            }
        }
        let numeric: Vec<f64> = (0..flat.len())
            .map(|i| {
                let (mut up, mut down) = (flat.clone(), flat.clone());
                up[i] += STEP;
                down[i] -= STEP;
                (total(&up, s) - total(&down, s)) / (2.0 * STEP)
            })
            .collect();
        let err = relative_error(&analytic, &numeric);
        assert!(err < 1e-4, "embedding gradient relative error {err:e}");
        let numeric_s = (total(&flat, s + STEP) - total(&flat, s - STEP)) / (2.0 * STEP);
        assert!(relative_error(&[gb.ds + gh.ds], &[numeric_s]) < 1e-4);
    }
}

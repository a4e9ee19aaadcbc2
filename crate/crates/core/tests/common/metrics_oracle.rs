//! Brute-force reference implementations for the word metrics.

use rand::Rng;

const ALPHABET: &[char] = &['a', 'A', 'b', 'B', 'c'];

/// Short words over a tiny alphabet so that collisions and case variants are
/// frequent.
pub fn random_word<R: Rng>(rng: &mut R) -> String {
    let len = rng.gen_range(1..=4);
    (0..len)
        .map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())])
        .collect()
}

/// A ground-truth list of 1..=6 words and a prediction derived from it by
/// random drops, duplicates, case flips, typos and insertions.
pub fn random_pair<R: Rng>(rng: &mut R) -> (Vec<String>, Vec<String>) {
    let gt: Vec<String> = (0..rng.gen_range(1..=6))
        .map(|_| random_word(rng))
        .collect();
    let mut pred = Vec::new();
    for w in &gt {
        match rng.gen_range(0..6) {
            0 => {}
            1 => {
                pred.push(w.clone());
                pred.push(w.clone());
            }
            2 => pred.push(w.to_uppercase()),
            3 => pred.push(random_word(rng)),
            _ => pred.push(w.clone()),
        }
    }
    while pred.len() < 6 && rng.gen_bool(0.2) {
        pred.push(random_word(rng));
    }
    while pred.len() > 6 {
        pred.pop();
    }
    // shuffle
    for i in (1..pred.len()).rev() {
        let j = rng.gen_range(0..=i);
        pred.swap(i, j);
    }
    (pred, gt)
}

fn same(a: &str, b: &str, case_sensitive: bool) -> bool {
    if case_sensitive {
        a == b
    } else {
        a.to_lowercase() == b.to_lowercase()
    }
}

/// Maximum-cardinality matching on the equal-word bipartite graph by
/// exhaustive search.
pub fn max_matching(pred: &[String], gt: &[String], case_sensitive: bool) -> usize {
    fn go(i: usize, pred: &[String], gt: &[String], used: &mut Vec<bool>, cs: bool) -> usize {
        if i == pred.len() {
            return 0;
        }
        let mut best = go(i + 1, pred, gt, used, cs);
        for j in 0..gt.len() {
            if !used[j] && same(&pred[i], &gt[j], cs) {
                used[j] = true;
                best = best.max(1 + go(i + 1, pred, gt, used, cs));
                used[j] = false;
            }
        }
        best
    }
    go(0, pred, gt, &mut vec![false; gt.len()], case_sensitive)
}

/// Levenshtein distance from the recursive definition, memoized.
pub fn levenshtein_recursive(a: &str, b: &str) -> usize {
    fn go(
        a: &[char],
        b: &[char],
        memo: &mut std::collections::HashMap<(usize, usize), usize>,
    ) -> usize {
        if a.is_empty() {
            return b.len();
        }
        if b.is_empty() {
            return a.len();
        }
        if let Some(&v) = memo.get(&(a.len(), b.len())) {
            return v;
        }
        let sub = go(&a[1..], &b[1..], memo) + usize::from(a[0] != b[0]);
        let v = sub
            .min(go(&a[1..], b, memo) + 1)
            .min(go(a, &b[1..], memo) + 1);
        memo.insert((a.len(), b.len()), v);
        v
    }
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    go(&a, &b, &mut Default::default())
}

/// Minimum total cost over every partial injective map from ground-truth
/// words to predicted words; unmapped ground-truth words cost their length.
pub fn brute_force_edit_cost(pred: &[String], gt: &[String]) -> usize {
    fn go(i: usize, pred: &[String], gt: &[String], used: &mut Vec<bool>) -> usize {
        if i == gt.len() {
            return 0;
        }
        let mut best = gt[i].chars().count() + go(i + 1, pred, gt, used);
        for j in 0..pred.len() {
            if !used[j] {
                used[j] = true;
                best =
                    best.min(levenshtein_recursive(&gt[i], &pred[j]) + go(i + 1, pred, gt, used));
                used[j] = false;
            }
        }
        best
    }
    go(0, pred, gt, &mut vec![false; pred.len()])
}

/// Checks precision, recall, case-recall, edit distance and image correctness
/// of one pair against the oracles.
pub fn check_pair(pred: &[String], gt: &[String]) -> Result<(), String> {
    use glyphtext_core::metrics::*;
    for cs in [true, false] {
        let m = max_matching(pred, gt, cs);
        let p = if pred.is_empty() {
            0.0
        } else {
            m as f64 / pred.len() as f64
        };
        let r = m as f64 / gt.len() as f64;
        if word_precision(pred, gt, cs) != p {
            return Err(format!("precision cs={cs} {pred:?} {gt:?}"));
        }
        if word_recall(pred, gt, cs) != r {
            return Err(format!("recall cs={cs} {pred:?} {gt:?}"));
        }
    }
    let cost = brute_force_edit_cost(pred, gt);
    if total_edit_cost(pred, gt) != cost {
        return Err(format!(
            "edit cost {} vs {cost} for {pred:?} {gt:?}",
            total_edit_cost(pred, gt)
        ));
    }
    if mean_edit_distance(pred, gt) != cost as f64 / gt.len() as f64 {
        return Err(format!("mean edit distance {pred:?} {gt:?}"));
    }
    Ok(())
}

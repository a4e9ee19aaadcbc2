//! Word-level OCR metrics: precision, recall, case-recall, F-measure, mean
//! edit distance, image accuracy and character-count buckets.
//!
//! Words are compared as multisets: every predicted word can consume at most
//! one equal ground-truth word. Edit distance pairs words one-to-one by an
//! optimal assignment over character-level Levenshtein costs.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Exec;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One scored image: predicted and ground-truth words.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalPair {
    pub id: String,
    pub pred: Vec<String>,
    pub gt: Vec<String>,
    /// Character count of the rendered prompt text, for bucketing.
    pub prompt_chars: usize,
}

/// Splits on whitespace; punctuation stays part of the word.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_owned).collect()
}

fn fold_case(words: &[String], case_sensitive: bool) -> Vec<String> {
    if case_sensitive {
        words.to_vec()
    } else {
        words.iter().map(|w| w.to_lowercase()).collect()
    }
}

/// Size of the multiset intersection of `pred` and `gt`.
pub fn matched_words(pred: &[String], gt: &[String], case_sensitive: bool) -> usize {
    let mut available: HashMap<String, usize> = HashMap::new();
    for w in fold_case(gt, case_sensitive) {
        *available.entry(w).or_default() += 1;
    }
    fold_case(pred, case_sensitive)
        .into_iter()
        .filter(|w| match available.get_mut(w) {
            Some(n) if *n > 0 => {
                *n -= 1;
                true
            }
            _ => false,
        })
        .count()
}

/// Matched / |pred|; an empty prediction scores 0 unless the ground truth is
/// empty too.
pub fn word_precision(pred: &[String], gt: &[String], case_sensitive: bool) -> f64 {
    if pred.is_empty() {
        return if gt.is_empty() { 1.0 } else { 0.0 };
    }
    matched_words(pred, gt, case_sensitive) as f64 / pred.len() as f64
}

/// Matched / |gt|; an empty ground truth is trivially recalled.
pub fn word_recall(pred: &[String], gt: &[String], case_sensitive: bool) -> f64 {
    if gt.is_empty() {
        return 1.0;
    }
    matched_words(pred, gt, case_sensitive) as f64 / gt.len() as f64
}

/// Harmonic mean, 0 when both inputs are 0.
pub fn f_measure(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Character-level Levenshtein distance.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            cur[j + 1] = (prev[j] + usize::from(ca != cb))
                .min(prev[j + 1] + 1)
                .min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Minimum-cost perfect assignment on a square cost matrix (Hungarian
/// method with potentials). Returns the column assigned to each row.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    // 1-based arrays; column 0 is the virtual start
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut min_to = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let c = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if c < min_to[j] {
                        min_to[j] = c;
                        way[j] = j0;
                    }
                    if min_to[j] < delta {
                        delta = min_to[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[owner[j] - 1] = j - 1;
    }
    assignment
}

/// Total edit cost of the best one-to-one pairing: each ground-truth word is
/// either paired with a distinct predicted word (Levenshtein cost) or left
/// unmatched (cost = its length); unused predictions cost nothing.
pub fn total_edit_cost(pred: &[String], gt: &[String]) -> usize {
    let (g, p) = (gt.len(), pred.len());
    let n = g + p;
    if g == 0 {
        return 0;
    }
    // rows: gt words then p dummy rows; columns: pred words then g "unmatched" slots
    let mut cost = vec![vec![0.0; n]; n];
    for (i, gw) in gt.iter().enumerate() {
        let len = gw.chars().count() as f64;
        for (j, pw) in pred.iter().enumerate() {
            cost[i][j] = levenshtein(gw, pw) as f64;
        }
        for slot in &mut cost[i][p..] {
            *slot = len;
        }
    }
    let assignment = min_cost_assignment(&cost);
    (0..g).map(|i| cost[i][assignment[i]] as usize).sum()
}

/// [`total_edit_cost`] divided by |gt|; 0 for an empty ground truth.
pub fn mean_edit_distance(pred: &[String], gt: &[String]) -> f64 {
    if gt.is_empty() {
        return 0.0;
    }
    total_edit_cost(pred, gt) as f64 / gt.len() as f64
}

/// Fraction of pairs whose ground truth is fully recalled.
pub fn image_accuracy(pairs: &[EvalPair], case_sensitive: bool) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let ok = pairs
        .iter()
        .filter(|p| word_recall(&p.pred, &p.gt, case_sensitive) == 1.0)
        .count();
    ok as f64 / pairs.len() as f64
}

/// Character-count ranges of the benchmark prompts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Bucket {
    /// `[0, 20)`
    #[serde(rename = "0-20")]
    Short,
    /// `[20, 50)`
    #[serde(rename = "20-50")]
    Medium,
    /// `[50, 100)`
    #[serde(rename = "50-100")]
    Long,
    /// `[100, ∞)`
    #[serde(rename = "100+")]
    Paragraph,
}

impl Bucket {
    pub const ALL: [Bucket; 4] = [
        Bucket::Short,
        Bucket::Medium,
        Bucket::Long,
        Bucket::Paragraph,
    ];

    /// 1-based index in the order above.
    pub fn index(self) -> usize {
        self as usize + 1
    }

    pub fn label(self) -> &'static str {
        match self {
            Bucket::Short => "0-20",
            Bucket::Medium => "20-50",
            Bucket::Long => "50-100",
            Bucket::Paragraph => "100+",
        }
    }
}

pub fn bucket_of(prompt_chars: usize) -> Bucket {
    match prompt_chars {
        0..=19 => Bucket::Short,
        20..=49 => Bucket::Medium,
        50..=99 => Bucket::Long,
        _ => Bucket::Paragraph,
    }
}

/// Per-pair scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub precision: f64,
    pub recall: f64,
    pub case_recall: f64,
    pub edit_distance: f64,
    pub correct: bool,
}

pub fn score_pair(pair: &EvalPair, case_sensitive: bool) -> PairScore {
    let recall = word_recall(&pair.pred, &pair.gt, case_sensitive);
    PairScore {
        precision: word_precision(&pair.pred, &pair.gt, case_sensitive),
        recall,
        case_recall: word_recall(&pair.pred, &pair.gt, true),
        edit_distance: mean_edit_distance(&pair.pred, &pair.gt),
        correct: recall == 1.0,
    }
}

/// Means of the per-pair scores; F-measure from the mean precision and
/// recall.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub count: usize,
    pub precision: f64,
    pub recall: f64,
    pub case_recall: f64,
    pub f_measure: f64,
    pub mean_edit_distance: f64,
    pub image_accuracy: f64,
}

impl MetricsReport {
    pub fn from_scores(scores: &[PairScore]) -> Self {
        let n = scores.len();
        let mean = |f: fn(&PairScore) -> f64| {
            if n == 0 {
                0.0
            } else {
                scores.iter().map(f).sum::<f64>() / n as f64
            }
        };
        let precision = mean(|s| s.precision);
        let recall = mean(|s| s.recall);
        Self {
            count: n,
            precision,
            recall,
            case_recall: mean(|s| s.case_recall),
            f_measure: f_measure(precision, recall),
            mean_edit_distance: mean(|s| s.edit_distance),
            image_accuracy: mean(|s| f64::from(u8::from(s.correct))),
        }
    }
}

/// Overall and per-bucket metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub case_sensitive: bool,
    pub overall: MetricsReport,
    pub buckets: BTreeMap<Bucket, MetricsReport>,
}

pub fn evaluate(pairs: &[EvalPair], case_sensitive: bool, exec: Exec) -> EvalReport {
    let scores = exec.map_slice(pairs, |p| score_pair(p, case_sensitive));
    let buckets = Bucket::ALL
        .iter()
        .map(|&b| {
            let in_bucket: Vec<PairScore> = pairs
                .iter()
                .zip(&scores)
                .filter(|(p, _)| bucket_of(p.prompt_chars) == b)
                .map(|(_, s)| *s)
                .collect();
            (b, MetricsReport::from_scores(&in_bucket))
        })
        .collect();
    EvalReport {
        case_sensitive,
        overall: MetricsReport::from_scores(&scores),
        buckets,
    }
}

/// Reads one [`EvalPair`] per non-blank line.
pub fn read_pairs<R: BufRead>(reader: R) -> Result<Vec<EvalPair>, MetricsError> {
    let mut pairs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        pairs.push(
            serde_json::from_str(&line).map_err(|e| MetricsError::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?,
        );
    }
    Ok(pairs)
}

//! Glyph augmentation: character- and word-level replace/repeat/drop/add.
//!
//! Augmented texts stay canonical (printable words joined by single spaces),
//! so a negative's image is obtained by re-rendering the mutated box.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::render::{layout_box, printable_chars, validate_text, FontAtlas, TextBox};
use crate::rng::GenRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Character,
    Word,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Replace,
    Repeat,
    Drop,
    Add,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AugmentStrategy {
    pub level: Level,
    pub kind: Kind,
}

impl std::fmt::Display for AugmentStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let level = match self.level {
            Level::Character => "char",
            Level::Word => "word",
        };
        let kind = match self.kind {
            Kind::Replace => "replace",
            Kind::Repeat => "repeat",
            Kind::Drop => "drop",
            Kind::Add => "add",
        };
        write!(f, "{level}-{kind}")
    }
}

impl AugmentStrategy {
    pub const fn new(level: Level, kind: Kind) -> Self {
        Self { level, kind }
    }

    pub const ALL: [AugmentStrategy; 8] = [
        Self::new(Level::Character, Kind::Replace),
        Self::new(Level::Character, Kind::Repeat),
        Self::new(Level::Character, Kind::Drop),
        Self::new(Level::Character, Kind::Add),
        Self::new(Level::Word, Kind::Replace),
        Self::new(Level::Word, Kind::Repeat),
        Self::new(Level::Word, Kind::Drop),
        Self::new(Level::Word, Kind::Add),
    ];

    /// Whether the strategy can turn `text` into a different non-empty text.
    pub fn is_applicable(&self, text: &str) -> bool {
        let mut words = text.split(' ').filter(|w| !w.is_empty());
        match (self.level, self.kind) {
            (Level::Character, Kind::Drop) => words.any(|w| w.len() >= 2),
            (Level::Word, Kind::Replace) => words.any(|w| w.bytes().any(|b| b != w.as_bytes()[0])),
            (Level::Word, Kind::Drop) => words.nth(1).is_some(),
            _ => words.next().is_some(),
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.to_string() == name)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AugmentError {
    #[error("{strategy} cannot produce a different non-empty text from {text:?}")]
    Inapplicable {
        strategy: AugmentStrategy,
        text: String,
    },
    #[error("no augmentation strategy applies to {0:?}")]
    NoStrategy(String),
    #[error("text {0:?} is not canonical printable ASCII")]
    InvalidText(String),
    #[error("hard-negative count must be at least 1")]
    ZeroNegatives,
    #[error("no negative of {0:?} fits its box after repeated draws")]
    NoFittingNegative(String),
}

fn random_glyph(rng: &mut GenRng, exclude: char) -> char {
    let pool: Vec<char> = printable_chars()
        .filter(|&c| c != ' ' && c != exclude)
        .collect();
    pool[rng.gen_range(0..pool.len())]
}

fn random_word(rng: &mut GenRng) -> String {
    const LETTERS: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz";
    let len = rng.gen_range(2..=8);
    (0..len)
        .map(|_| LETTERS[rng.gen_range(0..LETTERS.len())] as char)
        .collect()
}

// Byte offsets of word characters, optionally restricted to words of at
// least `min_word_len` characters.
fn char_positions(text: &str, min_word_len: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut start = 0;
    for word in text.split(' ') {
        if word.len() >= min_word_len {
            out.extend(start..start + word.len());
        }
        start += word.len() + 1;
    }
    out
}

/// Applies one augmentation to `text`.
///
/// Character-level edits touch one position (replace/drop/add) or insert a
/// run of 2 to 4 copies after one character (repeat). Word-level edits touch
/// one word: replace shuffles its characters, repeat duplicates it once, drop
/// removes it and add inserts a random letter word.
pub fn augment_text(
    text: &str,
    strategy: AugmentStrategy,
    rng: &mut GenRng,
) -> Result<String, AugmentError> {
    validate_text(text).map_err(|_| AugmentError::InvalidText(text.to_string()))?;
    if !strategy.is_applicable(text) {
        return Err(AugmentError::Inapplicable {
            strategy,
            text: text.to_string(),
        });
    }
    let mut out = text.to_string();
    match (strategy.level, strategy.kind) {
        (Level::Character, Kind::Replace) => {
            let positions = char_positions(text, 1);
            let i = positions[rng.gen_range(0..positions.len())];
            let c = random_glyph(rng, text.as_bytes()[i] as char);
            out.replace_range(i..i + 1, c.encode_utf8(&mut [0; 4]));
        }
        (Level::Character, Kind::Repeat) => {
            let positions = char_positions(text, 1);
            let i = positions[rng.gen_range(0..positions.len())];
            let extra = rng.gen_range(2..=4);
            let run: String = std::iter::repeat_n(text.as_bytes()[i] as char, extra).collect();
            out.insert_str(i + 1, &run);
        }
        (Level::Character, Kind::Drop) => {
            let positions = char_positions(text, 2);
            let i = positions[rng.gen_range(0..positions.len())];
            out.remove(i);
        }
        (Level::Character, Kind::Add) => {
            // Insertion slots: before each word character and at each word end.
            let mut slots = Vec::new();
            let mut start = 0;
            for word in text.split(' ') {
                slots.extend(start..=start + word.len());
                start += word.len() + 1;
            }
            let i = slots[rng.gen_range(0..slots.len())];
            out.insert(i, random_glyph(rng, ' '));
        }
        (Level::Word, kind) => {
            let mut words: Vec<String> = text.split(' ').map(str::to_owned).collect();
            match kind {
                Kind::Replace => {
                    let eligible: Vec<usize> = (0..words.len())
                        .filter(|&i| words[i].bytes().any(|b| b != words[i].as_bytes()[0]))
                        .collect();
                    let i = eligible[rng.gen_range(0..eligible.len())];
                    let original = words[i].clone();
                    let mut chars: Vec<char> = original.chars().collect();
                    for _ in 0..64 {
                        chars.shuffle(rng);
                        if chars.iter().copied().ne(original.chars()) {
                            break;
                        }
                    }
                    if chars.iter().copied().eq(original.chars()) {
                        chars.rotate_left(1);
                    }
                    words[i] = chars.into_iter().collect();
                }
                Kind::Repeat => {
                    let i = rng.gen_range(0..words.len());
                    let w = words[i].clone();
                    words.insert(i + 1, w);
                }
                Kind::Drop => {
                    let i = rng.gen_range(0..words.len());
                    words.remove(i);
                }
                Kind::Add => {
                    let i = rng.gen_range(0..=words.len());
                    words.insert(i, random_word(rng));
                }
            }
            out = words.join(" ");
        }
    }
    debug_assert_ne!(out, text);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardNegative {
    pub text_box: TextBox,
    pub strategy: AugmentStrategy,
}

/// An anchor box and its augmented variants; the variants share the anchor's
/// geometry and style and differ only in text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardNegativeSet {
    pub anchor: TextBox,
    pub negatives: Vec<HardNegative>,
}

impl HardNegativeSet {
    pub fn count(&self) -> usize {
        self.negatives.len()
    }
}

pub fn applicable_strategies(text: &str) -> Vec<AugmentStrategy> {
    AugmentStrategy::ALL
        .into_iter()
        .filter(|s| s.is_applicable(text))
        .collect()
}

fn draw_negative(
    anchor: &TextBox,
    applicable: &[AugmentStrategy],
    rng: &mut GenRng,
) -> Result<HardNegative, AugmentError> {
    let strategy = applicable[rng.gen_range(0..applicable.len())];
    let text = augment_text(&anchor.text, strategy, rng)?;
    Ok(HardNegative {
        text_box: TextBox {
            text,
            ..anchor.clone()
        },
        strategy,
    })
}

/// Draws `g` negatives, each with a strategy chosen uniformly among those
/// applicable to the anchor text.
pub fn gen_hard_negatives(
    anchor: &TextBox,
    g: usize,
    rng: &mut GenRng,
) -> Result<HardNegativeSet, AugmentError> {
    if g == 0 {
        return Err(AugmentError::ZeroNegatives);
    }
    let applicable = applicable_strategies(&anchor.text);
    if applicable.is_empty() {
        return Err(AugmentError::NoStrategy(anchor.text.clone()));
    }
    let negatives = (0..g)
        .map(|_| draw_negative(anchor, &applicable, rng))
        .collect::<Result<_, _>>()?;
    Ok(HardNegativeSet {
        anchor: anchor.clone(),
        negatives,
    })
}

/// Like [`gen_hard_negatives`], but redraws any negative whose text no longer
/// fits the anchor box with `atlas` (up to 64 draws per negative).
pub fn gen_hard_negatives_fitting(
    anchor: &TextBox,
    g: usize,
    atlas: &FontAtlas,
    rng: &mut GenRng,
) -> Result<HardNegativeSet, AugmentError> {
    if g == 0 {
        return Err(AugmentError::ZeroNegatives);
    }
    let applicable = applicable_strategies(&anchor.text);
    if applicable.is_empty() {
        return Err(AugmentError::NoStrategy(anchor.text.clone()));
    }
    let mut negatives = Vec::with_capacity(g);
    for _ in 0..g {
        let mut found = None;
        for _ in 0..64 {
            let neg = draw_negative(anchor, &applicable, rng)?;
            if layout_box(
                &neg.text_box.text,
                &neg.text_box.bbox,
                neg.text_box.align,
                atlas,
            )
            .is_ok()
            {
                found = Some(neg);
                break;
            }
        }
        negatives.push(found.ok_or_else(|| AugmentError::NoFittingNegative(anchor.text.clone()))?);
    }
    Ok(HardNegativeSet {
        anchor: anchor.clone(),
        negatives,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::{Align, BBox};
    use crate::rng::seeded;
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn levenshtein(a: &str, b: &str) -> usize {
        let (a, b): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
        let mut prev: Vec<usize> = (0..=b.len()).collect();
        for i in 1..=a.len() {
            let mut cur = vec![i; b.len() + 1];
            for j in 1..=b.len() {
                cur[j] = (prev[j] + 1)
                    .min(cur[j - 1] + 1)
                    .min(prev[j - 1] + usize::from(a[i - 1] != b[j - 1]));
            }
            prev = cur;
        }
        prev[b.len()]
    }

    fn anchor(text: &str) -> TextBox {
        TextBox {
            bbox: BBox::new(0, 0, 400, 64),
            text: text.into(),
            font_id: 0,
            color_id: 0,
            align: Align::Left,
        }
    }

    #[test]
    fn figure_examples() {
        let mut rng = seeded(1);
        let s = AugmentStrategy::new(Level::Character, Kind::Replace);
        let mut hit = false;
        for _ in 0..20_000 {
            let out = augment_text("Happy", s, &mut rng).unwrap();
            assert_eq!(out.len(), 5);
            assert_eq!(
                out.chars()
                    .zip("Happy".chars())
                    .filter(|(a, b)| a != b)
                    .count(),
                1
            );
            hit |= out == "Hdppy";
        }
        assert!(hit, "Hdppy should be a reachable replacement");

        let out = augment_text(
            "Kim",
            AugmentStrategy::new(Level::Word, Kind::Repeat),
            &mut rng,
        )
        .unwrap();
        assert_eq!(out, "Kim Kim");

        let drop = AugmentStrategy::new(Level::Word, Kind::Drop);
        let mut reached = false;
        for seed in 0..200 {
            let mut rng = seeded(seed);
            let once = augment_text("Happy Graduation Kim", drop, &mut rng).unwrap();
            assert_eq!(once.split(' ').count(), 2);
            let twice = augment_text(&once, drop, &mut rng).unwrap();
            reached |= twice == "Graduation";
        }
        assert!(reached);
    }

    #[test]
    fn single_character_text() {
        let names: Vec<String> = applicable_strategies("A")
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert!(names.contains(&"char-replace".to_string()));
        assert!(names.contains(&"char-repeat".to_string()));
        assert!(names.contains(&"char-add".to_string()));
        assert!(!names.contains(&"char-drop".to_string()));
        assert!(!names.contains(&"word-drop".to_string()));
        assert!(!names.contains(&"word-replace".to_string()));
        let set = gen_hard_negatives(&anchor("A"), 1, &mut seeded(3)).unwrap();
        assert_eq!(set.count(), 1);
        assert_ne!(set.negatives[0].text_box.text, "A");
        assert!(matches!(
            augment_text(
                "A",
                AugmentStrategy::new(Level::Word, Kind::Drop),
                &mut seeded(0)
            ),
            Err(AugmentError::Inapplicable { .. })
        ));
    }

    #[test]
    fn sixteen_negatives_none_equal_to_anchor() {
        let a = anchor("Happy Graduation Kim!");
        let set = gen_hard_negatives(&a, 16, &mut seeded(16)).unwrap();
        assert_eq!(set.count(), 16);
        for n in &set.negatives {
            assert_ne!(n.text_box.text, a.text);
            assert_eq!(n.text_box.bbox, a.bbox);
            validate_text(&n.text_box.text).unwrap();
        }
        assert_eq!(
            gen_hard_negatives(&a, 0, &mut seeded(0)),
            Err(AugmentError::ZeroNegatives)
        );
    }

    #[test]
    fn seed_determinism() {
        let a = anchor("seeded draws repeat exactly");
        let x = gen_hard_negatives(&a, 8, &mut seeded(9)).unwrap();
        let y = gen_hard_negatives(&a, 8, &mut seeded(9)).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn strategy_frequencies_are_uniform() {
        // Every strategy applies to a 3-word text with mixed letters.
        let a = anchor("Happy Graduation Kim");
        assert_eq!(applicable_strategies(&a.text).len(), 8);
        let set = gen_hard_negatives(&a, 10_000, &mut seeded(2024)).unwrap();
        let mut counts: HashMap<AugmentStrategy, usize> = HashMap::new();
        for n in &set.negatives {
            *counts.entry(n.strategy).or_default() += 1;
        }
        let n: f64 = 10_000.0;
        let p = 1.0 / 8.0;
        let expected = n * p;
        let sigma = n * p * (1.0 - p);
        let sigma = sigma.sqrt();
        let mut chi2 = 0.0;
        for s in AugmentStrategy::ALL {
            let c = counts.get(&s).copied().unwrap_or(0) as f64;
            assert!(
                (c - expected).abs() <= 3.0 * sigma,
                "{s}: {c} vs {expected}±{}",
                3.0 * sigma
            );
            chi2 += (c - expected).powi(2) / expected;
        }
        // 7 degrees of freedom, 99.9% quantile.
        assert!(chi2 < 24.32, "chi-square {chi2}");
    }

    #[test]
    fn fitting_variant_respects_the_box() {
        let atlas = FontAtlas::base(0);
        let tight = TextBox {
            bbox: BBox::new(0, 0, 8 * 6, 16),
            ..anchor("Kim Ok")
        };
        let set = gen_hard_negatives_fitting(&tight, 16, &atlas, &mut seeded(5)).unwrap();
        for n in &set.negatives {
            assert!(layout_box(&n.text_box.text, &n.text_box.bbox, Align::Left, &atlas).is_ok());
        }
    }

    proptest! {
        #[test]
        fn locality(words in prop::collection::vec("[!-~]{1,6}", 1..5), idx in 0usize..8, seed: u64) {
            let text = words.join(" ");
            let s = AugmentStrategy::ALL[idx];
            let mut rng = seeded(seed);
            match augment_text(&text, s, &mut rng) {
                Ok(out) => {
                    prop_assert_ne!(&out, &text);
                    prop_assert!(validate_text(&out).is_ok());
                    match (s.level, s.kind) {
                        (Level::Character, Kind::Repeat) => {
                            let d = out.len() - text.len();
                            prop_assert!((2..=4).contains(&d));
                            prop_assert_eq!(levenshtein(&text, &out), d);
                        }
                        (Level::Character, _) => prop_assert_eq!(levenshtein(&text, &out), 1),
                        (Level::Word, Kind::Replace) => {
                            let a: Vec<&str> = text.split(' ').collect();
                            let b: Vec<&str> = out.split(' ').collect();
                            prop_assert_eq!(a.len(), b.len());
                            prop_assert_eq!(a.iter().zip(&b).filter(|(x, y)| x != y).count(), 1);
                        }
                        (Level::Word, Kind::Drop) => prop_assert_eq!(out.split(' ').count() + 1, text.split(' ').count()),
                        (Level::Word, _) => prop_assert_eq!(out.split(' ').count(), text.split(' ').count() + 1),
                    }
                }
                Err(AugmentError::Inapplicable { .. }) => prop_assert!(!s.is_applicable(&text)),
                Err(e) => prop_assert!(false, "{e}"),
            }
        }
    }
}

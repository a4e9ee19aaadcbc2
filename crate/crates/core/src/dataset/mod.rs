//! Synthetic glyph-text corpora.
//!
//! A record is a rendered document plus its prompt. Generation is sharded by
//! record-id ranges of [`SHARD_SIZE`]; each shard draws from its own seed
//! stream, so the output does not depend on how many workers run.

mod codebook;
mod prompt;
mod sample;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use codebook::{
    color_token, font_token, palette, variant_style, CodebookFile, FontCodebook, FontEntry,
    DEFAULT_COLOR_TOKENS, DEFAULT_EMB_DIM, DEFAULT_FONT_TOKENS, FONT_VARIANTS,
};
pub use prompt::{
    parse_prompt, resolve_codebook_tokens, serialize_prompt, PromptEntry, PromptSpec, PromptToken,
};
pub use sample::{is_paragraph_text, sample_document, Corpus, SampleConfig, Split};

use crate::exec::Exec;
use crate::image::Rgb;
use crate::render::{rasterize, CodebookKind, GlyphDocument, RenderError, TextBox};
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("no placement found after {attempts} attempts")]
    PlacementFailure { attempts: usize },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("corpus word {0:?} is not printable ASCII")]
    BadCorpusWord(String),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("unknown {kind:?} codebook id {id}")]
    UnknownCodebookId { kind: CodebookKind, id: usize },
    #[error("prompt parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },
    #[error("codebook: {0}")]
    Codebook(String),
    #[error("record {record}: {source}")]
    Io { record: String, source: io::Error },
    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),
}

// io::Error has no PartialEq; compare its kind.
impl PartialEq for DatasetError {
    fn eq(&self, other: &Self) -> bool {
        use DatasetError::*;
        match (self, other) {
            (PlacementFailure { attempts: a }, PlacementFailure { attempts: b }) => a == b,
            (EmptyCorpus, EmptyCorpus) => true,
            (BadCorpusWord(a), BadCorpusWord(b)) | (Codebook(a), Codebook(b)) => a == b,
            (Render(a), Render(b)) => a == b,
            (UnknownCodebookId { kind: k1, id: i1 }, UnknownCodebookId { kind: k2, id: i2 }) => {
                k1 == k2 && i1 == i2
            }
            (
                Parse {
                    offset: o1,
                    msg: m1,
                },
                Parse {
                    offset: o2,
                    msg: m2,
                },
            ) => o1 == o2 && m1 == m2,
            (
                Io {
                    record: r1,
                    source: s1,
                },
                Io {
                    record: r2,
                    source: s2,
                },
            ) => r1 == r2 && s1.kind() == s2.kind(),
            (Json(a), Json(b)) => a.to_string() == b.to_string(),
            _ => false,
        }
    }
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub width: u32,
    pub height: u32,
    /// Path of the PPM raster, relative to the dataset root.
    pub image: String,
    pub background: Rgb,
    pub boxes: Vec<TextBox>,
    pub prompt: String,
    pub split: Split,
}

impl DatasetRecord {
    pub fn from_document(id: String, doc: &GlyphDocument, split: Split) -> Self {
        Self {
            image: format!("images/{id}.ppm"),
            id,
            width: doc.width,
            height: doc.height,
            background: doc.background,
            boxes: doc.boxes.clone(),
            prompt: serialize_prompt(doc),
            split,
        }
    }

    pub fn document(&self) -> GlyphDocument {
        GlyphDocument {
            width: self.width,
            height: self.height,
            background: self.background,
            boxes: self.boxes.clone(),
        }
    }

    pub fn satisfies_paragraph_predicate(&self) -> bool {
        self.boxes.iter().any(|b| is_paragraph_text(&b.text))
    }
}

pub fn record_id(index: usize) -> String {
    format!("{index:08}")
}

/// Relative weights of the three splits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitMix {
    pub word: f64,
    pub sentence: f64,
    pub paragraph: f64,
}

impl Default for SplitMix {
    fn default() -> Self {
        Self {
            word: 0.4,
            sentence: 0.4,
            paragraph: 0.2,
        }
    }
}

impl SplitMix {
    /// Paragraph records only.
    pub const PARAGRAPH_TIER: SplitMix = SplitMix {
        word: 0.0,
        sentence: 0.0,
        paragraph: 1.0,
    };

    fn validate(&self) -> Result<(), String> {
        let w = [self.word, self.sentence, self.paragraph];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) || w.iter().sum::<f64>() <= 0.0 {
            return Err(format!(
                "split weights must be non-negative with a positive sum, got {w:?}"
            ));
        }
        Ok(())
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> Split {
        let total = self.word + self.sentence + self.paragraph;
        let u = rng.gen::<f64>() * total;
        if u < self.word {
            Split::Word
        } else if u < self.word + self.sentence || self.paragraph == 0.0 {
            if self.sentence == 0.0 {
                Split::Word
            } else {
                Split::Sentence
            }
        } else {
            Split::Paragraph
        }
    }
}

pub const SHARD_SIZE: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateConfig {
    pub count: usize,
    pub seed: u64,
    pub mix: SplitMix,
    pub sample: SampleConfig,
    pub font_tokens: usize,
    pub color_tokens: usize,
    pub emb_dim: usize,
    /// Skip writing rasters; the manifest is unchanged.
    pub skip_images: bool,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            count: 100,
            seed: 0,
            mix: SplitMix::default(),
            sample: SampleConfig::default(),
            font_tokens: DEFAULT_FONT_TOKENS,
            color_tokens: DEFAULT_COLOR_TOKENS,
            emb_dim: DEFAULT_EMB_DIM,
            skip_images: false,
        }
    }
}

impl GenerateConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        self.mix.validate().map_err(DatasetError::Codebook)?;
        if self.font_tokens == 0 || self.color_tokens == 0 {
            return Err(DatasetError::Codebook(
                "codebook needs at least one font and one color".into(),
            ));
        }
        Ok(())
    }

    pub fn codebook(&self) -> FontCodebook {
        FontCodebook::build(self.font_tokens, self.color_tokens, self.emb_dim, self.seed)
    }
}

/// Samples the records of one shard, in id order.
pub fn sample_shard(
    cfg: &GenerateConfig,
    corpus: &Corpus,
    codebook: &FontCodebook,
    shard: usize,
) -> Result<Vec<(DatasetRecord, GlyphDocument)>, DatasetError> {
    let mut rng = seeded(derive_seed(cfg.seed, &[shard as u64]));
    let start = shard * SHARD_SIZE;
    let end = (start + SHARD_SIZE).min(cfg.count);
    (start..end)
        .map(|index| {
            let split = cfg.mix.draw(&mut rng);
            let doc = sample_document(corpus, codebook, &cfg.sample, split, &mut rng)?;
            Ok((
                DatasetRecord::from_document(record_id(index), &doc, split),
                doc,
            ))
        })
        .collect()
}

/// Samples all records in memory, without touching the filesystem.
pub fn sample_records(
    cfg: &GenerateConfig,
    corpus: &Corpus,
    codebook: &FontCodebook,
    exec: Exec,
) -> Result<Vec<(DatasetRecord, GlyphDocument)>, DatasetError> {
    let shards = cfg.count.div_ceil(SHARD_SIZE);
    let parts = exec.map_range(shards, |s| sample_shard(cfg, corpus, codebook, s));
    let mut out = Vec::with_capacity(cfg.count);
    for part in parts {
        out.extend(part?);
    }
    Ok(out)
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const CODEBOOK_FILE: &str = "codebook.json";
const SHARD_DIR: &str = "shards";

/// Summary of a finished generation run.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub path: PathBuf,
    pub records: Vec<DatasetRecord>,
}

fn io_err(record: impl Into<String>) -> impl FnOnce(io::Error) -> DatasetError {
    let record = record.into();
    move |source| DatasetError::Io { record, source }
}

fn write_shard(
    cfg: &GenerateConfig,
    corpus: &Corpus,
    codebook: &FontCodebook,
    out: &Path,
    shard: usize,
) -> Result<Vec<DatasetRecord>, DatasetError> {
    let records = sample_shard(cfg, corpus, codebook, shard)?;
    let shard_path = out.join(SHARD_DIR).join(format!("shard-{shard:06}.jsonl"));
    let mut w =
        BufWriter::new(File::create(&shard_path).map_err(io_err(format!("shard {shard}")))?);
    let mut kept = Vec::with_capacity(records.len());
    for (rec, doc) in records {
        if !cfg.skip_images {
            let img = rasterize(&doc, codebook)?;
            let f = File::create(out.join(&rec.image)).map_err(io_err(&rec.id))?;
            img.write_ppm(BufWriter::new(f)).map_err(io_err(&rec.id))?;
        }
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n").map_err(io_err(&rec.id))?;
        kept.push(rec);
    }
    w.flush().map_err(io_err(format!("shard {shard}")))?;
    Ok(kept)
}

/// Writes `manifest.jsonl`, `codebook.json` and `images/<id>.ppm` under
/// `out`. Shards are written to shard-local files by the workers and merged
/// in id order at the end, so the manifest bytes depend only on the config.
pub fn generate_dataset(
    cfg: &GenerateConfig,
    corpus: &Corpus,
    out: &Path,
    exec: Exec,
) -> Result<Manifest, DatasetError> {
    cfg.validate()?;
    let codebook = cfg.codebook();
    let shards = cfg.count.div_ceil(SHARD_SIZE);
    fs::create_dir_all(out.join(SHARD_DIR)).map_err(io_err("output directory"))?;
    if cfg.count > 0 && !cfg.skip_images {
        fs::create_dir_all(out.join("images")).map_err(io_err("output directory"))?;
    }
    fs::write(out.join(CODEBOOK_FILE), codebook.to_json()).map_err(io_err("codebook"))?;

    let parts = exec.map_range(shards, |s| write_shard(cfg, corpus, &codebook, out, s));
    let mut by_shard = BTreeMap::new();
    for (s, part) in parts.into_iter().enumerate() {
        by_shard.insert(s, part?);
    }

    let path = out.join(MANIFEST_FILE);
    let mut w = BufWriter::new(File::create(&path).map_err(io_err("manifest"))?);
    for s in by_shard.keys() {
        let shard_path = out.join(SHARD_DIR).join(format!("shard-{s:06}.jsonl"));
        let bytes = fs::read(&shard_path).map_err(io_err(format!("shard {s}")))?;
        w.write_all(&bytes).map_err(io_err("manifest"))?;
    }
    w.flush().map_err(io_err("manifest"))?;
    fs::remove_dir_all(out.join(SHARD_DIR)).map_err(io_err("shard cleanup"))?;
    Ok(Manifest {
        path,
        records: by_shard.into_values().flatten().collect(),
    })
}

pub fn read_manifest(path: &Path) -> Result<Vec<DatasetRecord>, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err("manifest"))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Per-split histograms over a set of records.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DatasetStats {
    pub records: BTreeMap<Split, usize>,
    /// boxes per record → count
    pub box_count: BTreeMap<Split, BTreeMap<usize, usize>>,
    /// words per box → count
    pub word_count: BTreeMap<Split, BTreeMap<usize, usize>>,
    /// characters per box → count
    pub char_count: BTreeMap<Split, BTreeMap<usize, usize>>,
}

impl DatasetStats {
    pub fn collect<'a>(records: impl IntoIterator<Item = &'a DatasetRecord>) -> Self {
        let mut s = Self::default();
        for r in records {
            *s.records.entry(r.split).or_default() += 1;
            *s.box_count
                .entry(r.split)
                .or_default()
                .entry(r.boxes.len())
                .or_default() += 1;
            for b in &r.boxes {
                *s.word_count
                    .entry(r.split)
                    .or_default()
                    .entry(b.text.split(' ').count())
                    .or_default() += 1;
                *s.char_count
                    .entry(r.split)
                    .or_default()
                    .entry(b.text.len())
                    .or_default() += 1;
            }
        }
        s
    }

    pub fn mean_chars(&self, split: Split) -> f64 {
        mean(self.char_count.get(&split))
    }

    pub fn mean_words(&self, split: Split) -> f64 {
        mean(self.word_count.get(&split))
    }
}

fn mean(hist: Option<&BTreeMap<usize, usize>>) -> f64 {
    let Some(h) = hist else { return 0.0 };
    let n: usize = h.values().sum();
    if n == 0 {
        return 0.0;
    }
    h.iter().map(|(k, v)| (k * v) as f64).sum::<f64>() / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(count: usize) -> GenerateConfig {
        GenerateConfig {
            count,
            seed: 7,
            ..GenerateConfig::default()
        }
    }

    #[test]
    fn empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let m =
            generate_dataset(&small(0), &Corpus::default(), dir.path(), Exec::Sequential).unwrap();
        assert!(m.records.is_empty());
        assert_eq!(fs::read(&m.path).unwrap(), b"");
        assert!(!dir.path().join("images").exists());
        assert!(!dir.path().join(SHARD_DIR).exists());
    }

    #[test]
    fn manifest_schema_and_images() {
        let dir = tempfile::tempdir().unwrap();
        let m =
            generate_dataset(&small(5), &Corpus::default(), dir.path(), Exec::Parallel).unwrap();
        let text = fs::read_to_string(&m.path).unwrap();
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        let keys: Vec<&str> = first
            .as_object()
            .unwrap()
            .keys()
            .map(String::as_str)
            .collect();
        for k in [
            "id",
            "width",
            "height",
            "image",
            "background",
            "boxes",
            "prompt",
            "split",
        ] {
            assert!(keys.contains(&k), "{k}");
        }
        assert_eq!(first["background"], serde_json::json!([0, 0, 0]));
        assert_eq!(first["boxes"][0]["bbox"].as_array().unwrap().len(), 4);
        let back = read_manifest(&m.path).unwrap();
        assert_eq!(back, m.records);
        let cb =
            FontCodebook::from_json(&fs::read_to_string(dir.path().join(CODEBOOK_FILE)).unwrap())
                .unwrap();
        for r in &back {
            let f = File::open(dir.path().join(&r.image)).unwrap();
            let img = crate::image::RasterImage::read_ppm(io::BufReader::new(f)).unwrap();
            assert_eq!(img, rasterize(&r.document(), &cb).unwrap());
            assert_eq!(
                parse_prompt(&r.prompt).unwrap(),
                PromptSpec::from_document(&r.document())
            );
        }
    }

    #[test]
    fn worker_count_does_not_change_manifest() {
        let mut cfg = small(150);
        cfg.skip_images = true;
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = generate_dataset(&cfg, &Corpus::default(), a.path(), Exec::Sequential).unwrap();
        let mb = Exec::Parallel
            .with_workers(4, || {
                generate_dataset(&cfg, &Corpus::default(), b.path(), Exec::Parallel)
            })
            .unwrap();
        assert_eq!(fs::read(ma.path).unwrap(), fs::read(mb.path).unwrap());
    }

    #[test]
    fn paragraph_tier_records_all_qualify() {
        let cfg = GenerateConfig {
            count: 70,
            mix: SplitMix::PARAGRAPH_TIER,
            ..small(0)
        };
        let recs =
            sample_records(&cfg, &Corpus::default(), &cfg.codebook(), Exec::Parallel).unwrap();
        assert_eq!(recs.len(), 70);
        assert!(recs
            .iter()
            .all(|(r, _)| r.split == Split::Paragraph && r.satisfies_paragraph_predicate()));
    }

    #[test]
    fn paragraph_split_has_more_characters() {
        let cfg = small(600);
        let recs =
            sample_records(&cfg, &Corpus::default(), &cfg.codebook(), Exec::Parallel).unwrap();
        let stats = DatasetStats::collect(recs.iter().map(|(r, _)| r));
        assert!(stats.mean_chars(Split::Paragraph) > stats.mean_chars(Split::Sentence));
        assert!(stats.mean_chars(Split::Sentence) > stats.mean_chars(Split::Word));
        assert!(stats.mean_words(Split::Paragraph) > 10.0);
        assert_eq!(stats.records.values().sum::<usize>(), 600);
    }

    #[test]
    fn bad_mix_is_rejected() {
        let cfg = GenerateConfig {
            mix: SplitMix {
                word: 0.0,
                sentence: 0.0,
                paragraph: 0.0,
            },
            ..small(1)
        };
        assert!(matches!(cfg.validate(), Err(DatasetError::Codebook(_))));
    }
}

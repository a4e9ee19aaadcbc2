use std::io::{self, Write};

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    box_contrastive_loss, dot, hard_negative_loss, normalized, roi_align, text_features,
    AlignError, BoxPair, EmbeddingBatch, FeatureMap, HardDenominator, HardNegativeBatch,
    TextEncoder, TextGrad, TextInput, VisualEncoder,
};
use crate::augment::{augment_text, gen_hard_negatives_fitting, AugmentStrategy, Level};
use crate::dataset::{sample_document, Corpus, FontCodebook, PromptToken, SampleConfig, Split};
use crate::exec::Exec;
use crate::image::RasterImage;
use crate::render::{draw_box, rasterize, BBox, GlyphDocument, StyleLookup, TextBox};
use crate::rng::stream;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignHyper {
    pub lr: f64,
    /// Step size for the log-temperature.
    pub lr_temperature: f64,
    pub steps: usize,
    /// Images per step.
    pub batch: usize,
    /// Hard negatives per box; 0 disables the hard-negative loss.
    pub g: usize,
    /// ROIAlign output grid size.
    pub roi_size: usize,
    pub dim: usize,
    pub seed: u64,
    pub patch: u32,
    pub bigram_buckets: usize,
    /// Rescale pooled box embeddings to unit norm.
    pub renormalize: bool,
    pub denominator: HardDenominator,
    /// Held-out boxes used for top-1 retrieval.
    pub retrieval_batch: usize,
    /// Character perturbations per held-out box in the probe.
    pub probe_per_box: usize,
}

impl Default for AlignHyper {
    fn default() -> Self {
        Self {
            lr: 1.0,
            lr_temperature: 0.01,
            steps: 2000,
            batch: 8,
            g: 16,
            roi_size: 3,
            dim: 32,
            seed: 0,
            patch: 16,
            bigram_buckets: 256,
            renormalize: false,
            denominator: HardDenominator::IncludePositive,
            retrieval_batch: 64,
            probe_per_box: 4,
        }
    }
}

impl AlignHyper {
    /// Settings for the 128x128 toy corpus: 4px patches keep more of the
    /// glyph structure in the pooled box embedding than the 16px default.
    pub fn toy() -> Self {
        Self {
            lr: 0.3,
            patch: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), AlignError> {
        let bad = |m: &str| Err(AlignError::Precondition(m.into()));
        if !(self.lr.is_finite()
            && self.lr >= 0.0
            && self.lr_temperature.is_finite()
            && self.lr_temperature >= 0.0)
        {
            return bad("learning rates must be finite and non-negative");
        }
        if self.batch == 0 || self.roi_size == 0 || self.dim == 0 || self.bigram_buckets == 0 {
            return bad("batch, roi_size, dim and bigram_buckets must be positive");
        }
        if self.patch == 0 || !self.patch.is_multiple_of(4) {
            return bad("patch must be a positive multiple of 4");
        }
        Ok(())
    }
}

/// One training box: frozen box embedding, text features and its augmented
/// pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSample {
    pub text: String,
    pub x: Vec<f64>,
    pub phi: TextInput,
    pub negatives: Vec<(Vec<f64>, TextInput)>,
}

/// Precomputed inputs for [`train_align`]. The visual side is frozen, so box
/// embeddings of anchors and re-rendered negatives are computed once.
#[derive(Debug, Clone)]
pub struct AlignData {
    pub visual: VisualEncoder,
    pub train: Vec<Vec<BoxSample>>,
    pub heldout: Vec<BoxSample>,
    /// (held-out box index, features of a character-perturbed text)
    pub probe: Vec<(usize, TextInput)>,
    pub max_g: usize,
    /// Text tower at initialization; training starts from a copy.
    pub text_init: TextEncoder,
}

fn box_tokens(tb: &TextBox) -> Vec<PromptToken> {
    let mut t: Vec<PromptToken> = tb.text.bytes().map(PromptToken::Byte).collect();
    t.push(PromptToken::Color(tb.color_id));
    t.push(PromptToken::Font(tb.font_id));
    t
}

fn pooled(fm: &FeatureMap, bbox: &BBox, hyper: &AlignHyper) -> Result<Vec<f64>, AlignError> {
    let x = roi_align(fm, bbox, hyper.roi_size)?;
    Ok(if hyper.renormalize { normalized(&x) } else { x })
}

struct DocSamples {
    boxes: Vec<BoxSample>,
}

fn prepare_doc(
    doc: &GlyphDocument,
    codebook: &FontCodebook,
    visual: &VisualEncoder,
    hyper: &AlignHyper,
    g: usize,
    stream_id: u64,
) -> Result<DocSamples, AlignError> {
    let img = rasterize(doc, codebook)?;
    let raw = visual.encode_image(&img)?;
    let fm = raw.normalized();
    let mut rng = stream(hyper.seed, &[3, stream_id]);
    let mut boxes = Vec::with_capacity(doc.boxes.len());
    for tb in &doc.boxes {
        let x = pooled(&fm, &tb.bbox, hyper)?;
        let phi = text_features(&box_tokens(tb), codebook, hyper.bigram_buckets)?;
        let mut negatives = Vec::with_capacity(g);
        if g > 0 {
            let atlas = codebook
                .font(tb.font_id)
                .expect("document fonts come from the codebook");
            let color = codebook
                .color(tb.color_id)
                .expect("document colors come from the codebook");
            let set = match gen_hard_negatives_fitting(tb, g, atlas, &mut rng) {
                Ok(set) => set,
                Err(e) => {
                    log::debug!("skipping box {:?}: {e}", tb.text);
                    continue;
                }
            };
            for neg in &set.negatives {
                let mut img2 = img.clone();
                clear_box(&mut img2, &tb.bbox, doc);
                draw_box(&mut img2, &neg.text_box, atlas, color)?;
                let mut fm2 = raw.clone();
                visual.refresh_region(&mut fm2, &img2, &tb.bbox)?;
                let xg = pooled(&fm2.normalized(), &tb.bbox, hyper)?;
                let phig =
                    text_features(&box_tokens(&neg.text_box), codebook, hyper.bigram_buckets)?;
                negatives.push((xg, phig));
            }
        }
        boxes.push(BoxSample {
            text: tb.text.clone(),
            x,
            phi,
            negatives,
        });
    }
    Ok(DocSamples { boxes })
}

fn clear_box(img: &mut RasterImage, bbox: &BBox, doc: &GlyphDocument) {
    for y in bbox.y..bbox.bottom() {
        for x in bbox.x..bbox.right() {
            img.put(x, y, doc.background);
        }
    }
}

fn char_perturbation(text: &str, rng: &mut crate::rng::GenRng) -> Option<String> {
    let options: Vec<AugmentStrategy> = AugmentStrategy::ALL
        .into_iter()
        .filter(|s| s.level == Level::Character && s.is_applicable(text))
        .collect();
    if options.is_empty() {
        return None;
    }
    let s = options[rng.gen_range(0..options.len())];
    augment_text(text, s, rng).ok()
}

impl AlignData {
    /// Renders and encodes `train` (with `max_g` negatives per box) and
    /// `heldout` (with character perturbations for the probe).
    pub fn build(
        train: &[GlyphDocument],
        heldout: &[GlyphDocument],
        codebook: &FontCodebook,
        hyper: &AlignHyper,
        max_g: usize,
        exec: Exec,
    ) -> Result<Self, AlignError> {
        hyper.validate()?;
        let visual = VisualEncoder::new(hyper.dim, hyper.patch, hyper.seed);
        let train_parts = exec.map_range(train.len(), |i| {
            prepare_doc(&train[i], codebook, &visual, hyper, max_g, i as u64)
        });
        let held_parts = exec.map_range(heldout.len(), |i| {
            prepare_doc(
                &heldout[i],
                codebook,
                &visual,
                hyper,
                0,
                (1 << 32) + i as u64,
            )
        });
        let train: Vec<Vec<BoxSample>> = train_parts
            .into_iter()
            .map(|p| p.map(|d| d.boxes))
            .collect::<Result<Vec<_>, _>>()?;
        let train = train.into_iter().filter(|b| !b.is_empty()).collect();
        let mut held: Vec<BoxSample> = Vec::new();
        let mut held_boxes: Vec<&TextBox> = Vec::new();
        for (part, doc) in held_parts.into_iter().zip(heldout) {
            held.extend(part?.boxes);
            held_boxes.extend(doc.boxes.iter());
        }
        let mut rng = stream(hyper.seed, &[4]);
        let mut probe = Vec::new();
        for (i, tb) in held_boxes.iter().enumerate() {
            for _ in 0..hyper.probe_per_box {
                if let Some(text) = char_perturbation(&tb.text, &mut rng) {
                    let pert = TextBox {
                        text,
                        ..(*tb).clone()
                    };
                    probe.push((
                        i,
                        text_features(&box_tokens(&pert), codebook, hyper.bigram_buckets)?,
                    ));
                }
            }
        }
        Ok(Self {
            visual,
            train,
            heldout: held,
            probe,
            max_g,
            text_init: TextEncoder::new(hyper.dim, hyper.bigram_buckets, codebook, hyper.seed),
        })
    }

    pub fn train_box_count(&self) -> usize {
        self.train.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignParams {
    pub visual: VisualEncoder,
    pub text: TextEncoder,
    /// log-temperature `s`, `t = e^s`.
    pub log_t: f64,
}

impl AlignParams {
    pub fn temperature(&self) -> f64 {
        self.log_t.exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignCheckpoint {
    pub version: u32,
    pub hyper: AlignHyper,
    pub params: AlignParams,
}

impl AlignCheckpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: usize,
    pub loss_box: f64,
    pub loss_hard: f64,
    pub retrieval: f64,
}

impl HistoryRow {
    pub const CSV_HEADER: &'static str = "step,loss_box,loss_hard,retrieval@1";

    pub fn write_csv<W: Write>(rows: &[HistoryRow], mut w: W) -> io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in rows {
            writeln!(
                w,
                "{},{},{},{}",
                r.step, r.loss_box, r.loss_hard, r.retrieval
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: AlignParams,
    pub history: Vec<HistoryRow>,
    pub retrieval: f64,
    pub probe_accuracy: f64,
}

/// Top-1 retrieval over the first `retrieval_batch` held-out boxes: each box
/// embedding must score its own text above every other text in the batch.
fn retrieval_at_1(params: &AlignParams, held: &[BoxSample]) -> f64 {
    if held.is_empty() {
        return 0.0;
    }
    let ys: Vec<Vec<f64>> = held.iter().map(|b| params.text.embed(&b.phi)).collect();
    let hits = held
        .iter()
        .enumerate()
        .filter(|(n, b)| {
            let own = dot(&b.x, &ys[*n]);
            ys.iter()
                .enumerate()
                .all(|(m, y)| m == *n || dot(&b.x, y) < own)
        })
        .count();
    hits as f64 / held.len() as f64
}

/// Fraction of (held-out box, perturbed text) pairs where the box embedding
/// prefers its true text.
pub fn perturbation_probe(params: &AlignParams, data: &AlignData) -> f64 {
    if data.probe.is_empty() {
        return 0.0;
    }
    let correct = data
        .probe
        .iter()
        .filter(|(i, phi)| {
            let b = &data.heldout[*i];
            dot(&b.x, &params.text.embed(&b.phi)) > dot(&b.x, &params.text.embed(phi))
        })
        .count();
    correct as f64 / data.probe.len() as f64
}

struct Embedded {
    u: Vec<f64>,
    y: Vec<f64>,
}

fn embed(text: &TextEncoder, phi: &TextInput) -> Embedded {
    let u = text.project(phi);
    let y = normalized(&u);
    Embedded { u, y }
}

/// Value and analytic gradient of `L_box + L_hard` on one batch of boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub loss_box: f64,
    pub loss_hard: f64,
    /// Gradient with respect to the text tower parameters.
    pub grad: TextGrad,
    /// Gradient with respect to the log-temperature.
    pub ds: f64,
}

impl Objective {
    pub fn loss(&self) -> f64 {
        self.loss_box + self.loss_hard
    }
}

/// Evaluates the training objective for `boxes` treated as one batch. Boxes
/// with at least `g` prepared negatives join the hard-negative loss (using
/// their first `g`); `g = 0` disables it.
pub fn align_objective(
    text: &TextEncoder,
    log_t: f64,
    boxes: &[&BoxSample],
    g: usize,
    denom: HardDenominator,
) -> Result<Objective, AlignError> {
    let anchors: Vec<Embedded> = boxes.iter().map(|b| embed(text, &b.phi)).collect();
    let batch = EmbeddingBatch {
        images: vec![boxes
            .iter()
            .zip(&anchors)
            .map(|(b, e)| BoxPair {
                x: b.x.clone(),
                y: e.y.clone(),
            })
            .collect()],
    };
    let lbox = box_contrastive_loss(&batch, log_t)?;
    let mut dy = lbox.dy;
    let mut ds = lbox.ds;
    let mut loss_hard = 0.0;
    let mut grad = text.zero_grad();

    let with_negs: Vec<usize> = if g == 0 {
        Vec::new()
    } else {
        (0..boxes.len())
            .filter(|&k| boxes[k].negatives.len() >= g)
            .collect()
    };
    if !with_negs.is_empty() {
        let hb = EmbeddingBatch {
            images: vec![with_negs
                .iter()
                .map(|&k| batch.images[0][k].clone())
                .collect()],
        };
        let neg_emb: Vec<Vec<Embedded>> = with_negs
            .iter()
            .map(|&k| {
                boxes[k].negatives[..g]
                    .iter()
                    .map(|(_, phi)| embed(text, phi))
                    .collect()
            })
            .collect();
        let negs = HardNegativeBatch {
            per_box: with_negs
                .iter()
                .zip(&neg_emb)
                .map(|(&k, es)| {
                    boxes[k].negatives[..g]
                        .iter()
                        .zip(es)
                        .map(|((x, _), e)| BoxPair {
                            x: x.clone(),
                            y: e.y.clone(),
                        })
                        .collect()
                })
                .collect(),
        };
        let lh = hard_negative_loss(&hb, &negs, log_t, denom)?;
        loss_hard = lh.loss;
        ds += lh.ds;
        for ((j, &k), (es, dyn_)) in with_negs
            .iter()
            .enumerate()
            .zip(neg_emb.iter().zip(&lh.dy_neg))
        {
            for (a, b) in dy[k].iter_mut().zip(&lh.dy[j]) {
                *a += b;
            }
            for ((e, d), (_, phi)) in es.iter().zip(dyn_).zip(&boxes[k].negatives) {
                text.accumulate_grad(phi, &e.u, d, &mut grad);
            }
        }
    }
    for ((b, e), d) in boxes.iter().zip(&anchors).zip(&dy) {
        text.accumulate_grad(&b.phi, &e.u, d, &mut grad);
    }
    Ok(Objective {
        loss_box: lbox.loss,
        loss_hard,
        grad,
        ds,
    })
}

/// Plain SGD on `L_box + L_hard` over the text projection and the
/// log-temperature; the visual encoder stays frozen.
pub fn train_align(data: &AlignData, hyper: &AlignHyper) -> Result<TrainOutcome, AlignError> {
    hyper.validate()?;
    if data.train.is_empty() {
        return Err(AlignError::Precondition("training set is empty".into()));
    }
    if hyper.g > data.max_g {
        return Err(AlignError::Precondition(format!(
            "g={} exceeds the {} prepared negatives",
            hyper.g, data.max_g
        )));
    }
    let mut params = AlignParams {
        visual: data.visual.clone(),
        text: data.text_init.clone(),
        log_t: (1.0f64 / 0.07).ln(),
    };
    let held = &data.heldout[..hyper.retrieval_batch.min(data.heldout.len())];
    let mut rng = stream(hyper.seed, &[2]);
    let n_img = data.train.len();
    let per_step = hyper.batch.min(n_img);
    let mut history = Vec::with_capacity(hyper.steps);

    for step in 1..=hyper.steps {
        let chosen: Vec<usize> = if per_step == n_img {
            (0..n_img).collect()
        } else {
            let mut v = sample(&mut rng, n_img, per_step).into_vec();
            v.sort_unstable();
            v
        };
        let boxes: Vec<&BoxSample> = chosen.iter().flat_map(|&i| data.train[i].iter()).collect();
        let obj = align_objective(
            &params.text,
            params.log_t,
            &boxes,
            hyper.g,
            hyper.denominator,
        )?;
        if !(obj.loss_box.is_finite() && obj.loss_hard.is_finite()) {
            return Err(AlignError::Diverged { step });
        }
        if hyper.lr > 0.0 || hyper.lr_temperature > 0.0 {
            params.text.apply(&obj.grad, hyper.lr);
            params.log_t -= hyper.lr_temperature * obj.ds;
            if !params.log_t.is_finite() || !params.text.is_finite() {
                return Err(AlignError::Diverged { step });
            }
        }
        history.push(HistoryRow {
            step,
            loss_box: obj.loss_box,
            loss_hard: obj.loss_hard,
            retrieval: retrieval_at_1(&params, held),
        });
    }
    let retrieval = retrieval_at_1(&params, held);
    let probe_accuracy = perturbation_probe(&params, data);
    Ok(TrainOutcome {
        params,
        history,
        retrieval,
        probe_accuracy,
    })
}

/// Toy alignment corpus: 128x128 canvases with up to four word boxes, fonts drawn from the first 16
/// tokens (one per rendered style variant) and the full color palette.
pub fn toy_sample_config() -> SampleConfig {
    SampleConfig {
        width: 128,
        height: 128,
        max_boxes: 4,
        font_pool: 16,
        ..SampleConfig::default()
    }
}

/// `n` word-split documents drawn from the default corpus.
pub fn toy_documents(
    n: usize,
    codebook: &FontCodebook,
    cfg: &SampleConfig,
    seed: u64,
) -> Result<Vec<GlyphDocument>, AlignError> {
    let corpus = Corpus::default();
    let mut rng = stream(seed, &[5]);
    (0..n)
        .map(|_| {
            Ok(sample_document(
                &corpus,
                codebook,
                cfg,
                Split::Word,
                &mut rng,
            )?)
        })
        .collect()
}

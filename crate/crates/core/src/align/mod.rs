//! Box-level glyph/text alignment at toy scale.
//!
//! The visual side is a frozen random projection of simple patch statistics;
//! the text side is a trainable linear map over byte n-gram counts and
//! codebook embeddings. Box embeddings come from ROIAlign over the per-cell
//! normalized feature map and are paired with the box's text embedding in
//! the box-level contrastive loss and the hard-negative loss.

mod encode;
mod loss;
mod roi;
mod train;

pub use encode::{
    byte_feature_dim, text_features, FeatureMap, SparseFeatures, TextEncoder, TextGrad, TextInput,
    VisualEncoder, PATCH_FEATURES,
};
pub use loss::{
    box_contrastive_loss, hard_negative_loss, BoxGrad, BoxPair, EmbeddingBatch, HardDenominator,
    HardGrad, HardNegativeBatch,
};
pub use roi::roi_align;
pub use train::{
    align_objective, perturbation_probe, toy_documents, toy_sample_config, train_align,
    AlignCheckpoint, AlignData, AlignHyper, AlignParams, BoxSample, HistoryRow, Objective,
    TrainOutcome, CHECKPOINT_VERSION,
};

use thiserror::Error;

use crate::augment::AugmentError;
use crate::dataset::DatasetError;
use crate::render::RenderError;

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("raster {width}x{height} is not divisible into {patch}px patches")]
    BadDims { width: u32, height: u32, patch: u32 },
    #[error("box does not intersect the canvas")]
    EmptyIntersection,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("loss diverged at step {step}")]
    Diverged { step: usize },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Unit vector along `a`; the zero vector stays zero.
pub(crate) fn normalized(a: &[f64]) -> Vec<f64> {
    let n = norm(a);
    if n > 0.0 {
        a.iter().map(|v| v / n).collect()
    } else {
        a.to_vec()
    }
}

/// Numerically stable log Σ exp.
pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

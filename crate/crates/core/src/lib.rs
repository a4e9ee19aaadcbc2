//! Desk-scale glyph-text alignment toolkit.
//!
//! The crate covers the whole data and evaluation loop around a glyph-aware
//! text encoder without any pretrained weights:
//!
//! - [`render`]: bitmap font atlases, box layout with multi-line wrapping,
//!   rasterization and an exact decoder used as a perfect OCR.
//! - [`augment`]: character- and word-level glyph augmentation producing hard
//!   negatives.
//! - [`dataset`]: font/color codebook, prompt format, document sampling and
//!   sharded corpus generation.
//! - [`align`]: toy image/text encoders, ROIAlign, the box-level and
//!   hard-negative contrastive losses with analytic gradients, and a small
//!   SGD trainer.
//! - [`region_attn`]: region-wise cross-attention masks and masked attention.
//! - [`sdedit`]: the two-phase region-wise SDEdit schedule against a toy
//!   denoiser.
//! - [`metrics`]: word precision/recall, edit distance and image accuracy.
//!
//! Data-parallel sweeps go through [`exec::Exec`], which uses rayon when the
//! `parallel` feature is enabled and falls back to plain iteration otherwise.

pub mod align;
pub mod augment;
pub mod dataset;
pub mod exec;
pub mod image;
pub mod metrics;
pub mod region_attn;
pub mod render;
pub mod rng;
pub mod sdedit;

pub use image::{RasterImage, Rgb};

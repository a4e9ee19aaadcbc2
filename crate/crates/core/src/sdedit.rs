//! Two-phase region-wise SDEdit against a toy denoiser.
//!
//! The original image is noised to level `σ(t0)`. From `t0` down to `t1 + 1`
//! only pixels inside the text boxes are denoised; every other pixel is reset
//! after each step to the original re-noised at the step's output level, as in
//! blended diffusion. From `t1` down to 1 the whole image is denoised, which
//! harmonizes the edit with its surroundings at the cost of drifting the
//! background toward the model's own prediction.
//!
//! The denoiser is an Ornstein-Uhlenbeck contraction toward a target image:
//! each step moves a pixel a fraction `λ` of the way to the target and adds
//! fresh noise scaled so that a pixel at noise level `σ(t)` leaves at level
//! `σ(t - 1)`. Noise for step `t` is drawn from a stream keyed by `t`, so runs
//! that differ only in the schedule share their noise realizations.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::FontCodebook;
use crate::image::{RasterImage, Rgb};
use crate::region_attn::assign_pixels;
use crate::render::{draw_box, Align, BBox, RenderError, StyleLookup, TextBox};
use crate::rng::{stream, GenRng};

pub const DEFAULT_T_MAX: u32 = 1000;
pub const DEFAULT_T0: u32 = 800;
pub const DEFAULT_T1: u32 = 300;
pub const DEFAULT_LAMBDA: f64 = 0.05;

#[derive(Debug, Error)]
pub enum SdeditError {
    #[error("need t_max >= t0 > t1 >= 0, got t_max={t_max}, t0={t0}, t1={t1}")]
    BadRange { t_max: u32, t0: u32, t1: u32 },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("contraction factor must lie in [0, 1], got {0}")]
    BadLambda(f64),
    #[error(transparent)]
    Render(#[from] RenderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// Only glyph-region pixels are denoised.
    Region,
    /// Every pixel is denoised.
    Full,
}

/// Descending timesteps `t0, t0 - 1, …, 1`; step `t` is region-only when
/// `t > t1` and full otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SdeditSchedule {
    pub t_max: u32,
    pub t0: u32,
    pub t1: u32,
}

pub fn make_schedule(t0: u32, t1: u32, t_max: u32) -> Result<SdeditSchedule, SdeditError> {
    if !(t_max >= t0 && t0 > t1) {
        return Err(SdeditError::BadRange { t_max, t0, t1 });
    }
    Ok(SdeditSchedule { t_max, t0, t1 })
}

impl SdeditSchedule {
    pub fn phase(&self, t: u32) -> Phase {
        if t > self.t1 {
            Phase::Region
        } else {
            Phase::Full
        }
    }

    pub fn steps(&self) -> impl Iterator<Item = (u32, Phase)> + '_ {
        (1..=self.t0).rev().map(|t| (t, self.phase(t)))
    }

    pub fn region_steps(&self) -> u32 {
        self.t0 - self.t1
    }

    pub fn full_steps(&self) -> u32 {
        self.t1
    }

    /// Linear noise level `σ(t) = t / T_max`.
    pub fn sigma(&self, t: u32) -> f64 {
        t as f64 / self.t_max as f64
    }
}

/// Unit-range RGB image in floating point, row-major, three channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

impl Latent {
    pub fn from_image(img: &RasterImage) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            data: img.as_raw().iter().map(|&v| v as f64 / 255.0).collect(),
        }
    }

    /// Clips to `[0, 1]` and quantizes to 8 bits.
    pub fn to_image(&self) -> RasterImage {
        let data = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        RasterImage::from_raw(self.width, self.height, data).expect("latent size matches its dims")
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// Contraction toward `target` with linear noise levels.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDenoiser {
    pub target: Latent,
    pub lambda: f64,
}

impl ToyDenoiser {
    pub fn new(target: &RasterImage, lambda: f64) -> Result<Self, SdeditError> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(SdeditError::BadLambda(lambda));
        }
        Ok(Self {
            target: Latent::from_image(target),
            lambda,
        })
    }
}

fn noise_stream(base: u64, t: u32, kind: u64) -> GenRng {
    stream(base, &[t as u64, kind])
}

const DENOISE_NOISE: u64 = 0;
const RESET_NOISE: u64 = 1;
const INITIAL_NOISE: u64 = 2;

/// One denoising step from level `t` to `t - 1` on the pixels where `mask`
/// is true; other pixels are left as they are.
///
/// A masked value `x` becomes `x + λ (target - x) + sqrt(1 - (1 - λ)^2) σ(t - 1) ε`.
/// The noise is drawn for every pixel, masked or not, so the stream position
/// does not depend on the mask.
///
/// # Panics
/// If `t == 0` or the mask, latent and target sizes disagree.
pub fn toy_denoise_step(
    latent: &Latent,
    t: u32,
    sched: &SdeditSchedule,
    model: &ToyDenoiser,
    mask: &[bool],
    rng: &mut impl Rng,
) -> Latent {
    assert!(t >= 1, "denoising starts at t >= 1");
    assert_eq!(mask.len(), latent.pixel_count(), "mask size");
    assert_eq!(latent.data.len(), model.target.data.len(), "target size");
    let lambda = model.lambda;
    let scale = (1.0 - (1.0 - lambda) * (1.0 - lambda)).sqrt() * sched.sigma(t - 1);
    let mut out = latent.clone();
    for (p, &inside) in mask.iter().enumerate() {
        for c in 0..3 {
            let i = 3 * p + c;
            let eps: f64 = rng.sample(StandardNormal);
            if inside {
                out.data[i] =
                    (1.0 - lambda) * latent.data[i] + lambda * model.target.data[i] + scale * eps;
            }
        }
    }
    out
}

/// Per-pixel glyph-region flags from the boxes (region-attention assignment
/// on the pixel grid, group >= 1).
pub fn region_mask(width: u32, height: u32, boxes: &[BBox]) -> Vec<bool> {
    assign_pixels((height as usize, width as usize), (width, height), boxes)
        .groups
        .iter()
        .map(|&g| g >= 1)
        .collect()
}

/// State after a step, for tracing.
pub struct StepTrace<'a> {
    /// Timestep that was just completed (the latent is now at level `t - 1`).
    pub t: u32,
    pub phase: Phase,
    pub latent: &'a Latent,
}

/// Runs the two-phase edit and returns the final clipped image.
pub fn region_sdedit(
    original: &RasterImage,
    boxes: &[BBox],
    target: &RasterImage,
    sched: &SdeditSchedule,
    model: &ToyDenoiser,
    rng: &mut impl Rng,
) -> Result<RasterImage, SdeditError> {
    region_sdedit_traced(original, boxes, target, sched, model, rng, |_| {})
}

/// [`region_sdedit`] calling `on_step` after every step.
pub fn region_sdedit_traced(
    original: &RasterImage,
    boxes: &[BBox],
    target: &RasterImage,
    sched: &SdeditSchedule,
    model: &ToyDenoiser,
    rng: &mut impl Rng,
    on_step: impl FnMut(StepTrace<'_>),
) -> Result<RasterImage, SdeditError> {
    Ok(region_sdedit_latent(original, boxes, target, sched, model, rng, on_step)?.to_image())
}

/// The edit before 8-bit quantization: the final latent clipped to `[0, 1]`.
pub fn region_sdedit_latent(
    original: &RasterImage,
    boxes: &[BBox],
    target: &RasterImage,
    sched: &SdeditSchedule,
    model: &ToyDenoiser,
    rng: &mut impl Rng,
    mut on_step: impl FnMut(StepTrace<'_>),
) -> Result<Latent, SdeditError> {
    let dims = (original.width(), original.height());
    if dims != (target.width(), target.height()) || model.target.data.len() != target.as_raw().len()
    {
        return Err(SdeditError::DimMismatch(format!(
            "original {}x{}, target {}x{}, model target {} values",
            dims.0,
            dims.1,
            target.width(),
            target.height(),
            model.target.data.len()
        )));
    }
    if let Some(b) = boxes
        .iter()
        .find(|b| b.right() > dims.0 || b.bottom() > dims.1)
    {
        return Err(SdeditError::DimMismatch(format!(
            "box {b:?} exceeds the {}x{} canvas",
            dims.0, dims.1
        )));
    }
    let base: u64 = rng.gen();
    let clean = Latent::from_image(original);
    let inside = region_mask(dims.0, dims.1, boxes);
    let everywhere = vec![true; inside.len()];

    let noised = |level: f64, rng: &mut GenRng| {
        let mut l = clean.clone();
        for v in &mut l.data {
            let eps: f64 = rng.sample(StandardNormal);
            *v += level * eps;
        }
        l
    };
    let mut latent = noised(
        sched.sigma(sched.t0),
        &mut noise_stream(base, sched.t0, INITIAL_NOISE),
    );
    for (t, phase) in sched.steps() {
        let mut step_rng = noise_stream(base, t, DENOISE_NOISE);
        latent = match phase {
            Phase::Region => {
                let mut next = toy_denoise_step(&latent, t, sched, model, &inside, &mut step_rng);
                let reset = noised(sched.sigma(t - 1), &mut noise_stream(base, t, RESET_NOISE));
                for (p, &ins) in inside.iter().enumerate() {
                    if !ins {
                        next.data[3 * p..3 * p + 3].copy_from_slice(&reset.data[3 * p..3 * p + 3]);
                    }
                }
                next
            }
            Phase::Full => toy_denoise_step(&latent, t, sched, model, &everywhere, &mut step_rng),
        };
        on_step(StepTrace {
            t,
            phase,
            latent: &latent,
        });
    }
    latent.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(latent)
}

/// Root-mean-square difference over the pixels where `mask == want`, in unit
/// range. Returns 0 for an empty selection.
pub fn masked_rmse(a: &Latent, b: &Latent, mask: &[bool], want: bool) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, &m) in mask.iter().enumerate() {
        if m == want {
            for c in 0..3 {
                let d = a.data[3 * p + c] - b.data[3 * p + c];
                sum += d * d;
            }
            n += 3;
        }
    }
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// Toy editing scene.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyScene {
    pub original: RasterImage,
    pub target: RasterImage,
    pub boxes: Vec<BBox>,
}

/// A `size x size` scene: the original is a smooth two-color gradient; the
/// target shows a short word rendered in each box and, outside the boxes,
/// the original with a slight tint standing in for the model's own
/// re-rendering of the background.
///
/// # Panics
/// If `size < 48` (the boxes would not fit).
pub fn toy_scene(size: u32, seed: u64) -> Result<ToyScene, SdeditError> {
    assert!(size >= 48, "toy scenes need at least 48x48 pixels");
    let mut rng = stream(seed, &[0x5DED]);
    let c0: [f64; 3] = [
        rng.gen_range(0.2..0.8),
        rng.gen_range(0.2..0.8),
        rng.gen_range(0.2..0.8),
    ];
    let c1: [f64; 3] = [
        rng.gen_range(0.2..0.8),
        rng.gen_range(0.2..0.8),
        rng.gen_range(0.2..0.8),
    ];
    let tint: [f64; 3] = [
        rng.gen_range(-0.04..0.04),
        rng.gen_range(-0.04..0.04),
        rng.gen_range(-0.04..0.04),
    ];
    let mut original = RasterImage::filled(size, size, Rgb::BLACK);
    let mut target = RasterImage::filled(size, size, Rgb::BLACK);
    let to_u8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    for y in 0..size {
        for x in 0..size {
            let a = (x + y) as f64 / (2 * (size - 1)) as f64;
            let px: Vec<f64> = (0..3).map(|c| c0[c] * (1.0 - a) + c1[c] * a).collect();
            original.put(x, y, Rgb([to_u8(px[0]), to_u8(px[1]), to_u8(px[2])]));
            target.put(
                x,
                y,
                Rgb([
                    to_u8(px[0] + tint[0]),
                    to_u8(px[1] + tint[1]),
                    to_u8(px[2] + tint[2]),
                ]),
            );
        }
    }
    let codebook = FontCodebook::build(1, 8, 4, seed);
    let atlas = codebook.font(0).expect("codebook has one font");
    let (bw, bh) = (40, 20);
    let mut boxes = vec![BBox::new(
        rng.gen_range(2..size - bw - 2),
        rng.gen_range(2..size / 2 - bh),
        bw,
        bh,
    )];
    if rng.gen_bool(0.5) {
        boxes.push(BBox::new(
            rng.gen_range(2..size - bw - 2),
            rng.gen_range(size / 2..size - bh - 2),
            bw,
            bh,
        ));
    }
    const WORDS: [&str; 6] = ["SALE", "NEW", "OPEN", "HOT", "TEA", "ART"];
    for b in &boxes {
        // the edited region gets a fresh backdrop and the word on top
        let back = Rgb([
            to_u8(rng.gen_range(0.0..1.0)),
            to_u8(rng.gen_range(0.0..1.0)),
            to_u8(rng.gen_range(0.0..1.0)),
        ]);
        for y in b.y..b.bottom() {
            for x in b.x..b.right() {
                target.put(x, y, back);
            }
        }
        let word = WORDS[rng.gen_range(0..WORDS.len())];
        let color = codebook
            .color(rng.gen_range(0..8))
            .expect("palette index in range");
        let tb = TextBox {
            bbox: *b,
            text: word.into(),
            font_id: 0,
            color_id: 0,
            align: Align::Center,
        };
        draw_box(&mut target, &tb, atlas, color)?;
    }
    Ok(ToyScene {
        original,
        target,
        boxes,
    })
}

/// Outside-box RMSE vs the original and in-box RMSE vs the target of one
/// toy-scene edit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EditErrors {
    pub outside: f64,
    pub inside: f64,
}

pub fn edit_errors(scene: &ToyScene, edited: &Latent) -> EditErrors {
    let mask = region_mask(
        scene.original.width(),
        scene.original.height(),
        &scene.boxes,
    );
    EditErrors {
        outside: masked_rmse(edited, &Latent::from_image(&scene.original), &mask, false),
        inside: masked_rmse(edited, &Latent::from_image(&scene.target), &mask, true),
    }
}

/// Runs one toy-scene edit, noise seeded from `seed`, and scores the clipped
/// final latent (before quantization).
pub fn run_toy_edit(
    size: u32,
    sched: &SdeditSchedule,
    lambda: f64,
    seed: u64,
) -> Result<EditErrors, SdeditError> {
    let scene = toy_scene(size, seed)?;
    let model = ToyDenoiser::new(&scene.target, lambda)?;
    let mut rng = stream(seed, &[0xED17]);
    let edited = region_sdedit_latent(
        &scene.original,
        &scene.boxes,
        &scene.target,
        sched,
        &model,
        &mut rng,
        |_| {},
    )?;
    Ok(edit_errors(&scene, &edited))
}

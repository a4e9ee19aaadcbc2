use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use glyphtext_core::image::{write_pbm, RasterImage};
use glyphtext_core::rng::stream;
use glyphtext_core::sdedit::{
    edit_errors, make_schedule, masked_rmse, region_mask, region_sdedit_latent, toy_scene, Latent,
    Phase, ToyDenoiser, DEFAULT_LAMBDA, DEFAULT_T0, DEFAULT_T1, DEFAULT_T_MAX,
};
use serde::{Deserialize, Serialize};

use super::require_out;
use crate::config::record_run;
use crate::error::CliError;

pub const RMSE_CSV_FILE: &str = "rmse.csv";

#[derive(Debug, clap::Args, Serialize)]
pub struct Args {
    /// First noised timestep; region-only denoising runs from here.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t0: Option<u32>,
    /// Timestep where full-image denoising takes over.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t1: Option<u32>,
    /// Length of the diffusion schedule (T_max).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<u32>,
    /// Side of the square toy scene in pixels (at least 48).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub size: Option<u32>,
    /// Toy denoiser pull toward the target per step.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Write a snapshot every N timesteps (plus the phase boundaries).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshot_every: Option<u32>,
    /// Output directory (scene PPMs, snapshots/, rmse.csv, run.json).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub t0: u32,
    pub t1: u32,
    pub steps: u32,
    pub size: u32,
    pub lambda: f64,
    pub seed: u64,
    pub snapshot_every: u32,
    pub out: Option<PathBuf>,
    pub workers: usize,
    pub sequential: bool,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            t0: DEFAULT_T0,
            t1: DEFAULT_T1,
            steps: DEFAULT_T_MAX,
            size: 64,
            lambda: DEFAULT_LAMBDA,
            seed: 0,
            snapshot_every: 100,
            out: None,
            workers: 0,
            sequential: false,
        }
    }
}

#[derive(Debug, Serialize)]
struct Summary {
    boxes: usize,
    region_steps: u32,
    full_steps: u32,
    rmse_outside_vs_original: f64,
    rmse_inside_vs_target: f64,
    snapshots: usize,
}

fn write_ppm(path: &Path, img: &RasterImage) -> Result<(), CliError> {
    let f = File::create(path).map_err(CliError::io(path))?;
    img.write_ppm(BufWriter::new(f)).map_err(CliError::io(path))
}

fn phase_name(p: Phase) -> &'static str {
    match p {
        Phase::Region => "region",
        Phase::Full => "full",
    }
}

pub fn run(cfg: &Config) -> Result<(), CliError> {
    let out = require_out(&cfg.out, "sdedit-demo")?;
    let sched =
        make_schedule(cfg.t0, cfg.t1, cfg.steps).map_err(|e| CliError::Usage(e.to_string()))?;
    if cfg.size < 48 {
        return Err(CliError::Usage(
            "sdedit-demo: --size must be at least 48".into(),
        ));
    }
    if !(0.0..=1.0).contains(&cfg.lambda) {
        return Err(CliError::Usage(
            "sdedit-demo: --lambda must lie in [0, 1]".into(),
        ));
    }
    if cfg.snapshot_every == 0 {
        return Err(CliError::Usage(
            "sdedit-demo: --snapshot-every must be positive".into(),
        ));
    }
    record_run("sdedit-demo", cfg, out)?;

    let scene = toy_scene(cfg.size, cfg.seed).map_err(CliError::domain)?;
    let model = ToyDenoiser::new(&scene.target, cfg.lambda).map_err(CliError::domain)?;
    write_ppm(&out.join("original.ppm"), &scene.original)?;
    write_ppm(&out.join("target.ppm"), &scene.target)?;
    let inside = region_mask(cfg.size, cfg.size, &scene.boxes);
    let path = out.join("region.pbm");
    write_pbm(
        BufWriter::new(File::create(&path).map_err(CliError::io(&path))?),
        cfg.size as usize,
        cfg.size as usize,
        &inside,
    )
    .map_err(CliError::io(&path))?;

    let snap_dir = out.join("snapshots");
    fs::create_dir_all(&snap_dir).map_err(CliError::io(&snap_dir))?;
    let csv_path = out.join(RMSE_CSV_FILE);
    let mut csv = BufWriter::new(File::create(&csv_path).map_err(CliError::io(&csv_path))?);
    writeln!(csv, "t,phase,rmse_in,rmse_out").map_err(CliError::io(&csv_path))?;

    let original = Latent::from_image(&scene.original);
    let target = Latent::from_image(&scene.target);
    let mut failure: Option<CliError> = None;
    let mut snapshots = 0usize;
    let mut rng = stream(cfg.seed, &[0xED17]);
    let edited = region_sdedit_latent(
        &scene.original,
        &scene.boxes,
        &scene.target,
        &sched,
        &model,
        &mut rng,
        |step| {
            if failure.is_some() {
                return;
            }
            let rmse_in = masked_rmse(step.latent, &target, &inside, true);
            let rmse_out = masked_rmse(step.latent, &original, &inside, false);
            let mut res = writeln!(
                csv,
                "{},{},{rmse_in},{rmse_out}",
                step.t,
                phase_name(step.phase)
            )
            .map_err(CliError::io(&csv_path));
            let boundary = step.t == sched.t0 || step.t == sched.t1 + 1 || step.t == 1;
            if res.is_ok() && (boundary || step.t % cfg.snapshot_every == 0) {
                let name = format!("t{:04}-{}.ppm", step.t, phase_name(step.phase));
                res = write_ppm(&snap_dir.join(name), &step.latent.to_image());
                snapshots += 1;
            }
            if let Err(e) = res {
                failure = Some(e);
            }
        },
    )
    .map_err(CliError::domain)?;
    if let Some(e) = failure {
        return Err(e);
    }
    csv.flush().map_err(CliError::io(&csv_path))?;
    write_ppm(&out.join("edited.ppm"), &edited.to_image())?;

    let errors = edit_errors(&scene, &edited);
    let summary = Summary {
        boxes: scene.boxes.len(),
        region_steps: sched.region_steps(),
        full_steps: sched.full_steps(),
        rmse_outside_vs_original: errors.outside,
        rmse_inside_vs_target: errors.inside,
        snapshots,
    };
    println!(
        "{}",
        serde_json::to_string(&summary).expect("summary serializes")
    );
    Ok(())
}

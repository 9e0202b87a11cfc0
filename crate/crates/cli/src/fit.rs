use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use nalgebra::Vector3;
use pdhmr_core::fit::{fit_pipeline, FitConfig, Observation, PipelineResult};
use pdhmr_core::io::{read_json, write_json};
use pdhmr_core::metrics::{mpjpe, pa_mpjpe, EvalInput};
use pdhmr_core::raster::{read_buffers, RasterBuffers};
use pdhmr_core::synth::{generate_scene, scene_rng, DatasetConfig, DatasetIndex, SceneMeta};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::manifest::ManifestBuilder;
use crate::{body_from, create_out_dir, opt_path_string};

pub const SUMMARY_JSON: &str = "summary.json";

/// Stream offset separating the init-noise draws from the scene draws.
const NOISE_STREAM: u64 = 1 << 32;

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Fit configuration JSON (default: built-in settings).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Fit an existing dataset written by `sample` instead of generating scenes.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Overrides the seed from the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the scene count from the configuration.
    #[arg(long)]
    pub n: Option<usize>,
    /// Body OBJ with its sidecar JSON (default: the built-in humanoid).
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitRunConfig {
    pub dataset: DatasetConfig,
    pub fit: FitConfig,
    /// Scenes to generate when no dataset is given.
    pub n: usize,
    /// Standard deviation of the Gaussian noise added to the true joints to
    /// form the initial 3D estimate, meters.
    pub init_noise_m: f64,
}

impl Default for FitRunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            fit: FitConfig::default(),
            n: 50,
            init_noise_m: 0.002,
        }
    }
}

/// Per-scene outcome written to `fits/<id>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub id: String,
    pub tau: f64,
    pub protocol: usize,
    #[serde(rename = "Tz_true")]
    pub tz_true: f64,
    #[serde(rename = "Tz_rel_error")]
    pub tz_rel_error: f64,
    pub f_true: f64,
    pub f_rel_error: f64,
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
    pub init_pa_mpjpe: f64,
    pub joints3d_true: Vec<Vector3<f64>>,
    pub result: PipelineResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub count: usize,
    pub converged: usize,
    #[serde(rename = "median_Tz_rel_error")]
    pub median_tz_rel_error: f64,
    pub median_f_rel_error: f64,
    pub median_pa_mpjpe: f64,
    pub median_init_pa_mpjpe: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => (v[n / 2 - 1] + v[n / 2]) / 2.0,
    }
}

/// Ground truth plus the seeded initial estimate, then the pipeline.
fn fit_scene(meta: &SceneMeta, buffers: &RasterBuffers, cfg: &FitRunConfig) -> Result<FitRecord> {
    let mut rng = scene_rng(cfg.dataset.camera.seed, NOISE_STREAM as usize + meta.index);
    let noise = Normal::new(0.0, cfg.init_noise_m).context("init_noise_m must be finite and non-negative")?;
    let init: Vec<Vector3<f64>> = meta
        .joints3d
        .iter()
        .map(|j| j + Vector3::from_fn(|_, _| noise.sample(&mut rng)))
        .collect();
    let obs = Observation {
        buffers,
        joints2d: &meta.joints2d,
    };
    let result = fit_pipeline(&obs, &init, None, &cfg.fit).with_context(|| format!("scene {}", meta.id))?;
    let (tz, f) = (meta.translation.tz, meta.camera.intrinsics.f);
    Ok(FitRecord {
        id: meta.id.clone(),
        tau: meta.tau,
        protocol: meta.protocol,
        tz_true: tz,
        tz_rel_error: (result.tz - tz).abs() / tz,
        f_true: f,
        f_rel_error: (result.f_pixels - f).abs() / f,
        mpjpe: mpjpe(&result.joints3d, &meta.joints3d)?,
        pa_mpjpe: pa_mpjpe(&result.joints3d, &meta.joints3d)?,
        init_pa_mpjpe: pa_mpjpe(&init, &meta.joints3d)?,
        joints3d_true: meta.joints3d.clone(),
        result,
    })
}

fn load_scene(data: &Path, dir: &str) -> Result<(SceneMeta, RasterBuffers)> {
    let dir = data.join(dir);
    let meta: SceneMeta = read_json(&dir.join("meta.json"))?;
    let buffers = read_buffers(&dir, meta.translation.tz)?;
    Ok((meta, buffers))
}

pub fn run(args: &FitArgs, threads: usize) -> Result<()> {
    let mut cfg: FitRunConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => FitRunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.dataset.camera.seed = seed;
    }
    if let Some(n) = args.n {
        cfg.n = n;
    }
    let records: Vec<FitRecord> = match &args.data {
        Some(data) => {
            let index: DatasetIndex = read_json(&data.join("index.json"))?;
            // the dataset's own seed drives the init noise
            cfg.dataset = index.config.clone();
            if let Some(seed) = args.seed {
                cfg.dataset.camera.seed = seed;
            }
            index
                .scenes
                .par_iter()
                .map(|e| {
                    let (meta, buffers) = load_scene(data, &e.dir)?;
                    fit_scene(&meta, &buffers, &cfg)
                })
                .collect::<Result<_>>()?
        }
        None => {
            cfg.dataset.camera.validate()?;
            let body = body_from(args.mesh.as_deref(), &cfg.dataset.body)?;
            (0..cfg.n)
                .into_par_iter()
                .map(|i| {
                    let scene = generate_scene(&cfg.dataset, &body, i)?;
                    fit_scene(&scene.meta, &scene.buffers, &cfg)
                })
                .collect::<Result<_>>()?
        }
    };

    let fits_dir = args.out.join("fits");
    let pred_dir = args.out.join("eval").join("pred");
    let gt_dir = args.out.join("eval").join("gt");
    for d in [&fits_dir, &pred_dir, &gt_dir] {
        create_out_dir(d)?;
    }
    let mut manifest = ManifestBuilder::new("fit", threads)
        .config(&cfg)
        .seed(cfg.dataset.camera.seed)
        .input("config", opt_path_string(&args.config))
        .input("data", opt_path_string(&args.data))
        .input("mesh", opt_path_string(&args.mesh));
    for r in &records {
        write_json(&fits_dir.join(format!("{}.json", r.id)), r)?;
        let pred = EvalInput {
            joints3d: r.result.joints3d.clone(),
            ..Default::default()
        };
        write_json(&pred_dir.join(format!("{}.json", r.id)), &pred)?;
        // tau rides along with the ground truth for protocol splits
        let gt = EvalInput {
            joints3d: r.joints3d_true.clone(),
            tau: Some(r.tau),
            ..Default::default()
        };
        write_json(&gt_dir.join(format!("{}.json", r.id)), &gt)?;
        manifest.output(format!("fits/{}.json", r.id));
    }
    manifest.output("eval/pred");
    manifest.output("eval/gt");

    let col = |get: fn(&FitRecord) -> f64| records.iter().map(get).collect::<Vec<f64>>();
    let summary = FitSummary {
        count: records.len(),
        converged: records.iter().filter(|r| r.result.converged).count(),
        median_tz_rel_error: median(&col(|r| r.tz_rel_error)),
        median_f_rel_error: median(&col(|r| r.f_rel_error)),
        median_pa_mpjpe: median(&col(|r| r.pa_mpjpe)),
        median_init_pa_mpjpe: median(&col(|r| r.init_pa_mpjpe)),
    };
    write_json(&args.out.join(SUMMARY_JSON), &summary)?;
    manifest.output(SUMMARY_JSON);
    manifest.finish(&args.out)?;
    Ok(())
}

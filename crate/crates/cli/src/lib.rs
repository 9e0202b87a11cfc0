//! Batch front-end for `pdhmr-core`.
//!
//! Every subcommand writes its results under `--out` together with a
//! `run_manifest.json` describing the run. Everything except the manifest is
//! a pure function of the inputs, the configuration and the seed.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use pdhmr_core::body::{build_default_body, io::load_body, ArticulatedBody, BodyConfig};

pub mod dolly;
pub mod eval;
pub mod fit;
pub mod manifest;
pub mod render;
pub mod sample;

pub use manifest::{RunManifest, MANIFEST_FILE};

#[derive(Debug, Parser)]
#[command(name = "pdhmr", version, about = "Perspective-distortion tools for human mesh recovery")]
pub struct Cli {
    /// Worker threads for sample-level parallelism (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rasterize a body through a camera into depth, IUV and distortion images.
    Render(render::RenderArgs),
    /// Weak vs. perspective reprojection error along a dolly zoom.
    Dolly(dolly::DollyArgs),
    /// Generate a synthetic dataset of randomly placed cameras.
    Sample(sample::SampleArgs),
    /// Score predictions against ground truth, per sample and per protocol.
    Eval(eval::EvalArgs),
    /// Recover depth, focal length and joints on generated scenes.
    Fit(fit::FitArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Render(_) => "render",
            Command::Dolly(_) => "dolly",
            Command::Sample(_) => "sample",
            Command::Eval(_) => "eval",
            Command::Fit(_) => "fit",
        }
    }
}

/// Run a parsed command line inside a pool of the requested size.
pub fn run(cli: Cli) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        anyhow::ensure!(n > 0, "--threads must be at least 1");
        builder = builder.num_threads(n);
    }
    let pool = builder.build().context("building the worker pool")?;
    let threads = pool.current_num_threads();
    pool.install(|| match &cli.command {
        Command::Render(a) => render::run(a, threads),
        Command::Dolly(a) => dolly::run(a, threads),
        Command::Sample(a) => sample::run(a, threads),
        Command::Eval(a) => eval::run(a, threads),
        Command::Fit(a) => fit::run(a, threads),
    })
}

/// The body at `mesh`, or the built-in humanoid.
pub fn body_from(mesh: Option<&Path>, config: &BodyConfig) -> Result<ArticulatedBody> {
    match mesh {
        Some(path) => load_body(path).with_context(|| format!("loading body {}", path.display())),
        None => Ok(build_default_body(config)?),
    }
}

pub fn create_out_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

pub(crate) fn path_string(p: &Path) -> String {
    p.display().to_string()
}

pub(crate) fn opt_path_string(p: &Option<PathBuf>) -> String {
    p.as_deref().map_or_else(|| "<built-in>".to_string(), path_string)
}

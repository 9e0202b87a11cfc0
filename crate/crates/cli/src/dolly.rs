use std::path::PathBuf;

use anyhow::{ensure, Result};
use clap::Args;
use pdhmr_core::body::BodyConfig;
use pdhmr_core::io::{format_sig, write_csv};
use pdhmr_core::synth::{dolly_sweep, reference_joints, DOLLY_SWEEP};
use serde::Serialize;

use crate::manifest::ManifestBuilder;
use crate::{body_from, create_out_dir, opt_path_string};

pub const DOLLY_CSV: &str = "dolly.csv";

#[derive(Debug, Args)]
pub struct DollyArgs {
    /// Body OBJ with its sidecar JSON (default: the built-in humanoid).
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    /// Comma-separated pelvis depths in meters.
    #[arg(long, value_delimiter = ',', default_values_t = DOLLY_SWEEP.to_vec())]
    pub tz: Vec<f64>,
    /// Image height (and width) in pixels.
    #[arg(long, default_value_t = 224)]
    pub height: u32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct DollyConfig<'a> {
    tz: &'a [f64],
    height: u32,
}

pub fn run(args: &DollyArgs, threads: usize) -> Result<()> {
    ensure!(!args.tz.is_empty(), "no Tz values given");
    if let Some(bad) = args.tz.iter().find(|&&t| !(t > 0.0 && t.is_finite())) {
        anyhow::bail!("Tz must be positive, got {bad}");
    }
    let body = body_from(args.mesh.as_deref(), &BodyConfig::default())?;
    let joints = reference_joints(&body)?;
    let points = dolly_sweep(&joints, &args.tz, args.height)?;
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| vec![format_sig(p.tz, 6), format_sig(p.tau, 6), format_sig(p.error_px, 6)])
        .collect();
    create_out_dir(&args.out)?;
    write_csv(&args.out.join(DOLLY_CSV), &["Tz", "tau", "error_px"], &rows)?;
    let mut manifest = ManifestBuilder::new("dolly", threads)
        .config(&DollyConfig {
            tz: &args.tz,
            height: args.height,
        })
        .input("mesh", opt_path_string(&args.mesh));
    manifest.output(DOLLY_CSV);
    manifest.finish(&args.out)?;
    Ok(())
}

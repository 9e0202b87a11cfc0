use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use pdhmr_core::io::read_json;
use pdhmr_core::synth::{generate_dataset, DatasetConfig};

use crate::manifest::ManifestBuilder;
use crate::{body_from, create_out_dir, opt_path_string};

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Dataset configuration JSON (default: built-in ranges).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the seed from the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of scenes.
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    /// Body OBJ with its sidecar JSON (default: the built-in humanoid).
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn load_dataset_config(path: Option<&std::path::Path>, seed: Option<u64>) -> Result<DatasetConfig> {
    let mut config: DatasetConfig = match path {
        Some(p) => read_json(p)?,
        None => DatasetConfig::default(),
    };
    if let Some(seed) = seed {
        config.camera.seed = seed;
    }
    config.camera.validate()?;
    Ok(config)
}

pub fn run(args: &SampleArgs, threads: usize) -> Result<()> {
    let config = load_dataset_config(args.config.as_deref(), args.seed)?;
    let body = body_from(args.mesh.as_deref(), &config.body)?;
    create_out_dir(&args.out)?;
    let index = generate_dataset(&config, &body, args.n, &args.out)?;
    let mut manifest = ManifestBuilder::new("sample", threads)
        .config(&config)
        .seed(config.camera.seed)
        .input("config", opt_path_string(&args.config))
        .input("mesh", opt_path_string(&args.mesh));
    manifest.output("index.json");
    for s in &index.scenes {
        manifest.output(s.dir.clone());
    }
    manifest.finish(&args.out)?;
    Ok(())
}

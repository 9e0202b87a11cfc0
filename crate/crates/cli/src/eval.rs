use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use pdhmr_core::io::{format_sig, read_json, write_csv, write_json};
use pdhmr_core::metrics::{evaluate_batch, summarize, EvalInput, MetricReport, PDHUMAN_THRESHOLDS};
use serde::Serialize;

use crate::manifest::{ManifestBuilder, MANIFEST_FILE};
use crate::{create_out_dir, path_string};

pub const METRICS_CSV: &str = "metrics.csv";
pub const PROTOCOLS_JSON: &str = "protocols.json";
pub const METRICS_HEADER: [&str; 8] = ["id", "mpjpe", "pa_mpjpe", "pve", "miou", "p_miou", "tau", "protocol"];

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of `<id>.json` predictions.
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory of `<id>.json` ground truth.
    #[arg(long)]
    pub gt: PathBuf,
    /// Protocol thresholds on tau, strictest last.
    #[arg(long, value_delimiter = ',', default_values_t = PDHUMAN_THRESHOLDS.to_vec())]
    pub thresholds: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct EvalConfig<'a> {
    thresholds: &'a [f64],
}

/// Every `<id>.json` in `dir` (the run manifest excluded), keyed by id.
pub fn read_samples(dir: &Path) -> Result<BTreeMap<String, EvalInput>> {
    let entries = std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.with_context(|| format!("reading {}", dir.display()))?.path();
        let is_json = path.extension().is_some_and(|e| e == "json");
        if !is_json || path.file_name().is_some_and(|n| n == MANIFEST_FILE) {
            continue;
        }
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        out.insert(id, read_json(&path)?);
    }
    Ok(out)
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| format_sig(v, 6))
}

pub fn report_row(r: &MetricReport) -> Vec<String> {
    vec![
        r.id.clone(),
        format_sig(r.mpjpe, 6),
        format_sig(r.pa_mpjpe, 6),
        opt(r.pve),
        opt(r.miou),
        opt(r.p_miou),
        opt(r.tau),
        r.protocol.map_or_else(String::new, |p| p.to_string()),
    ]
}

pub fn run(args: &EvalArgs, threads: usize) -> Result<()> {
    let mut pred = read_samples(&args.pred)?;
    let gt = read_samples(&args.gt)?;
    let missing: Vec<&String> = gt.keys().filter(|id| !pred.contains_key(*id)).collect();
    let extra: Vec<&String> = pred.keys().filter(|id| !gt.contains_key(*id)).collect();
    if !missing.is_empty() || !extra.is_empty() {
        let list = |v: &[&String]| v.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ");
        let mut msg = String::from("prediction and ground-truth ids differ");
        if !missing.is_empty() {
            msg += &format!("\n  missing predictions: {}", list(&missing));
        }
        if !extra.is_empty() {
            msg += &format!("\n  predictions without ground truth: {}", list(&extra));
        }
        bail!(msg);
    }
    let samples: Vec<(String, EvalInput, EvalInput)> = gt
        .into_iter()
        .map(|(id, g)| {
            let p = pred.remove(&id).expect("ids checked above");
            (id, p, g)
        })
        .collect();
    let reports = evaluate_batch(&samples, &args.thresholds).map_err(|(id, e)| anyhow::anyhow!("sample {id}: {e}"))?;

    create_out_dir(&args.out)?;
    let rows: Vec<Vec<String>> = reports.iter().map(report_row).collect();
    write_csv(&args.out.join(METRICS_CSV), &METRICS_HEADER, &rows)?;
    write_json(&args.out.join(PROTOCOLS_JSON), &summarize(&reports))?;
    let mut manifest = ManifestBuilder::new("eval", threads)
        .config(&EvalConfig {
            thresholds: &args.thresholds,
        })
        .input("pred", path_string(&args.pred))
        .input("gt", path_string(&args.gt));
    manifest.output(METRICS_CSV);
    manifest.output(PROTOCOLS_JSON);
    manifest.finish(&args.out)?;
    Ok(())
}

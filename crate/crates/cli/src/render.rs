use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use nalgebra::{Matrix3, Vector2, Vector3};
use pdhmr_core::body::{BodyConfig, Pose, PELVIS};
use pdhmr_core::geometry::{perspective_project, CameraIntrinsics, GeometryError, Translation};
use pdhmr_core::io::{read_json, write_json};
use pdhmr_core::raster::{max_distortion_scale, rasterize, write_buffers, RasterBuffers, RasterError, RasterHeader};
use serde::{Deserialize, Serialize};

use crate::manifest::ManifestBuilder;
use crate::{body_from, create_out_dir, opt_path_string, path_string};

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Camera JSON: `intrinsics`, `translation` and an optional `rotation`.
    #[arg(long, alias = "config")]
    pub camera: PathBuf,
    /// Body OBJ with its sidecar JSON (default: the built-in humanoid).
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    /// Pose JSON (default: rest pose).
    #[arg(long)]
    pub pose: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Camera placement for `render`. The body is centered on its pelvis,
/// rotated by `rotation` (rows are the camera axes) and shifted by
/// `translation`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraFile {
    pub intrinsics: CameraIntrinsics,
    pub translation: Translation,
    #[serde(default)]
    pub rotation: Option<[[f64; 3]; 3]>,
}

impl CameraFile {
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.map_or_else(Matrix3::identity, |r| {
            Matrix3::from_row_slice(&[r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2]])
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderStatus {
    Ok,
    EmptyRaster,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderMeta {
    pub status: RenderStatus,
    /// Why the raster is empty, when it is.
    pub reason: Option<String>,
    pub tau: Option<f64>,
    pub covered_pixels: usize,
    pub translation: Translation,
    pub joints3d: Vec<Vector3<f64>>,
    /// Absent when a joint sits behind the camera.
    pub joints2d: Option<Vec<Vector2<f64>>>,
    pub raster: RasterHeader,
}

pub fn run(args: &RenderArgs, threads: usize) -> Result<()> {
    let camera: CameraFile = read_json(&args.camera)?;
    camera.intrinsics.validate().with_context(|| format!("{}: intrinsics", args.camera.display()))?;
    let body = body_from(args.mesh.as_deref(), &BodyConfig::default())?;
    let pose = match &args.pose {
        Some(p) => read_json(p)?,
        None => Pose::identity(body.num_joints()),
    };
    let posed = body.pose(&pose)?;
    let joints = body.regressor.regress(&posed)?;
    let r = camera.rotation_matrix();
    let pelvis = joints[PELVIS];
    let vertices: Vec<Vector3<f64>> = posed.iter().map(|v| r * (v - pelvis)).collect();
    let joints3d: Vec<Vector3<f64>> = joints.iter().map(|j| r * (j - pelvis)).collect();
    let t = camera.translation;
    let k = camera.intrinsics;

    let (buffers, reason) = match rasterize(&body.raster_mesh(&vertices), &t, &k) {
        Ok(b) if b.is_empty() => (b, Some("no pixel covered inside the image".to_string())),
        Ok(b) => (b, None),
        Err(RasterError::Geometry(e @ GeometryError::PointBehindCamera { .. })) => {
            (RasterBuffers::background(k.width as usize, k.height as usize, t.tz), Some(e.to_string()))
        }
        Err(e) => return Err(e.into()),
    };
    let meta = RenderMeta {
        status: if reason.is_some() {
            RenderStatus::EmptyRaster
        } else {
            RenderStatus::Ok
        },
        reason,
        tau: max_distortion_scale(&buffers).ok(),
        covered_pixels: buffers.covered_count(),
        translation: t,
        joints2d: perspective_project(&joints3d, &t, &k).ok(),
        joints3d,
        raster: RasterHeader::new(&buffers, &k),
    };

    create_out_dir(&args.out)?;
    let mut manifest = ManifestBuilder::new("render", threads)
        .config(&camera)
        .input("camera", path_string(&args.camera))
        .input("mesh", opt_path_string(&args.mesh))
        .input("pose", opt_path_string(&args.pose));
    write_buffers(&args.out, &buffers)?;
    write_json(&args.out.join("meta.json"), &meta)?;
    for f in ["depth.pfm", "distortion.pfm", "iuv.png", "meta.json"] {
        manifest.output(f);
    }
    if let Some(why) = &meta.reason {
        eprintln!("warning: empty raster: {why}");
    }
    manifest.finish(&args.out)?;
    Ok(())
}

//! Optimization-based recovery of depth, weak camera and 3D joints.
//!
//! The pipeline runs in three stages:
//!
//! 1. `Tz` from the distortion and depth images (median of their product).
//! 2. The weak camera `(s, tx, ty)` inside a square crop around the 2D
//!    joints, by descent on the distortion-weighted weak reprojection loss.
//!    The joints stay fixed.
//! 3. The joints' `(x, y)` in camera space, by descent on the perspective
//!    reprojection loss with `f = s h Tz / 2` and the full-image translation
//!    from the crop. Translation and per-joint depth stay fixed.
//!
//! Descent is plain gradient descent with a backtracking line search: the
//! step halves until the loss strictly decreases and doubles after every
//! accepted step. A stage stops when the relative decrease falls below the
//! tolerance, when no step above the floor decreases the loss, or at the
//! iteration cap.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{
    crop_to_full_translation, focal_from_weak, perspective_project, project_tz, weak_from_correspondences,
    CameraIntrinsics, CropBox, GeometryError, Translation, WeakPerspective, WEAK_FOCAL_PX,
};
use crate::loss::{persp_reproj_loss, weak_reproj_loss, LossError, ParamBlock};
use crate::raster::{sample_distortion_at_joints, RasterBuffers};

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum FitError {
    #[error("no covered pixel with finite depth")]
    EmptyRaster,
    #[error("need at least {min} distinct joints, got {actual}")]
    TooFewJoints { min: usize, actual: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("could not initialize the weak camera from the joints")]
    WeakInit,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub max_iters: usize,
    /// Relative loss decrease below which a stage counts as converged.
    pub rel_tol: f64,
    pub initial_step: f64,
    pub step_floor: f64,
    /// Side of the resized square crop the weak camera lives in, pixels.
    pub crop_resolution: u32,
    /// Crop side as a multiple of the joints' bounding-box size.
    pub crop_padding: f64,
    /// Lower clamp for the estimated `Tz`, meters.
    pub tz_floor: f64,
    /// Divide weak residuals by the distortion sampled at each joint.
    pub distortion_weighting: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            rel_tol: 1e-8,
            initial_step: 1e-3,
            step_floor: 1e-12,
            crop_resolution: 224,
            crop_padding: 1.2,
            tz_floor: 1e-3,
            distortion_weighting: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    ZeroLoss,
    Tolerance,
    /// No step above the floor decreased the loss.
    Stalled,
    MaxIters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub iters: usize,
    pub converged: bool,
    pub stop: StopReason,
    /// Loss before the first and after every accepted step.
    pub losses: Vec<f64>,
}

impl StageStats {
    pub fn initial_loss(&self) -> f64 {
        self.losses[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.losses.last().unwrap()
    }
}

/// Median of `distortion * depth` over covered pixels (positive distortion,
/// finite positive depth).
pub fn estimate_tz_from_distortion(distortion: &[f64], depth: &[f64]) -> Result<f64, FitError> {
    if distortion.len() != depth.len() {
        return Err(FitError::ShapeMismatch(format!(
            "{} distortion values, {} depth values",
            distortion.len(),
            depth.len()
        )));
    }
    let mut products: Vec<f64> = distortion
        .iter()
        .zip(depth)
        .filter(|(d, z)| **d > 0.0 && d.is_finite() && z.is_finite() && **z > 0.0)
        .map(|(d, z)| d * z)
        .collect();
    if products.is_empty() {
        return Err(FitError::EmptyRaster);
    }
    products.sort_by(f64::total_cmp);
    let n = products.len();
    Ok(if n % 2 == 1 {
        products[n / 2]
    } else {
        (products[n / 2 - 1] + products[n / 2]) / 2.0
    })
}

/// Backtracking descent on `loss` along `-direction`.
fn descend<F, G>(x0: Vec<f64>, cfg: &FitConfig, loss: F, direction: G) -> (Vec<f64>, StageStats)
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    let mut x = x0;
    let mut value = loss(&x);
    let mut losses = vec![value];
    let mut step = cfg.initial_step;
    let mut iters = 0;
    let stop = loop {
        if value == 0.0 {
            break StopReason::ZeroLoss;
        }
        if iters >= cfg.max_iters {
            break StopReason::MaxIters;
        }
        iters += 1;
        let dir = direction(&x);
        if dir.iter().all(|&d| d == 0.0) {
            break StopReason::Stalled;
        }
        let accepted = loop {
            if step < cfg.step_floor {
                break None;
            }
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi - step * di).collect();
            let v = loss(&trial);
            if v < value {
                break Some((trial, v));
            }
            step /= 2.0;
        };
        let Some((trial, v)) = accepted else {
            break StopReason::Stalled;
        };
        let rel = (value - v) / value;
        x = trial;
        value = v;
        losses.push(v);
        step *= 2.0;
        if rel < cfg.rel_tol {
            break StopReason::Tolerance;
        }
    };
    let stats = StageStats {
        iters,
        converged: stop != StopReason::MaxIters,
        stop,
        losses,
    };
    (x, stats)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakFit {
    pub weak: WeakPerspective,
    pub stats: StageStats,
}

/// Fit `(s, tx, ty)` with the joints held fixed.
///
/// The search direction is the loss gradient divided by the mean inverse
/// weight, so a uniform rescaling of `d_j` leaves the iterates unchanged.
pub fn fit_weak_camera(
    joints3d: &[Vector3<f64>],
    joints2d_gt: &[Vector2<f64>],
    d_j: &[f64],
    init: &WeakPerspective,
    k: &CameraIntrinsics,
    cfg: &FitConfig,
) -> Result<WeakFit, FitError> {
    check_distinct(joints3d)?;
    init.validate()?;
    // surfaces shape and weight-range errors before descending
    weak_reproj_loss(joints3d, init, joints2d_gt, d_j, k)?;
    let mean_inv = d_j.iter().map(|d| 1.0 / d).sum::<f64>() / d_j.len() as f64;
    let eval = |x: &[f64]| -> Option<crate::loss::LossReport> {
        let w = WeakPerspective::new(x[0], x[1], x[2]).ok()?;
        weak_reproj_loss(joints3d, &w, joints2d_gt, d_j, k).ok()
    };
    let (x, stats) = descend(
        init.to_array().to_vec(),
        cfg,
        |x| eval(x).map_or(f64::INFINITY, |r| r.value),
        |x| {
            eval(x).map_or(vec![0.0; 3], |r| {
                r.grad_or_zero(ParamBlock::Weak, 3).iter().map(|g| g / mean_inv).collect()
            })
        },
    );
    Ok(WeakFit {
        weak: WeakPerspective::from_array([x[0], x[1], x[2]]),
        stats,
    })
}

fn check_distinct(joints3d: &[Vector3<f64>]) -> Result<(), FitError> {
    let distinct = joints3d
        .iter()
        .enumerate()
        .filter(|(i, p)| joints3d[..*i].iter().all(|q| q.xy() != p.xy()))
        .count();
    if distinct < 2 {
        return Err(FitError::TooFewJoints {
            min: 2,
            actual: distinct,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointsFit {
    pub joints3d: Vec<Vector3<f64>>,
    pub stats: StageStats,
}

/// Fit the joints' `(x, y)` to full-image keypoints under the perspective
/// camera `(k, t)`. Depths and the translation are left untouched.
///
/// The loss separates into one term per joint coordinate, so each coordinate
/// runs its own backtracking search; the stage loss is their sum and is
/// reported per sweep.
pub fn fit_joints_perspective(
    joints_init: &[Vector3<f64>],
    t: &Translation,
    k: &CameraIntrinsics,
    joints2d_gt: &[Vector2<f64>],
    cfg: &FitConfig,
) -> Result<JointsFit, FitError> {
    let first = persp_reproj_loss(joints_init, t, joints2d_gt, k)?;
    let n = joints_init.len();
    let mut joints = joints_init.to_vec();
    let mut steps = vec![cfg.initial_step; 2 * n];
    let mut active = vec![true; 2 * n];
    let mut stops = vec![StopReason::MaxIters; 2 * n];

    let shift = [t.tx, t.ty];
    let center = [k.cx, k.cy];
    let target = |j: usize, axis: usize| joints2d_gt[j][axis];
    // signed pixel residual of one coordinate as a function of its value
    let residual = |j: usize, axis: usize, v: f64, z: f64| -> f64 {
        k.f * (v + shift[axis]) / (z + t.tz) + center[axis] - target(j, axis)
    };

    let mut losses = vec![first.value];
    let mut iters = 0;
    while active.iter().any(|&a| a) && iters < cfg.max_iters {
        iters += 1;
        for c in 0..2 * n {
            if !active[c] {
                continue;
            }
            let (j, axis) = (c / 2, c % 2);
            let p = joints[j];
            let v = p[axis];
            let value = residual(j, axis, v, p.z).abs();
            if value == 0.0 {
                active[c] = false;
                stops[c] = StopReason::ZeroLoss;
                continue;
            }
            let grad = residual(j, axis, v, p.z).signum() * k.f / (p.z + t.tz);
            let mut accepted = None;
            while steps[c] >= cfg.step_floor {
                let trial = v - steps[c] * grad;
                let tv = residual(j, axis, trial, p.z).abs();
                if tv < value {
                    accepted = Some((trial, tv));
                    break;
                }
                steps[c] /= 2.0;
            }
            match accepted {
                None => {
                    active[c] = false;
                    stops[c] = StopReason::Stalled;
                }
                Some((trial, tv)) => {
                    joints[j][axis] = trial;
                    steps[c] *= 2.0;
                    if (value - tv) / value < cfg.rel_tol {
                        active[c] = false;
                        stops[c] = StopReason::Tolerance;
                    }
                }
            }
        }
        losses.push(persp_reproj_loss(&joints, t, joints2d_gt, k)?.value);
    }
    let stop = if stops.contains(&StopReason::MaxIters) {
        StopReason::MaxIters
    } else if stops.iter().all(|&s| s == StopReason::ZeroLoss) {
        StopReason::ZeroLoss
    } else if stops.contains(&StopReason::Stalled) {
        StopReason::Stalled
    } else {
        StopReason::Tolerance
    };
    Ok(JointsFit {
        joints3d: joints,
        stats: StageStats {
            iters,
            converged: stop != StopReason::MaxIters,
            stop,
            losses,
        },
    })
}

/// What the pipeline observes for one person.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    /// Dense distortion and depth images; `buffers.tz` is never read.
    pub buffers: &'a RasterBuffers,
    /// Full-image 2D joints, pixels.
    pub joints2d: &'a [Vector2<f64>],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    #[serde(rename = "Tz")]
    pub tz: f64,
    pub s: f64,
    pub tx: f64,
    pub ty: f64,
    pub f_pixels: f64,
    #[serde(rename = "Tx")]
    pub full_tx: f64,
    #[serde(rename = "Ty")]
    pub full_ty: f64,
    /// Pelvis-relative joints in camera orientation, meters.
    pub joints3d: Vec<Vector3<f64>>,
    pub converged: bool,
    pub iters: usize,
    pub crop: CropBox,
    pub joint_weights: Vec<f64>,
    pub weak_stats: StageStats,
    pub persp_stats: StageStats,
}

impl PipelineResult {
    pub fn weak(&self) -> WeakPerspective {
        WeakPerspective::from_array([self.s, self.tx, self.ty])
    }

    pub fn translation(&self) -> Translation {
        Translation::new(self.full_tx, self.full_ty, self.tz)
    }
}

/// Run `Tz` estimation, weak fitting and perspective joint fitting.
///
/// `init_joints` are pelvis-relative; `init_weak` defaults to the
/// least-squares weak camera for those joints.
pub fn fit_pipeline(
    obs: &Observation<'_>,
    init_joints: &[Vector3<f64>],
    init_weak: Option<WeakPerspective>,
    cfg: &FitConfig,
) -> Result<PipelineResult, FitError> {
    if init_joints.len() != obs.joints2d.len() {
        return Err(FitError::ShapeMismatch(format!(
            "{} initial joints for {} keypoints",
            init_joints.len(),
            obs.joints2d.len()
        )));
    }
    let b = obs.buffers;
    let tz = project_tz(estimate_tz_from_distortion(&b.distortion, &b.depth)?, cfg.tz_floor);

    let (full_w, full_h) = (b.width as f64, b.height as f64);
    let crop = CropBox::around_points(obs.joints2d, full_w, full_h, cfg.crop_padding)?;
    let res = cfg.crop_resolution as f64;
    let k_crop = CameraIntrinsics::centered(WEAK_FOCAL_PX, cfg.crop_resolution, cfg.crop_resolution)?;
    let joints_crop: Vec<Vector2<f64>> = obs.joints2d.iter().map(|p| crop.full_to_crop(p, res)).collect();
    let joint_weights: Vec<f64> = if cfg.distortion_weighting {
        sample_distortion_at_joints(b, obs.joints2d).iter().map(|w| w.value).collect()
    } else {
        vec![1.0; init_joints.len()]
    };

    let init_weak = match init_weak {
        Some(w) => w,
        None => weak_from_correspondences(init_joints, &joints_crop, &k_crop).ok_or(FitError::WeakInit)?,
    };
    let weak_fit = fit_weak_camera(init_joints, &joints_crop, &joint_weights, &init_weak, &k_crop, cfg)?;
    let w = weak_fit.weak;

    let f_pixels = focal_from_weak(w.s, crop.w, tz);
    let (full_tx, full_ty) = crop_to_full_translation(&w, &crop);
    let translation = Translation::new(full_tx, full_ty, tz);
    let k_full = CameraIntrinsics::new(f_pixels, full_w / 2.0, full_h / 2.0, b.width as u32, b.height as u32)?;
    let persp = fit_joints_perspective(init_joints, &translation, &k_full, obs.joints2d, cfg)?;

    Ok(PipelineResult {
        tz,
        s: w.s,
        tx: w.tx,
        ty: w.ty,
        f_pixels,
        full_tx,
        full_ty,
        joints3d: persp.joints3d,
        converged: weak_fit.stats.converged && persp.stats.converged,
        iters: weak_fit.stats.iters + persp.stats.iters,
        crop,
        joint_weights,
        weak_stats: weak_fit.stats,
        persp_stats: persp.stats,
    })
}

/// Reprojection of the fitted joints under the recovered full-image camera.
pub fn reproject(result: &PipelineResult, width: u32, height: u32) -> Result<Vec<Vector2<f64>>, FitError> {
    let k = CameraIntrinsics::new(result.f_pixels, width as f64 / 2.0, height as f64 / 2.0, width, height)?;
    Ok(perspective_project(&result.joints3d, &result.translation(), &k)?)
}

//! Hybrid reprojection supervision with analytic gradients.
//!
//! Each loss reports its value together with gradients for the parameter
//! blocks it is allowed to update. Every other block is listed in
//! [`LossReport::blocked`]; in particular the weak-perspective loss never
//! reaches the 3D joints and the perspective loss never reaches the
//! translation.
//!
//! L1 terms use `sign(0) = 0` as subgradient.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{
    focal_from_weak, perspective_project, weak_project, CameraIntrinsics, GeometryError, Translation,
    WeakPerspective, DEFAULT_PERSPECTIVE_FOCAL_PX,
};
use crate::raster::{RasterBuffers, DISTORTION_WEIGHT_RANGE, PART_NONE};

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum LossError {
    #[error("distortion weight {value} of joint {index} outside [0.1, 10]")]
    WeightOutOfRange { index: usize, value: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamBlock {
    /// `(s, tx, ty)`
    Weak,
    /// `(Tx, Ty, Tz)`
    Translation,
    /// `K x 3`, row-major
    Joints3d,
    /// `N x 3`, row-major
    Vertices,
}

impl ParamBlock {
    pub const ALL: [ParamBlock; 4] = [
        ParamBlock::Weak,
        ParamBlock::Translation,
        ParamBlock::Joints3d,
        ParamBlock::Vertices,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub value: f64,
    /// Unweighted components, keyed by name.
    pub terms: BTreeMap<String, f64>,
    pub grads: BTreeMap<ParamBlock, Vec<f64>>,
    pub blocked: BTreeSet<ParamBlock>,
}

impl LossReport {
    fn new(value: f64, grads: BTreeMap<ParamBlock, Vec<f64>>) -> Self {
        let blocked = ParamBlock::ALL
            .into_iter()
            .filter(|b| !grads.contains_key(b))
            .collect();
        Self {
            value,
            terms: BTreeMap::new(),
            grads,
            blocked,
        }
    }

    pub fn grad(&self, block: ParamBlock) -> Option<&[f64]> {
        self.grads.get(&block).map(Vec::as_slice)
    }

    /// Gradient for `block`, all zeros when the block is blocked.
    pub fn grad_or_zero(&self, block: ParamBlock, len: usize) -> Vec<f64> {
        self.grads.get(&block).cloned().unwrap_or_else(|| vec![0.0; len])
    }

    pub fn is_blocked(&self, block: ParamBlock) -> bool {
        self.blocked.contains(&block)
    }

    pub fn to_json(&self) -> String {
        crate::io::to_json_string(self)
    }
}

/// Loss weights; all configurable, defaults as listed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub iuv: f64,
    pub distortion: f64,
    pub tz: f64,
    pub joints3d: f64,
    pub joints2d: f64,
    pub vertices: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            iuv: 1.0,
            distortion: 1.0,
            tz: 1.0,
            joints3d: 1.0,
            joints2d: 0.01,
            vertices: 1.0,
        }
    }
}

/// Loss weights plus which reprojection terms are active.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub weak_reprojection: bool,
    pub perspective_reprojection: bool,
    /// Divide weak-reprojection residuals by sampled distortion weights.
    pub distortion_weighting: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            weak_reprojection: true,
            perspective_reprojection: true,
            distortion_weighting: true,
        }
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_len(what: &str, expected: usize, actual: usize) -> Result<(), LossError> {
    if expected != actual {
        return Err(LossError::ShapeMismatch(format!("{what}: expected {expected}, got {actual}")));
    }
    Ok(())
}

/// Distortion-weighted weak-perspective reprojection loss,
/// `sum_i |proj_W(J_i) - j_i|_1 / d_i`.
///
/// Gradients flow to the weak camera only.
pub fn weak_reproj_loss(
    joints3d: &[Vector3<f64>],
    w: &WeakPerspective,
    joints2d_gt: &[Vector2<f64>],
    d_j: &[f64],
    k: &CameraIntrinsics,
) -> Result<LossReport, LossError> {
    check_len("2D joints", joints3d.len(), joints2d_gt.len())?;
    check_len("distortion weights", joints3d.len(), d_j.len())?;
    let (lo, hi) = DISTORTION_WEIGHT_RANGE;
    if let Some((index, &value)) = d_j.iter().enumerate().find(|(_, &d)| !(lo..=hi).contains(&d)) {
        return Err(LossError::WeightOutOfRange { index, value });
    }
    let half_h = k.height as f64 / 2.0;
    let proj = weak_project(joints3d, w, k);
    let mut value = 0.0;
    let mut g = [0.0; 3];
    for i in 0..joints3d.len() {
        let inv_d = 1.0 / d_j[i];
        let r = proj[i] - joints2d_gt[i];
        value += inv_d * (r.x.abs() + r.y.abs());
        let (sx, sy) = (sign(r.x), sign(r.y));
        g[0] += inv_d * half_h * (sx * (joints3d[i].x + w.tx) + sy * (joints3d[i].y + w.ty));
        g[1] += inv_d * sx * w.s * half_h;
        g[2] += inv_d * sy * w.s * half_h;
    }
    let mut report = LossReport::new(value, BTreeMap::from([(ParamBlock::Weak, g.to_vec())]));
    report.terms.insert("weak_2d".into(), value);
    Ok(report)
}

/// Where the perspective focal length comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FocalSource {
    /// Supplied ground truth, in pixels.
    GroundTruth(f64),
    /// `f = s h Tz / 2`.
    FromWeak { s: f64, h: f64, tz: f64 },
    /// 1000 px, the value assumed for 224x224 crops without ground truth.
    Default,
}

impl FocalSource {
    pub fn focal(&self) -> f64 {
        match *self {
            FocalSource::GroundTruth(f) => f,
            FocalSource::FromWeak { s, h, tz } => focal_from_weak(s, h, tz),
            FocalSource::Default => DEFAULT_PERSPECTIVE_FOCAL_PX,
        }
    }
}

/// Perspective reprojection loss against full-image keypoints,
/// `sum_i |proj_P(J_i + T) - j_i|_1`. Gradients flow to the joints only.
pub fn persp_reproj_loss(
    joints3d: &[Vector3<f64>],
    t: &Translation,
    joints2d_gt: &[Vector2<f64>],
    k: &CameraIntrinsics,
) -> Result<LossReport, LossError> {
    check_len("2D joints", joints3d.len(), joints2d_gt.len())?;
    let proj = perspective_project(joints3d, t, k)?;
    let mut value = 0.0;
    let mut g = vec![0.0; joints3d.len() * 3];
    for (i, p) in joints3d.iter().enumerate() {
        let r = proj[i] - joints2d_gt[i];
        value += r.x.abs() + r.y.abs();
        let (sx, sy) = (sign(r.x), sign(r.y));
        let z = p.z + t.tz;
        let fz = k.f / z;
        g[3 * i] = sx * fz;
        g[3 * i + 1] = sy * fz;
        g[3 * i + 2] = -fz / z * (sx * (p.x + t.tx) + sy * (p.y + t.ty));
    }
    let mut report = LossReport::new(value, BTreeMap::from([(ParamBlock::Joints3d, g)]));
    report.terms.insert("persp_2d".into(), value);
    Ok(report)
}

/// Dense targets of the translation module.
#[derive(Debug, Clone, Copy)]
pub struct TranslationTargets<'a> {
    pub part: &'a [u16],
    pub iuv: &'a [[f64; 3]],
    pub distortion: &'a [f64],
    pub tz: f64,
}

impl<'a> TranslationTargets<'a> {
    pub fn from_buffers(b: &'a RasterBuffers) -> Self {
        Self {
            part: &b.part,
            iuv: &b.iuv,
            distortion: &b.distortion,
            tz: b.tz,
        }
    }
}

/// `l_iuv * L2(IUV) + l_d * L2(distortion) + l_z * |Tz - Tz*|`.
///
/// Image terms average the per-pixel squared error over pixels covered in the
/// ground truth. The gradient reaches `Tz` only.
pub fn translation_losses(
    pred: &TranslationTargets<'_>,
    gt: &TranslationTargets<'_>,
    weights: &LossWeights,
) -> Result<LossReport, LossError> {
    let n = gt.part.len();
    for (what, len) in [
        ("predicted part", pred.part.len()),
        ("predicted iuv", pred.iuv.len()),
        ("predicted distortion", pred.distortion.len()),
        ("gt iuv", gt.iuv.len()),
        ("gt distortion", gt.distortion.len()),
    ] {
        check_len(what, n, len)?;
    }
    let (mut iuv_se, mut d_se, mut count) = (0.0, 0.0, 0usize);
    for i in (0..n).filter(|&i| gt.part[i] != PART_NONE) {
        iuv_se += (0..3).map(|c| (pred.iuv[i][c] - gt.iuv[i][c]).powi(2)).sum::<f64>();
        d_se += (pred.distortion[i] - gt.distortion[i]).powi(2);
        count += 1;
    }
    let (iuv_term, d_term) = if count > 0 {
        (iuv_se / count as f64, d_se / count as f64)
    } else {
        (0.0, 0.0)
    };
    let tz_term = (pred.tz - gt.tz).abs();
    let value = weights.iuv * iuv_term + weights.distortion * d_term + weights.tz * tz_term;
    let grad = vec![0.0, 0.0, weights.tz * sign(pred.tz - gt.tz)];
    let mut report = LossReport::new(value, BTreeMap::from([(ParamBlock::Translation, grad)]));
    report.terms.insert("iuv".into(), iuv_term);
    report.terms.insert("distortion".into(), d_term);
    report.terms.insert("tz".into(), tz_term);
    Ok(report)
}

#[derive(Debug, Clone, Copy)]
pub struct MeshTargets<'a> {
    pub vertices: &'a [Vector3<f64>],
    pub joints3d: &'a [Vector3<f64>],
}

/// `l_V mean_v |V - V*|_1 + l_J mean_j |J - J*|_1`.
pub fn mesh_losses(
    pred: &MeshTargets<'_>,
    gt: &MeshTargets<'_>,
    weights: &LossWeights,
) -> Result<LossReport, LossError> {
    check_len("vertices", gt.vertices.len(), pred.vertices.len())?;
    check_len("joints", gt.joints3d.len(), pred.joints3d.len())?;

    fn mean_l1(pred: &[Vector3<f64>], gt: &[Vector3<f64>], lambda: f64) -> (f64, Vec<f64>) {
        if pred.is_empty() {
            return (0.0, Vec::new());
        }
        let scale = lambda / pred.len() as f64;
        let mut total = 0.0;
        let mut grad = Vec::with_capacity(pred.len() * 3);
        for (p, g) in pred.iter().zip(gt) {
            let r = p - g;
            total += r.abs().sum();
            grad.extend(r.iter().map(|&c| scale * sign(c)));
        }
        (total / pred.len() as f64, grad)
    }

    let (v_term, v_grad) = mean_l1(pred.vertices, gt.vertices, weights.vertices);
    let (j_term, j_grad) = mean_l1(pred.joints3d, gt.joints3d, weights.joints3d);
    let value = weights.vertices * v_term + weights.joints3d * j_term;
    let mut report = LossReport::new(
        value,
        BTreeMap::from([(ParamBlock::Vertices, v_grad), (ParamBlock::Joints3d, j_grad)]),
    );
    report.terms.insert("vertices".into(), v_term);
    report.terms.insert("joints3d".into(), j_term);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(1000.0, 112.0, 112.0, 224, 224).unwrap()
    }

    fn joints() -> Vec<Vector3<f64>> {
        vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(0.2, -0.4, 0.05),
            Vector3::new(-0.3, 0.5, -0.1),
        ]
    }

    #[test]
    fn weak_perfect_fit_is_zero() {
        let w = WeakPerspective::new(0.9, 0.1, -0.05).unwrap();
        let gt = weak_project(&joints(), &w, &k());
        let r = weak_reproj_loss(&joints(), &w, &gt, &[1.0; 3], &k()).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.grad(ParamBlock::Weak), Some(&[0.0, 0.0, 0.0][..]));
        assert!(r.is_blocked(ParamBlock::Joints3d));
        assert!(r.grad(ParamBlock::Joints3d).is_none());
    }

    #[test]
    fn weak_weights_scale_inversely() {
        let w = WeakPerspective::new(0.9, 0.1, -0.05).unwrap();
        let gt: Vec<_> = weak_project(&joints(), &w, &k())
            .iter()
            .map(|p| p + Vector2::new(3.0, -1.0))
            .collect();
        let ones = weak_reproj_loss(&joints(), &w, &gt, &[1.0; 3], &k()).unwrap();
        assert!((ones.value - 12.0).abs() < 1e-9);
        let twos = weak_reproj_loss(&joints(), &w, &gt, &[2.0; 3], &k()).unwrap();
        assert_eq!(twos.value, ones.value / 2.0);
    }

    #[test]
    fn weak_rejects_out_of_range_weights() {
        let w = WeakPerspective::new(1.0, 0.0, 0.0).unwrap();
        let gt = weak_project(&joints(), &w, &k());
        let err = weak_reproj_loss(&joints(), &w, &gt, &[1.0, 0.05, 1.0], &k()).unwrap_err();
        assert_eq!(err, LossError::WeightOutOfRange { index: 1, value: 0.05 });
    }

    #[test]
    fn persp_single_joint_offset() {
        let t = Translation::new(0.0, 0.0, 3.0);
        let mut gt = perspective_project(&joints(), &t, &k()).unwrap();
        gt[1] += Vector2::new(3.0, 4.0);
        let r = persp_reproj_loss(&joints(), &t, &gt, &k()).unwrap();
        assert!((r.value - 7.0).abs() < 1e-9);
        assert!(r.is_blocked(ParamBlock::Translation));
        assert!(r.is_blocked(ParamBlock::Weak));
        let g = r.grad(ParamBlock::Joints3d).unwrap();
        assert_eq!(g.len(), 9);
        assert!(g[..3].iter().chain(&g[6..]).all(|&x| x == 0.0));
    }

    #[test]
    fn focal_sources() {
        assert_eq!(FocalSource::Default.focal(), 1000.0);
        assert_eq!(FocalSource::GroundTruth(812.0).focal(), 812.0);
        assert_eq!(FocalSource::FromWeak { s: 1.0, h: 224.0, tz: 5.0 }.focal(), 560.0);
    }

    #[test]
    fn translation_terms() {
        let mut gt = RasterBuffers::background(2, 1, 2.0);
        gt.part[0] = 1;
        gt.iuv[0] = [1.0, 0.5, 0.5];
        gt.depth[0] = 2.0;
        gt.distortion[0] = 1.0;
        let same = translation_losses(
            &TranslationTargets::from_buffers(&gt),
            &TranslationTargets::from_buffers(&gt),
            &LossWeights::default(),
        )
        .unwrap();
        assert_eq!(same.value, 0.0);

        let mut pred = gt.clone();
        pred.tz = 2.5;
        let only_z = LossWeights {
            iuv: 0.0,
            distortion: 0.0,
            tz: 1.0,
            ..LossWeights::default()
        };
        let r = translation_losses(
            &TranslationTargets::from_buffers(&pred),
            &TranslationTargets::from_buffers(&gt),
            &only_z,
        )
        .unwrap();
        assert_eq!(r.value, 0.5);
        assert_eq!(r.grad(ParamBlock::Translation), Some(&[0.0, 0.0, 1.0][..]));

        pred.distortion[0] = 1.5;
        let base = LossWeights { tz: 0.0, ..LossWeights::default() };
        let doubled = LossWeights { distortion: 2.0, ..base };
        let a = translation_losses(
            &TranslationTargets::from_buffers(&pred),
            &TranslationTargets::from_buffers(&gt),
            &base,
        )
        .unwrap();
        let b = translation_losses(
            &TranslationTargets::from_buffers(&pred),
            &TranslationTargets::from_buffers(&gt),
            &doubled,
        )
        .unwrap();
        assert_eq!(a.terms["distortion"], 0.25);
        assert_eq!(b.value - a.value, a.terms["distortion"]);
    }

    #[test]
    fn translation_shape_mismatch() {
        let gt = RasterBuffers::background(2, 1, 2.0);
        let pred = RasterBuffers::background(3, 1, 2.0);
        assert!(matches!(
            translation_losses(
                &TranslationTargets::from_buffers(&pred),
                &TranslationTargets::from_buffers(&gt),
                &LossWeights::default()
            ),
            Err(LossError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn mesh_uniform_offset() {
        let gt = joints();
        let d = Vector3::new(0.01, -0.02, 0.03);
        let pred: Vec<_> = gt.iter().map(|v| v + d).collect();
        let w = LossWeights { joints3d: 0.0, ..LossWeights::default() };
        let r = mesh_losses(
            &MeshTargets { vertices: &pred, joints3d: &pred },
            &MeshTargets { vertices: &gt, joints3d: &gt },
            &w,
        )
        .unwrap();
        assert!((r.value - 0.06).abs() < 1e-15);
        assert!(r.is_blocked(ParamBlock::Weak) && r.is_blocked(ParamBlock::Translation));
        let same = mesh_losses(
            &MeshTargets { vertices: &gt, joints3d: &gt },
            &MeshTargets { vertices: &gt, joints3d: &gt },
            &LossWeights::default(),
        )
        .unwrap();
        assert_eq!(same.value, 0.0);
    }

    #[test]
    fn report_json_roundtrip() {
        let w = WeakPerspective::new(1.0, 0.0, 0.0).unwrap();
        let gt = weak_project(&joints(), &w, &k());
        let r = weak_reproj_loss(&joints(), &w, &gt, &[1.0; 3], &k()).unwrap();
        let back: LossReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn config_defaults() {
        let c: LossConfig = serde_json::from_str(r#"{"weights": {"tz": 2.0}}"#).unwrap();
        assert_eq!(c.weights.tz, 2.0);
        assert_eq!(c.weights.joints2d, 0.01);
        assert!(c.distortion_weighting);
    }
}

//! 3D and 2D evaluation metrics and distortion-based protocol buckets.
//!
//! Joint and vertex errors are reported in millimeters for inputs in meters.
//! MPJPE and PVE are computed after subtracting the pelvis (joint 0) from
//! both sides. PA-MPJPE aligns the prediction with a similarity transform.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::body::PELVIS;
use crate::geometry::{CameraIntrinsics, Translation, WeakPerspective, WEAK_FOCAL_PX};
use crate::raster::PART_NONE;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum MetricsError {
    #[error("source points have zero variance")]
    DegenerateConfiguration,
    #[error("need at least {min} points, got {actual}")]
    TooFewPoints { min: usize, actual: usize },
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("empty input")]
    Empty,
}

/// `x -> scale * rotation * x + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }

    pub fn apply(&self, points: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        points.iter().map(|p| self.apply_point(p)).collect()
    }

    /// Orthonormality and orientation of the rotation, positivity of scale.
    pub fn is_valid(&self, tol: f64) -> bool {
        let r = &self.rotation;
        self.scale > 0.0
            && (r.transpose() * r - Matrix3::identity()).amax() <= tol
            && (r.determinant() - 1.0).abs() <= tol
    }
}

fn check_shapes<A, B>(a: &[A], b: &[B]) -> Result<(), MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::ShapeMismatch {
            expected: b.len(),
            actual: a.len(),
        });
    }
    if a.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

fn centroid(points: &[Vector3<f64>]) -> Vector3<f64> {
    points.iter().sum::<Vector3<f64>>() / points.len() as f64
}

/// Least-squares similarity transform taking `src` onto `dst`.
///
/// Closed form from the SVD of the centered cross-covariance, with the
/// smallest singular direction flipped when needed to keep `det(R) = +1`.
pub fn procrustes_align(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
) -> Result<SimilarityTransform, MetricsError> {
    check_shapes(src, dst)?;
    if src.len() < 3 {
        return Err(MetricsError::TooFewPoints {
            min: 3,
            actual: src.len(),
        });
    }
    let n = src.len() as f64;
    let (mu_s, mu_d) = (centroid(src), centroid(dst));
    let mut var_s = 0.0;
    let mut cov = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        let (xs, xd) = (s - mu_s, d - mu_d);
        var_s += xs.norm_squared();
        cov += xd * xs.transpose();
    }
    var_s /= n;
    cov /= n;
    let extent = src.iter().map(|p| p.amax()).fold(0.0, f64::max).max(1.0);
    if var_s <= (extent * f64::EPSILON).powi(2) {
        return Err(MetricsError::DegenerateConfiguration);
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut signs = Vector3::new(1.0, 1.0, 1.0);
    if (u.determinant() * v_t.determinant()) < 0.0 {
        // nalgebra sorts singular values in decreasing order
        signs[2] = -1.0;
    }
    let rotation = u * Matrix3::from_diagonal(&signs) * v_t;
    let scale = svd.singular_values.dot(&signs) / var_s;
    let translation = mu_d - scale * (rotation * mu_s);
    Ok(SimilarityTransform {
        scale,
        rotation,
        translation,
    })
}

fn mean_distance_mm(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    1000.0 * a.iter().zip(b).map(|(p, q)| (p - q).norm()).sum::<f64>() / a.len() as f64
}

fn root_centered(points: &[Vector3<f64>], root: &Vector3<f64>) -> Vec<Vector3<f64>> {
    points.iter().map(|p| p - root).collect()
}

/// Mean per-joint position error in mm after pelvis-centering both sets.
pub fn mpjpe(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64, MetricsError> {
    check_shapes(pred, gt)?;
    Ok(mean_distance_mm(
        &root_centered(pred, &pred[PELVIS]),
        &root_centered(gt, &gt[PELVIS]),
    ))
}

/// Mean per-joint error in mm after Procrustes alignment of `pred` to `gt`.
pub fn pa_mpjpe(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64, MetricsError> {
    let t = procrustes_align(pred, gt)?;
    Ok(mean_distance_mm(&t.apply(pred), gt))
}

/// Per-vertex error in mm, each mesh centered on its own pelvis joint.
pub fn pve(
    pred: &[Vector3<f64>],
    gt: &[Vector3<f64>],
    pred_pelvis: &Vector3<f64>,
    gt_pelvis: &Vector3<f64>,
) -> Result<f64, MetricsError> {
    check_shapes(pred, gt)?;
    Ok(mean_distance_mm(
        &root_centered(pred, pred_pelvis),
        &root_centered(gt, gt_pelvis),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IouMode {
    /// Mean of foreground and background IoU.
    Fg,
    /// Mean IoU over part classes present in the ground truth.
    Parts,
}

/// Mean IoU between two part-label images (`PART_NONE` is background).
///
/// In `Fg` mode a class absent from both images is skipped. In `Parts` mode
/// classes absent from the ground truth are skipped; with no ground-truth
/// parts at all the score is 1 if the prediction is empty too, else 0.
pub fn miou(pred: &[u16], gt: &[u16], mode: IouMode) -> Result<f64, MetricsError> {
    check_shapes(pred, gt)?;
    match mode {
        IouMode::Fg => {
            let mut inter = [0usize; 2];
            let mut union = [0usize; 2];
            for (&p, &g) in pred.iter().zip(gt) {
                let (p, g) = ((p != PART_NONE) as usize, (g != PART_NONE) as usize);
                if p == g {
                    inter[p] += 1;
                    union[p] += 1;
                } else {
                    union[0] += 1;
                    union[1] += 1;
                }
            }
            let ious: Vec<f64> = (0..2)
                .filter(|&c| union[c] > 0)
                .map(|c| inter[c] as f64 / union[c] as f64)
                .collect();
            Ok(ious.iter().sum::<f64>() / ious.len() as f64)
        }
        IouMode::Parts => {
            let mut counts: BTreeMap<u16, (usize, usize, usize)> = BTreeMap::new();
            for (&p, &g) in pred.iter().zip(gt) {
                if g != PART_NONE {
                    counts.entry(g).or_default().1 += 1;
                }
                if p != PART_NONE {
                    counts.entry(p).or_default().0 += 1;
                }
                if p == g && p != PART_NONE {
                    counts.entry(p).or_default().2 += 1;
                }
            }
            let ious: Vec<f64> = counts
                .values()
                .filter(|(_, g, _)| *g > 0)
                .map(|&(p, g, i)| i as f64 / (p + g - i) as f64)
                .collect();
            if ious.is_empty() {
                let pred_empty = pred.iter().all(|&p| p == PART_NONE);
                return Ok(if pred_empty { 1.0 } else { 0.0 });
            }
            Ok(ious.iter().sum::<f64>() / ious.len() as f64)
        }
    }
}

/// Bucket thresholds for the synthetic benchmark.
pub const PDHUMAN_THRESHOLDS: [f64; 5] = [3.0, 2.6, 2.2, 1.8, 1.4];
/// Bucket thresholds for the real-image benchmarks.
pub const REAL_THRESHOLDS: [f64; 3] = [1.8, 1.4, 1.0];

/// Protocol id for a maximum distortion scale `tau`.
///
/// With `n` strictly decreasing thresholds, the first threshold `i` (0-based)
/// satisfying `threshold <= tau` gives protocol `n - i`; bounds are inclusive.
/// Samples below every threshold fall in protocol 0.
pub fn assign_protocol(tau: f64, thresholds: &[f64]) -> usize {
    debug_assert!(thresholds.windows(2).all(|w| w[0] > w[1]));
    thresholds
        .iter()
        .position(|&t| t <= tau)
        .map_or(0, |i| thresholds.len() - i)
}

/// Camera used to render a method's mesh for the 2D metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RenderCamera {
    /// Weak-perspective output, rendered with its 5000 px equivalent.
    Weak { camera: WeakPerspective },
    /// Perspective output with its own (for example recovered) focal length.
    Perspective { f: f64, translation: Translation },
}

impl RenderCamera {
    /// Intrinsics and translation to rasterize with, for an image described by `k`.
    pub fn resolve(&self, k: &CameraIntrinsics) -> (CameraIntrinsics, Translation) {
        match self {
            RenderCamera::Weak { camera } => (
                k.with_focal(WEAK_FOCAL_PX),
                camera.equivalent_translation(k.height as f64),
            ),
            RenderCamera::Perspective { f, translation } => (k.with_focal(*f), *translation),
        }
    }
}

/// What a method predicts, or what the ground truth provides, for one sample.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalInput {
    pub joints3d: Vec<Vector3<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vertices: Option<Vec<Vector3<f64>>>,
    /// Rendered part image, row-major.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parts: Option<Vec<u16>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub id: String,
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
    pub pve: Option<f64>,
    pub miou: Option<f64>,
    pub p_miou: Option<f64>,
    pub tau: Option<f64>,
    pub protocol: Option<usize>,
}

/// Metrics for one sample. `tau` and the protocol come from the ground truth.
pub fn evaluate_sample(
    id: &str,
    pred: &EvalInput,
    gt: &EvalInput,
    thresholds: &[f64],
) -> Result<MetricReport, MetricsError> {
    let pve = match (&pred.vertices, &gt.vertices) {
        (Some(pv), Some(gv)) => {
            check_shapes(&pred.joints3d, &gt.joints3d)?;
            Some(pve(pv, gv, &pred.joints3d[PELVIS], &gt.joints3d[PELVIS])?)
        }
        _ => None,
    };
    let (miou_fg, p_miou) = match (&pred.parts, &gt.parts) {
        (Some(p), Some(g)) => (Some(miou(p, g, IouMode::Fg)?), Some(miou(p, g, IouMode::Parts)?)),
        _ => (None, None),
    };
    Ok(MetricReport {
        id: id.to_string(),
        mpjpe: mpjpe(&pred.joints3d, &gt.joints3d)?,
        pa_mpjpe: pa_mpjpe(&pred.joints3d, &gt.joints3d)?,
        pve,
        miou: miou_fg,
        p_miou,
        tau: gt.tau,
        protocol: gt.tau.map(|t| assign_protocol(t, thresholds)),
    })
}

/// Evaluate `(id, pred, gt)` triples in parallel; reports come back sorted by id.
pub fn evaluate_batch(
    samples: &[(String, EvalInput, EvalInput)],
    thresholds: &[f64],
) -> Result<Vec<MetricReport>, (String, MetricsError)> {
    let mut reports = samples
        .par_iter()
        .map(|(id, p, g)| evaluate_sample(id, p, g, thresholds).map_err(|e| (id.clone(), e)))
        .collect::<Result<Vec<_>, _>>()?;
    reports.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(reports)
}

/// Means over a group of samples. Optional metrics average over the samples
/// that have them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
    pub pve: Option<f64>,
    pub miou: Option<f64>,
    pub p_miou: Option<f64>,
}

pub fn aggregate<'a>(reports: impl IntoIterator<Item = &'a MetricReport>) -> Option<Aggregate> {
    let reports: Vec<&MetricReport> = reports.into_iter().collect();
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    let opt_mean = |get: fn(&MetricReport) -> Option<f64>| {
        let vals: Vec<f64> = reports.iter().filter_map(|r| get(r)).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    Some(Aggregate {
        count: reports.len(),
        mpjpe: reports.iter().map(|r| r.mpjpe).sum::<f64>() / n,
        pa_mpjpe: reports.iter().map(|r| r.pa_mpjpe).sum::<f64>() / n,
        pve: opt_mean(|r| r.pve),
        miou: opt_mean(|r| r.miou),
        p_miou: opt_mean(|r| r.p_miou),
    })
}

/// Aggregates per protocol bucket (exact membership) and per cumulative
/// bucket (every sample whose protocol is at least the key).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSummary {
    pub overall: Option<Aggregate>,
    pub per_protocol: BTreeMap<usize, Aggregate>,
    pub cumulative: BTreeMap<usize, Aggregate>,
}

pub fn summarize(reports: &[MetricReport]) -> ProtocolSummary {
    let mut ids: Vec<usize> = reports.iter().filter_map(|r| r.protocol).collect();
    ids.sort_unstable();
    ids.dedup();
    let per_protocol = ids
        .iter()
        .filter_map(|&p| aggregate(reports.iter().filter(|r| r.protocol == Some(p))).map(|a| (p, a)))
        .collect();
    let cumulative = ids
        .iter()
        .filter_map(|&p| {
            aggregate(reports.iter().filter(|r| r.protocol.is_some_and(|q| q >= p))).map(|a| (p, a))
        })
        .collect();
    ProtocolSummary {
        overall: aggregate(reports),
        per_protocol,
        cumulative,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Unit};

    fn cloud() -> Vec<Vector3<f64>> {
        (0..10)
            .map(|i| {
                let t = i as f64;
                Vector3::new((t * 0.7).sin(), (t * 1.3).cos() * 0.5, t * 0.1 - 0.4)
            })
            .collect()
    }

    #[test]
    fn identity_alignment() {
        let t = procrustes_align(&cloud(), &cloud()).unwrap();
        assert!((t.scale - 1.0).abs() < 1e-12);
        assert!((t.rotation - Matrix3::identity()).amax() < 1e-12);
        assert!(t.translation.amax() < 1e-12);
    }

    #[test]
    fn recovers_exact_similarity() {
        let r0 = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::new(0.3, -1.0, 0.5)), 2.1);
        let truth = SimilarityTransform {
            scale: 2.0,
            rotation: *r0.matrix(),
            translation: Vector3::new(0.5, -1.5, 3.0),
        };
        let dst = truth.apply(&cloud());
        let t = procrustes_align(&cloud(), &dst).unwrap();
        assert!((t.scale - 2.0).abs() < 1e-9);
        assert!((t.rotation - truth.rotation).amax() < 1e-9);
        assert!((t.translation - truth.translation).amax() < 1e-9);
        assert!(t.is_valid(1e-9));
    }

    #[test]
    fn reflection_is_corrected() {
        let src = cloud();
        let dst: Vec<_> = src.iter().map(|p| Vector3::new(-p.x, p.y, p.z)).collect();
        let t = procrustes_align(&src, &dst).unwrap();
        assert!((t.rotation.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_and_small_inputs() {
        let same = vec![Vector3::new(1.0, 2.0, 3.0); 5];
        assert_eq!(
            procrustes_align(&same, &cloud()[..5]),
            Err(MetricsError::DegenerateConfiguration)
        );
        assert!(matches!(
            procrustes_align(&cloud()[..2], &cloud()[..2]),
            Err(MetricsError::TooFewPoints { .. })
        ));
        assert!(matches!(mpjpe(&cloud(), &cloud()[..3]), Err(MetricsError::ShapeMismatch { .. })));
    }

    #[test]
    fn single_displaced_joint() {
        let gt: Vec<_> = (0..24).map(|i| Vector3::new(i as f64 * 0.05, 0.1, 0.0)).collect();
        let mut pred = gt.clone();
        pred[7].z += 0.05;
        assert!((mpjpe(&pred, &gt).unwrap() - 50.0 / 24.0).abs() < 1e-9);
    }

    #[test]
    fn pelvis_translation_is_ignored() {
        let gt = cloud();
        let pred: Vec<_> = gt.iter().map(|p| p + Vector3::new(1.0, 2.0, 3.0)).collect();
        assert!(mpjpe(&pred, &gt).unwrap() < 1e-9);
        assert!(pve(&pred, &gt, &pred[0], &gt[0]).unwrap() < 1e-9);
    }

    fn rect(w: usize, h: usize, x0: usize, y0: usize, rw: usize, rh: usize, part: u16) -> Vec<u16> {
        let mut img = vec![PART_NONE; w * h];
        for y in y0..y0 + rh {
            for x in x0..x0 + rw {
                img[y * w + x] = part;
            }
        }
        img
    }

    #[test]
    fn iou_area_arithmetic() {
        let gt = rect(40, 40, 0, 0, 10, 10, 3);
        let pred = rect(40, 40, 0, 5, 10, 10, 3);
        // foreground 50 / 150; background (1600 - 150) / (1600 - 50)
        let fg = 50.0 / 150.0;
        let bg = 1450.0 / 1550.0;
        assert!((miou(&pred, &gt, IouMode::Fg).unwrap() - (fg + bg) / 2.0).abs() < 1e-12);
        assert!((miou(&pred, &gt, IouMode::Parts).unwrap() - fg).abs() < 1e-12);
    }

    #[test]
    fn iou_identical_and_disjoint() {
        let a = rect(20, 20, 0, 0, 5, 5, 1);
        let b = rect(20, 20, 10, 10, 5, 5, 1);
        assert_eq!(miou(&a, &a, IouMode::Fg).unwrap(), 1.0);
        assert_eq!(miou(&a, &a, IouMode::Parts).unwrap(), 1.0);
        assert_eq!(miou(&a, &b, IouMode::Parts).unwrap(), 0.0);
        let empty = vec![PART_NONE; 400];
        assert_eq!(miou(&empty, &empty, IouMode::Parts).unwrap(), 1.0);
        assert_eq!(miou(&a, &empty, IouMode::Parts).unwrap(), 0.0);
    }

    #[test]
    fn parts_skip_classes_missing_from_gt() {
        let gt = rect(10, 10, 0, 0, 5, 5, 2);
        let mut pred = gt.clone();
        pred[99] = 7;
        assert_eq!(miou(&pred, &gt, IouMode::Parts).unwrap(), 1.0);
    }

    #[test]
    fn protocol_buckets() {
        assert_eq!(assign_protocol(3.2, &PDHUMAN_THRESHOLDS), 5);
        assert_eq!(assign_protocol(3.0, &PDHUMAN_THRESHOLDS), 5);
        assert_eq!(assign_protocol(2.9, &PDHUMAN_THRESHOLDS), 4);
        assert_eq!(assign_protocol(1.8, &PDHUMAN_THRESHOLDS), 2);
        assert_eq!(assign_protocol(1.0, &PDHUMAN_THRESHOLDS), 0);
        assert_eq!(assign_protocol(1.0, &REAL_THRESHOLDS), 1);
        assert_eq!(assign_protocol(0.99, &REAL_THRESHOLDS), 0);
        assert_eq!(assign_protocol(2.5, &REAL_THRESHOLDS), 3);
    }

    #[test]
    fn render_camera_resolution() {
        let k = CameraIntrinsics::centered(1000.0, 224, 224).unwrap();
        let weak = RenderCamera::Weak {
            camera: WeakPerspective::new(0.8, 0.1, 0.0).unwrap(),
        };
        let (kk, t) = weak.resolve(&k);
        assert_eq!(kk.f, WEAK_FOCAL_PX);
        assert!((t.tz - 2.0 * 5000.0 / (0.8 * 224.0)).abs() < 1e-9);
        let json = serde_json::to_string(&weak).unwrap();
        assert_eq!(serde_json::from_str::<RenderCamera>(&json).unwrap(), weak);
    }

    #[test]
    fn summary_groups() {
        let mk = |id: &str, m: f64, p: usize| MetricReport {
            id: id.into(),
            mpjpe: m,
            pa_mpjpe: m / 2.0,
            pve: None,
            miou: Some(1.0),
            p_miou: None,
            tau: Some(1.0),
            protocol: Some(p),
        };
        let reports = vec![mk("a", 10.0, 1), mk("b", 20.0, 2), mk("c", 30.0, 2)];
        let s = summarize(&reports);
        assert_eq!(s.overall.as_ref().unwrap().mpjpe, 20.0);
        assert_eq!(s.per_protocol[&2].mpjpe, 25.0);
        assert_eq!(s.cumulative[&1].count, 3);
        assert_eq!(s.cumulative[&2].count, 2);
        assert_eq!(s.overall.unwrap().pve, None);
    }

    #[test]
    fn batch_is_sorted() {
        let g = EvalInput {
            joints3d: cloud(),
            ..Default::default()
        };
        let samples = vec![
            ("b".to_string(), g.clone(), g.clone()),
            ("a".to_string(), g.clone(), g.clone()),
        ];
        let r = evaluate_batch(&samples, &PDHUMAN_THRESHOLDS).unwrap();
        assert_eq!(r[0].id, "a");
        assert!(r[0].mpjpe < 1e-12 && r[0].pa_mpjpe < 1e-9);
    }
}

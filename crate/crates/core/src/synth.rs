//! Random camera placement around a posed body, dataset generation, and the
//! dolly-zoom comparison between weak and full perspective projection.
//!
//! Cameras sit on a sphere centered on the pelvis with radius equal to the
//! sampled distance and look at the center. Every scene draws from its own
//! ChaCha8 stream `(seed, index)`, so scenes can be generated in any order or
//! in parallel with identical results.

use std::path::Path;

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::body::{ArticulatedBody, BodyConfig, BodyError, Pose, PELVIS};
use crate::geometry::{
    perspective_project, weak_from_correspondences, weak_project, CameraIntrinsics, GeometryError,
    Translation, WeakPerspective,
};
use crate::io::{write_json, IoError};
use crate::metrics::{assign_protocol, PDHUMAN_THRESHOLDS};
use crate::raster::{max_distortion_scale, rasterize, write_buffers, RasterBuffers, RasterError, RasterHeader};

#[derive(thiserror::Error, Debug)]
pub enum SynthError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("degenerate body: {0}")]
    DegenerateBody(String),
    #[error("scene {index}: no valid placement after {attempts} attempts")]
    Rejected { index: usize, attempts: usize },
    #[error(transparent)]
    Body(#[from] BodyError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Ranges for random camera placement. Angles are in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraSampleConfig {
    pub focal_mm: [f64; 2],
    pub sensor_height_mm: f64,
    pub fov_deg: [f64; 2],
    pub distance_m: [f64; 2],
    pub elevation_deg: [f64; 2],
    pub azimuth_deg: [f64; 2],
    pub image_width: u32,
    pub image_height: u32,
    pub seed: u64,
}

impl Default for CameraSampleConfig {
    fn default() -> Self {
        Self {
            focal_mm: [7.0, 102.0],
            sensor_height_mm: 24.0,
            fov_deg: [10.0, 140.0],
            distance_m: [0.5, 10.0],
            elevation_deg: [-45.0, 45.0],
            azimuth_deg: [-180.0, 180.0],
            image_width: 224,
            image_height: 224,
            seed: 0,
        }
    }
}

fn fov_of(focal_mm: f64, sensor_mm: f64) -> f64 {
    2.0 * (sensor_mm / (2.0 * focal_mm)).atan().to_degrees()
}

fn draw<R: Rng + ?Sized>(rng: &mut R, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.random_range(range[0]..=range[1])
    }
}

impl CameraSampleConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        for (name, r) in [
            ("focal_mm", self.focal_mm),
            ("fov_deg", self.fov_deg),
            ("distance_m", self.distance_m),
            ("elevation_deg", self.elevation_deg),
            ("azimuth_deg", self.azimuth_deg),
        ] {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
                return bad(format!("{name} range [{}, {}] is empty", r[0], r[1]));
            }
        }
        if !(self.focal_mm[0] > 0.0 && self.sensor_height_mm > 0.0) {
            return bad("focal length and sensor height must be positive".into());
        }
        if !(self.distance_m[0] > 0.0) {
            return bad("distances must be positive".into());
        }
        if self.elevation_deg[0] <= -90.0 || self.elevation_deg[1] >= 90.0 {
            return bad("elevation must stay inside (-90, 90)".into());
        }
        if self.image_width == 0 || self.image_height == 0 {
            return bad("image size must be positive".into());
        }
        // FoV decreases with focal length, so the endpoints bound it
        let widest = fov_of(self.focal_mm[0], self.sensor_height_mm);
        let narrowest = fov_of(self.focal_mm[1], self.sensor_height_mm);
        if narrowest < self.fov_deg[0] || widest > self.fov_deg[1] {
            return bad(format!(
                "focal range gives FoV [{narrowest:.2}, {widest:.2}] outside [{}, {}]",
                self.fov_deg[0], self.fov_deg[1]
            ));
        }
        Ok(())
    }

    /// Focal length in pixels for the configured image height.
    pub fn focal_px(&self, focal_mm: f64) -> f64 {
        focal_mm / self.sensor_height_mm * self.image_height as f64
    }
}

/// One random camera placement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSample {
    pub intrinsics: CameraIntrinsics,
    pub focal_mm: f64,
    pub fov_deg: f64,
    /// World-to-camera rotation (rows are the camera axes in world space).
    pub rotation: Matrix3<f64>,
    pub camera_position: Vector3<f64>,
    pub distance: f64,
    pub elevation_deg: f64,
    pub azimuth_deg: f64,
    pub pose_seed: u64,
}

impl SceneSample {
    pub fn forward(&self) -> Vector3<f64> {
        self.rotation.row(2).transpose()
    }

    /// Camera-frame translation of a world point at the origin.
    pub fn translation(&self) -> Translation {
        Translation::from_vector(&(-(self.rotation * self.camera_position)))
    }
}

/// World-to-camera rotation for a camera at `position` looking at the
/// origin, with image `y` aligned to world `+y` (down) as far as possible.
pub fn look_at_origin(position: &Vector3<f64>) -> Matrix3<f64> {
    let forward = (-position).normalize();
    let x = Vector3::y().cross(&forward).normalize();
    let y = forward.cross(&x);
    Matrix3::from_rows(&[x.transpose(), y.transpose(), forward.transpose()])
}

/// Draw one camera placement. Consumes a fixed number of draws per call.
pub fn sample_scene<R: Rng + ?Sized>(config: &CameraSampleConfig, rng: &mut R) -> SceneSample {
    let focal_mm = draw(rng, config.focal_mm);
    let distance = draw(rng, config.distance_m);
    let elevation_deg = draw(rng, config.elevation_deg);
    let azimuth_deg = draw(rng, config.azimuth_deg);
    let pose_seed: u64 = rng.random();

    let (el, az) = (elevation_deg.to_radians(), azimuth_deg.to_radians());
    let camera_position = distance * Vector3::new(el.cos() * az.sin(), -el.sin(), -el.cos() * az.cos());
    let f = config.focal_px(focal_mm);
    let (w, h) = (config.image_width, config.image_height);
    SceneSample {
        intrinsics: CameraIntrinsics {
            f,
            cx: w as f64 / 2.0,
            cy: h as f64 / 2.0,
            width: w,
            height: h,
        },
        focal_mm,
        fov_deg: fov_of(focal_mm, config.sensor_height_mm),
        rotation: look_at_origin(&camera_position),
        camera_position,
        distance,
        elevation_deg,
        azimuth_deg,
        pose_seed,
    }
}

/// Everything needed to produce a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub camera: CameraSampleConfig,
    pub body: BodyConfig,
    /// Largest per-joint rotation of the random pose.
    pub max_pose_angle_deg: f64,
    /// Placements bringing any vertex closer than this are redrawn.
    pub min_depth_m: f64,
    pub max_attempts: usize,
    pub thresholds: Vec<f64>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            camera: CameraSampleConfig::default(),
            body: BodyConfig::default(),
            max_pose_angle_deg: 20.0,
            min_depth_m: 0.05,
            max_attempts: 1000,
            thresholds: PDHUMAN_THRESHOLDS.to_vec(),
        }
    }
}

/// Ground truth stored as `meta.json` for each scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub id: String,
    pub index: usize,
    pub camera: SceneSample,
    pub translation: Translation,
    /// Pelvis-relative joints in camera orientation, meters.
    pub joints3d: Vec<Vector3<f64>>,
    /// Full-image joint projections, pixels.
    pub joints2d: Vec<Vector2<f64>>,
    pub tau: f64,
    pub protocol: usize,
    pub attempts: usize,
    pub raster: RasterHeader,
}

#[derive(Debug, Clone)]
pub struct GeneratedScene {
    pub meta: SceneMeta,
    /// Pelvis-relative vertices in camera orientation.
    pub vertices: Vec<Vector3<f64>>,
    pub buffers: RasterBuffers,
}

/// Per-scene RNG: the dataset seed with the scene index as stream id.
pub fn scene_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub fn scene_id(index: usize) -> String {
    format!("{index:04}")
}

/// Sample, pose and render scene `index`.
pub fn generate_scene(
    config: &DatasetConfig,
    body: &ArticulatedBody,
    index: usize,
) -> Result<GeneratedScene, SynthError> {
    let mut rng = scene_rng(config.camera.seed, index);
    for attempt in 1..=config.max_attempts.max(1) {
        let sample = sample_scene(&config.camera, &mut rng);
        let mut pose_rng = ChaCha8Rng::seed_from_u64(sample.pose_seed);
        let pose = Pose::random(body.num_joints(), config.max_pose_angle_deg.to_radians(), &mut pose_rng);
        let world = body.pose(&pose)?;
        let joints_world = body.regressor.regress(&world)?;
        let pelvis = joints_world[PELVIS];
        let r = &sample.rotation;
        let vertices: Vec<Vector3<f64>> = world.iter().map(|v| r * (v - pelvis)).collect();
        let joints3d: Vec<Vector3<f64>> = joints_world.iter().map(|j| r * (j - pelvis)).collect();
        // the sphere is centered on the pelvis
        let translation = sample.translation();
        let min_depth = vertices
            .iter()
            .map(|v| v.z + translation.tz)
            .fold(f64::INFINITY, f64::min);
        if min_depth < config.min_depth_m {
            continue;
        }
        let buffers = rasterize(&body.raster_mesh(&vertices), &translation, &sample.intrinsics)?;
        let Ok(tau) = max_distortion_scale(&buffers) else {
            continue;
        };
        let joints2d = perspective_project(&joints3d, &translation, &sample.intrinsics)?;
        let meta = SceneMeta {
            id: scene_id(index),
            index,
            translation,
            joints3d,
            joints2d,
            tau,
            protocol: assign_protocol(tau, &config.thresholds),
            attempts: attempt,
            raster: RasterHeader::new(&buffers, &sample.intrinsics),
            camera: sample,
        };
        return Ok(GeneratedScene {
            meta,
            vertices,
            buffers,
        });
    }
    Err(SynthError::Rejected {
        index,
        attempts: config.max_attempts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub dir: String,
    pub tau: f64,
    pub protocol: usize,
}

/// Top-level `index.json` of a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub count: usize,
    pub config: DatasetConfig,
    pub scenes: Vec<IndexEntry>,
}

/// Generate `n` scenes under `out/scenes/NNNN/` and write `out/index.json`.
pub fn generate_dataset(
    config: &DatasetConfig,
    body: &ArticulatedBody,
    n: usize,
    out: &Path,
) -> Result<DatasetIndex, SynthError> {
    config.camera.validate()?;
    let scenes_dir = out.join("scenes");
    std::fs::create_dir_all(&scenes_dir).map_err(|e| IoError::io(&scenes_dir, e))?;
    let scenes = (0..n)
        .into_par_iter()
        .map(|i| -> Result<IndexEntry, SynthError> {
            let scene = generate_scene(config, body, i)?;
            let dir = scenes_dir.join(&scene.meta.id);
            std::fs::create_dir_all(&dir).map_err(|e| IoError::io(&dir, e))?;
            write_buffers(&dir, &scene.buffers)?;
            write_json(&dir.join("meta.json"), &scene.meta)?;
            Ok(IndexEntry {
                dir: format!("scenes/{}", scene.meta.id),
                id: scene.meta.id,
                tau: scene.meta.tau,
                protocol: scene.meta.protocol,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let index = DatasetIndex {
        count: n,
        config: config.clone(),
        scenes,
    };
    write_json(&out.join("index.json"), &index)?;
    Ok(index)
}

/// Distances probed by the dolly-zoom analysis, meters.
pub const DOLLY_SWEEP: [f64; 9] = [0.5, 0.75, 1.0, 2.0, 4.0, 8.0, 12.0, 16.0, 20.0];

/// Fraction of the image height the body spans during the dolly zoom.
pub const DOLLY_FILL: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DollyPoint {
    #[serde(rename = "Tz")]
    pub tz: f64,
    pub tau: f64,
    pub error_px: f64,
    pub focal_px: f64,
    pub weak: WeakPerspective,
}

/// Weak vs. perspective reprojection gap of `joints3d` (pelvis-relative) at
/// depth `tz` in an `h`x`h` image.
///
/// The focal length follows the distance so the body keeps spanning
/// [`DOLLY_FILL`] of the image; the weak camera is then the least-squares
/// match to the perspective projection.
pub fn dolly_zoom_error(joints3d: &[Vector3<f64>], tz: f64, h: u32) -> Result<DollyPoint, SynthError> {
    if !(tz > 0.0 && tz.is_finite()) {
        return Err(SynthError::InvalidConfig(format!("Tz must be positive, got {tz}")));
    }
    if h == 0 {
        return Err(SynthError::InvalidConfig("image height must be positive".into()));
    }
    let (lo, hi) = joints3d.iter().fold(
        (Vector2::repeat(f64::INFINITY), Vector2::repeat(f64::NEG_INFINITY)),
        |(lo, hi), p| (lo.inf(&p.xy()), hi.sup(&p.xy())),
    );
    let extent = (hi - lo).max();
    if !(extent > 0.0 && extent.is_finite()) {
        return Err(SynthError::DegenerateBody("joints have no image-plane extent".into()));
    }
    let s_ref = 2.0 * DOLLY_FILL / extent;
    let focal_px = s_ref * h as f64 * tz / 2.0;
    let k = CameraIntrinsics::centered(focal_px, h, h)?;
    let t = Translation::new(0.0, 0.0, tz);
    let persp = perspective_project(joints3d, &t, &k)?;
    let weak = weak_from_correspondences(joints3d, &persp, &k)
        .ok_or_else(|| SynthError::DegenerateBody("no positive weak scale fits".into()))?;
    let weak_px = weak_project(joints3d, &weak, &k);
    let error_px =
        persp.iter().zip(&weak_px).map(|(a, b)| (a - b).norm()).sum::<f64>() / joints3d.len() as f64;
    let tau = joints3d
        .iter()
        .map(|j| tz / (j.z + tz))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(DollyPoint {
        tz,
        tau,
        error_px,
        focal_px,
        weak,
    })
}

/// Pelvis-relative regressed joints of `body` in the reference stance.
pub fn reference_joints(body: &ArticulatedBody) -> Result<Vec<Vector3<f64>>, SynthError> {
    let pose = if body.num_joints() == crate::body::NUM_JOINTS {
        crate::body::reference_pose()
    } else {
        Pose::identity(body.num_joints())
    };
    let verts = body.pose(&pose)?;
    let joints = body.regressor.regress(&verts)?;
    let pelvis = joints[PELVIS];
    Ok(joints.iter().map(|j| j - pelvis).collect())
}

pub fn dolly_sweep(joints3d: &[Vector3<f64>], tzs: &[f64], h: u32) -> Result<Vec<DollyPoint>, SynthError> {
    tzs.iter().map(|&tz| dolly_zoom_error(joints3d, tz, h)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::build_default_body;

    fn body() -> ArticulatedBody {
        build_default_body(&BodyConfig::default()).unwrap()
    }

    #[test]
    fn default_config_is_valid() {
        CameraSampleConfig::default().validate().unwrap();
        let too_wide = CameraSampleConfig {
            focal_mm: [3.0, 102.0],
            ..Default::default()
        };
        assert!(too_wide.validate().is_err());
        let empty = CameraSampleConfig {
            distance_m: [2.0, 1.0],
            ..Default::default()
        };
        assert!(empty.validate().is_err());
    }

    #[test]
    fn camera_faces_the_center() {
        let mut rng = scene_rng(3, 0);
        for _ in 0..200 {
            let s = sample_scene(&CameraSampleConfig::default(), &mut rng);
            let f = s.forward();
            let p = s.camera_position;
            // distance from the origin to the optical axis
            let off_axis = (p - f * p.dot(&f)).norm();
            assert!(off_axis < 1e-6, "{off_axis}");
            assert!((s.rotation * s.rotation.transpose() - Matrix3::identity()).amax() < 1e-12);
            let t = s.translation();
            assert!(t.tx.abs() < 1e-9 && t.ty.abs() < 1e-9);
            assert!((t.tz - s.distance).abs() < 1e-9);
        }
    }

    #[test]
    fn flat_elevation_stays_on_equator() {
        let cfg = CameraSampleConfig {
            elevation_deg: [0.0, 0.0],
            ..Default::default()
        };
        let mut rng = scene_rng(1, 0);
        for _ in 0..100 {
            assert!(sample_scene(&cfg, &mut rng).camera_position.y.abs() < 1e-9);
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let cfg = CameraSampleConfig::default();
        let a: Vec<_> = {
            let mut r = scene_rng(9, 4);
            (0..10).map(|_| sample_scene(&cfg, &mut r)).collect()
        };
        let mut r = scene_rng(9, 4);
        let b: Vec<_> = (0..10).map(|_| sample_scene(&cfg, &mut r)).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn scene_ground_truth_is_consistent() {
        let cfg = DatasetConfig::default();
        let b = body();
        let scene = generate_scene(&cfg, &b, 2).unwrap();
        let m = &scene.meta;
        assert_eq!(m.id, "0002");
        assert!(m.joints3d[PELVIS].norm() < 1e-12);
        assert_eq!(max_distortion_scale(&scene.buffers).unwrap(), m.tau);
        assert_eq!(m.protocol, assign_protocol(m.tau, &PDHUMAN_THRESHOLDS));
        let again = generate_scene(&cfg, &b, 2).unwrap();
        assert_eq!(again.meta, scene.meta);
    }

    #[test]
    fn empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let idx = generate_dataset(&DatasetConfig::default(), &body(), 0, dir.path()).unwrap();
        assert_eq!(idx.count, 0);
        assert!(idx.scenes.is_empty());
        assert!(dir.path().join("index.json").exists());
    }

    #[test]
    fn dolly_on_a_plane_is_exact() {
        let flat: Vec<_> = [(0.0, 0.0), (0.3, -0.5), (-0.2, 0.6), (0.1, 0.2)]
            .iter()
            .map(|&(x, y)| Vector3::new(x, y, 0.0))
            .collect();
        let p = dolly_zoom_error(&flat, 1.0, 224).unwrap();
        assert!(p.error_px < 1e-9);
        assert_eq!(p.tau, 1.0);
        assert!(matches!(dolly_zoom_error(&flat, 0.0, 224), Err(SynthError::InvalidConfig(_))));
        let point = vec![Vector3::zeros(); 3];
        assert!(matches!(dolly_zoom_error(&point, 1.0, 224), Err(SynthError::DegenerateBody(_))));
    }

    #[test]
    fn dolly_error_shrinks_with_distance() {
        let joints = reference_joints(&body()).unwrap();
        let sweep = dolly_sweep(&joints, &DOLLY_SWEEP, 224).unwrap();
        for w in sweep.windows(2) {
            assert!(w[1].error_px < w[0].error_px);
            assert!(w[1].tau < w[0].tau);
        }
        assert!(sweep[5].error_px < 1.0);
        assert!(sweep[0].error_px / sweep[4].error_px > 5.0);
    }
}

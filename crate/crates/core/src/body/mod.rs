//! Articulated test body: mesh, part labels, UV atlas, skinning and a sparse
//! joint regressor.

mod humanoid;
pub mod io;

use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use humanoid::{build_default_body, reference_pose, BodyConfig, JOINT_NAMES};

/// Number of joints in the skeleton.
pub const NUM_JOINTS: usize = 24;
/// Upper bound on body-part labels.
pub const MAX_PARTS: usize = 24;
/// Index of the pelvis joint, the root of the skeleton.
pub const PELVIS: usize = 0;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum BodyError {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("invalid body: {0}")]
    Invalid(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// Skeleton as a parent array; parents always precede their children.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    /// `None` for the root.
    pub parents: Vec<Option<usize>>,
    pub rest_positions: Vec<Vector3<f64>>,
}

impl Skeleton {
    pub fn len(&self) -> usize {
        self.parents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }

    fn validate(&self) -> Result<(), BodyError> {
        if self.parents.len() != self.rest_positions.len() {
            return Err(BodyError::Invalid("parents / rest_positions length differ".into()));
        }
        for (j, p) in self.parents.iter().enumerate() {
            match (j, p) {
                (0, None) => {}
                (0, Some(_)) => return Err(BodyError::Invalid("joint 0 must be the root".into())),
                (_, None) => return Err(BodyError::Invalid(format!("joint {j} has no parent"))),
                (_, Some(p)) if *p >= j => {
                    return Err(BodyError::Invalid(format!("joint {j} has parent {p} >= itself")))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Sparse `K x N` regressor from vertices to joints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointRegressor {
    pub num_vertices: usize,
    /// One row per joint: `(vertex index, weight)`.
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl JointRegressor {
    pub fn new(num_vertices: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self, BodyError> {
        let r = Self { num_vertices, rows };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), BodyError> {
        for (j, row) in self.rows.iter().enumerate() {
            let mut sum = 0.0;
            for &(v, w) in row {
                if v >= self.num_vertices {
                    return Err(BodyError::Invalid(format!(
                        "regressor row {j} references vertex {v} of {}",
                        self.num_vertices
                    )));
                }
                if !(w >= 0.0) {
                    return Err(BodyError::Invalid(format!("regressor row {j} has weight {w}")));
                }
                sum += w;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(BodyError::Invalid(format!("regressor row {j} sums to {sum}")));
            }
        }
        Ok(())
    }

    pub fn num_joints(&self) -> usize {
        self.rows.len()
    }

    /// `J = R V`.
    pub fn regress(&self, vertices: &[Vector3<f64>]) -> Result<Vec<Vector3<f64>>, BodyError> {
        if vertices.len() != self.num_vertices {
            return Err(BodyError::ShapeMismatch {
                expected: self.num_vertices,
                actual: vertices.len(),
            });
        }
        Ok(self
            .rows
            .iter()
            .map(|row| row.iter().fold(Vector3::zeros(), |acc, &(v, w)| acc + vertices[v] * w))
            .collect())
    }
}

/// Free function form of [`JointRegressor::regress`].
pub fn regress_joints(
    regressor: &JointRegressor,
    vertices: &[Vector3<f64>],
) -> Result<Vec<Vector3<f64>>, BodyError> {
    regressor.regress(vertices)
}

/// Per-joint local rotations plus a root translation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotations: Vec<UnitQuaternion<f64>>,
    pub root_translation: Vector3<f64>,
}

impl Pose {
    pub fn identity(num_joints: usize) -> Self {
        Self {
            rotations: vec![UnitQuaternion::identity(); num_joints],
            root_translation: Vector3::zeros(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.root_translation == Vector3::zeros()
            && self.rotations.iter().all(|q| *q == UnitQuaternion::identity())
    }

    pub fn validate(&self, num_joints: usize) -> Result<(), BodyError> {
        if self.rotations.len() != num_joints {
            return Err(BodyError::InvalidPose(format!(
                "{} rotations for {num_joints} joints",
                self.rotations.len()
            )));
        }
        for (j, q) in self.rotations.iter().enumerate() {
            let n = q.as_ref().norm();
            if (n - 1.0).abs() > 1e-9 {
                return Err(BodyError::InvalidPose(format!("joint {j} quaternion norm {n}")));
            }
        }
        if !self.root_translation.iter().all(|v| v.is_finite()) {
            return Err(BodyError::InvalidPose("non-finite root translation".into()));
        }
        Ok(())
    }

    /// Random articulation: every non-root joint rotates about a random axis by
    /// up to `max_angle` radians; the root stays fixed.
    pub fn random<R: Rng + ?Sized>(num_joints: usize, max_angle: f64, rng: &mut R) -> Self {
        let mut pose = Self::identity(num_joints);
        for q in pose.rotations.iter_mut().skip(1) {
            let axis = loop {
                let a = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                let n = a.norm();
                if n > 1e-3 && n <= 1.0 {
                    break a / n;
                }
            };
            let angle = rng.random_range(-max_angle..=max_angle);
            *q = UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_unchecked(axis), angle);
        }
        pose
    }
}

/// The body: rest mesh plus everything needed to pose, label and regress it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArticulatedBody {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[u32; 3]>,
    pub part_id: Vec<u16>,
    pub uv: Vec<[f64; 2]>,
    pub skeleton: Skeleton,
    /// Sparse skinning weights per vertex, `(joint, weight)`.
    pub skin_weights: Vec<Vec<(usize, f64)>>,
    pub regressor: JointRegressor,
}

impl ArticulatedBody {
    pub fn validate(&self) -> Result<(), BodyError> {
        let n = self.vertices.len();
        self.skeleton.validate()?;
        let k = self.skeleton.len();
        for (what, len) in [
            ("part_id", self.part_id.len()),
            ("uv", self.uv.len()),
            ("skin_weights", self.skin_weights.len()),
        ] {
            if len != n {
                return Err(BodyError::Invalid(format!("{what} has {len} entries for {n} vertices")));
            }
        }
        for (fi, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&v| v as usize >= n) {
                return Err(BodyError::Invalid(format!("face {fi} indexes past {n} vertices")));
            }
        }
        if let Some(p) = self.part_id.iter().find(|&&p| p as usize >= MAX_PARTS) {
            return Err(BodyError::Invalid(format!("part id {p} >= {MAX_PARTS}")));
        }
        if let Some(uv) = self.uv.iter().find(|uv| !uv.iter().all(|c| (0.0..=1.0).contains(c))) {
            return Err(BodyError::Invalid(format!("uv {uv:?} outside the unit square")));
        }
        for (vi, ws) in self.skin_weights.iter().enumerate() {
            let mut sum = 0.0;
            for &(j, w) in ws {
                if j >= k || !(w >= 0.0) {
                    return Err(BodyError::Invalid(format!("vertex {vi} has bad weight ({j}, {w})")));
                }
                sum += w;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(BodyError::Invalid(format!("vertex {vi} weights sum to {sum}")));
            }
        }
        if self.regressor.num_vertices != n {
            return Err(BodyError::Invalid("regressor vertex count differs from mesh".into()));
        }
        self.regressor.validate()
    }

    pub fn num_joints(&self) -> usize {
        self.skeleton.len()
    }

    pub fn num_parts(&self) -> usize {
        let mut seen = [false; MAX_PARTS];
        for &p in &self.part_id {
            seen[p as usize] = true;
        }
        seen.iter().filter(|&&s| s).count()
    }

    /// Rest-pose joints as seen through the regressor.
    pub fn rest_joints(&self) -> Vec<Vector3<f64>> {
        self.regressor
            .regress(&self.vertices)
            .expect("regressor matches mesh by construction")
    }

    /// Linear blend skinning of the rest mesh.
    pub fn pose(&self, pose: &Pose) -> Result<Vec<Vector3<f64>>, BodyError> {
        pose.validate(self.num_joints())?;
        if pose.is_identity() {
            return Ok(self.vertices.clone());
        }
        let transforms = self.global_transforms(pose);
        Ok(self
            .vertices
            .iter()
            .zip(&self.skin_weights)
            .map(|(v, ws)| {
                ws.iter().fold(Vector3::zeros(), |acc, &(j, w)| {
                    let (rot, origin) = &transforms[j];
                    acc + (rot * (v - self.skeleton.rest_positions[j]) + origin) * w
                })
            })
            .collect())
    }

    /// Posed joint locations from the skeleton (not the regressor).
    pub fn posed_skeleton(&self, pose: &Pose) -> Result<Vec<Vector3<f64>>, BodyError> {
        pose.validate(self.num_joints())?;
        Ok(self.global_transforms(pose).into_iter().map(|(_, o)| o).collect())
    }

    /// Global rotation and posed origin of every joint.
    fn global_transforms(&self, pose: &Pose) -> Vec<(UnitQuaternion<f64>, Vector3<f64>)> {
        let rest = &self.skeleton.rest_positions;
        let mut out: Vec<(UnitQuaternion<f64>, Vector3<f64>)> = Vec::with_capacity(rest.len());
        for (j, parent) in self.skeleton.parents.iter().enumerate() {
            let local = pose.rotations[j];
            let g = match parent {
                None => (local, rest[j] + pose.root_translation),
                Some(p) => {
                    let (prot, porigin) = out[*p];
                    (prot * local, porigin + prot * (rest[j] - rest[*p]))
                }
            };
            out.push(g);
        }
        out
    }

    pub fn raster_mesh<'a>(&'a self, vertices: &'a [Vector3<f64>]) -> crate::raster::RasterMesh<'a> {
        crate::raster::RasterMesh {
            vertices,
            faces: &self.faces,
            part_id: &self.part_id,
            uv: &self.uv,
        }
    }
}

/// Free function form of [`ArticulatedBody::pose`].
pub fn pose_body(body: &ArticulatedBody, pose: &Pose) -> Result<Vec<Vector3<f64>>, BodyError> {
    body.pose(pose)
}

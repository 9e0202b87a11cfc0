//! Procedural capsule-limb humanoid.
//!
//! Each of the 24 joints owns one ellipsoidal segment, labelled with the
//! joint's index as its part id and rigidly skinned to that joint. Every
//! segment axis passes through its joint and contains one vertex ring in the
//! joint's cross-section plane; the regressor row of the joint averages that
//! ring, so regressed joints coincide with the skeleton.

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::{ArticulatedBody, BodyError, JointRegressor, Pose, Skeleton, NUM_JOINTS};

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hand",
    "right_hand",
];

const PARENTS: [Option<usize>; NUM_JOINTS] = [
    None,
    Some(0),
    Some(0),
    Some(0),
    Some(1),
    Some(2),
    Some(3),
    Some(4),
    Some(5),
    Some(6),
    Some(7),
    Some(8),
    Some(9),
    Some(9),
    Some(9),
    Some(12),
    Some(13),
    Some(14),
    Some(16),
    Some(17),
    Some(18),
    Some(19),
    Some(20),
    Some(21),
];

/// Rest positions of the left side and the midline; x points to the body's
/// left (image right), y down, z away from the camera.
const REST: [[f64; 3]; NUM_JOINTS] = [
    [0.0, 0.0, 0.0],
    [0.085, 0.06, 0.0],
    [-0.085, 0.06, 0.0],
    [0.0, -0.10, 0.0],
    [0.095, 0.45, 0.0],
    [-0.095, 0.45, 0.0],
    [0.0, -0.22, 0.0],
    [0.10, 0.83, 0.02],
    [-0.10, 0.83, 0.02],
    [0.0, -0.32, 0.0],
    [0.11, 0.88, -0.10],
    [-0.11, 0.88, -0.10],
    [0.0, -0.47, 0.0],
    [0.07, -0.42, 0.0],
    [-0.07, -0.42, 0.0],
    [0.0, -0.56, 0.0],
    [0.18, -0.43, 0.0],
    [-0.18, -0.43, 0.0],
    [0.43, -0.43, 0.0],
    [-0.43, -0.43, 0.0],
    [0.67, -0.43, 0.0],
    [-0.67, -0.43, 0.0],
    [0.75, -0.43, 0.0],
    [-0.75, -0.43, 0.0],
];

/// Segment owned by a joint: runs from the joint toward `target`, extended by
/// `ext_start` behind the joint and `ext_end` past the target.
struct SegmentSpec {
    target: Target,
    ext_start: f64,
    ext_end: f64,
    r_side: f64,
    r_depth: f64,
}

enum Target {
    Joint(usize),
    Point([f64; 3]),
}

fn segment_specs() -> [SegmentSpec; NUM_JOINTS] {
    use Target::*;
    let s = |target, ext_start, ext_end, r_side, r_depth| SegmentSpec {
        target,
        ext_start,
        ext_end,
        r_side,
        r_depth,
    };
    [
        s(Point([0.0, 0.10, 0.0]), 0.04, 0.03, 0.16, 0.11),
        s(Joint(4), 0.05, 0.02, 0.075, 0.075),
        s(Joint(5), 0.05, 0.02, 0.075, 0.075),
        s(Joint(6), 0.08, 0.02, 0.15, 0.10),
        s(Joint(7), 0.02, 0.02, 0.055, 0.055),
        s(Joint(8), 0.02, 0.02, 0.055, 0.055),
        s(Joint(9), 0.07, 0.03, 0.155, 0.105),
        s(Joint(10), 0.04, 0.0, 0.045, 0.035),
        s(Joint(11), 0.04, 0.0, 0.045, 0.035),
        s(Joint(12), 0.06, 0.0, 0.17, 0.11),
        s(Point([0.115, 0.89, -0.16]), 0.02, 0.0, 0.04, 0.025),
        s(Point([-0.115, 0.89, -0.16]), 0.02, 0.0, 0.04, 0.025),
        s(Joint(15), 0.03, 0.0, 0.055, 0.055),
        s(Joint(16), 0.05, 0.0, 0.05, 0.05),
        s(Joint(17), 0.05, 0.0, 0.05, 0.05),
        s(Point([0.0, -0.78, 0.0]), 0.03, 0.0, 0.09, 0.10),
        s(Joint(18), 0.03, 0.02, 0.055, 0.055),
        s(Joint(19), 0.03, 0.02, 0.055, 0.055),
        s(Joint(20), 0.02, 0.02, 0.045, 0.045),
        s(Joint(21), 0.02, 0.02, 0.045, 0.045),
        s(Joint(22), 0.02, 0.01, 0.04, 0.02),
        s(Joint(23), 0.02, 0.01, 0.04, 0.02),
        s(Point([0.85, -0.43, 0.0]), 0.01, 0.0, 0.035, 0.015),
        s(Point([-0.85, -0.43, 0.0]), 0.01, 0.0, 0.035, 0.015),
    ]
}

/// A fixed mid-stride stance with the arms reaching toward the camera and a
/// forward lean, so the joints span roughly 0.35 m in depth.
pub fn reference_pose() -> Pose {
    let deg = f64::to_radians;
    let about_x = |a: f64| UnitQuaternion::from_axis_angle(&Vector3::x_axis(), deg(a));
    let about_y = |a: f64| UnitQuaternion::from_axis_angle(&Vector3::y_axis(), deg(a));
    let mut pose = Pose::identity(NUM_JOINTS);
    for (joint, q) in [
        (1, about_x(-20.0)),
        (2, about_x(5.0)),
        (3, about_x(5.0)),
        (4, about_x(30.0)),
        (5, about_x(5.0)),
        (9, about_x(5.0)),
        (16, about_y(20.0)),
        (17, about_y(-15.0)),
        (19, about_y(-25.0)),
    ] {
        pose.rotations[joint] = q;
    }
    pose
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BodyConfig {
    /// Interior vertex rings per segment (the joint ring comes on top).
    pub rings: usize,
    /// Vertices around each ring.
    pub segments: usize,
    /// Uniform scale applied to the whole body.
    pub scale: f64,
}

impl Default for BodyConfig {
    fn default() -> Self {
        Self {
            rings: 7,
            segments: 12,
            scale: 1.0,
        }
    }
}

impl BodyConfig {
    fn validate(&self) -> Result<(), BodyError> {
        if self.rings < 1 {
            return Err(BodyError::InvalidConfig("need at least one ring".into()));
        }
        if self.segments < 3 {
            return Err(BodyError::InvalidConfig("need at least three segments".into()));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(BodyError::InvalidConfig(format!("scale {}", self.scale)));
        }
        Ok(())
    }
}

/// Build the procedural humanoid (rest pose, pelvis at the origin).
pub fn build_default_body(config: &BodyConfig) -> Result<ArticulatedBody, BodyError> {
    config.validate()?;
    let rest: Vec<Vector3<f64>> = REST
        .iter()
        .map(|p| Vector3::new(p[0], p[1], p[2]) * config.scale)
        .collect();

    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut part_id = Vec::new();
    let mut uv = Vec::new();
    let mut skin_weights = Vec::new();
    let mut rows = Vec::with_capacity(NUM_JOINTS);

    for (joint, spec) in segment_specs().iter().enumerate() {
        let start = rest[joint];
        let end = match spec.target {
            Target::Joint(j) => rest[j],
            Target::Point(p) => Vector3::new(p[0], p[1], p[2]) * config.scale,
        };
        let axis = (end - start).normalize();
        let a = start - axis * spec.ext_start * config.scale;
        let b = end + axis * spec.ext_end * config.scale;
        let center = (a + b) / 2.0;
        let half_len = (b - a).norm() / 2.0;

        // Cross-section frame: depth axis from world z (or y when the segment
        // runs along z), side axis completing the frame.
        let reference = if axis.z.abs() < 0.9 {
            Vector3::z()
        } else {
            Vector3::y()
        };
        let depth_dir = (reference - axis * axis.dot(&reference)).normalize();
        let side_dir = axis.cross(&depth_dir);

        let joint_t = (start - center).dot(&axis) / half_len;
        let mut ts: Vec<f64> = (1..=config.rings)
            .map(|k| -(std::f64::consts::PI * k as f64 / (config.rings + 1) as f64).cos())
            .collect();
        ts.push(joint_t);
        ts.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let joint_ring = ts.iter().position(|&t| t == joint_t).unwrap();

        let cell = (
            (joint % 5) as f64 / 5.0,
            (joint / 5) as f64 / 5.0,
        );
        // margins wider than one bilinear footprint at 64x64 keep lookups
        // from bleeding into the neighboring chart
        let chart = |fu: f64, fv: f64| [cell.0 + (0.15 + 0.7 * fu) / 5.0, cell.1 + (0.15 + 0.7 * fv) / 5.0];

        let base = vertices.len() as u32;
        let n = config.segments;
        let cols = n + 1;
        let mut push = |p: Vector3<f64>, tex: [f64; 2]| {
            vertices.push(p);
            part_id.push(joint as u16);
            uv.push(tex);
            skin_weights.push(vec![(joint, 1.0)]);
        };

        push(center - axis * half_len, chart(0.5, 0.0));
        for &t in &ts {
            let radial = (1.0 - t * t).max(0.0).sqrt();
            for c in 0..cols {
                let phi = 2.0 * std::f64::consts::PI * (c % n) as f64 / n as f64;
                let offset = side_dir * (spec.r_side * config.scale * radial * phi.cos())
                    + depth_dir * (spec.r_depth * config.scale * radial * phi.sin());
                push(center + axis * (t * half_len) + offset, chart(c as f64 / n as f64, (t + 1.0) / 2.0));
            }
        }
        push(center + axis * half_len, chart(0.5, 1.0));

        let south = base;
        let north = base + 1 + (ts.len() * cols) as u32;
        let ring = |r: usize, c: usize| base + 1 + (r * cols + c) as u32;
        for c in 0..n {
            faces.push([south, ring(0, c + 1), ring(0, c)]);
        }
        for r in 0..ts.len() - 1 {
            for c in 0..n {
                faces.push([ring(r, c), ring(r, c + 1), ring(r + 1, c + 1)]);
                faces.push([ring(r, c), ring(r + 1, c + 1), ring(r + 1, c)]);
            }
        }
        let last = ts.len() - 1;
        for c in 0..n {
            faces.push([north, ring(last, c), ring(last, c + 1)]);
        }

        let w = 1.0 / n as f64;
        rows.push(
            (0..n)
                .map(|c| (ring(joint_ring, c) as usize, w))
                .collect::<Vec<_>>(),
        );
    }

    let regressor = JointRegressor::new(vertices.len(), rows)?;
    let body = ArticulatedBody {
        vertices,
        faces,
        part_id,
        uv,
        skeleton: Skeleton {
            parents: PARENTS.to_vec(),
            rest_positions: rest,
        },
        skin_weights,
        regressor,
    };
    body.validate()?;
    Ok(body)
}

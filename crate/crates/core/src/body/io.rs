//! Mesh I/O: an OBJ subset (`v` and `f` lines only) plus a JSON sidecar with
//! the per-vertex attributes, skeleton and regressor.
//!
//! The sidecar lives next to the OBJ with the extension replaced by `.json`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{ArticulatedBody, JointRegressor, Skeleton};
use crate::io::IoError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BodySidecar {
    pub part_id: Vec<u16>,
    pub uv: Vec<[f64; 2]>,
    pub skin_weights: Vec<Vec<(usize, f64)>>,
    pub regressor: JointRegressor,
    pub skeleton: Skeleton,
}

pub fn sidecar_path(obj: &Path) -> PathBuf {
    obj.with_extension("json")
}

pub fn write_obj(vertices: &[Vector3<f64>], faces: &[[u32; 3]]) -> String {
    let mut s = String::with_capacity(vertices.len() * 40 + faces.len() * 20);
    for v in vertices {
        // {:?} on f64 prints the shortest representation that roundtrips
        let _ = writeln!(s, "v {:?} {:?} {:?}", v.x, v.y, v.z);
    }
    for f in faces {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
}

/// Vertex positions and triangle indices read from an OBJ file.
pub type ObjMesh = (Vec<Vector3<f64>>, Vec<[u32; 3]>);

/// Parse `v`/`f` lines; `f` entries may carry `/vt/vn` suffixes, which are
/// ignored. Other record types are skipped.
pub fn parse_obj(text: &str, origin: &str) -> Result<ObjMesh, IoError> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let err = |msg: String| IoError::Parse {
            path: origin.to_string(),
            line: lineno + 1,
            msg,
        };
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut c = [0.0; 3];
                for slot in &mut c {
                    let tok = it.next().ok_or_else(|| err("vertex needs 3 coordinates".into()))?;
                    *slot = tok.parse().map_err(|_| err(format!("bad coordinate `{tok}`")))?;
                }
                vertices.push(Vector3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx: Vec<&str> = it.collect();
                if idx.len() != 3 {
                    return Err(err(format!("only triangles are supported, got {} indices", idx.len())));
                }
                let mut f = [0u32; 3];
                for (slot, tok) in f.iter_mut().zip(idx) {
                    let head = tok.split('/').next().unwrap_or("");
                    let i: u32 = head.parse().map_err(|_| err(format!("bad face index `{tok}`")))?;
                    if i == 0 {
                        return Err(err("face indices are 1-based".into()));
                    }
                    *slot = i - 1;
                }
                faces.push(f);
            }
            _ => {}
        }
    }
    Ok((vertices, faces))
}

pub fn save_body(body: &ArticulatedBody, obj_path: &Path) -> Result<(), IoError> {
    fs::write(obj_path, write_obj(&body.vertices, &body.faces)).map_err(|e| IoError::io(obj_path, e))?;
    let sidecar = BodySidecar {
        part_id: body.part_id.clone(),
        uv: body.uv.clone(),
        skin_weights: body.skin_weights.clone(),
        regressor: body.regressor.clone(),
        skeleton: body.skeleton.clone(),
    };
    crate::io::write_json(&sidecar_path(obj_path), &sidecar)
}

pub fn load_body(obj_path: &Path) -> Result<ArticulatedBody, IoError> {
    let text = fs::read_to_string(obj_path).map_err(|e| IoError::io(obj_path, e))?;
    let (vertices, faces) = parse_obj(&text, &obj_path.display().to_string())?;
    let sidecar: BodySidecar = crate::io::read_json(&sidecar_path(obj_path))?;
    let body = ArticulatedBody {
        vertices,
        faces,
        part_id: sidecar.part_id,
        uv: sidecar.uv,
        skeleton: sidecar.skeleton,
        skin_weights: sidecar.skin_weights,
        regressor: sidecar.regressor,
    };
    body.validate()
        .map_err(|e| IoError::Invalid(format!("{}: {e}", obj_path.display())))?;
    Ok(body)
}

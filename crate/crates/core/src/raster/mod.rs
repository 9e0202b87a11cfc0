//! Z-buffer rasterization of depth, part, IUV and distortion images.

mod triangle;
mod uv;

use std::path::Path;

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{perspective_project, CameraIntrinsics, GeometryError, Translation};
use crate::io::{self, IoError};

pub use triangle::{covered_pixels, edge_function, ScreenTriangle};
pub use uv::{sample_uv, warp_to_uv, UvMap, UvSample, DEFAULT_UV_RESOLUTION};

/// Part label of background pixels.
pub const PART_NONE: u16 = u16::MAX;

/// Lower and upper clamp for per-joint distortion weights.
pub const DISTORTION_WEIGHT_RANGE: (f64, f64) = (0.1, 10.0);

/// Rows per parallel work item.
const BAND_ROWS: usize = 16;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum RasterError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("nothing was rasterized inside the image")]
    EmptyRaster,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Borrowed mesh ready for rasterization. Each face takes the part label of
/// its first vertex.
#[derive(Debug, Clone, Copy)]
pub struct RasterMesh<'a> {
    /// Body-frame vertices; the camera-space point is `v + T`.
    pub vertices: &'a [Vector3<f64>],
    pub faces: &'a [[u32; 3]],
    pub part_id: &'a [u16],
    pub uv: &'a [[f64; 2]],
}

/// Rendered buffers, row-major, `width * height` entries each.
///
/// Background pixels hold `depth = +inf`, `part = PART_NONE`, zero IUV and
/// zero distortion.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterBuffers {
    pub width: usize,
    pub height: usize,
    /// Pelvis depth the distortion image is referenced to.
    pub tz: f64,
    pub depth: Vec<f64>,
    pub part: Vec<u16>,
    pub iuv: Vec<[f64; 3]>,
    pub distortion: Vec<f64>,
}

impl RasterBuffers {
    pub fn background(width: usize, height: usize, tz: f64) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            tz,
            depth: vec![f64::INFINITY; n],
            part: vec![PART_NONE; n],
            iuv: vec![[0.0; 3]; n],
            distortion: vec![0.0; n],
        }
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn is_covered(&self, idx: usize) -> bool {
        self.part[idx] != PART_NONE
    }

    pub fn covered_count(&self) -> usize {
        self.part.iter().filter(|&&p| p != PART_NONE).count()
    }

    /// No pixel was covered.
    pub fn is_empty(&self) -> bool {
        self.covered_count() == 0
    }

    /// Check the sentinel and distortion invariants; returns a description of
    /// the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        let n = self.width * self.height;
        if [self.depth.len(), self.part.len(), self.iuv.len(), self.distortion.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err("buffer lengths differ from width * height".into());
        }
        for i in 0..n {
            if self.is_covered(i) {
                let d = self.depth[i];
                if !(d.is_finite() && d > 0.0) || !(self.distortion[i] > 0.0) {
                    return Err(format!("covered pixel {i} has depth {d}, distortion {}", self.distortion[i]));
                }
            } else if self.depth[i] != f64::INFINITY || self.distortion[i] != 0.0 {
                return Err(format!("background pixel {i} carries data"));
            }
        }
        Ok(())
    }

    /// Same buffers with the camera placed `factor` times farther; depth and
    /// `Tz` scale together, so distortion is unchanged.
    pub fn scaled_depth(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.tz *= factor;
        for d in out.depth.iter_mut().filter(|d| d.is_finite()) {
            *d *= factor;
        }
        out
    }
}

struct PreparedFace {
    tri: ScreenTriangle,
    /// `1 / z` at the reordered vertices.
    inv_z: [f64; 3],
    /// `uv / z` at the reordered vertices.
    uv_over_z: [[f64; 2]; 3],
    part: u16,
    rows: (usize, usize),
    cols: (usize, usize),
}

/// Rasterize `mesh` translated by `t` and viewed through `k`.
///
/// Visibility is resolved with a z-buffer on perspective-correct depth
/// (`1/z` interpolated in screen space); ties keep the lower face index. The
/// output does not depend on the number of worker threads.
pub fn rasterize(
    mesh: &RasterMesh<'_>,
    t: &Translation,
    k: &CameraIntrinsics,
) -> Result<RasterBuffers, RasterError> {
    let n = mesh.vertices.len();
    if mesh.part_id.len() != n || mesh.uv.len() != n {
        return Err(RasterError::ShapeMismatch(format!(
            "{n} vertices, {} part ids, {} uvs",
            mesh.part_id.len(),
            mesh.uv.len()
        )));
    }
    if let Some(f) = mesh.faces.iter().find(|f| f.iter().any(|&v| v as usize >= n)) {
        return Err(RasterError::ShapeMismatch(format!("face {f:?} indexes past {n} vertices")));
    }
    let screen = perspective_project(mesh.vertices, t, k)?;
    let (width, height) = (k.width as usize, k.height as usize);

    let faces: Vec<PreparedFace> = mesh
        .faces
        .iter()
        .filter_map(|f| {
            let idx = [f[0] as usize, f[1] as usize, f[2] as usize];
            let tri = ScreenTriangle::new([screen[idx[0]], screen[idx[1]], screen[idx[2]]])?;
            let rows = tri.row_range(height)?;
            let cols = tri.col_range(width)?;
            let src = tri.order.map(|o| idx[o]);
            let inv_z = src.map(|v| 1.0 / (mesh.vertices[v].z + t.tz));
            let uv_over_z = [0, 1, 2].map(|s| {
                let uv = mesh.uv[src[s]];
                [uv[0] * inv_z[s], uv[1] * inv_z[s]]
            });
            Some(PreparedFace {
                tri,
                inv_z,
                uv_over_z,
                part: mesh.part_id[idx[0]],
                rows,
                cols,
            })
        })
        .collect();

    let bands: Vec<RasterBuffers> = (0..height.div_ceil(BAND_ROWS))
        .into_par_iter()
        .map(|band| {
            let r0 = band * BAND_ROWS;
            let r1 = (r0 + BAND_ROWS).min(height);
            rasterize_band(&faces, width, r0, r1, t.tz)
        })
        .collect();

    let mut out = RasterBuffers::background(width, height, t.tz);
    out.depth.clear();
    out.part.clear();
    out.iuv.clear();
    out.distortion.clear();
    for b in bands {
        out.depth.extend(b.depth);
        out.part.extend(b.part);
        out.iuv.extend(b.iuv);
        out.distortion.extend(b.distortion);
    }
    Ok(out)
}

fn rasterize_band(faces: &[PreparedFace], width: usize, r0: usize, r1: usize, tz: f64) -> RasterBuffers {
    let mut buf = RasterBuffers::background(width, r1 - r0, tz);
    for face in faces {
        let rows = (face.rows.0.max(r0), face.rows.1.min(r1 - 1));
        if rows.0 > rows.1 {
            continue;
        }
        for i in rows.0..=rows.1 {
            for j in face.cols.0..=face.cols.1 {
                let p = Vector2::new(j as f64 + 0.5, i as f64 + 0.5);
                let Some(b) = face.tri.barycentric(&p) else {
                    continue;
                };
                let inv_z = b[0] * face.inv_z[0] + b[1] * face.inv_z[1] + b[2] * face.inv_z[2];
                let depth = 1.0 / inv_z;
                let idx = (i - r0) * width + j;
                if !(depth < buf.depth[idx]) {
                    continue;
                }
                let u = (b[0] * face.uv_over_z[0][0] + b[1] * face.uv_over_z[1][0] + b[2] * face.uv_over_z[2][0])
                    * depth;
                let v = (b[0] * face.uv_over_z[0][1] + b[1] * face.uv_over_z[1][1] + b[2] * face.uv_over_z[2][1])
                    * depth;
                buf.depth[idx] = depth;
                buf.part[idx] = face.part;
                buf.iuv[idx] = [face.part as f64, u.clamp(0.0, 1.0), v.clamp(0.0, 1.0)];
                buf.distortion[idx] = tz / depth;
            }
        }
    }
    buf
}

/// Maximum distortion over covered pixels (the per-sample `tau`).
pub fn max_distortion_scale(buffers: &RasterBuffers) -> Result<f64, RasterError> {
    buffers
        .distortion
        .iter()
        .zip(&buffers.part)
        .filter(|(_, &p)| p != PART_NONE)
        .map(|(&d, _)| d)
        .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.max(d))))
        .ok_or(RasterError::EmptyRaster)
}

/// A sampled distortion weight; `fallback` marks samples that missed the body.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointWeight {
    pub value: f64,
    pub fallback: bool,
}

/// Bilinear sample of the distortion image at each 2D joint.
///
/// Joints whose containing pixel lies outside the image or on background get
/// `1.0` with the fallback flag. Only covered neighbours enter the bilinear
/// blend. Results are clamped to [`DISTORTION_WEIGHT_RANGE`].
pub fn sample_distortion_at_joints(buffers: &RasterBuffers, joints2d: &[Vector2<f64>]) -> Vec<JointWeight> {
    let (w, h) = (buffers.width as f64, buffers.height as f64);
    let fallback = JointWeight {
        value: 1.0,
        fallback: true,
    };
    joints2d
        .iter()
        .map(|p| {
            if !(p.x >= 0.0 && p.x < w && p.y >= 0.0 && p.y < h) {
                return fallback;
            }
            let home = buffers.index(p.y as usize, p.x as usize);
            if !buffers.is_covered(home) {
                return fallback;
            }
            let (gx, gy) = (p.x - 0.5, p.y - 0.5);
            let (x0, y0) = (gx.floor(), gy.floor());
            let (fx, fy) = (gx - x0, gy - y0);
            let taps = [
                (x0, y0, (1.0 - fx) * (1.0 - fy)),
                (x0 + 1.0, y0, fx * (1.0 - fy)),
                (x0, y0 + 1.0, (1.0 - fx) * fy),
                (x0 + 1.0, y0 + 1.0, fx * fy),
            ];
            let home_value = buffers.distortion[home];
            let (mut acc, mut wsum) = (0.0, 0.0);
            for (x, y, wt) in taps {
                if x < 0.0 || y < 0.0 || x >= w || y >= h || wt == 0.0 {
                    continue;
                }
                let idx = buffers.index(y as usize, x as usize);
                if buffers.is_covered(idx) {
                    acc += wt * (buffers.distortion[idx] - home_value);
                    wsum += wt;
                }
            }
            let value = if wsum > 0.0 { home_value + acc / wsum } else { home_value };
            JointWeight {
                value: value.clamp(DISTORTION_WEIGHT_RANGE.0, DISTORTION_WEIGHT_RANGE.1),
                fallback: false,
            }
        })
        .collect()
}

/// JSON header written next to the raster files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterHeader {
    #[serde(rename = "Tz")]
    pub tz: f64,
    pub intrinsics: CameraIntrinsics,
    pub width: usize,
    pub height: usize,
    pub depth_background: String,
    pub distortion_background: f64,
    pub part_background: u16,
    pub pfm_row_order: String,
    pub png_channels: String,
}

impl RasterHeader {
    pub fn new(buffers: &RasterBuffers, intrinsics: &CameraIntrinsics) -> Self {
        Self {
            tz: buffers.tz,
            intrinsics: *intrinsics,
            width: buffers.width,
            height: buffers.height,
            depth_background: "inf".into(),
            distortion_background: 0.0,
            part_background: PART_NONE,
            pfm_row_order: "top-down".into(),
            png_channels: "R=part, G=U*65535, B=V*65535".into(),
        }
    }
}

fn quantize_unit(x: f64) -> u16 {
    (x.clamp(0.0, 1.0) * 65535.0).round() as u16
}

/// Write `depth.pfm`, `distortion.pfm` and `iuv.png` into `dir`.
pub fn write_buffers(dir: &Path, buffers: &RasterBuffers) -> Result<(), IoError> {
    let (w, h) = (buffers.width, buffers.height);
    let depth: Vec<f32> = buffers.depth.iter().map(|&d| d as f32).collect();
    let distortion: Vec<f32> = buffers.distortion.iter().map(|&d| d as f32).collect();
    io::write_pfm(&dir.join("depth.pfm"), w, h, &depth)?;
    io::write_pfm(&dir.join("distortion.pfm"), w, h, &distortion)?;
    let iuv: Vec<[u16; 3]> = buffers
        .part
        .iter()
        .zip(&buffers.iuv)
        .map(|(&p, iuv)| {
            if p == PART_NONE {
                [PART_NONE, 0, 0]
            } else {
                [p, quantize_unit(iuv[1]), quantize_unit(iuv[2])]
            }
        })
        .collect();
    io::write_png16(&dir.join("iuv.png"), w as u32, h as u32, &iuv)
}

/// Read buffers written by [`write_buffers`]. Values come back at file
/// precision (f32 depth/distortion, 16-bit UV).
pub fn read_buffers(dir: &Path, tz: f64) -> Result<RasterBuffers, IoError> {
    let (w, h, depth) = io::read_pfm(&dir.join("depth.pfm"))?;
    let (w2, h2, distortion) = io::read_pfm(&dir.join("distortion.pfm"))?;
    let (w3, h3, iuv) = io::read_png16(&dir.join("iuv.png"))?;
    if (w, h) != (w2, h2) || (w, h) != (w3 as usize, h3 as usize) {
        return Err(IoError::Invalid(format!(
            "{}: raster files disagree on image size",
            dir.display()
        )));
    }
    Ok(RasterBuffers {
        width: w,
        height: h,
        tz,
        depth: depth.into_iter().map(f64::from).collect(),
        part: iuv.iter().map(|px| px[0]).collect(),
        iuv: iuv
            .iter()
            .map(|px| {
                if px[0] == PART_NONE {
                    [0.0; 3]
                } else {
                    [px[0] as f64, px[1] as f64 / 65535.0, px[2] as f64 / 65535.0]
                }
            })
            .collect(),
        distortion: distortion.into_iter().map(f64::from).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k(w: u32, h: u32) -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, w as f64 / 2.0, h as f64 / 2.0, w, h).unwrap()
    }

    type Quad = (Vec<Vector3<f64>>, Vec<[u32; 3]>, Vec<u16>, Vec<[f64; 2]>);

    /// Fronto-parallel quad (two triangles) at body-frame depth `z`.
    fn quad(z: f64, half: f64, part: u16) -> Quad {
        let v = vec![
            Vector3::new(-half, -half, z),
            Vector3::new(half, -half, z),
            Vector3::new(half, half, z),
            Vector3::new(-half, half, z),
        ];
        (
            v,
            vec![[0, 1, 2], [0, 2, 3]],
            vec![part; 4],
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
        )
    }

    #[test]
    fn constant_depth_facet() {
        let (v, f, p, uv) = quad(0.5, 0.3, 3);
        let mesh = RasterMesh { vertices: &v, faces: &f, part_id: &p, uv: &uv };
        let t = Translation::new(0.0, 0.0, 2.0);
        let b = rasterize(&mesh, &t, &k(32, 32)).unwrap();
        b.check_invariants().unwrap();
        let c = b.index(16, 16);
        assert!(b.is_covered(c));
        assert!((b.depth[c] - 2.5).abs() < 1e-12);
        assert!((b.distortion[c] - 2.0 / 2.5).abs() < 1e-12);
        assert_eq!(b.part[c], 3);
        assert_eq!(b.part[0], PART_NONE);
        assert_eq!(b.depth[0], f64::INFINITY);
    }

    #[test]
    fn pelvis_plane_has_unit_distortion() {
        let (v, f, p, uv) = quad(0.0, 0.3, 0);
        let mesh = RasterMesh { vertices: &v, faces: &f, part_id: &p, uv: &uv };
        let b = rasterize(&mesh, &Translation::new(0.0, 0.0, 3.0), &k(32, 32)).unwrap();
        let tau = max_distortion_scale(&b).unwrap();
        assert!((tau - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nearer_triangle_wins() {
        let (mut v, mut f, mut p, mut uv) = quad(1.0, 0.4, 1);
        let (v2, f2, p2, uv2) = quad(0.0, 0.4, 2);
        f.extend(f2.iter().map(|t| t.map(|i| i + 4)));
        v.extend(v2);
        p.extend(p2);
        uv.extend(uv2);
        let mesh = RasterMesh { vertices: &v, faces: &f, part_id: &p, uv: &uv };
        // body-frame z 0 and 1 with Tz = 1 -> camera depths 1 m and 2 m
        let b = rasterize(&mesh, &Translation::new(0.0, 0.0, 1.0), &k(32, 32)).unwrap();
        let parts: Vec<u16> = b.part.iter().copied().filter(|&x| x != PART_NONE).collect();
        assert!(!parts.is_empty());
        // the 2 m quad projects smaller and is entirely hidden
        assert!(parts.iter().all(|&x| x == 2));
    }

    #[test]
    fn equal_depth_keeps_lower_face_index() {
        let (mut v, _, _, mut uv) = quad(0.0, 0.4, 0);
        v.extend(v.clone());
        uv.extend(uv.clone());
        let p = vec![5, 5, 5, 5, 6, 6, 6, 6];
        let f = vec![[0, 1, 2], [4, 5, 6]];
        let mesh = RasterMesh { vertices: &v, faces: &f, part_id: &p, uv: &uv };
        let b = rasterize(&mesh, &Translation::new(0.0, 0.0, 1.0), &k(16, 16)).unwrap();
        assert!(b.part.contains(&5));
        assert!(!b.part.contains(&6));
    }

    #[test]
    fn perspective_correct_uv() {
        // slanted quad: u varies linearly in 3D, not in screen space
        let v = vec![
            Vector3::new(-0.5, -0.5, -0.4),
            Vector3::new(0.5, -0.5, 0.6),
            Vector3::new(0.5, 0.5, 0.6),
            Vector3::new(-0.5, 0.5, -0.4),
        ];
        let f = vec![[0, 1, 2], [0, 2, 3]];
        let p = vec![0; 4];
        let uv = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let mesh = RasterMesh { vertices: &v, faces: &f, part_id: &p, uv: &uv };
        let t = Translation::new(0.0, 0.0, 1.0);
        let kk = k(64, 64);
        let b = rasterize(&mesh, &t, &kk).unwrap();
        for i in 0..64 {
            for j in 0..64 {
                let idx = b.index(i, j);
                if !b.is_covered(idx) {
                    continue;
                }
                let z = b.depth[idx];
                let x = (j as f64 + 0.5 - kk.cx) * z / kk.f;
                let expected_u = x + 0.5;
                assert!((b.iuv[idx][1] - expected_u).abs() < 1e-9, "u at ({i},{j})");
                // the plane satisfies z = x + 1.1
                assert!((z - (x + 1.1)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn behind_camera_is_an_error() {
        let (v, f, p, uv) = quad(-2.0, 0.3, 0);
        let mesh = RasterMesh { vertices: &v, faces: &f, part_id: &p, uv: &uv };
        let err = rasterize(&mesh, &Translation::new(0.0, 0.0, 1.0), &k(8, 8)).unwrap_err();
        assert!(matches!(err, RasterError::Geometry(GeometryError::PointBehindCamera { .. })));
    }

    #[test]
    fn empty_raster_has_no_tau() {
        let (v, f, p, uv) = quad(0.0, 0.3, 0);
        let mesh = RasterMesh { vertices: &v, faces: &f, part_id: &p, uv: &uv };
        let b = rasterize(&mesh, &Translation::new(50.0, 0.0, 1.0), &k(8, 8)).unwrap();
        assert!(b.is_empty());
        assert_eq!(max_distortion_scale(&b), Err(RasterError::EmptyRaster));
    }

    #[test]
    fn tau_is_the_max_ratio() {
        let mut b = RasterBuffers::background(2, 2, 2.0);
        for (i, d) in [(0, 2.0), (1, 2.0), (2, 1.0)] {
            b.depth[i] = d;
            b.part[i] = 0;
            b.distortion[i] = b.tz / d;
        }
        assert_eq!(max_distortion_scale(&b), Ok(2.0));
    }

    #[test]
    fn joint_weights() {
        // facet at camera depth Tz / 1.5
        let tz = 1.5;
        let (v, f, p, uv) = quad(tz / 1.5 - tz, 0.1, 0);
        let mesh = RasterMesh { vertices: &v, faces: &f, part_id: &p, uv: &uv };
        let b = rasterize(&mesh, &Translation::new(0.0, 0.0, tz), &k(32, 32)).unwrap();
        let w = sample_distortion_at_joints(
            &b,
            &[Vector2::new(16.2, 15.7), Vector2::new(-3.0, 4.0), Vector2::new(0.5, 0.5)],
        );
        assert!((w[0].value - 1.5).abs() < 1e-3 && !w[0].fallback);
        assert_eq!(w[1], JointWeight { value: 1.0, fallback: true });
        assert!(w[2].fallback);
    }

    #[test]
    fn joint_weights_are_clamped() {
        let mut b = RasterBuffers::background(1, 1, 1.0);
        b.part[0] = 0;
        b.depth[0] = 0.01;
        b.distortion[0] = 100.0;
        let w = sample_distortion_at_joints(&b, &[Vector2::new(0.5, 0.5)]);
        assert_eq!(w[0].value, 10.0);
    }

    #[test]
    fn files_roundtrip() {
        let (v, f, p, uv) = quad(0.2, 0.3, 7);
        let mesh = RasterMesh { vertices: &v, faces: &f, part_id: &p, uv: &uv };
        let b = rasterize(&mesh, &Translation::new(0.0, 0.0, 2.0), &k(24, 24)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_buffers(dir.path(), &b).unwrap();
        let back = read_buffers(dir.path(), b.tz).unwrap();
        assert_eq!(back.part, b.part);
        for i in 0..b.depth.len() {
            if b.is_covered(i) {
                assert!((back.depth[i] - b.depth[i]).abs() < 1e-6);
                assert!((back.iuv[i][1] - b.iuv[i][1]).abs() < 1e-4);
            } else {
                assert_eq!(back.depth[i], f64::INFINITY);
            }
        }
    }
}

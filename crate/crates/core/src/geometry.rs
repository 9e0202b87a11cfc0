//! Camera models and the conversions between them.
//!
//! Conventions used throughout the crate: the camera looks down `+z`, the
//! image origin is the top-left corner with `y` pointing down, and pixel
//! `(row i, col j)` has its center at `(j + 0.5, i + 0.5)`. Focal lengths are
//! always stored in pixels; [`ndc_screen_convert`] maps to and from the
//! normalized coordinates the weak-perspective scale lives in.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

/// Focal length used by the weak-perspective camera, in pixels.
pub const WEAK_FOCAL_PX: f64 = 5000.0;

/// Focal length assumed for 224x224 crops when no ground truth is available.
pub const DEFAULT_PERSPECTIVE_FOCAL_PX: f64 = 1000.0;

/// Camera-space depth at or below which a point counts as behind the camera.
pub const DEPTH_EPSILON: f64 = 1e-6;

/// Upper end of the admissible pelvis depth range, in meters.
pub const MAX_TZ: f64 = 10.0;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point {index} is behind the camera (depth {depth})")]
    PointBehindCamera { index: usize, depth: f64 },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid weak-perspective camera: {0}")]
    InvalidWeak(String),
    #[error("invalid translation: {0}")]
    InvalidTranslation(String),
    #[error("invalid crop box: {0}")]
    InvalidCrop(String),
}

/// Pinhole intrinsics with a single focal length in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub f: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(f: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let k = Self {
            f,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Intrinsics with the principal point at the image center.
    pub fn centered(f: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        Self::new(f, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.f.is_finite() && self.f > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal length must be positive, got {}",
                self.f
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::InvalidIntrinsics(
                "image size must be positive".into(),
            ));
        }
        let (w, h) = (self.width as f64, self.height as f64);
        if !(self.cx.is_finite() && (0.0..=w).contains(&self.cx))
            || !(self.cy.is_finite() && (0.0..=h).contains(&self.cy))
        {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside the {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn with_focal(&self, f: f64) -> Self {
        Self { f, ..*self }
    }

    /// Vertical field of view in degrees.
    pub fn vertical_fov_deg(&self) -> f64 {
        2.0 * (self.height as f64 / (2.0 * self.f)).atan().to_degrees()
    }
}

/// Weak-perspective (scaled orthographic) camera `(s, tx, ty)`.
///
/// `s` is a scale in normalized image units, so a point `(x, y)` lands at
/// `s * (x + tx, y + ty)` in NDC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakPerspective {
    pub s: f64,
    pub tx: f64,
    pub ty: f64,
}

impl WeakPerspective {
    pub fn new(s: f64, tx: f64, ty: f64) -> Result<Self, GeometryError> {
        let w = Self { s, tx, ty };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.s.is_finite() && self.s > 0.0) {
            return Err(GeometryError::InvalidWeak(format!(
                "scale must be positive, got {}",
                self.s
            )));
        }
        if !(self.tx.is_finite() && self.ty.is_finite()) {
            return Err(GeometryError::InvalidWeak("offsets must be finite".into()));
        }
        Ok(())
    }

    /// The perspective translation this camera is equivalent to under the
    /// weak focal length, for an image of height `h`.
    pub fn equivalent_translation(&self, h: f64) -> Translation {
        Translation {
            tx: self.tx,
            ty: self.ty,
            tz: tz_from_focal(WEAK_FOCAL_PX, h, self.s),
        }
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.s, self.tx, self.ty]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self {
            s: a[0],
            tx: a[1],
            ty: a[2],
        }
    }
}

/// Pelvis translation in camera space, meters.
///
/// The value type itself accepts any finite translation; weak-equivalent
/// translations routinely sit far beyond the fitting range. Use
/// [`Translation::validate_fit_range`] where `Tz` must lie in `(0, 10]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Translation {
    #[serde(rename = "Tx")]
    pub tx: f64,
    #[serde(rename = "Ty")]
    pub ty: f64,
    #[serde(rename = "Tz")]
    pub tz: f64,
}

impl Translation {
    pub fn new(tx: f64, ty: f64, tz: f64) -> Self {
        Self { tx, ty, tz }
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.tx, self.ty, self.tz)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn validate_fit_range(&self) -> Result<(), GeometryError> {
        if !(self.tx.is_finite() && self.ty.is_finite() && self.tz.is_finite()) {
            return Err(GeometryError::InvalidTranslation(
                "components must be finite".into(),
            ));
        }
        if !(self.tz > 0.0 && self.tz <= MAX_TZ) {
            return Err(GeometryError::InvalidTranslation(format!(
                "Tz = {} outside (0, {MAX_TZ}]",
                self.tz
            )));
        }
        Ok(())
    }
}

/// Clamp a depth into the admissible fitting range `(0, 10]`.
pub fn project_tz(tz: f64, floor: f64) -> f64 {
    tz.clamp(floor, MAX_TZ)
}

/// Square person crop inside a full image, all in full-image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    #[serde(rename = "W")]
    pub full_w: f64,
    #[serde(rename = "H")]
    pub full_h: f64,
}

impl CropBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64, full_w: f64, full_h: f64) -> Result<Self, GeometryError> {
        let b = Self {
            cx,
            cy,
            w,
            h,
            full_w,
            full_h,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let all = [self.cx, self.cy, self.w, self.h, self.full_w, self.full_h];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidCrop("non-finite field".into()));
        }
        if self.w <= 0.0 || self.h <= 0.0 || self.full_w <= 0.0 || self.full_h <= 0.0 {
            return Err(GeometryError::InvalidCrop("sizes must be positive".into()));
        }
        if self.w != self.h {
            return Err(GeometryError::InvalidCrop(format!(
                "crop must be square, got {}x{}",
                self.w, self.h
            )));
        }
        Ok(())
    }

    /// The crop covering the whole image (must be square).
    pub fn full_image(full_w: f64, full_h: f64) -> Result<Self, GeometryError> {
        Self::new(full_w / 2.0, full_h / 2.0, full_w, full_h, full_w, full_h)
    }

    /// Square box around the bounding box of `points`, enlarged by `padding`.
    pub fn around_points(
        points: &[Vector2<f64>],
        full_w: f64,
        full_h: f64,
        padding: f64,
    ) -> Result<Self, GeometryError> {
        if points.is_empty() {
            return Err(GeometryError::InvalidCrop("no points".into()));
        }
        let (mut lo, mut hi) = (points[0], points[0]);
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let size = (hi - lo).max() * padding;
        let size = if size > 0.0 { size } else { 1.0 };
        let c = (lo + hi) / 2.0;
        Self::new(c.x, c.y, size, size, full_w, full_h)
    }

    /// Map a full-image pixel into a `res`x`res` resized crop.
    pub fn full_to_crop(&self, p: &Vector2<f64>, res: f64) -> Vector2<f64> {
        let origin = Vector2::new(self.cx - self.w / 2.0, self.cy - self.h / 2.0);
        (p - origin) * (res / self.w)
    }

    pub fn crop_to_full(&self, p: &Vector2<f64>, res: f64) -> Vector2<f64> {
        let origin = Vector2::new(self.cx - self.w / 2.0, self.cy - self.h / 2.0);
        p * (self.w / res) + origin
    }
}

fn check_depths(points: &[Vector3<f64>], tz: f64) -> Result<(), GeometryError> {
    for (index, p) in points.iter().enumerate() {
        let depth = p.z + tz;
        if !(depth > DEPTH_EPSILON) {
            return Err(GeometryError::PointBehindCamera { index, depth });
        }
    }
    Ok(())
}

/// Full perspective projection of body-frame points translated by `t`.
pub fn perspective_project(
    points: &[Vector3<f64>],
    t: &Translation,
    k: &CameraIntrinsics,
) -> Result<Vec<Vector2<f64>>, GeometryError> {
    check_depths(points, t.tz)?;
    Ok(points
        .iter()
        .map(|p| {
            let z = p.z + t.tz;
            Vector2::new(
                k.f * (p.x + t.tx) / z + k.cx,
                k.f * (p.y + t.ty) / z + k.cy,
            )
        })
        .collect())
}

/// Weak-perspective projection.
///
/// Equivalent to [`perspective_project`] with the weak focal length and the
/// translation `(tx, ty, 2 f_W / (s h))` applied to the points flattened onto
/// the `z = 0` plane, which reduces to `s h / 2 * (x + tx) + cx`.
pub fn weak_project(
    points: &[Vector3<f64>],
    w: &WeakPerspective,
    k: &CameraIntrinsics,
) -> Vec<Vector2<f64>> {
    let half_scale = w.s * k.height as f64 / 2.0;
    points
        .iter()
        .map(|p| {
            Vector2::new(
                half_scale * (p.x + w.tx) + k.cx,
                half_scale * (p.y + w.ty) + k.cy,
            )
        })
        .collect()
}

/// `f = s h Tz / 2`, in pixels.
pub fn focal_from_weak(s: f64, h: f64, tz: f64) -> f64 {
    s * h * tz / 2.0
}

/// `Tz = 2 f / (h s)`, in meters.
pub fn tz_from_focal(f: f64, h: f64, s: f64) -> f64 {
    2.0 * f / (h * s)
}

/// Full-image `(Tx, Ty)` from a weak camera fitted inside `crop`.
pub fn crop_to_full_translation(w: &WeakPerspective, crop: &CropBox) -> (f64, f64) {
    (
        w.tx + (2.0 * crop.cx - crop.full_w) / (crop.w * w.s),
        w.ty + (2.0 * crop.cy - crop.full_h) / (crop.h * w.s),
    )
}

/// Least-squares weak camera mapping `points` onto `targets` in the image
/// described by `k` (squared pixel error, both axes sharing one scale).
///
/// `None` when the points have no spread in x/y or the best scale is not
/// positive.
pub fn weak_from_correspondences(
    points: &[Vector3<f64>],
    targets: &[Vector2<f64>],
    k: &CameraIntrinsics,
) -> Option<WeakPerspective> {
    if points.len() != targets.len() || points.is_empty() {
        return None;
    }
    let n = points.len() as f64;
    let mean_p = points.iter().map(|p| p.xy()).sum::<Vector2<f64>>() / n;
    let mean_t = targets.iter().sum::<Vector2<f64>>() / n;
    let (mut num, mut den) = (0.0, 0.0);
    for (p, t) in points.iter().zip(targets) {
        let dp = p.xy() - mean_p;
        num += dp.dot(&(t - mean_t));
        den += dp.norm_squared();
    }
    if !(den > 0.0) {
        return None;
    }
    // u - c = a x + e with a = s h / 2 and e = a t
    let a = num / den;
    if !(a > 0.0 && a.is_finite()) {
        return None;
    }
    let e = mean_t - Vector2::new(k.cx, k.cy) - a * mean_p;
    WeakPerspective::new(2.0 * a / k.height as f64, e.x / a, e.y / a).ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NdcDirection {
    ScreenToNdc,
    NdcToScreen,
}

/// Convert between screen pixels and NDC, `x_ndc = 2 (u - cx) / h`.
///
/// Both axes are normalized by the image height so NDC stays isotropic.
pub fn ndc_screen_convert(
    points: &[Vector2<f64>],
    k: &CameraIntrinsics,
    direction: NdcDirection,
) -> Vec<Vector2<f64>> {
    let half_h = k.height as f64 / 2.0;
    let c = Vector2::new(k.cx, k.cy);
    match direction {
        NdcDirection::ScreenToNdc => points.iter().map(|p| (p - c) / half_h).collect(),
        NdcDirection::NdcToScreen => points.iter().map(|p| p * half_h + c).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k(f: f64) -> CameraIntrinsics {
        CameraIntrinsics::new(f, 112.0, 112.0, 224, 224).unwrap()
    }

    #[test]
    fn optical_axis_maps_to_principal_point() {
        let uv = perspective_project(&[Vector3::zeros()], &Translation::new(0.0, 0.0, 2.0), &k(1000.0))
            .unwrap();
        assert_eq!(uv[0], Vector2::new(112.0, 112.0));
    }

    #[test]
    fn off_axis_point() {
        let uv = perspective_project(
            &[Vector3::new(0.2, 0.0, 0.0)],
            &Translation::new(0.0, 0.0, 1.0),
            &k(500.0),
        )
        .unwrap();
        assert!((uv[0].x - 212.0).abs() < 1e-12);
        assert_eq!(uv[0].y, 112.0);
    }

    #[test]
    fn degenerate_depth_is_rejected() {
        let err = perspective_project(
            &[Vector3::new(0.0, 0.0, -1.0 + 1e-7)],
            &Translation::new(0.0, 0.0, 1.0),
            &k(500.0),
        )
        .unwrap_err();
        assert!(matches!(err, GeometryError::PointBehindCamera { index: 0, .. }));
    }

    #[test]
    fn weak_ignores_depth() {
        let w = WeakPerspective::new(1.0, 0.0, 0.0).unwrap();
        let a = weak_project(&[Vector3::new(0.1, 0.0, 0.5)], &w, &k(1000.0));
        let b = weak_project(&[Vector3::new(0.1, 0.0, 0.0)], &w, &k(1000.0));
        assert_eq!(a, b);
        let centered = weak_project(&[Vector3::new(0.0, 0.0, 3.0)], &w, &k(1000.0));
        assert_eq!(centered[0], Vector2::new(112.0, 112.0));
    }

    #[test]
    fn weak_matches_equivalent_perspective_at_weak_focal() {
        let w = WeakPerspective::new(0.9, 0.05, -0.1).unwrap();
        let kw = k(WEAK_FOCAL_PX);
        let pts = [Vector3::new(0.3, -0.2, 0.0), Vector3::new(-0.4, 0.7, 0.0)];
        let weak = weak_project(&pts, &w, &kw);
        let persp = perspective_project(&pts, &w.equivalent_translation(224.0), &kw).unwrap();
        for (a, b) in weak.iter().zip(&persp) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn focal_closed_forms() {
        assert_eq!(focal_from_weak(1.0, 224.0, 5.0), 560.0);
        assert_eq!(tz_from_focal(560.0, 224.0, 1.0), 5.0);
        let tz = tz_from_focal(WEAK_FOCAL_PX, 224.0, 1.0);
        assert!((tz - 44.642857142857146).abs() < 1e-12);
        assert!((tz_from_focal(560.0, 224.0, 2.0) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn crop_translation() {
        let w = WeakPerspective::new(0.8, 0.1, 0.0).unwrap();
        let b = CropBox::new(300.0, 256.0, 256.0, 256.0, 512.0, 512.0).unwrap();
        let (tx, ty) = crop_to_full_translation(&w, &b);
        assert!((tx - 0.5296875).abs() < 1e-15);
        assert_eq!(ty, 0.0);

        let full = CropBox::full_image(512.0, 384.0);
        assert!(full.is_err(), "non-square full image is not a valid crop");
        let full = CropBox::full_image(512.0, 512.0).unwrap();
        let w = WeakPerspective::new(1.3, -0.2, 0.4).unwrap();
        assert_eq!(crop_to_full_translation(&w, &full), (-0.2, 0.4));
    }

    #[test]
    fn crop_translation_is_antisymmetric_in_offset() {
        let w = WeakPerspective::new(0.7, 0.0, 0.0).unwrap();
        let d = 17.0;
        let right = CropBox::new(256.0 + d, 256.0, 128.0, 128.0, 512.0, 512.0).unwrap();
        let left = CropBox::new(256.0 - d, 256.0, 128.0, 128.0, 512.0, 512.0).unwrap();
        let (a, _) = crop_to_full_translation(&w, &right);
        let (b, _) = crop_to_full_translation(&w, &left);
        assert!((a - 2.0 * d / (128.0 * 0.7)).abs() < 1e-15);
        assert_eq!(a, -b);
    }

    #[test]
    fn crop_roundtrip() {
        let b = CropBox::new(300.0, 200.0, 180.0, 180.0, 640.0, 480.0).unwrap();
        let p = Vector2::new(250.5, 123.25);
        let q = b.crop_to_full(&b.full_to_crop(&p, 224.0), 224.0);
        assert!((p - q).norm() < 1e-12);
    }

    #[test]
    fn ndc_unit_points() {
        let kk = k(1000.0);
        let n = ndc_screen_convert(
            &[Vector2::new(112.0, 112.0), Vector2::new(224.0, 112.0)],
            &kk,
            NdcDirection::ScreenToNdc,
        );
        assert_eq!(n[0], Vector2::new(0.0, 0.0));
        assert_eq!(n[1], Vector2::new(1.0, 0.0));
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 2, 2).is_err());
        assert!(CameraIntrinsics::new(1.0, 3.0, 1.0, 2, 2).is_err());
        assert!(WeakPerspective::new(-1.0, 0.0, 0.0).is_err());
        assert!(Translation::new(0.0, 0.0, 10.5).validate_fit_range().is_err());
        assert!(Translation::new(0.0, 0.0, 10.0).validate_fit_range().is_ok());
        assert!(CropBox::new(1.0, 1.0, 2.0, 3.0, 4.0, 4.0).is_err());
    }

    #[test]
    fn json_schema_field_names() {
        let t: Translation = serde_json::from_str(r#"{"Tx":0.1,"Ty":-0.2,"Tz":3.0}"#).unwrap();
        assert_eq!(t, Translation::new(0.1, -0.2, 3.0));
        let k: CameraIntrinsics =
            serde_json::from_str(r#"{"f":500,"cx":112,"cy":112,"width":224,"height":224}"#).unwrap();
        assert_eq!(k.f, 500.0);
        let w: WeakPerspective = serde_json::from_str(r#"{"s":1.0,"tx":0.0,"ty":0.5}"#).unwrap();
        assert_eq!(w.ty, 0.5);
    }

    #[test]
    fn weak_least_squares_inverts_weak_projection() {
        let kk = k(1000.0);
        let pts = [
            Vector3::new(0.1, -0.3, 0.2),
            Vector3::new(-0.2, 0.4, 0.0),
            Vector3::new(0.3, 0.1, -0.1),
        ];
        let w = WeakPerspective::new(0.7, 0.05, -0.1).unwrap();
        let fitted = weak_from_correspondences(&pts, &weak_project(&pts, &w, &kk), &kk).unwrap();
        assert!((fitted.s - w.s).abs() < 1e-12);
        assert!((fitted.tx - w.tx).abs() < 1e-12 && (fitted.ty - w.ty).abs() < 1e-12);
        let flat = [Vector3::new(0.1, 0.1, 0.0); 3];
        assert!(weak_from_correspondences(&flat, &weak_project(&flat, &w, &kk), &kk).is_none());
    }
}

//! Pinhole camera model, depth back-projection and camera-to-world transforms.
//!
//! Camera frame axes follow the usual pinhole convention: +Z forward, +X right,
//! +Y down. Pixel `(u, v)` samples the continuous image coordinate `(u, v)`
//! exactly (no half-pixel offset), so the renderer in [`crate::synth`] and
//! [`backproject_pixel`] agree bit-for-bit on ray directions.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::saliency::SaliencyMap;

/// Default maximum depth accepted during fusion, in meters.
pub const DEFAULT_MAX_DEPTH: f64 = 10.0;

const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GeometryError {
    #[error("invalid depth {0}: must be finite and > 0")]
    InvalidDepth(f64),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid rigid transform: {0}")]
    InvalidTransform(String),
    #[error("pixel ({u}, {v}) outside {width}x{height} image")]
    PixelOutOfBounds {
        u: f64,
        v: f64,
        width: usize,
        height: usize,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("color value out of [0,1] range")]
    ColorRange,
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        let intr = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fx.is_finite() && self.fy > 0.0 && self.fy.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "cx={} not in [0, {})",
                self.cx, self.width
            )));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "cy={} not in [0, {})",
                self.cy, self.height
            )));
        }
        Ok(())
    }

    /// Intrinsics for a square image with the principal point at the center
    /// and a given horizontal field of view.
    pub fn from_fov(width: usize, height: usize, fov_x_deg: f64) -> Result<Self, GeometryError> {
        let fx = (width as f64 - 1.0) / 2.0 / (fov_x_deg.to_radians() / 2.0).tan();
        Self::new(
            fx,
            fx,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
        )
    }

    /// Forward projection of a camera-frame point to `(u, v, depth)`.
    pub fn project(&self, p: [f64; 3]) -> Option<[f64; 3]> {
        let z = p[2];
        if !(z > 0.0) {
            return None;
        }
        Some([self.fx * p[0] / z + self.cx, self.fy * p[1] / z + self.cy, z])
    }

    /// Camera-frame ray direction through pixel `(u, v)` with unit Z component.
    #[inline]
    pub fn ray(&self, u: f64, v: f64) -> [f64; 3] {
        [(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0]
    }
}

/// Lifts pixel `(u, v)` at metric depth into the camera frame.
pub fn backproject_pixel(
    u: f64,
    v: f64,
    depth: f64,
    intr: &CameraIntrinsics,
) -> Result<[f64; 3], GeometryError> {
    if !(depth.is_finite() && depth > 0.0) {
        return Err(GeometryError::InvalidDepth(depth));
    }
    if !(u >= 0.0 && u <= (intr.width - 1) as f64 && v >= 0.0 && v <= (intr.height - 1) as f64) {
        return Err(GeometryError::PixelOutOfBounds {
            u,
            v,
            width: intr.width,
            height: intr.height,
        });
    }
    Ok(backproject_unchecked(u, v, depth, intr))
}

#[inline]
fn backproject_unchecked(u: f64, v: f64, depth: f64, intr: &CameraIntrinsics) -> [f64; 3] {
    [(u - intr.cx) / intr.fx * depth, (v - intr.cy) / intr.fy * depth, depth]
}

/// Proper rigid transform `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RigidTransformRepr", into = "RigidTransformRepr")]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct RigidTransformRepr {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl TryFrom<RigidTransformRepr> for RigidTransform {
    type Error = GeometryError;
    fn try_from(r: RigidTransformRepr) -> Result<Self, Self::Error> {
        RigidTransform::from_rows(r.rotation, r.translation)
    }
}

impl From<RigidTransform> for RigidTransformRepr {
    fn from(t: RigidTransform) -> Self {
        RigidTransformRepr {
            rotation: t.rotation_rows(),
            translation: t.translation(),
        }
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        check_rotation(&rotation)?;
        if !translation.iter().all(|x| x.is_finite()) {
            return Err(GeometryError::InvalidTransform(
                "non-finite translation".into(),
            ));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_rows(rows: [[f64; 3]; 3], translation: [f64; 3]) -> Result<Self, GeometryError> {
        let m = Matrix3::from_fn(|r, c| rows[r][c]);
        Self::new(m, Vector3::from(translation))
    }

    pub fn from_translation(t: [f64; 3]) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::from(t),
        }
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>, t: [f64; 3]) -> Self {
        Self {
            rotation: q.to_rotation_matrix().into_inner(),
            translation: Vector3::from(t),
        }
    }

    /// Camera pose looking from `eye` toward `target`, in the +Z forward,
    /// +Y down camera convention. `up` is the world up direction.
    pub fn look_at(eye: [f64; 3], target: [f64; 3], up: [f64; 3]) -> Result<Self, GeometryError> {
        let eye = Vector3::from(eye);
        let z = (Vector3::from(target) - eye).try_normalize(1e-12).ok_or_else(|| {
            GeometryError::InvalidTransform("eye and target coincide".into())
        })?;
        let x = z
            .cross(&Vector3::from(up))
            .try_normalize(1e-12)
            .ok_or_else(|| GeometryError::InvalidTransform("up parallel to view axis".into()))?;
        let y = z.cross(&x);
        let rotation = Matrix3::from_columns(&[x, y, z]);
        Self::new(rotation, eye)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn rotation_rows(&self) -> [[f64; 3]; 3] {
        let m = &self.rotation;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }

    pub fn translation(&self) -> [f64; 3] {
        [self.translation.x, self.translation.y, self.translation.z]
    }

    pub fn unit_quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation))
    }

    pub fn is_identity(&self) -> bool {
        self.rotation == Matrix3::identity() && self.translation == Vector3::zeros()
    }

    #[inline]
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let m = &self.rotation;
        let t = &self.translation;
        [
            m[(0, 0)] * p[0] + m[(0, 1)] * p[1] + m[(0, 2)] * p[2] + t.x,
            m[(1, 0)] * p[0] + m[(1, 1)] * p[1] + m[(1, 2)] * p[2] + t.y,
            m[(2, 0)] * p[0] + m[(2, 1)] * p[1] + m[(2, 2)] * p[2] + t.z,
        ]
    }

    #[inline]
    pub fn apply_vector(&self, d: [f64; 3]) -> [f64; 3] {
        let m = &self.rotation;
        [
            m[(0, 0)] * d[0] + m[(0, 1)] * d[1] + m[(0, 2)] * d[2],
            m[(1, 0)] * d[0] + m[(1, 1)] * d[1] + m[(1, 2)] * d[2],
            m[(2, 0)] * d[0] + m[(2, 1)] * d[1] + m[(2, 2)] * d[2],
        ]
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }
}

fn check_rotation(m: &Matrix3<f64>) -> Result<(), GeometryError> {
    if !m.iter().all(|x| x.is_finite()) {
        return Err(GeometryError::InvalidTransform("non-finite rotation".into()));
    }
    let err = (m.transpose() * m - Matrix3::identity()).abs().max();
    if err > ORTHONORMAL_TOL {
        return Err(GeometryError::InvalidTransform(format!(
            "rotation not orthonormal (max |RᵀR − I| = {err:e})"
        )));
    }
    let det = m.determinant();
    if (det - 1.0).abs() > ORTHONORMAL_TOL {
        return Err(GeometryError::InvalidTransform(format!(
            "rotation determinant {det} != +1"
        )));
    }
    Ok(())
}

/// Applies `pose` to every point.
pub fn transform_points(points: &[[f64; 3]], pose: &RigidTransform) -> Result<Vec<[f64; 3]>, GeometryError> {
    check_rotation(&pose.rotation)?;
    Ok(points.iter().map(|p| pose.apply(*p)).collect())
}

/// Depth map in meters. Pixels with a cleared mask bit are holes.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    width: usize,
    height: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthImage {
    /// Builds a depth image; any value that is not finite and positive is
    /// marked invalid.
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self, GeometryError> {
        if values.len() != width * height {
            return Err(GeometryError::Shape(format!(
                "depth buffer has {} values, expected {}x{}",
                values.len(),
                width,
                height
            )));
        }
        let valid = values.iter().map(|d| d.is_finite() && *d > 0.0).collect();
        Ok(Self {
            width,
            height,
            values,
            valid,
        })
    }

    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Depth at `(u, v)` if the pixel is valid.
    pub fn get(&self, u: usize, v: usize) -> Option<f64> {
        let i = v * self.width + u;
        self.valid[i].then(|| self.values[i])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// 8-bit-derived RGB image stored as floats in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[f64; 3]>) -> Result<Self, GeometryError> {
        if pixels.len() != width * height {
            return Err(GeometryError::Shape(format!(
                "rgb buffer has {} pixels, expected {}x{}",
                pixels.len(),
                width,
                height
            )));
        }
        if !pixels.iter().flatten().all(|c| (0.0..=1.0).contains(c)) {
            return Err(GeometryError::ColorRange);
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, color: [f64; 3]) -> Self {
        Self {
            width,
            height,
            pixels: vec![color; width * height],
        }
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self, GeometryError> {
        if bytes.len() != width * height * 3 {
            return Err(GeometryError::Shape("rgb8 buffer length".into()));
        }
        let pixels = bytes
            .chunks_exact(3)
            .map(|c| [c[0] as f64 / 255.0, c[1] as f64 / 255.0, c[2] as f64 / 255.0])
            .collect();
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .flat_map(|p| p.map(|c| (c * 255.0).round().clamp(0.0, 255.0) as u8))
            .collect()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.pixels
    }
}

/// Points in world frame with per-point color and `k` saliency channels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeaturedPointCloud {
    positions: Vec<[f64; 3]>,
    colors: Vec<[f64; 3]>,
    saliency: Vec<f64>,
    k: usize,
}

impl FeaturedPointCloud {
    pub fn empty(k: usize) -> Self {
        Self {
            k,
            ..Default::default()
        }
    }

    /// `saliency` is point-major: `saliency[i * k + c]`.
    pub fn new(
        positions: Vec<[f64; 3]>,
        colors: Vec<[f64; 3]>,
        saliency: Vec<f64>,
        k: usize,
    ) -> Result<Self, GeometryError> {
        let n = positions.len();
        if colors.len() != n || saliency.len() != n * k {
            return Err(GeometryError::Shape(format!(
                "cloud arrays disagree: {} positions, {} colors, {} saliency values for k={}",
                n,
                colors.len(),
                saliency.len(),
                k
            )));
        }
        if !positions.iter().flatten().all(|x| x.is_finite()) {
            return Err(GeometryError::Shape("non-finite point position".into()));
        }
        if !colors.iter().flatten().chain(saliency.iter()).all(|c| (0.0..=1.0).contains(c)) {
            return Err(GeometryError::ColorRange);
        }
        Ok(Self {
            positions,
            colors,
            saliency,
            k,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn colors(&self) -> &[[f64; 3]] {
        &self.colors
    }

    pub fn saliency(&self) -> &[f64] {
        &self.saliency
    }

    pub fn point_saliency(&self, i: usize) -> &[f64] {
        &self.saliency[i * self.k..(i + 1) * self.k]
    }

    /// Returns the cloud with points reordered by `perm` (`out[i] = self[perm[i]]`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let k = self.k;
        Self {
            positions: perm.iter().map(|&i| self.positions[i]).collect(),
            colors: perm.iter().map(|&i| self.colors[i]).collect(),
            saliency: perm
                .iter()
                .flat_map(|&i| self.saliency[i * k..(i + 1) * k].iter().copied())
                .collect(),
            k,
        }
    }

    /// Same cloud with every position mapped through `pose`.
    pub fn transformed(&self, pose: &RigidTransform) -> Self {
        Self {
            positions: self.positions.iter().map(|p| pose.apply(*p)).collect(),
            colors: self.colors.clone(),
            saliency: self.saliency.clone(),
            k: self.k,
        }
    }
}

/// One calibrated camera observation.
#[derive(Debug, Clone, Copy)]
pub struct View<'a> {
    pub rgb: &'a RgbImage,
    pub depth: &'a DepthImage,
    pub saliency: &'a SaliencyMap,
    pub intrinsics: &'a CameraIntrinsics,
    pub pose: &'a RigidTransform,
}

/// Back-projects every valid pixel of every view into one world-frame cloud.
///
/// Output order is deterministic: views in input order, pixels row-major.
/// Depth holes and depths beyond `max_depth` are skipped.
pub fn fuse_views(views: &[View<'_>], max_depth: f64) -> Result<FeaturedPointCloud, GeometryError> {
    let Some(first) = views.first() else {
        return Ok(FeaturedPointCloud::empty(0));
    };
    let k = first.saliency.channels();
    for (i, view) in views.iter().enumerate() {
        let (w, h) = (view.depth.width(), view.depth.height());
        if view.rgb.width() != w || view.rgb.height() != h {
            return Err(GeometryError::Shape(format!(
                "view {i}: rgb {}x{} vs depth {w}x{h}",
                view.rgb.width(),
                view.rgb.height()
            )));
        }
        if view.saliency.width() != w || view.saliency.height() != h {
            return Err(GeometryError::Shape(format!(
                "view {i}: saliency {}x{} vs depth {w}x{h}",
                view.saliency.width(),
                view.saliency.height()
            )));
        }
        if view.intrinsics.width != w || view.intrinsics.height != h {
            return Err(GeometryError::Shape(format!(
                "view {i}: intrinsics {}x{} vs depth {w}x{h}",
                view.intrinsics.width, view.intrinsics.height
            )));
        }
        if view.saliency.channels() != k {
            return Err(GeometryError::Shape(format!(
                "view {i}: {} saliency channels, expected {k}",
                view.saliency.channels()
            )));
        }
        view.intrinsics.validate()?;
        check_rotation(view.pose.rotation())?;
    }

    // each view fills its own contiguous range of the output
    let counts: Vec<usize> = views.par_iter().map(|v| fused_count(v, max_depth)).collect();
    let total: usize = counts.iter().sum();
    let mut positions = vec![[0.0; 3]; total];
    let mut colors = vec![[0.0; 3]; total];
    let mut saliency = vec![0.0; total * k];
    let mut jobs = Vec::with_capacity(views.len());
    let (mut p_rest, mut c_rest, mut s_rest) = (&mut positions[..], &mut colors[..], &mut saliency[..]);
    for (view, &n) in views.iter().zip(&counts) {
        let (p, pr) = p_rest.split_at_mut(n);
        let (c, cr) = c_rest.split_at_mut(n);
        let (s, sr) = s_rest.split_at_mut(n * k);
        (p_rest, c_rest, s_rest) = (pr, cr, sr);
        jobs.push((view, p, c, s));
    }
    jobs.into_par_iter()
        .for_each(|(view, p, c, s)| fuse_one(view, k, max_depth, p, c, s));
    Ok(FeaturedPointCloud { positions, colors, saliency, k })
}

fn keep(d: f64, valid: bool, max_depth: f64) -> bool {
    valid && d <= max_depth
}

fn fused_count(view: &View<'_>, max_depth: f64) -> usize {
    view.depth
        .values
        .iter()
        .zip(&view.depth.valid)
        .filter(|(&d, &ok)| keep(d, ok, max_depth))
        .count()
}

fn fuse_one(
    view: &View<'_>,
    k: usize,
    max_depth: f64,
    positions: &mut [[f64; 3]],
    colors: &mut [[f64; 3]],
    saliency: &mut [f64],
) {
    let (w, h) = (view.depth.width(), view.depth.height());
    let intr = view.intrinsics;
    let rx: Vec<f64> = (0..w).map(|u| (u as f64 - intr.cx) / intr.fx).collect();
    let sal = view.saliency.data();
    let rgb = view.rgb.pixels();
    let mut j = 0;
    for v in 0..h {
        let ry = (v as f64 - intr.cy) / intr.fy;
        let row = v * w..(v + 1) * w;
        let depth = &view.depth.values[row.clone()];
        let valid = &view.depth.valid[row];
        for u in 0..w {
            let d = depth[u];
            if !keep(d, valid[u], max_depth) {
                continue;
            }
            let i = v * w + u;
            positions[j] = view.pose.apply([rx[u] * d, ry * d, d]);
            colors[j] = rgb[i];
            saliency[j * k..(j + 1) * k].copy_from_slice(&sal[i * k..(i + 1) * k]);
            j += 1;
        }
    }
    debug_assert_eq!(j, positions.len());
}

//! Analytic test scenes: ray-cast rendering of spheres and boxes, surface
//! distance queries, and a naive reference voxelizer.

use serde::{Deserialize, Serialize};

use crate::geometry::{CameraIntrinsics, DepthImage, FeaturedPointCloud, RgbImage, RigidTransform};
use crate::saliency::SaliencyMap;
use crate::voxelizer::{channel_count, GridDims, VoxelError, VoxelGrid, WorkspaceBounds};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SceneError {
    #[error("invalid primitive {index}: {reason}")]
    Primitive { index: usize, reason: String },
    #[error("scene has no primitives")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Shape {
    Sphere { center: [f64; 3], radius: f64 },
    Box { min: [f64; 3], max: [f64; 3] },
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

impl Shape {
    /// Smallest positive ray parameter where `origin + t * dir` meets the surface.
    pub fn intersect(&self, origin: [f64; 3], dir: [f64; 3]) -> Option<f64> {
        match *self {
            Shape::Sphere { center, radius } => {
                let oc = sub(origin, center);
                let a = dot(dir, dir);
                let half_b = dot(oc, dir);
                let c = dot(oc, oc) - radius * radius;
                let disc = half_b * half_b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let near = (-half_b - sq) / a;
                if near > 0.0 {
                    return Some(near);
                }
                let far = (-half_b + sq) / a;
                (far > 0.0).then_some(far)
            }
            Shape::Box { min, max } => {
                let mut t0 = f64::NEG_INFINITY;
                let mut t1 = f64::INFINITY;
                for a in 0..3 {
                    if dir[a] == 0.0 {
                        if origin[a] < min[a] || origin[a] > max[a] {
                            return None;
                        }
                        continue;
                    }
                    let inv = 1.0 / dir[a];
                    let (mut lo, mut hi) = ((min[a] - origin[a]) * inv, (max[a] - origin[a]) * inv);
                    if lo > hi {
                        std::mem::swap(&mut lo, &mut hi);
                    }
                    t0 = t0.max(lo);
                    t1 = t1.min(hi);
                }
                if t0 > t1 {
                    None
                } else if t0 > 0.0 {
                    Some(t0)
                } else if t1 > 0.0 {
                    Some(t1)
                } else {
                    None
                }
            }
        }
    }

    /// Unsigned distance from `p` to the surface.
    pub fn surface_distance(&self, p: [f64; 3]) -> f64 {
        match *self {
            Shape::Sphere { center, radius } => (dot(sub(p, center), sub(p, center)).sqrt() - radius).abs(),
            Shape::Box { min, max } => {
                let outside = (0..3)
                    .map(|a| (min[a] - p[a]).max(p[a] - max[a]).max(0.0).powi(2))
                    .sum::<f64>()
                    .sqrt();
                if outside > 0.0 {
                    outside
                } else {
                    (0..3)
                        .map(|a| (p[a] - min[a]).min(max[a] - p[a]))
                        .fold(f64::INFINITY, f64::min)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: Shape,
    pub color: [f64; 3],
    pub saliency: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub objects: Vec<SceneObject>,
}

impl SyntheticScene {
    pub fn new(objects: Vec<SceneObject>) -> Result<Self, SceneError> {
        let scene = Self { objects };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        for (index, o) in self.objects.iter().enumerate() {
            let bad = |reason: &str| SceneError::Primitive { index, reason: reason.into() };
            match o.shape {
                Shape::Sphere { radius, .. } if !(radius > 0.0) => return Err(bad("radius must be > 0")),
                Shape::Box { min, max } if (0..3).any(|a| !(max[a] > min[a])) => {
                    return Err(bad("box extent must be positive"))
                }
                _ => {}
            }
            if !o.color.iter().all(|c| (0.0..=1.0).contains(c)) || !(0.0..=1.0).contains(&o.saliency) {
                return Err(bad("color and saliency must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn sphere(center: [f64; 3], radius: f64, color: [f64; 3], saliency: f64) -> Self {
        Self {
            objects: vec![SceneObject {
                shape: Shape::Sphere { center, radius },
                color,
                saliency,
            }],
        }
    }

    /// Nearest hit along a ray: `(t, object index)`.
    pub fn cast(&self, origin: [f64; 3], dir: [f64; 3]) -> Option<(f64, usize)> {
        self.objects
            .iter()
            .enumerate()
            .filter_map(|(i, o)| o.shape.intersect(origin, dir).map(|t| (t, i)))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }

    /// Distance from `p` to the closest primitive surface.
    pub fn surface_distance(&self, p: [f64; 3]) -> f64 {
        self.objects
            .iter()
            .map(|o| o.shape.surface_distance(p))
            .fold(f64::INFINITY, f64::min)
    }
}

/// One rendered camera view.
#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub depth: DepthImage,
    pub rgb: RgbImage,
    /// Single channel holding each hit object's saliency value.
    pub saliency: SaliencyMap,
}

/// Ray casts every pixel; the ray through pixel `(u, v)` has camera-frame
/// direction `((u − cx)/fx, (v − cy)/fy, 1)`, so its parameter at the hit is
/// exactly the pixel's z-depth.
pub fn render_depth(scene: &SyntheticScene, intr: &CameraIntrinsics, pose: &RigidTransform) -> Rendered {
    let (w, h) = (intr.width, intr.height);
    let origin = pose.translation();
    let mut depth = vec![0.0; w * h];
    let mut rgb = vec![[0.0; 3]; w * h];
    let mut sal = vec![0.0; w * h];
    for v in 0..h {
        for u in 0..w {
            let dir = pose.apply_vector(intr.ray(u as f64, v as f64));
            if let Some((t, obj)) = scene.cast(origin, dir) {
                let i = v * w + u;
                let o = &scene.objects[obj];
                depth[i] = t;
                rgb[i] = o.color;
                sal[i] = o.saliency;
            }
        }
    }
    Rendered {
        depth: DepthImage::from_values(w, h, depth).expect("sized buffer"),
        rgb: RgbImage::new(w, h, rgb).expect("validated scene colors"),
        saliency: SaliencyMap::new(h, w, 1, sal).expect("validated scene saliency"),
    }
}

/// Reference voxelizer: one point at a time, in input order, no sorting.
/// Used to check [`crate::voxelizer::voxelize`].
pub fn brute_force_voxelize(
    cloud: &FeaturedPointCloud,
    bounds: &WorkspaceBounds,
    dims: &GridDims,
    k: usize,
) -> Result<VoxelGrid, VoxelError> {
    if cloud.k() != k {
        return Err(VoxelError::Shape(format!("cloud has {} saliency channels, expected {k}", cloud.k())));
    }
    let n = [dims.nx, dims.ny, dims.nz];
    let size: Vec<f64> = (0..3).map(|a| (bounds.max()[a] - bounds.min()[a]) / n[a] as f64).collect();
    let nvox = n[0] * n[1] * n[2];
    let summed = 6 + k;
    let mut sums = vec![0.0f64; nvox * summed];
    let mut counts = vec![0usize; nvox];

    for i in 0..cloud.len() {
        let p = cloud.positions()[i];
        let mut idx = [0usize; 3];
        let mut inside = true;
        for a in 0..3 {
            if p[a] < bounds.min()[a] || p[a] > bounds.max()[a] {
                inside = false;
                break;
            }
            let b = ((p[a] - bounds.min()[a]) / size[a]).floor() as usize;
            idx[a] = if b >= n[a] { n[a] - 1 } else { b };
        }
        if !inside {
            continue;
        }
        let vox = (idx[0] * n[1] + idx[1]) * n[2] + idx[2];
        counts[vox] += 1;
        let acc = &mut sums[vox * summed..(vox + 1) * summed];
        let c = cloud.colors()[i];
        for j in 0..3 {
            acc[j] += c[j];
        }
        for j in 0..k {
            acc[3 + j] += cloud.saliency()[i * k + j];
        }
        for j in 0..3 {
            acc[3 + k + j] += p[j];
        }
    }

    let channels = channel_count(k);
    let mut features = vec![0.0f32; nvox * channels];
    for x in 0..n[0] {
        for y in 0..n[1] {
            for z in 0..n[2] {
                let vox = (x * n[1] + y) * n[2] + z;
                if counts[vox] == 0 {
                    continue;
                }
                for j in 0..summed {
                    features[j * nvox + vox] = (sums[vox * summed + j] / counts[vox] as f64) as f32;
                }
                let loc = |i: usize, m: usize| if m == 1 { 0.5 } else { i as f64 / (m - 1) as f64 };
                features[(summed) * nvox + vox] = loc(x, n[0]) as f32;
                features[(summed + 1) * nvox + vox] = loc(y, n[1]) as f32;
                features[(summed + 2) * nvox + vox] = loc(z, n[2]) as f32;
                features[(summed + 3) * nvox + vox] = 1.0;
            }
        }
    }
    VoxelGrid::from_features(*dims, *bounds, k, features)
}

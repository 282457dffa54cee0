//! Dense voxel featurization of a [`FeaturedPointCloud`].
//!
//! Per-voxel channel layout, for `k` attention channels:
//!
//! | channels          | content                               |
//! |-------------------|---------------------------------------|
//! | `0..3`            | mean RGB                              |
//! | `3..3+k`          | mean saliency                         |
//! | `3+k..6+k`        | mean world position X, Y, Z           |
//! | `6+k..9+k`        | normalized grid location in `[0, 1]`  |
//! | `9+k`             | occupancy (0 or 1)                    |
//!
//! Accumulation is deterministic: points are bucketed by voxel with a stable
//! counting sort and each value is summed as a fixed-point integer (colors and
//! saliency at 2⁻⁶², positions as offsets from the lower workspace corner at
//! about 2⁻⁶² of the extent). Integer addition is associative, so neither the thread
//! count nor the input order of the cloud can change a single output bit.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::FeaturedPointCloud;
use crate::saliency::MAX_HEADS;

/// Channels that do not depend on the number of attention heads.
pub const BASE_CHANNELS: usize = 10;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum VoxelError {
    #[error("invalid workspace bounds: {0}")]
    Bounds(String),
    #[error("invalid grid dimensions: {0}")]
    Dims(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

/// Axis-aligned workspace box in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoundsRepr", into = "BoundsRepr")]
pub struct WorkspaceBounds {
    min: [f64; 3],
    max: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct BoundsRepr {
    min: [f64; 3],
    max: [f64; 3],
}

impl TryFrom<BoundsRepr> for WorkspaceBounds {
    type Error = VoxelError;
    fn try_from(r: BoundsRepr) -> Result<Self, Self::Error> {
        WorkspaceBounds::new(r.min, r.max)
    }
}

impl From<WorkspaceBounds> for BoundsRepr {
    fn from(b: WorkspaceBounds) -> Self {
        BoundsRepr { min: b.min, max: b.max }
    }
}

impl WorkspaceBounds {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self, VoxelError> {
        for a in 0..3 {
            if !(min[a].is_finite() && max[a].is_finite() && max[a] > min[a]) {
                return Err(VoxelError::Bounds(format!(
                    "axis {a}: min {} must be < max {}",
                    min[a], max[a]
                )));
            }
        }
        Ok(Self { min, max })
    }

    /// Cube of edge `size` centered at `center`.
    pub fn cube(center: [f64; 3], size: f64) -> Result<Self, VoxelError> {
        let h = size / 2.0;
        Self::new(center.map(|c| c - h), center.map(|c| c + h))
    }

    pub fn min(&self) -> [f64; 3] {
        self.min
    }

    pub fn max(&self) -> [f64; 3] {
        self.max
    }

    pub fn extent(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| self.max[a] - self.min[a])
    }

    pub fn center(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| 0.5 * (self.min[a] + self.max[a]))
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }
}

impl Default for WorkspaceBounds {
    /// 2 m cube centered at the origin.
    fn default() -> Self {
        Self {
            min: [-1.0; 3],
            max: [1.0; 3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[usize; 3]", into = "[usize; 3]")]
pub struct GridDims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl TryFrom<[usize; 3]> for GridDims {
    type Error = VoxelError;
    fn try_from(d: [usize; 3]) -> Result<Self, Self::Error> {
        GridDims::new(d[0], d[1], d[2])
    }
}

impl From<GridDims> for [usize; 3] {
    fn from(d: GridDims) -> Self {
        [d.nx, d.ny, d.nz]
    }
}

impl Default for GridDims {
    fn default() -> Self {
        Self { nx: 50, ny: 50, nz: 50 }
    }
}

impl GridDims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Result<Self, VoxelError> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(VoxelError::Dims(format!("{nx}x{ny}x{nz} has an empty axis")));
        }
        if nx.checked_mul(ny).and_then(|v| v.checked_mul(nz)).is_none_or(|v| v > u32::MAX as usize - 1) {
            return Err(VoxelError::Dims(format!("{nx}x{ny}x{nz} is too large")));
        }
        Ok(Self { nx, ny, nz })
    }

    pub fn cube(n: usize) -> Result<Self, VoxelError> {
        Self::new(n, n, n)
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    pub fn voxel_count(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    /// Row-major linear index: x-major, then y, then z.
    #[inline]
    pub fn linear(&self, idx: [usize; 3]) -> usize {
        (idx[0] * self.ny + idx[1]) * self.nz + idx[2]
    }

    #[inline]
    pub fn unlinear(&self, lin: usize) -> [usize; 3] {
        let z = lin % self.nz;
        let y = (lin / self.nz) % self.ny;
        let x = lin / (self.nz * self.ny);
        [x, y, z]
    }
}

/// Voxel containing `p`, or `None` when `p` lies outside `bounds`.
///
/// Bins are half-open `[lo, hi)` except the last bin on each axis, which is
/// closed so that `max_corner` itself maps to `n - 1`.
#[inline]
pub fn point_to_index(p: [f64; 3], bounds: &WorkspaceBounds, dims: &GridDims) -> Option<[usize; 3]> {
    let n = dims.as_array();
    let mut out = [0usize; 3];
    for a in 0..3 {
        let (lo, hi) = (bounds.min[a], bounds.max[a]);
        // also rejects NaN
        if !(p[a] >= lo && p[a] <= hi) {
            return None;
        }
        let f = (p[a] - lo) * n[a] as f64 / (hi - lo);
        // f >= 0, so truncation is floor
        out[a] = (f as usize).min(n[a] - 1);
    }
    Some(out)
}

/// Per-voxel normalized grid coordinate: `i / (n - 1)`, or 0.5 when `n == 1`.
#[inline]
pub fn normalized_location(i: usize, n: usize) -> f64 {
    if n == 1 {
        0.5
    } else {
        i as f64 / (n - 1) as f64
    }
}

pub fn channel_count(k: usize) -> usize {
    BASE_CHANNELS + k
}

/// Named channel ranges for a grid with `k` attention channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelLayout {
    pub k: usize,
}

impl ChannelLayout {
    pub fn rgb(&self) -> Range<usize> {
        0..3
    }
    pub fn saliency(&self) -> Range<usize> {
        3..3 + self.k
    }
    pub fn position(&self) -> Range<usize> {
        3 + self.k..6 + self.k
    }
    pub fn grid_location(&self) -> Range<usize> {
        6 + self.k..9 + self.k
    }
    pub fn occupancy(&self) -> usize {
        9 + self.k
    }
    pub fn total(&self) -> usize {
        channel_count(self.k)
    }
}

/// Dense featured grid. Features are stored channel-major, each channel a
/// row-major `nx × ny × nz` block, which is also the on-disk payload order.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    dims: GridDims,
    bounds: WorkspaceBounds,
    k: usize,
    features: Vec<f32>,
}

impl VoxelGrid {
    pub fn zeros(dims: GridDims, bounds: WorkspaceBounds, k: usize) -> Self {
        Self {
            dims,
            bounds,
            k,
            features: vec![0.0; dims.voxel_count() * channel_count(k)],
        }
    }

    /// Wraps a channel-major feature buffer.
    pub fn from_features(
        dims: GridDims,
        bounds: WorkspaceBounds,
        k: usize,
        features: Vec<f32>,
    ) -> Result<Self, VoxelError> {
        if k > MAX_HEADS {
            return Err(VoxelError::Parameter(format!("k = {k} exceeds {MAX_HEADS}")));
        }
        let want = dims.voxel_count() * channel_count(k);
        if features.len() != want {
            return Err(VoxelError::Shape(format!(
                "{} feature values, expected {want}",
                features.len()
            )));
        }
        Ok(Self { dims, bounds, k, features })
    }

    /// Rebuilds a grid from consecutive channel slices, e.g. the pieces
    /// returned by [`VoxelGrid::feature_slice`].
    pub fn from_slices(
        dims: GridDims,
        bounds: WorkspaceBounds,
        k: usize,
        slices: &[Vec<f32>],
    ) -> Result<Self, VoxelError> {
        Self::from_features(dims, bounds, k, slices.concat())
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn bounds(&self) -> WorkspaceBounds {
        self.bounds
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn channels(&self) -> usize {
        channel_count(self.k)
    }

    pub fn layout(&self) -> ChannelLayout {
        ChannelLayout { k: self.k }
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.dims.voxel_count();
        &self.features[c * n..(c + 1) * n]
    }

    /// All channels of one voxel.
    pub fn voxel(&self, idx: [usize; 3]) -> Vec<f32> {
        let n = self.dims.voxel_count();
        let lin = self.dims.linear(idx);
        (0..self.channels()).map(|c| self.features[c * n + lin]).collect()
    }

    pub fn is_occupied(&self, idx: [usize; 3]) -> bool {
        self.channel(self.layout().occupancy())[self.dims.linear(idx)] > 0.5
    }

    pub fn occupied_count(&self) -> usize {
        self.channel(self.layout().occupancy()).iter().filter(|&&o| o > 0.5).count()
    }

    /// Contiguous copy of the channels in `range`.
    pub fn feature_slice(&self, range: Range<usize>) -> Result<Vec<f32>, VoxelError> {
        if range.start > range.end || range.end > self.channels() {
            return Err(VoxelError::Parameter(format!(
                "channel range {range:?} outside 0..{}",
                self.channels()
            )));
        }
        let n = self.dims.voxel_count();
        Ok(self.features[range.start * n..range.end * n].to_vec())
    }

    /// World-space extent `[lo, hi]` of a voxel.
    pub fn voxel_extent(&self, idx: [usize; 3]) -> ([f64; 3], [f64; 3]) {
        let n = self.dims.as_array();
        let (min, ext) = (self.bounds.min, self.bounds.extent());
        let lo = [0, 1, 2].map(|a| min[a] + ext[a] * idx[a] as f64 / n[a] as f64);
        let hi = [0, 1, 2].map(|a| min[a] + ext[a] * (idx[a] + 1) as f64 / n[a] as f64);
        (lo, hi)
    }
}

/// Per-voxel sums and counts behind the means in a [`VoxelGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelAccumulators {
    /// Summed channels per occupied voxel: RGB, saliency, position.
    pub summed_channels: usize,
    /// Occupied linear voxel indices, ascending.
    pub occupied: Vec<u32>,
    /// `occupied.len() × summed_channels` sums.
    pub sums: Vec<f64>,
    /// Point count per occupied voxel.
    pub counts: Vec<u32>,
}

impl VoxelAccumulators {
    fn slot(&self, lin: usize) -> Option<usize> {
        self.occupied.binary_search(&(lin as u32)).ok()
    }

    pub fn count(&self, lin: usize) -> u32 {
        self.slot(lin).map_or(0, |s| self.counts[s])
    }

    pub fn sums(&self, lin: usize) -> Option<&[f64]> {
        let m = self.summed_channels;
        self.slot(lin).map(|s| &self.sums[s * m..(s + 1) * m])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct VoxelStats {
    pub points_in: usize,
    pub points_used: usize,
    pub points_dropped: usize,
    pub occupied_voxels: usize,
}

#[derive(Debug, Clone)]
pub struct Voxelization {
    pub grid: VoxelGrid,
    pub accumulators: VoxelAccumulators,
    pub stats: VoxelStats,
}

const OUTSIDE: u32 = u32::MAX;

/// Fixed-point scale for values in `[0, 1]`.
const UNIT_SCALE: f64 = (1u64 << 62) as f64;

/// Power-of-two scale mapping offsets in `[0, extent]` into `[0, 2⁶²]`.
fn offset_scale(extent: f64) -> f64 {
    let mut scale = UNIT_SCALE;
    while extent * scale > UNIT_SCALE {
        scale *= 0.5;
    }
    while extent * scale * 2.0 <= UNIT_SCALE && scale < 1e300 {
        scale *= 2.0;
    }
    scale
}

/// Averages the cloud into a dense grid. See the module docs for the channel
/// layout and the determinism contract. Runs on the current rayon pool.
pub fn voxelize(
    cloud: &FeaturedPointCloud,
    bounds: &WorkspaceBounds,
    dims: &GridDims,
    k: usize,
) -> Result<Voxelization, VoxelError> {
    if cloud.k() != k {
        return Err(VoxelError::Shape(format!(
            "cloud carries {} saliency channels, expected {k}",
            cloud.k()
        )));
    }
    if k > MAX_HEADS {
        return Err(VoxelError::Parameter(format!("k = {k} exceeds {MAX_HEADS}")));
    }
    let nvox = dims.voxel_count();
    let layout = ChannelLayout { k };
    let channels = layout.total();
    let summed = 6 + k;

    // 1. voxel id per point
    let ids: Vec<u32> = cloud
        .positions()
        .par_iter()
        .with_min_len(4096)
        .map(|&p| point_to_index(p, bounds, dims).map_or(OUTSIDE, |i| dims.linear(i) as u32))
        .collect();

    // 2. stable counting sort by voxel id
    let mut offsets = vec![0u32; nvox + 1];
    for &id in &ids {
        if id != OUTSIDE {
            offsets[id as usize + 1] += 1;
        }
    }
    let mut occupied = Vec::new();
    for v in 0..nvox {
        if offsets[v + 1] > 0 {
            occupied.push(v as u32);
        }
        offsets[v + 1] += offsets[v];
    }
    let used = offsets[nvox] as usize;
    let mut order = vec![0u32; used];
    {
        let mut cursor = offsets.clone();
        for (i, &id) in ids.iter().enumerate() {
            if id != OUTSIDE {
                let c = &mut cursor[id as usize];
                order[*c as usize] = i as u32;
                *c += 1;
            }
        }
    }

    // 3. per-voxel reduction over occupied voxels
    let lo = bounds.min();
    let pos_scale = bounds.extent().map(offset_scale);
    let mut sums = vec![0.0f64; occupied.len() * summed];
    let mut counts = vec![0u32; occupied.len()];
    sums.par_chunks_mut(summed.max(1))
        .zip(counts.par_iter_mut())
        .zip(occupied.par_iter())
        .with_min_len(256)
        .for_each(|((out, count), &vox)| {
            let (s, e) = (offsets[vox as usize] as usize, offsets[vox as usize + 1] as usize);
            let mut acc = [0i128; 6 + MAX_HEADS];
            for &pi in &order[s..e] {
                let pi = pi as usize;
                let c = cloud.colors()[pi];
                let p = cloud.positions()[pi];
                for a in 0..3 {
                    acc[a] += (c[a] * UNIT_SCALE) as i64 as i128;
                    acc[3 + k + a] += ((p[a] - lo[a]) * pos_scale[a]) as i64 as i128;
                }
                for (a, &v) in acc[3..3 + k].iter_mut().zip(cloud.point_saliency(pi)) {
                    *a += (v * UNIT_SCALE) as i64 as i128;
                }
            }
            for (c, (o, a)) in out.iter_mut().zip(&acc).enumerate() {
                *o = if c < 3 + k {
                    *a as f64 / UNIT_SCALE
                } else {
                    let a3 = c - 3 - k;
                    *a as f64 / pos_scale[a3] + lo[a3] * (e - s) as f64
                };
            }
            *count = (e - s) as u32;
        });

    // 4. means into the channel-major grid, one channel at a time
    let mut features = vec![0.0f32; nvox * channels];
    let n = dims.as_array();
    let (summed_part, rest) = features.split_at_mut(summed * nvox);
    for (c, chan) in summed_part.chunks_exact_mut(nvox).enumerate() {
        for (slot, &vox) in occupied.iter().enumerate() {
            chan[vox as usize] = (sums[slot * summed + c] / counts[slot] as f64) as f32;
        }
    }
    // grid location x, y, z, then occupancy
    let (loc, occ) = rest.split_at_mut(3 * nvox);
    for &vox in &occupied {
        let lin = vox as usize;
        let idx = dims.unlinear(lin);
        for a in 0..3 {
            loc[a * nvox + lin] = normalized_location(idx[a], n[a]) as f32;
        }
        occ[lin] = 1.0;
    }

    let stats = VoxelStats {
        points_in: cloud.len(),
        points_used: used,
        points_dropped: cloud.len() - used,
        occupied_voxels: occupied.len(),
    };
    Ok(Voxelization {
        grid: VoxelGrid {
            dims: *dims,
            bounds: *bounds,
            k,
            features,
        },
        accumulators: VoxelAccumulators {
            summed_channels: summed,
            occupied,
            sums,
            counts,
        },
        stats,
    })
}

/// Runs `f` on a dedicated rayon pool with `threads` workers.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .expect("failed to build thread pool")
        .install(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn default_grid() -> (WorkspaceBounds, GridDims) {
        (WorkspaceBounds::default(), GridDims::default())
    }

    #[test]
    fn index_corners() {
        let (b, d) = default_grid();
        assert_eq!(point_to_index(b.min(), &b, &d), Some([0, 0, 0]));
        assert_eq!(point_to_index(b.max(), &b, &d), Some([49, 49, 49]));
        let p = b.min().map(|x| x + 0.05);
        assert_eq!(point_to_index(p, &b, &d), Some([1, 1, 1]));
        assert_eq!(point_to_index([0.0; 3], &b, &d), Some([25, 25, 25]));
    }

    #[test]
    fn index_outside() {
        let (b, d) = default_grid();
        assert_eq!(point_to_index([1.0000001, 0.0, 0.0], &b, &d), None);
        assert_eq!(point_to_index([0.0, -1.5, 0.0], &b, &d), None);
        assert_eq!(point_to_index([0.0, 0.0, f64::NAN], &b, &d), None);
    }

    #[test]
    fn invalid_bounds_and_dims() {
        assert!(WorkspaceBounds::new([0.0; 3], [1.0, 0.0, 1.0]).is_err());
        assert!(GridDims::new(0, 1, 1).is_err());
    }

    #[test]
    fn empty_cloud_gives_zero_grid() {
        let (b, d) = default_grid();
        let v = voxelize(&FeaturedPointCloud::empty(1), &b, &d, 1).unwrap();
        assert!(v.grid.features().iter().all(|&x| x == 0.0));
        assert_eq!(v.grid.occupied_count(), 0);
        assert_eq!(v.grid.channels(), 11);
    }

    #[test]
    fn two_point_mean() {
        let (b, d) = default_grid();
        let cloud = FeaturedPointCloud::new(
            vec![[0.01, 0.01, 0.01], [0.02, 0.03, 0.015]],
            vec![[0.0; 3], [1.0; 3]],
            vec![0.2, 0.6],
            1,
        )
        .unwrap();
        let v = voxelize(&cloud, &b, &d, 1).unwrap();
        let vox = v.grid.voxel([25, 25, 25]);
        assert_eq!(&vox[0..3], &[0.5, 0.5, 0.5]);
        assert!((vox[3] - 0.4).abs() < 1e-7);
        assert!((vox[4] - 0.015).abs() < 1e-7 && (vox[5] - 0.02).abs() < 1e-7);
        assert_eq!(&vox[7..10], &[25.0 / 49.0; 3].map(|x| x as f32));
        assert_eq!(vox[10], 1.0);
        assert_eq!(v.stats.occupied_voxels, 1);
        assert_eq!(v.accumulators.count(d.linear([25, 25, 25])), 2);
    }

    #[test]
    fn out_of_bounds_points_are_dropped_and_counted() {
        let (b, d) = default_grid();
        let cloud = FeaturedPointCloud::new(
            vec![[0.0; 3], [2.0, 0.0, 0.0], [0.0, 0.0, -1.2]],
            vec![[0.5; 3]; 3],
            vec![],
            0,
        )
        .unwrap();
        let v = voxelize(&cloud, &b, &d, 0).unwrap();
        assert_eq!(v.stats.points_dropped, 2);
        assert_eq!(v.stats.points_used, 1);
        assert_eq!(v.grid.occupied_count(), 1);
    }

    #[test]
    fn saliency_channel_mismatch() {
        let (b, d) = default_grid();
        assert!(matches!(
            voxelize(&FeaturedPointCloud::empty(2), &b, &d, 1),
            Err(VoxelError::Shape(_))
        ));
    }

    #[test]
    fn single_axis_grid_location_is_half() {
        let b = WorkspaceBounds::default();
        let d = GridDims::new(1, 2, 3).unwrap();
        let cloud = FeaturedPointCloud::new(vec![[0.3, 0.9, -0.9]], vec![[0.1; 3]], vec![], 0).unwrap();
        let v = voxelize(&cloud, &b, &d, 0).unwrap();
        let vox = v.grid.voxel([0, 1, 0]);
        assert_eq!(&vox[6..10], &[0.5, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn slices() {
        let (b, _) = default_grid();
        let d = GridDims::cube(4).unwrap();
        let empty = VoxelGrid::zeros(d, b, 2);
        let occ = empty.feature_slice(11..12).unwrap();
        assert!(occ.iter().all(|&x| x == 0.0));
        assert_eq!(empty.feature_slice(0..3).unwrap().len(), 3 * 64);
        assert!(empty.feature_slice(10..13).is_err());
    }

    #[test]
    fn slice_restack_roundtrip() {
        let b = WorkspaceBounds::default();
        let d = GridDims::cube(5).unwrap();
        let pts: Vec<[f64; 3]> = (0..200)
            .map(|i| {
                let t = i as f64 * 0.37;
                [t.sin() * 0.9, (t * 1.3).cos() * 0.9, (t * 0.7).sin() * 0.9]
            })
            .collect();
        let cols = (0..200).map(|i| [(i % 7) as f64 / 7.0, 0.5, 1.0]).collect();
        let sal = (0..400).map(|i| (i % 11) as f64 / 10.0).collect();
        let cloud = FeaturedPointCloud::new(pts, cols, sal, 2).unwrap();
        let g = voxelize(&cloud, &b, &d, 2).unwrap().grid;
        let l = g.layout();
        let pieces = vec![
            g.feature_slice(l.rgb()).unwrap(),
            g.feature_slice(l.saliency()).unwrap(),
            g.feature_slice(l.position()).unwrap(),
            g.feature_slice(l.grid_location()).unwrap(),
            g.feature_slice(l.occupancy()..l.occupancy() + 1).unwrap(),
        ];
        let back = VoxelGrid::from_slices(d, b, 2, &pieces).unwrap();
        assert_eq!(
            back.features().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            g.features().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn channel_counts() {
        for k in 0..=6 {
            assert_eq!(channel_count(k), 10 + k);
        }
    }

    proptest! {
        #[test]
        fn in_bounds_points_land_in_their_voxel(x in -1.0f64..=1.0, y in -1.0f64..=1.0, z in -1.0f64..=1.0) {
            let (b, d) = default_grid();
            let idx = point_to_index([x, y, z], &b, &d).unwrap();
            let g = VoxelGrid::zeros(d, b, 0);
            let (lo, hi) = g.voxel_extent(idx);
            for (a, p) in [x, y, z].into_iter().enumerate() {
                prop_assert!(p >= lo[a] - 1e-12 && p <= hi[a] + 1e-12);
            }
        }
    }
}

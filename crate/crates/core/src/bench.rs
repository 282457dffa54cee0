//! Throughput measurements for the voxelizer and the per-frame chain.
//!
//! Reports are TSV with the columns
//! `scenario  points  threads  wall_ms  points_per_sec  checksum`,
//! where `wall_ms` is the best of the repeats and `checksum` is the CRC-32 of
//! the resulting tensor payload (identical across thread counts).

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::format::grid_checksum;
use crate::geometry::{fuse_views, CameraIntrinsics, FeaturedPointCloud, RigidTransform, View, DEFAULT_MAX_DEPTH};
use crate::saliency::{process_attention, SaliencyConfig, SaliencyMap};
use crate::synth::{render_depth, Rendered, SceneObject, Shape};
use crate::episode_gen::tabletop_scene;
use crate::voxelizer::{voxelize, with_threads, GridDims, VoxelError, VoxelGrid, WorkspaceBounds};

pub const TSV_HEADER: &str = "scenario\tpoints\tthreads\twall_ms\tpoints_per_sec\tchecksum";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub scenario: String,
    pub points: usize,
    pub threads: usize,
    pub wall_ms: f64,
    pub points_per_sec: f64,
    pub checksum: u32,
}

impl BenchReport {
    pub fn tsv_row(&self) -> String {
        format!(
            "{}\t{}\t{}\t{:.3}\t{:.0}\t{:08x}",
            self.scenario, self.points, self.threads, self.wall_ms, self.points_per_sec, self.checksum
        )
    }
}

pub fn to_tsv(reports: &[BenchReport]) -> String {
    let mut s = String::from(TSV_HEADER);
    s.push('\n');
    for r in reports {
        s.push_str(&r.tsv_row());
        s.push('\n');
    }
    s
}

/// Uniform random cloud inside `bounds` with `k` saliency channels.
pub fn random_cloud(n: usize, k: usize, bounds: &WorkspaceBounds, seed: u64) -> FeaturedPointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (bounds.min(), bounds.max());
    let mut positions = Vec::with_capacity(n);
    let mut colors = Vec::with_capacity(n);
    let mut saliency = Vec::with_capacity(n * k);
    for _ in 0..n {
        positions.push([0, 1, 2].map(|a| rng.random_range(lo[a]..hi[a])));
        colors.push([rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()]);
        saliency.extend((0..k).map(|_| rng.random::<f64>()));
    }
    FeaturedPointCloud::new(positions, colors, saliency, k).expect("generated in range")
}

fn best_of<T>(repeats: usize, mut f: impl FnMut() -> T) -> (f64, T) {
    let mut best = f64::INFINITY;
    let mut out = None;
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        let r = f();
        best = best.min(t.elapsed().as_secs_f64());
        out = Some(r);
    }
    (best, out.expect("at least one repeat"))
}

fn report(scenario: &str, points: usize, threads: usize, secs: f64, grid: &VoxelGrid) -> BenchReport {
    BenchReport {
        scenario: scenario.into(),
        points,
        threads,
        wall_ms: secs * 1e3,
        points_per_sec: points as f64 / secs.max(1e-12),
        checksum: grid_checksum(grid),
    }
}

/// Voxelizes `points` random points on a dedicated pool of `threads` threads.
pub fn bench_voxelize(
    points: usize,
    dims: GridDims,
    k: usize,
    threads: usize,
    repeats: usize,
    seed: u64,
) -> Result<BenchReport, VoxelError> {
    let bounds = WorkspaceBounds::default();
    let cloud = random_cloud(points, k, &bounds, seed);
    let (secs, grid) = with_threads(threads, || best_of(repeats, || voxelize(&cloud, &bounds, &dims, k)));
    Ok(report("voxelize", points, threads, secs, &grid?.grid))
}

/// Pre-rendered inputs for the per-frame scenario.
pub struct FrameInputs {
    views: Vec<(Rendered, SaliencyMap, CameraIntrinsics, RigidTransform)>,
    cfg: SaliencyConfig,
}

impl FrameInputs {
    /// Valid depth pixels across all views.
    pub fn points(&self) -> usize {
        self.views.iter().map(|v| v.0.depth.valid_count()).sum()
    }
}

/// Three 128×128 views from inside a closed room around the tabletop scene,
/// so every pixel has depth, with `k` heads of 74×74 attention each.
pub fn frame_inputs(k: usize, seed: u64) -> FrameInputs {
    let mut scene = tabletop_scene(seed);
    scene.objects.push(SceneObject {
        shape: Shape::Box { min: [-0.99; 3], max: [0.99; 3] },
        color: [0.8, 0.8, 0.75],
        saliency: 0.0,
    });
    let intr = CameraIntrinsics::from_fov(128, 128, 70.0).expect("valid fov");
    let eyes = [[0.0, -0.9, 0.6], [0.8, 0.3, 0.6], [-0.8, 0.3, 0.6]];
    let views = eyes
        .iter()
        .map(|&eye| {
            let pose = RigidTransform::look_at(eye, [0.0, 0.0, -0.3], [0.0, 0.0, 1.0]).expect("fixed view");
            let r = render_depth(&scene, &intr, &pose);
            let raw = attention_field(k);
            (r, raw, intr, pose)
        })
        .collect();
    FrameInputs { views, cfg: SaliencyConfig { k, ..SaliencyConfig::default() } }
}

fn attention_field(k: usize) -> SaliencyMap {
    let n = 74;
    let data = (0..n * n)
        .flat_map(|i| {
            let (y, x) = ((i / n) as f64 / (n - 1) as f64, (i % n) as f64 / (n - 1) as f64);
            let s = (-((x - 0.5).powi(2) + (y - 0.6).powi(2)) * 8.0).exp();
            (0..k).map(move |c| s.powi(c as i32 + 1))
        })
        .collect();
    SaliencyMap::new(n, n, k, data).expect("values in [0, 1]")
}

/// Attention processing, fusion and voxelization of one frame.
pub fn run_frame(inputs: &FrameInputs, bounds: &WorkspaceBounds, dims: &GridDims) -> VoxelGrid {
    let sal: Vec<SaliencyMap> = inputs
        .views
        .iter()
        .map(|(_, raw, intr, _)| process_attention(raw, intr.height, intr.width, &inputs.cfg).expect("valid config"))
        .collect();
    let views: Vec<View<'_>> = inputs
        .views
        .iter()
        .zip(&sal)
        .map(|((r, _, intr, pose), s)| View { rgb: &r.rgb, depth: &r.depth, saliency: s, intrinsics: intr, pose })
        .collect();
    let cloud = fuse_views(&views, DEFAULT_MAX_DEPTH).expect("consistent views");
    voxelize(&cloud, bounds, dims, inputs.cfg.k).expect("consistent cloud").grid
}

pub fn bench_frame(dims: GridDims, k: usize, threads: usize, repeats: usize, seed: u64) -> BenchReport {
    let inputs = frame_inputs(k, seed);
    let bounds = WorkspaceBounds::default();
    let points = inputs.points();
    let (secs, grid) = with_threads(threads, || best_of(repeats, || run_frame(&inputs, &bounds, &dims)));
    report("frame", points, threads, secs, &grid)
}

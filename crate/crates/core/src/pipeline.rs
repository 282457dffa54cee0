//! Episode featurization: manifest → keyframe pairs → voxel tensors and
//! discretized targets.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::format::{self, FormatError};
use crate::geometry::{self, FeaturedPointCloud, GeometryError, RigidTransform, View, DEFAULT_MAX_DEPTH};
use crate::io::{self, IoError};
use crate::manifest::{LoadedEpisode, ManifestError};
use crate::saliency::{process_attention, SaliencyError, SaliencyMap};
use crate::targets::{self, ActionTarget, ArmKeypose, ArmRole, PerturbLimits, TargetConfig, TargetError};
use crate::trajectory::{extract_keyframes, keyframe_pairs, KeyframeConfig, TrajectoryError};
use crate::voxelizer::{voxelize, VoxelError, VoxelGrid, VoxelStats};

/// Process exit codes, one per error class.
pub mod exit {
    pub const OK: i32 = 0;
    pub const OTHER: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const IO: i32 = 3;
    pub const VERSION: i32 = 4;
    pub const SHAPE: i32 = 5;
    pub const INTEGRITY: i32 = 6;
    pub const PARAMETER: i32 = 7;
    pub const AUGMENTATION: i32 = 8;
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error("frame {frame}, camera {camera}: {source}")]
    Saliency { frame: usize, camera: String, source: SaliencyError },
    #[error("frame {frame}: {source}")]
    Geometry { frame: usize, source: GeometryError },
    #[error("frame {frame}: {source}")]
    Voxel { frame: usize, source: VoxelError },
    #[error("target frame {frame}: {source}")]
    Target { frame: usize, source: TargetError },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        use PipelineError as P;
        match self {
            P::Manifest(m) => match m {
                ManifestError::MissingFile { .. } | ManifestError::Io { .. } => exit::IO,
                ManifestError::Version { .. } => exit::VERSION,
                ManifestError::DimensionMismatch { .. } => exit::SHAPE,
                ManifestError::Parse(_) | ManifestError::Invalid { .. } => exit::PARAMETER,
            },
            P::Config(_) => exit::PARAMETER,
            P::Io(_) => exit::IO,
            P::Format(f) => format_exit_code(f),
            P::Trajectory(TrajectoryError::Parameter(_)) => exit::PARAMETER,
            P::Trajectory(_) => exit::SHAPE,
            P::Saliency { source, .. } => match source {
                SaliencyError::Parameter(_) => exit::PARAMETER,
                _ => exit::SHAPE,
            },
            P::Geometry { source, .. } => match source {
                GeometryError::Shape(_) => exit::SHAPE,
                _ => exit::PARAMETER,
            },
            P::Voxel { source, .. } => match source {
                VoxelError::Shape(_) => exit::SHAPE,
                _ => exit::PARAMETER,
            },
            P::Target { source, .. } => match source {
                TargetError::Augmentation(_) => exit::AUGMENTATION,
                TargetError::Shape(_) => exit::SHAPE,
                _ => exit::PARAMETER,
            },
        }
    }
}

pub fn format_exit_code(e: &FormatError) -> i32 {
    match e {
        FormatError::Version(_) => exit::VERSION,
        FormatError::Io(_) => exit::IO,
        FormatError::BadMagic(_) | FormatError::Truncated(_) | FormatError::Integrity { .. } | FormatError::Header(_) => {
            exit::INTEGRITY
        }
    }
}

/// Run settings not carried by the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub keyframes: KeyframeConfig,
    /// Depths beyond this many meters are dropped during fusion.
    pub max_depth: f64,
    pub rotation_resolution_deg: f64,
    /// Apply a random SE(3) perturbation to every pair.
    pub augment: bool,
    pub augmentation: PerturbLimits,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            keyframes: KeyframeConfig::default(),
            max_depth: DEFAULT_MAX_DEPTH,
            rotation_resolution_deg: 5.0,
            augment: false,
            augmentation: PerturbLimits::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| {
            PipelineError::Io(if e.kind() == std::io::ErrorKind::NotFound {
                IoError::Missing(path.to_path_buf())
            } else {
                IoError::Io { path: path.to_path_buf(), source: e }
            })
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.keyframes.validate()?;
        if !(self.max_depth > 0.0) {
            return Err(PipelineError::Config(format!("max_depth {} must be > 0", self.max_depth)));
        }
        targets::rotation_bins(self.rotation_resolution_deg).map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn target_config(&self, ep: &LoadedEpisode) -> TargetConfig {
        TargetConfig { bounds: ep.bounds, dims: ep.dims, rotation_resolution_deg: self.rotation_resolution_deg }
    }
}

/// Targets for one observation/keyframe pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetRecord {
    pub observation: usize,
    pub target: usize,
    pub acting: ActionTarget,
    pub stabilizing: ActionTarget,
    pub transform: RigidTransform,
}

#[derive(Debug, Clone)]
pub struct FeaturizedPair {
    pub record: TargetRecord,
    pub grid: VoxelGrid,
    pub stats: VoxelStats,
}

/// Per-pair augmentation seed derived from the run seed.
pub fn pair_seed(seed: u64, observation: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ (observation as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn keyposes(ep: &LoadedEpisode, frame: usize) -> [ArmKeypose; 2] {
    let f = &ep.episode.frames[frame];
    let acting = ep.episode.acting_arm;
    let stab = acting.other();
    [
        ArmKeypose::from_state(ArmRole::Acting, acting, f.arm(acting)),
        ArmKeypose::from_state(ArmRole::Stabilizing, stab, f.arm(stab)),
    ]
}

/// Keyframe indices and observation/target pairs for an episode.
pub fn episode_pairs(ep: &LoadedEpisode, cfg: &PipelineConfig) -> Result<(Vec<usize>, Vec<(usize, usize)>), PipelineError> {
    let keys = extract_keyframes(&ep.episode, &cfg.keyframes)?;
    let pairs = keyframe_pairs(ep.episode.len(), &keys);
    Ok((keys, pairs))
}

/// Discretized targets for every pair, without touching image data.
pub fn encode_episode_targets(ep: &LoadedEpisode, cfg: &PipelineConfig) -> Result<Vec<TargetRecord>, PipelineError> {
    cfg.validate()?;
    let tcfg = cfg.target_config(ep);
    let (_, pairs) = episode_pairs(ep, cfg)?;
    pairs
        .into_iter()
        .map(|(obs, tgt)| {
            let [a, s] = keyposes(ep, tgt);
            let err = |source| PipelineError::Target { frame: tgt, source };
            Ok(TargetRecord {
                observation: obs,
                target: tgt,
                acting: a.discretize(&tcfg).map_err(err)?,
                stabilizing: s.discretize(&tcfg).map_err(err)?,
                transform: RigidTransform::identity(),
            })
        })
        .collect()
}

/// Loads every camera of one frame and fuses it into a world-frame cloud.
pub fn frame_cloud(ep: &LoadedEpisode, frame: usize, cfg: &PipelineConfig) -> Result<FeaturedPointCloud, PipelineError> {
    let scfg = ep.manifest.saliency.config();
    let f = &ep.episode.frames[frame];
    let mut loaded = Vec::with_capacity(f.views.len());
    for (cam, view) in ep.episode.cameras.iter().zip(&f.views) {
        let rgb = io::read_rgb(&view.rgb)?;
        let depth = io::read_depth(&view.depth, ep.manifest.depth_scale)?;
        let (w, h) = (cam.intrinsics.width, cam.intrinsics.height);
        let sal = match (&view.saliency, scfg.k) {
            (_, 0) | (None, _) => SaliencyMap::none(h, w),
            (Some(p), _) => {
                let raw = io::read_saliency(p)?;
                process_attention(&raw, h, w, &scfg).map_err(|source| PipelineError::Saliency {
                    frame,
                    camera: cam.name.clone(),
                    source,
                })?
            }
        };
        loaded.push((rgb, depth, sal));
    }
    let views: Vec<View<'_>> = ep
        .episode
        .cameras
        .iter()
        .zip(&loaded)
        .map(|(cam, (rgb, depth, saliency))| View {
            rgb,
            depth,
            saliency,
            intrinsics: &cam.intrinsics,
            pose: &cam.poses[frame],
        })
        .collect();
    if views.is_empty() {
        return Ok(FeaturedPointCloud::empty(scfg.k));
    }
    geometry::fuse_views(&views, cfg.max_depth).map_err(|source| PipelineError::Geometry { frame, source })
}

/// Featurizes one observation/target pair.
pub fn featurize_pair(
    ep: &LoadedEpisode,
    cfg: &PipelineConfig,
    observation: usize,
    target: usize,
    seed: u64,
) -> Result<FeaturizedPair, PipelineError> {
    let tcfg = cfg.target_config(ep);
    let k = ep.manifest.saliency.k;
    let cloud = frame_cloud(ep, observation, cfg)?;
    let kps = keyposes(ep, target);
    let terr = |source| PipelineError::Target { frame: target, source };
    let (cloud, targets, transform) = if cfg.augment {
        let aug = targets::se3_perturb(&cloud, &kps, pair_seed(seed, observation), &cfg.augmentation, &tcfg).map_err(terr)?;
        (aug.cloud, aug.targets, aug.transform)
    } else {
        let t = kps.iter().map(|k| k.discretize(&tcfg)).collect::<Result<Vec<_>, _>>().map_err(terr)?;
        (cloud, t, RigidTransform::identity())
    };
    let vox = voxelize(&cloud, &ep.bounds, &ep.dims, k).map_err(|source| PipelineError::Voxel { frame: observation, source })?;
    Ok(FeaturizedPair {
        record: TargetRecord { observation, target, acting: targets[0], stabilizing: targets[1], transform },
        grid: vox.grid,
        stats: vox.stats,
    })
}

/// Featurizes every keyframe pair of an episode. Output is deterministic for
/// a given manifest, config and seed, whatever the thread count.
pub fn featurize_episode(ep: &LoadedEpisode, cfg: &PipelineConfig, seed: u64) -> Result<Vec<FeaturizedPair>, PipelineError> {
    cfg.validate()?;
    let (_, pairs) = episode_pairs(ep, cfg)?;
    pairs
        .par_iter()
        .map(|&(obs, tgt)| featurize_pair(ep, cfg, obs, tgt, seed))
        .collect()
}

pub fn pair_file_name(obs: usize, tgt: usize) -> String {
    format!("pair_{obs:05}_{tgt:05}.vxft")
}

/// Writes one tensor file per pair plus `targets.jsonl` (one record per line,
/// pair order). Returns the written tensor paths.
pub fn write_featurized(out_dir: &Path, pairs: &[FeaturizedPair]) -> Result<Vec<PathBuf>, PipelineError> {
    fs::create_dir_all(out_dir).map_err(|e| IoError::Io { path: out_dir.to_path_buf(), source: e })?;
    let mut paths = Vec::with_capacity(pairs.len());
    let mut lines = String::new();
    for p in pairs {
        let name = pair_file_name(p.record.observation, p.record.target);
        let path = out_dir.join(&name);
        format::write_grid(&path, &p.grid)?;
        let mut v = serde_json::to_value(&p.record).expect("record serializes");
        v["grid"] = serde_json::Value::String(name);
        v["points_dropped"] = p.stats.points_dropped.into();
        lines.push_str(&v.to_string());
        lines.push('\n');
        paths.push(path);
    }
    write_targets_jsonl(&out_dir.join("targets.jsonl"), lines)?;
    Ok(paths)
}

fn write_targets_jsonl(path: &Path, text: String) -> Result<(), PipelineError> {
    format::write_atomic(path, text.as_bytes()).map_err(|e| IoError::Io { path: path.to_path_buf(), source: e })?;
    Ok(())
}

pub fn write_target_records(path: &Path, records: &[TargetRecord]) -> Result<(), PipelineError> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).expect("record serializes"));
        text.push('\n');
    }
    write_targets_jsonl(path, text)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChannelStats {
    pub min: f32,
    pub max: f32,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InspectReport {
    pub dims: [usize; 3],
    pub bounds_min: [f64; 3],
    pub bounds_max: [f64; 3],
    pub k: usize,
    pub channels: usize,
    pub occupied_voxels: usize,
    pub channel_stats: Vec<ChannelStats>,
}

pub fn inspect_grid(grid: &VoxelGrid) -> InspectReport {
    let channel_stats = (0..grid.channels())
        .map(|c| {
            let ch = grid.channel(c);
            let (min, max) = ch.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            let mean = ch.iter().map(|&v| v as f64).sum::<f64>() / ch.len() as f64;
            ChannelStats { min, max, mean }
        })
        .collect();
    InspectReport {
        dims: grid.dims().as_array(),
        bounds_min: grid.bounds().min(),
        bounds_max: grid.bounds().max(),
        k: grid.k(),
        channels: grid.channels(),
        occupied_voxels: grid.occupied_count(),
        channel_stats,
    }
}

/// Reads, verifies and summarizes a tensor file. Optionally renders the
/// middle z-slice of the RGB, saliency and occupancy channels as PNGs.
pub fn inspect(path: &Path, render_dir: Option<&Path>) -> Result<InspectReport, PipelineError> {
    let grid = format::read_grid(path)?;
    if let Some(dir) = render_dir {
        render_slices(&grid, dir)?;
    }
    Ok(inspect_grid(&grid))
}

/// Writes the middle z-slice as `slice_rgb.png`, `slice_saliency{c}.png` and
/// `slice_occupancy.png`.
pub fn render_slices(grid: &VoxelGrid, dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    fs::create_dir_all(dir).map_err(|e| IoError::Io { path: dir.to_path_buf(), source: e })?;
    let d = grid.dims();
    let z = d.nz / 2;
    let l = grid.layout();
    let px = |c: usize, x: usize, y: usize| grid.channel(c)[d.linear([x, y, z])].clamp(0.0, 1.0) as f64;
    // image rows run along y, columns along x
    let rgb: Vec<[f64; 3]> = (0..d.ny)
        .flat_map(|y| (0..d.nx).map(move |x| (x, y)))
        .map(|(x, y)| [px(0, x, y), px(1, x, y), px(2, x, y)])
        .collect();
    let mut out = Vec::new();
    let path = dir.join("slice_rgb.png");
    io::write_rgb(&path, &geometry::RgbImage::new(d.nx, d.ny, rgb).expect("clamped"))?;
    out.push(path);
    let gray = |c: usize| -> Vec<[f64; 3]> {
        (0..d.ny).flat_map(|y| (0..d.nx).map(move |x| [px(c, x, y); 3])).collect()
    };
    for (i, c) in l.saliency().enumerate() {
        let path = dir.join(format!("slice_saliency{i}.png"));
        io::write_rgb(&path, &geometry::RgbImage::new(d.nx, d.ny, gray(c)).expect("clamped"))?;
        out.push(path);
    }
    let path = dir.join("slice_occupancy.png");
    io::write_rgb(&path, &geometry::RgbImage::new(d.nx, d.ny, gray(l.occupancy())).expect("clamped"))?;
    out.push(path);
    Ok(out)
}

//! Writes complete synthetic episodes to disk: a tabletop scene, a fixed
//! front camera, two wrist cameras following the end effectors, a scripted
//! dual-arm trajectory and multi-head attention maps.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{CameraIntrinsics, RigidTransform};
use crate::io::{self, IoError};
use crate::manifest::{
    CameraEntry, EpisodeManifest, FrameEntry, SaliencySection, ViewEntry, WorkspaceSection, MANIFEST_VERSION,
};
use crate::saliency::{SaliencyConfig, SaliencyMap, MAX_HEADS};
use crate::synth::{render_depth, SceneObject, Shape, SyntheticScene};
use crate::targets::quaternion_from_euler_zyx_degrees;
use crate::trajectory::{Arm, ArmState};

pub const DEPTH_SCALE: f64 = 1e-4;
pub const MANIFEST_NAME: &str = "episode.toml";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthEpisodeConfig {
    /// Frames in the episode (at least 12).
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    /// Side of the square attention map before upsampling.
    pub patch: usize,
    /// Attention heads written per view.
    pub heads: usize,
    /// Heads the manifest asks the pipeline to use.
    pub k: usize,
    pub fov_deg: f64,
    pub grid: usize,
}

impl Default for SynthEpisodeConfig {
    fn default() -> Self {
        Self { frames: 40, width: 64, height: 64, patch: 16, heads: 2, k: 1, fov_deg: 70.0, grid: 50 }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SynthEpisodeError {
    #[error("synthetic episode parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

impl SynthEpisodeConfig {
    pub fn validate(&self) -> Result<(), SynthEpisodeError> {
        let bad = |m: &str| Err(SynthEpisodeError::Parameter(m.into()));
        if self.frames < 12 {
            return bad("frames must be >= 12");
        }
        if self.width < 2 || self.height < 2 {
            return bad("image must be at least 2x2");
        }
        if self.patch < 2 || self.patch > self.width.min(self.height) {
            return bad("patch must lie in [2, min(width, height)]");
        }
        if self.heads > MAX_HEADS || self.k > self.heads {
            return bad("need k <= heads <= 6");
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return bad("fov_deg must lie in (0, 180)");
        }
        if self.grid == 0 {
            return bad("grid must be >= 1");
        }
        Ok(())
    }
}

/// Table, a ball and a block, with object placement jittered by `seed`.
pub fn tabletop_scene(seed: u64) -> SyntheticScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut j = |m: f64| rng.random_range(-m..=m);
    let ball = [0.25 + j(0.05), 0.1 + j(0.05), -0.25];
    let (bx, by) = (-0.3 + j(0.05), -0.2 + j(0.05));
    SyntheticScene {
        objects: vec![
            SceneObject {
                shape: Shape::Box { min: [-0.9, -0.9, -0.5], max: [0.9, 0.9, -0.4] },
                color: [0.55, 0.45, 0.35],
                saliency: 0.05,
            },
            SceneObject {
                shape: Shape::Sphere { center: ball, radius: 0.15 },
                color: [0.9, 0.15, 0.1],
                saliency: 1.0,
            },
            SceneObject {
                shape: Shape::Box { min: [bx - 0.1, by - 0.1, -0.4], max: [bx + 0.1, by + 0.1, -0.2] },
                color: [0.1, 0.3, 0.85],
                saliency: 0.6,
            },
        ],
    }
}

fn lerp(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

fn quat(yaw_deg: f64) -> [f64; 4] {
    let q = quaternion_from_euler_zyx_degrees([yaw_deg, 0.0, 0.0]);
    [q.w, q.i, q.j, q.k]
}

/// Scripted motion on a 40-frame timeline scaled to `n` frames: reach, pause,
/// grasp, lift, pause, release, hold for the left arm; the right arm reaches
/// the block, grasps it and holds.
pub fn scripted_states(n: usize, scene: &SyntheticScene) -> Vec<(ArmState, ArmState)> {
    let ball = match scene.objects[1].shape {
        Shape::Sphere { center, .. } => center,
        _ => [0.25, 0.1, -0.25],
    };
    let block = match scene.objects[2].shape {
        Shape::Box { min, max } => lerp(min, max, 0.5),
        _ => [-0.3, -0.2, -0.3],
    };
    let s = |f: f64| ((f * n as f64) / 40.0).round() as usize;
    let (reach, grasp, lift_end, release) = (s(10.0), s(14.0), s(24.0), s(30.0));
    let l0 = [0.5, 0.5, 0.3];
    let above_ball = [ball[0], ball[1], ball[2] + 0.2];
    let lifted = [ball[0], ball[1], ball[2] + 0.5];
    let r0 = [-0.5, -0.5, 0.3];
    let above_block = [block[0], block[1], block[2] + 0.25];
    (0..n)
        .map(|i| {
            let t = |a: usize, b: usize| ((i as f64 - a as f64) / (b - a).max(1) as f64).clamp(0.0, 1.0);
            let lp = if i <= reach {
                lerp(l0, above_ball, t(0, reach))
            } else if i <= grasp {
                above_ball
            } else {
                lerp(above_ball, lifted, t(grasp, lift_end))
            };
            let mut left = ArmState::at(lp, !(grasp..release).contains(&i));
            left.ee_orientation = quat(90.0 * t(0, reach));
            left.joint_positions = [lp[0], lp[1], lp[2], 0.0, 0.0, 0.0, 0.0];
            let rp = lerp(r0, above_block, t(0, s(8.0)));
            let mut right = ArmState::at(rp, i < s(9.0));
            right.ee_orientation = quat(-30.0);
            right.collision = i < s(9.0);
            (left, right)
        })
        .collect()
}

/// Wrist camera 0.35 m behind and above the end effector, looking at it.
fn wrist_pose(ee: [f64; 3], side: f64) -> RigidTransform {
    let eye = [ee[0] + 0.25 * side, ee[1] + 0.25 * side, ee[2] + 0.3];
    RigidTransform::look_at(eye, [ee[0], ee[1], ee[2] - 0.2], [0.0, 0.0, 1.0]).expect("non-degenerate wrist view")
}

/// Samples the rendered saliency at `patch × patch` aligned-corner grid points
/// and stores head `c` as `s^(c+1)`.
fn attention_patch(full: &SaliencyMap, patch: usize, heads: usize) -> SaliencyMap {
    let (h, w) = (full.height(), full.width());
    let at = |o: usize, src: usize| (o * (src - 1) + (patch - 1) / 2) / (patch - 1);
    let mut data = Vec::with_capacity(patch * patch * heads);
    for y in 0..patch {
        for x in 0..patch {
            let s = full.get(at(y, h), at(x, w), 0);
            data.extend((0..heads).map(|c| s.powi(c as i32 + 1)));
        }
    }
    SaliencyMap::new(patch, patch, heads, data).expect("powers stay in [0, 1]")
}

/// Renders and writes an episode under `dir`; returns the manifest path.
pub fn write_synthetic_episode(dir: &Path, cfg: &SynthEpisodeConfig, seed: u64) -> Result<PathBuf, SynthEpisodeError> {
    cfg.validate()?;
    let mkdir = |p: &Path| fs::create_dir_all(p).map_err(|e| IoError::Io { path: p.to_path_buf(), source: e });
    mkdir(dir)?;
    let scene = tabletop_scene(seed);
    let states = scripted_states(cfg.frames, &scene);
    let intr = CameraIntrinsics::from_fov(cfg.width, cfg.height, cfg.fov_deg)
        .map_err(|e| SynthEpisodeError::Parameter(e.to_string()))?;
    let front = RigidTransform::look_at([0.0, -1.8, 0.8], [0.0, 0.0, -0.3], [0.0, 0.0, 1.0]).expect("fixed view");
    let names = ["front", "wrist_left", "wrist_right"];
    let poses: Vec<[RigidTransform; 3]> = states
        .iter()
        .map(|(l, r)| [front, wrist_pose(l.ee_position, 1.0), wrist_pose(r.ee_position, -1.0)])
        .collect();

    (0..cfg.frames).into_par_iter().try_for_each(|f| -> Result<(), SynthEpisodeError> {
        let fdir = dir.join(format!("f{f:04}"));
        mkdir(&fdir)?;
        for (c, name) in names.iter().enumerate() {
            let r = render_depth(&scene, &intr, &poses[f][c]);
            io::write_rgb(&fdir.join(format!("{name}_rgb.png")), &r.rgb)?;
            io::write_depth(&fdir.join(format!("{name}_depth.png")), &r.depth, DEPTH_SCALE)?;
            io::write_saliency(&fdir.join(format!("{name}_sal.bin")), &attention_patch(&r.saliency, cfg.patch, cfg.heads))?;
        }
        Ok(())
    })?;

    let mut cameras = Vec::new();
    for (c, name) in names.iter().enumerate() {
        let (poses_file, pose) = if c == 0 {
            (None, Some(front))
        } else {
            let file = PathBuf::from(format!("{name}_poses.txt"));
            let track: Vec<RigidTransform> = poses.iter().map(|p| p[c]).collect();
            io::write_poses(&dir.join(&file), &track)?;
            (Some(file), None)
        };
        cameras.push(CameraEntry { name: name.to_string(), intrinsics: intr, poses: poses_file, pose });
    }
    let frames = states
        .iter()
        .enumerate()
        .map(|(f, (left, right))| FrameEntry {
            timestep: f as u64,
            language_acting: "lift the red ball".into(),
            language_stabilizing: "hold the blue block".into(),
            left: *left,
            right: *right,
            views: names
                .iter()
                .map(|name| {
                    let p = |s: &str| PathBuf::from(format!("f{f:04}/{name}_{s}"));
                    ViewEntry {
                        camera: name.to_string(),
                        rgb: p("rgb.png"),
                        depth: p("depth.png"),
                        saliency: (cfg.heads > 0).then(|| p("sal.bin")),
                    }
                })
                .collect(),
        })
        .collect();
    let mut saliency = SaliencySection::from_config(SaliencyConfig { k: cfg.k, ..SaliencyConfig::default() });
    if cfg.heads > 0 {
        saliency.height = Some(cfg.patch);
        saliency.width = Some(cfg.patch);
    }
    let manifest = EpisodeManifest {
        version: MANIFEST_VERSION,
        acting_arm: Arm::Left,
        depth_scale: DEPTH_SCALE,
        workspace: WorkspaceSection { min: [-1.0; 3], max: [1.0; 3], dims: [cfg.grid; 3] },
        saliency,
        cameras,
        frames,
    };
    let path = dir.join(MANIFEST_NAME);
    crate::format::write_atomic(&path, manifest.to_toml().as_bytes())
        .map_err(|e| IoError::Io { path: path.clone(), source: e })?;
    Ok(path)
}

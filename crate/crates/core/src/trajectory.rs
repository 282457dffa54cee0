//! Dual-arm demonstration episodes and keyframe extraction.

use std::path::PathBuf;

use nalgebra::{Quaternion, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::geometry::{CameraIntrinsics, RigidTransform};

const QUAT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TrajectoryError {
    #[error("degenerate episode: {0}")]
    Degenerate(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("invalid arm state: {0}")]
    ArmState(String),
    #[error("inconsistent episode: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Left,
    Right,
}

impl Arm {
    /// Arm identifier bit: left = 0, right = 1.
    pub fn id(self) -> u8 {
        match self {
            Arm::Left => 0,
            Arm::Right => 1,
        }
    }

    pub fn other(self) -> Arm {
        match self {
            Arm::Left => Arm::Right,
            Arm::Right => Arm::Left,
        }
    }
}

/// Proprioceptive state of one arm. Orientation is a unit quaternion stored
/// as `[w, x, y, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmState {
    pub joint_positions: [f64; 7],
    pub ee_position: [f64; 3],
    pub ee_orientation: [f64; 4],
    pub gripper_open: bool,
    /// Collision-avoidance flag supervised alongside the pose.
    #[serde(default)]
    pub collision: bool,
}

impl ArmState {
    pub fn at(position: [f64; 3], gripper_open: bool) -> Self {
        Self {
            joint_positions: [0.0; 7],
            ee_position: position,
            ee_orientation: [1.0, 0.0, 0.0, 0.0],
            gripper_open,
            collision: false,
        }
    }

    pub fn validate(&self) -> Result<(), TrajectoryError> {
        let q = self.ee_orientation;
        let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        if !((norm - 1.0).abs() <= QUAT_NORM_TOL) {
            return Err(TrajectoryError::ArmState(format!("quaternion norm {norm} is not 1")));
        }
        if !self
            .joint_positions
            .iter()
            .chain(&self.ee_position)
            .all(|v| v.is_finite())
        {
            return Err(TrajectoryError::ArmState("non-finite joint or position".into()));
        }
        Ok(())
    }

    pub fn orientation(&self) -> UnitQuaternion<f64> {
        let [w, x, y, z] = self.ee_orientation;
        UnitQuaternion::new_normalize(Quaternion::new(w, x, y, z))
    }
}

/// File references for one camera at one frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewRef {
    pub rgb: PathBuf,
    pub depth: PathBuf,
    pub saliency: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameObservation {
    pub timestep: u64,
    pub left: ArmState,
    pub right: ArmState,
    /// Index-aligned with [`DemonstrationEpisode::cameras`].
    pub views: Vec<ViewRef>,
    pub language_acting: String,
    pub language_stabilizing: String,
}

impl FrameObservation {
    pub fn arm(&self, arm: Arm) -> &ArmState {
        match arm {
            Arm::Left => &self.left,
            Arm::Right => &self.right,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraTrack {
    pub name: String,
    pub intrinsics: CameraIntrinsics,
    /// One pose per frame.
    pub poses: Vec<RigidTransform>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemonstrationEpisode {
    pub cameras: Vec<CameraTrack>,
    pub frames: Vec<FrameObservation>,
    /// Arm that carries the acting role; the other one stabilizes.
    pub acting_arm: Arm,
}

impl DemonstrationEpisode {
    /// Episode without camera data, useful when only proprioception matters.
    pub fn from_states(states: Vec<(ArmState, ArmState)>) -> Self {
        let frames = states
            .into_iter()
            .enumerate()
            .map(|(t, (left, right))| FrameObservation {
                timestep: t as u64,
                left,
                right,
                views: Vec::new(),
                language_acting: String::new(),
                language_stabilizing: String::new(),
            })
            .collect();
        Self {
            cameras: Vec::new(),
            frames,
            acting_arm: Arm::Left,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<(), TrajectoryError> {
        if self.frames.len() < 2 {
            return Err(TrajectoryError::Degenerate(format!(
                "{} frames, need at least 2",
                self.frames.len()
            )));
        }
        for (i, f) in self.frames.iter().enumerate() {
            if i > 0 && f.timestep <= self.frames[i - 1].timestep {
                return Err(TrajectoryError::Inconsistent(format!(
                    "frame {i}: timestep {} not after {}",
                    f.timestep,
                    self.frames[i - 1].timestep
                )));
            }
            if f.views.len() != self.cameras.len() {
                return Err(TrajectoryError::Inconsistent(format!(
                    "frame {i} has {} views for {} cameras",
                    f.views.len(),
                    self.cameras.len()
                )));
            }
            f.left.validate().map_err(|e| TrajectoryError::ArmState(format!("frame {i} left: {e}")))?;
            f.right.validate().map_err(|e| TrajectoryError::ArmState(format!("frame {i} right: {e}")))?;
        }
        for cam in &self.cameras {
            if cam.poses.len() != self.frames.len() {
                return Err(TrajectoryError::Inconsistent(format!(
                    "camera {} has {} poses for {} frames",
                    cam.name,
                    cam.poses.len(),
                    self.frames.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StationaryRule {
    /// Both end effectors must be still.
    #[default]
    Both,
    /// Either end effector being still is enough.
    Either,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeyframeConfig {
    /// Speed below which an end effector counts as still, m/s.
    pub vel_eps: f64,
    /// Frames in a still run before it emits a keyframe.
    pub stationary_window: usize,
    /// Time between frames, s.
    pub dt: f64,
    pub rule: StationaryRule,
    /// Optional angular-rate bound, rad/s. `None` ignores orientation.
    pub angular_eps: Option<f64>,
}

impl Default for KeyframeConfig {
    fn default() -> Self {
        Self {
            vel_eps: 1e-3,
            stationary_window: 2,
            dt: 0.05,
            rule: StationaryRule::Both,
            angular_eps: None,
        }
    }
}

impl KeyframeConfig {
    pub fn validate(&self) -> Result<(), TrajectoryError> {
        if !(self.vel_eps > 0.0) {
            return Err(TrajectoryError::Parameter(format!("vel_eps {} must be > 0", self.vel_eps)));
        }
        if self.stationary_window == 0 {
            return Err(TrajectoryError::Parameter("stationary_window must be >= 1".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(TrajectoryError::Parameter(format!("dt {} must be > 0", self.dt)));
        }
        if let Some(a) = self.angular_eps {
            if !(a > 0.0) {
                return Err(TrajectoryError::Parameter(format!("angular_eps {a} must be > 0")));
            }
        }
        Ok(())
    }
}

fn arm_still(prev: &ArmState, cur: &ArmState, cfg: &KeyframeConfig) -> bool {
    let d = (0..3)
        .map(|a| (cur.ee_position[a] - prev.ee_position[a]).powi(2))
        .sum::<f64>()
        .sqrt();
    if !(d / cfg.dt < cfg.vel_eps) {
        return false;
    }
    match cfg.angular_eps {
        None => true,
        Some(eps) => prev.orientation().angle_to(&cur.orientation()) / cfg.dt < eps,
    }
}

/// Whether the step from frame `t - 1` to `t` counts as stationary.
fn still_step(prev: &FrameObservation, cur: &FrameObservation, cfg: &KeyframeConfig) -> bool {
    let l = arm_still(&prev.left, &cur.left, cfg);
    let r = arm_still(&prev.right, &cur.right, cfg);
    match cfg.rule {
        StationaryRule::Both => l && r,
        StationaryRule::Either => l || r,
    }
}

fn gripper_changed(prev: &FrameObservation, cur: &FrameObservation) -> bool {
    prev.left.gripper_open != cur.left.gripper_open || prev.right.gripper_open != cur.right.gripper_open
}

/// Frames that end a still run of `stationary_window` frames, one per run.
///
/// A still run is a maximal sequence of frames joined by still steps; a run of
/// `w` frames contains `w - 1` steps. The run emits at the frame where its
/// length first reaches the window.
pub fn motion_stop_keyframes(ep: &DemonstrationEpisode, cfg: &KeyframeConfig) -> Result<Vec<usize>, TrajectoryError> {
    cfg.validate()?;
    let frames = &ep.frames;
    if frames.len() < 2 {
        return Err(TrajectoryError::Degenerate(format!("{} frames, need at least 2", frames.len())));
    }
    let mut out = Vec::new();
    let mut run = 1usize;
    if cfg.stationary_window == 1 {
        out.push(0);
    }
    for t in 1..frames.len() {
        if still_step(&frames[t - 1], &frames[t], cfg) {
            run += 1;
        } else {
            run = 1;
        }
        if run == cfg.stationary_window {
            out.push(t);
        }
    }
    Ok(out)
}

/// Frames where either gripper changes state relative to the previous frame.
pub fn gripper_keyframes(ep: &DemonstrationEpisode) -> Vec<usize> {
    (1..ep.frames.len())
        .filter(|&t| gripper_changed(&ep.frames[t - 1], &ep.frames[t]))
        .collect()
}

/// Keyframes: gripper changes, motion stops and the final frame, ascending
/// and duplicate-free.
pub fn extract_keyframes(ep: &DemonstrationEpisode, cfg: &KeyframeConfig) -> Result<Vec<usize>, TrajectoryError> {
    let mut keys = motion_stop_keyframes(ep, cfg)?;
    keys.extend(gripper_keyframes(ep));
    keys.push(ep.frames.len() - 1);
    keys.sort_unstable();
    keys.dedup();
    Ok(keys)
}

/// Pairs every frame before the last keyframe with the next keyframe after it.
pub fn keyframe_pairs(n_frames: usize, keyframes: &[usize]) -> Vec<(usize, usize)> {
    let Some(&last) = keyframes.last() else {
        return Vec::new();
    };
    let mut out = Vec::with_capacity(last.min(n_frames));
    let mut next = 0;
    for t in 0..last.min(n_frames) {
        while keyframes[next] <= t {
            next += 1;
        }
        out.push((t, keyframes[next]));
    }
    out
}

//! Discretized behavior-cloning targets, cross-entropy losses and SE(3)
//! augmentation applied jointly to the scene and the targets.
//!
//! Rotations use intrinsic Z-Y-X Euler angles `(ψ, θ, φ)`: yaw about Z, then
//! pitch about the new Y, then roll about the new X. Angles are normalized to
//! `[0, 360)` degrees before binning.

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{FeaturedPointCloud, RigidTransform};
use crate::trajectory::{Arm, ArmState};
use crate::voxelizer::{point_to_index, GridDims, WorkspaceBounds};

/// Floor added inside the logarithm of the cross-entropy.
pub const LOG_EPS: f64 = 1e-12;

/// Number of supervised output channels per arm.
pub const CHANNELS_PER_ARM: usize = 5;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TargetError {
    #[error("non-finite score at index {0}")]
    Numeric(usize),
    #[error("position {0:?} outside the workspace")]
    OutOfBounds([f64; 3]),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("augmentation failed: no admissible perturbation after {0} attempts")]
    Augmentation(usize),
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(q: &[f64]) -> Result<Vec<f64>, TargetError> {
    if let Some(i) = q.iter().position(|v| !v.is_finite()) {
        return Err(TargetError::Numeric(i));
    }
    let m = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = q.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / s).collect())
}

/// Index of the largest value; the first one on ties.
pub fn argmax(v: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &x) in v.iter().enumerate() {
        if best.is_none_or(|(_, b)| x > b) {
            best = Some((i, x));
        }
    }
    best.map(|(i, _)| i)
}

/// One-hot translation target over the voxel grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslationOneHot {
    pub dims: GridDims,
    pub index: [usize; 3],
}

impl TranslationOneHot {
    /// Dense `nx × ny × nz` grid, row-major.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dims.voxel_count()];
        v[self.dims.linear(self.index)] = 1.0;
        v
    }
}

pub fn encode_translation(
    position: [f64; 3],
    bounds: &WorkspaceBounds,
    dims: &GridDims,
) -> Result<TranslationOneHot, TargetError> {
    point_to_index(position, bounds, dims)
        .map(|index| TranslationOneHot { dims: *dims, index })
        .ok_or(TargetError::OutOfBounds(position))
}

/// Bins per rotation axis for a resolution that divides 360°.
pub fn rotation_bins(resolution_deg: f64) -> Result<usize, TargetError> {
    if !(resolution_deg > 0.0 && resolution_deg <= 360.0) {
        return Err(TargetError::Parameter(format!("rotation resolution {resolution_deg}° out of range")));
    }
    let n = (360.0 / resolution_deg).round();
    if (n * resolution_deg - 360.0).abs() > 1e-9 {
        return Err(TargetError::Parameter(format!("{resolution_deg}° does not divide 360°")));
    }
    Ok(n as usize)
}

/// Three one-hot columns, one per Euler axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RotationOneHot {
    pub bins: usize,
    pub index: [usize; 3],
}

impl RotationOneHot {
    /// Dense `bins × 3` matrix, row-major (`data[bin * 3 + axis]`).
    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.bins * 3];
        for (axis, &b) in self.index.iter().enumerate() {
            v[b * 3 + axis] = 1.0;
        }
        v
    }
}

pub fn normalize_degrees(a: f64) -> f64 {
    let r = a.rem_euclid(360.0);
    // rem_euclid of a tiny negative value rounds up to 360
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

pub fn encode_rotation(angles_deg: [f64; 3], resolution_deg: f64) -> Result<RotationOneHot, TargetError> {
    let bins = rotation_bins(resolution_deg)?;
    if let Some(i) = angles_deg.iter().position(|a| !a.is_finite()) {
        return Err(TargetError::Numeric(i));
    }
    let index = angles_deg.map(|a| ((normalize_degrees(a) / resolution_deg).floor() as usize) % bins);
    Ok(RotationOneHot { bins, index })
}

/// `(1, 0)` for false, `(0, 1)` for true.
pub fn encode_binary(flag: bool) -> [f64; 2] {
    if flag {
        [0.0, 1.0]
    } else {
        [1.0, 0.0]
    }
}

/// Intrinsic Z-Y-X angles `(ψ, θ, φ)` in degrees, each in `[0, 360)`.
pub fn euler_zyx_degrees(q: &UnitQuaternion<f64>) -> [f64; 3] {
    let (roll, pitch, yaw) = q.euler_angles();
    [yaw, pitch, roll].map(|r| normalize_degrees(r.to_degrees()))
}

pub fn quaternion_from_euler_zyx_degrees(angles: [f64; 3]) -> UnitQuaternion<f64> {
    let [yaw, pitch, roll] = angles.map(f64::to_radians);
    UnitQuaternion::from_euler_angles(roll, pitch, yaw)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArmRole {
    Acting,
    Stabilizing,
}

impl ArmRole {
    /// Role bit: acting = 0, stabilizing = 1.
    pub fn bit(self) -> u8 {
        match self {
            ArmRole::Acting => 0,
            ArmRole::Stabilizing => 1,
        }
    }
}

/// Discretization settings shared by all targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetConfig {
    pub bounds: WorkspaceBounds,
    pub dims: GridDims,
    pub rotation_resolution_deg: f64,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self {
            bounds: WorkspaceBounds::default(),
            dims: GridDims::default(),
            rotation_resolution_deg: 5.0,
        }
    }
}

/// Continuous end-effector target of one arm, before discretization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmKeypose {
    pub role: ArmRole,
    pub arm: Arm,
    pub position: [f64; 3],
    pub orientation: UnitQuaternion<f64>,
    pub gripper_open: bool,
    pub collision: bool,
}

impl ArmKeypose {
    pub fn from_state(role: ArmRole, arm: Arm, state: &ArmState) -> Self {
        Self {
            role,
            arm,
            position: state.ee_position,
            orientation: state.orientation(),
            gripper_open: state.gripper_open,
            collision: state.collision,
        }
    }

    /// Keypose moved by a rigid transform.
    pub fn transformed(&self, t: &RigidTransform) -> Self {
        Self {
            position: t.apply(self.position),
            orientation: t.unit_quaternion() * self.orientation,
            ..*self
        }
    }

    pub fn discretize(&self, cfg: &TargetConfig) -> Result<ActionTarget, TargetError> {
        let trans = encode_translation(self.position, &cfg.bounds, &cfg.dims)?;
        let rot = encode_rotation(euler_zyx_degrees(&self.orientation), cfg.rotation_resolution_deg)?;
        Ok(ActionTarget {
            arm_role: self.role,
            translation: trans.index,
            rotation_bins: rot.index,
            gripper_open: self.gripper_open,
            collision: self.collision,
            arm_id: self.arm.id(),
        })
    }
}

/// Discretized supervision for one arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionTarget {
    pub arm_role: ArmRole,
    pub translation: [usize; 3],
    pub rotation_bins: [usize; 3],
    pub gripper_open: bool,
    pub collision: bool,
    pub arm_id: u8,
}

impl ActionTarget {
    pub fn one_hot(&self, cfg: &TargetConfig) -> Result<OneHotTargets, TargetError> {
        let bins = rotation_bins(cfg.rotation_resolution_deg)?;
        let n = cfg.dims.as_array();
        if (0..3).any(|a| self.translation[a] >= n[a]) {
            return Err(TargetError::Shape(format!(
                "translation index {:?} outside grid {:?}",
                self.translation, n
            )));
        }
        if self.rotation_bins.iter().any(|&b| b >= bins) {
            return Err(TargetError::Shape(format!("rotation bins {:?} exceed {bins}", self.rotation_bins)));
        }
        Ok(OneHotTargets {
            trans: TranslationOneHot { dims: cfg.dims, index: self.translation }.to_dense(),
            rot: RotationOneHot { bins, index: self.rotation_bins }.to_dense(),
            open: encode_binary(self.gripper_open),
            coll: encode_binary(self.collision),
            id: encode_binary(self.arm_id == 1),
        })
    }
}

/// Dense one-hot supervision for the five output channels of one arm.
#[derive(Debug, Clone, PartialEq)]
pub struct OneHotTargets {
    pub trans: Vec<f64>,
    /// `bins × 3`, row-major.
    pub rot: Vec<f64>,
    pub open: [f64; 2],
    pub coll: [f64; 2],
    pub id: [f64; 2],
}

/// Predicted distributions for the five output channels of one arm.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionDistributions {
    pub trans: Vec<f64>,
    /// `bins × 3`, row-major; each column sums to one.
    pub rot: Vec<f64>,
    pub open: [f64; 2],
    pub coll: [f64; 2],
    pub id: [f64; 2],
}

const DIST_TOL: f64 = 1e-6;

fn check_distribution(name: &str, v: &[f64]) -> Result<(), TargetError> {
    if v.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(TargetError::Parameter(format!("{name}: negative or non-finite probability")));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > DIST_TOL {
        return Err(TargetError::Parameter(format!("{name}: sums to {s}")));
    }
    Ok(())
}

fn rot_column(rot: &[f64], axis: usize) -> Vec<f64> {
    rot.iter().skip(axis).step_by(3).copied().collect()
}

impl PredictionDistributions {
    /// Softmax of raw per-channel scores. `rot_scores` is `bins × 3`
    /// row-major; the softmax runs down each column.
    pub fn from_scores(
        trans: &[f64],
        rot_scores: &[f64],
        open: [f64; 2],
        coll: [f64; 2],
        id: [f64; 2],
    ) -> Result<Self, TargetError> {
        if rot_scores.len() % 3 != 0 {
            return Err(TargetError::Shape("rotation scores not a multiple of 3".into()));
        }
        let mut rot = vec![0.0; rot_scores.len()];
        for axis in 0..3 {
            let col = softmax(&rot_column(rot_scores, axis))?;
            for (b, p) in col.into_iter().enumerate() {
                rot[b * 3 + axis] = p;
            }
        }
        let two = |s: [f64; 2]| -> Result<[f64; 2], TargetError> {
            let p = softmax(&s)?;
            Ok([p[0], p[1]])
        };
        Ok(Self {
            trans: softmax(trans)?,
            rot,
            open: two(open)?,
            coll: two(coll)?,
            id: two(id)?,
        })
    }

    pub fn uniform(voxels: usize, bins: usize) -> Self {
        Self {
            trans: vec![1.0 / voxels as f64; voxels],
            rot: vec![1.0 / bins as f64; bins * 3],
            open: [0.5; 2],
            coll: [0.5; 2],
            id: [0.5; 2],
        }
    }

    pub fn validate(&self) -> Result<(), TargetError> {
        check_distribution("trans", &self.trans)?;
        if self.rot.len() % 3 != 0 {
            return Err(TargetError::Shape("rotation distribution not a multiple of 3".into()));
        }
        for axis in 0..3 {
            check_distribution("rot", &rot_column(&self.rot, axis))?;
        }
        check_distribution("open", &self.open)?;
        check_distribution("coll", &self.coll)?;
        check_distribution("id", &self.id)
    }
}

/// Cross-entropy `−Σ y · ln(v + ε)`. For the rotation channel pass the whole
/// `bins × 3` matrix; the result is the sum over the three axis columns.
pub fn channel_loss(v: &[f64], y: &[f64]) -> Result<f64, TargetError> {
    if v.len() != y.len() {
        return Err(TargetError::Shape(format!("prediction has {} entries, target {}", v.len(), y.len())));
    }
    let l: f64 = -v
        .iter()
        .zip(y)
        .filter(|(_, &t)| t != 0.0)
        .map(|(&p, &t)| t * (p + LOG_EPS).ln())
        .sum::<f64>();
    // ln(1 + ε) would otherwise leave a −1e-12 residue on perfect predictions
    Ok(l.max(0.0))
}

/// Analytic gradient of [`channel_loss`] with respect to each probability.
pub fn channel_loss_grad(v: &[f64], y: &[f64]) -> Result<Vec<f64>, TargetError> {
    if v.len() != y.len() {
        return Err(TargetError::Shape(format!("prediction has {} entries, target {}", v.len(), y.len())));
    }
    Ok(v.iter().zip(y).map(|(&p, &t)| -t / (p + LOG_EPS)).collect())
}

/// Losses for `[trans, rot, open, coll, id]`.
pub fn arm_losses(pred: &PredictionDistributions, target: &OneHotTargets) -> Result<[f64; CHANNELS_PER_ARM], TargetError> {
    Ok([
        channel_loss(&pred.trans, &target.trans)?,
        channel_loss(&pred.rot, &target.rot)?,
        channel_loss(&pred.open, &target.open)?,
        channel_loss(&pred.coll, &target.coll)?,
        channel_loss(&pred.id, &target.id)?,
    ])
}

/// Sum of the acting arm's channel losses plus the stabilizing arm's, each
/// summed left to right.
pub fn total_loss(acting: &[f64], stabilizing: &[f64]) -> Result<f64, TargetError> {
    if acting.len() != CHANNELS_PER_ARM || stabilizing.len() != CHANNELS_PER_ARM {
        return Err(TargetError::Parameter(format!(
            "expected {CHANNELS_PER_ARM} losses per arm, got {} and {}",
            acting.len(),
            stabilizing.len()
        )));
    }
    let a: f64 = acting.iter().sum();
    let s: f64 = stabilizing.iter().sum();
    Ok(a + s)
}

/// Bounds on the random rigid perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbLimits {
    /// Per-axis translation bound, meters.
    pub max_translation: [f64; 3],
    /// Rotation bounds in degrees, about Z, Y and X (yaw, pitch, roll).
    pub max_rotation_deg: [f64; 3],
    /// Rejection-sampling attempts before giving up.
    pub max_attempts: usize,
}

impl Default for PerturbLimits {
    fn default() -> Self {
        Self {
            max_translation: [0.125; 3],
            max_rotation_deg: [45.0, 0.0, 0.0],
            max_attempts: 100,
        }
    }
}

impl PerturbLimits {
    pub fn zero() -> Self {
        Self {
            max_translation: [0.0; 3],
            max_rotation_deg: [0.0; 3],
            max_attempts: 1,
        }
    }

    fn validate(&self) -> Result<(), TargetError> {
        if self
            .max_translation
            .iter()
            .chain(&self.max_rotation_deg)
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(TargetError::Parameter("perturbation limits must be finite and >= 0".into()));
        }
        if self.max_attempts == 0 {
            return Err(TargetError::Parameter("max_attempts must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Augmented {
    pub cloud: FeaturedPointCloud,
    pub keyposes: Vec<ArmKeypose>,
    pub targets: Vec<ActionTarget>,
    pub transform: RigidTransform,
}

fn symmetric(rng: &mut ChaCha8Rng, limit: f64) -> f64 {
    if limit == 0.0 {
        0.0
    } else {
        rng.random_range(-limit..=limit)
    }
}

/// Draws one perturbation: a rotation about the workspace center followed by
/// a translation.
fn sample_transform(rng: &mut ChaCha8Rng, limits: &PerturbLimits, center: [f64; 3]) -> RigidTransform {
    let t = limits.max_translation.map(|m| symmetric(rng, m));
    let angles = limits.max_rotation_deg.map(|m| symmetric(rng, m));
    if angles == [0.0; 3] {
        return RigidTransform::from_translation(t);
    }
    let q = quaternion_from_euler_zyx_degrees(angles);
    let c = Vector3::from(center);
    let shift = c - q * c + Vector3::from(t);
    RigidTransform::from_quaternion(&q, [shift.x, shift.y, shift.z])
}

/// Applies one random rigid transform to the cloud and every keypose, then
/// re-discretizes the keyposes. Draws are rejected until every transformed
/// keypose lies inside the workspace.
pub fn se3_perturb(
    cloud: &FeaturedPointCloud,
    keyposes: &[ArmKeypose],
    seed: u64,
    limits: &PerturbLimits,
    cfg: &TargetConfig,
) -> Result<Augmented, TargetError> {
    limits.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center = cfg.bounds.center();
    for _ in 0..limits.max_attempts {
        let transform = sample_transform(&mut rng, limits, center);
        if transform.is_identity() {
            let targets = keyposes.iter().map(|k| k.discretize(cfg)).collect::<Result<_, _>>()?;
            return Ok(Augmented {
                cloud: cloud.clone(),
                keyposes: keyposes.to_vec(),
                targets,
                transform,
            });
        }
        let moved: Vec<ArmKeypose> = keyposes.iter().map(|k| k.transformed(&transform)).collect();
        if !moved.iter().all(|k| cfg.bounds.contains(k.position)) {
            continue;
        }
        let targets = moved.iter().map(|k| k.discretize(cfg)).collect::<Result<_, _>>()?;
        return Ok(Augmented {
            cloud: cloud.transformed(&transform),
            keyposes: moved,
            targets,
            transform,
        });
    }
    Err(TargetError::Augmentation(limits.max_attempts))
}

//! Versioned TOML episode manifests.
//!
//! ```toml
//! version = 1
//! acting_arm = "left"          # the other arm stabilizes
//! depth_scale = 0.0001         # meters per 16-bit depth unit
//!
//! [workspace]
//! min = [-1.0, -1.0, -1.0]
//! max = [1.0, 1.0, 1.0]
//! dims = [50, 50, 50]
//!
//! [saliency]
//! k = 1
//! tau = 0.6
//! mode = "clamp-high"          # or "zero-low"
//! order = "upsample-then-threshold"
//! height = 74                  # optional: declared attention-map size
//! width = 74
//!
//! [[cameras]]
//! name = "front"
//! intrinsics = { fx = 110.0, fy = 110.0, cx = 63.5, cy = 63.5, width = 128, height = 128 }
//! poses = "front_poses.txt"    # one pose per frame; or an inline fixed `pose`
//!
//! [[frames]]
//! timestep = 0
//! language_acting = "lift the ball"
//! language_stabilizing = "hold the tray"
//! left = { joint_positions = [0, 0, 0, 0, 0, 0, 0], ee_position = [0.1, 0.2, 0.3], ee_orientation = [1, 0, 0, 0], gripper_open = true }
//! right = { ... }
//! views = [{ camera = "front", rgb = "f0/front_rgb.png", depth = "f0/front_depth.png", saliency = "f0/front_sal.bin" }]
//! ```
//!
//! Relative paths resolve against the manifest's directory.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::geometry::{CameraIntrinsics, RigidTransform};
use crate::io::{self, IoError};
use crate::saliency::{SaliencyConfig, ThresholdMode, ThresholdOrder};
use crate::trajectory::{Arm, ArmState, CameraTrack, DemonstrationEpisode, FrameObservation, ViewRef};
use crate::voxelizer::{GridDims, WorkspaceBounds};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("missing file for {field}: {path}")]
    MissingFile { field: String, path: PathBuf },
    #[error("cannot read {path}: {reason}")]
    Io { path: PathBuf, reason: String },
    #[error("manifest parse error: {0}")]
    Parse(String),
    #[error("unsupported manifest version {found} (supported: {MANIFEST_VERSION})")]
    Version { found: u32 },
    #[error("dimension mismatch in frame {frame}, camera {camera}, {file}: expected {expected}, found {found}")]
    DimensionMismatch {
        frame: usize,
        camera: String,
        file: String,
        expected: String,
        found: String,
    },
    #[error("invalid field {field}: {reason}")]
    Invalid { field: String, reason: String },
}

impl ManifestError {
    fn invalid(field: impl Into<String>, reason: impl ToString) -> Self {
        ManifestError::Invalid { field: field.into(), reason: reason.to_string() }
    }

    fn from_io(field: String, e: IoError) -> Self {
        match e {
            IoError::Missing(path) => ManifestError::MissingFile { field, path },
            IoError::Io { path, source } => ManifestError::Io { path, reason: source.to_string() },
            IoError::Malformed { path, reason } => ManifestError::Io { path, reason },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkspaceSection {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub dims: [usize; 3],
}

impl Default for WorkspaceSection {
    fn default() -> Self {
        Self { min: [-1.0; 3], max: [1.0; 3], dims: [50; 3] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaliencySection {
    pub k: usize,
    pub tau: f64,
    pub mode: ThresholdMode,
    pub order: ThresholdOrder,
    /// Declared attention-map size, checked against every saliency file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
}

impl Default for SaliencySection {
    fn default() -> Self {
        Self::from_config(SaliencyConfig::default())
    }
}

impl SaliencySection {
    pub fn from_config(c: SaliencyConfig) -> Self {
        Self { k: c.k, tau: c.tau, mode: c.mode, order: c.order, height: None, width: None }
    }

    pub fn config(&self) -> SaliencyConfig {
        SaliencyConfig { k: self.k, tau: self.tau, mode: self.mode, order: self.order }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraEntry {
    pub name: String,
    pub intrinsics: CameraIntrinsics,
    /// Per-frame pose file.
    pub poses: Option<PathBuf>,
    /// Fixed pose used for every frame.
    pub pose: Option<RigidTransform>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewEntry {
    pub camera: String,
    pub rgb: PathBuf,
    pub depth: PathBuf,
    pub saliency: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    pub timestep: u64,
    #[serde(default)]
    pub language_acting: String,
    #[serde(default)]
    pub language_stabilizing: String,
    pub left: ArmState,
    pub right: ArmState,
    #[serde(default)]
    pub views: Vec<ViewEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeManifest {
    pub version: u32,
    pub acting_arm: Arm,
    pub depth_scale: f64,
    #[serde(default)]
    pub workspace: WorkspaceSection,
    #[serde(default)]
    pub saliency: SaliencySection,
    #[serde(default)]
    pub cameras: Vec<CameraEntry>,
    pub frames: Vec<FrameEntry>,
}

/// A validated manifest with every path resolved.
#[derive(Debug, Clone)]
pub struct LoadedEpisode {
    pub manifest: EpisodeManifest,
    pub base_dir: PathBuf,
    pub episode: DemonstrationEpisode,
    pub bounds: WorkspaceBounds,
    pub dims: GridDims,
}

#[derive(Deserialize)]
struct VersionProbe {
    version: Option<u32>,
}

impl EpisodeManifest {
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("manifest is always serializable")
    }
}

/// Reads and fully validates a manifest. Nothing is returned unless every
/// referenced file exists and has the declared dimensions.
pub fn load_manifest(path: &Path) -> Result<LoadedEpisode, ManifestError> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => ManifestError::MissingFile { field: "manifest".into(), path: path.to_path_buf() },
        _ => ManifestError::Io { path: path.to_path_buf(), reason: e.to_string() },
    })?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(&text, &base_dir)
}

/// Validates manifest text whose relative paths resolve against `base_dir`.
pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<LoadedEpisode, ManifestError> {
    // check the version before the schema so future formats fail cleanly
    let probe: VersionProbe = toml::from_str(text).map_err(|e| ManifestError::Parse(e.to_string()))?;
    match probe.version {
        Some(MANIFEST_VERSION) => {}
        Some(found) => return Err(ManifestError::Version { found }),
        None => return Err(ManifestError::invalid("version", "missing")),
    }
    let manifest: EpisodeManifest = toml::from_str(text).map_err(|e| ManifestError::Parse(e.to_string()))?;
    validate(manifest, base_dir)
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn validate(manifest: EpisodeManifest, base_dir: &Path) -> Result<LoadedEpisode, ManifestError> {
    if !(manifest.depth_scale > 0.0 && manifest.depth_scale.is_finite()) {
        return Err(ManifestError::invalid("depth_scale", "must be > 0"));
    }
    let bounds = WorkspaceBounds::new(manifest.workspace.min, manifest.workspace.max)
        .map_err(|e| ManifestError::invalid("workspace", e))?;
    let [nx, ny, nz] = manifest.workspace.dims;
    let dims = GridDims::new(nx, ny, nz).map_err(|e| ManifestError::invalid("workspace.dims", e))?;
    let sal = &manifest.saliency;
    sal.config().validate().map_err(|e| ManifestError::invalid("saliency", e))?;
    if manifest.frames.len() < 2 {
        return Err(ManifestError::invalid("frames", format!("{} frames, need at least 2", manifest.frames.len())));
    }

    let n_frames = manifest.frames.len();
    let mut cameras = Vec::with_capacity(manifest.cameras.len());
    let mut cam_index = HashMap::new();
    for (ci, cam) in manifest.cameras.iter().enumerate() {
        let field = format!("cameras[{}]", cam.name);
        if cam_index.insert(cam.name.clone(), ci).is_some() {
            return Err(ManifestError::invalid(field, "duplicate camera name"));
        }
        cam.intrinsics.validate().map_err(|e| ManifestError::invalid(format!("{field}.intrinsics"), e))?;
        let poses = match (&cam.poses, &cam.pose) {
            (Some(file), None) => {
                let poses = io::read_poses(&resolve(base_dir, file))
                    .map_err(|e| ManifestError::from_io(format!("{field}.poses"), e))?;
                if poses.len() != n_frames {
                    return Err(ManifestError::invalid(
                        format!("{field}.poses"),
                        format!("{} poses for {n_frames} frames", poses.len()),
                    ));
                }
                poses
            }
            (None, Some(pose)) => vec![*pose; n_frames],
            _ => return Err(ManifestError::invalid(field, "exactly one of `poses` or `pose` is required")),
        };
        cameras.push(CameraTrack { name: cam.name.clone(), intrinsics: cam.intrinsics, poses });
    }

    let mut frames = Vec::with_capacity(n_frames);
    for (fi, frame) in manifest.frames.iter().enumerate() {
        if fi > 0 && frame.timestep <= manifest.frames[fi - 1].timestep {
            return Err(ManifestError::invalid(format!("frames[{fi}].timestep"), "timesteps must strictly increase"));
        }
        for (arm, state) in [("left", &frame.left), ("right", &frame.right)] {
            state.validate().map_err(|e| ManifestError::invalid(format!("frames[{fi}].{arm}"), e))?;
        }
        if frame.views.len() != cameras.len() {
            return Err(ManifestError::invalid(
                format!("frames[{fi}].views"),
                format!("{} views for {} cameras", frame.views.len(), cameras.len()),
            ));
        }
        let mut views: Vec<Option<ViewRef>> = vec![None; cameras.len()];
        for view in &frame.views {
            let ci = *cam_index.get(&view.camera).ok_or_else(|| {
                ManifestError::invalid(format!("frames[{fi}].views"), format!("unknown camera {}", view.camera))
            })?;
            if views[ci].is_some() {
                return Err(ManifestError::invalid(format!("frames[{fi}].views"), format!("camera {} listed twice", view.camera)));
            }
            let intr = &cameras[ci].intrinsics;
            let expected = format!("{}x{}", intr.width, intr.height);
            let mismatch = |file: &str, found: String| ManifestError::DimensionMismatch {
                frame: fi,
                camera: view.camera.clone(),
                file: file.into(),
                expected: expected.clone(),
                found,
            };
            let field = |f: &str| format!("frames[{fi}].views[{}].{f}", view.camera);
            let rgb = resolve(base_dir, &view.rgb);
            let (w, h) = io::image_dims(&rgb).map_err(|e| ManifestError::from_io(field("rgb"), e))?;
            if (w, h) != (intr.width, intr.height) {
                return Err(mismatch("rgb", format!("{w}x{h}")));
            }
            let depth = resolve(base_dir, &view.depth);
            let (w, h) = io::image_dims(&depth).map_err(|e| ManifestError::from_io(field("depth"), e))?;
            if (w, h) != (intr.width, intr.height) {
                return Err(mismatch("depth", format!("{w}x{h}")));
            }
            let saliency = match &view.saliency {
                Some(p) => {
                    let p = resolve(base_dir, p);
                    let (sh, sw, sk) = io::saliency_header(&p).map_err(|e| ManifestError::from_io(field("saliency"), e))?;
                    if sk < sal.k {
                        return Err(ManifestError::DimensionMismatch {
                            frame: fi,
                            camera: view.camera.clone(),
                            file: "saliency".into(),
                            expected: format!("at least {} heads", sal.k),
                            found: format!("{sk} heads"),
                        });
                    }
                    let declared = (sal.height.unwrap_or(sh), sal.width.unwrap_or(sw));
                    if (sh, sw) != declared || sh > intr.height || sw > intr.width {
                        return Err(ManifestError::DimensionMismatch {
                            frame: fi,
                            camera: view.camera.clone(),
                            file: "saliency".into(),
                            expected: format!("{}x{} (at most {expected})", declared.0, declared.1),
                            found: format!("{sh}x{sw}"),
                        });
                    }
                    Some(p)
                }
                None if sal.k > 0 => {
                    return Err(ManifestError::invalid(field("saliency"), "required when saliency.k > 0"));
                }
                None => None,
            };
            views[ci] = Some(ViewRef { rgb, depth, saliency });
        }
        frames.push(FrameObservation {
            timestep: frame.timestep,
            left: frame.left,
            right: frame.right,
            views: views.into_iter().map(|v| v.expect("every camera checked")).collect(),
            language_acting: frame.language_acting.clone(),
            language_stabilizing: frame.language_stabilizing.clone(),
        });
    }

    let episode = DemonstrationEpisode { cameras, frames, acting_arm: manifest.acting_arm };
    episode.validate().map_err(|e| ManifestError::invalid("episode", e))?;
    Ok(LoadedEpisode { manifest, base_dir: base_dir.to_path_buf(), episode, bounds, dims })
}

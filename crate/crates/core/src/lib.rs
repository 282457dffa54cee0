//! Multi-view RGB-D and attention-map voxel featurization with discretized
//! bimanual action targets.
//!
//! The chain per observation: attention maps are upsampled and thresholded
//! ([`saliency`]), fused with RGB-D views into a world-frame point cloud
//! ([`geometry`]) and averaged into a fixed grid ([`voxelizer`]). Keyframes
//! come from gripper changes and motion stops ([`trajectory`]); keyframe
//! poses become one-hot targets ([`targets`]). [`pipeline`] drives whole
//! episodes described by a [`manifest`].

pub mod bench;
pub mod episode_gen;
pub mod format;
pub mod geometry;
pub mod io;
pub mod manifest;
pub mod pipeline;
pub mod saliency;
pub mod synth;
pub mod targets;
pub mod trajectory;
pub mod voxelizer;

pub use geometry::{CameraIntrinsics, DepthImage, FeaturedPointCloud, RgbImage, RigidTransform};
pub use manifest::{load_manifest, LoadedEpisode};
pub use pipeline::{featurize_episode, PipelineConfig, PipelineError};
pub use saliency::{SaliencyConfig, SaliencyMap};
pub use trajectory::{extract_keyframes, DemonstrationEpisode, KeyframeConfig};
pub use voxelizer::{voxelize, GridDims, VoxelGrid, WorkspaceBounds};

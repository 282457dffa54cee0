use std::fs;
use std::path::{Path, PathBuf};

use voxelfeat::episode_gen::{write_synthetic_episode, SynthEpisodeConfig};
use voxelfeat::format;
use voxelfeat::io;
use voxelfeat::manifest::{load_manifest, parse_manifest, EpisodeManifest, ManifestError};
use voxelfeat::pipeline::{
    self, encode_episode_targets, exit, featurize_episode, write_featurized, PipelineConfig, PipelineError,
};
use voxelfeat::voxelizer::with_threads;
use voxelfeat::geometry::DepthImage;

fn small(k: usize) -> SynthEpisodeConfig {
    SynthEpisodeConfig { frames: 12, width: 24, height: 20, patch: 6, heads: 3, k, grid: 16, ..Default::default() }
}

fn episode(dir: &Path, k: usize, seed: u64) -> PathBuf {
    write_synthetic_episode(dir, &small(k), seed).unwrap()
}

fn read_manifest(path: &Path) -> EpisodeManifest {
    toml::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn manifest_error(path: &Path, text: &str) -> ManifestError {
    parse_manifest(text, path.parent().unwrap()).unwrap_err()
}

#[test]
fn synthetic_manifest_loads() {
    let dir = tempfile::tempdir().unwrap();
    let path = episode(dir.path(), 1, 0);
    let ep = load_manifest(&path).unwrap();
    assert_eq!(ep.episode.len(), 12);
    assert_eq!(ep.episode.cameras.len(), 3);
    assert_eq!(ep.dims.as_array(), [16, 16, 16]);
    // wrist cameras follow the arms, the front camera does not
    let wrist = &ep.episode.cameras[1].poses;
    assert_ne!(wrist[0], wrist[5]);
    assert_eq!(ep.episode.cameras[0].poses[0], ep.episode.cameras[0].poses[11]);
}

#[test]
fn manifest_two_frames_minimal() {
    let dir = tempfile::tempdir().unwrap();
    let path = episode(dir.path(), 1, 0);
    let mut m = read_manifest(&path);
    m.frames.truncate(2);
    m.cameras.truncate(1);
    for f in &mut m.frames {
        f.views.truncate(1);
    }
    let ep = parse_manifest(&m.to_toml(), dir.path()).unwrap();
    assert_eq!(ep.episode.len(), 2);
}

#[test]
fn manifest_rejects_wrong_depth_size() {
    let dir = tempfile::tempdir().unwrap();
    let path = episode(dir.path(), 1, 0);
    let m = read_manifest(&path);
    let depth = dir.path().join(&m.frames[3].views[1].depth);
    io::write_depth(&depth, &DepthImage::invalid(10, 10), 1e-4).unwrap();
    let err = load_manifest(&path).unwrap_err();
    match &err {
        ManifestError::DimensionMismatch { frame, camera, file, .. } => {
            assert_eq!((*frame, camera.as_str(), file.as_str()), (3, "wrist_left", "depth"));
        }
        other => panic!("unexpected {other}"),
    }
    assert_eq!(PipelineError::from(err).exit_code(), exit::SHAPE);
}

#[test]
fn manifest_rejects_unknown_version() {
    let dir = tempfile::tempdir().unwrap();
    let path = episode(dir.path(), 1, 0);
    let text = fs::read_to_string(&path).unwrap().replacen("version = 1", "version = 7", 1);
    let err = manifest_error(&path, &text);
    assert!(matches!(err, ManifestError::Version { found: 7 }));
    assert_eq!(PipelineError::from(err).exit_code(), exit::VERSION);
}

#[test]
fn manifest_reports_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = episode(dir.path(), 1, 0);
    let m = read_manifest(&path);
    fs::remove_file(dir.path().join(m.frames[0].views[2].saliency.as_ref().unwrap())).unwrap();
    let err = load_manifest(&path).unwrap_err();
    assert!(matches!(&err, ManifestError::MissingFile { field, .. } if field.contains("wrist_right")), "{err}");
    assert_eq!(PipelineError::from(err).exit_code(), exit::IO);
    let err = load_manifest(&dir.path().join("nope.toml")).unwrap_err();
    assert!(matches!(err, ManifestError::MissingFile { .. }));
}

#[test]
fn manifest_rejects_too_few_heads_and_bad_fields() {
    let dir = tempfile::tempdir().unwrap();
    let path = episode(dir.path(), 1, 0);
    let mut m = read_manifest(&path);
    m.saliency.k = 4;
    assert!(matches!(manifest_error(&path, &m.to_toml()), ManifestError::DimensionMismatch { .. }));
    let mut m = read_manifest(&path);
    m.frames[4].timestep = 2;
    assert!(matches!(manifest_error(&path, &m.to_toml()), ManifestError::Invalid { .. }));
    let mut m = read_manifest(&path);
    m.frames[0].left.ee_orientation = [1.0, 1.0, 0.0, 0.0];
    assert!(matches!(manifest_error(&path, &m.to_toml()), ManifestError::Invalid { .. }));
    let text = fs::read_to_string(&path).unwrap().replacen("depth_scale", "depth_scael", 1);
    assert!(matches!(manifest_error(&path, &text), ManifestError::Parse(_)));
}

#[test]
fn channel_counts_follow_k() {
    let dir = tempfile::tempdir().unwrap();
    for (k, channels) in [(0, 10), (1, 11), (3, 13)] {
        let sub = dir.path().join(format!("k{k}"));
        let ep = load_manifest(&episode(&sub, k, 0)).unwrap();
        let pairs = featurize_episode(&ep, &PipelineConfig::default(), 0).unwrap();
        assert!(!pairs.is_empty());
        assert!(pairs.iter().all(|p| p.grid.channels() == channels && p.grid.k() == k));
        assert!(pairs.iter().all(|p| p.grid.occupied_count() > 0));
    }
}

#[test]
fn featurize_is_deterministic_across_threads_and_runs() {
    let dir = tempfile::tempdir().unwrap();
    let ep = load_manifest(&episode(dir.path(), 2, 5)).unwrap();
    let cfg = PipelineConfig { augment: true, ..Default::default() };
    let run = |threads| {
        with_threads(threads, || featurize_episode(&ep, &cfg, 42).unwrap())
            .iter()
            .map(|p| (format::encode(&p.grid), p.record.clone()))
            .collect::<Vec<_>>()
    };
    let a = run(1);
    assert_eq!(a, run(4));
    assert_eq!(a, run(1));
    let other_seed: Vec<_> = featurize_episode(&ep, &cfg, 43).unwrap().into_iter().map(|p| p.record.transform).collect();
    assert_ne!(a.iter().map(|r| r.1.transform).collect::<Vec<_>>(), other_seed);
}

#[test]
fn view_order_in_manifest_does_not_matter() {
    let dir = tempfile::tempdir().unwrap();
    let path = episode(dir.path(), 1, 2);
    let base = load_manifest(&path).unwrap();
    let mut m = read_manifest(&path);
    for f in &mut m.frames {
        f.views.reverse();
    }
    let reordered = parse_manifest(&m.to_toml(), dir.path()).unwrap();
    let cfg = PipelineConfig::default();
    let a = featurize_episode(&base, &cfg, 0).unwrap();
    let b = featurize_episode(&reordered, &cfg, 0).unwrap();
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(format::encode(&x.grid), format::encode(&y.grid));
    }
}

#[test]
fn targets_match_between_featurize_and_encode() {
    let dir = tempfile::tempdir().unwrap();
    let ep = load_manifest(&episode(dir.path(), 1, 0)).unwrap();
    let cfg = PipelineConfig::default();
    let records = encode_episode_targets(&ep, &cfg).unwrap();
    let pairs = featurize_episode(&ep, &cfg, 0).unwrap();
    assert_eq!(records, pairs.iter().map(|p| p.record.clone()).collect::<Vec<_>>());
    // acting arm first, left acts in synthetic episodes
    assert!(records.iter().all(|r| r.acting.arm_id == 0 && r.stabilizing.arm_id == 1));
    assert!(records.iter().all(|r| r.target > r.observation));
}

#[test]
fn outputs_are_written_and_readable() {
    let dir = tempfile::tempdir().unwrap();
    let ep = load_manifest(&episode(&dir.path().join("ep"), 1, 0)).unwrap();
    let pairs = featurize_episode(&ep, &PipelineConfig::default(), 0).unwrap();
    let out = dir.path().join("out");
    let paths = write_featurized(&out, &pairs).unwrap();
    assert_eq!(paths.len(), pairs.len());
    for (p, pair) in paths.iter().zip(&pairs) {
        assert_eq!(format::read_grid(p).unwrap(), pair.grid);
    }
    let lines = fs::read_to_string(out.join("targets.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), pairs.len());
    let first: serde_json::Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    assert_eq!(first["grid"], pipeline::pair_file_name(pairs[0].record.observation, pairs[0].record.target));

    let report = pipeline::inspect(&paths[0], Some(&dir.path().join("slices"))).unwrap();
    assert_eq!(report.channels, 11);
    assert_eq!(report.occupied_voxels, pairs[0].grid.occupied_count());
    assert!(dir.path().join("slices/slice_occupancy.png").exists());

    let mut bytes = fs::read(&paths[0]).unwrap();
    bytes[format::HEADER_LEN + 3] ^= 0x40;
    fs::write(&paths[0], bytes).unwrap();
    let err = pipeline::inspect(&paths[0], None).unwrap_err();
    assert_eq!(err.exit_code(), exit::INTEGRITY);
}

#[test]
fn config_from_toml() {
    let cfg = PipelineConfig::from_toml(
        "augment = true\nmax_depth = 3.0\n[keyframes]\nvel_eps = 0.002\nrule = \"either\"\n[augmentation]\nmax_translation = [0.1, 0.1, 0.0]\n",
    )
    .unwrap();
    assert!(cfg.augment);
    assert_eq!(cfg.keyframes.vel_eps, 0.002);
    assert_eq!(cfg.keyframes.stationary_window, 2);
    assert_eq!(cfg.augmentation.max_attempts, 100);
    let err = PipelineConfig::from_toml("rotation_resolution_deg = 7.0").unwrap_err();
    assert_eq!(err.exit_code(), exit::PARAMETER);
    assert!(PipelineConfig::from_toml("bogus = 1").is_err());
}

#[test]
fn impossible_augmentation_has_its_own_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let ep = load_manifest(&episode(dir.path(), 1, 0)).unwrap();
    let mut cfg = PipelineConfig { augment: true, ..Default::default() };
    cfg.augmentation.max_translation = [50.0; 3];
    cfg.augmentation.max_attempts = 3;
    let err = featurize_episode(&ep, &cfg, 1).unwrap_err();
    assert_eq!(err.exit_code(), exit::AUGMENTATION, "{err}");
}

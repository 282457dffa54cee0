//! Acceptance suite. Runs every criterion in sequence (timings stay clean on a
//! single core), prints one PASS/FAIL line each and exits nonzero on failure.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use voxelfeat::bench::{frame_inputs, random_cloud, run_frame};
use voxelfeat::format::{self, grid_checksum, FormatError};
use voxelfeat::geometry::{backproject_pixel, fuse_views, CameraIntrinsics, RigidTransform, View};
use voxelfeat::saliency::{
    process_attention, threshold_attention, upsample_bilinear, SaliencyConfig, SaliencyMap, ThresholdMode,
    ThresholdOrder,
};
use voxelfeat::synth::{brute_force_voxelize, render_depth, SyntheticScene};
use voxelfeat::targets::{
    channel_loss, channel_loss_grad, quaternion_from_euler_zyx_degrees, se3_perturb, total_loss, ArmKeypose, ArmRole,
    PerturbLimits, TargetConfig,
};
use voxelfeat::trajectory::{extract_keyframes, motion_stop_keyframes, Arm, ArmState, DemonstrationEpisode, KeyframeConfig};
use voxelfeat::voxelizer::{channel_count, voxelize, with_threads, GridDims, VoxelGrid, WorkspaceBounds};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn unwrap<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

/// Independent binning: `floor((p - lo) / size)`, last bin closed.
fn oracle_index(p: [f64; 3], lo: [f64; 3], hi: [f64; 3], n: [usize; 3]) -> Option<[usize; 3]> {
    let mut out = [0; 3];
    for a in 0..3 {
        if p[a] < lo[a] || p[a] > hi[a] {
            return None;
        }
        let size = (hi[a] - lo[a]) / n[a] as f64;
        out[a] = (((p[a] - lo[a]) / size).floor() as usize).min(n[a] - 1);
    }
    Some(out)
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let bounds = WorkspaceBounds::cube([0.0; 3], 2.0).unwrap();
    let dims = GridDims::cube(50).unwrap();
    let cloud = random_cloud(10_000, 1, &bounds, 1);
    let fast = unwrap(voxelize(&cloud, &bounds, &dims, 1))?.grid;
    let slow = unwrap(brute_force_voxelize(&cloud, &bounds, &dims, 1))?;
    let nvox = dims.voxel_count();
    let mut worst = 0.0f32;
    for c in 0..fast.channels() {
        for i in 0..nvox {
            worst = worst.max((fast.channel(c)[i] - slow.channel(c)[i]).abs());
        }
    }
    let elapsed = start.elapsed();
    check(worst <= 1e-6, || format!("max channel difference {worst:e}"))?;
    check(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!("max |Δ| = {worst:e} over {} channels, {elapsed:.2?}", fast.channels()))
}

fn determinism() -> Outcome {
    let bounds = WorkspaceBounds::default();
    let dims = GridDims::default();
    for trial in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + trial);
        // a tight cluster so buckets hold many points each
        let inner = WorkspaceBounds::cube([rng.random_range(-0.5..0.5), 0.0, 0.2], 0.3).unwrap();
        let cloud = random_cloud(20_000, 1, &inner, trial);
        let mut perm: Vec<usize> = (0..cloud.len()).collect();
        perm.shuffle(&mut rng);
        let shuffled = cloud.permuted(&perm);
        let mut sums = Vec::new();
        for threads in [1, 2, 8] {
            for c in [&cloud, &shuffled] {
                let g = with_threads(threads, || voxelize(c, &bounds, &dims, 1)).unwrap().grid;
                sums.push(grid_checksum(&g));
            }
        }
        check(sums.iter().all(|s| *s == sums[0]), || format!("trial {trial}: checksums {sums:08x?}"))?;
    }
    Ok("20 trials × threads {1,2,8} × {original, permuted}: one checksum each".into())
}

fn channel_layout() -> Outcome {
    let bounds = WorkspaceBounds::default();
    let dims = GridDims::cube(8).unwrap();
    let mut got = Vec::new();
    for (k, want) in [(0, 10), (1, 11), (3, 13), (5, 15), (6, 16)] {
        let cloud = random_cloud(100, k, &bounds, k as u64);
        let g = unwrap(voxelize(&cloud, &bounds, &dims, k))?.grid;
        check(g.channels() == want && channel_count(k) == want, || format!("K={k}: {} channels", g.channels()))?;
        let bytes = format::encode(&g);
        check(bytes.len() == 80 + dims.voxel_count() * want * 4 + 4, || format!("K={k}: file size {}", bytes.len()))?;
        got.push(g.channels());
    }
    Ok(format!("K=0,1,3,5,6 → {got:?}"))
}

fn geometry_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let (w, h) = (rng.random_range(2..2000), rng.random_range(2..2000));
        let intr = CameraIntrinsics::new(
            rng.random_range(50.0..2000.0),
            rng.random_range(50.0..2000.0),
            rng.random_range(0.0..w as f64),
            rng.random_range(0.0..h as f64),
            w,
            h,
        )
        .unwrap();
        let (u, v) = (rng.random_range(0.0..(w - 1) as f64), rng.random_range(0.0..(h - 1) as f64));
        let d = rng.random_range(0.01..10.0);
        let q = quaternion_from_euler_zyx_degrees([
            rng.random_range(-180.0..180.0),
            rng.random_range(-89.0..89.0),
            rng.random_range(-180.0..180.0),
        ]);
        let pose = RigidTransform::from_quaternion(&q, [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]);
        let world = pose.apply(unwrap(backproject_pixel(u, v, d, &intr))?);
        let back = intr.project(pose.inverse().apply(world)).ok_or("point behind camera")?;
        for (a, b) in back.iter().zip([u, v, d]) {
            worst = worst.max((a - b).abs());
        }
    }
    check(worst < 1e-9, || format!("max error {worst:e}"))?;
    Ok(format!("10000 samples through random poses, max |Δ| = {worst:e}"))
}

fn synthetic_end_to_end() -> Outcome {
    let (center, radius) = ([0.1, -0.05, 0.2], 0.5);
    let scene = SyntheticScene::sphere(center, radius, [0.8, 0.2, 0.1], 0.9);
    let intr = CameraIntrinsics::from_fov(128, 128, 60.0).unwrap();
    let poses = [
        RigidTransform::look_at([0.0, -2.5, 0.6], center, [0.0, 0.0, 1.0]).unwrap(),
        RigidTransform::look_at([1.8, -1.6, 1.0], center, [0.0, 0.0, 1.0]).unwrap(),
        RigidTransform::look_at([-1.8, -1.6, 1.0], center, [0.0, 0.0, 1.0]).unwrap(),
    ];
    let rendered: Vec<_> = poses.iter().map(|p| render_depth(&scene, &intr, p)).collect();
    let views: Vec<View<'_>> = rendered
        .iter()
        .zip(&poses)
        .map(|(r, pose)| View { rgb: &r.rgb, depth: &r.depth, saliency: &r.saliency, intrinsics: &intr, pose })
        .collect();
    let cloud = unwrap(fuse_views(&views, 10.0))?;
    let bounds = WorkspaceBounds::cube([0.0; 3], 2.0).unwrap();
    let dims = GridDims::cube(50).unwrap();
    let grid = unwrap(voxelize(&cloud, &bounds, &dims, 1))?.grid;
    let edge = 2.0 / 50.0;
    let mut occupied = 0;
    let mut worst = 0.0f64;
    for lin in 0..dims.voxel_count() {
        let idx = dims.unlinear(lin);
        if !grid.is_occupied(idx) {
            continue;
        }
        occupied += 1;
        let (lo, hi) = grid.voxel_extent(idx);
        let c: Vec<f64> = (0..3).map(|a| 0.5 * (lo[a] + hi[a]) - center[a]).collect();
        let dist = ((c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt() - radius).abs();
        worst = worst.max(dist);
    }
    check(occupied > 0, || "no occupied voxels".into())?;
    check(worst <= edge, || format!("a voxel center lies {worst:.4} m from the surface"))?;
    Ok(format!("{} points, {occupied} occupied voxels, farthest voxel center {worst:.4} m (limit {edge} m)", cloud.len()))
}

/// Scalar align-corners bilinear reference.
fn reference_upsample(src: &[f64], sh: usize, sw: usize, th: usize, tw: usize) -> Vec<f64> {
    let mut out = vec![0.0; th * tw];
    for y in 0..th {
        let fy = y as f64 * (sh - 1) as f64 / (th - 1) as f64;
        let y0 = (fy.floor() as usize).min(sh - 1);
        let y1 = (y0 + 1).min(sh - 1);
        let dy = fy - y0 as f64;
        for x in 0..tw {
            let fx = x as f64 * (sw - 1) as f64 / (tw - 1) as f64;
            let x0 = (fx.floor() as usize).min(sw - 1);
            let x1 = (x0 + 1).min(sw - 1);
            let dx = fx - x0 as f64;
            let s = |yy: usize, xx: usize| src[yy * sw + xx];
            out[y * tw + x] = (1.0 - dy) * ((1.0 - dx) * s(y0, x0) + dx * s(y0, x1))
                + dy * ((1.0 - dx) * s(y1, x0) + dx * s(y1, x1));
        }
    }
    out
}

fn saliency_chain() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let src: Vec<f64> = (0..74 * 74).map(|_| rng.random::<f64>()).collect();
    let map = unwrap(SaliencyMap::new(74, 74, 1, src.clone()))?;
    let up = unwrap(upsample_bilinear(&map, 128, 128))?;
    let reference = reference_upsample(&src, 74, 74, 128, 128);
    let worst = up.data().iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    check(worst <= 1e-6, || format!("upsample differs by {worst:e}"))?;

    let t = unwrap(threshold_attention(&unwrap(SaliencyMap::new(1, 2, 1, vec![0.9, 0.3]))?, 0.6, ThresholdMode::ClampHigh))?;
    check((t.data()[0] - 1.0).abs() <= 1e-12 && (t.data()[1] - 0.5).abs() <= 1e-12, || format!("threshold gave {:?}", t.data()))?;

    let mut n = 0;
    for trial in 0..40 {
        let k = rng.random_range(1..=6);
        let raw: Vec<f64> = (0..74 * 74 * k).map(|_| rng.random::<f64>()).collect();
        let raw = unwrap(SaliencyMap::new(74, 74, k, raw))?;
        let cfg = SaliencyConfig {
            k: rng.random_range(1..=k),
            tau: rng.random_range(0.05..=1.0),
            mode: if trial % 2 == 0 { ThresholdMode::ClampHigh } else { ThresholdMode::ZeroLow },
            order: if trial % 4 < 2 { ThresholdOrder::UpsampleThenThreshold } else { ThresholdOrder::ThresholdThenUpsample },
        };
        let out = unwrap(process_attention(&raw, 128, 128, &cfg))?;
        check(out.data().iter().all(|v| (0.0..=1.0).contains(v)), || format!("trial {trial}: value outside [0, 1]"))?;
        n += out.data().len();
    }
    Ok(format!("74→128 max |Δ| vs reference = {worst:e}; 0.9→1.0, 0.3→0.5; {n} chain outputs in [0, 1]"))
}

fn loss_correctness() -> Outcome {
    let uniform = vec![1.0 / 72.0; 72];
    let mut y = vec![0.0; 72];
    y[17] = 1.0;
    let l = unwrap(channel_loss(&uniform, &y))?;
    check((l - 72f64.ln()).abs() <= 1e-9, || format!("uniform loss {l}"))?;
    let perfect = unwrap(channel_loss(&y, &y))?;
    check(perfect.abs() <= 1e-9, || format!("perfect loss {perfect}"))?;
    let total = unwrap(total_loss(&[1.0; 5], &[1.0; 5]))?;
    check(total == 10.0, || format!("total {total}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(2..80);
        let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
        let s: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= s);
        let mut y = vec![0.0; n];
        y[rng.random_range(0..n)] = 1.0;
        let g = unwrap(channel_loss_grad(&v, &y))?;
        for i in 0..n {
            let h = 1e-6 * v[i];
            let (mut a, mut b) = (v.clone(), v.clone());
            a[i] += h;
            b[i] -= h;
            let fd = (unwrap(channel_loss(&a, &y))? - unwrap(channel_loss(&b, &y))?) / (2.0 * h);
            let rel = (fd - g[i]).abs() / g[i].abs().max(1e-8);
            if g[i] != 0.0 {
                worst = worst.max(rel);
            } else {
                check(fd == 0.0, || "nonzero gradient off target".into())?;
            }
        }
    }
    check(worst <= 1e-4, || format!("gradient relative error {worst:e}"))?;
    Ok(format!("ln 72 |Δ| = {:e}; perfect = {perfect}; total = {total}; grad rel err {worst:e}", (l - 72f64.ln()).abs()))
}

fn moving(i: usize, phase: f64) -> [f64; 3] {
    let t = i as f64 * 0.1 + phase;
    [0.3 * t.sin(), 0.3 * t.cos(), 0.02 * i as f64 - 0.5]
}

/// Frames at which a still run of the configured window is in progress.
fn still_frames(ep: &DemonstrationEpisode, cfg: &KeyframeConfig) -> Vec<usize> {
    let mut out = Vec::new();
    let mut run = 1;
    for t in 0..ep.len() {
        if t > 0 {
            let still = |a: &ArmState, b: &ArmState| {
                let d: f64 = (0..3).map(|i| (a.ee_position[i] - b.ee_position[i]).powi(2)).sum::<f64>().sqrt();
                d / cfg.dt < cfg.vel_eps
            };
            let (p, c) = (&ep.frames[t - 1], &ep.frames[t]);
            run = if still(&p.left, &c.left) && still(&p.right, &c.right) { run + 1 } else { 1 };
        }
        if run >= cfg.stationary_window {
            out.push(t);
        }
    }
    out
}

fn random_episode(rng: &mut ChaCha8Rng, eps: f64, dt: f64) -> DemonstrationEpisode {
    let n = rng.random_range(20..120);
    let mut pos = [[0.0; 3], [0.5; 3]];
    let mut states = Vec::with_capacity(n);
    for _ in 0..n {
        for p in &mut pos {
            // step speeds straddle eps and 2·eps
            let speed = [0.0, 0.5, 1.5, 3.0][rng.random_range(0..4)] * eps;
            p[0] += speed * dt;
        }
        states.push((ArmState::at(pos[0], true), ArmState::at(pos[1], true)));
    }
    DemonstrationEpisode::from_states(states)
}

fn keyframes() -> Outcome {
    let states: Vec<_> = (0..100)
        .map(|i| {
            let open = !(10..57).contains(&i);
            (ArmState::at(moving(i, 0.0), open), ArmState::at(moving(i, 1.0), true))
        })
        .collect();
    let ep = DemonstrationEpisode::from_states(states);
    let cfg = KeyframeConfig::default();
    let keys = unwrap(extract_keyframes(&ep, &cfg))?;
    check(keys == vec![10, 57, 99], || format!("keyframes {keys:?}"))?;

    // Threshold monotonicity, in the form that holds under one emission per
    // still run: every keyframe at eps is covered by a keyframe at 2·eps that
    // starts no later and stays still through it, and the still-frame set only
    // grows.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut literal_violations = 0;
    for trial in 0..50 {
        let base = KeyframeConfig { stationary_window: rng.random_range(1..5), ..cfg };
        let doubled = KeyframeConfig { vel_eps: 2.0 * base.vel_eps, ..base };
        let ep = random_episode(&mut rng, base.vel_eps, base.dt);
        let (k1, k2) = (unwrap(motion_stop_keyframes(&ep, &base))?, unwrap(motion_stop_keyframes(&ep, &doubled))?);
        let (s1, s2) = (still_frames(&ep, &base), still_frames(&ep, &doubled));
        check(s1.iter().all(|t| s2.contains(t)), || format!("episode {trial}: still frames shrank"))?;
        for &k in &k1 {
            let covered = k2.iter().any(|&k2| k2 <= k && (k2..=k).all(|t| s2.contains(&t)));
            check(covered, || format!("episode {trial}: keyframe {k} at eps has no cover at 2·eps"))?;
        }
        if !k1.iter().all(|k| k2.contains(k)) {
            literal_violations += 1;
        }
    }
    Ok(format!(
        "{{10, 57, 99}} exact; 50 random episodes keep still frames monotone and every keyframe covered \
         (plain subset fails on {literal_violations}/50, as merged still runs emit once)"
    ))
}

fn augmentation() -> Outcome {
    let cfg = TargetConfig::default();
    let (lo, hi, n) = (cfg.bounds.min(), cfg.bounds.max(), cfg.dims.as_array());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let limits = PerturbLimits { max_rotation_deg: [45.0, 10.0, 10.0], ..PerturbLimits::default() };
    for draw in 0..1000u64 {
        let keyposes: Vec<ArmKeypose> = [(ArmRole::Acting, Arm::Left), (ArmRole::Stabilizing, Arm::Right)]
            .iter()
            .map(|&(role, arm)| {
                let p = [0, 1, 2].map(|_| rng.random_range(-0.6..0.6));
                ArmKeypose::from_state(role, arm, &ArmState::at(p, rng.random()))
            })
            .collect();
        let cloud = random_cloud(50, 1, &cfg.bounds, draw);
        let aug = unwrap(se3_perturb(&cloud, &keyposes, draw, &limits, &cfg))?;
        for (kp, target) in keyposes.iter().zip(&aug.targets) {
            let moved = aug.transform.apply(kp.position);
            let want = oracle_index(moved, lo, hi, n).ok_or_else(|| format!("draw {draw}: keypose left the workspace"))?;
            check(target.translation == want, || format!("draw {draw}: {:?} vs {want:?}", target.translation))?;
        }
        let expect = cloud.transformed(&aug.transform);
        check(aug.cloud.positions() == expect.positions(), || format!("draw {draw}: cloud not moved with targets"))?;
    }
    let keyposes = [ArmKeypose::from_state(ArmRole::Acting, Arm::Left, &ArmState::at([0.1, 0.2, 0.3], true))];
    let cloud = random_cloud(100, 2, &cfg.bounds, 0);
    let id = unwrap(se3_perturb(&cloud, &keyposes, 5, &PerturbLimits::zero(), &cfg))?;
    check(id.transform.is_identity(), || "zero limits moved the scene".into())?;
    check(id.cloud == cloud && id.keyposes == keyposes, || "zero limits changed the inputs".into())?;
    check(id.targets[0] == unwrap(keyposes[0].discretize(&cfg))?, || "zero limits changed the targets".into())?;
    Ok("1000 draws bin-exact against direct encoding; zero limits is the identity".into())
}

fn random_grid(rng: &mut ChaCha8Rng) -> VoxelGrid {
    let dims = GridDims::new(rng.random_range(1..12), rng.random_range(1..12), rng.random_range(1..12)).unwrap();
    let lo = [0, 1, 2].map(|_| rng.random_range(-5.0..0.0));
    let bounds = WorkspaceBounds::new(lo, lo.map(|v| v + rng.random_range(0.1..5.0))).unwrap();
    let k = rng.random_range(0..=6);
    let features = (0..dims.voxel_count() * channel_count(k)).map(|_| f32::from_bits(rng.random::<u32>() & 0x7f7f_ffff)).collect();
    VoxelGrid::from_features(dims, bounds, k, features).unwrap()
}

fn format_integrity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for i in 0..100 {
        let g = random_grid(&mut rng);
        let bytes = format::encode(&g);
        let back = unwrap(format::decode(&bytes))?;
        let same = back.features().iter().zip(g.features()).all(|(a, b)| a.to_bits() == b.to_bits())
            && back.dims() == g.dims()
            && back.bounds() == g.bounds()
            && back.k() == g.k()
            && format::encode(&back) == bytes;
        check(same, || format!("grid {i}: round trip differs"))?;
        let payload_bits = (bytes.len() - format::HEADER_LEN - format::FOOTER_LEN) * 8;
        let bit = rng.random_range(0..payload_bits);
        let mut bad = bytes.clone();
        bad[format::HEADER_LEN + bit / 8] ^= 1 << (bit % 8);
        check(matches!(format::decode(&bad), Err(FormatError::Integrity { .. })), || format!("grid {i}: bit {bit} flip undetected"))?;
    }
    Ok("100 round trips bitwise identical; 100/100 single-bit flips caught".into())
}

fn throughput() -> Outcome {
    let inputs = frame_inputs(1, 0);
    let bounds = WorkspaceBounds::default();
    let dims = GridDims::default();
    let mut times = with_threads(1, || {
        let points = run_frame(&inputs, &bounds, &dims);
        std::hint::black_box(points);
        (0..15)
            .map(|_| {
                let t = Instant::now();
                std::hint::black_box(run_frame(&inputs, &bounds, &dims));
                t.elapsed()
            })
            .collect::<Vec<_>>()
    });
    times.sort();
    let median = times[times.len() / 2];
    let occupied = with_threads(1, || run_frame(&inputs, &bounds, &dims)).occupied_count();
    check(median < Duration::from_millis(10), || format!("median {median:?} (best {:?})", times[0]))?;
    Ok(format!(
        "3×128×128 views ({} points, {occupied} occupied voxels) → 50³ K=1: median {median:.2?}, best {:.2?}, single thread",
        inputs.points(),
        times[0]
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("oracle equivalence", oracle_equivalence),
        ("determinism", determinism),
        ("channel layout", channel_layout),
        ("geometry round trip", geometry_round_trip),
        ("synthetic end-to-end", synthetic_end_to_end),
        ("saliency chain", saliency_chain),
        ("loss correctness", loss_correctness),
        ("keyframes", keyframes),
        ("augmentation consistency", augmentation),
        ("format integrity", format_integrity),
        ("throughput", throughput),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("PASS  {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL  {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

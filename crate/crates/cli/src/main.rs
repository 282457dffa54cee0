use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use voxelfeat::bench;
use voxelfeat::episode_gen::{self, SynthEpisodeConfig, SynthEpisodeError};
use voxelfeat::format::FormatError;
use voxelfeat::io::IoError;
use voxelfeat::pipeline::{self, exit, PipelineConfig, PipelineError};
use voxelfeat::voxelizer::{GridDims, VoxelError};
use voxelfeat::load_manifest;

/// Voxel featurization of multi-view RGB-D demonstrations.
#[derive(Debug, Parser)]
#[command(name = "voxelfeat", version)]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for augmentation and synthetic data.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "VOXELFEAT_THREADS")]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Voxelize every keyframe pair of an episode and write tensors plus targets.jsonl.
    Featurize {
        manifest: PathBuf,
        /// Apply a random SE(3) perturbation to each pair.
        #[arg(long)]
        augment: bool,
    },
    /// Print keyframe indices and observation/target pairs as JSON.
    Keyframes { manifest: PathBuf },
    /// Write discretized targets for every pair as JSON lines.
    EncodeTargets { manifest: PathBuf },
    /// Render a synthetic episode with a manifest.
    Synth {
        #[arg(long, default_value_t = 40)]
        frames: usize,
        /// Image width and height.
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Attention map side before upsampling.
        #[arg(long, default_value_t = 16)]
        patch: usize,
        /// Attention heads written per view.
        #[arg(long, default_value_t = 2)]
        heads: usize,
        /// Heads the pipeline uses.
        #[arg(long, default_value_t = 1)]
        k: usize,
        /// Grid cells per axis.
        #[arg(long, default_value_t = 50)]
        grid: usize,
    },
    /// Verify a tensor file and print per-channel statistics as JSON.
    Inspect {
        file: PathBuf,
        /// Also render the middle z-slice as PNGs into --output.
        #[arg(long)]
        render: bool,
    },
    /// Throughput report (TSV: scenario, points, threads, wall_ms, points_per_sec, checksum).
    Bench {
        /// Random points for the voxelize scenario.
        #[arg(long, default_value_t = 49_152)]
        points: usize,
        /// Grid cells per axis.
        #[arg(long, default_value_t = 50)]
        grid: usize,
        #[arg(long, default_value_t = 1)]
        k: usize,
        /// Thread counts to run; defaults to --threads or 1.
        #[arg(long, value_delimiter = ',')]
        thread_counts: Vec<usize>,
        /// Timed runs per scenario; the best is reported.
        #[arg(long, default_value_t = 5)]
        repeats: usize,
    },
}

fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<PipelineError>() {
            return e.exit_code();
        }
        if let Some(e) = cause.downcast_ref::<SynthEpisodeError>() {
            return match e {
                SynthEpisodeError::Parameter(_) => exit::PARAMETER,
                SynthEpisodeError::Io(_) => exit::IO,
            };
        }
        if let Some(e) = cause.downcast_ref::<FormatError>() {
            return pipeline::format_exit_code(e);
        }
        if cause.downcast_ref::<VoxelError>().is_some() {
            return exit::PARAMETER;
        }
        if cause.downcast_ref::<IoError>().is_some() || cause.downcast_ref::<std::io::Error>().is_some() {
            return exit::IO;
        }
    }
    exit::OTHER
}

fn pipeline_config(path: Option<&Path>) -> Result<PipelineConfig, PipelineError> {
    match path {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn output_dir(cli: &Cli, default: &str) -> PathBuf {
    cli.output.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn print_json(v: &serde_json::Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        anyhow::ensure!(n > 0, PipelineError::Config("--threads must be >= 1".into()));
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("thread pool")?;
    }
    match &cli.command {
        Command::Featurize { manifest, augment } => {
            let mut cfg = pipeline_config(cli.config.as_deref())?;
            cfg.augment |= *augment;
            let ep = load_manifest(manifest).map_err(PipelineError::from)?;
            let pairs = pipeline::featurize_episode(&ep, &cfg, cli.seed)?;
            let dir = output_dir(cli, "features");
            let written = pipeline::write_featurized(&dir, &pairs)?;
            println!("wrote {} tensors and targets.jsonl to {}", written.len(), dir.display());
        }
        Command::Keyframes { manifest } => {
            let cfg = pipeline_config(cli.config.as_deref())?;
            let ep = load_manifest(manifest).map_err(PipelineError::from)?;
            let (keyframes, pairs) = pipeline::episode_pairs(&ep, &cfg)?;
            let report = serde_json::json!({ "frames": ep.episode.len(), "keyframes": keyframes, "pairs": pairs });
            if let Some(dir) = &cli.output {
                fs::create_dir_all(dir)?;
                fs::write(dir.join("keyframes.json"), serde_json::to_string_pretty(&report)?)?;
            }
            print_json(&report)?;
        }
        Command::EncodeTargets { manifest } => {
            let cfg = pipeline_config(cli.config.as_deref())?;
            let ep = load_manifest(manifest).map_err(PipelineError::from)?;
            let records = pipeline::encode_episode_targets(&ep, &cfg)?;
            match &cli.output {
                Some(dir) => {
                    fs::create_dir_all(dir)?;
                    let path = dir.join("targets.jsonl");
                    pipeline::write_target_records(&path, &records)?;
                    println!("wrote {} records to {}", records.len(), path.display());
                }
                None => {
                    for r in &records {
                        println!("{}", serde_json::to_string(r)?);
                    }
                }
            }
        }
        Command::Synth { frames, size, patch, heads, k, grid } => {
            let cfg = SynthEpisodeConfig {
                frames: *frames,
                width: *size,
                height: *size,
                patch: *patch,
                heads: *heads,
                k: *k,
                grid: *grid,
                ..Default::default()
            };
            let dir = output_dir(cli, "synth_episode");
            let path = episode_gen::write_synthetic_episode(&dir, &cfg, cli.seed)?;
            println!("{}", path.display());
        }
        Command::Inspect { file, render } => {
            let render_dir = match (render, &cli.output) {
                (true, Some(d)) => Some(d.as_path()),
                (true, None) => Some(Path::new("slices")),
                (false, _) => None,
            };
            let report = pipeline::inspect(file, render_dir)?;
            print_json(&serde_json::to_value(&report)?)?;
        }
        Command::Bench { points, grid, k, thread_counts, repeats } => {
            let dims = GridDims::cube(*grid)?;
            let counts = if thread_counts.is_empty() { vec![cli.threads.unwrap_or(1)] } else { thread_counts.clone() };
            let mut reports = Vec::new();
            for &t in &counts {
                anyhow::ensure!(t > 0, PipelineError::Config("thread counts must be >= 1".into()));
                reports.push(bench::bench_voxelize(*points, dims, *k, t, *repeats, cli.seed)?);
                reports.push(bench::bench_frame(dims, *k, t, *repeats, cli.seed));
            }
            let tsv = bench::to_tsv(&reports);
            if let Some(dir) = &cli.output {
                fs::create_dir_all(dir)?;
                fs::write(dir.join("bench.tsv"), &tsv)?;
            }
            print!("{tsv}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

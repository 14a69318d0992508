use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use primivox::calibrate::CalibConfig;
use primivox::pipeline::commands::{self, read_toml, DepthSource, MANIFEST_FILE};
use primivox::pipeline::manifest::Dataset;
use primivox::synthworld::SceneSpec;
use primivox::voxelfuse::VoxelGridConfig;
use primivox::Error;

/// Metric depth from relative depth by view synthesis, and semantic voxel
/// fusion.
#[derive(Debug, Parser)]
#[command(name = "primivox", version)]
struct Cli {
    /// TOML configuration for the command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for per-frame parallelism.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Overrides the scene seed (synth only; other commands are deterministic).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic scene (`--config scene.toml`) into a frame set.
    Synth,
    /// Calibrate every target frame of a manifest.
    Calibrate {
        /// Frame-set manifest.
        #[arg(long, default_value = MANIFEST_FILE)]
        manifest: PathBuf,
    },
    /// Fuse target frames into a semantic voxel grid (`--config grid.toml`).
    Fuse {
        #[arg(long, default_value = MANIFEST_FILE)]
        manifest: PathBuf,
        /// Directory holding calibrated depth.
        #[arg(long, conflicts_with = "ground_truth")]
        calib: Option<PathBuf>,
        /// Fuse the manifest's ground-truth depth instead.
        #[arg(long)]
        ground_truth: bool,
    },
    /// Score a predicted grid against a ground-truth grid.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Number of semantic classes (default: read from grid.toml beside --pred).
        #[arg(long)]
        classes: Option<usize>,
        /// Ground-truth labels to leave out, comma-separated.
        #[arg(long, value_delimiter = ',')]
        ignore: Vec<u8>,
    },
}

fn require_config(cli: &Cli) -> Result<&Path, Error> {
    cli.config
        .as_deref()
        .ok_or_else(|| Error::Config("this command needs --config <file>".into()))
}

fn run(cli: &Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Synth => {
            let mut spec: SceneSpec = read_toml(require_config(cli)?)?;
            if let Some(seed) = cli.seed {
                spec.seed = seed;
            }
            let m = commands::synth(&spec, &cli.out)?;
            println!("wrote {} frames to {}", m.frames.len(), cli.out.display());
        }
        Command::Calibrate { manifest } => {
            let cfg: CalibConfig = match &cli.config {
                Some(p) => read_toml(p)?,
                None => CalibConfig::default(),
            };
            let ds = Dataset::open(manifest)?;
            for s in commands::calibrate_all(&ds, &cfg, &cli.out, cli.workers)? {
                println!(
                    "{}: scale {} gamma {} final loss {}",
                    s.frame,
                    s.scale,
                    s.gamma,
                    s.final_loss.map_or("-".into(), |l| l.to_string())
                );
            }
        }
        Command::Fuse {
            manifest,
            calib,
            ground_truth,
        } => {
            let cfg: VoxelGridConfig = read_toml(require_config(cli)?)?;
            let source = match (calib, ground_truth) {
                (Some(dir), _) => DepthSource::Calibrated(dir.clone()),
                (None, true) => DepthSource::GroundTruth,
                (None, false) => {
                    return Err(Error::Config(
                        "fuse needs --calib <dir> or --ground-truth".into(),
                    ))
                }
            };
            let ds = Dataset::open(manifest)?;
            let s = commands::fuse_all(&ds, &cfg, &source, &cli.out, cli.workers)?;
            println!(
                "fused {} frames into {} occupied voxels",
                s.frames.len(),
                s.grid.occupied()
            );
        }
        Command::Eval {
            pred,
            gt,
            classes,
            ignore,
        } => {
            let ignore: BTreeSet<u8> = ignore.iter().copied().collect();
            let report = commands::eval(pred, gt, *classes, &ignore, &cli.out)?;
            print!("{}", report.to_table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("error[E_USAGE]: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.code(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

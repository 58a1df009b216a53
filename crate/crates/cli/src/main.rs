use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use plvo::config::RunConfig;
use plvo::pipeline::run_pipeline;
use plvo::synthetic::generate_scene;
use plvo::trajectory::{cdf_csv, errors_csv, evaluate_ate, Trajectory};

/// Stereo point-line visual odometry on synthetic scenes or precomputed
/// feature files.
#[derive(Parser, Debug)]
#[command(name = "plvo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the pipeline and write trajectory, map dump and metrics.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Overrides `seed` from the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Points-only variant.
        #[arg(long)]
        no_lines: bool,
    },
    /// Absolute trajectory error between two TUM files.
    Eval {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Per-frame error CSV; the cumulative curve goes next to it with a
        /// `_cdf` suffix.
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthetic scene utilities.
    Scene {
        #[command(subcommand)]
        command: SceneCommand,
    },
}

#[derive(Subcommand, Debug)]
enum SceneCommand {
    /// Generate a scene from the `[scene]` section and `seed` of a config.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn cdf_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "ate".into());
    out.with_file_name(format!("{stem}_cdf.csv"))
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Run { config, output, seed, no_lines } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if no_lines {
                cfg.use_lines = false;
            }
            cfg.output_dir = Some(output.clone());
            let out = run_pipeline(&cfg)?;
            out.write(&output)?;
            let failures = out.reports.iter().filter(|r| r.tracking_failed).count();
            println!(
                "frames {} keyframes {} points {} lines {} tracking failures {}",
                out.reports.len(),
                out.keyframe_count(),
                out.map.points().len(),
                out.map.lines().len(),
                failures
            );
            if let Some(ate) = &out.ate {
                println!("ATE RMSE {:.6e} m over {} poses", ate.rmse, ate.errors.len());
            }
            println!("outputs written to {}", output.display());
        }
        Command::Eval { est, gt, out } => {
            let est = Trajectory::from_tum(&std::fs::read_to_string(&est)?)?;
            let gt = Trajectory::from_tum(&std::fs::read_to_string(&gt)?)?;
            let ate = evaluate_ate(&est, &gt)?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(&out, errors_csv(&ate.errors))?;
            std::fs::write(cdf_path(&out), cdf_csv(&ate.errors))?;
            println!("ATE RMSE {:.6e} m over {} poses", ate.rmse, ate.errors.len());
        }
        Command::Scene { command: SceneCommand::Gen { config, out, seed } } => {
            let cfg = RunConfig::load(&config)?;
            let scene = generate_scene(&cfg.scene, seed.unwrap_or(cfg.seed))?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(&out, scene.to_json()?)?;
            println!(
                "scene with {} points, {} lines, {} frames written to {}",
                scene.landmarks.len(),
                scene.gt_lines.len(),
                scene.trajectory.len(),
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

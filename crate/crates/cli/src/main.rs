use std::path::PathBuf;
use std::process::ExitCode;

use calibcube::commands::{default_evaluation_path, ReportSource};
use calibcube::{cmd_calibrate, cmd_evaluate, cmd_report, cmd_simulate, CliError};
use clap::{Args, Parser, Subcommand};

/// Extrinsic calibration of an event camera, a LiDAR and an RGB camera
/// with a LED cube target.
#[derive(Parser)]
#[command(name = "calibcube", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scene and write its sensor files, ground truth and a
    /// ready-to-run pipeline.toml.
    Simulate {
        /// Scene config (TOML). Defaults to the built-in noiseless rig.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scene seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run all detection branches and both extrinsic solves.
    Calibrate {
        /// Pipeline config (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Overrides output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the pipeline seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare a calibration against simulator ground truth.
    Evaluate {
        /// Calibration JSON written by `calibrate`.
        #[arg(long)]
        calib: PathBuf,
        #[arg(long)]
        groundtruth: PathBuf,
        /// Evaluation JSON (default: <calib>_evaluation.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw the projected point cloud over an image or an event frame.
    Report(ReportArgs),
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    calib: PathBuf,
    #[arg(long)]
    cloud: PathBuf,
    /// Intrinsics (TOML) of the calibrated camera.
    #[arg(long)]
    intrinsics: PathBuf,
    #[arg(long, conflicts_with = "events", required_unless_present = "events")]
    image: Option<PathBuf>,
    #[arg(long)]
    events: Option<PathBuf>,
    /// Start of the 33.333 ms event frame (default: first event).
    #[arg(long, requires = "events")]
    t0_us: Option<u64>,
    /// Output SVG.
    #[arg(long)]
    out: PathBuf,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { config, out, seed } => {
            let manifest = cmd_simulate(config.as_deref(), &out, seed)?;
            println!(
                "wrote {} files to {} (config digest {})",
                manifest.files.len() + 1,
                out.display(),
                manifest.config_digest
            );
        }
        Command::Calibrate { config, out, seed } => {
            let output = cmd_calibrate(&config, out.as_deref(), seed)?;
            for (name, cal) in &output.report.calibrations {
                if let calibcube::commands::BranchReport::Ok(c) = cal {
                    println!(
                        "{name}: E_mean {:.3} px, E_max {:.3} px over {} points",
                        c.mean_px, c.max_px, c.points
                    );
                }
            }
            println!("outputs in {}", output.output_dir.display());
        }
        Command::Evaluate {
            calib,
            groundtruth,
            out,
        } => {
            let eval = cmd_evaluate(&calib, &groundtruth, out.as_deref())?;
            println!("{} -> {}", eval.source, eval.target);
            println!("rotation error: {:.6} deg", eval.rotation_error_deg);
            println!("translation error: {:.6} m", eval.translation_error_m);
            println!(
                "reprojection delta vs ground truth: mean {:.4} px, max {:.4} px",
                eval.reprojection_delta_mean_px, eval.reprojection_delta_max_px
            );
            let written = out.unwrap_or_else(|| default_evaluation_path(&calib));
            println!("wrote {}", written.display());
        }
        Command::Report(args) => {
            let source = match (args.image, args.events) {
                (Some(image), _) => ReportSource::Image(image),
                (None, Some(path)) => ReportSource::Events {
                    path,
                    t0_us: args.t0_us,
                },
                (None, None) => unreachable!("enforced by clap"),
            };
            let out = cmd_report(
                &args.calib,
                &args.cloud,
                &source,
                &args.intrinsics,
                &args.out,
            )?;
            println!(
                "{} points drawn into {}",
                out.points_drawn,
                args.out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

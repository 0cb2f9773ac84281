//! `kdf-bench`: run the synthetic voting study, sweep its parameters, time
//! the voting stage, or generate a scene archive.
//!
//! Exit code 0 on success. On failure, a single machine-readable JSON line
//! `{"error": ...}` goes to stderr and the exit code is nonzero.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use kdfield_bench::{
    archive::generate_archive, config::SweepAxis, run_experiment, sweep, time_voting,
    ExperimentConfig,
};

#[derive(Parser)]
#[command(
    name = "kdf-bench",
    about = "Distance-based keypoint voting benchmark",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment config (TOML); defaults apply for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's scene count.
    #[arg(long)]
    scenes: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write config.toml, aggregates.csv, and
    /// records.ndjson to the output directory.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one experiment per value of a parameter axis and write
    /// sweep.csv (one row per value and metric) plus per-value reports.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        out: PathBuf,
        /// Axis: num_keypoints | theta | num_hypotheses | sigma_t |
        /// occluder_radius.
        #[arg(long)]
        axis: String,
        /// Comma-separated grid values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Time the voting stage and print the median milliseconds.
    Time {
        #[command(flatten)]
        common: CommonArgs,
        /// Write timing.json here as well.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Repetitions for the median (clamped to at least 1).
        #[arg(long, default_value_t = 25)]
        reps: usize,
    },
    /// Generate a scene archive: per-scene JSON plus binary field files.
    Gen {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(common: &CommonArgs) -> Result<ExperimentConfig, Box<dyn std::error::Error>> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::from_path(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.master_seed = seed;
    }
    if let Some(scenes) = common.scenes {
        config.scenes = scenes;
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Run { common, out } => {
            let config = load_config(&common)?;
            let report = run_experiment(&config)?;
            report.write_to_dir(&out)?;
            for (name, value) in &report.aggregates {
                println!("{name} = {value}");
            }
            println!("report written to {}", out.display());
        }
        Command::Sweep {
            common,
            out,
            axis,
            values,
        } => {
            let config = load_config(&common)?;
            let axis: SweepAxis = axis.parse()?;
            let result = sweep(&config, axis, &values)?;
            result.write_to_dir(&out)?;
            for (value, report) in &result.runs {
                let acc = report
                    .aggregate("distance_full_acc_toy")
                    .unwrap_or(f64::NAN);
                println!("{axis} = {value}: distance_full_acc_toy = {acc}");
            }
            println!("sweep written to {}", out.display());
        }
        Command::Time { common, out, reps } => {
            let config = load_config(&common)?;
            let record = time_voting(&config, reps)?;
            println!(
                "voting: median {:.3} ms over {} repetitions ({} voters, {} hypotheses)",
                record.median_ms, record.repetitions, record.num_voters, record.hypotheses
            );
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                let path = dir.join("timing.json");
                std::fs::write(&path, serde_json::to_string_pretty(&record)?)?;
                println!("timing written to {}", path.display());
            }
        }
        Command::Gen { common, out } => {
            let config = load_config(&common)?;
            let written = generate_archive(&config, &out)?;
            println!("{written} scenes written to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("{}", serde_json::json!({ "error": error.to_string() }));
            ExitCode::FAILURE
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hmt_core::pipeline::{self, EvaluateInputs, Method, PipelineConfig};
use hmt_core::Error;

/// Slice-wise head motion tracking for fMRI.
#[derive(Parser)]
#[command(name = "hmt", version)]
struct Cli {
    /// JSON pipeline config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Seed {
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Hmt,
    S2v,
    V2v,
    None,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Hmt => Method::Hmt,
            MethodArg::S2v => Method::S2v,
            MethodArg::V2v => Method::V2v,
            MethodArg::None => Method::None,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render a phantom dataset with ground truth.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        seed: Seed,
    },
    /// Estimate the static offset, rotation center and motion covariance.
    Calibrate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        seed: Seed,
    },
    /// Estimate per-slice motion.
    Track {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        calibration: PathBuf,
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        seed: Seed,
    },
    /// Build motion-corrected volumes from a trajectory.
    Reconstruct {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        calibration: PathBuf,
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Voxelwise permutation test on reconstructed volumes.
    Activate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        recon: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        seed: Seed,
    },
    /// Compare a trajectory and its activation map against ground truth.
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        calibration: PathBuf,
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long)]
        activation: Option<PathBuf>,
        #[arg(long)]
        recon: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        seed: Seed,
    },
    /// Plot evaluation outputs as SVG.
    Report {
        /// NAME=DIR pointing at an evaluate output directory; repeatable.
        #[arg(long = "run", value_parser = parse_run, required = true)]
        runs: Vec<(String, PathBuf)>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_run(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, dir)) if !name.is_empty() && !dir.is_empty() => Ok((name.to_string(), PathBuf::from(dir))),
        _ => Err(format!("expected NAME=DIR, got {s:?}")),
    }
}

fn run(cli: Cli) -> Result<String, Error> {
    let cfg = PipelineConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Simulate { out, seed } => pipeline::simulate(&cfg, &out, seed.seed),
        Command::Calibrate { dataset, out, seed } => pipeline::calibrate(&cfg, &dataset, &out, seed.seed),
        Command::Track { dataset, calibration, method, out, seed } => {
            pipeline::track(&cfg, &dataset, &calibration, method.into(), &out, seed.seed)
        }
        Command::Reconstruct { dataset, calibration, trajectory, out } => {
            pipeline::reconstruct(&dataset, &calibration, &trajectory, &out)
        }
        Command::Activate { dataset, recon, out, seed } => pipeline::activate(&cfg, &dataset, &recon, &out, seed.seed),
        Command::Evaluate { dataset, calibration, trajectory, activation, recon, out, seed } => {
            let inputs = EvaluateInputs { dataset, calibration, trajectory, activation, recon };
            pipeline::evaluate(&cfg, &inputs, &out, seed.seed)
        }
        Command::Report { runs, out } => pipeline::report(&runs, &out),
    }
}

fn report_error(kind: &str, message: &str) {
    let message = message.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', " ");
    eprintln!("error: kind={kind} message=\"{message}\"");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            report_error("Usage", first.strip_prefix("error: ").unwrap_or(first));
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            report_error(e.kind(), &e.to_string());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

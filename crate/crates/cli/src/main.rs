//! `gptraj`: run geometric-phase trajectory experiments from a TOML
//! configuration and write CSV tables plus a JSON manifest.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 configuration error, 3 numerical
//! guard tripped during the run.

mod config;
mod modes;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;

use config::{ExperimentConfig, Mode};
use output::RunRecord;

#[derive(Parser, Debug)]
#[command(name = "gptraj", version, about = "Geometric phases of monitored qubit trajectories")]
struct Cli {
    /// TOML experiment file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (defaults to the available parallelism).
    #[arg(long, env = "GPTRAJ_WORKERS")]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    omega_ratio: Option<f64>,
    #[arg(long)]
    gamma_ratio: Option<f64>,
    #[arg(long)]
    theta_pi_units: Option<f64>,
    #[arg(long)]
    gz_ratio: Option<f64>,
    #[arg(long)]
    lambda_ratio: Option<f64>,
    #[arg(long)]
    ntraj: Option<u64>,
    #[arg(long)]
    dt: Option<f64>,
}

const EXIT_IO: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

impl Cli {
    fn experiment(&self) -> Result<ExperimentConfig, config::Diagnostics> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        let p = &mut cfg.params;
        cfg.mode = self.mode.or(cfg.mode);
        cfg.seed = self.seed.unwrap_or(cfg.seed);
        p.omega_ratio = self.omega_ratio.unwrap_or(p.omega_ratio);
        p.gamma_ratio = self.gamma_ratio.unwrap_or(p.gamma_ratio);
        p.theta_pi_units = self.theta_pi_units.unwrap_or(p.theta_pi_units);
        p.gz_ratio = self.gz_ratio.unwrap_or(p.gz_ratio);
        p.lambda_ratio = self.lambda_ratio.unwrap_or(p.lambda_ratio);
        p.ntraj = self.ntraj.unwrap_or(p.ntraj);
        p.dt = self.dt.or(p.dt);
        if let Some(out) = &self.out {
            cfg.output.dir = out.clone();
        }
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let resolved = match cli.experiment().and_then(ExperimentConfig::validate) {
        Ok(r) => r,
        Err(diag) => {
            eprintln!("gptraj: invalid configuration\n{diag}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let workers = match cli.workers {
        Some(0) => {
            eprintln!("gptraj: invalid configuration\n  --workers: must be >= 1");
            return ExitCode::from(EXIT_CONFIG);
        }
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("gptraj: cannot start worker pool: {e}");
            return ExitCode::from(EXIT_IO);
        }
    };

    let started = Instant::now();
    let artifacts = match modes::run(&modes::Ctx { pool: &pool, run: &resolved }) {
        Ok(a) => a,
        Err(e @ gptraj_core::Error::InvalidParams(_)) => {
            eprintln!("gptraj: invalid configuration\n  params: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
        Err(e) => {
            eprintln!("gptraj: numerical guard tripped: {e}");
            return ExitCode::from(EXIT_NUMERICAL);
        }
    };
    let wall = started.elapsed().as_secs_f64();

    // The output directory is a circumstance of the run, not part of it.
    let dir = resolved.config.output.dir.clone();
    let mut recorded = resolved.config.clone();
    recorded.output.dir = PathBuf::new();
    let run = RunRecord {
        tool: env!("CARGO_PKG_NAME"),
        code_version: env!("CARGO_PKG_VERSION"),
        mode: resolved.mode.name(),
        seed: resolved.config.seed,
        config: &recorded,
        results: &artifacts.results,
    };
    match output::write_all(&dir, &run, &artifacts, workers, wall) {
        Ok(files) => {
            eprintln!("gptraj: {} finished in {wall:.1}s with {workers} worker(s)", resolved.mode.name());
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("gptraj: cannot write outputs to {}: {e}", dir.display());
            ExitCode::from(EXIT_IO)
        }
    }
}

//! rollsim: simulate rolling a Riemannian manifold along random Euclidean
//! curves with slipping and twisting, and probe the stability of the traces.
//!
//! Exit codes: 0 success, 1 numerical-invariant failure, 2 config/IO error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "rollsim", version, about = "Rolling with random slipping and twisting")]
struct Cli {
    /// JSON run configuration; CLI flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (must exist).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads (falls back to ROLLSIM_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Roll the manifold along the configured curve and emit the trace.
    Develop {
        #[arg(long)]
        t: Option<f64>,
        #[arg(long)]
        h: Option<f64>,
    },
    /// Roll along randomly slipped/twisted curves; emits (original,
    /// perturbed, trace) file triplets per noise scale.
    Roll {
        #[arg(long)]
        t: Option<f64>,
        #[arg(long)]
        h: Option<f64>,
        #[arg(long)]
        twist_eps: Option<f64>,
    },
    /// Evaluate the action functional of the configured development.
    Rate {
        #[arg(long)]
        t: Option<f64>,
        #[arg(long)]
        h: Option<f64>,
    },
    /// Rare-event Monte Carlo scan over noise scales.
    Scan {
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        replicas: Option<usize>,
        #[arg(long)]
        t: Option<f64>,
        #[arg(long)]
        h: Option<f64>,
    },
    /// Jump-measure condition tables and tightness diagnostics.
    Check,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(classify(&e))
        }
    }
}

/// Numerical failures exit 1; configuration and IO problems exit 2.
fn classify(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(re) = cause.downcast_ref::<rollsim_core::RollError>() {
            return match re {
                rollsim_core::RollError::Io(_) => 2,
                rollsim_core::RollError::Serialize(_) => 2,
                _ => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    2
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let mut cfg = RunConfig::load(cli.config.as_ref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = cli.out_dir {
        cfg.out_dir = Some(dir);
    }
    if let Some(threads) = cli.threads {
        cfg.threads = Some(threads);
    }
    if cfg.threads.is_none() {
        if let Ok(v) = std::env::var("ROLLSIM_THREADS") {
            cfg.threads = Some(v.parse().map_err(|_| {
                anyhow::anyhow!("ROLLSIM_THREADS must be a positive integer, got {v:?}")
            })?);
        }
    }
    if let Some(n) = cfg.threads {
        // Only affects scheduling; results are stream-seeded per replica.
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .ok();
    }
    let out_dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    if !out_dir.is_dir() {
        anyhow::bail!("output directory {} does not exist", out_dir.display());
    }

    match cli.command {
        Command::Develop { t, h } => {
            apply_grid(&mut cfg, t, h);
            commands::cmd_develop(&cfg, &out_dir)?;
            Ok(true)
        }
        Command::Roll { t, h, twist_eps } => {
            apply_grid(&mut cfg, t, h);
            if let Some(te) = twist_eps {
                cfg.roll.twist_eps = te;
            }
            commands::cmd_roll(&cfg, &out_dir)?;
            Ok(true)
        }
        Command::Rate { t, h } => {
            apply_grid(&mut cfg, t, h);
            commands::cmd_rate(&cfg, &out_dir)?;
            Ok(true)
        }
        Command::Scan { eta, replicas, t, h } => {
            apply_grid(&mut cfg, t, h);
            if let Some(eta) = eta {
                cfg.scan.eta = eta;
            }
            if let Some(r) = replicas {
                cfg.scan.replicas = r;
            }
            commands::cmd_scan(&cfg, &out_dir)?;
            Ok(true)
        }
        Command::Check => commands::cmd_check(&cfg, &out_dir),
    }
}

fn apply_grid(cfg: &mut RunConfig, t: Option<f64>, h: Option<f64>) {
    if let Some(t) = t {
        cfg.grid.t = t;
    }
    if let Some(h) = h {
        cfg.grid.h = h;
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use resinv_cli::commands::{cmd_certify, cmd_invariants, cmd_pipeline, cmd_resonances, cmd_trace, Status};
use resinv_cli::config::RunConfig;

/// Resonances, trace invariants and potential reconstruction.
#[derive(Parser)]
#[command(name = "resinv", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 0 lets rayon decide.
    #[arg(long, global = true, env = resinv_cli::THREADS_ENV)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Resonances in a window: resonances.csv, resonances.json.
    Resonances,
    /// h-sweep of the trace and the h² fit: trace_sweep.csv, fit.json.
    Trace,
    /// Moment invariants M_k, N_k: moments.csv, moments.json.
    Invariants,
    /// Moments, distribution and radiality certificate: certificate.json.
    Certify,
    /// Everything from moments to the reconstructed potential.
    Pipeline,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Some(path) = cli.config.as_deref() else {
        eprintln!("error: --config is required");
        return ExitCode::from(1);
    };
    let cfg = match RunConfig::load(path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let out = cli.out.or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("."));
    if let Err(e) = std::fs::create_dir_all(&out) {
        eprintln!("error: cannot create {}: {e}", out.display());
        return ExitCode::from(1);
    }
    let run = match cli.command {
        Command::Resonances => cmd_resonances,
        Command::Trace => cmd_trace,
        Command::Invariants => cmd_invariants,
        Command::Certify => cmd_certify,
        Command::Pipeline => cmd_pipeline,
    };
    match run(&cfg, &out) {
        Ok(Status::Complete) => ExitCode::SUCCESS,
        Ok(Status::Truncated) => {
            eprintln!("warning: resonance search truncated at max_count; output is partial");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

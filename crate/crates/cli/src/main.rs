mod commands;
mod manifest;
mod model_args;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::{CoupleArgs, ExactArgs, MpcArgs, RejectArgs, SampleArgs, SimArgs};
use crate::model_args::ModelArgs;

/// Sampling and mixing-time analysis for conditional products of
/// log-concave measures (canonical Fermi statistics and relatives).
#[derive(Parser, Debug)]
#[command(name = "canon-sampler", version, propagate_version = true)]
struct Cli {
    /// Worker threads (default: available parallelism). Results do not
    /// depend on this value.
    #[arg(long, global = true, env = "CANON_SAMPLER_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw configurations by running the chain.
    Sample(SampleArgs),
    /// Exact d(t), mixing time and bound by enumeration (small models).
    Exact(ExactArgs),
    /// Coupling-time statistics of the colored or delta coupling.
    Couple(CoupleArgs),
    /// Ensemble estimate of dbar(t) and t_hat per temperature.
    Sim(SimArgs),
    /// Like `sim`, defaulting to the full temperature grid.
    Sweep(SimArgs),
    /// Most probable configuration (greedy), or all maximizers.
    Mpc(MpcArgs),
    /// Concavity parameter delta and the site normalizer l_delta.
    Delta(ModelArgs),
    /// Rejection-sampling cost against a multinomial envelope.
    RejectRatio(RejectArgs),
    /// The equivalent Fermi model on vacancies.
    Dualize(ModelArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = || match &cli.command {
        Command::Sample(a) => commands::sample(a),
        Command::Exact(a) => commands::exact(a),
        Command::Couple(a) => commands::couple(a),
        Command::Sim(a) => commands::sim(a, false),
        Command::Sweep(a) => commands::sim(a, true),
        Command::Mpc(a) => commands::mpc(a),
        Command::Delta(a) => commands::delta(a),
        Command::RejectRatio(a) => commands::reject_ratio(a),
        Command::Dualize(a) => commands::dualize(a),
    };
    let result = match cli.threads {
        Some(0) => Err(commands::CliError::Usage("--threads must be positive".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(run),
            Err(e) => Err(commands::CliError::Io(e.to_string())),
        },
        None => run(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

mod commands;
mod config;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "thinbeam", version, about = "Thin brittle strips: energies, limits and rigidity tools")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, or a file path for single-table commands.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for every randomized path.
    #[arg(long, global = true, default_value_t = thinbeam::checks::DEFAULT_SEED)]
    pub seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Table format for written files and stdout summaries.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Relaxed bending modulus of a plane tensor.
    BendingConstant,
    /// Truss determinant, line function and optional inversion.
    TrussDet,
    /// Evaluate the rescaled energy of a field with a crack.
    EvalEh,
    /// Phase-field minimization on the strip.
    #[command(name = "solve-2d")]
    Solve2d,
    /// Global minimizer of the discrete beam functional.
    SolveBeam,
    /// Recovery energies along a sequence of thicknesses.
    GammaSweep,
    /// Good/bad partition, bridges and piecewise rigid fields.
    Compactness,
    /// Run the built-in verification suite.
    PaperChecks,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("THINBEAM_LOG")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(CliError::config(e.to_string().trim_end())),
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool: {e}");
        }
    }
    match commands::run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => fail(e),
    }
}

fn fail(e: CliError) -> ExitCode {
    eprintln!("{}", e.to_json());
    ExitCode::from(e.exit_code() as u8)
}

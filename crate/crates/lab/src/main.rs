use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use czlab::commands::{self, Verdict};

/// Numerical checks of the operator-valued Calderón-Zygmund machinery.
///
/// Exit status: 0 when every check passes, 1 when a check fails, 2 on usage,
/// configuration or input errors.
#[derive(Parser)]
#[command(name = "czlab", version)]
struct Cli {
    /// Replaces the seed of the config or spec.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for `run`, output file for `check` and `oracle`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (all cores by default).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Runs the checks of a config file and writes reports.
    Run { config: PathBuf },
    /// Generates corpus fields (and optionally bundles) from a spec file.
    Gen { spec: PathBuf, out: PathBuf },
    /// Runs one check on a bundle or field file.
    Check { bundle: PathBuf, check_id: String },
    /// Evaluates a scalar oracle operation on a 1 x 1 field file.
    Oracle { field: PathBuf, op_id: String },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.jobs == Some(0) {
        eprintln!("error: --jobs must be positive");
        return ExitCode::from(2);
    }
    let result = match &cli.command {
        Command::Run { config } => commands::run(config, cli.out.clone(), cli.seed, cli.jobs),
        Command::Gen { spec, out } => commands::gen(spec, out, cli.seed),
        Command::Check { bundle, check_id } => commands::check(bundle, check_id, cli.out.as_deref()),
        Command::Oracle { field, op_id } => commands::oracle_op(field, op_id, cli.out.as_deref()),
    };
    match result {
        Ok(Verdict::Pass) => ExitCode::SUCCESS,
        Ok(Verdict::Fail) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

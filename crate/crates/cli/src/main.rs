use clap::{Parser, Subcommand};
use mdlreg_cli::commands;
use mdlreg_cli::config::{Flags, Settings};
use mdlreg_cli::output::error_json;

/// MDL generalization-bound curves and Gaussian-mixture prior training.
#[derive(Parser)]
#[command(name = "mdlreg", version, about)]
struct Cli {
    #[command(flatten)]
    flags: Flags,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bound-comparison table (divergence bound vs square-root bound) as CSV.
    BoundsCurve,
    /// Residual (correction-term) curve as CSV.
    BoundsResidual,
    /// Randomized KL sandwich check with a Monte-Carlo oracle (JSON report).
    KlCheck,
    /// Fit a prior bank to a posterior CSV and serialize it as JSON.
    PriorFit,
    /// Train encoder/decoder over the beta x seed grid; metrics CSVs plus
    /// summary JSONs.
    Train,
    /// Analytic-vs-numeric gradient check across regularizer kinds (JSON).
    Gradcheck,
}

fn run() -> anyhow::Result<i32> {
    let cli = Cli::parse();
    let settings = Settings::resolve(&cli.flags)?;
    match cli.command {
        Command::BoundsCurve => commands::bounds_curve(&settings),
        Command::BoundsResidual => commands::bounds_residual(&settings),
        Command::KlCheck => commands::kl_check(&settings),
        Command::PriorFit => commands::prior_fit(&settings),
        Command::Train => commands::run_train(&settings),
        Command::Gradcheck => commands::gradcheck(&settings),
    }
}

fn main() {
    match run() {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("{}", error_json(&err));
            std::process::exit(1);
        }
    }
}

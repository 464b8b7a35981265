#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "multical",
    version,
    about = "Learn, audit and post-process multicalibrated predictors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic instance (population, truth, collection, outcomes).
    Gen(GenArgs),
    /// Run a learner on an instance.
    Learn(LearnArgs),
    /// Audit a predictor against the instance truth; exit 1 on violations.
    Audit(AuditArgs),
    /// Calibrate on C together with the level sets of a predictor family.
    Postprocess(PostprocessArgs),
    /// Answer a weak agnostic learning query on labels via multicalibration.
    Reduce(ReduceArgs),
    /// Tabulate learner traces as CSV.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    HalfQualified,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlgorithmArg {
    Multicalibration,
    MultiAe,
    WeakAgnostic,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OracleArg {
    Exact,
    Empirical,
    Private,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Overrides applied on top of a learner configuration file.
#[derive(Debug, Args)]
pub struct Overrides {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub oracle: Option<OracleArg>,
}

#[derive(Debug, Args)]
pub struct LearnArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "multicalibration")]
    pub algorithm: AlgorithmArg,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long, conflicts_with = "program", required_unless_present = "program")]
    pub predictor: Option<PathBuf>,
    #[arg(long)]
    pub program: Option<PathBuf>,
    #[arg(long)]
    pub alpha: f64,
    #[arg(long)]
    pub lambda: f64,
    /// Directory for audit.json and the manifest; the report goes to stdout otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PostprocessArgs {
    #[arg(long)]
    pub instance: PathBuf,
    /// Directory of candidate predictors (`*.csv`) and programs (`*.json`).
    #[arg(long)]
    pub family: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct ReduceArgs {
    #[arg(long)]
    pub labels: PathBuf,
    /// Instance directory providing population.csv and collection.json.
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(required = true)]
    pub traces: Vec<PathBuf>,
    /// CSV destination; stdout otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Exit statuses shared by all commands.
pub mod exit {
    pub const OK: u8 = 0;
    pub const VIOLATION: u8 = 1;
    pub const BAD_INPUT: u8 = 2;
    pub const REFUSED: u8 = 3;
    pub const GUARD: u8 = 4;
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use multical::Error;
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::BudgetExhausted(_) | Error::InsufficientSample { .. }) => exit::REFUSED,
        Some(Error::GuardTripped { .. }) => exit::GUARD,
        _ => exit::BAD_INPUT,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Learn(a) => commands::learn(a),
        Command::Audit(a) => commands::audit(a),
        Command::Postprocess(a) => commands::postprocess(a),
        Command::Reduce(a) => commands::reduce(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use multical::Error;

    #[test]
    fn exit_codes_follow_error_kind() {
        let refused = anyhow::Error::from(Error::BudgetExhausted("cap".into())).context("learning");
        assert_eq!(exit_code(&refused), exit::REFUSED);
        let guard = anyhow::Error::from(Error::GuardTripped { updates: 3, limit: 2.0 });
        assert_eq!(exit_code(&guard), exit::GUARD);
        assert_eq!(exit_code(&anyhow::anyhow!("bad")), exit::BAD_INPUT);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}

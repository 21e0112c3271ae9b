mod commands;
mod config;
mod output;

use std::fmt;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use config::ConfigArgs;
use output::Report;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numeric(qfield::Error),
    Check(String),
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) | CliError::Check(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error at {m}"),
            CliError::Numeric(e) => write!(f, "{e}"),
            CliError::Check(m) => write!(f, "check failed: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<qfield::Error> for CliError {
    fn from(e: qfield::Error) -> Self {
        CliError::Numeric(e)
    }
}

/// Random walks, Green functions and Gaussian fields on Z_q^d.
#[derive(Debug, Parser)]
#[command(name = "qfield", version)]
struct Cli {
    #[command(flatten)]
    args: ConfigArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Eigenvalues rho_r of the walk (CSV).
    Eigen,
    /// Exact normalized Green function (CSV).
    Green,
    /// Empirical killed-walk endpoint law against the exact row (CSV).
    McGreen,
    /// Samples of the Gaussian field (CSV).
    SampleField,
    /// Multivariate Krawtchouk table with its orthogonality residual.
    Krawtchouk,
    /// Count-chain eigenvalues kappa_l by both routes, with lambda_l.
    Kappa,
    /// Moments E[prod Y^l] of the point process.
    Pointproc,
    /// Quadratic-form identity checks and the partition function.
    Hamiltonian,
    /// Gaussian partition function J and Z.
    Partition,
    /// Potts Hamiltonians driven by the field.
    Potts,
    /// Large-d limits: Krawtchouk polynomials, Green density and log Z.
    Limit,
    /// Deterministic regression suite.
    Verify,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Eigen => "eigen",
            Command::Green => "green",
            Command::McGreen => "mc-green",
            Command::SampleField => "sample-field",
            Command::Krawtchouk => "krawtchouk",
            Command::Kappa => "kappa",
            Command::Pointproc => "pointproc",
            Command::Hamiltonian => "hamiltonian",
            Command::Partition => "partition",
            Command::Potts => "potts",
            Command::Limit => "limit",
            Command::Verify => "verify",
        }
    }
}

fn failed_checks(report: &Report) -> Option<String> {
    let Report::Json(value) = report else { return None };
    if value.get("pass") != Some(&serde_json::Value::Bool(false)) {
        return None;
    }
    let names: Vec<String> = value["checks"]
        .as_array()
        .into_iter()
        .flatten()
        .filter(|c| c["pass"] == serde_json::Value::Bool(false))
        .map(|c| format!("{} = {}", c["name"].as_str().unwrap_or("?"), c["value"]))
        .collect();
    Some(names.join(", "))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let settings = cli.args.resolve()?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(settings.threads)
        .build_global()
        .map_err(|e| CliError::Config(format!("/threads: {e}")))?;
    let start = Instant::now();
    let report = match cli.command {
        Command::Eigen => commands::eigen(&settings),
        Command::Green => commands::green(&settings),
        Command::McGreen => commands::mc_green(&settings),
        Command::SampleField => commands::sample_field_cmd(&settings),
        Command::Krawtchouk => commands::krawtchouk(&settings),
        Command::Kappa => commands::kappa_cmd(&settings),
        Command::Pointproc => commands::pointproc(&settings),
        Command::Hamiltonian => commands::hamiltonian(&settings),
        Command::Partition => commands::partition(&settings),
        Command::Potts => commands::potts(&settings),
        Command::Limit => commands::limit(&settings),
        Command::Verify => commands::verify(&settings),
    }?;
    let failed = failed_checks(&report);
    output::emit(report, &settings, cli.command.name(), start.elapsed())?;
    match failed {
        Some(names) => Err(CliError::Check(names)),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qfield: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

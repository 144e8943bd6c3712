pub mod bench;
pub mod io;
pub mod scale;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use fairshare::gen::{generate, Distribution, GenError, GenSpec};
use fairshare::mms::{mms_approx, mms_exact, MmsError, MmsRecord, DEFAULT_EXACT_CAP};
use fairshare::solvers::SolveError;
use fairshare::verify::{fairness_report, VerifyError};
use fairshare::{solve, Goal, Ratio, SolverConfig};
use serde_json::json;
use thiserror::Error;

use crate::io::{emit, read_allocation, read_instance, read_json, to_json};
use crate::scale::ScaleError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Mms(#[from] MmsError),
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Scale(#[from] ScaleError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    /// 1 usage, 2 precondition or validation failure, 3 invariant breach.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Solve(SolveError::Invariant { .. }) => 3,
            _ => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Io { .. } => "io",
            CliError::Parse { .. } => "parse",
            CliError::Solve(SolveError::Invariant { .. }) => "invariant-breach",
            CliError::Solve(SolveError::Mms(MmsError::CapExceeded { .. })) | CliError::Mms(MmsError::CapExceeded { .. }) => {
                "cap-exceeded"
            }
            _ => "invalid",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "fairshare", version, about = "Approximate maximin-share allocations with EFX or EF1 guarantees")]
pub struct Cli {
    /// Largest number of goods the exact MMS engine accepts.
    #[arg(long, global = true, default_value_t = DEFAULT_EXACT_CAP)]
    pub exact_cap: usize,
    /// Record solver trace events to this file (`bench`: a directory).
    #[arg(long, global = true, value_name = "PATH")]
    pub trace: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Notion {
    Efx,
    Ef1,
    Mms,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a random instance.
    Gen {
        #[arg(long)]
        agents: usize,
        #[arg(long)]
        goods: usize,
        /// uniform:LO:HI, identical:LO:HI or bivalued:A:B:P/Q
        #[arg(long, default_value = "uniform:0:100")]
        distribution: Distribution,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-agent maximin shares with witness partitions.
    Mms {
        #[arg(long)]
        instance: PathBuf,
        /// Use the approximate engine with this loss.
        #[arg(long, default_value = "0")]
        epsilon: Ratio,
        /// Number of parts (defaults to the number of agents).
        #[arg(long)]
        parts: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute an allocation for one goal.
    Solve {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, default_value = "efx-mms")]
        goal: Goal,
        #[arg(long, default_value = "0")]
        epsilon: Ratio,
        #[arg(long, default_value = "0")]
        delta: Ratio,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check an allocation (or a solve report) against an instance.
    Verify {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        allocation: PathBuf,
        #[arg(long, default_value = "1")]
        alpha: Ratio,
        /// Restrict to one notion; MMS is skipped for efx and ef1.
        #[arg(long, value_enum)]
        notion: Option<Notion>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve every instance of a corpus directory and write a CSV report.
    Bench {
        #[arg(long)]
        corpus: PathBuf,
        /// Comma-separated goals.
        #[arg(long, value_delimiter = ',', default_values = ["mms", "efx-mms", "ef1-mms"])]
        goals: Vec<Goal>,
        #[arg(long, default_value = "0")]
        epsilon: Ratio,
        #[arg(long, default_value = "0")]
        delta: Ratio,
        /// Worker threads (defaults to available parallelism).
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rescale decimal or p/q valuations to integers.
    Scale {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1_000_000)]
        denominator_bound: u128,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let exact_cap = cli.exact_cap;
    let trace = cli.trace;
    match cli.command {
        Command::Gen { agents, goods, distribution, seed, out } => {
            let inst = generate(&GenSpec { agents, goods, distribution, seed })?;
            emit(out.as_ref(), &to_json(&inst))
        }
        Command::Mms { instance, epsilon, parts, out } => {
            let inst = read_instance(&instance)?;
            let parts = parts.unwrap_or(inst.agents());
            let records = (0..inst.agents())
                .map(|i| {
                    if epsilon.is_zero() {
                        mms_exact(&inst, i, parts, exact_cap)
                    } else {
                        mms_approx(&inst, i, parts, epsilon)
                    }
                })
                .collect::<Result<Vec<MmsRecord>, _>>()?;
            emit(out.as_ref(), &to_json(&records))
        }
        Command::Solve { instance, goal, epsilon, delta, out } => {
            let inst = read_instance(&instance)?;
            let cfg = SolverConfig { epsilon, delta, exact_cap, trace: trace.is_some(), ..SolverConfig::default() };
            let mut report = solve(&inst, goal, &cfg)?;
            if let Some(path) = &trace {
                emit(Some(path), &to_json(&std::mem::take(&mut report.trace)))?;
            }
            emit(out.as_ref(), &to_json(&report))
        }
        Command::Verify { instance, allocation, alpha, notion, out } => {
            let inst = read_instance(&instance)?;
            let x = read_allocation(&allocation, &inst)?;
            let records = match notion {
                None | Some(Notion::Mms) => Some(
                    (0..inst.agents())
                        .map(|i| mms_exact(&inst, i, inst.agents(), exact_cap))
                        .collect::<Result<Vec<_>, _>>()?,
                ),
                _ => None,
            };
            let report = fairness_report(&inst, &x, alpha, records.as_deref())?;
            emit(out.as_ref(), &to_json(&report))
        }
        Command::Bench { corpus, goals, epsilon, delta, jobs, out } => {
            let config = SolverConfig { epsilon, delta, exact_cap, trace: trace.is_some(), ..SolverConfig::default() };
            config.validate()?;
            if let Some(dir) = &trace {
                std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
            }
            let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let rows = bench::run(&bench::BenchArgs { corpus: &corpus, goals: &goals, config, jobs, trace_dir: trace.as_deref() })?;
            let mut buf = Vec::new();
            bench::write_csv(&rows, &mut buf)?;
            emit(out.as_ref(), &String::from_utf8(buf).expect("csv output is utf-8"))
        }
        Command::Scale { input, denominator_bound, out } => {
            let file: scale::RationalFile = read_json(&input)?;
            let scaled = scale::scale(&file, denominator_bound)?;
            emit(out.as_ref(), &to_json(&scaled))
        }
    }
}

/// Parses arguments, runs, and returns the process exit code. Errors go to
/// stderr as a JSON object `{"error": kind, "message": text}`.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            e.exit_code()
        }
    }
}

//! Command-line front end.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage error,
//! 3 internal inconsistency or numerical failure.

mod commands;
pub mod output;
pub mod verify;

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

use output::{Format, Rendered};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

/// Environment variable capping the worker-thread count.
pub const THREADS_ENV: &str = "BEAMCAST_THREADS";

#[derive(Debug, Parser)]
#[command(name = "beamcast", version, about = "Threshold feedback analysis for opportunistic beamforming")]
pub struct Cli {
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Json, global = true)]
    pub format: Format,
    /// Write output here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Report rates in bits instead of nats.
    #[arg(long, global = true)]
    pub bits: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Copy)]
pub struct ModelArgs {
    /// Number of beams (transmit antennas).
    #[arg(long, short = 'm')]
    pub beams: usize,
    /// Average SNR (linear).
    #[arg(long)]
    pub snr: f64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the Schur-concavity condition, closed form against grid.
    Check {
        #[command(flatten)]
        model: ModelArgs,
        /// Grid size for the numeric check.
        #[arg(long, default_value_t = 1000)]
        grid: usize,
    },
    /// Maximize the sum rate under a feedback budget.
    Optimize {
        #[command(flatten)]
        model: ModelArgs,
        /// Number of users.
        #[arg(long, short = 'n')]
        users: usize,
        /// Feedback budget (expected reporters per beam).
        #[arg(long)]
        lambda: f64,
        /// Pattern search starts: uniform, then one-hot, then random.
        #[arg(long, default_value_t = 8)]
        starts: usize,
        /// Pattern search stops once the step falls below this.
        #[arg(long, default_value_t = 1e-7)]
        step_tol: f64,
        #[arg(long, default_value_t = 2000)]
        max_iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Monte Carlo estimate of a policy's rate, next to the analytic value.
    #[command(group(ArgGroup::new("policy").required(true).args(["thresholds", "probs", "lambda"])))]
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        /// Per-user SINR thresholds (comma separated, `inf` allowed).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        thresholds: Option<Vec<f64>>,
        /// Per-user feedback probabilities (comma separated).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        probs: Option<Vec<f64>>,
        /// Homogeneous policy: number of users.
        #[arg(long, short = 'n', requires = "lambda")]
        users: Option<usize>,
        /// Homogeneous policy: feedback budget.
        #[arg(long, requires = "users")]
        lambda: Option<f64>,
        /// Channel draws.
        #[arg(long, default_value_t = 1_000_000)]
        samples: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Users report only their strongest beam (no analytic counterpart).
        #[arg(long)]
        best_beam_only: bool,
    },
    /// Tabulate the rate along one parameter axis.
    Sweep {
        /// Parameter to vary.
        #[arg(long, value_enum)]
        axis: Axis,
        /// Number of beams (transmit antennas).
        #[arg(long, short = 'm')]
        beams: usize,
        /// Average SNR (fixed for the lambda and q axes).
        #[arg(long)]
        snr: Option<f64>,
        /// Range start (snr and lambda axes).
        #[arg(long)]
        from: Option<f64>,
        /// Range end (snr and lambda axes).
        #[arg(long)]
        to: Option<f64>,
        /// Grid points along the axis.
        #[arg(long, default_value_t = 21)]
        points: usize,
        /// Number of users (the q axis always uses two).
        #[arg(long, short = 'n', default_value_t = 2)]
        users: usize,
        /// Feedback budget (fixed for the snr and q axes).
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        /// Add Monte Carlo columns with this many samples per row.
        #[arg(long)]
        mc_samples: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the cross-validation battery.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scales every tolerance; used to exercise the failure path.
        #[arg(long, hide = true, default_value_t = 1.0)]
        tolerance_scale: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Snr,
    Lambda,
    Q,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Internal(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

/// A rendered result plus the exit code it implies.
pub struct Outcome {
    pub rendered: Rendered,
    pub exit_code: i32,
}

fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var(THREADS_ENV) {
        let n: usize = raw
            .trim()
            .parse()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV}={raw:?} is not a positive integer")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| CliError::Internal(format!("thread pool: {e}")))
}

fn execute(cli: &Cli) -> Result<Outcome, CliError> {
    let pool = thread_pool()?;
    pool.install(|| commands::dispatch(cli))
}

fn emit(cli: &Cli, outcome: &Outcome, stdout: &mut dyn Write) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Internal(format!("write failed: {e}"));
    match &cli.out {
        Some(path) => {
            let file = File::create(path)
                .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", path.display())))?;
            let mut w = BufWriter::new(file);
            output::write(&mut w, &outcome.rendered, cli.format).map_err(io)?;
            w.flush().map_err(io)
        }
        None => output::write(stdout, &outcome.rendered, cli.format).map_err(io),
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Diagnostics go to stderr.
pub fn run<I, T>(args: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            if code == 0 {
                let _ = write!(stdout, "{e}");
            } else {
                let _ = e.print();
            }
            return if code == 0 { EXIT_OK } else { EXIT_USAGE };
        }
    };
    let result = execute(&cli).and_then(|outcome| {
        emit(&cli, &outcome, stdout)?;
        Ok(outcome.exit_code)
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            match &e {
                CliError::Usage(msg) => eprintln!("error: {msg}"),
                CliError::Internal(msg) => eprintln!("internal error: {msg}"),
            }
            e.exit_code()
        }
    }
}

//! `molcom` command-line pipeline: simulate, preprocess, fit, train,
//! evaluate and report, with every run echoing its resolved configuration.

mod commands;
pub mod config;
pub mod svg;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use molcom::preprocess::SegmentMode;

pub use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation or out-of-domain argument (exit 1).
    Usage(String),
    /// Unreadable, unwritable or malformed data or configuration (exit 2).
    Data(String),
    /// Non-finite loss, failed fit and similar numerical failures (exit 3).
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl From<molcom::Error> for CliError {
    fn from(e: molcom::Error) -> Self {
        if e.is_numeric() {
            CliError::Numeric(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "molcom",
    version,
    about = "Diffusion-channel CSK simulation and CNN demodulation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON run configuration (a saved run.json works too).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Run everything on one thread.
    #[arg(long, global = true)]
    pub deterministic: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a corpus of transmissions (transmissions.jsonl).
    Gen {
        #[command(flatten)]
        common: Common,
        /// Number of transmissions.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        n: Option<u64>,
        /// Symbols per transmission.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        msg_len: Option<u64>,
        /// Alphabet size C.
        #[arg(long)]
        alphabet: Option<usize>,
        /// Symbol rate in Hz.
        #[arg(long)]
        rate: Option<f64>,
    },
    /// Turn a corpus into a labeled segment dataset.
    Preprocess {
        #[command(flatten)]
        common: Common,
        /// transmissions.jsonl produced by `gen`.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "slope", value_parser = parse_mode)]
        mode: SegmentMode,
    },
    /// Fit the parametrized arrival model to a measured `t_s,value` CSV.
    FitChannel {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Train the CNN demodulator on a segment dataset.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory holding header.json, data.f32 and labels.u8.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        fc_width: Option<usize>,
        #[arg(long)]
        max_epochs: Option<usize>,
    },
    /// Evaluate a trained model (and the threshold baseline) on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Directory holding manifest.json and weights.bin.
        #[arg(long)]
        model: PathBuf,
        /// Tolerated residual bit error rate for the net rate.
        #[arg(long, default_value_t = 0.01)]
        pb: f64,
        /// Symbol rate, if the dataset does not record it.
        #[arg(long)]
        rate: Option<f64>,
    },
    /// Net data rate bound R = Rg (1 - H2(f)) / (1 - H2(pb)).
    Capacity {
        #[command(flatten)]
        common: Common,
        /// Gross rate in bit/s.
        #[arg(long)]
        rg: f64,
        /// Channel bit error rate.
        #[arg(long, required_unless_present = "target")]
        f: Option<f64>,
        #[arg(long, default_value_t = 0.01)]
        pb: f64,
        /// Also report the largest f that still reaches this net rate.
        #[arg(long)]
        target: Option<f64>,
    },
    /// Combine evaluation outputs into tables and plots.
    Report {
        #[command(flatten)]
        common: Common,
        /// Output directories of `eval` runs.
        #[arg(long = "eval", required = true, num_args = 1..)]
        evals: Vec<PathBuf>,
        /// Corpus whose first transmission is plotted.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
}

fn parse_mode(s: &str) -> Result<SegmentMode, String> {
    s.parse().map_err(|e: molcom::Error| e.to_string())
}

/// Runs the CLI on `args` and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
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
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("molcom: {e}");
            e.exit_code()
        }
    }
}

//! Batch front end: synthetic session generation and the warp, reconstruction and frame-selection evaluations.

mod args;
pub mod output;
mod plot;
pub mod policy_eval;
pub mod recon_eval;
pub mod synth_cmd;
pub mod warp_eval;

use std::ffi::OsString;
use std::fmt;

use clap::{Parser, Subcommand};

pub use args::{F64List, Room, UsizeList};

/// Exit status for a successful run.
pub const EXIT_OK: i32 = 0;
/// Exit status when computation fails after flags were accepted.
pub const EXIT_FAILURE: i32 = 1;
/// Exit status for malformed or inconsistent flags.
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "sparsense", version, about = "Geometry-aware RGBD warping, sparse reconstruction and frame-selection evaluation")]
pub struct Cli {
    /// Worker threads [default: logical cores].
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic box-room session.
    Synth(synth_cmd::SynthArgs),
    /// Warp sampled frame pairs and score them against the real target frames.
    WarpEval(warp_eval::WarpEvalArgs),
    /// Reconstruct a session at one or more frame strides and compare against ground truth.
    ReconEval(recon_eval::ReconEvalArgs),
    /// Run frame-selection policies or the overlap curve over a parameter sweep.
    PolicyEval(policy_eval::PolicyEvalArgs),
}

/// Flag values rejected before any work starts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

enum Plan {
    Synth(synth_cmd::SynthPlan),
    Warp(warp_eval::WarpPlan),
    Recon(recon_eval::ReconPlan),
    Policy(policy_eval::PolicyPlan),
}

impl Command {
    fn plan(self) -> Result<Plan, UsageError> {
        Ok(match self {
            Command::Synth(a) => Plan::Synth(a.plan()?),
            Command::WarpEval(a) => Plan::Warp(a.plan()?),
            Command::ReconEval(a) => Plan::Recon(a.plan()?),
            Command::PolicyEval(a) => Plan::Policy(a.plan()?),
        })
    }
}

fn execute(plan: &Plan) -> anyhow::Result<()> {
    match plan {
        Plan::Synth(p) => synth_cmd::execute(p),
        Plan::Warp(p) => warp_eval::execute(p),
        Plan::Recon(p) => recon_eval::execute(p),
        Plan::Policy(p) => policy_eval::execute(p),
    }
}

/// Parses `args` (program name first), runs the command and returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let jobs = cli.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if jobs == 0 {
        eprintln!("error: --jobs must be at least 1");
        return EXIT_USAGE;
    }
    let plan = match cli.command.plan() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: worker pool: {e}");
            return EXIT_FAILURE;
        }
    };
    match pool.install(|| execute(&plan)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_FAILURE
        }
    }
}

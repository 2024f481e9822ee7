//! `xshark`: profile, record, replay, analyze, suggest and apply.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "xshark",
    version,
    about = "Record-and-replay performance analysis for a toy ML accelerator"
)]
pub struct Cli {
    /// Simulator config (JSON form of SimConfig). Defaults apply when unset.
    #[arg(long, global = true, env = "XSHARK_CONFIG", value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Assemble a kernel into a program file.
    Asm {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Print a program file (or assembly) back as assembly.
    Disasm {
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Write a generated workload as assembly.
    Gen(GenArgs),
    /// Run a program to completion and optionally log its events.
    Run {
        program: PathBuf,
        #[arg(long, default_value_t = 100_000_000)]
        max_cycles: u64,
        /// Event log output (JSON lines).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Record a trace window starting at a breakpoint.
    Record {
        program: PathBuf,
        /// Label, region name or pc of the first recorded instruction.
        #[arg(long = "break", value_name = "LABEL|REGION|PC")]
        breakpoint: String,
        /// Open the window on this hit of the breakpoint.
        #[arg(long, default_value_t = 1)]
        hit: u32,
        /// Instructions to record.
        #[arg(long)]
        count: u64,
        /// Step past in-flight DMAs at the breakpoint instead of refusing.
        #[arg(long)]
        fast_forward: bool,
        #[arg(long, default_value_t = 100_000_000)]
        max_cycles: u64,
        #[arg(long, value_enum, default_value_t = FormatArg::Binary)]
        format: FormatArg,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Replay a trace and log its events.
    Replay {
        trace: PathBuf,
        /// Replay under a config other than the recording one.
        #[arg(long)]
        allow_config_mismatch: bool,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Analyze an event log into a report directory.
    Analyze {
        events: PathBuf,
        /// DMA timeline.
        #[arg(long)]
        dma: bool,
        /// Per-unit utilization series.
        #[arg(long)]
        util: bool,
        /// VMEM occupancy heatmap.
        #[arg(long)]
        vmem: bool,
        /// Dependency graph and suggestions.
        #[arg(long)]
        deps: bool,
        /// Program the log came from, for region labels.
        #[arg(long)]
        program: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        bucket_width: u64,
        #[arg(long, default_value_t = 64)]
        sample_interval: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Suggest DMA hoists from a trace and its replay log.
    Suggest {
        trace: PathBuf,
        events: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Apply suggestions to a trace by replaying a reordered stream.
    Apply {
        trace: PathBuf,
        suggestions: PathBuf,
        /// Check each suggestion alone first and apply only verified ones.
        #[arg(long)]
        verify: bool,
        /// Event log of the reordered replay.
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Compare two event logs: cycles, stalls and final state.
    Compare { baseline: PathBuf, candidate: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Text,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Workload {
    Starvation,
    Allgather,
    Checkerboard,
    Random,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    pub workload: Workload,
    /// Starvation: weight tiles.
    #[arg(long, default_value_t = 12)]
    pub tiles: usize,
    /// Starvation: tiles in flight ahead of the one being multiplied.
    #[arg(long, default_value_t = 1)]
    pub depth: usize,
    /// All-gather: metadata already resident.
    #[arg(long)]
    pub pinned: bool,
    /// All-gather: issue setup DMAs together.
    #[arg(long)]
    pub parallel_setup: bool,
    /// All-gather: payload bytes per group.
    #[arg(long, default_value_t = 3072)]
    pub payload: u64,
    /// Checkerboard: VMEM pages covered.
    #[arg(long, default_value_t = 32768)]
    pub pages: u64,
    /// Checkerboard: hold-phase iterations.
    #[arg(long, default_value_t = 200)]
    pub hold: u32,
    /// Random: seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random: approximate instruction count.
    #[arg(long, default_value_t = 120)]
    pub size: usize,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

/// A failure with its machine-readable code and exit status.
#[derive(Debug)]
pub struct CliError {
    pub code: String,
    pub message: String,
    pub exit: u8,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self::new("USAGE", message, 1)
    }

    pub fn new(code: impl Into<String>, message: impl Into<String>, exit: u8) -> Self {
        Self {
            code: code.into(),
            message: message.into(),
            exit,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.render().to_string();
            eprintln!("code:USAGE: {}", text.trim_start_matches("error: ").trim_end());
            return ExitCode::from(1);
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("code:{}: {}", e.code, e.message);
            ExitCode::from(e.exit)
        }
    }
}

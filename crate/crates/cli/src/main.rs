//! Command-line front end: single runs, persistent-mode fuzzing, the demo
//! corpus and trace comparison.
//!
//! Exit codes are stable for scripting: 0 halted, 2 crashed, 3 timed out,
//! 64 usage error, 1 any other failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pmcu::harness::{self, HarnessError, RunOptions, RunReport, TestcaseSource};
use pmcu::machine::{render, RunResult, TickConfig};

const EXIT_HALTED: u8 = 0;
const EXIT_FAILURE: u8 = 1;
const EXIT_CRASHED: u8 = 2;
const EXIT_TIMEOUT: u8 = 3;
const EXIT_USAGE: u8 = 64;

#[derive(Parser, Debug)]
#[command(name = "pmcu", version, about = "Run rehosted MCU firmware on the host")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a firmware once.
    Run {
        firmware: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run a firmware over many testcases, each on a fresh machine.
    Fuzz(FuzzArgs),
    /// List or run the built-in demos.
    #[command(subcommand)]
    Demo(DemoCommand),
    /// Compare two trace files event by event.
    TraceDiff { a: PathBuf, b: PathBuf },
}

#[derive(Subcommand, Debug)]
enum DemoCommand {
    List,
    Run {
        name: String,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TickMode {
    /// A tick every N checkpoints; runs are reproducible.
    Det,
    /// A tick every N microseconds of task CPU time.
    Vt,
}

#[derive(Args, Debug)]
struct MachineArgs {
    #[arg(long, value_enum, default_value = "det")]
    tick_mode: TickMode,
    /// Checkpoints (det) or microseconds (vt) between ticks.
    #[arg(long)]
    tick_period: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scheduler events before a run is stopped as a timeout; 0 is unlimited.
    #[arg(long, default_value_t = 100_000)]
    step_limit: u64,
}

impl MachineArgs {
    fn options(&self) -> Result<RunOptions, String> {
        let tick = match (self.tick_mode, self.tick_period) {
            (_, Some(0)) => return Err("--tick-period must be positive".into()),
            (TickMode::Det, p) => TickConfig::deterministic(p.unwrap_or(10)),
            (TickMode::Vt, p) => TickConfig::virtual_time(Duration::from_micros(p.unwrap_or(1000))),
        };
        Ok(RunOptions {
            tick,
            seed: self.seed,
            step_limit: self.step_limit,
            ..RunOptions::default()
        })
    }
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Testcase bytes fed to the firmware's uart0; empty when omitted.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Write the full event trace here.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    machine: MachineArgs,
}

#[derive(Args, Debug)]
struct FuzzArgs {
    firmware: String,
    /// A directory of testcases, a single testcase file, or `gen` for seeded
    /// random inputs.
    #[arg(long)]
    source: String,
    #[arg(long)]
    iters: usize,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Worker threads, one machine each.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Generated testcase length bounds.
    #[arg(long, default_value_t = 0)]
    min_len: usize,
    #[arg(long, default_value_t = 64)]
    max_len: usize,
    #[command(flatten)]
    machine: MachineArgs,
}

enum Failure {
    Usage(String),
    Other(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::UnknownFirmware(_) | HarnessError::NoIterations => Failure::Usage(e.to_string()),
            e => Failure::Other(e.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Other(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_HALTED });
        }
    };
    let result = match cli.command {
        Command::Run { firmware, run } => cmd_run(&firmware, &run),
        Command::Demo(DemoCommand::Run { name, run }) => cmd_run(&name, &run),
        Command::Demo(DemoCommand::List) => {
            for d in harness::DEMOS {
                let kind = d.expected.map_or(String::new(), |c| format!(" [{c}]"));
                println!("{:<24}{}{kind}", d.name, d.summary);
            }
            Ok(EXIT_HALTED)
        }
        Command::Fuzz(args) => cmd_fuzz(&args),
        Command::TraceDiff { a, b } => cmd_trace_diff(&a, &b),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Other(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}

fn cmd_run(firmware: &str, args: &RunArgs) -> Result<u8, Failure> {
    let demo = harness::lookup(firmware)?;
    let testcase = match &args.input {
        Some(p) => fs::read(p).map_err(|e| io_failure(p, e))?,
        None => Vec::new(),
    };
    let mut opts = args.machine.options().map_err(Failure::Usage)?;
    opts.keep_trace = args.trace.is_some();
    let report = harness::run_once(demo, &testcase, &opts)?;
    if let (Some(path), Some(events)) = (&args.trace, &report.trace) {
        fs::write(path, render(events)).map_err(|e| io_failure(path, e))?;
    }
    let _ = std::io::stdout().write_all(&report.output);
    eprintln!("{}", summary(&report));
    Ok(match report.outcome {
        RunResult::Halted => EXIT_HALTED,
        RunResult::Crashed(_) => EXIT_CRASHED,
        RunResult::Timeout => EXIT_TIMEOUT,
    })
}

fn summary(r: &RunReport) -> String {
    let head = match &r.outcome {
        RunResult::Halted => "outcome=Halted".to_string(),
        RunResult::Timeout => "outcome=Timeout".to_string(),
        RunResult::Crashed(c) => {
            let task = c.task.map_or("idle".to_string(), |t| t.to_string());
            format!(
                "outcome=Crashed class={} task={task} op={} detail={:?}",
                c.bug_class, c.operation, c.detail
            )
        }
    };
    format!(
        "{head} events={} vtime={} trace_hash={:016x}",
        r.scheduler_events, r.virtual_time, r.trace_hash
    )
}

fn cmd_fuzz(args: &FuzzArgs) -> Result<u8, Failure> {
    let demo = harness::lookup(&args.firmware)?;
    if args.min_len > args.max_len {
        return Err(Failure::Usage("--min-len exceeds --max-len".into()));
    }
    let source = if args.source == "gen" {
        TestcaseSource::Generator {
            seed: args.machine.seed,
            len: args.min_len..=args.max_len,
        }
    } else {
        let path = PathBuf::from(&args.source);
        match fs::metadata(&path) {
            Ok(m) if m.is_dir() => TestcaseSource::Directory(path),
            Ok(_) => TestcaseSource::SingleFile(path),
            Err(e) => return Err(io_failure(&path, e)),
        }
    };
    let opts = args.machine.options().map_err(Failure::Usage)?;
    let stats = harness::run_persistent(demo, &source, args.iters, &opts, args.jobs)?;
    let text = stats.report().to_string();
    print!("{text}");
    if let Some(path) = &args.report {
        fs::write(path, &text).map_err(|e| io_failure(path, e))?;
    }
    Ok(EXIT_HALTED)
}

fn cmd_trace_diff(a: &Path, b: &Path) -> Result<u8, Failure> {
    let ta = fs::read_to_string(a).map_err(|e| io_failure(a, e))?;
    let tb = fs::read_to_string(b).map_err(|e| io_failure(b, e))?;
    let (la, lb): (Vec<&str>, Vec<&str>) = (ta.lines().collect(), tb.lines().collect());
    for i in 0..la.len().max(lb.len()) {
        let (x, y) = (la.get(i), lb.get(i));
        if x != y {
            println!("first difference at event {i}");
            println!("< {}", x.unwrap_or(&"<end of trace>"));
            println!("> {}", y.unwrap_or(&"<end of trace>"));
            return Ok(EXIT_FAILURE);
        }
    }
    println!("identical");
    Ok(EXIT_HALTED)
}

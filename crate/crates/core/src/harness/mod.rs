//! Persistent-mode execution harness.
//!
//! Every testcase runs on a freshly built machine that is discarded
//! afterwards, so a report depends only on the firmware, the testcase and
//! the run options, never on what ran before. Crashes are deduplicated by
//! bug class, faulting operation and the shape of the trace leading up to
//! the crash.

mod corpus;
pub mod firmware;
mod report;
mod source;

use std::collections::{BTreeSet, HashSet};
use std::path::PathBuf;
use std::time::Instant;

use thiserror::Error;

use crate::fault::{BugClass, CrashReport};
use crate::hal::{HalError, IoInput, IoOutput};
use crate::machine::{shape_hash, Machine, MachineConfig, MachineError, RunResult, TickConfig, TraceEvent};
use crate::memory::MemoryMap;
use crate::rtos::RtosError;

pub use corpus::{corpus_matrix, MatrixRow};
pub use firmware::{lookup, Demo, Firmware, DEMOS, IO_SLOT};
pub use report::{FuzzReport, ReportParseError};
pub use source::{Testcase, TestcaseSource};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HarnessError {
    #[error("unknown firmware {0:?}")]
    UnknownFirmware(String),
    #[error(transparent)]
    Machine(#[from] MachineError),
    #[error(transparent)]
    Hal(#[from] HalError),
    #[error(transparent)]
    Rtos(#[from] RtosError),
    #[error("source yielded {got} testcases, {wanted} requested")]
    SourceExhausted { wanted: usize, got: usize },
    #[error("iteration count must be positive")]
    NoIterations,
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
}

/// Per-run machine settings.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunOptions {
    pub tick: TickConfig,
    pub seed: u64,
    /// Scheduler events before the run is cut off as a timeout.
    pub step_limit: u64,
    /// Keep the full event list in the report.
    pub keep_trace: bool,
    pub memory_map: MemoryMap,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            tick: TickConfig::default(),
            seed: 0,
            step_limit: 100_000,
            keep_trace: false,
            memory_map: MemoryMap::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RunReport {
    pub outcome: RunResult,
    pub scheduler_events: u64,
    /// Checkpoints executed, the machine's virtual time.
    pub virtual_time: u64,
    /// Digest of every trace event of the run.
    pub trace_hash: u64,
    /// Bytes the firmware wrote to its I/O slot.
    pub output: Vec<u8>,
    /// Present when [`RunOptions::keep_trace`] is set.
    pub trace: Option<Vec<TraceEvent>>,
}

/// Builds a machine, feeds it `testcase` and runs it to completion.
pub fn run_once(firmware: &dyn Firmware, testcase: &[u8], opts: &RunOptions) -> Result<RunReport, HarnessError> {
    let config = MachineConfig {
        memory_map: opts.memory_map.clone(),
        tick: opts.tick,
        step_limit: opts.step_limit,
        trace_enabled: opts.keep_trace,
        rng_seed: opts.seed,
    };
    let mut machine = Machine::with_image(config, &firmware.image())?;
    machine
        .hal()
        .bind_io(IO_SLOT, IoInput::buffer(testcase.to_vec()), IoOutput::capture());
    let hooks = firmware.install(&mut machine)?;
    let outcome = machine.start_boxed(hooks)?;
    let output = machine.hal().io_output(IO_SLOT).map(<[u8]>::to_vec).unwrap_or_default();
    Ok(RunReport {
        outcome,
        scheduler_events: machine.scheduler_events(),
        virtual_time: machine.virtual_time(),
        trace_hash: machine.trace_hash(),
        output,
        trace: if opts.keep_trace { Some(machine.trace()?) } else { None },
    })
}

/// Key under which crashes count as the same bug.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CrashKey {
    pub class: BugClass,
    pub operation: &'static str,
    pub suffix_shape: u64,
}

impl CrashKey {
    pub fn of(report: &CrashReport) -> Self {
        CrashKey {
            class: report.bug_class,
            operation: report.operation,
            suffix_shape: shape_hash(&report.trace_suffix),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FuzzStats {
    pub execs: u64,
    /// Crashing testcases by index into the source, in index order.
    pub crashes: Vec<(usize, CrashReport)>,
    pub unique_crashes: usize,
    pub unique_classes: BTreeSet<BugClass>,
    pub execs_per_sec: f64,
    pub distinct_trace_hashes: usize,
}

impl FuzzStats {
    pub fn report(&self) -> FuzzReport {
        FuzzReport {
            execs: self.execs,
            crashes: self.crashes.iter().map(|(i, c)| (*i, c.bug_class)).collect(),
            unique: self.unique_crashes,
            execs_per_sec: self.execs_per_sec,
            traces: self.distinct_trace_hashes,
        }
    }
}

/// Runs the first `iterations` testcases of `source`, each on a fresh
/// machine, spread over `jobs` worker threads. The result does not depend
/// on `jobs` apart from `execs_per_sec`.
pub fn run_persistent(
    firmware: &dyn Firmware,
    source: &TestcaseSource,
    iterations: usize,
    opts: &RunOptions,
    jobs: usize,
) -> Result<FuzzStats, HarnessError> {
    if iterations == 0 {
        return Err(HarnessError::NoIterations);
    }
    let testcases = source.take(iterations)?;
    let jobs = jobs.clamp(1, iterations);
    let started = Instant::now();
    let mut reports: Vec<Option<Result<RunReport, HarnessError>>> = vec![None; iterations];
    std::thread::scope(|scope| {
        let workers: Vec<_> = (0..jobs)
            .map(|j| {
                let testcases = &testcases;
                scope.spawn(move || {
                    (j..testcases.len())
                        .step_by(jobs)
                        .map(|i| (i, run_once(firmware, &testcases[i].data, opts)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for w in workers {
            for (i, r) in w.join().expect("harness worker panicked") {
                reports[i] = Some(r);
            }
        }
    });
    let elapsed = started.elapsed().as_secs_f64();
    let mut crashes = Vec::new();
    let mut keys = HashSet::new();
    let mut hashes = HashSet::new();
    for (i, r) in reports.into_iter().enumerate() {
        let report = r.expect("every testcase ran")?;
        hashes.insert(report.trace_hash);
        if let RunResult::Crashed(c) = report.outcome {
            keys.insert(CrashKey::of(&c));
            crashes.push((i, c));
        }
    }
    Ok(FuzzStats {
        execs: iterations as u64,
        unique_classes: crashes.iter().map(|(_, c)| c.bug_class).collect(),
        unique_crashes: keys.len(),
        crashes,
        execs_per_sec: iterations as f64 / elapsed.max(f64::MIN_POSITIVE),
        distinct_trace_hashes: hashes.len(),
    })
}

use crate::fault::BugClass;
use crate::machine::{RunResult, TaskId};

use super::firmware::bug_demos;
use super::{run_once, HarnessError, RunOptions};

/// One row of the bug observability matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatrixRow {
    pub demo: &'static str,
    pub expected: BugClass,
    /// Class reported by the run, if it crashed.
    pub observed: Option<BugClass>,
    /// Task named in the crash report.
    pub task: Option<TaskId>,
}

impl MatrixRow {
    pub fn detected(&self) -> bool {
        self.observed == Some(self.expected)
    }
}

/// Runs every bug-corpus demo once on an empty testcase.
pub fn corpus_matrix() -> Result<Vec<MatrixRow>, HarnessError> {
    bug_demos()
        .map(|demo| {
            let report = run_once(demo, &[], &RunOptions::default())?;
            let (observed, task) = match &report.outcome {
                RunResult::Crashed(c) => (Some(c.bug_class), c.task),
                _ => (None, None),
            };
            Ok(MatrixRow {
                demo: demo.name,
                expected: demo.expected.expect("bug demos carry a class"),
                observed,
                task,
            })
        })
        .collect()
}

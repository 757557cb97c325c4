use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::fault::BugClass;

/// The line-oriented fuzz report:
///
/// ```text
/// execs=<n> crashes=<n> unique=<n> eps=<float> traces=<n>
/// crash id=<testcase index> class=<BugClass>
/// ...
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct FuzzReport {
    pub execs: u64,
    pub crashes: Vec<(usize, BugClass)>,
    pub unique: usize,
    pub execs_per_sec: f64,
    pub traces: usize,
}

impl FuzzReport {
    /// Equality on everything except throughput, which depends on the host.
    pub fn same_results(&self, other: &FuzzReport) -> bool {
        self.execs == other.execs
            && self.crashes == other.crashes
            && self.unique == other.unique
            && self.traces == other.traces
    }
}

impl fmt::Display for FuzzReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "execs={} crashes={} unique={} eps={:.2} traces={}",
            self.execs,
            self.crashes.len(),
            self.unique,
            self.execs_per_sec,
            self.traces
        )?;
        for (id, class) in &self.crashes {
            writeln!(f, "crash id={id} class={class}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReportParseError {
    #[error("report is empty")]
    Empty,
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

fn fields<'a>(line: &'a str, n: usize, keys: &[&str]) -> Result<Vec<&'a str>, ReportParseError> {
    let bad = |message: String| ReportParseError::Malformed { line: n, message };
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != keys.len() {
        return Err(bad(format!("expected {} fields, found {}", keys.len(), parts.len())));
    }
    parts
        .iter()
        .zip(keys)
        .map(|(p, k)| {
            p.strip_prefix(k)
                .and_then(|r| r.strip_prefix('='))
                .ok_or_else(|| bad(format!("expected {k}=, found {p:?}")))
        })
        .collect()
}

fn number<T: FromStr>(s: &str, line: usize) -> Result<T, ReportParseError> {
    s.parse().map_err(|_| ReportParseError::Malformed {
        line,
        message: format!("bad number {s:?}"),
    })
}

impl FromStr for FuzzReport {
    type Err = ReportParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut lines = s.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, head) = lines.next().ok_or(ReportParseError::Empty)?;
        let h = fields(head, 1, &["execs", "crashes", "unique", "eps", "traces"])?;
        let count: usize = number(h[1], 1)?;
        let mut report = FuzzReport {
            execs: number(h[0], 1)?,
            crashes: Vec::new(),
            unique: number(h[2], 1)?,
            execs_per_sec: number(h[3], 1)?,
            traces: number(h[4], 1)?,
        };
        for (i, line) in lines {
            let rest = line.strip_prefix("crash ").ok_or(ReportParseError::Malformed {
                line: i + 1,
                message: "expected a crash line".into(),
            })?;
            let f = fields(rest, i + 1, &["id", "class"])?;
            let class = f[1].parse().map_err(|_| ReportParseError::Malformed {
                line: i + 1,
                message: format!("unknown bug class {:?}", f[1]),
            })?;
            report.crashes.push((number(f[0], i + 1)?, class));
        }
        if report.crashes.len() != count {
            return Err(ReportParseError::Malformed {
                line: 1,
                message: format!("header counts {count} crashes, {} listed", report.crashes.len()),
            });
        }
        Ok(report)
    }
}

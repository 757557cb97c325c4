use std::collections::VecDeque;
use std::fmt;

use super::TaskId;

/// Number of most recent events kept even when full tracing is off.
pub const SUFFIX_LEN: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EventKind {
    TaskStart { task: TaskId },
    TaskSwitch { from: TaskId, to: TaskId },
    TickDelivered,
    TickDeferred,
    IrqDisable { task: TaskId },
    IrqEnable { task: TaskId },
    TaskBlock { task: TaskId },
    TaskWake { task: TaskId },
    TaskExit { task: TaskId },
    Crash { task: TaskId },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::TaskStart { .. } => "TaskStart",
            EventKind::TaskSwitch { .. } => "TaskSwitch",
            EventKind::TickDelivered => "TickDelivered",
            EventKind::TickDeferred => "TickDeferred",
            EventKind::IrqDisable { .. } => "IrqDisable",
            EventKind::IrqEnable { .. } => "IrqEnable",
            EventKind::TaskBlock { .. } => "TaskBlock",
            EventKind::TaskWake { .. } => "TaskWake",
            EventKind::TaskExit { .. } => "TaskExit",
            EventKind::Crash { .. } => "Crash",
        }
    }

    fn code(&self) -> u8 {
        match self {
            EventKind::TaskStart { .. } => 0,
            EventKind::TaskSwitch { .. } => 1,
            EventKind::TickDelivered => 2,
            EventKind::TickDeferred => 3,
            EventKind::IrqDisable { .. } => 4,
            EventKind::IrqEnable { .. } => 5,
            EventKind::TaskBlock { .. } => 6,
            EventKind::TaskWake { .. } => 7,
            EventKind::TaskExit { .. } => 8,
            EventKind::Crash { .. } => 9,
        }
    }

    /// The single task an event is about, if any.
    pub fn task(&self) -> Option<TaskId> {
        match *self {
            EventKind::TaskStart { task }
            | EventKind::IrqDisable { task }
            | EventKind::IrqEnable { task }
            | EventKind::TaskBlock { task }
            | EventKind::TaskWake { task }
            | EventKind::TaskExit { task }
            | EventKind::Crash { task } => Some(task),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TraceEvent {
    pub seq: u64,
    /// Progress units consumed by tasks when the event occurred.
    pub time: u64,
    pub kind: EventKind,
}

impl fmt::Display for TraceEvent {
    /// `seq=<n> t=<vt> kind=<Kind>`, then `task=<id>` or `from=<id> to=<id>`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "seq={} t={} kind={}", self.seq, self.time, self.kind.name())?;
        match self.kind {
            EventKind::TaskSwitch { from, to } => write!(f, " from={from} to={to}"),
            kind => match kind.task() {
                Some(task) => write!(f, " task={task}"),
                None => Ok(()),
            },
        }
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Fnv64(u64);

impl Default for Fnv64 {
    fn default() -> Self {
        Fnv64(FNV_OFFSET)
    }
}

impl Fnv64 {
    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(FNV_PRIME);
        }
    }

    pub fn write_u32(&mut self, v: u32) {
        self.write(&v.to_le_bytes());
    }

    pub fn write_u64(&mut self, v: u64) {
        self.write(&v.to_le_bytes());
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

/// Hashes the event kinds (and their task fields) of a trace fragment,
/// ignoring sequence numbers and times.
pub fn shape_hash(events: &[TraceEvent]) -> u64 {
    let mut h = Fnv64::default();
    for e in events {
        hash_kind(&mut h, &e.kind);
    }
    h.finish()
}

fn hash_kind(h: &mut Fnv64, kind: &EventKind) {
    h.write(&[kind.code()]);
    let (a, b) = match *kind {
        EventKind::TaskSwitch { from, to } => (from.0, to.0),
        k => (k.task().map_or(u32::MAX, |t| t.0), u32::MAX),
    };
    h.write_u32(a);
    h.write_u32(b);
}

/// Event sink of one machine. The running hash and the recent-event ring are
/// always maintained; the full log only when enabled.
#[derive(Clone, Debug)]
pub struct TraceLog {
    full: Option<Vec<TraceEvent>>,
    recent: VecDeque<TraceEvent>,
    next_seq: u64,
    hash: Fnv64,
}

impl TraceLog {
    pub fn new(enabled: bool) -> Self {
        TraceLog {
            full: enabled.then(Vec::new),
            recent: VecDeque::with_capacity(SUFFIX_LEN),
            next_seq: 0,
            hash: Fnv64::default(),
        }
    }

    pub fn push(&mut self, time: u64, kind: EventKind) {
        let event = TraceEvent {
            seq: self.next_seq,
            time,
            kind,
        };
        self.next_seq += 1;
        self.hash.write_u64(event.seq);
        self.hash.write_u64(event.time);
        hash_kind(&mut self.hash, &kind);
        if self.recent.len() == SUFFIX_LEN {
            self.recent.pop_front();
        }
        self.recent.push_back(event);
        if let Some(full) = &mut self.full {
            full.push(event);
        }
    }

    pub fn events(&self) -> Option<&[TraceEvent]> {
        self.full.as_deref()
    }

    pub fn suffix(&self) -> Vec<TraceEvent> {
        self.recent.iter().copied().collect()
    }

    pub fn len(&self) -> u64 {
        self.next_seq
    }

    pub fn is_empty(&self) -> bool {
        self.next_seq == 0
    }

    pub fn hash(&self) -> u64 {
        self.hash.finish()
    }
}

/// Renders events in the line format, one per line, each newline-terminated.
pub fn render(events: &[TraceEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&e.to_string());
        out.push('\n');
    }
    out
}

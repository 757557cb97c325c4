//! Bug classes and crash reports.
//!
//! Every detector in the machine (shadow memory, allocator bookkeeping,
//! stack watermarks, checked arithmetic and scheduler contract checks)
//! produces a [`Fault`]. [`classify_crash`] maps each fault to exactly one
//! [`BugClass`].

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::machine::{TaskId, TraceEvent};
use crate::memory::{AllocError, StackUsage, Violation, ViolationClass};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BugClass {
    DivByZero,
    IntegerOverflow,
    StackOverflow,
    HeapOverflow,
    NullDeref,
    DoubleFree,
    UseAfterFree,
    WildAccess,
    KernelFault,
}

impl BugClass {
    pub const ALL: [BugClass; 9] = [
        BugClass::DivByZero,
        BugClass::IntegerOverflow,
        BugClass::StackOverflow,
        BugClass::HeapOverflow,
        BugClass::NullDeref,
        BugClass::DoubleFree,
        BugClass::UseAfterFree,
        BugClass::WildAccess,
        BugClass::KernelFault,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BugClass::DivByZero => "DivByZero",
            BugClass::IntegerOverflow => "IntegerOverflow",
            BugClass::StackOverflow => "StackOverflow",
            BugClass::HeapOverflow => "HeapOverflow",
            BugClass::NullDeref => "NullDeref",
            BugClass::DoubleFree => "DoubleFree",
            BugClass::UseAfterFree => "UseAfterFree",
            BugClass::WildAccess => "WildAccess",
            BugClass::KernelFault => "KernelFault",
        }
    }
}

impl fmt::Display for BugClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown bug class {0:?}")]
pub struct UnknownBugClass(pub String);

impl FromStr for BugClass {
    type Err = UnknownBugClass;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BugClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| UnknownBugClass(s.to_string()))
    }
}

/// A breach of the scheduler or interrupt contract.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum KernelFault {
    /// `enable_irq` with no matching `disable_irq`.
    UnbalancedEnable,
    /// A hook chose a task that is blocked, exited or unknown.
    NotRunnable { task: TaskId },
    /// A task tried to block or yield while interrupts were disabled.
    SwitchInCriticalSection,
    /// A task exited while interrupts were disabled.
    ExitInCriticalSection,
    /// Firmware reported a kernel-level assertion failure.
    Assertion(String),
}

impl fmt::Display for KernelFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelFault::UnbalancedEnable => f.write_str("UnbalancedEnable: enable_irq with nesting 0"),
            KernelFault::NotRunnable { task } => write!(f, "NotRunnable: scheduler chose task {task}"),
            KernelFault::SwitchInCriticalSection => f.write_str("context switch requested with interrupts disabled"),
            KernelFault::ExitInCriticalSection => f.write_str("task exited with interrupts disabled"),
            KernelFault::Assertion(msg) => write!(f, "kernel assertion: {msg}"),
        }
    }
}

/// A raw detector finding, before classification.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Fault {
    Memory(Violation),
    Alloc(AllocError),
    Stack { base: u32, usage: StackUsage },
    DivByZero,
    Overflow { op: &'static str },
    Kernel(KernelFault),
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fault::Memory(v) => v.fmt(f),
            Fault::Alloc(e) => e.fmt(f),
            Fault::Stack { base, usage } => {
                write!(f, "stack exhausted: {} bytes used, far end {base:#010x} overwritten", usage.used)
            }
            Fault::DivByZero => f.write_str("division by zero"),
            Fault::Overflow { op } => write!(f, "arithmetic overflow in {op}"),
            Fault::Kernel(k) => k.fmt(f),
        }
    }
}

/// Maps a detector finding to its bug class.
pub fn classify_crash(fault: &Fault) -> BugClass {
    match fault {
        Fault::Memory(v) => match v.class {
            ViolationClass::HeapOverflow => BugClass::HeapOverflow,
            ViolationClass::UseAfterFree => BugClass::UseAfterFree,
            ViolationClass::NullDeref => BugClass::NullDeref,
            ViolationClass::WildAccess => BugClass::WildAccess,
        },
        Fault::Alloc(AllocError::DoubleFree { .. }) => BugClass::DoubleFree,
        // Releasing an address the allocator never handed out corrupts the
        // heap the same way a stray pointer write does.
        Fault::Alloc(_) => BugClass::WildAccess,
        Fault::Stack { .. } => BugClass::StackOverflow,
        Fault::DivByZero => BugClass::DivByZero,
        Fault::Overflow { .. } => BugClass::IntegerOverflow,
        Fault::Kernel(_) => BugClass::KernelFault,
    }
}

/// Outcome details of a crashed run.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CrashReport {
    pub bug_class: BugClass,
    /// Task that was running when the fault was detected; `None` when the
    /// fault happened while the machine was idle.
    pub task: Option<TaskId>,
    /// Name of the API operation that detected the fault.
    pub operation: &'static str,
    pub detail: String,
    /// The most recent trace events, ending with the `Crash` event.
    pub trace_suffix: Vec<TraceEvent>,
}

impl fmt::Display for CrashReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} in ", self.bug_class)?;
        match self.task {
            Some(t) => write!(f, "task {t}")?,
            None => f.write_str("idle")?,
        }
        write!(f, " during {}: {}", self.operation, self.detail)
    }
}

//! The portable MCU: tasks, exclusive execution, the system tick and
//! interrupt masking.
//!
//! A [`Machine`] owns a set of tasks, each backed by a host thread, and
//! guarantees that exactly one of them makes progress at any instant. The
//! kernel plugs in through [`SchedulerHooks`]; the machine asks it which task
//! to run at every tick, yield, block and exit.
//!
//! Ticks are delivered only at checkpoints (every [`TaskCtx`] call). In
//! [`TickMode::Deterministic`] a tick falls due every `period` checkpoints,
//! which makes the whole run, trace included, a pure function of the
//! configuration and the firmware. [`TickMode::VirtualTime`] instead counts
//! the CPU time consumed by the running task's thread.
//!
//! A tick that arrives while interrupts are disabled is latched as pending
//! and serviced by the `enable_irq` call that brings the nesting count back
//! to zero.

mod core;
mod ctx;
mod hooks;
mod trace;

use std::fmt;
use std::panic::{self, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::{Condvar, MappedMutexGuard, Mutex, MutexGuard};
use thiserror::Error;

use self::core::{spawn_task, Core, Inner, Outcome, Phase, Shared};
use crate::fault::{BugClass, CrashReport, KernelFault};
use crate::hal::PeripheralRegistry;
use crate::memory::{ConfigError, ImageLayoutError, ImageSections, MachineMemory, MemoryMap, StackExhausted, StackRegion, StackUsage};

pub use ctx::TaskCtx;
pub use hooks::{IdleAction, RoundRobin, Sched, SchedulerHooks};
pub use trace::{render, shape_hash, EventKind, Fnv64, TraceEvent, TraceLog, SUFFIX_LEN};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TaskId(pub u32);

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Why a task is blocked.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum BlockReason {
    Delay,
    Queue(u32),
    Semaphore(u32),
    NetworkReceive(String),
    Other(&'static str),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum TaskState {
    Ready,
    Running,
    Blocked(BlockReason),
    Exited,
}

/// Interrupt mask state. `enabled` is true exactly when `nesting` is zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct InterruptState {
    pub enabled: bool,
    /// A tick arrived while disabled and has not been serviced yet.
    pub pending: bool,
    /// Unmatched `disable_irq` calls.
    pub nesting: u32,
}

impl Default for InterruptState {
    fn default() -> Self {
        InterruptState {
            enabled: true,
            pending: false,
            nesting: 0,
        }
    }
}

impl InterruptState {
    fn raise(&mut self) {
        self.nesting += 1;
        self.enabled = false;
    }

    fn lower(&mut self) {
        self.nesting -= 1;
        self.enabled = self.nesting == 0;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TickMode {
    /// A tick every `period` checkpoints.
    Deterministic { period: u64 },
    /// A tick every `period` of CPU time consumed by task threads.
    VirtualTime { period: Duration },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TickConfig {
    pub mode: TickMode,
    /// With the tick disabled, tasks switch only when they yield, block or
    /// exit.
    pub enabled: bool,
}

impl TickConfig {
    pub fn deterministic(period: u64) -> Self {
        TickConfig {
            mode: TickMode::Deterministic { period },
            enabled: true,
        }
    }

    pub fn virtual_time(period: Duration) -> Self {
        TickConfig {
            mode: TickMode::VirtualTime { period },
            enabled: true,
        }
    }

    pub fn disabled() -> Self {
        TickConfig {
            mode: TickMode::Deterministic { period: 1 },
            enabled: false,
        }
    }
}

impl Default for TickConfig {
    fn default() -> Self {
        TickConfig::deterministic(10)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MachineConfig {
    pub memory_map: MemoryMap,
    pub tick: TickConfig,
    /// Scheduler events (ticks and explicit handoffs) after which the run is
    /// stopped with [`RunResult::Timeout`]; 0 means unlimited.
    pub step_limit: u64,
    pub trace_enabled: bool,
    pub rng_seed: u64,
}

impl Default for MachineConfig {
    fn default() -> Self {
        MachineConfig {
            memory_map: MemoryMap::default(),
            tick: TickConfig::default(),
            step_limit: 0,
            trace_enabled: true,
            rng_seed: 0,
        }
    }
}

impl MachineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.memory_map.validate()?;
        let zero = match self.tick.mode {
            TickMode::Deterministic { period } => period == 0,
            TickMode::VirtualTime { period } => period.is_zero(),
        };
        if self.tick.enabled && zero {
            return Err(ConfigError::ZeroTickPeriod);
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum RunResult {
    /// Every task exited, or the kernel had nothing left to run.
    Halted,
    Timeout,
    Crashed(CrashReport),
}

impl RunResult {
    pub fn bug_class(&self) -> Option<BugClass> {
        match self {
            RunResult::Crashed(r) => Some(r.bug_class),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TickOutcome {
    Serviced,
    Deferred,
}

/// Why a task-level run stopped early. Propagate with `?`.
#[derive(Debug, Error, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Trap {
    #[error("task crashed with {0}")]
    Crashed(BugClass),
    #[error("machine stopped")]
    Shutdown,
}

pub type TaskResult<T = ()> = Result<T, Trap>;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum SchedError {
    #[error("task {0} is not runnable")]
    NotRunnable(TaskId),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MachineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Image(#[from] ImageLayoutError),
    #[error(transparent)]
    StackExhausted(#[from] StackExhausted),
    #[error("no tasks to run")]
    NoTasks,
    #[error("machine already started")]
    AlreadyStarted,
    #[error("tracing was disabled for this machine")]
    TraceDisabled,
    #[error("task {task} panicked: {message}")]
    TaskPanicked { task: TaskId, message: String },
    #[error("could not spawn a task thread: {0}")]
    Spawn(String),
}

/// Snapshot of one task control block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskInfo {
    pub id: TaskId,
    pub name: String,
    pub priority: u8,
    pub state: TaskState,
    pub stack: StackRegion,
    /// Deepest stack use seen by the watermark so far.
    pub high_water: u32,
}

/// Raises ticks on a machine from outside its tasks.
#[derive(Clone)]
pub struct TickHandle(Arc<Shared>);

impl TickHandle {
    /// Requests a tick. A running task services it at its next checkpoint;
    /// while interrupts are disabled it is latched as pending immediately.
    /// A machine that is not running ignores the tick and reports
    /// `Deferred`.
    pub fn deliver(&self) -> TickOutcome {
        let mut g = self.0.inner.lock();
        let core = &mut g.core;
        if core.phase != Phase::Running {
            return TickOutcome::Deferred;
        }
        if core.irq.nesting > 0 {
            core.irq.pending = true;
            core.emit(EventKind::TickDeferred);
            let _ = core.count_event();
            TickOutcome::Deferred
        } else {
            core.force_tick = true;
            TickOutcome::Serviced
        }
    }
}

pub struct Machine {
    shared: Arc<Shared>,
    config: MachineConfig,
}

impl fmt::Debug for Machine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let g = self.shared.inner.lock();
        f.debug_struct("Machine")
            .field("tasks", &g.core.tasks.len())
            .field("phase", &g.core.phase)
            .field("irq", &g.core.irq)
            .finish()
    }
}

impl Machine {
    pub fn new(config: MachineConfig) -> Result<Self, MachineError> {
        Self::with_image(config, &ImageSections::empty())
    }

    /// Builds a machine whose memory has been reset from `image`.
    pub fn with_image(config: MachineConfig, image: &ImageSections) -> Result<Self, MachineError> {
        config.validate()?;
        let mem = MachineMemory::reset_handler(image, &config.memory_map)?;
        let hal = PeripheralRegistry::new(config.rng_seed);
        let done = Arc::new(Condvar::new());
        let core = Core::new(
            mem,
            hal,
            config.tick,
            config.step_limit,
            config.trace_enabled,
            Arc::clone(&done),
        );
        Ok(Machine {
            shared: Arc::new(Shared {
                inner: Mutex::new(Inner { core, hooks: None }),
                done,
                handles: Mutex::new(Vec::new()),
            }),
            config,
        })
    }

    pub fn config(&self) -> &MachineConfig {
        &self.config
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.shared.inner.lock()
    }

    /// Creates a task in the Ready state with a freshly carved and painted
    /// stack. Ids are dense, starting at 0.
    pub fn task_create(
        &mut self,
        entry: impl FnOnce(&mut TaskCtx) -> TaskResult + Send + 'static,
        priority: u8,
        stack_size: u32,
        name: &str,
    ) -> Result<TaskId, MachineError> {
        let mut g = self.lock();
        if g.core.phase != Phase::Created {
            return Err(MachineError::AlreadyStarted);
        }
        Ok(g.core.add_task(name, priority, stack_size, Box::new(entry))?)
    }

    pub fn start(&mut self, hooks: impl SchedulerHooks) -> Result<RunResult, MachineError> {
        self.start_boxed(Box::new(hooks))
    }

    /// Runs the machine to completion under the given kernel. A machine
    /// runs once.
    pub fn start_boxed(&mut self, hooks: Box<dyn SchedulerHooks>) -> Result<RunResult, MachineError> {
        let mut g = self.lock();
        if g.core.phase != Phase::Created {
            return Err(MachineError::AlreadyStarted);
        }
        if g.core.tasks.is_empty() {
            return Err(MachineError::NoTasks);
        }
        g.hooks = Some(hooks);
        g.core.phase = Phase::Running;
        let mut spawn_error = None;
        for i in 0..g.core.tasks.len() {
            if let Err(e) = spawn_task(&self.shared, &mut g.core, TaskId(i as u32)) {
                spawn_error = Some(e.to_string());
                g.core.finish(Outcome::Run(RunResult::Halted));
                break;
            }
        }
        let dispatched = panic::catch_unwind(AssertUnwindSafe(|| {
            if g.core.phase != Phase::Running {
                return;
            }
            match g.call_hook(|h, s| h.first_task(s)) {
                Some(t) if g.core.is_runnable(t) => g.core.start_first(t),
                Some(t) => {
                    g.core.kernel_fault(KernelFault::NotRunnable { task: t }, "start");
                }
                None => {
                    let _ = g.idle();
                }
            }
        }));
        if let Err(payload) = dispatched {
            g.core.finish(Outcome::Run(RunResult::Halted));
            drop(g);
            self.join_tasks();
            panic::resume_unwind(payload);
        }
        while g.core.phase != Phase::Finished {
            self.shared.done.wait(&mut g);
        }
        drop(g);
        self.join_tasks();
        if let Some(e) = spawn_error {
            return Err(MachineError::Spawn(e));
        }
        match self.lock().core.outcome.clone().expect("finished run has an outcome") {
            Outcome::Run(r) => Ok(r),
            Outcome::Panicked { task, message } => Err(MachineError::TaskPanicked { task, message }),
        }
    }

    fn join_tasks(&self) {
        loop {
            let handles: Vec<_> = std::mem::take(&mut *self.shared.handles.lock());
            if handles.is_empty() {
                break;
            }
            for h in handles {
                let _ = h.join();
            }
        }
    }

    pub fn tick_handle(&self) -> TickHandle {
        TickHandle(Arc::clone(&self.shared))
    }

    /// Delivers a tick from the controller. On a machine that is not
    /// running this is a no-op returning `Deferred`.
    pub fn systick_deliver(&self) -> TickOutcome {
        self.tick_handle().deliver()
    }

    pub fn trace(&self) -> Result<Vec<TraceEvent>, MachineError> {
        self.lock()
            .core
            .trace
            .events()
            .map(<[TraceEvent]>::to_vec)
            .ok_or(MachineError::TraceDisabled)
    }

    /// Hash over every event of the run, maintained even with tracing off.
    pub fn trace_hash(&self) -> u64 {
        self.lock().core.trace.hash()
    }

    pub fn trace_suffix(&self) -> Vec<TraceEvent> {
        self.lock().core.trace.suffix()
    }

    pub fn scheduler_events(&self) -> u64 {
        self.lock().core.sched_events
    }

    pub fn virtual_time(&self) -> u64 {
        self.lock().core.progress
    }

    pub fn ticks_delivered(&self) -> u64 {
        self.lock().core.ticks_delivered
    }

    pub fn interrupt_state(&self) -> InterruptState {
        self.lock().core.irq
    }

    pub fn task_count(&self) -> usize {
        self.lock().core.tasks.len()
    }

    pub fn task_info(&self, id: TaskId) -> Option<TaskInfo> {
        self.lock().core.task(id).map(|t| TaskInfo {
            id: t.id,
            name: t.name.clone(),
            priority: t.priority,
            state: t.state.clone(),
            stack: t.stack,
            high_water: t.high_water,
        })
    }

    pub fn task_state(&self, id: TaskId) -> Option<TaskState> {
        self.task_info(id).map(|t| t.state)
    }

    pub fn stack_usage(&self, id: TaskId) -> Option<StackUsage> {
        let g = self.lock();
        let stack = g.core.task(id)?.stack;
        Some(g.core.mem.stack_check(&stack))
    }

    pub fn memory(&self) -> MappedMutexGuard<'_, MachineMemory> {
        MutexGuard::map(self.lock(), |i| &mut i.core.mem)
    }

    pub fn hal(&self) -> MappedMutexGuard<'_, PeripheralRegistry> {
        MutexGuard::map(self.lock(), |i| &mut i.core.hal)
    }

    /// The installed kernel, if it is a `K`.
    pub fn hooks<K: SchedulerHooks>(&self) -> Option<MappedMutexGuard<'_, K>> {
        MutexGuard::try_map(self.lock(), |i| {
            let h: &mut dyn std::any::Any = i.hooks.as_deref_mut()?;
            h.downcast_mut::<K>()
        })
        .ok()
    }
}

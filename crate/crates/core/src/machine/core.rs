//! Scheduler state and the handoff protocol.
//!
//! All machine state lives in one [`Inner`] behind one mutex. Every task is a
//! host thread, but a task thread only executes firmware code while
//! `core.current` names it; otherwise it is parked on its own condition
//! variable. Handing the CPU to another task means updating `current`,
//! notifying the target's condition variable and parking. Since every
//! decision is made under the mutex by the thread that currently owns the
//! CPU, at most one task ever makes progress.

use std::panic::{self, AssertUnwindSafe};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use parking_lot::{Condvar, Mutex};

use super::ctx::TaskCtx;
use super::hooks::{IdleAction, Sched, SchedulerHooks};
use super::trace::{EventKind, TraceLog};
use super::{BlockReason, InterruptState, RunResult, TaskId, TaskResult, TaskState, TickConfig, TickMode, Trap};
use crate::fault::{classify_crash, CrashReport, Fault, KernelFault};
use crate::hal::PeripheralRegistry;
use crate::memory::{MachineMemory, StackExhausted, StackRegion};

pub(crate) type Body = Box<dyn FnOnce(&mut TaskCtx) -> TaskResult + Send>;

pub(crate) struct Tcb {
    pub id: TaskId,
    pub name: String,
    pub priority: u8,
    pub state: TaskState,
    pub stack: StackRegion,
    pub wake: Arc<Condvar>,
    pub body: Option<Body>,
    /// Order in which the task last blocked; FIFO key for peripheral wakeups.
    pub block_seq: u64,
    pub high_water: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Phase {
    Created,
    Running,
    Finished,
}

#[derive(Clone, Debug)]
pub(crate) enum Outcome {
    Run(RunResult),
    Panicked { task: TaskId, message: String },
}

/// Whether the calling task still owns the CPU after an operation.
#[must_use]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Handoff {
    Stay,
    Away,
}

pub(crate) struct Core {
    pub tasks: Vec<Tcb>,
    pub current: Option<TaskId>,
    /// Task that ran last before the machine went idle.
    pub last: Option<TaskId>,
    pub irq: InterruptState,
    /// Checkpoints executed by all tasks; the machine's virtual time.
    pub progress: u64,
    pub since_tick: u64,
    pub cpu_since_tick: Duration,
    pub force_tick: bool,
    pub ticks_delivered: u64,
    pub tick: TickConfig,
    pub step_limit: u64,
    pub sched_events: u64,
    pub trace: TraceLog,
    pub mem: MachineMemory,
    pub hal: PeripheralRegistry,
    pub phase: Phase,
    pub outcome: Option<Outcome>,
    next_block_seq: u64,
    /// Signalled when the run finishes.
    done: Arc<Condvar>,
}

impl Core {
    pub fn new(
        mem: MachineMemory,
        hal: PeripheralRegistry,
        tick: TickConfig,
        step_limit: u64,
        trace_enabled: bool,
        done: Arc<Condvar>,
    ) -> Self {
        Core {
            tasks: Vec::new(),
            current: None,
            last: None,
            irq: InterruptState::default(),
            progress: 0,
            since_tick: 0,
            cpu_since_tick: Duration::ZERO,
            force_tick: false,
            ticks_delivered: 0,
            tick,
            step_limit,
            sched_events: 0,
            trace: TraceLog::new(trace_enabled),
            mem,
            hal,
            phase: Phase::Created,
            outcome: None,
            next_block_seq: 0,
            done,
        }
    }

    pub fn task(&self, id: TaskId) -> Option<&Tcb> {
        self.tasks.get(id.0 as usize)
    }

    fn tcb(&mut self, id: TaskId) -> &mut Tcb {
        &mut self.tasks[id.0 as usize]
    }

    pub fn is_runnable(&self, id: TaskId) -> bool {
        matches!(
            self.task(id).map(|t| &t.state),
            Some(TaskState::Ready | TaskState::Running)
        )
    }

    pub fn add_task(&mut self, name: &str, priority: u8, stack_size: u32, body: Body) -> Result<TaskId, StackExhausted> {
        let stack = self.mem.carve_stack(stack_size)?;
        let id = TaskId(self.tasks.len() as u32);
        self.tasks.push(Tcb {
            id,
            name: name.to_string(),
            priority,
            state: TaskState::Ready,
            stack,
            wake: Arc::new(Condvar::new()),
            body: Some(body),
            block_seq: 0,
            high_water: 0,
        });
        Ok(id)
    }

    pub fn emit(&mut self, kind: EventKind) {
        self.trace.push(self.progress, kind);
    }

    pub fn wake(&mut self, id: TaskId) -> bool {
        match self.tasks.get_mut(id.0 as usize) {
            Some(t) if matches!(t.state, TaskState::Blocked(_)) => {
                t.state = TaskState::Ready;
                self.emit(EventKind::TaskWake { task: id });
                true
            }
            _ => false,
        }
    }

    pub fn tick_due(&self) -> bool {
        if self.force_tick {
            return true;
        }
        self.tick.enabled
            && match self.tick.mode {
                TickMode::Deterministic { period } => self.since_tick >= period,
                TickMode::VirtualTime { period } => self.cpu_since_tick >= period,
            }
    }

    pub fn finish(&mut self, outcome: Outcome) {
        if self.phase == Phase::Finished {
            return;
        }
        self.phase = Phase::Finished;
        self.outcome = Some(outcome);
        for t in &self.tasks {
            t.wake.notify_one();
        }
        self.done.notify_all();
    }

    /// Records a crash of the current task and ends the run.
    pub fn crash(&mut self, fault: Fault, operation: &'static str) -> Trap {
        let bug_class = classify_crash(&fault);
        if self.phase != Phase::Running {
            return Trap::Shutdown;
        }
        let task = self.current;
        if let Some(task) = task {
            self.emit(EventKind::Crash { task });
        }
        let report = CrashReport {
            bug_class,
            task,
            operation,
            detail: fault.to_string(),
            trace_suffix: self.trace.suffix(),
        };
        self.finish(Outcome::Run(RunResult::Crashed(report)));
        Trap::Crashed(bug_class)
    }

    pub fn kernel_fault(&mut self, fault: KernelFault, operation: &'static str) -> Trap {
        self.crash(Fault::Kernel(fault), operation)
    }

    /// Counts one scheduler event and enforces the step limit.
    pub fn count_event(&mut self) -> Result<(), Trap> {
        self.sched_events += 1;
        if self.step_limit > 0 && self.sched_events >= self.step_limit {
            self.finish(Outcome::Run(RunResult::Timeout));
            return Err(Trap::Shutdown);
        }
        Ok(())
    }

    /// Watermark check performed whenever a task gives up the CPU.
    pub fn check_stack(&mut self, id: TaskId, operation: &'static str) -> Result<(), Trap> {
        let stack = self.tcb(id).stack;
        let usage = self.mem.stack_check(&stack);
        let t = self.tcb(id);
        t.high_water = t.high_water.max(usage.used);
        if usage.overflowed {
            return Err(self.crash(
                Fault::Stack {
                    base: stack.region.origin,
                    usage,
                },
                operation,
            ));
        }
        Ok(())
    }

    fn switch(&mut self, from: TaskId, to: TaskId) {
        self.emit(EventKind::TaskSwitch { from, to });
        self.current = Some(to);
        let t = self.tcb(to);
        t.state = TaskState::Running;
        t.wake.notify_one();
    }

    /// Puts the first task of the run on the CPU.
    pub fn start_first(&mut self, to: TaskId) {
        self.emit(EventKind::TaskStart { task: to });
        self.current = Some(to);
        let t = self.tcb(to);
        t.state = TaskState::Running;
        t.wake.notify_one();
    }

    /// Wakes tasks blocked on network receive whose slot has frames queued,
    /// at most one task per queued frame, oldest blocker first.
    pub fn wake_net_waiters(&mut self) -> Vec<TaskId> {
        let mut waiters: Vec<(u64, TaskId, String)> = self
            .tasks
            .iter()
            .filter_map(|t| match &t.state {
                TaskState::Blocked(BlockReason::NetworkReceive(slot)) => Some((t.block_seq, t.id, slot.clone())),
                _ => None,
            })
            .collect();
        if waiters.is_empty() {
            return Vec::new();
        }
        let mut ready = self.hal.inbound_ready();
        waiters.sort();
        let mut woken = Vec::new();
        for (_, id, slot) in waiters {
            if let Some((_, n)) = ready.iter_mut().find(|(s, n)| *s == slot && *n > 0) {
                *n -= 1;
                self.wake(id);
                woken.push(id);
            }
        }
        woken
    }
}

pub(crate) struct Inner {
    pub core: Core,
    pub hooks: Option<Box<dyn SchedulerHooks>>,
}

impl Inner {
    /// Runs a hook with interrupts implicitly disabled.
    pub fn call_hook<R>(&mut self, f: impl FnOnce(&mut dyn SchedulerHooks, &mut Sched<'_>) -> R) -> R {
        let Inner { core, hooks } = self;
        let hooks = hooks.as_deref_mut().expect("hooks are installed while running");
        core.irq.raise();
        let r = f(hooks, &mut Sched { core });
        core.irq.lower();
        r
    }

    fn choose_runnable(&mut self, choice: TaskId, operation: &'static str) -> Result<TaskId, Trap> {
        if self.core.is_runnable(choice) {
            Ok(choice)
        } else {
            Err(self.core.kernel_fault(KernelFault::NotRunnable { task: choice }, operation))
        }
    }

    /// Applies a scheduling decision while the current task is still runnable.
    pub fn apply_running(&mut self, choice: Option<TaskId>, operation: &'static str) -> Result<Handoff, Trap> {
        let cur = self.core.current.expect("a task is running");
        let to = match choice {
            None => return Ok(Handoff::Stay),
            Some(t) if t == cur => return Ok(Handoff::Stay),
            Some(t) => self.choose_runnable(t, operation)?,
        };
        self.core.check_stack(cur, operation)?;
        self.core.tcb(cur).state = TaskState::Ready;
        self.core.switch(cur, to);
        Ok(Handoff::Away)
    }

    /// Applies a scheduling decision after the current task blocked or
    /// exited. On return the caller no longer owns the CPU.
    pub fn leave(&mut self, choice: Option<TaskId>, operation: &'static str) -> Result<(), Trap> {
        let cur = self.core.current.expect("a task is running");
        match choice {
            Some(t) => {
                let to = self.choose_runnable(t, operation)?;
                self.core.switch(cur, to);
                Ok(())
            }
            None => {
                self.core.current = None;
                self.core.last = Some(cur);
                self.idle()
            }
        }
    }

    /// Runs the machine with no task on the CPU until the kernel picks one
    /// or the run ends.
    pub fn idle(&mut self) -> Result<(), Trap> {
        loop {
            if !self.core.wake_net_waiters().is_empty() {
                if let Some(t) = self.call_hook(|h, s| h.on_yield(s)) {
                    return self.switch_in(t, "idle");
                }
            }
            match self.call_hook(|h, s| h.on_idle(s)) {
                IdleAction::Halt => {
                    self.core.finish(Outcome::Run(RunResult::Halted));
                    return Err(Trap::Shutdown);
                }
                IdleAction::WaitForTick if !self.core.tick.enabled => {
                    // nothing can ever become ready again
                    self.core.finish(Outcome::Run(RunResult::Halted));
                    return Err(Trap::Shutdown);
                }
                IdleAction::WaitForTick => {
                    if let TickMode::Deterministic { period } = self.core.tick.mode {
                        self.core.progress += period.saturating_sub(self.core.since_tick);
                    }
                    self.reset_tick_clock();
                    self.core.emit(EventKind::TickDelivered);
                    self.core.ticks_delivered += 1;
                    self.core.count_event()?;
                    if let Some(t) = self.call_hook(|h, s| h.on_tick(s)) {
                        return self.switch_in(t, "idle");
                    }
                }
            }
        }
    }

    fn switch_in(&mut self, choice: TaskId, operation: &'static str) -> Result<(), Trap> {
        let to = self.choose_runnable(choice, operation)?;
        match self.core.last {
            Some(from) => self.core.switch(from, to),
            None => self.core.start_first(to),
        }
        Ok(())
    }

    fn reset_tick_clock(&mut self) {
        self.core.since_tick = 0;
        self.core.cpu_since_tick = Duration::ZERO;
        self.core.force_tick = false;
    }

    /// Delivers a tick to the running task: serviced if interrupts are
    /// enabled, otherwise latched as pending.
    pub fn deliver_tick(&mut self, operation: &'static str) -> Result<Handoff, Trap> {
        self.reset_tick_clock();
        if self.core.irq.nesting > 0 {
            self.core.irq.pending = true;
            self.core.emit(EventKind::TickDeferred);
            self.core.count_event()?;
            return Ok(Handoff::Stay);
        }
        self.service_tick(operation)
    }

    pub fn service_tick(&mut self, operation: &'static str) -> Result<Handoff, Trap> {
        self.core.emit(EventKind::TickDelivered);
        self.core.ticks_delivered += 1;
        self.core.count_event()?;
        let choice = self.call_hook(|h, s| h.on_tick(s));
        self.apply_running(choice, operation)
    }

    /// One unit of task progress; delivers a tick if one is due.
    pub fn checkpoint(&mut self) -> Result<Handoff, Trap> {
        self.core.progress += 1;
        self.core.since_tick += 1;
        if self.core.tick_due() {
            self.deliver_tick("tick")
        } else {
            Ok(Handoff::Stay)
        }
    }

    fn require_irq_enabled(&mut self, operation: &'static str) -> Result<(), Trap> {
        if self.core.irq.nesting > 0 {
            return Err(self.core.kernel_fault(KernelFault::SwitchInCriticalSection, operation));
        }
        Ok(())
    }

    pub fn yield_now(&mut self) -> Result<Handoff, Trap> {
        self.require_irq_enabled("yield")?;
        self.core.count_event()?;
        let choice = self.call_hook(|h, s| h.on_yield(s));
        self.apply_running(choice, "yield")
    }

    pub fn yield_to(&mut self, target: TaskId) -> Result<Handoff, Trap> {
        self.require_irq_enabled("yield_to")?;
        self.core.count_event()?;
        self.apply_running(Some(target), "yield_to")
    }

    pub fn block(&mut self, id: TaskId, reason: BlockReason, operation: &'static str) -> Result<(), Trap> {
        self.require_irq_enabled(operation)?;
        self.core.check_stack(id, operation)?;
        let seq = self.core.next_block_seq;
        self.core.next_block_seq += 1;
        let t = self.core.tcb(id);
        t.state = TaskState::Blocked(reason);
        t.block_seq = seq;
        self.core.emit(EventKind::TaskBlock { task: id });
        self.core.count_event()?;
        let choice = self.call_hook(|h, s| h.on_yield(s));
        self.leave(choice, operation)
    }

    pub fn exit(&mut self, id: TaskId) -> Result<(), Trap> {
        if self.core.irq.nesting > 0 {
            return Err(self.core.kernel_fault(KernelFault::ExitInCriticalSection, "exit"));
        }
        self.core.check_stack(id, "exit")?;
        self.core.tcb(id).state = TaskState::Exited;
        self.core.emit(EventKind::TaskExit { task: id });
        self.core.count_event()?;
        let choice = self.call_hook(|h, s| h.on_task_exit(s, id));
        self.leave(choice, "exit")
    }

    /// Wakes network receivers after a peripheral call and lets the kernel
    /// preempt in favour of a woken task.
    pub fn after_peripheral_call(&mut self) -> Result<Handoff, Trap> {
        let woken = self.core.wake_net_waiters();
        if self.core.irq.nesting > 0 {
            return Ok(Handoff::Stay);
        }
        for id in woken {
            if let Some(t) = self.call_hook(|h, s| h.on_wake(s, id)) {
                return self.apply_running(Some(t), "wake");
            }
        }
        Ok(Handoff::Stay)
    }
}

pub(crate) struct Shared {
    pub inner: Mutex<Inner>,
    pub done: Arc<Condvar>,
    pub handles: Mutex<Vec<JoinHandle<()>>>,
}

pub(crate) fn spawn_task(shared: &Arc<Shared>, core: &mut Core, id: TaskId) -> std::io::Result<()> {
    let mode = core.tick.mode;
    let t = core.tcb(id);
    let body = t.body.take().expect("task body not yet spawned");
    let cx = TaskCtx::new(Arc::clone(shared), id, Arc::clone(&t.wake), t.stack, mode);
    let handle = thread::Builder::new()
        .name(format!("pmcu-task-{id}"))
        .spawn(move || task_main(cx, body))?;
    shared.handles.lock().push(handle);
    Ok(())
}

fn task_main(mut cx: TaskCtx, body: Body) {
    if cx.wait_for_cpu().is_err() {
        return;
    }
    let result = panic::catch_unwind(AssertUnwindSafe(|| body(&mut cx)));
    let shared = cx.shared();
    let mut g = shared.inner.lock();
    match result {
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "non-string panic payload".to_string());
            g.core.finish(Outcome::Panicked { task: cx.id(), message });
        }
        // An error return while the run is still live (the body made up its
        // own trap) ends the task like a normal return.
        Ok(_) if g.core.phase == Phase::Running && g.core.current == Some(cx.id()) => {
            let _ = g.exit(cx.id());
        }
        Ok(_) => {}
    }
}

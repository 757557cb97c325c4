use std::any::Any;

use super::core::Core;
use super::{TaskId, TaskState};

/// What the machine should do when the kernel has nothing to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IdleAction {
    /// Advance virtual time to the next tick and deliver it.
    WaitForTick,
    /// End the run as halted.
    Halt,
}

/// The kernel's view of the machine while one of its hooks runs.
///
/// Hooks run with interrupts implicitly disabled, so nothing a hook does can
/// be preempted.
pub struct Sched<'a> {
    pub(super) core: &'a mut Core,
}

impl Sched<'_> {
    /// Task that was running when the hook was invoked; `None` when idle.
    pub fn current(&self) -> Option<TaskId> {
        self.core.current
    }

    pub fn task_count(&self) -> usize {
        self.core.tasks.len()
    }

    pub fn tasks(&self) -> impl Iterator<Item = TaskId> + '_ {
        self.core.tasks.iter().map(|t| t.id)
    }

    pub fn state(&self, id: TaskId) -> Option<&TaskState> {
        self.core.task(id).map(|t| &t.state)
    }

    /// Ready or Running.
    pub fn is_runnable(&self, id: TaskId) -> bool {
        self.core.is_runnable(id)
    }

    pub fn priority(&self, id: TaskId) -> Option<u8> {
        self.core.task(id).map(|t| t.priority)
    }

    /// Moves a blocked task to Ready. Returns false if it was not blocked.
    pub fn wake(&mut self, id: TaskId) -> bool {
        self.core.wake(id)
    }

    /// Virtual time in progress units.
    pub fn now(&self) -> u64 {
        self.core.progress
    }

    /// Ticks delivered so far (deferred ticks count once they are serviced).
    pub fn ticks(&self) -> u64 {
        self.core.ticks_delivered
    }
}

/// The kernel side of the machine contract.
///
/// Every decision hook returns the task to run next. `None` means "keep the
/// current task" when the current task can continue, and "go idle" when it
/// cannot (it blocked or exited). A hook that names a task which is blocked,
/// exited or unknown is a kernel fault and crashes the run.
pub trait SchedulerHooks: Any + Send {
    /// A system tick was delivered.
    fn on_tick(&mut self, sched: &mut Sched<'_>) -> Option<TaskId>;

    /// The current task yielded or blocked.
    fn on_yield(&mut self, sched: &mut Sched<'_>) -> Option<TaskId>;

    fn on_task_exit(&mut self, sched: &mut Sched<'_>, exited: TaskId) -> Option<TaskId> {
        let _ = exited;
        self.on_yield(sched)
    }

    /// Nothing is running and the last decision hook returned `None`.
    fn on_idle(&mut self, sched: &mut Sched<'_>) -> IdleAction {
        let _ = sched;
        IdleAction::Halt
    }

    /// Picks the first task when the machine starts.
    fn first_task(&mut self, sched: &mut Sched<'_>) -> Option<TaskId> {
        self.on_yield(sched)
    }

    /// A task was created while the machine was running.
    fn on_task_created(&mut self, sched: &mut Sched<'_>, task: TaskId) {
        let _ = (sched, task);
    }

    /// A peripheral made a blocked task Ready. Returning a task preempts the
    /// current one immediately.
    fn on_wake(&mut self, sched: &mut Sched<'_>, woken: TaskId) -> Option<TaskId> {
        let _ = (sched, woken);
        None
    }
}

/// Rotates through runnable tasks in id order on every tick and yield.
#[derive(Clone, Copy, Debug, Default)]
pub struct RoundRobin;

impl RoundRobin {
    fn next(sched: &Sched<'_>) -> Option<TaskId> {
        let n = sched.task_count() as u32;
        let start = sched.current().map_or(0, |c| c.0 + 1);
        (0..n)
            .map(|i| TaskId((start + i) % n))
            .find(|&t| sched.is_runnable(t))
    }
}

impl SchedulerHooks for RoundRobin {
    fn on_tick(&mut self, sched: &mut Sched<'_>) -> Option<TaskId> {
        Self::next(sched)
    }

    fn on_yield(&mut self, sched: &mut Sched<'_>) -> Option<TaskId> {
        Self::next(sched)
    }
}

//! The adapter between [`Kernel`] and the machine's scheduler hooks.

use super::{Decide, Kernel};
use crate::machine::{IdleAction, Sched, SchedulerHooks, TaskId};

impl SchedulerHooks for Kernel {
    fn on_tick(&mut self, s: &mut Sched<'_>) -> Option<TaskId> {
        self.advance_tick(s);
        self.decide(s, Decide::Rotate)
    }

    fn on_yield(&mut self, s: &mut Sched<'_>) -> Option<TaskId> {
        self.decide(s, Decide::Rotate)
    }

    fn on_task_exit(&mut self, s: &mut Sched<'_>, exited: TaskId) -> Option<TaskId> {
        self.forget(exited);
        self.decide(s, Decide::Rotate)
    }

    fn on_idle(&mut self, _: &mut Sched<'_>) -> IdleAction {
        if self.has_deadlines() {
            IdleAction::WaitForTick
        } else {
            IdleAction::Halt
        }
    }

    fn on_task_created(&mut self, s: &mut Sched<'_>, task: TaskId) {
        self.enqueue(s, task);
    }

    fn on_wake(&mut self, s: &mut Sched<'_>, _: TaskId) -> Option<TaskId> {
        self.decide(s, Decide::Preempt)
    }
}

use std::collections::VecDeque;

use crate::machine::TaskId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SemId(pub u32);

/// Counting semaphore. Waiters are only ever queued while `count` is zero.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Semaphore {
    pub(super) count: u32,
    max: u32,
    pub(super) waiters: VecDeque<TaskId>,
}

impl Semaphore {
    pub(super) fn new(initial: u32, max: u32) -> Self {
        Semaphore {
            count: initial,
            max,
            waiters: VecDeque::new(),
        }
    }

    pub fn count(&self) -> u32 {
        self.count
    }

    pub fn max(&self) -> u32 {
        self.max
    }

    pub fn waiters(&self) -> impl Iterator<Item = TaskId> + '_ {
        self.waiters.iter().copied()
    }
}

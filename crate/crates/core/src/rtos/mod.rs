//! A small priority kernel running on the machine through its scheduler
//! hooks.
//!
//! Eight priority levels (0 lowest, 7 highest), FIFO round-robin within a
//! level, message queues, counting semaphores and tick-based delays. The
//! highest non-empty level always wins; the running task rotates to the back
//! of its level on every tick and yield when an equal-priority task is
//! Ready.
//!
//! Kernel objects are only touched from the running task (inside a critical
//! section or an atomic [`TaskCtx::block_if`]) or from a hook, and hooks run
//! with interrupts masked, so the kernel needs no locking of its own.
//! Timeouts and delays count delivered ticks, never wall time.

mod glue;
mod queue;
mod sem;

use std::collections::{BTreeSet, VecDeque};

use thiserror::Error;

use crate::machine::{BlockReason, Machine, MachineError, RunResult, Sched, TaskCtx, TaskId, TaskResult};
use crate::memory::StackExhausted;

pub use queue::{MessageQueue, QueueId};
pub use sem::{SemId, Semaphore};

pub const PRIORITY_LEVELS: usize = 8;
pub const MAX_PRIORITY: u8 = PRIORITY_LEVELS as u8 - 1;
/// Timeout value that never expires.
pub const WAIT_FOREVER: u32 = u32::MAX;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RtosError {
    #[error("timed out")]
    TimedOut,
    #[error("semaphore already at its maximum count")]
    AtMax,
    #[error("item is {got} bytes, queue takes {expected}")]
    ItemSize { expected: usize, got: usize },
    #[error("no queue {0}")]
    NoSuchQueue(u32),
    #[error("no semaphore {0}")]
    NoSuchSemaphore(u32),
    #[error("priority {0} is above {MAX_PRIORITY}")]
    BadPriority(u8),
    #[error("invalid kernel object: {0}")]
    InvalidObject(&'static str),
    #[error(transparent)]
    Stack(#[from] StackExhausted),
    #[error(transparent)]
    Machine(MachineError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum WaitOn {
    Delay,
    Send { queue: QueueId, item: Vec<u8> },
    Receive(QueueId),
    Semaphore(SemId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Wait {
    on: WaitOn,
    /// Key in the delay list when the wait has a deadline.
    deadline: Option<(u64, u64)>,
}

/// How a wait was resolved; collected by the waiting task when it resumes.
#[derive(Clone, Debug, PartialEq, Eq)]
enum Resolution {
    Completed(Option<Vec<u8>>),
    TimedOut,
}

/// Result of the non-blocking half of a kernel call.
#[derive(Debug)]
enum Step {
    Done(Result<Option<Vec<u8>>, RtosError>),
    Wait,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Decide {
    /// Tick or yield: hand over to an equal or higher priority task.
    Rotate,
    /// A task became Ready: hand over only to a strictly higher priority.
    Preempt,
}

#[derive(Clone, Debug, Default)]
struct TaskRec {
    queued: bool,
    wait: Option<Wait>,
    resolution: Option<Resolution>,
}

#[derive(Clone, Debug)]
pub struct Kernel {
    ready: [VecDeque<TaskId>; PRIORITY_LEVELS],
    /// Pending deadlines as (tick, sequence, task), earliest first.
    delayed: BTreeSet<(u64, u64, TaskId)>,
    tasks: Vec<TaskRec>,
    queues: Vec<MessageQueue>,
    sems: Vec<Semaphore>,
    current: Option<TaskId>,
    tick_count: u64,
    seq: u64,
}

impl Default for Kernel {
    fn default() -> Self {
        Self::new()
    }
}

fn level(s: &Sched<'_>, t: TaskId) -> usize {
    s.priority(t).unwrap_or(0).min(MAX_PRIORITY) as usize
}

impl Kernel {
    pub fn new() -> Self {
        Kernel {
            ready: Default::default(),
            delayed: BTreeSet::new(),
            tasks: Vec::new(),
            queues: Vec::new(),
            sems: Vec::new(),
            current: None,
            tick_count: 0,
            seq: 0,
        }
    }

    pub fn queue_create(&mut self, capacity: usize, item_size: usize) -> Result<QueueId, RtosError> {
        if capacity == 0 {
            return Err(RtosError::InvalidObject("queue capacity must be at least 1"));
        }
        self.queues.push(MessageQueue::new(capacity, item_size));
        Ok(QueueId(self.queues.len() as u32 - 1))
    }

    pub fn semaphore_create(&mut self, initial: u32, max: u32) -> Result<SemId, RtosError> {
        if max == 0 || initial > max {
            return Err(RtosError::InvalidObject("semaphore needs 0 <= initial <= max, max >= 1"));
        }
        self.sems.push(Semaphore::new(initial, max));
        Ok(SemId(self.sems.len() as u32 - 1))
    }

    pub fn queue(&self, q: QueueId) -> Option<&MessageQueue> {
        self.queues.get(q.0 as usize)
    }

    pub fn queues(&self) -> &[MessageQueue] {
        &self.queues
    }

    pub fn semaphore(&self, s: SemId) -> Option<&Semaphore> {
        self.sems.get(s.0 as usize)
    }

    /// Ticks seen by the kernel.
    pub fn tick_count(&self) -> u64 {
        self.tick_count
    }

    /// Task chosen by the most recent scheduling decision.
    pub fn current(&self) -> Option<TaskId> {
        self.current
    }

    /// Ready tasks at a priority level, front first. The running task is
    /// not in any ready queue.
    pub fn ready_queue(&self, priority: u8) -> impl Iterator<Item = TaskId> + '_ {
        self.ready[priority.min(MAX_PRIORITY) as usize].iter().copied()
    }

    /// Tasks with a pending deadline, earliest first.
    pub fn delay_list(&self) -> impl Iterator<Item = (u64, TaskId)> + '_ {
        self.delayed.iter().map(|&(tick, _, t)| (tick, t))
    }

    pub fn is_waiting(&self, t: TaskId) -> bool {
        self.tasks.get(t.0 as usize).is_some_and(|r| r.wait.is_some())
    }

    fn rec(&mut self, t: TaskId) -> &mut TaskRec {
        let i = t.0 as usize;
        if i >= self.tasks.len() {
            self.tasks.resize_with(i + 1, TaskRec::default);
        }
        &mut self.tasks[i]
    }

    fn has_deadlines(&self) -> bool {
        !self.delayed.is_empty()
    }

    // ---- scheduling ----

    fn enqueue(&mut self, s: &Sched<'_>, t: TaskId) {
        if Some(t) == s.current() || !s.is_runnable(t) || self.rec(t).queued {
            return;
        }
        self.rec(t).queued = true;
        self.ready[level(s, t)].push_back(t);
    }

    fn pop(&mut self, level: usize) -> Option<TaskId> {
        let t = self.ready[level].pop_front()?;
        self.rec(t).queued = false;
        Some(t)
    }

    /// Brings the ready queues in line with machine state: drops tasks that
    /// are no longer runnable and appends runnable ones the kernel has not
    /// seen (new tasks, tasks woken by a peripheral), in id order.
    fn sync(&mut self, s: &Sched<'_>) {
        let cur = s.current();
        for q in &mut self.ready {
            q.retain(|&t| {
                let keep = Some(t) != cur && s.is_runnable(t);
                if !keep {
                    self.tasks[t.0 as usize].queued = false;
                }
                keep
            });
        }
        let ids: Vec<TaskId> = s.tasks().collect();
        for t in ids {
            self.enqueue(s, t);
        }
    }

    fn decide(&mut self, s: &Sched<'_>, mode: Decide) -> Option<TaskId> {
        self.sync(s);
        let cur = s.current().filter(|&c| s.is_runnable(c));
        let best = (0..PRIORITY_LEVELS).rev().find(|&l| !self.ready[l].is_empty());
        let next = match (cur, best) {
            (Some(c), Some(b)) => {
                let switch = match mode {
                    Decide::Rotate => b >= level(s, c),
                    Decide::Preempt => b > level(s, c),
                };
                if switch {
                    let next = self.pop(b);
                    self.enqueue_preempted(s, c);
                    next
                } else {
                    Some(c)
                }
            }
            (Some(c), None) => Some(c),
            (None, Some(b)) => self.pop(b),
            (None, None) => None,
        };
        self.current = next;
        next
    }

    fn enqueue_preempted(&mut self, s: &Sched<'_>, t: TaskId) {
        self.rec(t).queued = true;
        self.ready[level(s, t)].push_back(t);
    }

    /// True when a Ready task outranks `me`.
    fn outranked(&mut self, s: &Sched<'_>, me: TaskId) -> bool {
        self.sync(s);
        let mine = level(s, me);
        self.ready[mine + 1..].iter().any(|q| !q.is_empty())
    }

    // ---- waits ----

    fn start_wait(&mut self, me: TaskId, on: WaitOn, timeout: u32) {
        let deadline = (timeout != WAIT_FOREVER).then(|| {
            let key = (self.tick_count + timeout as u64, self.seq);
            self.seq += 1;
            self.delayed.insert((key.0, key.1, me));
            key
        });
        let rec = self.rec(me);
        rec.resolution = None;
        rec.wait = Some(Wait { on, deadline });
    }

    /// Ends `t`'s wait and makes it Ready.
    fn resolve(&mut self, s: &mut Sched<'_>, t: TaskId, resolution: Resolution) {
        let Some(wait) = self.rec(t).wait.take() else {
            return;
        };
        if let Some((tick, seq)) = wait.deadline {
            self.delayed.remove(&(tick, seq, t));
        }
        match wait.on {
            WaitOn::Send { queue, .. } | WaitOn::Receive(queue) => self.queues[queue.0 as usize].forget(t),
            WaitOn::Semaphore(sem) => self.sems[sem.0 as usize].waiters.retain(|&w| w != t),
            WaitOn::Delay => {}
        }
        self.rec(t).resolution = Some(resolution);
        s.wake(t);
        self.enqueue(s, t);
    }

    fn forget(&mut self, t: TaskId) {
        if let Some(wait) = self.rec(t).wait.take() {
            if let Some((tick, seq)) = wait.deadline {
                self.delayed.remove(&(tick, seq, t));
            }
            for q in &mut self.queues {
                q.forget(t);
            }
            for s in &mut self.sems {
                s.waiters.retain(|&w| w != t);
            }
        }
        self.rec(t).queued = false;
    }

    fn take_resolution(&mut self, me: TaskId) -> Result<Option<Vec<u8>>, RtosError> {
        match self.rec(me).resolution.take() {
            Some(Resolution::Completed(item)) => Ok(item),
            Some(Resolution::TimedOut) => Err(RtosError::TimedOut),
            None => Err(RtosError::InvalidObject("resumed without a resolved wait")),
        }
    }

    /// Counts a tick and resolves every wait whose deadline has arrived.
    fn advance_tick(&mut self, s: &mut Sched<'_>) {
        self.tick_count += 1;
        while let Some(&(tick, _, t)) = self.delayed.first() {
            if tick > self.tick_count {
                break;
            }
            let resolution = match self.tasks[t.0 as usize].wait.as_ref().map(|w| &w.on) {
                Some(WaitOn::Delay) => Resolution::Completed(None),
                _ => Resolution::TimedOut,
            };
            self.resolve(s, t, resolution);
        }
    }

    // ---- operations ----

    fn queue_mut(&mut self, q: QueueId) -> Result<&mut MessageQueue, RtosError> {
        self.queues.get_mut(q.0 as usize).ok_or(RtosError::NoSuchQueue(q.0))
    }

    fn send(&mut self, s: &mut Sched<'_>, me: TaskId, q: QueueId, item: &[u8], timeout: u32) -> Step {
        let queue = match self.queue_mut(q) {
            Ok(queue) => queue,
            Err(e) => return Step::Done(Err(e)),
        };
        if item.len() != queue.item_size() {
            return Step::Done(Err(RtosError::ItemSize {
                expected: queue.item_size(),
                got: item.len(),
            }));
        }
        if let Some(rx) = queue.receivers_blocked.front().copied() {
            // receivers only wait on an empty buffer
            queue.sent += 1;
            queue.received += 1;
            self.resolve(s, rx, Resolution::Completed(Some(item.to_vec())));
            return Step::Done(Ok(None));
        }
        if !queue.is_full() {
            queue.sent += 1;
            queue.buffer.push_back(item.to_vec());
            return Step::Done(Ok(None));
        }
        if timeout == 0 {
            return Step::Done(Err(RtosError::TimedOut));
        }
        queue.senders_blocked.push_back(me);
        self.start_wait(me, WaitOn::Send { queue: q, item: item.to_vec() }, timeout);
        Step::Wait
    }

    fn receive(&mut self, s: &mut Sched<'_>, me: TaskId, q: QueueId, timeout: u32) -> Step {
        let queue = match self.queue_mut(q) {
            Ok(queue) => queue,
            Err(e) => return Step::Done(Err(e)),
        };
        if let Some(item) = queue.buffer.pop_front() {
            queue.received += 1;
            if let Some(tx) = queue.senders_blocked.front().copied() {
                let parked = match &self.tasks[tx.0 as usize].wait {
                    Some(Wait {
                        on: WaitOn::Send { item, .. },
                        ..
                    }) => item.clone(),
                    _ => unreachable!("blocked sender without a send wait"),
                };
                let queue = &mut self.queues[q.0 as usize];
                queue.sent += 1;
                queue.buffer.push_back(parked);
                self.resolve(s, tx, Resolution::Completed(None));
            }
            return Step::Done(Ok(Some(item)));
        }
        if timeout == 0 {
            return Step::Done(Err(RtosError::TimedOut));
        }
        queue.receivers_blocked.push_back(me);
        self.start_wait(me, WaitOn::Receive(q), timeout);
        Step::Wait
    }

    fn take(&mut self, me: TaskId, id: SemId, timeout: u32) -> Step {
        let Some(sem) = self.sems.get_mut(id.0 as usize) else {
            return Step::Done(Err(RtosError::NoSuchSemaphore(id.0)));
        };
        if sem.count > 0 {
            sem.count -= 1;
            return Step::Done(Ok(None));
        }
        if timeout == 0 {
            return Step::Done(Err(RtosError::TimedOut));
        }
        sem.waiters.push_back(me);
        self.start_wait(me, WaitOn::Semaphore(id), timeout);
        Step::Wait
    }

    fn give(&mut self, s: &mut Sched<'_>, id: SemId) -> Result<(), RtosError> {
        let sem = self.sems.get_mut(id.0 as usize).ok_or(RtosError::NoSuchSemaphore(id.0))?;
        if let Some(w) = sem.waiters.front().copied() {
            self.resolve(s, w, Resolution::Completed(None));
            return Ok(());
        }
        if sem.count == sem.max() {
            return Err(RtosError::AtMax);
        }
        sem.count += 1;
        Ok(())
    }
}

/// Runs the machine with `kernel` installed as its scheduler.
pub fn kernel_start(kernel: Kernel, machine: &mut Machine) -> Result<RunResult, MachineError> {
    machine.start(kernel)
}

/// Creates a kernel task before the machine starts.
pub fn task_spawn(
    machine: &mut Machine,
    entry: impl FnOnce(&mut TaskCtx) -> TaskResult + Send + 'static,
    priority: u8,
    stack_size: u32,
    name: &str,
) -> Result<TaskId, RtosError> {
    if priority > MAX_PRIORITY {
        return Err(RtosError::BadPriority(priority));
    }
    machine.task_create(entry, priority, stack_size, name).map_err(|e| match e {
        MachineError::StackExhausted(e) => RtosError::Stack(e),
        other => RtosError::Machine(other),
    })
}

/// Result of a kernel call made from a task: the outer layer carries the
/// machine's trap, the inner one the kernel's answer.
pub type KernelResult<T> = TaskResult<Result<T, RtosError>>;

/// Runs the non-blocking half of an operation in a critical section, then
/// blocks if it has to and collects the resolution.
fn run_op(
    cx: &mut TaskCtx,
    reason: BlockReason,
    op: impl FnOnce(&mut Kernel, &mut Sched<'_>, TaskId) -> Step,
) -> KernelResult<Option<Vec<u8>>> {
    let me = cx.id();
    cx.disable_irq()?;
    let step = cx.with_kernel(|k: &mut Kernel, s| op(k, s, me))?;
    cx.enable_irq()?;
    match step {
        Step::Done(r) => {
            preempt_if_outranked(cx)?;
            Ok(r)
        }
        Step::Wait => {
            // a pending tick serviced by enable_irq may already have
            // resolved the wait
            cx.block_if::<Kernel>(reason, |k| k.is_waiting(me))?;
            cx.disable_irq()?;
            let r = cx.with_kernel(|k: &mut Kernel, _| k.take_resolution(me))?;
            cx.enable_irq()?;
            Ok(r)
        }
    }
}

fn preempt_if_outranked(cx: &mut TaskCtx) -> TaskResult {
    let me = cx.id();
    if cx.with_kernel(|k: &mut Kernel, s| k.outranked(s, me))? {
        cx.yield_now()?;
    }
    Ok(())
}

/// Sends one item, blocking up to `timeout` ticks while the queue is full.
pub fn queue_send(cx: &mut TaskCtx, q: QueueId, item: &[u8], timeout: u32) -> KernelResult<()> {
    Ok(run_op(cx, BlockReason::Queue(q.0), |k, s, me| k.send(s, me, q, item, timeout))?.map(drop))
}

/// Receives one item, blocking up to `timeout` ticks while the queue is
/// empty.
pub fn queue_receive(cx: &mut TaskCtx, q: QueueId, timeout: u32) -> KernelResult<Vec<u8>> {
    Ok(run_op(cx, BlockReason::Queue(q.0), |k, s, me| k.receive(s, me, q, timeout))?
        .map(|item| item.expect("a completed receive carries an item")))
}

pub fn sem_take(cx: &mut TaskCtx, id: SemId, timeout: u32) -> KernelResult<()> {
    Ok(run_op(cx, BlockReason::Semaphore(id.0), |k, _, me| k.take(me, id, timeout))?.map(drop))
}

/// Releases the semaphore, handing it straight to the longest waiter if
/// there is one.
pub fn sem_give(cx: &mut TaskCtx, id: SemId) -> KernelResult<()> {
    Ok(run_op(cx, BlockReason::Semaphore(id.0), |k, s, _| Step::Done(k.give(s, id).map(|()| None)))?.map(drop))
}

/// Blocks for `ticks` delivered ticks; `delay(0)` is a yield.
pub fn delay(cx: &mut TaskCtx, ticks: u32) -> TaskResult {
    if ticks == 0 {
        return cx.yield_now();
    }
    let me = cx.id();
    cx.block_if::<Kernel>(BlockReason::Delay, |k| {
        k.start_wait(me, WaitOn::Delay, ticks);
        true
    })?;
    Ok(())
}

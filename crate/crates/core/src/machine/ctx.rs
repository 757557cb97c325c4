use std::any::Any;
use std::cell::Cell;
use std::sync::Arc;
use std::time::Duration;

use parking_lot::{Condvar, MutexGuard};

use super::core::{spawn_task, Handoff, Inner, Phase, Shared};
use super::hooks::{Sched, SchedulerHooks};
use super::trace::{EventKind, Fnv64};
use super::{BlockReason, InterruptState, SchedError, TaskId, TaskResult, TaskState, TickMode, TickOutcome, Trap};
use crate::fault::{Fault, KernelFault};
use crate::hal::{HalError, NetworkFrame, PeripheralRegistry};
use crate::memory::{AllocError, StackExhausted, StackRegion};

/// The firmware's handle on the machine, passed to every task body.
///
/// Each call that touches machine state is a checkpoint: it consumes one
/// unit of virtual time and is the only place a tick can preempt the task.
/// Calls return [`Trap`] once the run is over; bodies are expected to
/// propagate it with `?`.
pub struct TaskCtx {
    shared: Arc<Shared>,
    id: TaskId,
    wake: Arc<Condvar>,
    stack: StackRegion,
    /// Simulated stack pointer; frames pushed by [`TaskCtx::call`].
    sp: u32,
    virtual_time: bool,
    cpu_mark: Cell<Duration>,
}

fn thread_cpu_time() -> Duration {
    let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
    // SAFETY: `ts` is a valid out-pointer for the duration of the call.
    unsafe { libc::clock_gettime(libc::CLOCK_THREAD_CPUTIME_ID, &mut ts) };
    Duration::new(ts.tv_sec as u64, ts.tv_nsec as u32)
}

type Guard<'a> = MutexGuard<'a, Inner>;

fn downcast<K: SchedulerHooks>(hooks: &mut Option<Box<dyn SchedulerHooks>>) -> Option<&mut K> {
    let h: &mut dyn Any = hooks.as_deref_mut()?;
    h.downcast_mut::<K>()
}

impl TaskCtx {
    pub(crate) fn new(shared: Arc<Shared>, id: TaskId, wake: Arc<Condvar>, stack: StackRegion, mode: TickMode) -> Self {
        TaskCtx {
            shared,
            id,
            wake,
            stack,
            sp: stack.top(),
            virtual_time: matches!(mode, TickMode::VirtualTime { .. }),
            cpu_mark: Cell::new(Duration::ZERO),
        }
    }

    pub(crate) fn shared(&self) -> Arc<Shared> {
        Arc::clone(&self.shared)
    }

    pub fn id(&self) -> TaskId {
        self.id
    }

    pub fn stack(&self) -> StackRegion {
        self.stack
    }

    pub fn stack_pointer(&self) -> u32 {
        self.sp
    }

    /// Parks until this task owns the CPU.
    fn park(&self, g: &mut Guard<'_>) -> TaskResult {
        loop {
            if g.core.phase != Phase::Running {
                return Err(Trap::Shutdown);
            }
            if g.core.current == Some(self.id) {
                break;
            }
            self.wake.wait(g);
        }
        if self.virtual_time {
            self.cpu_mark.set(thread_cpu_time());
        }
        Ok(())
    }

    pub(crate) fn wait_for_cpu(&self) -> TaskResult {
        let mut g = self.shared.inner.lock();
        self.park(&mut g)
    }

    fn settle(&self, g: &mut Guard<'_>, handoff: Handoff) -> TaskResult {
        match handoff {
            Handoff::Stay => Ok(()),
            Handoff::Away => self.park(g),
        }
    }

    /// Takes the machine lock for one API call and runs the checkpoint.
    fn enter(&self) -> Result<Guard<'_>, Trap> {
        let mut g = self.shared.inner.lock();
        if g.core.phase != Phase::Running || g.core.current != Some(self.id) {
            return Err(Trap::Shutdown);
        }
        if self.virtual_time {
            let now = thread_cpu_time();
            g.core.cpu_since_tick += now.saturating_sub(self.cpu_mark.replace(now));
        }
        let handoff = g.checkpoint()?;
        self.settle(&mut g, handoff)?;
        Ok(g)
    }

    /// An explicit preemption point with no other effect.
    pub fn checkpoint(&mut self) -> TaskResult {
        self.enter().map(drop)
    }

    /// Virtual time in progress units. Not a checkpoint.
    pub fn now(&self) -> u64 {
        self.shared.inner.lock().core.progress
    }

    /// Not a checkpoint.
    pub fn interrupt_state(&self) -> InterruptState {
        self.shared.inner.lock().core.irq
    }

    pub fn disable_irq(&mut self) -> TaskResult {
        let mut g = self.enter()?;
        g.core.irq.raise();
        g.core.emit(EventKind::IrqDisable { task: self.id });
        Ok(())
    }

    /// Re-enables interrupts; at nesting zero a pending tick is serviced
    /// before this call returns.
    pub fn enable_irq(&mut self) -> TaskResult {
        let mut g = self.enter()?;
        if g.core.irq.nesting == 0 {
            return Err(g.core.kernel_fault(KernelFault::UnbalancedEnable, "enable_irq"));
        }
        g.core.irq.lower();
        g.core.emit(EventKind::IrqEnable { task: self.id });
        if g.core.irq.enabled && g.core.irq.pending {
            g.core.irq.pending = false;
            let handoff = g.service_tick("enable_irq")?;
            self.settle(&mut g, handoff)?;
        }
        Ok(())
    }

    /// Raises a system tick from the running task.
    pub fn systick(&mut self) -> TaskResult<TickOutcome> {
        let mut g = self.enter()?;
        let outcome = if g.core.irq.nesting > 0 {
            TickOutcome::Deferred
        } else {
            TickOutcome::Serviced
        };
        let handoff = g.deliver_tick("systick")?;
        self.settle(&mut g, handoff)?;
        Ok(outcome)
    }

    /// Offers the CPU to the kernel.
    pub fn yield_now(&mut self) -> TaskResult {
        let mut g = self.enter()?;
        let handoff = g.yield_now()?;
        self.settle(&mut g, handoff)
    }

    /// Hands the CPU directly to `target`. Yielding to oneself is a no-op.
    pub fn yield_to(&mut self, target: TaskId) -> TaskResult<Result<(), SchedError>> {
        let mut g = self.enter()?;
        if target == self.id {
            return Ok(Ok(()));
        }
        if !g.core.is_runnable(target) {
            return Ok(Err(SchedError::NotRunnable(target)));
        }
        let handoff = g.yield_to(target)?;
        self.settle(&mut g, handoff)?;
        Ok(Ok(()))
    }

    /// Runs `f` on the installed kernel.
    ///
    /// The closure runs under the machine lock, so it is atomic with respect
    /// to every other task and hook.
    pub fn with_kernel<K: SchedulerHooks, R>(&mut self, f: impl FnOnce(&mut K, &mut Sched<'_>) -> R) -> TaskResult<R> {
        let mut g = self.enter()?;
        let Inner { core, hooks } = &mut *g;
        match downcast::<K>(hooks) {
            Some(k) => Ok(f(k, &mut Sched { core })),
            None => Err(core.kernel_fault(
                KernelFault::Assertion(format!("scheduler is not a {}", std::any::type_name::<K>())),
                "with_kernel",
            )),
        }
    }

    /// Blocks the task if `still_blocked` holds. The predicate and the state
    /// change happen atomically, so a wakeup cannot slip in between them.
    /// Returns whether the task actually blocked.
    pub fn block_if<K: SchedulerHooks>(&mut self, reason: BlockReason, still_blocked: impl FnOnce(&mut K) -> bool) -> TaskResult<bool> {
        let mut g = self.enter()?;
        let Inner { core, hooks } = &mut *g;
        let blocked = match downcast::<K>(hooks) {
            Some(k) => still_blocked(k),
            None => {
                return Err(core.kernel_fault(
                    KernelFault::Assertion(format!("scheduler is not a {}", std::any::type_name::<K>())),
                    "block",
                ))
            }
        };
        if blocked {
            g.block(self.id, reason, "block")?;
            self.park(&mut g)?;
        }
        Ok(blocked)
    }

    // ---- memory ----

    pub fn read(&mut self, addr: u32, buf: &mut [u8]) -> TaskResult {
        let mut g = self.enter()?;
        let core = &mut g.core;
        core.mem.read(addr, buf).map_err(|v| core.crash(Fault::Memory(v), "read"))
    }

    pub fn write(&mut self, addr: u32, data: &[u8]) -> TaskResult {
        let mut g = self.enter()?;
        let core = &mut g.core;
        core.mem.write(addr, data).map_err(|v| core.crash(Fault::Memory(v), "write"))
    }

    pub fn read_u8(&mut self, addr: u32) -> TaskResult<u8> {
        let mut b = [0u8; 1];
        self.read(addr, &mut b)?;
        Ok(b[0])
    }

    pub fn write_u8(&mut self, addr: u32, value: u8) -> TaskResult {
        self.write(addr, &[value])
    }

    pub fn read_u32(&mut self, addr: u32) -> TaskResult<u32> {
        let mut b = [0u8; 4];
        self.read(addr, &mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn write_u32(&mut self, addr: u32, value: u32) -> TaskResult {
        self.write(addr, &value.to_le_bytes())
    }

    /// Heap allocation; `None` when the heap cannot satisfy the request.
    pub fn alloc(&mut self, size: u32) -> TaskResult<Option<u32>> {
        let mut g = self.enter()?;
        match g.core.mem.region_alloc(size) {
            Ok(addr) => Ok(Some(addr)),
            Err(AllocError::OutOfMemory { .. } | AllocError::ZeroSize) => Ok(None),
            Err(e) => Err(g.core.crash(Fault::Alloc(e), "alloc")),
        }
    }

    pub fn free(&mut self, addr: u32) -> TaskResult {
        let mut g = self.enter()?;
        let core = &mut g.core;
        core.mem.region_free(addr).map_err(|e| core.crash(Fault::Alloc(e), "free"))
    }

    /// Pushes a `frame`-byte stack frame, runs `f` with the frame's base
    /// address, then pops it. A frame that reaches the far end of the stack
    /// crashes the run with a stack overflow.
    pub fn call<R>(&mut self, frame: u32, f: impl FnOnce(&mut Self, u32) -> TaskResult<R>) -> TaskResult<R> {
        let base = {
            let mut g = self.enter()?;
            let core = &mut g.core;
            let lo = self.stack.region.origin;
            let base = self.sp.saturating_sub(frame).max(lo);
            core.mem.fill_raw(base, self.sp - base, 0);
            let usage = core.mem.stack_check(&self.stack);
            if usage.overflowed {
                return Err(core.crash(Fault::Stack { base: lo, usage }, "call"));
            }
            base
        };
        let saved = std::mem::replace(&mut self.sp, base);
        let r = f(self, base);
        self.sp = saved;
        r
    }

    // ---- checked arithmetic ----

    /// Unwraps a checked arithmetic result, crashing with an integer
    /// overflow on `None`.
    pub fn checked<T>(&mut self, op: &'static str, value: Option<T>) -> TaskResult<T> {
        let mut g = self.enter()?;
        value.ok_or_else(|| g.core.crash(Fault::Overflow { op }, op))
    }

    pub fn add_i32(&mut self, a: i32, b: i32) -> TaskResult<i32> {
        self.checked("add", a.checked_add(b))
    }

    pub fn sub_i32(&mut self, a: i32, b: i32) -> TaskResult<i32> {
        self.checked("sub", a.checked_sub(b))
    }

    pub fn mul_i32(&mut self, a: i32, b: i32) -> TaskResult<i32> {
        self.checked("mul", a.checked_mul(b))
    }

    pub fn add_u32(&mut self, a: u32, b: u32) -> TaskResult<u32> {
        self.checked("add", a.checked_add(b))
    }

    pub fn sub_u32(&mut self, a: u32, b: u32) -> TaskResult<u32> {
        self.checked("sub", a.checked_sub(b))
    }

    pub fn mul_u32(&mut self, a: u32, b: u32) -> TaskResult<u32> {
        self.checked("mul", a.checked_mul(b))
    }

    pub fn div_i32(&mut self, a: i32, b: i32) -> TaskResult<i32> {
        let mut g = self.enter()?;
        if b == 0 {
            return Err(g.core.crash(Fault::DivByZero, "div"));
        }
        a.checked_div(b).ok_or_else(|| g.core.crash(Fault::Overflow { op: "div" }, "div"))
    }

    pub fn rem_i32(&mut self, a: i32, b: i32) -> TaskResult<i32> {
        let mut g = self.enter()?;
        if b == 0 {
            return Err(g.core.crash(Fault::DivByZero, "rem"));
        }
        a.checked_rem(b).ok_or_else(|| g.core.crash(Fault::Overflow { op: "rem" }, "rem"))
    }

    /// Reports a fault detected by firmware code and ends the run.
    pub fn fault(&mut self, fault: Fault, operation: &'static str) -> Trap {
        let mut g = self.shared.inner.lock();
        if g.core.phase != Phase::Running || g.core.current != Some(self.id) {
            return Trap::Shutdown;
        }
        g.core.crash(fault, operation)
    }

    // ---- tasks ----

    /// Creates a task while the machine runs. It starts Ready; the kernel is
    /// told through [`SchedulerHooks::on_task_created`].
    pub fn task_create(
        &mut self,
        entry: impl FnOnce(&mut TaskCtx) -> TaskResult + Send + 'static,
        priority: u8,
        stack_size: u32,
        name: &str,
    ) -> TaskResult<Result<TaskId, StackExhausted>> {
        let mut g = self.enter()?;
        let id = match g.core.add_task(name, priority, stack_size, Box::new(entry)) {
            Ok(id) => id,
            Err(e) => return Ok(Err(e)),
        };
        spawn_task(&self.shared, &mut g.core, id).expect("spawning a task thread");
        g.call_hook(|h, s| h.on_task_created(s, id));
        Ok(Ok(id))
    }

    /// Not a checkpoint.
    pub fn task_state(&self, id: TaskId) -> Option<TaskState> {
        self.shared.inner.lock().core.task(id).map(|t| t.state.clone())
    }

    // ---- peripherals ----

    /// Runs `f` against the peripheral registry, then wakes any task whose
    /// blocking receive can now complete.
    pub fn hal<R>(&mut self, f: impl FnOnce(&mut PeripheralRegistry) -> R) -> TaskResult<R> {
        let mut g = self.enter()?;
        let now = g.core.progress;
        g.core.hal.set_clock(now);
        let r = f(&mut g.core.hal);
        let handoff = g.after_peripheral_call()?;
        self.settle(&mut g, handoff)?;
        Ok(r)
    }

    /// Reads up to `max` bytes from an I/O slot into simulated memory at
    /// `addr`. Returns the byte count.
    pub fn io_read_into(&mut self, slot: &str, addr: u32, max: u32) -> TaskResult<Result<u32, HalError>> {
        let mut g = self.enter()?;
        let core = &mut g.core;
        let data = match core.hal.io_read(slot, max as usize) {
            Ok(d) => d,
            Err(e) => return Ok(Err(e)),
        };
        core.mem.write(addr, &data).map_err(|v| core.crash(Fault::Memory(v), "io_read"))?;
        Ok(Ok(data.len() as u32))
    }

    /// Writes `len` bytes of simulated memory at `addr` to an I/O slot.
    pub fn io_write_from(&mut self, slot: &str, addr: u32, len: u32) -> TaskResult<Result<usize, HalError>> {
        let mut g = self.enter()?;
        let core = &mut g.core;
        let mut buf = vec![0; len as usize];
        core.mem.read(addr, &mut buf).map_err(|v| core.crash(Fault::Memory(v), "io_write"))?;
        Ok(core.hal.io_write(slot, &buf))
    }

    pub fn net_send(&mut self, slot: &str, payload: &[u8]) -> TaskResult<Result<(), HalError>> {
        self.hal(|h| h.network_send(slot, payload))
    }

    /// Takes the next inbound frame. With `blocking`, an empty queue blocks
    /// the task until a frame arrives (or the run ends).
    pub fn net_receive(&mut self, slot: &str, blocking: bool) -> TaskResult<Result<Option<NetworkFrame>, HalError>> {
        let mut g = self.enter()?;
        loop {
            let now = g.core.progress;
            g.core.hal.set_clock(now);
            match g.core.hal.network_receive(slot) {
                Err(e) => return Ok(Err(e)),
                Ok(Some(frame)) => return Ok(Ok(Some(frame))),
                Ok(None) if !blocking => return Ok(Ok(None)),
                Ok(None) => {
                    g.block(self.id, BlockReason::NetworkReceive(slot.to_string()), "net_receive")?;
                    self.park(&mut g)?;
                }
            }
        }
    }

    /// Digest of task states, interrupt state and memory contents.
    /// Virtual time and peripheral logs are excluded.
    pub fn state_fingerprint(&mut self) -> TaskResult<u64> {
        let g = self.enter()?;
        let mut h = Fnv64::default();
        for t in &g.core.tasks {
            h.write_u32(t.id.0);
            h.write(&[t.priority]);
            h.write(format!("{:?}", t.state).as_bytes());
        }
        let irq = g.core.irq;
        h.write(&[irq.enabled as u8, irq.pending as u8]);
        h.write_u32(irq.nesting);
        g.core.mem.fingerprint(&mut h);
        Ok(h.finish())
    }
}

//! Built-in demo firmware.
//!
//! Every firmware reads its testcase from `uart0` and writes its output back
//! to `uart0`; the harness binds both ends before installing the tasks.

use crate::fault::BugClass;
use crate::hal::HalError;
use crate::machine::{Machine, RoundRobin, SchedulerHooks, TaskCtx, TaskResult};
use crate::memory::ImageSections;
use crate::rtos::{self, Kernel, RtosError, WAIT_FOREVER};

use super::HarnessError;

/// The slot every demo reads its testcase from and writes its output to.
pub const IO_SLOT: &str = "uart0";

/// Something the harness can install on a fresh machine.
pub trait Firmware: Send + Sync {
    fn name(&self) -> &str;

    /// Memory image loaded by the reset handler.
    fn image(&self) -> ImageSections {
        ImageSections::empty()
    }

    /// Creates the tasks and returns the scheduler to run them under.
    fn install(&self, machine: &mut Machine) -> Result<Box<dyn SchedulerHooks>, HarnessError>;
}

/// A registered demo.
pub struct Demo {
    pub name: &'static str,
    pub summary: &'static str,
    /// For the bug corpus: the class the demo must be reported as.
    pub expected: Option<BugClass>,
    image: fn() -> ImageSections,
    install: Install,
}

type InstallFn = fn(&mut Machine) -> Result<Box<dyn SchedulerHooks>, HarnessError>;

enum Install {
    Tasks(InstallFn),
    /// A bug-corpus body run as task 1 next to a benign task 0.
    Bug(fn(&mut TaskCtx) -> TaskResult),
}

impl Firmware for Demo {
    fn name(&self) -> &str {
        self.name
    }

    fn image(&self) -> ImageSections {
        (self.image)()
    }

    fn install(&self, machine: &mut Machine) -> Result<Box<dyn SchedulerHooks>, HarnessError> {
        match self.install {
            Install::Tasks(f) => f(machine),
            Install::Bug(body) => install_bug(machine, body),
        }
    }
}

impl std::fmt::Debug for Demo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Demo").field("name", &self.name).finish_non_exhaustive()
    }
}

const fn demo(
    name: &'static str,
    summary: &'static str,
    install: InstallFn,
) -> Demo {
    Demo {
        name,
        summary,
        expected: None,
        image: ImageSections::empty,
        install: Install::Tasks(install),
    }
}

const fn bug(name: &'static str, summary: &'static str, class: BugClass, body: fn(&mut TaskCtx) -> TaskResult) -> Demo {
    Demo {
        name,
        summary,
        expected: Some(class),
        image: ImageSections::empty,
        install: Install::Bug(body),
    }
}

pub static DEMOS: &[Demo] = &[
    demo("echo", "reader and writer tasks pass the input through a message queue", install_echo),
    demo("empty", "a single task that exits immediately", install_empty),
    Demo {
        name: "two-task",
        summary: "two busy tasks alternating on every tick",
        expected: None,
        image: two_task_image,
        install: Install::Tasks(install_two_task),
    },
    demo("net-echo", "input sent over a loopback Ethernet pair and echoed by a blocking receiver", install_net_echo),
    demo("rtos-demo", "producer, consumer and monitor using a queue, a semaphore and delays", install_rtos_demo),
    Demo {
        name: "tlv-parser",
        summary: "type-length-value parser with a planted off-by-one heap write",
        expected: None,
        image: tlv_image,
        install: Install::Tasks(install_tlv),
    },
    bug("div-by-zero-demo", "divides by a value computed to zero", BugClass::DivByZero, bug_div_by_zero),
    bug("integer-overflow-demo", "increments an i32 past its maximum", BugClass::IntegerOverflow, bug_integer_overflow),
    bug("stack-overflow-demo", "unbounded recursion on a 1 KiB stack", BugClass::StackOverflow, bug_stack_overflow),
    bug("heap-overflow-demo", "writes one byte past a 13-byte block", BugClass::HeapOverflow, bug_heap_overflow),
    bug("null-deref-demo", "writes through a null pointer", BugClass::NullDeref, bug_null_deref),
    bug("double-free-demo", "frees the same block twice", BugClass::DoubleFree, bug_double_free),
    bug("use-after-free-demo", "reads a block after freeing it", BugClass::UseAfterFree, bug_use_after_free),
];

pub fn lookup(name: &str) -> Result<&'static Demo, HarnessError> {
    DEMOS
        .iter()
        .find(|d| d.name == name)
        .ok_or_else(|| HarnessError::UnknownFirmware(name.to_string()))
}

/// The bug corpus: every demo with an expected class.
pub fn bug_demos() -> impl Iterator<Item = &'static Demo> {
    DEMOS.iter().filter(|d| d.expected.is_some())
}

fn rtos_ok<T>(r: Result<T, RtosError>) -> T {
    r.unwrap_or_else(|e| panic!("kernel call that cannot fail here failed: {e}"))
}

fn heap_buffer(cx: &mut TaskCtx, size: u32) -> TaskResult<u32> {
    Ok(cx.alloc(size)?.expect("demo heap buffers fit the default heap"))
}

// ---- echo ----

const CHUNK: u32 = 16;

fn install_echo(m: &mut Machine) -> Result<Box<dyn SchedulerHooks>, HarnessError> {
    let mut k = Kernel::new();
    let q = k.queue_create(4, CHUNK as usize + 1)?;
    rtos::task_spawn(
        m,
        move |cx| {
            let buf = heap_buffer(cx, CHUNK)?;
            loop {
                let mut item = vec![0; CHUNK as usize + 1];
                match cx.io_read_into(IO_SLOT, buf, CHUNK)? {
                    Ok(n) => {
                        item[0] = n as u8;
                        cx.read(buf, &mut item[1..1 + n as usize])?;
                        rtos_ok(rtos::queue_send(cx, q, &item, WAIT_FOREVER)?);
                    }
                    Err(HalError::EndOfInput) => {
                        // zero length marks the end of the stream
                        rtos_ok(rtos::queue_send(cx, q, &item, WAIT_FOREVER)?);
                        break;
                    }
                    Err(e) => panic!("uart0 read failed: {e}"),
                }
            }
            cx.free(buf)
        },
        2,
        2048,
        "reader",
    )?;
    rtos::task_spawn(
        m,
        move |cx| {
            let buf = heap_buffer(cx, CHUNK)?;
            loop {
                let item = rtos_ok(rtos::queue_receive(cx, q, WAIT_FOREVER)?);
                let n = item[0] as u32;
                if n == 0 {
                    break;
                }
                cx.write(buf, &item[1..1 + n as usize])?;
                cx.io_write_from(IO_SLOT, buf, n)?.expect("uart0 is bound");
            }
            cx.free(buf)
        },
        1,
        2048,
        "writer",
    )?;
    Ok(Box::new(k))
}

// ---- empty ----

fn install_empty(m: &mut Machine) -> Result<Box<dyn SchedulerHooks>, HarnessError> {
    m.task_create(|_| Ok(()), 1, 512, "empty")?;
    Ok(Box::new(RoundRobin))
}

// ---- two-task ----

/// Counter address of each two-task worker, in `.bss`.
pub const TWO_TASK_COUNTERS: [u32; 2] = [0x2000_0000, 0x2000_0004];
/// Read-modify-write rounds per two-task worker (two checkpoints each).
pub const TWO_TASK_ROUNDS: u32 = 100;

fn two_task_image() -> ImageSections {
    ImageSections::new(Vec::new(), 0, TWO_TASK_COUNTERS[0], 8)
}

fn install_two_task(m: &mut Machine) -> Result<Box<dyn SchedulerHooks>, HarnessError> {
    for (i, addr) in TWO_TASK_COUNTERS.into_iter().enumerate() {
        m.task_create(
            move |cx| {
                for _ in 0..TWO_TASK_ROUNDS {
                    let v = cx.read_u32(addr)?;
                    cx.write_u32(addr, v + 1)?;
                }
                Ok(())
            },
            1,
            1024,
            &format!("worker{i}"),
        )?;
    }
    Ok(Box::new(RoundRobin))
}

// ---- net-echo ----

fn install_net_echo(m: &mut Machine) -> Result<Box<dyn SchedulerHooks>, HarnessError> {
    m.hal().init_loopback_pair("eth0", "eth1")?;
    rtos::task_spawn(
        m,
        |cx| loop {
            let frame = cx.net_receive("eth1", true)?.expect("eth1 is bound");
            let frame = frame.expect("blocking receive returns a frame");
            if frame.payload[0] == 0 {
                return Ok(());
            }
            cx.hal(|h| h.io_write(IO_SLOT, &frame.payload[1..]))?.expect("uart0 is bound");
        },
        3,
        2048,
        "receiver",
    )?;
    rtos::task_spawn(
        m,
        |cx| loop {
            let chunk = cx.hal(|h| h.io_read(IO_SLOT, 32))?;
            let mut frame = vec![1];
            match chunk {
                Ok(bytes) => frame.extend_from_slice(&bytes),
                Err(HalError::EndOfInput) => frame[0] = 0,
                Err(e) => panic!("uart0 read failed: {e}"),
            }
            cx.net_send("eth0", &frame)?.expect("loopback send");
            if frame[0] == 0 {
                return Ok(());
            }
        },
        2,
        2048,
        "sender",
    )?;
    Ok(Box::new(Kernel::new()))
}

// ---- rtos-demo ----

fn install_rtos_demo(m: &mut Machine) -> Result<Box<dyn SchedulerHooks>, HarnessError> {
    const ITEMS: u32 = 8;
    let mut k = Kernel::new();
    let q = k.queue_create(2, 4)?;
    let done = k.semaphore_create(0, 1)?;
    rtos::task_spawn(
        m,
        move |cx| {
            for i in 0..ITEMS {
                rtos_ok(rtos::queue_send(cx, q, &i.to_le_bytes(), WAIT_FOREVER)?);
                rtos::delay(cx, 1)?;
            }
            Ok(())
        },
        2,
        2048,
        "producer",
    )?;
    rtos::task_spawn(
        m,
        move |cx| {
            for _ in 0..ITEMS {
                let item = rtos_ok(rtos::queue_receive(cx, q, WAIT_FOREVER)?);
                let n = u32::from_le_bytes(item.try_into().expect("4-byte items"));
                let line = format!("item {n} at tick {}\n", cx.with_kernel(|k: &mut Kernel, _| k.tick_count())?);
                cx.hal(|h| h.io_write(IO_SLOT, line.as_bytes()))?.expect("uart0 is bound");
            }
            rtos_ok(rtos::sem_give(cx, done)?);
            Ok(())
        },
        3,
        2048,
        "consumer",
    )?;
    rtos::task_spawn(
        m,
        move |cx| {
            rtos_ok(rtos::sem_take(cx, done, WAIT_FOREVER)?);
            cx.hal(|h| h.io_write(IO_SLOT, b"done\n"))?.expect("uart0 is bound");
            Ok(())
        },
        1,
        2048,
        "monitor",
    )?;
    Ok(Box::new(k))
}

// ---- tlv-parser ----

const TLV_BANNER: &[u8] = b"tlv-parser ready\n";
const TLV_BANNER_ADDR: u32 = 0x2000_0000;
/// Record counter, zeroed by the reset handler.
const TLV_COUNT_ADDR: u32 = 0x2000_0100;
const TLV_MAX_INPUT: u32 = 256;
/// Records of this type are copied into a heap block and NUL-terminated one
/// byte past its end.
pub const TLV_OVERFLOW_TYPE: u8 = 0x7f;
/// Records of this type divide by their first value byte.
pub const TLV_DIVIDE_TYPE: u8 = 0xee;

fn tlv_image() -> ImageSections {
    ImageSections::new(TLV_BANNER.to_vec(), TLV_BANNER_ADDR, TLV_COUNT_ADDR, 64)
}

fn install_tlv(m: &mut Machine) -> Result<Box<dyn SchedulerHooks>, HarnessError> {
    m.task_create(tlv_main, 1, 2048, "parser")?;
    Ok(Box::new(RoundRobin))
}

fn tlv_main(cx: &mut TaskCtx) -> TaskResult {
    cx.io_write_from(IO_SLOT, TLV_BANNER_ADDR, TLV_BANNER.len() as u32)?.expect("uart0 is bound");
    let input = heap_buffer(cx, TLV_MAX_INPUT)?;
    let mut len = 0;
    while len < TLV_MAX_INPUT {
        match cx.io_read_into(IO_SLOT, input + len, TLV_MAX_INPUT - len)? {
            Ok(n) => len += n,
            Err(_) => break,
        }
    }
    let mut pos = 0;
    while pos + 2 <= len {
        let kind = cx.read_u8(input + pos)?;
        let declared = cx.read_u8(input + pos + 1)? as u32;
        let value = input + pos + 2;
        let avail = declared.min(len - pos - 2);
        match kind {
            TLV_OVERFLOW_TYPE if declared > 0 => {
                let copy = heap_buffer(cx, declared)?;
                for i in 0..avail {
                    let b = cx.read_u8(value + i)?;
                    cx.write_u8(copy + i, b)?;
                }
                cx.write_u8(copy + declared, 0)?;
                cx.free(copy)?;
            }
            TLV_DIVIDE_TYPE if avail > 0 => {
                let divisor = cx.read_u8(value)? as i32;
                cx.div_i32(1000, divisor)?;
            }
            _ => {}
        }
        let count = cx.read_u32(TLV_COUNT_ADDR)?;
        cx.write_u32(TLV_COUNT_ADDR, count + 1)?;
        pos += 2 + declared;
    }
    let count = cx.read_u32(TLV_COUNT_ADDR)?;
    cx.hal(|h| h.io_write(IO_SLOT, format!("records={count}\n").as_bytes()))?.expect("uart0 is bound");
    cx.free(input)
}

// ---- bug corpus ----

/// Task 0 is benign; task 1 carries the bug, so every crash report must
/// name task 1.
fn install_bug(m: &mut Machine, body: fn(&mut TaskCtx) -> TaskResult) -> Result<Box<dyn SchedulerHooks>, HarnessError> {
    rtos::task_spawn(
        m,
        |cx| {
            for _ in 0..50 {
                cx.checkpoint()?;
            }
            Ok(())
        },
        1,
        1024,
        "benign",
    )?;
    rtos::task_spawn(m, body, 1, 1024, "buggy")?;
    Ok(Box::new(Kernel::new()))
}

fn bug_div_by_zero(cx: &mut TaskCtx) -> TaskResult {
    let d = cx.sub_i32(3, 3)?;
    cx.div_i32(100, d)?;
    Ok(())
}

fn bug_integer_overflow(cx: &mut TaskCtx) -> TaskResult {
    let mut acc = i32::MAX - 5;
    loop {
        acc = cx.add_i32(acc, 1)?;
    }
}

fn recurse(cx: &mut TaskCtx, depth: u32) -> TaskResult {
    cx.call(128, |cx, frame| {
        cx.write_u32(frame, depth)?;
        recurse(cx, depth + 1)
    })
}

fn bug_stack_overflow(cx: &mut TaskCtx) -> TaskResult {
    recurse(cx, 0)
}

fn bug_heap_overflow(cx: &mut TaskCtx) -> TaskResult {
    let p = heap_buffer(cx, 13)?;
    cx.write_u8(p + 13, 0x41)?;
    cx.free(p)
}

fn bug_null_deref(cx: &mut TaskCtx) -> TaskResult {
    cx.write_u32(0, 0xdead_beef)
}

fn bug_double_free(cx: &mut TaskCtx) -> TaskResult {
    let p = heap_buffer(cx, 32)?;
    cx.free(p)?;
    cx.free(p)
}

fn bug_use_after_free(cx: &mut TaskCtx) -> TaskResult {
    let p = heap_buffer(cx, 32)?;
    cx.write_u8(p, 1)?;
    cx.free(p)?;
    cx.read_u8(p).map(drop)
}

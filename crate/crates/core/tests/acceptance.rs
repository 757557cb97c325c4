//! Acceptance suite: one PASS/FAIL line per criterion, run sequentially so
//! the timing budgets measure one criterion at a time.

mod common;

use std::collections::BTreeSet;
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::{alternation_periods, check_tick_deferral, crc32_bitwise, hex, sha256_reference, HeapOracle, StorageModel};
use parking_lot::Mutex;
use pmcu::fault::BugClass;
use pmcu::hal::pcap;
use pmcu::hal::*;
use pmcu::harness::*;
use pmcu::machine::*;
use pmcu::memory::*;
use pmcu::rtos::Kernel;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn within(started: Instant, budget: Duration, detail: String) -> Outcome {
    let took = started.elapsed();
    if took > budget {
        Err(format!("{detail}; took {took:.2?}, budget {budget:?}"))
    } else {
        Ok(format!("{detail}; {took:.2?}"))
    }
}

// ---------------------------------------------------------------------------

const COUNTER: u32 = 0x2000_0000;

fn counter_image() -> ImageSections {
    ImageSections::new(Vec::new(), 0, COUNTER, 4)
}

/// Four tasks each add 10,000 to one shared counter inside critical
/// sections, under 100 random tick periods, section lengths and schedulers.
fn exclusivity() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let mut periods = BTreeSet::new();
    for config in 0..100 {
        let period = rng.random_range(1..=64);
        let inner = rng.random_range(0..=3u32);
        let kernel = rng.random_bool(0.5);
        periods.insert(period);
        let mut m = Machine::with_image(
            MachineConfig {
                tick: TickConfig::deterministic(period),
                trace_enabled: false,
                rng_seed: config,
                ..MachineConfig::default()
            },
            &counter_image(),
        )
        .map_err(|e| e.to_string())?;
        for _ in 0..4 {
            let stack = rng.random_range(256..=1024);
            m.task_create(
                move |cx| {
                    for _ in 0..10_000 {
                        cx.disable_irq()?;
                        let v = cx.read_u32(COUNTER)?;
                        for _ in 0..inner {
                            cx.checkpoint()?;
                        }
                        cx.write_u32(COUNTER, v + 1)?;
                        cx.enable_irq()?;
                    }
                    Ok(())
                },
                1,
                stack,
                "inc",
            )
            .map_err(|e| e.to_string())?;
        }
        let result = if kernel { m.start(Kernel::new()) } else { m.start(RoundRobin) };
        let result = result.map_err(|e| e.to_string())?;
        ensure!(result == RunResult::Halted, "config {config}: {result:?}");
        let mut b = [0; 4];
        m.memory().read_raw(COUNTER, &mut b);
        let total = u32::from_le_bytes(b);
        ensure!(
            total == 40_000,
            "config {config} (period {period}, {inner} inner checkpoints): counter {total}"
        );
        ensure!(m.ticks_delivered() > 0, "config {config}: no tick was delivered");
    }
    within(
        started,
        Duration::from_secs(30),
        format!("100 configs, {} distinct periods, all 40000", periods.len()),
    )
}

// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
enum IrqOp {
    Disable,
    Enable,
    Checkpoint,
    Systick,
    Yield,
}

/// A balanced random program: enables only when masked, yields only when
/// unmasked, and trailing enables close every open section.
fn irq_program(rng: &mut ChaCha8Rng) -> Vec<IrqOp> {
    let mut ops = Vec::new();
    let mut nesting = 0;
    for _ in 0..rng.random_range(1..=30) {
        let op = match rng.random_range(0..5) {
            0 if nesting < 3 => IrqOp::Disable,
            1 if nesting > 0 => IrqOp::Enable,
            2 => IrqOp::Systick,
            3 if nesting == 0 => IrqOp::Yield,
            _ => IrqOp::Checkpoint,
        };
        match op {
            IrqOp::Disable => nesting += 1,
            IrqOp::Enable => nesting -= 1,
            _ => {}
        }
        ops.push(op);
    }
    ops.extend(std::iter::repeat_n(IrqOp::Enable, nesting));
    ops
}

fn run_irq_program(cx: &mut TaskCtx, ops: &[IrqOp]) -> TaskResult {
    for op in ops {
        match op {
            IrqOp::Disable => cx.disable_irq()?,
            IrqOp::Enable => {
                cx.enable_irq()?;
                let s = cx.interrupt_state();
                // the outermost enable leaves nothing pending behind
                assert!(s.nesting > 0 || !s.pending, "pending tick left after enable: {s:?}");
            }
            IrqOp::Checkpoint => cx.checkpoint()?,
            IrqOp::Systick => {
                let masked = cx.interrupt_state().nesting > 0;
                let outcome = cx.systick()?;
                assert_eq!(outcome == TickOutcome::Deferred, masked);
            }
            IrqOp::Yield => cx.yield_now()?,
        }
    }
    Ok(())
}

/// Counts pending episodes: runs of deferrals that set a clear flag.
fn pending_episodes(events: &[TraceEvent]) -> usize {
    let mut pending = false;
    let mut episodes = 0;
    for e in events {
        match e.kind {
            EventKind::TickDeferred if !pending => {
                pending = true;
                episodes += 1;
            }
            EventKind::TickDelivered => pending = false,
            _ => {}
        }
    }
    episodes
}

fn tick_deferral() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0002);
    let (mut deferred, mut serviced) = (0, 0);
    for case in 0..10_000 {
        let mut m = Machine::new(MachineConfig {
            tick: TickConfig::deterministic(rng.random_range(1..=6)),
            ..MachineConfig::default()
        })
        .map_err(|e| e.to_string())?;
        for _ in 0..rng.random_range(1..=3) {
            let ops = irq_program(&mut rng);
            m.task_create(move |cx| run_irq_program(cx, &ops), 1, 256, "irq")
                .map_err(|e| e.to_string())?;
        }
        let result = m.start(RoundRobin).map_err(|e| format!("case {case}: {e}"))?;
        ensure!(result == RunResult::Halted, "case {case}: {result:?}");
        let trace = m.trace().map_err(|e| e.to_string())?;
        let n = check_tick_deferral(&trace).map_err(|e| format!("case {case}: {e}"))?;
        let episodes = pending_episodes(&trace);
        ensure!(n == episodes, "case {case}: {episodes} pending episodes, {n} serviced at enable");
        deferred += trace.iter().filter(|e| e.kind == EventKind::TickDeferred).count();
        serviced += n;
    }
    ensure!(serviced > 1000, "only {serviced} pending ticks exercised");
    within(
        started,
        Duration::from_secs(60),
        format!("10000 interleavings, {deferred} deferrals, {serviced} serviced at enable"),
    )
}

// ---------------------------------------------------------------------------

fn two_task_alternation() -> Outcome {
    let opts = RunOptions {
        keep_trace: true,
        ..RunOptions::default()
    };
    let fw = lookup("two-task").map_err(|e| e.to_string())?;
    let mut rendered = Vec::new();
    let mut periods = 0;
    for _ in 0..5 {
        let r = run_once(fw, b"", &opts).map_err(|e| e.to_string())?;
        ensure!(r.outcome == RunResult::Halted, "two-task ended {:?}", r.outcome);
        let trace = r.trace.expect("trace kept");
        periods = alternation_periods(&trace, TaskId(0), TaskId(1));
        rendered.push(render(&trace));
    }
    ensure!(periods >= 10, "only {periods} alternation periods");
    ensure!(rendered.windows(2).all(|w| w[0] == w[1]), "traces differ between runs");
    Ok(format!(
        "{periods} periods, 5 identical traces of {} bytes",
        rendered[0].len()
    ))
}

// ---------------------------------------------------------------------------

fn allocator_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0004);
    let origin = 0x2002_0000;
    let (mut ops_total, mut errors) = (0u64, 0u64);
    for seq in 0..1000 {
        let size = [4096, 8192, 16384][rng.random_range(0..3)];
        let redzone = [8, 16, 32][rng.random_range(0..3)];
        let quarantine = [0, 256, 1024, 4096][rng.random_range(0..4)];
        let mut heap = HeapAllocator::new(
            Region::new(origin, size),
            HeapPolicy {
                redzone,
                quarantine_bytes: quarantine,
                align: 8,
            },
            AllocatorMode::Region,
        );
        let mut oracle = HeapOracle::new(origin, size, redzone, quarantine);
        let mut handed_out: Vec<u32> = Vec::new();
        let len = rng.random_range(1..=10_000);
        for op in 0..len {
            let roll = rng.random_range(0..100);
            let (got, want, what) = if roll < 55 || handed_out.is_empty() {
                let n = rng.random_range(0..=256);
                let (g, w) = (heap.alloc(n), oracle.alloc(n));
                if let Ok(a) = g {
                    handed_out.push(a);
                }
                (g.map(Some), w.map(Some), format!("alloc({n})"))
            } else if roll < 97 {
                let a = handed_out[rng.random_range(0..handed_out.len())];
                (heap.free(a).map(|_| None), oracle.free(a).map(|_| None), format!("free({a:#x})"))
            } else {
                let a = origin + rng.random_range(0..size);
                (heap.free(a).map(|_| None), oracle.free(a).map(|_| None), format!("free({a:#x})"))
            };
            ensure!(got == want, "sequence {seq} op {op} {what}: heap {got:?}, oracle {want:?}");
            errors += got.is_err() as u64;
        }
        ops_total += len as u64;
        ensure!(
            heap.shadow() == oracle.shadow().as_slice(),
            "sequence {seq}: shadow differs from the oracle"
        );
    }
    within(
        started,
        Duration::from_secs(120),
        format!("1000 sequences, {ops_total} ops, {errors} error outcomes"),
    )
}

// ---------------------------------------------------------------------------

fn bug_matrix() -> Outcome {
    let rows = corpus_matrix().map_err(|e| e.to_string())?;
    let wanted = [
        BugClass::DivByZero,
        BugClass::IntegerOverflow,
        BugClass::StackOverflow,
        BugClass::HeapOverflow,
        BugClass::NullDeref,
        BugClass::DoubleFree,
        BugClass::UseAfterFree,
    ];
    for class in wanted {
        let row = rows
            .iter()
            .find(|r| r.expected == class)
            .ok_or(format!("no demo for {class}"))?;
        ensure!(row.detected(), "{}: expected {class}, observed {:?}", row.demo, row.observed);
    }
    // a write exactly one byte past every block size up to 64
    let mut mem = MachineMemory::reset_handler(&ImageSections::empty(), &MemoryMap::default()).map_err(|e| e.to_string())?;
    for n in 1..=64 {
        let p = mem.region_alloc(n).map_err(|e| e.to_string())?;
        ensure!(mem.write(p + n - 1, &[0]).is_ok(), "last byte of a {n}-byte block rejected");
        match mem.write(p + n, &[0]) {
            Err(v) if v.class == ViolationClass::HeapOverflow && v.fault_addr == p + n => {}
            other => return Err(format!("1-byte overflow of a {n}-byte block: {other:?}")),
        }
    }
    let overflow = rows.iter().find(|r| r.expected == BugClass::HeapOverflow).unwrap();
    Ok(format!(
        "7/7 detected; 1-byte overflow caught for sizes 1..=64 and by {}",
        overflow.demo
    ))
}

// ---------------------------------------------------------------------------

fn storage_roundtrip() -> Outcome {
    const BLOCKS: usize = 1024;
    const BS: usize = 512;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("medium.img");
    std::fs::write(&path, vec![0; BLOCKS * BS]).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0006);
    let mut hal = PeripheralRegistry::new(0);
    hal.storage_init("sd0", StorageMedium::new(&path)).map_err(|e| e.to_string())?;
    let mut model = StorageModel::new(BS, BLOCKS);
    let (mut writes, mut reads) = (0, 0);
    for op in 0..10_000 {
        let count = rng.random_range(1..=4);
        let index = rng.random_range(0..=BLOCKS - count);
        if rng.random_bool(0.6) {
            let mut data = vec![0; count * BS];
            rng.fill(&mut data[..]);
            hal.storage_write("sd0", index as u64, &data).map_err(|e| format!("op {op}: {e}"))?;
            model.write(index, &data);
            writes += 1;
        } else {
            let got = hal.storage_read("sd0", index as u64, count as u64).map_err(|e| format!("op {op}: {e}"))?;
            ensure!(got == model.read(index, count), "op {op}: read of {count} blocks at {index} differs");
            reads += 1;
        }
    }
    drop(hal);
    let mut again = PeripheralRegistry::new(0);
    again.storage_init("sd0", StorageMedium::new(&path)).map_err(|e| e.to_string())?;
    for index in 0..BLOCKS {
        let got = again.storage_read("sd0", index as u64, 1).map_err(|e| e.to_string())?;
        ensure!(got == model.read(index, 1), "block {index} differs after re-init");
    }
    let file = std::fs::read(&path).map_err(|e| e.to_string())?;
    ensure!(file == model.image(), "backing file differs from the oracle image");
    Ok(format!("{writes} writes, {reads} reads, file byte-exact after re-init"))
}

// ---------------------------------------------------------------------------

fn network() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0007);
    let mut hal = PeripheralRegistry::new(0);
    hal.init_loopback_pair("eth0", "eth1").map_err(|e| e.to_string())?;
    let mut sent = std::collections::VecDeque::new();
    let mut received = 0;
    let mut total = 0;
    while received < 1000 {
        if total < 1000 && (sent.is_empty() || rng.random_bool(0.6)) {
            let len = rng.random_range(1..=MAX_FRAME);
            let mut payload = vec![0; len];
            rng.fill(&mut payload[..]);
            hal.set_clock(total as u64);
            hal.network_send("eth0", &payload).map_err(|e| e.to_string())?;
            sent.push_back((payload, total as u64));
            total += 1;
        } else {
            let frame = hal
                .network_receive("eth1")
                .map_err(|e| e.to_string())?
                .ok_or(format!("frame {received} missing"))?;
            let (payload, ts) = sent.pop_front().expect("a frame is in flight");
            ensure!(
                frame.payload == payload && frame.timestamp == ts,
                "frame {received} arrived out of order or corrupted"
            );
            received += 1;
        }
    }
    ensure!(
        hal.network_receive("eth1").map_err(|e| e.to_string())?.is_none(),
        "extra frame after 1000"
    );

    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/three-frames.pcap");
    let drain = || -> Result<Vec<(Vec<u8>, u64)>, String> {
        let seen: Arc<Mutex<Vec<(Vec<u8>, u64)>>> = Arc::default();
        let s = Arc::clone(&seen);
        let mut hal = PeripheralRegistry::new(0);
        hal.network_init(
            "eth0",
            NetworkBackendKind::Replay {
                capture: fixture.clone(),
                outbound: None,
            },
            Some(Box::new(move |f: &NetworkFrame| s.lock().push((f.payload.clone(), f.timestamp)))),
        )
        .map_err(|e| e.to_string())?;
        while hal.network_receive("eth0").map_err(|e| e.to_string())?.is_some() {}
        let seen = seen.lock().clone();
        Ok(seen)
    };
    let (first, second) = (drain()?, drain()?);
    ensure!(first.len() == 3, "fixture yielded {} frames", first.len());
    ensure!(first == second, "replay callbacks differ between drains");
    let records = pcap::parse(&std::fs::read(&fixture).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let expected: Vec<_> = records.iter().map(|r| (r.data.clone(), r.micros())).collect();
    ensure!(first == expected, "replayed frames differ from the capture");
    Ok("1000 loopback frames in order; 3-frame replay identical across 2 drains".into())
}

// ---------------------------------------------------------------------------

fn accelerator() -> Outcome {
    const EMPTY_SHA: &str = "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855";
    ensure!(crc32(b"123456789") == 0xCBF4_3926, "crc32 check value");
    ensure!(crc32_bitwise(b"123456789") == 0xCBF4_3926, "reference crc32 check value");
    ensure!(hex(&sha256(b"")) == EMPTY_SHA, "sha256 of the empty string");
    ensure!(hex(&sha256_reference(b"")) == EMPTY_SHA, "reference sha256 of the empty string");
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0008);
    let mut hal = PeripheralRegistry::new(0);
    hal.bind_accelerator("crypto");
    for i in 0..1000 {
        let mut data = vec![0; rng.random_range(0..=64 * 1024)];
        rng.fill(&mut data[..]);
        let crc = hal.accel_crc32("crypto", &data).map_err(|e| e.to_string())?;
        ensure!(crc == crc32_bitwise(&data), "input {i}: crc32 differs");
        let digest = hal.accel_sha256("crypto", &data).map_err(|e| e.to_string())?;
        ensure!(digest == sha256_reference(&data), "input {i}: sha256 differs");
    }
    Ok("check values match; 1000 random inputs agree with both references".into())
}

// ---------------------------------------------------------------------------

fn isolation_and_throughput() -> Outcome {
    let started = Instant::now();
    let opts = RunOptions {
        keep_trace: true,
        ..RunOptions::default()
    };
    let mut jobs = Vec::new();
    for name in ["tlv-parser", "echo", "rtos-demo", "heap-overflow-demo", "use-after-free-demo"] {
        let fw = lookup(name).map_err(|e| e.to_string())?;
        for t in TestcaseSource::generator(11).take(40).map_err(|e| e.to_string())? {
            jobs.push((fw, t.data));
        }
    }
    let baseline: Vec<RunReport> = jobs
        .iter()
        .map(|(fw, data)| run_once(*fw, data, &opts))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let crashed = baseline.iter().filter(|r| matches!(r.outcome, RunResult::Crashed(_))).count();
    let mut order: Vec<usize> = (0..jobs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(0x5eed_0009));
    for &i in &order {
        let (fw, data) = &jobs[i];
        let r = run_once(*fw, data, &opts).map_err(|e| e.to_string())?;
        ensure!(r == baseline[i], "run {i} ({}) differs when shuffled", fw.name);
    }

    let empty = lookup("empty").map_err(|e| e.to_string())?;
    let stats = run_persistent(empty, &TestcaseSource::generator(0), 3000, &RunOptions::default(), 1)
        .map_err(|e| e.to_string())?;
    ensure!(stats.crashes.is_empty(), "empty firmware crashed");
    ensure!(
        stats.execs_per_sec >= 1000.0,
        "empty firmware ran at {:.0} execs/sec",
        stats.execs_per_sec
    );
    within(
        started,
        Duration::from_secs(60),
        format!(
            "{} runs ({crashed} crashing) identical when shuffled; empty firmware at {:.0} execs/sec",
            jobs.len(),
            stats.execs_per_sec
        ),
    )
}

// ---------------------------------------------------------------------------

fn fuzz_determinism() -> Outcome {
    let fw = lookup("echo").map_err(|e| e.to_string())?;
    let source = TestcaseSource::Generator { seed: 7, len: 0..=64 };
    let opts = RunOptions {
        seed: 7,
        ..RunOptions::default()
    };
    let a = run_persistent(fw, &source, 1000, &opts, 1).map_err(|e| e.to_string())?.report();
    let b = run_persistent(fw, &source, 1000, &opts, 1).map_err(|e| e.to_string())?.report();
    ensure!(a.same_results(&b), "reports differ:\n{a}\n{b}");
    let strip = |r: &FuzzReport| {
        r.to_string()
            .split_whitespace()
            .filter(|w| !w.starts_with("eps="))
            .collect::<Vec<_>>()
            .join(" ")
    };
    ensure!(strip(&a) == strip(&b), "report text differs outside eps");
    Ok(format!("execs={} crashes={} traces={} in both runs", a.execs, a.crashes.len(), a.traces))
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("scheduler exclusivity and atomicity", exclusivity),
        ("tick deferral", tick_deferral),
        ("two-task alternation trace", two_task_alternation),
        ("allocator oracle equivalence", allocator_oracle),
        ("bug observability matrix", bug_matrix),
        ("storage round-trip", storage_roundtrip),
        ("network loopback and replay", network),
        ("accelerator oracles", accelerator),
        ("harness isolation and throughput", isolation_and_throughput),
        ("fuzz report determinism", fuzz_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

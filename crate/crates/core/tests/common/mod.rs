//! Reference models shared by the integration tests and the acceptance
//! suite. Each one is written from first principles and deliberately shares
//! no code with the crate under test.

#![allow(dead_code)]

use std::collections::{HashMap, VecDeque};

use pmcu::machine::{EventKind, TaskId, TraceEvent};
use pmcu::memory::{AllocError, Shadow};

// ---------------------------------------------------------------------------
// Heap: brute-force first-fit over a granule bitmap.

/// First-fit heap model. The heap is a bitmap of 8-byte granules; an
/// allocation takes the lowest run of free granules long enough for
/// `redzone + round_up(size, 8) + redzone` bytes. Freed blocks wait in a FIFO
/// quarantine and only return to the bitmap once the quarantined byte total
/// exceeds the capacity.
pub struct HeapOracle {
    origin: u32,
    redzone: u32,
    quarantine_cap: u64,
    used: Vec<bool>,
    /// user address -> (block start, block bytes, size, live)
    blocks: HashMap<u32, (u32, u32, u32, bool)>,
    quarantine: VecDeque<u32>,
    quarantined: u64,
}

const GRANULE: u32 = 8;

impl HeapOracle {
    pub fn new(origin: u32, size: u32, redzone: u32, quarantine_cap: u32) -> Self {
        assert_eq!(origin % GRANULE, 0);
        assert_eq!(redzone % GRANULE, 0);
        HeapOracle {
            origin,
            redzone,
            quarantine_cap: quarantine_cap as u64,
            used: vec![false; (size / GRANULE) as usize],
            blocks: HashMap::new(),
            quarantine: VecDeque::new(),
            quarantined: 0,
        }
    }

    pub fn alloc(&mut self, size: u32) -> Result<u32, AllocError> {
        if size == 0 {
            return Err(AllocError::ZeroSize);
        }
        let bytes = size.div_ceil(GRANULE) as u64 * GRANULE as u64 + 2 * self.redzone as u64;
        let need = (bytes / GRANULE as u64) as usize;
        let mut run = 0;
        let mut found = None;
        for (i, &u) in self.used.iter().enumerate() {
            if u {
                run = 0;
            } else {
                run += 1;
                if run == need {
                    found = Some(i + 1 - need);
                    break;
                }
            }
        }
        let first = found.ok_or(AllocError::OutOfMemory { requested: size })?;
        self.used[first..first + need].fill(true);
        let start = self.origin + first as u32 * GRANULE;
        let user = start + self.redzone;
        self.blocks.insert(user, (start, bytes as u32, size, true));
        Ok(user)
    }

    pub fn free(&mut self, addr: u32) -> Result<(), AllocError> {
        match self.blocks.get_mut(&addr) {
            None => Err(AllocError::InvalidFree { addr }),
            Some(b) if !b.3 => Err(AllocError::DoubleFree { addr }),
            Some(b) => {
                b.3 = false;
                self.quarantined += b.1 as u64;
                self.quarantine.push_back(addr);
                while self.quarantined > self.quarantine_cap {
                    let old = self.quarantine.pop_front().unwrap();
                    let (start, bytes, _, _) = self.blocks.remove(&old).unwrap();
                    self.quarantined -= bytes as u64;
                    let g = ((start - self.origin) / GRANULE) as usize;
                    self.used[g..g + (bytes / GRANULE) as usize].fill(false);
                }
                Ok(())
            }
        }
    }

    /// Expected shadow byte for every heap address.
    pub fn shadow(&self) -> Vec<Shadow> {
        let mut s = vec![Shadow::Unallocated; self.used.len() * GRANULE as usize];
        for (&user, &(start, bytes, size, live)) in &self.blocks {
            let off = (start - self.origin) as usize;
            let block = &mut s[off..off + bytes as usize];
            if live {
                block.fill(Shadow::Redzone);
                let u = (user - start) as usize;
                block[u..u + size as usize].fill(Shadow::Addressable);
            } else {
                block.fill(Shadow::Freed);
            }
        }
        s
    }
}

// ---------------------------------------------------------------------------
// CRC-32 (IEEE 802.3, reflected), one bit at a time.

pub fn crc32_bitwise(data: &[u8]) -> u32 {
    let mut crc = !0u32;
    for &byte in data {
        crc ^= byte as u32;
        for _ in 0..8 {
            let lsb = crc & 1;
            crc >>= 1;
            if lsb == 1 {
                crc ^= 0xEDB8_8320;
            }
        }
    }
    !crc
}

// ---------------------------------------------------------------------------
// SHA-256, straight from the FIPS 180-4 description.

const K: [u32; 64] = [
    0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4, 0xab1c5ed5, 0xd807aa98,
    0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174, 0xe49b69c1, 0xefbe4786,
    0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da, 0x983e5152, 0xa831c66d, 0xb00327c8,
    0xbf597fc7, 0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13,
    0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85, 0xa2bfe8a1, 0xa81a664b, 0xc24b8b70, 0xc76c51a3, 0xd192e819,
    0xd6990624, 0xf40e3585, 0x106aa070, 0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a,
    0x5b9cca4f, 0x682e6ff3, 0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7,
    0xc67178f2,
];

pub fn sha256_reference(data: &[u8]) -> [u8; 32] {
    let mut h: [u32; 8] = [
        0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a, 0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19,
    ];
    let mut msg = data.to_vec();
    msg.push(0x80);
    while msg.len() % 64 != 56 {
        msg.push(0);
    }
    msg.extend_from_slice(&((data.len() as u64) * 8).to_be_bytes());
    for chunk in msg.chunks(64) {
        let mut w = [0u32; 64];
        for i in 0..16 {
            w[i] = u32::from_be_bytes(chunk[4 * i..4 * i + 4].try_into().unwrap());
        }
        for i in 16..64 {
            let s0 = w[i - 15].rotate_right(7) ^ w[i - 15].rotate_right(18) ^ (w[i - 15] >> 3);
            let s1 = w[i - 2].rotate_right(17) ^ w[i - 2].rotate_right(19) ^ (w[i - 2] >> 10);
            w[i] = w[i - 16].wrapping_add(s0).wrapping_add(w[i - 7]).wrapping_add(s1);
        }
        let [mut a, mut b, mut c, mut d, mut e, mut f, mut g, mut hh] = h;
        for i in 0..64 {
            let s1 = e.rotate_right(6) ^ e.rotate_right(11) ^ e.rotate_right(25);
            let ch = (e & f) ^ (!e & g);
            let t1 = hh.wrapping_add(s1).wrapping_add(ch).wrapping_add(K[i]).wrapping_add(w[i]);
            let s0 = a.rotate_right(2) ^ a.rotate_right(13) ^ a.rotate_right(22);
            let maj = (a & b) ^ (a & c) ^ (b & c);
            let t2 = s0.wrapping_add(maj);
            hh = g;
            g = f;
            f = e;
            e = d.wrapping_add(t1);
            d = c;
            c = b;
            b = a;
            a = t1.wrapping_add(t2);
        }
        for (x, y) in h.iter_mut().zip([a, b, c, d, e, f, g, hh]) {
            *x = x.wrapping_add(y);
        }
    }
    let mut out = [0u8; 32];
    for (i, word) in h.iter().enumerate() {
        out[4 * i..4 * i + 4].copy_from_slice(&word.to_be_bytes());
    }
    out
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// Block storage: last writer wins.

pub struct StorageModel {
    block_size: usize,
    blocks: Vec<Vec<u8>>,
}

impl StorageModel {
    pub fn new(block_size: usize, count: usize) -> Self {
        StorageModel {
            block_size,
            blocks: vec![vec![0; block_size]; count],
        }
    }

    pub fn write(&mut self, index: usize, bytes: &[u8]) {
        for (i, chunk) in bytes.chunks(self.block_size).enumerate() {
            self.blocks[index + i] = chunk.to_vec();
        }
    }

    pub fn read(&self, index: usize, count: usize) -> Vec<u8> {
        self.blocks[index..index + count].concat()
    }

    pub fn image(&self) -> Vec<u8> {
        self.blocks.concat()
    }
}

// ---------------------------------------------------------------------------
// Trace replay checks.

/// Replays interrupt masking over a trace. Returns a description of the
/// first event that breaks the deferral rules:
/// - no task switch or start while any task has interrupts disabled;
/// - a deferred tick only while interrupts are disabled;
/// - the enable that brings nesting to zero with a tick pending is followed
///   immediately by exactly one delivered tick;
/// - no delivered tick while interrupts are disabled.
///
/// Also returns how many pending ticks were serviced at enable.
pub fn check_tick_deferral(events: &[TraceEvent]) -> Result<usize, String> {
    let mut nesting: u32 = 0;
    let mut pending = false;
    let mut expect_service = false;
    let mut serviced = 0;
    for (i, e) in events.iter().enumerate() {
        let fail = |msg: &str| Err(format!("event {i} ({e}): {msg}"));
        if expect_service {
            if e.kind != EventKind::TickDelivered {
                return fail("pending tick not serviced at enable");
            }
            expect_service = false;
            pending = false;
            serviced += 1;
            continue;
        }
        match e.kind {
            EventKind::IrqDisable { .. } => nesting += 1,
            EventKind::IrqEnable { .. } => {
                if nesting == 0 {
                    return fail("enable without disable");
                }
                nesting -= 1;
                if nesting == 0 && pending {
                    expect_service = true;
                }
            }
            EventKind::TickDeferred => {
                if nesting == 0 {
                    return fail("tick deferred with interrupts enabled");
                }
                pending = true;
            }
            EventKind::TickDelivered if nesting > 0 => return fail("tick delivered inside a critical section"),
            EventKind::TaskSwitch { .. } | EventKind::TaskStart { .. } if nesting > 0 => {
                return fail("task switch inside a critical section")
            }
            _ => {}
        }
    }
    if expect_service {
        return Err("trace ends before a pending tick was serviced".into());
    }
    Ok(serviced)
}

/// Counts consecutive tick-driven handoffs `0 -> 1`, `1 -> 0` from the start
/// of the trace: the number of `TickDelivered, TaskSwitch` pairs that follow
/// the strict alternation.
pub fn alternation_periods(events: &[TraceEvent], a: TaskId, b: TaskId) -> usize {
    let mut expected = (a, b);
    let mut periods = 0;
    let mut i = events.iter().position(|e| e.kind == EventKind::TickDelivered).unwrap_or(events.len());
    while i + 1 < events.len() {
        let (tick, switch) = (&events[i], &events[i + 1]);
        if tick.kind != EventKind::TickDelivered
            || switch.kind
                != (EventKind::TaskSwitch {
                    from: expected.0,
                    to: expected.1,
                })
        {
            break;
        }
        periods += 1;
        expected = (expected.1, expected.0);
        i += 2;
    }
    periods
}

/// Which task holds the CPU after each event, reconstructed from starts,
/// switches and exits.
pub fn running_after_each(events: &[TraceEvent]) -> Vec<Option<TaskId>> {
    let mut cur = None;
    events
        .iter()
        .map(|e| {
            match e.kind {
                EventKind::TaskStart { task } => cur = Some(task),
                EventKind::TaskSwitch { to, .. } => cur = Some(to),
                EventKind::TaskExit { task } | EventKind::TaskBlock { task } if cur == Some(task) => cur = None,
                _ => {}
            }
            cur
        })
        .collect()
}

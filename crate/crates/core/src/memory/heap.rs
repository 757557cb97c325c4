//! First-fit region heap with redzones and a FIFO quarantine.
//!
//! Block layout: `[redzone | user bytes | tail padding + redzone]`. The free
//! list is address ordered; freed blocks sit in the quarantine until enough
//! newer frees push them out, at which point they are coalesced back into the
//! free list.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use super::{AllocatorMode, Region, Shadow};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct HeapPolicy {
    /// Poisoned bytes on each side of every block.
    pub redzone: u32,
    /// Bytes of freed blocks held back from reuse.
    pub quarantine_bytes: u32,
    pub align: u32,
}

impl Default for HeapPolicy {
    fn default() -> Self {
        HeapPolicy {
            redzone: 16,
            quarantine_bytes: 8 * 1024,
            align: 8,
        }
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AllocError {
    #[error("out of memory allocating {requested} bytes")]
    OutOfMemory { requested: u32 },
    #[error("zero-sized allocation")]
    ZeroSize,
    #[error("double free of {addr:#010x}")]
    DoubleFree { addr: u32 },
    #[error("free of {addr:#010x}, which is not the start of an allocation")]
    InvalidFree { addr: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockState {
    Live,
    Quarantined,
}

/// Allocation table entry, keyed by the user address.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Allocation {
    pub block_start: u32,
    pub block_len: u32,
    pub size: u32,
    pub state: BlockState,
    pub alloc_seq: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeapAllocator {
    region: Region,
    policy: HeapPolicy,
    /// Address-ordered, coalesced `(start, len)` ranges.
    free: Vec<(u32, u32)>,
    quarantine: VecDeque<u32>,
    quarantined_bytes: u64,
    table: BTreeMap<u32, Allocation>,
    shadow: Vec<Shadow>,
    next_seq: u64,
}

impl HeapAllocator {
    pub fn new(region: Region, policy: HeapPolicy, mode: AllocatorMode) -> Self {
        let policy = match mode {
            AllocatorMode::Region => policy,
            AllocatorMode::Passthrough => HeapPolicy {
                redzone: 0,
                quarantine_bytes: 0,
                ..policy
            },
        };
        HeapAllocator {
            region,
            policy,
            free: vec![(region.origin, region.size)],
            quarantine: VecDeque::new(),
            quarantined_bytes: 0,
            table: BTreeMap::new(),
            shadow: vec![Shadow::Unallocated; region.size as usize],
            next_seq: 0,
        }
    }

    pub fn region(&self) -> Region {
        self.region
    }

    pub fn policy(&self) -> HeapPolicy {
        self.policy
    }

    fn block_len(&self, size: u32) -> Option<u32> {
        let align = self.policy.align;
        let body = size.checked_add(align - 1)? & !(align - 1);
        body.checked_add(self.policy.redzone.checked_mul(2)?)
    }

    pub fn alloc(&mut self, size: u32) -> Result<u32, AllocError> {
        if size == 0 {
            return Err(AllocError::ZeroSize);
        }
        let oom = AllocError::OutOfMemory { requested: size };
        let total = self.block_len(size).ok_or(oom)?;
        let idx = self.free.iter().position(|&(_, len)| len >= total).ok_or(oom)?;
        let (start, len) = self.free[idx];
        if len == total {
            self.free.remove(idx);
        } else {
            self.free[idx] = (start + total, len - total);
        }
        let user = start + self.policy.redzone;
        self.table.insert(
            user,
            Allocation {
                block_start: start,
                block_len: total,
                size,
                state: BlockState::Live,
                alloc_seq: self.next_seq,
            },
        );
        self.next_seq += 1;
        self.paint(start, user - start, Shadow::Redzone);
        self.paint(user, size, Shadow::Addressable);
        self.paint(user + size, start + total - user - size, Shadow::Redzone);
        Ok(user)
    }

    pub fn free(&mut self, addr: u32) -> Result<(), AllocError> {
        let block = match self.table.get_mut(&addr) {
            None => return Err(AllocError::InvalidFree { addr }),
            Some(b) if b.state == BlockState::Quarantined => {
                return Err(AllocError::DoubleFree { addr })
            }
            Some(b) => {
                b.state = BlockState::Quarantined;
                *b
            }
        };
        self.paint(block.block_start, block.block_len, Shadow::Freed);
        self.quarantine.push_back(addr);
        self.quarantined_bytes += block.block_len as u64;
        while self.quarantined_bytes > self.policy.quarantine_bytes as u64 {
            let Some(oldest) = self.quarantine.pop_front() else {
                break;
            };
            self.evict(oldest);
        }
        Ok(())
    }

    fn evict(&mut self, addr: u32) {
        let block = self.table.remove(&addr).expect("quarantined block in table");
        self.quarantined_bytes -= block.block_len as u64;
        self.paint(block.block_start, block.block_len, Shadow::Unallocated);
        self.insert_free(block.block_start, block.block_len);
    }

    fn insert_free(&mut self, start: u32, len: u32) {
        let idx = self.free.partition_point(|&(s, _)| s < start);
        self.free.insert(idx, (start, len));
        // merge with the successor, then the predecessor
        if idx + 1 < self.free.len() && start + len == self.free[idx + 1].0 {
            self.free[idx].1 += self.free[idx + 1].1;
            self.free.remove(idx + 1);
        }
        if idx > 0 && self.free[idx - 1].0 + self.free[idx - 1].1 == start {
            self.free[idx - 1].1 += self.free[idx].1;
            self.free.remove(idx);
        }
    }

    fn paint(&mut self, addr: u32, len: u32, class: Shadow) {
        let off = (addr - self.region.origin) as usize;
        self.shadow[off..off + len as usize].fill(class);
    }

    pub fn shadow_at(&self, addr: u32) -> Shadow {
        self.shadow[(addr - self.region.origin) as usize]
    }

    pub fn shadow(&self) -> &[Shadow] {
        &self.shadow
    }

    /// Shadow derived from scratch out of the allocation table.
    pub fn recompute_shadow(&self) -> Vec<Shadow> {
        let mut shadow = vec![Shadow::Unallocated; self.region.size as usize];
        let base = self.region.origin;
        for (&user, b) in &self.table {
            let block = (b.block_start - base) as usize..(b.block_start - base + b.block_len) as usize;
            match b.state {
                BlockState::Quarantined => shadow[block].fill(Shadow::Freed),
                BlockState::Live => {
                    shadow[block].fill(Shadow::Redzone);
                    let u = (user - base) as usize;
                    shadow[u..u + b.size as usize].fill(Shadow::Addressable);
                }
            }
        }
        shadow
    }

    pub fn allocation(&self, addr: u32) -> Option<&Allocation> {
        self.table.get(&addr)
    }

    pub fn allocations(&self) -> impl Iterator<Item = (u32, &Allocation)> {
        self.table.iter().map(|(&a, b)| (a, b))
    }

    /// The table entry whose block covers `addr`, if any.
    pub fn block_containing(&self, addr: u32) -> Option<(u32, &Allocation)> {
        let (&user, b) = self.table.range(..=addr.saturating_add(self.policy.redzone)).next_back()?;
        (addr >= b.block_start && (addr as u64) < b.block_start as u64 + b.block_len as u64)
            .then_some((user, b))
    }

    pub fn free_ranges(&self) -> &[(u32, u32)] {
        &self.free
    }

    pub fn free_bytes(&self) -> u64 {
        self.free.iter().map(|&(_, l)| l as u64).sum()
    }

    pub fn live_bytes(&self) -> u64 {
        self.live().map(|b| b.size as u64).sum()
    }

    pub fn redzone_bytes(&self) -> u64 {
        self.live().map(|b| (b.block_len - b.size) as u64).sum()
    }

    pub fn quarantined_bytes(&self) -> u64 {
        self.quarantined_bytes
    }

    fn live(&self) -> impl Iterator<Item = &Allocation> {
        self.table.values().filter(|b| b.state == BlockState::Live)
    }
}

//! Simulated MCU memory map.
//!
//! Flash and SRAM are flat byte arrays addressed with 32-bit MCU addresses.
//! SRAM carries a per-byte shadow classification so that every access made on
//! behalf of a task can be checked: heap redzones, quarantined frees, the null
//! page and anything outside the map are all reported as [`Violation`]s.

mod heap;
mod image;
mod stack;

use std::fmt;

use thiserror::Error;

pub use heap::{AllocError, Allocation, BlockState, HeapAllocator, HeapPolicy};
pub use image::{ImageFormatError, ImageSections};
pub use stack::{StackRegion, StackUsage, STACK_GUARD, WATERMARK};

/// Accesses below this address are reported as null dereferences.
pub const NULL_GUARD: u32 = 0x1000;

const KIB: u32 = 1024;

/// A contiguous range of the 32-bit address space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Region {
    pub origin: u32,
    pub size: u32,
}

impl Region {
    pub const fn new(origin: u32, size: u32) -> Self {
        Region { origin, size }
    }

    /// One past the last byte, widened so it cannot wrap.
    pub fn end(&self) -> u64 {
        self.origin as u64 + self.size as u64
    }

    pub fn contains(&self, addr: u32) -> bool {
        addr >= self.origin && (addr as u64) < self.end()
    }

    pub fn contains_range(&self, addr: u32, len: u32) -> bool {
        addr >= self.origin && addr as u64 + len as u64 <= self.end()
    }

    pub fn contains_region(&self, other: &Region) -> bool {
        self.contains_range(other.origin, other.size)
    }

    pub fn overlaps(&self, other: &Region) -> bool {
        (self.origin as u64) < other.end() && (other.origin as u64) < self.end()
    }

    fn check(&self, name: &'static str) -> Result<(), ConfigError> {
        if self.size == 0 {
            return Err(ConfigError::EmptyRegion(name));
        }
        if self.end() > 1u64 << 32 {
            return Err(ConfigError::RegionWraps(name));
        }
        Ok(())
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#010x}..{:#010x}", self.origin, self.end())
    }
}

/// How task heap requests are served.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum AllocatorMode {
    /// First-fit heap with redzones, quarantine and shadow checks.
    #[default]
    Region,
    /// Plain first-fit heap; shadow checking is switched off.
    Passthrough,
}

/// Invalid machine or memory-map configuration.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("{0} region is empty")]
    EmptyRegion(&'static str),
    #[error("{0} region wraps the 32-bit address space")]
    RegionWraps(&'static str),
    #[error("{0} and {1} regions overlap")]
    Overlap(&'static str, &'static str),
    #[error("{0} must lie inside SRAM")]
    OutsideSram(&'static str),
    #[error("{0} must be {1}-byte aligned")]
    Misaligned(&'static str, u32),
    #[error("tick period must be non-zero when the tick is enabled")]
    ZeroTickPeriod,
    #[error("heap alignment must be a non-zero power of two")]
    BadAlignment,
}

/// The fixed memory map of the simulated MCU.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MemoryMap {
    pub flash: Region,
    pub sram: Region,
    pub heap: Region,
    pub stack_area: Region,
    pub allocator_mode: AllocatorMode,
    pub heap_policy: HeapPolicy,
}

impl Default for MemoryMap {
    /// Cortex-M style map: 1 MiB flash at zero, 256 KiB SRAM at
    /// `0x2000_0000`, the top 128 KiB of SRAM as heap and the 64 KiB below it
    /// as the task stack area.
    fn default() -> Self {
        MemoryMap {
            flash: Region::new(0x0000_0000, 1024 * KIB),
            sram: Region::new(0x2000_0000, 256 * KIB),
            heap: Region::new(0x2002_0000, 128 * KIB),
            stack_area: Region::new(0x2001_0000, 64 * KIB),
            allocator_mode: AllocatorMode::Region,
            heap_policy: HeapPolicy::default(),
        }
    }
}

impl MemoryMap {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.flash.check("flash")?;
        self.sram.check("sram")?;
        self.heap.check("heap")?;
        self.stack_area.check("stack area")?;
        if self.flash.overlaps(&self.sram) {
            return Err(ConfigError::Overlap("flash", "sram"));
        }
        if !self.sram.contains_region(&self.heap) {
            return Err(ConfigError::OutsideSram("heap"));
        }
        if !self.sram.contains_region(&self.stack_area) {
            return Err(ConfigError::OutsideSram("stack area"));
        }
        if self.heap.overlaps(&self.stack_area) {
            return Err(ConfigError::Overlap("heap", "stack area"));
        }
        let align = self.heap_policy.align;
        if align == 0 || !align.is_power_of_two() {
            return Err(ConfigError::BadAlignment);
        }
        if self.heap.origin % align != 0 || self.heap.size % align != 0 {
            return Err(ConfigError::Misaligned("heap", align));
        }
        if self.stack_area.origin % 8 != 0 || self.stack_area.size % 8 != 0 {
            return Err(ConfigError::Misaligned("stack area", 8));
        }
        Ok(())
    }
}

/// Per-byte classification of SRAM.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Shadow {
    #[default]
    Unallocated = 0,
    Addressable,
    Redzone,
    Freed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AccessKind {
    Read,
    Write,
}

impl fmt::Display for AccessKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AccessKind::Read => "read",
            AccessKind::Write => "write",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ViolationClass {
    HeapOverflow,
    UseAfterFree,
    NullDeref,
    WildAccess,
}

/// A rejected memory access. `fault_addr` is the first offending byte.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Violation {
    pub class: ViolationClass,
    pub addr: u32,
    pub len: u32,
    pub kind: AccessKind,
    pub fault_addr: u32,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:?}: {} of {} bytes at {:#010x} (first bad byte {:#010x})",
            self.class, self.kind, self.len, self.addr, self.fault_addr
        )
    }
}

/// Image sections violate the memory map.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ImageLayoutError {
    #[error(transparent)]
    Map(#[from] ConfigError),
    #[error("{0} range lies outside SRAM")]
    OutsideSram(&'static str),
    #[error("data load range lies outside flash")]
    LoadOutsideFlash,
    #[error("{0} range overlaps {1}")]
    Overlap(&'static str, &'static str),
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("stack area exhausted: {requested} bytes requested, {available} available")]
pub struct StackExhausted {
    pub requested: u32,
    pub available: u32,
}

/// Flash, SRAM, shadow and heap state of one machine.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MachineMemory {
    map: MemoryMap,
    flash: Vec<u8>,
    sram: Vec<u8>,
    /// Shadow for every SRAM byte outside the heap.
    shadow: Vec<Shadow>,
    heap: HeapAllocator,
    /// Next free stack address; stacks are carved downward from the top.
    stack_cursor: u32,
}

impl MachineMemory {
    /// Builds the memory of a freshly reset MCU: `.data` copied from flash to
    /// its run address, `.bss` zeroed, heap and stack area unallocated.
    pub fn reset_handler(image: &ImageSections, map: &MemoryMap) -> Result<Self, ImageLayoutError> {
        map.validate()?;
        image.validate(map)?;
        let mut mem = MachineMemory {
            map: map.clone(),
            flash: vec![0; map.flash.size as usize],
            sram: vec![0; map.sram.size as usize],
            shadow: vec![Shadow::Unallocated; map.sram.size as usize],
            heap: HeapAllocator::new(map.heap, map.heap_policy, map.allocator_mode),
            stack_cursor: map.stack_area.end() as u32,
        };
        mem.load(image);
        Ok(mem)
    }

    /// Re-runs the reset sequence in place.
    pub fn reset(&mut self, image: &ImageSections) -> Result<(), ImageLayoutError> {
        *self = Self::reset_handler(image, &self.map)?;
        Ok(())
    }

    fn load(&mut self, image: &ImageSections) {
        let data = &image.data;
        if !data.payload.is_empty() {
            let load = image.load_addr(&self.map);
            let off = (load - self.map.flash.origin) as usize;
            self.flash[off..off + data.payload.len()].copy_from_slice(&data.payload);
            let run = self.sram_offset(data.run_addr);
            self.sram[run..run + data.payload.len()].copy_from_slice(&data.payload);
            self.shadow[run..run + data.payload.len()].fill(Shadow::Addressable);
        }
        if image.bss.size > 0 {
            let run = self.sram_offset(image.bss.run_addr);
            let len = image.bss.size as usize;
            self.sram[run..run + len].fill(0);
            self.shadow[run..run + len].fill(Shadow::Addressable);
        }
    }

    pub fn map(&self) -> &MemoryMap {
        &self.map
    }

    pub fn heap(&self) -> &HeapAllocator {
        &self.heap
    }

    fn sram_offset(&self, addr: u32) -> usize {
        (addr - self.map.sram.origin) as usize
    }

    /// Shadow class of one SRAM byte, or `None` outside SRAM.
    pub fn shadow_at(&self, addr: u32) -> Option<Shadow> {
        if self.map.heap.contains(addr) {
            Some(self.heap.shadow_at(addr))
        } else if self.map.sram.contains(addr) {
            Some(self.shadow[self.sram_offset(addr)])
        } else {
            None
        }
    }

    pub fn region_alloc(&mut self, size: u32) -> Result<u32, AllocError> {
        self.heap.alloc(size)
    }

    pub fn region_free(&mut self, addr: u32) -> Result<(), AllocError> {
        self.heap.free(addr)
    }

    /// Checks that every byte of `[addr, addr + len)` may be accessed.
    pub fn check_access(&self, addr: u32, len: u32, kind: AccessKind) -> Result<(), Violation> {
        let violation = |class, fault_addr| Violation {
            class,
            addr,
            len,
            kind,
            fault_addr,
        };
        if len == 0 {
            return Ok(());
        }
        if addr < NULL_GUARD {
            return Err(violation(ViolationClass::NullDeref, addr));
        }
        if addr as u64 + len as u64 > 1u64 << 32 {
            return Err(violation(ViolationClass::WildAccess, addr));
        }
        let checked = self.map.allocator_mode == AllocatorMode::Region;
        let end = addr as u64 + len as u64;
        let mut cur = addr as u64;
        while cur < end {
            let a = cur as u32;
            if self.map.flash.contains(a) {
                if kind == AccessKind::Write {
                    return Err(violation(ViolationClass::WildAccess, a));
                }
                cur = end.min(self.map.flash.end());
                continue;
            }
            if !self.map.sram.contains(a) {
                return Err(violation(ViolationClass::WildAccess, a));
            }
            if checked {
                let class = match self.shadow_at(a).unwrap_or_default() {
                    Shadow::Addressable => None,
                    Shadow::Redzone => Some(ViolationClass::HeapOverflow),
                    Shadow::Freed => Some(ViolationClass::UseAfterFree),
                    Shadow::Unallocated => Some(ViolationClass::WildAccess),
                };
                if let Some(class) = class {
                    return Err(violation(class, a));
                }
            }
            cur += 1;
        }
        Ok(())
    }

    /// Checked read into `buf`.
    pub fn read(&self, addr: u32, buf: &mut [u8]) -> Result<(), Violation> {
        self.check_access(addr, buf.len() as u32, AccessKind::Read)?;
        self.read_raw(addr, buf);
        Ok(())
    }

    /// Checked write of `data`.
    pub fn write(&mut self, addr: u32, data: &[u8]) -> Result<(), Violation> {
        self.check_access(addr, data.len() as u32, AccessKind::Write)?;
        self.write_raw(addr, data);
        Ok(())
    }

    /// Unchecked copy out of flash or SRAM. Bytes outside the map read as 0.
    pub fn read_raw(&self, addr: u32, buf: &mut [u8]) {
        let len = buf.len() as u32;
        if self.map.sram.contains_range(addr, len) {
            let off = self.sram_offset(addr);
            buf.copy_from_slice(&self.sram[off..off + buf.len()]);
        } else if self.map.flash.contains_range(addr, len) {
            let off = (addr - self.map.flash.origin) as usize;
            buf.copy_from_slice(&self.flash[off..off + buf.len()]);
        } else {
            for (i, b) in buf.iter_mut().enumerate() {
                *b = self.byte(addr.wrapping_add(i as u32));
            }
        }
    }

    fn byte(&self, addr: u32) -> u8 {
        if self.map.sram.contains(addr) {
            self.sram[self.sram_offset(addr)]
        } else if self.map.flash.contains(addr) {
            self.flash[(addr - self.map.flash.origin) as usize]
        } else {
            0
        }
    }

    /// Unchecked write into SRAM. Bytes outside SRAM are dropped.
    pub fn write_raw(&mut self, addr: u32, data: &[u8]) {
        if self.map.sram.contains_range(addr, data.len() as u32) {
            let off = self.sram_offset(addr);
            self.sram[off..off + data.len()].copy_from_slice(data);
            return;
        }
        for (i, b) in data.iter().enumerate() {
            let a = addr.wrapping_add(i as u32);
            if self.map.sram.contains(a) {
                let off = self.sram_offset(a);
                self.sram[off] = *b;
            }
        }
    }

    /// Unchecked fill of SRAM bytes. Bytes outside SRAM are dropped.
    pub fn fill_raw(&mut self, addr: u32, len: u32, byte: u8) {
        if self.map.sram.contains_range(addr, len) {
            let off = self.sram_offset(addr);
            self.sram[off..off + len as usize].fill(byte);
        } else {
            for i in 0..len {
                self.write_raw(addr.wrapping_add(i), &[byte]);
            }
        }
    }

    /// Feeds SRAM contents, the SRAM shadow and the heap state into `h`.
    pub fn fingerprint(&self, h: &mut crate::machine::Fnv64) {
        h.write(&self.sram);
        h.write(&self.shadow.iter().map(|&s| s as u8).collect::<Vec<_>>());
        h.write(&self.heap.shadow().iter().map(|&s| s as u8).collect::<Vec<_>>());
        for (addr, a) in self.heap.allocations() {
            h.write_u32(addr);
            h.write_u32(a.size);
            h.write(&[a.state as u8]);
        }
        h.write_u32(self.stack_cursor);
    }

    /// Carves a task stack (plus a guard gap below it) from the stack area.
    pub fn carve_stack(&mut self, size: u32) -> Result<StackRegion, StackExhausted> {
        let available = self.stack_cursor - self.map.stack_area.origin;
        let aligned = size.checked_add(7).map(|s| s & !7);
        let needed = aligned.and_then(|s| s.checked_add(STACK_GUARD));
        match needed {
            Some(needed) if size > 0 && needed <= available => {
                let aligned = needed - STACK_GUARD;
                let origin = self.stack_cursor - aligned;
                self.stack_cursor -= needed;
                let region = StackRegion::new(Region::new(origin, aligned));
                let off = self.sram_offset(origin);
                self.shadow[off..off + aligned as usize].fill(Shadow::Addressable);
                self.stack_paint(&region);
                Ok(region)
            }
            _ => Err(StackExhausted {
                requested: size,
                available: available.saturating_sub(STACK_GUARD),
            }),
        }
    }

    /// Fills the whole stack region with the watermark pattern.
    pub fn stack_paint(&mut self, stack: &StackRegion) {
        let off = self.sram_offset(stack.region.origin);
        self.sram[off..off + stack.region.size as usize].fill(WATERMARK);
    }

    /// Measures stack usage by scanning up from the far (low) end for the
    /// first byte that no longer holds the watermark.
    pub fn stack_check(&self, stack: &StackRegion) -> StackUsage {
        let off = self.sram_offset(stack.region.origin);
        let bytes = &self.sram[off..off + stack.region.size as usize];
        let intact = bytes.iter().take_while(|&&b| b == WATERMARK).count() as u32;
        StackUsage {
            used: stack.region.size - intact,
            overflowed: intact == 0,
        }
    }

    /// Rebuilds the SRAM shadow from the allocation table and compares it with
    /// the incrementally maintained one.
    pub fn shadow_consistent(&self) -> bool {
        self.heap.recompute_shadow() == self.heap.shadow()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fresh() -> MachineMemory {
        MachineMemory::reset_handler(&ImageSections::empty(), &MemoryMap::default()).unwrap()
    }

    #[test]
    fn default_map_is_valid() {
        let map = MemoryMap::default();
        map.validate().unwrap();
        assert_eq!(map.flash.origin, 0);
        assert_eq!(map.heap.end(), map.sram.end());
    }

    #[test]
    fn overlapping_flash_and_sram_rejected() {
        let map = MemoryMap {
            sram: Region::new(0x0008_0000, 0x10_0000),
            heap: Region::new(0x0010_0000, 0x1000),
            stack_area: Region::new(0x0011_0000, 0x1000),
            ..MemoryMap::default()
        };
        assert_eq!(map.validate(), Err(ConfigError::Overlap("flash", "sram")));
    }

    #[test]
    fn wrapping_region_rejected() {
        let map = MemoryMap {
            flash: Region::new(0xffff_f000, 0x2000),
            ..MemoryMap::default()
        };
        assert_eq!(map.validate(), Err(ConfigError::RegionWraps("flash")));
    }

    #[test]
    fn data_is_copied_and_bss_zeroed() {
        let map = MemoryMap::default();
        let run = map.sram.origin + 0x100;
        let image = ImageSections::new(vec![1, 2, 3], run, map.sram.origin + 0x200, 64);
        let mem = MachineMemory::reset_handler(&image, &map).unwrap();
        let mut buf = [0u8; 3];
        mem.read(run, &mut buf).unwrap();
        assert_eq!(buf, [1, 2, 3]);
        let mut flash = [0u8; 3];
        mem.read_raw(map.flash.origin, &mut flash);
        assert_eq!(flash, [1, 2, 3]);
        let mut bss = [0xffu8; 64];
        mem.read(map.sram.origin + 0x200, &mut bss).unwrap();
        assert!(bss.iter().all(|&b| b == 0));
    }

    #[test]
    fn data_overlapping_heap_rejected() {
        let map = MemoryMap::default();
        let image = ImageSections::new(vec![0; 32], map.heap.origin - 16, map.sram.origin, 0);
        assert_eq!(
            MachineMemory::reset_handler(&image, &map),
            Err(ImageLayoutError::Overlap("data", "heap"))
        );
    }

    #[test]
    fn reset_twice_is_identical() {
        let map = MemoryMap::default();
        let image = ImageSections::new(vec![9; 40], map.sram.origin, map.sram.origin + 64, 32);
        let a = MachineMemory::reset_handler(&image, &map).unwrap();
        let mut b = a.clone();
        b.write(map.sram.origin, &[0; 8]).unwrap();
        b.region_alloc(64).unwrap();
        b.carve_stack(512).unwrap();
        b.reset(&image).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn null_page_reads_and_writes_are_flagged() {
        let mem = fresh();
        let v = mem.check_access(0, 4, AccessKind::Read).unwrap_err();
        assert_eq!(v.class, ViolationClass::NullDeref);
        let v = mem.check_access(0xfff, 1, AccessKind::Write).unwrap_err();
        assert_eq!(v.class, ViolationClass::NullDeref);
    }

    #[test]
    fn out_of_map_and_flash_writes_are_wild() {
        let mem = fresh();
        let v = mem.check_access(0x4000_0000, 4, AccessKind::Read).unwrap_err();
        assert_eq!(v.class, ViolationClass::WildAccess);
        mem.check_access(0x2000, 4, AccessKind::Read).unwrap();
        let v = mem.check_access(0x2000, 4, AccessKind::Write).unwrap_err();
        assert_eq!(v.class, ViolationClass::WildAccess);
        let v = mem.check_access(0xffff_fff0, 0x20, AccessKind::Read).unwrap_err();
        assert_eq!(v.class, ViolationClass::WildAccess);
    }

    #[test]
    fn heap_block_access_classes() {
        let mut mem = fresh();
        let p = mem.region_alloc(16).unwrap();
        mem.write(p, &[0xaa; 16]).unwrap();
        let v = mem.check_access(p + 16, 1, AccessKind::Write).unwrap_err();
        assert_eq!(v.class, ViolationClass::HeapOverflow);
        assert_eq!(v.fault_addr, p + 16);
        let v = mem.check_access(p - 1, 1, AccessKind::Read).unwrap_err();
        assert_eq!(v.class, ViolationClass::HeapOverflow);
        mem.region_free(p).unwrap();
        let v = mem.check_access(p, 4, AccessKind::Read).unwrap_err();
        assert_eq!(v.class, ViolationClass::UseAfterFree);
        // untouched heap is not addressable
        let v = mem.check_access(mem.map().heap.end() as u32 - 8, 4, AccessKind::Read).unwrap_err();
        assert_eq!(v.class, ViolationClass::WildAccess);
        assert!(mem.shadow_consistent());
    }

    #[test]
    fn odd_sized_block_tail_is_poisoned() {
        let mut mem = fresh();
        let p = mem.region_alloc(13).unwrap();
        mem.check_access(p, 13, AccessKind::Write).unwrap();
        let v = mem.check_access(p + 13, 1, AccessKind::Write).unwrap_err();
        assert_eq!(v.class, ViolationClass::HeapOverflow);
    }

    #[test]
    fn passthrough_skips_shadow_checks() {
        let map = MemoryMap {
            allocator_mode: AllocatorMode::Passthrough,
            ..MemoryMap::default()
        };
        let mut mem = MachineMemory::reset_handler(&ImageSections::empty(), &map).unwrap();
        let p = mem.region_alloc(16).unwrap();
        assert_eq!(p, map.heap.origin);
        mem.check_access(p + 16, 1, AccessKind::Write).unwrap();
        mem.region_free(p).unwrap();
        mem.check_access(p, 4, AccessKind::Read).unwrap();
        assert_eq!(mem.region_free(p), Err(AllocError::InvalidFree { addr: p }));
        let v = mem.check_access(0x10, 1, AccessKind::Read).unwrap_err();
        assert_eq!(v.class, ViolationClass::NullDeref);
    }

    #[test]
    fn stacks_are_carved_downward_with_guard() {
        let mut mem = fresh();
        let area = mem.map().stack_area;
        let a = mem.carve_stack(4096).unwrap();
        let b = mem.carve_stack(100).unwrap();
        assert_eq!(a.region.end(), area.end());
        assert_eq!(b.region.size, 104);
        assert_eq!(b.region.end() + STACK_GUARD as u64, a.region.origin as u64);
        assert!(!a.region.overlaps(&b.region));
        assert_eq!(mem.check_access(a.region.origin, 4096, AccessKind::Write), Ok(()));
        let guard = a.region.origin - 1;
        assert!(mem.check_access(guard, 1, AccessKind::Write).is_err());
    }

    #[test]
    fn stack_exhaustion() {
        let mut mem = fresh();
        let area = mem.map().stack_area.size;
        let err = mem.carve_stack(area).unwrap_err();
        assert_eq!(err.requested, area);
        assert!(mem.carve_stack(0).is_err());
        mem.carve_stack(area - STACK_GUARD).unwrap();
        assert!(mem.carve_stack(8).is_err());
    }

    #[test]
    fn watermark_tracks_usage() {
        let mut mem = fresh();
        let s = mem.carve_stack(256).unwrap();
        assert_eq!(mem.stack_check(&s), StackUsage { used: 0, overflowed: false });
        let top = s.region.end() as u32;
        mem.write(top - 40, &[0; 40]).unwrap();
        assert_eq!(mem.stack_check(&s), StackUsage { used: 40, overflowed: false });
        // a later shallower frame does not lower the mark
        mem.write(top - 8, &[1; 8]).unwrap();
        assert_eq!(mem.stack_check(&s).used, 40);
        mem.write(s.region.origin, &[0]).unwrap();
        assert_eq!(mem.stack_check(&s), StackUsage { used: 256, overflowed: true });
    }
}

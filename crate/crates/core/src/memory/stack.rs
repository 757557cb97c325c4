use super::Region;

/// Byte painted over every task stack at creation.
pub const WATERMARK: u8 = 0xA5;

/// Unused gap left below each carved stack.
pub const STACK_GUARD: u32 = 16;

/// A task stack inside the SRAM stack area. Stacks grow downward, so the
/// low end of `region` is the guard end.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StackRegion {
    pub region: Region,
}

impl StackRegion {
    pub fn new(region: Region) -> Self {
        StackRegion { region }
    }

    pub fn top(&self) -> u32 {
        self.region.end() as u32
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct StackUsage {
    pub used: u32,
    pub overflowed: bool,
}

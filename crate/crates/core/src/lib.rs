//! A native model of a portable microcontroller for rehosting firmware.
//!
//! Firmware tasks run as ordinary Rust closures against a [`machine::TaskCtx`]
//! and see an MCU-style world: a fixed memory map with a checked heap, a
//! preemptive system tick, interrupt masking, and peripherals reached through
//! a slot-addressed [`hal::PeripheralRegistry`]. A small priority kernel in
//! [`rtos`] shows how an RTOS plugs in, and [`harness`] runs firmware
//! repeatedly against testcases and classifies crashes.

pub mod fault;
pub mod hal;
pub mod harness;
pub mod machine;
pub mod memory;
pub mod rtos;

pub use fault::{classify_crash, BugClass, CrashReport, Fault};
pub use machine::{
    Machine, MachineConfig, MachineError, RunResult, TaskCtx, TaskId, TaskResult, TickConfig, TickMode, Trap,
};

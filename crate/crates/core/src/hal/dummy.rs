use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ok,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuditEntry {
    pub call: String,
    pub slot: String,
    pub seq: u64,
    pub args: Vec<u32>,
}

impl fmt::Display for AuditEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "call={} slot={} seq={}", self.call, self.slot, self.seq)
    }
}

/// Backend for peripherals whose effects firmware never observes (clock
/// trees, pin muxing, power domains). Every call succeeds and is logged.
#[derive(Debug, Default)]
pub struct DummyDevice {
    log: Vec<AuditEntry>,
}

impl DummyDevice {
    pub fn record(&mut self, slot: &str, call: &str, args: &[u32]) -> Status {
        self.log.push(AuditEntry {
            call: call.to_string(),
            slot: slot.to_string(),
            seq: self.log.len() as u64,
            args: args.to_vec(),
        });
        Status::Ok
    }

    pub fn log(&self) -> &[AuditEntry] {
        &self.log
    }

    /// Newline-delimited rendering of the audit log.
    pub fn render(&self) -> String {
        self.log.iter().map(|e| format!("{e}\n")).collect()
    }
}

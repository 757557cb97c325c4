//! Host-side peripheral backends behind a slot-addressed registry.
//!
//! Firmware never touches a device directly. Every peripheral call names a
//! slot (`"uart0"`, `"eth0"`, `"sd0"`, ...) and the [`PeripheralRegistry`]
//! dispatches it to the backend bound there. Each binding carries a
//! [`Category`]; an operation addressed to a slot of a different category is
//! rejected with [`HalError::UnboundSlot`] exactly as if the slot were empty.

pub mod accel;
pub mod dummy;
pub mod io;
pub mod net;
pub mod pcap;
pub mod storage;

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

pub use accel::{crc32, sha256, AccelDevice};
pub use dummy::{AuditEntry, DummyDevice, Status};
pub use io::{IoInput, IoOutput, IoPort};
pub use net::{NetPort, NetworkBackendKind, NetworkFrame, ReceiveCallback, MAX_FRAME};
pub use pcap::{PcapError, PcapRecord};
pub use storage::{StorageDevice, StorageMedium, DEFAULT_BLOCK_SIZE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Category {
    Io,
    Network,
    Storage,
    Accelerator,
    Dummy,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HalError {
    #[error("no {expected} peripheral bound at slot {slot:?}")]
    UnboundSlot { slot: String, expected: Category },
    #[error("input source exhausted")]
    EndOfInput,
    #[error("frame of {0} bytes exceeds {MAX_FRAME}")]
    FrameTooLarge(usize),
    #[error("empty frame")]
    EmptyFrame,
    #[error("capture file: {0}")]
    CaptureParse(#[from] PcapError),
    #[error("network interface {0:?} unavailable: {1}")]
    InterfaceUnavailable(String, String),
    #[error("loopback peer {0:?} is not bound")]
    PeerMissing(String),
    #[error("medium of {len} bytes does not divide into {block_size}-byte blocks")]
    MediumGeometry { len: u64, block_size: u32 },
    #[error("blocks {index}..{index}+{count} outside a {blocks}-block medium")]
    BlockOutOfRange { index: u64, count: u64, blocks: u64 },
    #[error("write of {len} bytes is not a whole number of {block_size}-byte blocks")]
    ShortWrite { len: usize, block_size: u32 },
    #[error("host I/O: {0}")]
    Host(String),
}

impl From<std::io::Error> for HalError {
    fn from(e: std::io::Error) -> Self {
        HalError::Host(e.to_string())
    }
}

enum Binding {
    Io(IoPort),
    Network(NetPort),
    Storage(StorageDevice),
    Accelerator(AccelDevice),
    Dummy(DummyDevice),
}

impl Binding {
    fn category(&self) -> Category {
        match self {
            Binding::Io(_) => Category::Io,
            Binding::Network(_) => Category::Network,
            Binding::Storage(_) => Category::Storage,
            Binding::Accelerator(_) => Category::Accelerator,
            Binding::Dummy(_) => Category::Dummy,
        }
    }
}

macro_rules! port_accessor {
    ($name:ident, $variant:ident, $ty:ty) => {
        fn $name(&mut self, slot: &str) -> Result<&mut $ty, HalError> {
            match self.slots.get_mut(slot) {
                Some(Binding::$variant(port)) => Ok(port),
                _ => Err(HalError::UnboundSlot {
                    slot: slot.to_string(),
                    expected: Category::$variant,
                }),
            }
        }
    };
}

/// Slot name to backend dispatch table of one machine.
pub struct PeripheralRegistry {
    slots: BTreeMap<String, Binding>,
    /// Virtual time stamped onto outgoing frames.
    clock: u64,
    seed: u64,
}

impl fmt::Debug for PeripheralRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map()
            .entries(self.slots.iter().map(|(k, v)| (k, v.category())))
            .finish()
    }
}

impl PeripheralRegistry {
    /// `seed` drives every random-number accelerator bound later.
    pub fn new(seed: u64) -> Self {
        PeripheralRegistry {
            slots: BTreeMap::new(),
            clock: 0,
            seed,
        }
    }

    pub fn category(&self, slot: &str) -> Option<Category> {
        self.slots.get(slot).map(Binding::category)
    }

    pub fn slots(&self) -> impl Iterator<Item = (&str, Category)> {
        self.slots.iter().map(|(k, v)| (k.as_str(), v.category()))
    }

    pub fn unbind(&mut self, slot: &str) -> bool {
        self.slots.remove(slot).is_some()
    }

    pub fn set_clock(&mut self, now: u64) {
        self.clock = now;
    }

    port_accessor!(io_port, Io, IoPort);
    port_accessor!(net_port, Network, NetPort);
    port_accessor!(storage_dev, Storage, StorageDevice);
    port_accessor!(accel_dev, Accelerator, AccelDevice);
    port_accessor!(dummy_dev, Dummy, DummyDevice);

    fn bind(&mut self, slot: &str, binding: Binding) {
        self.slots.insert(slot.to_string(), binding);
    }

    // ---- I/O ----

    pub fn bind_io(&mut self, slot: &str, input: IoInput, output: IoOutput) {
        self.bind(slot, Binding::Io(IoPort::new(input, output)));
    }

    pub fn io_write(&mut self, slot: &str, bytes: &[u8]) -> Result<usize, HalError> {
        self.io_port(slot)?.write(bytes)
    }

    /// Reads up to `max` bytes. An exhausted source yields
    /// [`HalError::EndOfInput`] rather than an empty read.
    pub fn io_read(&mut self, slot: &str, max: usize) -> Result<Vec<u8>, HalError> {
        self.io_port(slot)?.read(max)
    }

    /// Bytes captured so far on a capture-backed output.
    pub fn io_output(&mut self, slot: &str) -> Result<&[u8], HalError> {
        Ok(self.io_port(slot)?.captured())
    }

    // ---- network ----

    pub fn network_init(
        &mut self,
        slot: &str,
        kind: NetworkBackendKind,
        callback: Option<ReceiveCallback>,
    ) -> Result<(), HalError> {
        let port = NetPort::open(kind, callback)?;
        self.bind(slot, Binding::Network(port));
        Ok(())
    }

    /// Binds `a` and `b` as each other's loopback peer.
    pub fn init_loopback_pair(&mut self, a: &str, b: &str) -> Result<(), HalError> {
        self.network_init(a, NetworkBackendKind::Loopback { peer: b.to_string() }, None)?;
        self.network_init(b, NetworkBackendKind::Loopback { peer: a.to_string() }, None)
    }

    pub fn network_set_callback(&mut self, slot: &str, callback: Option<ReceiveCallback>) -> Result<(), HalError> {
        self.net_port(slot)?.callback = callback;
        Ok(())
    }

    pub fn network_send(&mut self, slot: &str, payload: &[u8]) -> Result<(), HalError> {
        let frame = NetworkFrame::new(payload.to_vec(), self.clock)?;
        let port = self.net_port(slot)?;
        match port.route(frame)? {
            None => Ok(()),
            Some((peer, frame)) => match self.slots.get_mut(&peer) {
                Some(Binding::Network(p)) => {
                    p.inbound.push_back(frame);
                    Ok(())
                }
                _ => Err(HalError::PeerMissing(peer)),
            },
        }
    }

    /// Next inbound frame, or `None` when the queue is empty.
    pub fn network_receive(&mut self, slot: &str) -> Result<Option<NetworkFrame>, HalError> {
        self.net_port(slot)?.receive()
    }

    pub fn network_pending(&mut self, slot: &str) -> Result<usize, HalError> {
        let port = self.net_port(slot)?;
        port.poll();
        Ok(port.inbound.len())
    }

    /// Frames sent on a replay backend, in send order.
    pub fn network_outbound(&mut self, slot: &str) -> Result<&[NetworkFrame], HalError> {
        Ok(self.net_port(slot)?.outbound())
    }

    /// Non-empty inbound queue lengths, keyed by slot.
    pub(crate) fn inbound_ready(&mut self) -> Vec<(String, usize)> {
        self.slots
            .iter_mut()
            .filter_map(|(name, b)| match b {
                Binding::Network(p) => {
                    p.poll();
                    (!p.inbound.is_empty()).then(|| (name.clone(), p.inbound.len()))
                }
                _ => None,
            })
            .collect()
    }

    // ---- storage ----

    pub fn storage_init(&mut self, slot: &str, medium: StorageMedium) -> Result<(), HalError> {
        let dev = StorageDevice::open(medium)?;
        self.bind(slot, Binding::Storage(dev));
        Ok(())
    }

    pub fn storage_read(&mut self, slot: &str, index: u64, count: u64) -> Result<Vec<u8>, HalError> {
        self.storage_dev(slot)?.read(index, count)
    }

    pub fn storage_write(&mut self, slot: &str, index: u64, bytes: &[u8]) -> Result<(), HalError> {
        self.storage_dev(slot)?.write(index, bytes)
    }

    /// `(block_size, block_count)` of a bound medium.
    pub fn storage_geometry(&mut self, slot: &str) -> Result<(u32, u64), HalError> {
        let dev = self.storage_dev(slot)?;
        Ok((dev.block_size(), dev.block_count()))
    }

    // ---- accelerator ----

    /// Binds a CRC/SHA/RNG engine. Its random stream is derived from the
    /// registry seed and the slot name.
    pub fn bind_accelerator(&mut self, slot: &str) {
        let dev = AccelDevice::new(self.seed, slot);
        self.bind(slot, Binding::Accelerator(dev));
    }

    pub fn accel_crc32(&mut self, slot: &str, bytes: &[u8]) -> Result<u32, HalError> {
        self.accel_dev(slot)?;
        Ok(crc32(bytes))
    }

    pub fn accel_sha256(&mut self, slot: &str, bytes: &[u8]) -> Result<[u8; 32], HalError> {
        self.accel_dev(slot)?;
        Ok(sha256(bytes))
    }

    pub fn accel_rng(&mut self, slot: &str, count: usize) -> Result<Vec<u8>, HalError> {
        Ok(self.accel_dev(slot)?.random(count))
    }

    // ---- dummy ----

    pub fn bind_dummy(&mut self, slot: &str) {
        self.bind(slot, Binding::Dummy(DummyDevice::default()));
    }

    pub fn dummy(&mut self, slot: &str, call: &str, args: &[u32]) -> Result<Status, HalError> {
        let slot_name = slot.to_string();
        Ok(self.dummy_dev(slot)?.record(&slot_name, call, args))
    }

    pub fn audit_log(&mut self, slot: &str) -> Result<&[AuditEntry], HalError> {
        Ok(self.dummy_dev(slot)?.log())
    }
}

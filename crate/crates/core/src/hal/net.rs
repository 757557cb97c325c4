use std::collections::VecDeque;
use std::path::PathBuf;

use super::pcap::{self, PcapError, PcapRecord, PcapWriter};
use super::HalError;

/// Largest Ethernet frame without FCS.
pub const MAX_FRAME: usize = 1514;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct NetworkFrame {
    pub payload: Vec<u8>,
    /// Virtual time at which the frame was sent, or the capture timestamp in
    /// microseconds for replayed frames.
    pub timestamp: u64,
}

impl NetworkFrame {
    pub fn new(payload: Vec<u8>, timestamp: u64) -> Result<Self, HalError> {
        match payload.len() {
            0 => Err(HalError::EmptyFrame),
            n if n > MAX_FRAME => Err(HalError::FrameTooLarge(n)),
            _ => Ok(NetworkFrame { payload, timestamp }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NetworkBackendKind {
    /// Frames sent here land in `peer`'s inbound queue.
    Loopback { peer: String },
    /// Inbound frames come from a capture file; sent frames are logged and,
    /// if `outbound` is set, written to that capture file.
    Replay { capture: PathBuf, outbound: Option<PathBuf> },
    /// A live host interface (requires the `host-tap` feature).
    HostTap { interface: String },
}

/// Invoked once for every frame handed to the firmware.
pub type ReceiveCallback = Box<dyn FnMut(&NetworkFrame) + Send>;

enum Backend {
    Loopback { peer: String },
    Replay { log: Vec<NetworkFrame>, writer: Option<PcapWriter> },
    #[cfg(feature = "host-tap")]
    HostTap(tap::Tap),
}

pub struct NetPort {
    backend: Backend,
    pub(super) inbound: VecDeque<NetworkFrame>,
    pub(super) callback: Option<ReceiveCallback>,
}

impl NetPort {
    pub(super) fn open(kind: NetworkBackendKind, callback: Option<ReceiveCallback>) -> Result<Self, HalError> {
        let mut inbound = VecDeque::new();
        let backend = match kind {
            NetworkBackendKind::Loopback { peer } => Backend::Loopback { peer },
            NetworkBackendKind::Replay { capture, outbound } => {
                let bytes = std::fs::read(&capture).map_err(|e| PcapError::Io(e.to_string()))?;
                for (index, rec) in pcap::parse(&bytes)?.into_iter().enumerate() {
                    let len = rec.data.len();
                    let frame = NetworkFrame::new(rec.data, rec.ts_sec as u64 * 1_000_000 + rec.ts_usec as u64)
                        .map_err(|_| PcapError::BadFrameLength { index, len })?;
                    inbound.push_back(frame);
                }
                let writer = outbound.map(|p| PcapWriter::create(&p)).transpose()?;
                Backend::Replay { log: Vec::new(), writer }
            }
            NetworkBackendKind::HostTap { interface } => open_tap(interface)?,
        };
        Ok(NetPort {
            backend,
            inbound,
            callback,
        })
    }

    /// Handles a send. Returns the peer slot and frame when the frame must
    /// be delivered to another port.
    pub(super) fn route(&mut self, frame: NetworkFrame) -> Result<Option<(String, NetworkFrame)>, HalError> {
        match &mut self.backend {
            Backend::Loopback { peer } => Ok(Some((peer.clone(), frame))),
            Backend::Replay { log, writer } => {
                if let Some(w) = writer {
                    w.append(&PcapRecord::at_micros(frame.timestamp, frame.payload.clone()))?;
                }
                log.push(frame);
                Ok(None)
            }
            #[cfg(feature = "host-tap")]
            Backend::HostTap(tap) => {
                tap.send(&frame.payload)?;
                Ok(None)
            }
        }
    }

    /// Moves frames that arrived on a live interface into the inbound queue.
    pub(super) fn poll(&mut self) {
        #[cfg(feature = "host-tap")]
        if let Backend::HostTap(tap) = &mut self.backend {
            while let Some(payload) = tap.recv() {
                if let Ok(f) = NetworkFrame::new(payload, 0) {
                    self.inbound.push_back(f);
                }
            }
        }
    }

    pub(super) fn receive(&mut self) -> Result<Option<NetworkFrame>, HalError> {
        self.poll();
        let frame = self.inbound.pop_front();
        if let (Some(f), Some(cb)) = (&frame, &mut self.callback) {
            cb(f);
        }
        Ok(frame)
    }

    pub(super) fn outbound(&self) -> &[NetworkFrame] {
        match &self.backend {
            Backend::Replay { log, .. } => log,
            _ => &[],
        }
    }
}

#[cfg(not(feature = "host-tap"))]
fn open_tap(interface: String) -> Result<Backend, HalError> {
    Err(HalError::InterfaceUnavailable(
        interface,
        "built without the host-tap feature".into(),
    ))
}

#[cfg(feature = "host-tap")]
fn open_tap(interface: String) -> Result<Backend, HalError> {
    tap::Tap::open(&interface)
        .map(Backend::HostTap)
        .map_err(|e| HalError::InterfaceUnavailable(interface, e.to_string()))
}

#[cfg(feature = "host-tap")]
mod tap {
    //! Raw Ethernet over an `AF_PACKET` socket bound to one interface.

    use std::ffi::CString;
    use std::io;

    use super::MAX_FRAME;

    pub struct Tap {
        fd: libc::c_int,
    }

    impl Tap {
        pub fn open(interface: &str) -> io::Result<Self> {
            let name = CString::new(interface).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
            let proto = (libc::ETH_P_ALL as u16).to_be();
            // SAFETY: plain socket(2)/bind(2) calls on a fresh descriptor
            // with a fully initialised sockaddr_ll.
            unsafe {
                let index = libc::if_nametoindex(name.as_ptr());
                if index == 0 {
                    return Err(io::Error::last_os_error());
                }
                let fd = libc::socket(libc::AF_PACKET, libc::SOCK_RAW | libc::SOCK_NONBLOCK, proto as i32);
                if fd < 0 {
                    return Err(io::Error::last_os_error());
                }
                let mut addr: libc::sockaddr_ll = std::mem::zeroed();
                addr.sll_family = libc::AF_PACKET as u16;
                addr.sll_protocol = proto;
                addr.sll_ifindex = index as i32;
                let rc = libc::bind(
                    fd,
                    &addr as *const libc::sockaddr_ll as *const libc::sockaddr,
                    std::mem::size_of::<libc::sockaddr_ll>() as u32,
                );
                if rc < 0 {
                    let err = io::Error::last_os_error();
                    libc::close(fd);
                    return Err(err);
                }
                Ok(Tap { fd })
            }
        }

        pub fn send(&mut self, payload: &[u8]) -> io::Result<()> {
            // SAFETY: the buffer is valid for `payload.len()` bytes.
            let n = unsafe { libc::send(self.fd, payload.as_ptr().cast(), payload.len(), 0) };
            if n < 0 {
                return Err(io::Error::last_os_error());
            }
            Ok(())
        }

        /// One pending frame, or `None` if nothing is queued.
        pub fn recv(&mut self) -> Option<Vec<u8>> {
            let mut buf = vec![0u8; MAX_FRAME];
            // SAFETY: the buffer is valid for MAX_FRAME bytes.
            let n = unsafe { libc::recv(self.fd, buf.as_mut_ptr().cast(), buf.len(), 0) };
            if n <= 0 {
                return None;
            }
            buf.truncate(n as usize);
            Some(buf)
        }
    }

    impl Drop for Tap {
        fn drop(&mut self) {
            // SAFETY: fd is owned by this value.
            unsafe {
                libc::close(self.fd);
            }
        }
    }
}

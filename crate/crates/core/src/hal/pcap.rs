//! Classic packet-capture container, Ethernet link type only.
//!
//! File header (24 bytes): magic `0xA1B2C3D4`, version 2.4, zone, sigfigs,
//! snaplen, link type. Each record: seconds, microseconds, captured length,
//! original length, then the captured bytes. Both byte orders are read;
//! files are written little-endian.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use thiserror::Error;

pub const MAGIC: u32 = 0xA1B2_C3D4;
pub const LINKTYPE_ETHERNET: u32 = 1;
const HEADER_LEN: usize = 24;
const RECORD_HEADER_LEN: usize = 16;
const SNAPLEN: u32 = 65_535;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PcapError {
    #[error("file shorter than the 24-byte header")]
    ShortHeader,
    #[error("bad magic {0:#010x}")]
    BadMagic(u32),
    #[error("unsupported link type {0}")]
    UnsupportedLinkType(u32),
    #[error("record {index} truncated")]
    TruncatedRecord { index: usize },
    #[error("record {index} has invalid length {len}")]
    BadFrameLength { index: usize, len: usize },
    #[error("{0}")]
    Io(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PcapRecord {
    pub ts_sec: u32,
    pub ts_usec: u32,
    pub data: Vec<u8>,
}

impl PcapRecord {
    /// Timestamp in microseconds.
    pub fn micros(&self) -> u64 {
        self.ts_sec as u64 * 1_000_000 + self.ts_usec as u64
    }

    pub fn at_micros(micros: u64, data: Vec<u8>) -> Self {
        PcapRecord {
            ts_sec: (micros / 1_000_000) as u32,
            ts_usec: (micros % 1_000_000) as u32,
            data,
        }
    }
}

pub fn parse(bytes: &[u8]) -> Result<Vec<PcapRecord>, PcapError> {
    if bytes.len() < HEADER_LEN {
        return Err(PcapError::ShortHeader);
    }
    let raw = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
    let le = match raw {
        MAGIC => true,
        m if m.swap_bytes() == MAGIC => false,
        m => return Err(PcapError::BadMagic(m)),
    };
    let word = |at: usize| {
        let b: [u8; 4] = bytes[at..at + 4].try_into().unwrap();
        if le {
            u32::from_le_bytes(b)
        } else {
            u32::from_be_bytes(b)
        }
    };
    let link = word(20);
    if link != LINKTYPE_ETHERNET {
        return Err(PcapError::UnsupportedLinkType(link));
    }
    let mut records = Vec::new();
    let mut at = HEADER_LEN;
    while at < bytes.len() {
        let index = records.len();
        if bytes.len() - at < RECORD_HEADER_LEN {
            return Err(PcapError::TruncatedRecord { index });
        }
        let (ts_sec, ts_usec, incl) = (word(at), word(at + 4), word(at + 8) as usize);
        at += RECORD_HEADER_LEN;
        if bytes.len() - at < incl {
            return Err(PcapError::TruncatedRecord { index });
        }
        records.push(PcapRecord {
            ts_sec,
            ts_usec,
            data: bytes[at..at + incl].to_vec(),
        });
        at += incl;
    }
    Ok(records)
}

fn header() -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[0..4].copy_from_slice(&MAGIC.to_le_bytes());
    h[4..6].copy_from_slice(&2u16.to_le_bytes());
    h[6..8].copy_from_slice(&4u16.to_le_bytes());
    h[16..20].copy_from_slice(&SNAPLEN.to_le_bytes());
    h[20..24].copy_from_slice(&LINKTYPE_ETHERNET.to_le_bytes());
    h
}

fn record_bytes(rec: &PcapRecord, out: &mut Vec<u8>) {
    let len = rec.data.len() as u32;
    for w in [rec.ts_sec, rec.ts_usec, len, len] {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out.extend_from_slice(&rec.data);
}

pub fn to_bytes(records: &[PcapRecord]) -> Vec<u8> {
    let mut out = header().to_vec();
    for r in records {
        record_bytes(r, &mut out);
    }
    out
}

/// Appends records to a capture file as they are produced.
#[derive(Debug)]
pub struct PcapWriter {
    out: BufWriter<File>,
}

impl PcapWriter {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(&header())?;
        out.flush()?;
        Ok(PcapWriter { out })
    }

    pub fn append(&mut self, rec: &PcapRecord) -> std::io::Result<()> {
        let mut buf = Vec::with_capacity(RECORD_HEADER_LEN + rec.data.len());
        record_bytes(rec, &mut buf);
        self.out.write_all(&buf)?;
        self.out.flush()
    }
}

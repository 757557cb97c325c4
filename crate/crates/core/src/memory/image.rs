//! Firmware image sections and the `PMCUIMG1` container format.
//!
//! The container is the 8-byte magic followed by three records, each a
//! little-endian `u32` length and that many bytes:
//!
//! 1. the `.data` initializer payload,
//! 2. the `.data` run address (`u32`),
//! 3. the `.bss` descriptor (`u32` run address, `u32` size).
//!
//! The payload is loaded at the flash origin.

use thiserror::Error;

use super::{ImageLayoutError, MemoryMap, Region};

pub const IMAGE_MAGIC: &[u8; 8] = b"PMCUIMG1";

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct DataSection {
    pub payload: Vec<u8>,
    /// Flash address the payload is stored at; `None` means the flash origin.
    pub load_addr: Option<u32>,
    pub run_addr: u32,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct BssSection {
    pub run_addr: u32,
    pub size: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct ImageSections {
    pub data: DataSection,
    pub bss: BssSection,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ImageFormatError {
    #[error("bad image magic")]
    BadMagic,
    #[error("image truncated in record {0}")]
    Truncated(usize),
    #[error("record {record} has length {got}, expected {expected}")]
    BadRecordLength { record: usize, expected: usize, got: usize },
    #[error("{0} trailing bytes after the last record")]
    TrailingBytes(usize),
}

impl ImageSections {
    /// An image with no initialized data and no bss.
    pub fn empty() -> Self {
        ImageSections::default()
    }

    pub fn new(payload: Vec<u8>, data_run: u32, bss_run: u32, bss_size: u32) -> Self {
        ImageSections {
            data: DataSection {
                payload,
                load_addr: None,
                run_addr: data_run,
            },
            bss: BssSection {
                run_addr: bss_run,
                size: bss_size,
            },
        }
    }

    pub(crate) fn load_addr(&self, map: &MemoryMap) -> u32 {
        self.data.load_addr.unwrap_or(map.flash.origin)
    }

    pub fn validate(&self, map: &MemoryMap) -> Result<(), ImageLayoutError> {
        let len = self.data.payload.len();
        let mut ranges = Vec::new();
        if len > 0 {
            let len = u32::try_from(len).map_err(|_| ImageLayoutError::OutsideSram("data"))?;
            if !map.flash.contains_range(self.load_addr(map), len) {
                return Err(ImageLayoutError::LoadOutsideFlash);
            }
            ranges.push(("data", Region::new(self.data.run_addr, len)));
        }
        if self.bss.size > 0 {
            ranges.push(("bss", Region::new(self.bss.run_addr, self.bss.size)));
        }
        for &(name, r) in &ranges {
            if !map.sram.contains_region(&r) {
                return Err(ImageLayoutError::OutsideSram(name));
            }
            if r.overlaps(&map.heap) {
                return Err(ImageLayoutError::Overlap(name, "heap"));
            }
            if r.overlaps(&map.stack_area) {
                return Err(ImageLayoutError::Overlap(name, "stack area"));
            }
        }
        if let [(_, data), (_, bss)] = ranges[..] {
            if data.overlaps(&bss) {
                return Err(ImageLayoutError::Overlap("data", "bss"));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = IMAGE_MAGIC.to_vec();
        let mut record = |bytes: &[u8]| {
            out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
            out.extend_from_slice(bytes);
        };
        record(&self.data.payload);
        record(&self.data.run_addr.to_le_bytes());
        let mut bss = self.bss.run_addr.to_le_bytes().to_vec();
        bss.extend_from_slice(&self.bss.size.to_le_bytes());
        record(&bss);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ImageFormatError> {
        let rest = bytes.strip_prefix(IMAGE_MAGIC).ok_or(ImageFormatError::BadMagic)?;
        let mut cursor = rest;
        let mut records = Vec::with_capacity(3);
        for record in 1..=3 {
            let (len, tail) = cursor.split_first_chunk::<4>().ok_or(ImageFormatError::Truncated(record))?;
            let len = u32::from_le_bytes(*len) as usize;
            if tail.len() < len {
                return Err(ImageFormatError::Truncated(record));
            }
            let (body, tail) = tail.split_at(len);
            records.push(body);
            cursor = tail;
        }
        if !cursor.is_empty() {
            return Err(ImageFormatError::TrailingBytes(cursor.len()));
        }
        let word = |b: &[u8], at: usize| u32::from_le_bytes(b[at..at + 4].try_into().unwrap());
        for (record, expected) in [(2, 4), (3, 8)] {
            let got = records[record - 1].len();
            if got != expected {
                return Err(ImageFormatError::BadRecordLength { record, expected, got });
            }
        }
        Ok(ImageSections::new(
            records[0].to_vec(),
            word(records[1], 0),
            word(records[2], 0),
            word(records[2], 4),
        ))
    }
}

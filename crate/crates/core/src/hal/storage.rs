use std::fs::{File, OpenOptions};
use std::os::unix::fs::FileExt;
use std::path::PathBuf;

use super::HalError;

pub const DEFAULT_BLOCK_SIZE: u32 = 512;

/// A block device backed by a flat host file holding the raw medium image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StorageMedium {
    pub path: PathBuf,
    pub block_size: u32,
}

impl StorageMedium {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        StorageMedium {
            path: path.into(),
            block_size: DEFAULT_BLOCK_SIZE,
        }
    }
}

/// The whole medium is held in memory; writes go through to the file
/// before returning.
#[derive(Debug)]
pub struct StorageDevice {
    file: File,
    data: Vec<u8>,
    block_size: u32,
}

impl StorageDevice {
    pub fn open(medium: StorageMedium) -> Result<Self, HalError> {
        let file = OpenOptions::new().read(true).write(true).open(&medium.path)?;
        let len = file.metadata()?.len();
        let bs = medium.block_size;
        if bs == 0 || !bs.is_power_of_two() || len == 0 || len % bs as u64 != 0 {
            return Err(HalError::MediumGeometry { len, block_size: bs });
        }
        let mut data = vec![0; len as usize];
        file.read_exact_at(&mut data, 0)?;
        Ok(StorageDevice {
            file,
            data,
            block_size: bs,
        })
    }

    pub fn block_size(&self) -> u32 {
        self.block_size
    }

    pub fn block_count(&self) -> u64 {
        self.data.len() as u64 / self.block_size as u64
    }

    fn span(&self, index: u64, count: u64) -> Result<std::ops::Range<usize>, HalError> {
        let blocks = self.block_count();
        match index.checked_add(count) {
            Some(end) if index < blocks && end <= blocks => {
                let bs = self.block_size as usize;
                Ok(index as usize * bs..end as usize * bs)
            }
            _ => Err(HalError::BlockOutOfRange { index, count, blocks }),
        }
    }

    pub fn read(&self, index: u64, count: u64) -> Result<Vec<u8>, HalError> {
        Ok(self.data[self.span(index, count)?].to_vec())
    }

    pub fn write(&mut self, index: u64, bytes: &[u8]) -> Result<(), HalError> {
        let bs = self.block_size as usize;
        if bytes.is_empty() || bytes.len() % bs != 0 {
            return Err(HalError::ShortWrite {
                len: bytes.len(),
                block_size: self.block_size,
            });
        }
        let span = self.span(index, (bytes.len() / bs) as u64)?;
        self.file.write_all_at(bytes, span.start as u64)?;
        self.data[span].copy_from_slice(bytes);
        Ok(())
    }
}

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::machine::Fnv64;

/// Reflected CRC-32 (polynomial 0x04C11DB7, init and final xor 0xFFFFFFFF).
pub fn crc32(bytes: &[u8]) -> u32 {
    crc32fast::hash(bytes)
}

pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

/// Hashing and random-number engine. The random stream is deterministic in
/// the machine seed so runs can be replayed.
#[derive(Debug)]
pub struct AccelDevice {
    rng: ChaCha8Rng,
}

impl AccelDevice {
    pub fn new(seed: u64, slot: &str) -> Self {
        let mut h = Fnv64::default();
        h.write(slot.as_bytes());
        AccelDevice {
            rng: ChaCha8Rng::seed_from_u64(seed ^ h.finish()),
        }
    }

    pub fn random(&mut self, count: usize) -> Vec<u8> {
        let mut out = vec![0; count];
        self.rng.fill_bytes(&mut out);
        out
    }
}

//! Content hashes used for request fingerprints and run metadata.

use sha2::{Digest, Sha256};

/// Incremental SHA-256 over length-prefixed fields, so that `("ab", "c")` and
/// `("a", "bc")` hash differently.
#[derive(Default)]
pub struct ContentHasher {
    inner: Sha256,
}

impl ContentHasher {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn field(&mut self, value: &str) -> &mut Self {
        self.inner.update((value.len() as u64).to_le_bytes());
        self.inner.update(value.as_bytes());
        self
    }

    /// Lowercase hex of the 256-bit digest.
    pub fn finish(self) -> String {
        hex::encode(self.inner.finalize())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

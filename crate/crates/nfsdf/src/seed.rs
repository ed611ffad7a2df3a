//! Sub-seed derivation from one master seed.
//!
//! `derive_seed(master, domain, index)` is the first eight bytes
//! (little-endian), top bit cleared, of `SHA-256("nfsdf/seed/v1" || 0 || master_le || domain ||
//! 0 || index_le)`. Domains name the consumer (`"corpus/train"`,
//! `"train/decoder"`, `"bundle/partial"`, ...), so adding a consumer never
//! shifts the seeds of another. Seeds keep 63 bits so that they fit a TOML
//! integer when the effective configuration is echoed.

use sha2::{Digest, Sha256};

const TAG: &[u8] = b"nfsdf/seed/v1";

/// Largest seed that round-trips through TOML.
pub const MAX_SEED: u64 = i64::MAX as u64;

pub fn derive_seed(master: u64, domain: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(TAG);
    h.update([0]);
    h.update(master.to_le_bytes());
    h.update(domain.as_bytes());
    h.update([0]);
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes")) & MAX_SEED
}

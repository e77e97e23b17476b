use alloc::string::String;
use core::fmt::Write;
use sha2::{Digest, Sha256};

use crate::prior::DatasetPair;

/// Incremental SHA-256 over typed values, used for config and data identity.
pub struct Fingerprint(Sha256);

impl Default for Fingerprint {
    fn default() -> Self {
        Self::new()
    }
}

impl Fingerprint {
    pub fn new() -> Self {
        Fingerprint(Sha256::new())
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.0.update(v.to_le_bytes());
        self
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.0.update(v.to_bits().to_le_bytes());
        self
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.u64(s.len() as u64);
        self.0.update(s.as_bytes());
        self
    }

    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.u64(b.len() as u64);
        self.0.update(b);
        self
    }

    pub fn hex(self) -> String {
        to_hex(&self.0.finalize())
    }
}

fn to_hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

pub fn digest_hex(bytes: &[u8]) -> String {
    to_hex(&Sha256::digest(bytes))
}

/// Content hash of a dataset pair (tables and targets, not the generating SCM).
pub fn pair_hash(pair: &DatasetPair) -> String {
    let mut fp = Fingerprint::new();
    fp.u64(pair.n_features as u64);
    fp.u64(pair.obs.len() as u64);
    for row in &pair.obs {
        fp.u64(row.t as u64);
        for &x in &row.x {
            fp.f64(x);
        }
        fp.f64(row.y);
    }
    fp.u64(pair.queries.len() as u64);
    for q in &pair.queries {
        fp.u64(q.t as u64);
        for &x in &q.x {
            fp.f64(x);
        }
    }
    if let Some(targets) = &pair.targets {
        for &y in targets {
            fp.f64(y);
        }
    }
    fp.hex()
}

//! Content hashes used to tie outputs back to the inputs that produced them.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

/// Hex digest length kept in reports; 64 bits is plenty to tell runs apart.
const SHORT: usize = 16;

pub fn bytes_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = hex::encode(digest);
    s.truncate(SHORT);
    s
}

/// Hash of the canonical JSON serialization of `value`.
pub fn config_hash<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    Ok(bytes_hash(&serde_json::to_vec(value)?))
}

pub fn floats_hash(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    bytes_hash(&bytes)
}

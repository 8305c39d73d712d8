//! Fingerprints and plain-text number formatting shared by the on-disk formats.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn fingerprint_f64(v: &[f64]) -> String {
    let mut h = Sha256::new();
    for x in v {
        h.update(x.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Shortest decimal representation that parses back to the same bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn fmt_row(v: &[f64], sep: &str) -> String {
    v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(sep)
}

pub fn parse_f64(s: &str, ctx: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| Error::Parse(format!("{ctx}: '{s}' is not a number ({e})")))
}

pub fn parse_row(line: &str, ctx: &str) -> Result<Vec<f64>> {
    line.split_whitespace().map(|t| parse_f64(t, ctx)).collect()
}

//! Report files: JSON metric reports with provenance, and CSV plot data.
//!
//! Every report embeds the experiment config hash and seed. No timestamps or
//! environment data: identical runs must produce identical bytes.

use std::path::Path;

use serde::Serialize;

use crate::error::Result;

/// FNV-1a 64-bit hash as fixed-width hex; used as the config fingerprint.
pub fn fnv1a_hex(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

/// Serialize a value as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Write CSV rows with a header line. Values are pre-formatted strings.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Shortest-round-trip float formatting (matches the JSON encoder).
pub fn fmt_f64(v: f64) -> String {
    let mut buf = ryu_format(v);
    if buf.ends_with(".0") {
        buf.truncate(buf.len() - 2);
    }
    buf
}

fn ryu_format(v: f64) -> String {
    // serde_json renders f64 with ryu; going through the JSON encoder keeps
    // CSV and JSON byte-consistent for the same value.
    serde_json::to_string(&v).expect("finite float")
}

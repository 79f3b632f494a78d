//! Report records, serialization helpers and config hashing.

use std::io::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

/// Percentile interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

/// One verified quantity. `pass` is `|estimate - target| <= tolerance`
/// unless the record is informational.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub quantity: String,
    pub estimate: f64,
    pub stderr: f64,
    pub target: f64,
    pub tolerance: f64,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci: Option<Interval>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub informational: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Check {
    pub fn within(
        quantity: impl Into<String>,
        estimate: f64,
        stderr: f64,
        target: f64,
        tolerance: f64,
    ) -> Self {
        Check {
            quantity: quantity.into(),
            estimate,
            stderr,
            target,
            tolerance,
            pass: (estimate - target).abs() <= tolerance,
            ci: None,
            informational: false,
            note: None,
        }
    }

    /// Check that `estimate` lies in `[lo, hi]`; target is the midpoint.
    pub fn between(
        quantity: impl Into<String>,
        estimate: f64,
        stderr: f64,
        lo: f64,
        hi: f64,
    ) -> Self {
        let mut c = Check::within(quantity, estimate, stderr, 0.5 * (lo + hi), 0.5 * (hi - lo));
        c.pass = estimate >= lo && estimate <= hi;
        c
    }

    /// Recorded for reference; never fails.
    pub fn info(quantity: impl Into<String>, estimate: f64, stderr: f64, target: f64) -> Self {
        let mut c = Check::within(quantity, estimate, stderr, target, 0.0);
        c.pass = true;
        c.informational = true;
        c
    }

    pub fn with_ci(mut self, ci: Interval) -> Self {
        self.ci = Some(ci);
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    /// Overrides the pass flag for composite checks.
    pub fn with_pass(mut self, pass: bool) -> Self {
        self.pass = pass;
        self
    }
}

/// Writes one JSON object per line.
pub fn write_ndjson<W: Write, T: Serialize>(mut w: W, records: &[T]) -> Result<()> {
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| crate::Error::Io(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Float with 17 significant digits, enough for a bit-faithful round trip.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Hex SHA-256 of the bytes.
pub fn config_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Header comment embedding provenance of a CSV file.
pub fn csv_header<W: Write>(mut w: W, hash: &str, seed: u64) -> Result<()> {
    writeln!(w, "# config_sha256={hash} seed={seed}")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for &x in &[0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            let s = fmt17(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn check_logic() {
        assert!(Check::within("a", 1.05, 0.0, 1.0, 0.1).pass);
        assert!(!Check::within("a", 1.2, 0.0, 1.0, 0.1).pass);
        assert!(Check::between("b", 3.0, 0.0, 2.0, 8.0).pass);
        assert!(!Check::between("b", 9.0, 0.0, 2.0, 8.0).pass);
        assert!(Check::info("c", 5.0, 0.0, 1.0).pass);
        assert_eq!(config_hash(b"abc").len(), 64);
    }
}

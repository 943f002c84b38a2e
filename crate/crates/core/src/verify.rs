//! Checkpoints of kernel outputs and bitwise or tolerance comparison.
//!
//! NaNs only ever match the identical bit pattern. `-0.0` and `+0.0` differ
//! under [`CompareMode::Bit`] and are one step apart under
//! [`CompareMode::Ulp`], so `Ulp(0)` agrees with `Bit`; [`CompareMode::Rel`]
//! treats them as equal.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::kernels::flatio;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("dims differ: {a:?} vs {b:?}")]
    DimsMismatch { a: Vec<u64>, b: Vec<u64> },
    #[error("dims {dims:?} do not describe {len} values")]
    Shape { dims: Vec<u64>, len: usize },
    #[error("label {0:?} must be non-empty and use only [A-Za-z0-9._+-]")]
    BadLabel(String),
    #[error("bad compare mode {0:?}; expected bit, ulp:<k> or rel:<eps>")]
    BadMode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "tolerance", rename_all = "lowercase")]
pub enum CompareMode {
    Bit,
    Ulp(u64),
    Rel(f64),
}

impl fmt::Display for CompareMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CompareMode::Bit => write!(f, "bit"),
            CompareMode::Ulp(k) => write!(f, "ulp:{k}"),
            CompareMode::Rel(eps) => write!(f, "rel:{eps:e}"),
        }
    }
}

impl FromStr for CompareMode {
    type Err = VerifyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || VerifyError::BadMode(s.to_string());
        let lower = s.trim().to_ascii_lowercase();
        match lower.split_once(':') {
            None if lower == "bit" => Ok(CompareMode::Bit),
            Some(("ulp", k)) => k.parse().map(CompareMode::Ulp).map_err(|_| bad()),
            Some(("rel", eps)) => match eps.parse::<f64>() {
                Ok(e) if e.is_finite() && e >= 0.0 => Ok(CompareMode::Rel(e)),
                _ => Err(bad()),
            },
            _ => Err(bad()),
        }
    }
}

/// A labeled row-major array of doubles with the SHA-256 of its raw
/// little-endian bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub label: String,
    pub dims: Vec<u64>,
    pub payload: Vec<f64>,
    pub hash: String,
}

pub fn payload_hash(payload: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in payload {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn check_label(label: &str) -> Result<(), VerifyError> {
    let ok = !label.is_empty()
        && label.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '+' | '-'))
        && label != "."
        && label != "..";
    if ok {
        Ok(())
    } else {
        Err(VerifyError::BadLabel(label.to_string()))
    }
}

fn io_err(path: &Path, e: std::io::Error) -> VerifyError {
    VerifyError::Io { path: path.display().to_string(), message: e.to_string() }
}

impl Checkpoint {
    pub fn new(label: &str, dims: Vec<u64>, payload: Vec<f64>) -> Result<Self, VerifyError> {
        check_label(label)?;
        let count = dims.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d));
        if count != Some(payload.len() as u64) {
            return Err(VerifyError::Shape { dims, len: payload.len() });
        }
        let hash = payload_hash(&payload);
        Ok(Checkpoint { label: label.to_string(), dims, payload, hash })
    }

    pub fn hash_matches(&self) -> bool {
        payload_hash(&self.payload) == self.hash
    }

    pub fn file_name(&self) -> String {
        format!("{}.bin", self.label)
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf, VerifyError> {
        let path = dir.join(self.file_name());
        flatio::save(&path, &self.dims, &self.payload).map_err(|e| io_err(&path, e))?;
        Ok(path)
    }

    /// Reads a checkpoint file; the label is the file stem.
    pub fn load(path: &Path) -> Result<Self, VerifyError> {
        let (dims, payload) = flatio::load(path).map_err(|e| io_err(path, e))?;
        let label = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        Checkpoint::new(label, dims, payload)
    }
}

/// Builds a checkpoint and writes it to `<dir>/<label>.bin`.
pub fn record(dir: &Path, label: &str, dims: &[u64], data: &[f64]) -> Result<Checkpoint, VerifyError> {
    let cp = Checkpoint::new(label, dims.to_vec(), data.to_vec())?;
    cp.save(dir)?;
    Ok(cp)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Match,
    Mismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mismatch {
    pub index: u64,
    pub a_bits: String,
    pub b_bits: String,
    /// Shortest round-trip decimal forms, kept as text so NaN and infinities
    /// survive JSON.
    pub a: String,
    pub b: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub a_label: String,
    pub b_label: String,
    pub mode: CompareMode,
    pub status: Status,
    pub len: u64,
    pub mismatch_count: u64,
    pub first_mismatch: Option<Mismatch>,
}

impl CompareReport {
    pub fn matched(&self) -> bool {
        self.status == Status::Match
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Position on a line where adjacent doubles are one apart, `-0.0` sitting
/// just below `+0.0`.
fn ordinal(x: f64) -> i128 {
    let bits = x.to_bits();
    let magnitude = (bits & !(1 << 63)) as i128;
    if bits >> 63 == 1 {
        -magnitude - 1
    } else {
        magnitude
    }
}

pub fn ulp_distance(a: f64, b: f64) -> u128 {
    (ordinal(a) - ordinal(b)).unsigned_abs()
}

pub fn values_match(a: f64, b: f64, mode: CompareMode) -> bool {
    if a.to_bits() == b.to_bits() {
        return true;
    }
    if a.is_nan() || b.is_nan() {
        return false;
    }
    match mode {
        CompareMode::Bit => false,
        CompareMode::Ulp(k) => ulp_distance(a, b) <= k as u128,
        CompareMode::Rel(eps) => a == b || (a - b).abs() <= eps * a.abs().max(b.abs()),
    }
}

pub fn compare(a: &Checkpoint, b: &Checkpoint, mode: CompareMode) -> Result<CompareReport, VerifyError> {
    if a.dims != b.dims || a.payload.len() != b.payload.len() {
        return Err(VerifyError::DimsMismatch { a: a.dims.clone(), b: b.dims.clone() });
    }
    let mut mismatch_count = 0u64;
    let mut first = None;
    for (i, (&x, &y)) in a.payload.iter().zip(&b.payload).enumerate() {
        if values_match(x, y, mode) {
            continue;
        }
        mismatch_count += 1;
        first.get_or_insert_with(|| Mismatch {
            index: i as u64,
            a_bits: format!("{:#018x}", x.to_bits()),
            b_bits: format!("{:#018x}", y.to_bits()),
            a: format!("{x:?}"),
            b: format!("{y:?}"),
        });
    }
    Ok(CompareReport {
        a_label: a.label.clone(),
        b_label: b.label.clone(),
        mode,
        status: if mismatch_count == 0 { Status::Match } else { Status::Mismatch },
        len: a.payload.len() as u64,
        mismatch_count,
        first_mismatch: first,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cp(label: &str, data: Vec<f64>) -> Checkpoint {
        Checkpoint::new(label, vec![data.len() as u64], data).unwrap()
    }

    #[test]
    fn empty_checkpoint_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let c = record(dir.path(), "empty", &[0], &[]).unwrap();
        let back = Checkpoint::load(&dir.path().join("empty.bin")).unwrap();
        assert_eq!(back, c);
        assert!(back.hash_matches());
    }

    #[test]
    fn same_data_same_hash() {
        assert_eq!(cp("a", vec![1.0, 2.0]).hash, cp("b", vec![1.0, 2.0]).hash);
        assert_ne!(cp("a", vec![0.0]).hash, cp("a", vec![-0.0]).hash);
    }

    #[test]
    fn nan_payload_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let odd_nan = f64::from_bits(0x7ff8_dead_beef_0001);
        let c = record(dir.path(), "nan", &[3], &[f64::NAN, odd_nan, -f64::NAN]).unwrap();
        let back = Checkpoint::load(&dir.path().join("nan.bin")).unwrap();
        assert_eq!(back.hash, c.hash);
        assert!(compare(&c, &back, CompareMode::Bit).unwrap().matched());
        let bits: Vec<u64> = back.payload.iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits[1], 0x7ff8_dead_beef_0001);
    }

    #[test]
    fn flipped_low_bit() {
        let a = cp("a", vec![1.0, 2.5, 3.0]);
        let b = cp("b", vec![1.0, f64::from_bits(2.5f64.to_bits() ^ 1), 3.0]);
        let bit = compare(&a, &b, CompareMode::Bit).unwrap();
        assert_eq!(bit.status, Status::Mismatch);
        assert_eq!(bit.mismatch_count, 1);
        let m = bit.first_mismatch.unwrap();
        assert_eq!(m.index, 1);
        assert_eq!(m.a_bits, "0x4004000000000000");
        assert!(compare(&a, &b, CompareMode::Ulp(1)).unwrap().matched());
        assert!(!compare(&a, &b, CompareMode::Ulp(0)).unwrap().matched());
    }

    #[test]
    fn signed_zero_rules() {
        assert!(!values_match(0.0, -0.0, CompareMode::Bit));
        assert!(!values_match(0.0, -0.0, CompareMode::Ulp(0)));
        assert!(values_match(0.0, -0.0, CompareMode::Ulp(1)));
        assert!(values_match(0.0, -0.0, CompareMode::Rel(0.0)));
    }

    #[test]
    fn nan_only_matches_itself() {
        let other = f64::from_bits(f64::NAN.to_bits() + 1);
        for mode in [CompareMode::Bit, CompareMode::Ulp(u64::MAX), CompareMode::Rel(1e300)] {
            assert!(values_match(f64::NAN, f64::NAN, mode));
            assert!(!values_match(f64::NAN, other, mode));
            assert!(!values_match(f64::NAN, 1.0, mode));
        }
    }

    #[test]
    fn relative_tolerance() {
        assert!(values_match(1.0, 1.0 + 1e-13, CompareMode::Rel(1e-12)));
        assert!(!values_match(1.0, 1.0 + 1e-11, CompareMode::Rel(1e-12)));
        assert!(values_match(f64::INFINITY, f64::INFINITY, CompareMode::Rel(0.0)));
    }

    #[test]
    fn dims_must_agree() {
        let a = Checkpoint::new("a", vec![2, 2], vec![0.0; 4]).unwrap();
        let b = Checkpoint::new("b", vec![4], vec![0.0; 4]).unwrap();
        assert!(matches!(compare(&a, &b, CompareMode::Bit), Err(VerifyError::DimsMismatch { .. })));
        assert!(matches!(Checkpoint::new("c", vec![3], vec![0.0; 4]), Err(VerifyError::Shape { .. })));
        assert!(matches!(Checkpoint::new("../x", vec![0], vec![]), Err(VerifyError::BadLabel(_))));
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("bit".parse::<CompareMode>().unwrap(), CompareMode::Bit);
        assert_eq!("ULP:3".parse::<CompareMode>().unwrap(), CompareMode::Ulp(3));
        assert_eq!("rel:1e-12".parse::<CompareMode>().unwrap(), CompareMode::Rel(1e-12));
        for bad in ["", "ulp", "ulp:-1", "rel:x", "rel:-1", "bits"] {
            assert!(bad.parse::<CompareMode>().is_err(), "{bad}");
        }
        for m in [CompareMode::Bit, CompareMode::Ulp(7), CompareMode::Rel(0.5)] {
            assert_eq!(m.to_string().parse::<CompareMode>().unwrap(), m);
        }
    }

    fn any_f64() -> impl Strategy<Value = f64> {
        prop_oneof![any::<u64>().prop_map(f64::from_bits), any::<f64>(), Just(0.0), Just(-0.0), Just(f64::NAN),]
    }

    fn any_mode() -> impl Strategy<Value = CompareMode> {
        prop_oneof![
            Just(CompareMode::Bit),
            (0u64..1000).prop_map(CompareMode::Ulp),
            (0.0f64..1.0).prop_map(CompareMode::Rel),
        ]
    }

    proptest! {
        #[test]
        fn compare_is_symmetric(a in any_f64(), b in any_f64(), mode in any_mode()) {
            prop_assert_eq!(values_match(a, b, mode), values_match(b, a, mode));
        }

        #[test]
        fn ulp_tolerance_is_monotone(a in any_f64(), b in any_f64(), k in 0u64..1_000_000) {
            if values_match(a, b, CompareMode::Ulp(k)) {
                prop_assert!(values_match(a, b, CompareMode::Ulp(k + 1)));
            }
        }

        #[test]
        fn ulp_zero_is_bit_for_numbers(a in any_f64(), b in any_f64()) {
            prop_assume!(!a.is_nan() && !b.is_nan());
            prop_assert_eq!(values_match(a, b, CompareMode::Ulp(0)), values_match(a, b, CompareMode::Bit));
        }

        #[test]
        fn bit_match_means_identical_bytes(v in proptest::collection::vec(any_f64(), 0..50)) {
            let a = cp("a", v.clone());
            let mut w = v.clone();
            if let Some(x) = w.first_mut() {
                *x = f64::from_bits(x.to_bits() ^ 1);
            }
            let b = cp("b", w);
            let report = compare(&a, &b, CompareMode::Bit).unwrap();
            prop_assert_eq!(report.matched(), a.hash == b.hash);
            prop_assert!(compare(&a, &a, CompareMode::Bit).unwrap().matched());
        }
    }
}

//! On-disk form of attack results: a CSV summary plus a little-endian
//! sidecar holding the `x` / `x_att` vectors.
//!
//! Sidecar layout: magic `SEPTADV\0`, version `u32`, record count `u64`,
//! dimension `u32`, then per record `sample_id: u64`, `x: [f64; d]`,
//! `x_att: [f64; d]`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::attacks::{AdversarialRecord, AttackKind};

pub const SIDECAR_MAGIC: &[u8; 8] = b"SEPTADV\0";
pub const SIDECAR_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub sample_id: usize,
    pub source_copy: usize,
    pub attack: String,
    pub alpha: f64,
    pub true_label: usize,
    pub attacked_label: usize,
    pub l2: f64,
    pub queries: u64,
}

pub fn write_records(csv_path: &Path, bin_path: &Path, alpha: f64, records: &[AdversarialRecord]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(csv_path).map_err(|e| HarnessError::io(csv_path, e))?;
    for r in records {
        w.serialize(RecordRow {
            sample_id: r.sample_id,
            source_copy: r.source_copy,
            attack: r.attack.name().to_owned(),
            alpha,
            true_label: r.true_label,
            attacked_label: r.attacked_label,
            l2: r.l2,
            queries: r.queries,
        })
        .map_err(|e| HarnessError::io(csv_path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(csv_path, e))?;

    let dim = records.first().map_or(0, |r| r.x.len());
    let mut buf = Vec::with_capacity(24 + records.len() * (8 + 16 * dim));
    buf.extend_from_slice(SIDECAR_MAGIC);
    buf.extend_from_slice(&SIDECAR_VERSION.to_le_bytes());
    buf.extend_from_slice(&(records.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    for r in records {
        buf.extend_from_slice(&(r.sample_id as u64).to_le_bytes());
        for v in r.x.iter().chain(&r.x_att) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(bin_path, buf).map_err(|e| HarnessError::io(bin_path, e))
}

fn corrupt(path: &Path, msg: &str) -> HarnessError {
    HarnessError::Corrupt {
        path: path.to_path_buf(),
        msg: msg.to_owned(),
    }
}

/// Reads a CSV + sidecar pair back into records (without histories).
pub fn read_records(csv_path: &Path, bin_path: &Path) -> Result<Vec<AdversarialRecord>, HarnessError> {
    for p in [csv_path, bin_path] {
        if !p.is_file() {
            return Err(HarnessError::MissingInput(p.to_path_buf()));
        }
    }
    let mut rows = Vec::new();
    let mut rdr = csv::Reader::from_path(csv_path).map_err(|e| HarnessError::io(csv_path, e))?;
    for row in rdr.deserialize::<RecordRow>() {
        rows.push(row.map_err(|e| corrupt(csv_path, &e.to_string()))?);
    }

    let bytes = std::fs::read(bin_path).map_err(|e| HarnessError::io(bin_path, e))?;
    if bytes.len() < 24 || &bytes[..8] != SIDECAR_MAGIC {
        return Err(corrupt(bin_path, "bad magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    if u32_at(8) != SIDECAR_VERSION {
        return Err(corrupt(bin_path, "unsupported version"));
    }
    let count = u64_at(12) as usize;
    let dim = u32_at(20) as usize;
    if count != rows.len() {
        return Err(corrupt(bin_path, "record count differs from CSV"));
    }
    let stride = 8 + 16 * dim;
    if bytes.len() != 24 + count * stride {
        return Err(corrupt(bin_path, "length does not match header"));
    }

    let mut out = Vec::with_capacity(count);
    for (i, row) in rows.into_iter().enumerate() {
        let base = 24 + i * stride;
        if u64_at(base) as usize != row.sample_id {
            return Err(corrupt(bin_path, "sample ids differ from CSV"));
        }
        let vec_at = |k: usize| -> Vec<f64> {
            (0..dim)
                .map(|j| {
                    let o = base + 8 + 8 * (k * dim + j);
                    f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap())
                })
                .collect()
        };
        let attack = AttackKind::parse(&row.attack).ok_or_else(|| corrupt(csv_path, "unknown attack tag"))?;
        out.push(AdversarialRecord {
            sample_id: row.sample_id,
            source_copy: row.source_copy,
            attack,
            x: vec_at(0),
            x_att: vec_at(1),
            true_label: row.true_label,
            attacked_label: row.attacked_label,
            queries: row.queries,
            l2: row.l2,
            budget_exhausted: false,
            history: Vec::new(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: usize) -> AdversarialRecord {
        AdversarialRecord {
            sample_id: id,
            source_copy: 1,
            attack: AttackKind::Surfree,
            x: vec![0.1, 0.2, 0.3],
            x_att: vec![0.1 + id as f64 * 1e-3, 0.25, 1.0 / 3.0],
            true_label: 2,
            attacked_label: 0,
            queries: 4321,
            l2: 0.123456789,
            budget_exhausted: true,
            history: vec![(1, 2.0)],
        }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (c, b) = (dir.path().join("r.csv"), dir.path().join("r.bin"));
        let recs = vec![record(4), record(9)];
        write_records(&c, &b, 0.15, &recs).unwrap();
        let back = read_records(&c, &b).unwrap();
        for (a, b) in recs.iter().zip(&back) {
            assert_eq!((a.sample_id, a.source_copy, a.attack), (b.sample_id, b.source_copy, b.attack));
            assert_eq!((&a.x, &a.x_att, a.l2, a.queries), (&b.x, &b.x_att, b.l2, b.queries));
            assert_eq!((a.true_label, a.attacked_label), (b.true_label, b.attacked_label));
        }
        let header = std::fs::read_to_string(&c).unwrap();
        assert!(header.starts_with("sample_id,source_copy,attack,alpha,true_label,attacked_label,l2,queries\n"));
    }

    #[test]
    fn missing_and_corrupt_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let (c, b) = (dir.path().join("r.csv"), dir.path().join("r.bin"));
        assert_eq!(read_records(&c, &b).unwrap_err().exit_code(), 3);
        write_records(&c, &b, 0.1, &[record(1)]).unwrap();
        let mut bytes = std::fs::read(&b).unwrap();
        bytes.pop();
        std::fs::write(&b, bytes).unwrap();
        assert!(matches!(read_records(&c, &b), Err(HarnessError::Corrupt { .. })));
    }
}

//! Resumable per-path results.
//!
//! Layout, little endian: magic `SILTCKPT`, format version `u32`, fingerprint
//! length `u32` and UTF-8 bytes, values per path `u32`, paths done `u64`,
//! then `paths done × width` values as `f64`.

use std::fs;
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SILTCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub fingerprint: String,
    pub width: u32,
    pub progress: u64,
    pub values: Vec<f64>,
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.fingerprint.len() + 8 * self.values.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.fingerprint.len() as u32).to_le_bytes());
        out.extend_from_slice(self.fingerprint.as_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.progress.to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let corrupt = |what: &str| Error::Internal(format!("corrupt checkpoint: {what}"));
        let mut at = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes.get(at..at + n).ok_or_else(|| corrupt("truncated"))?;
            at += n;
            Ok(s)
        };
        if take(8)? != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(corrupt(&format!("unknown version {version}")));
        }
        let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let fingerprint = String::from_utf8(take(len)?.to_vec()).map_err(|_| corrupt("fingerprint"))?;
        let width = u32::from_le_bytes(take(4)?.try_into().unwrap());
        let progress = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let count = (progress as usize)
            .checked_mul(width as usize)
            .ok_or_else(|| corrupt("size overflow"))?;
        let values = (0..count)
            .map(|_| take(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())))
            .collect::<Result<Vec<_>>>()?;
        if at != bytes.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Self {
            fingerprint,
            width,
            progress,
            values,
        })
    }

    /// Written to a sibling file first and renamed into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("partial");
        fs::write(&tmp, self.encode())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Option<Self>> {
        match fs::read(path) {
            Ok(bytes) => Self::decode(&bytes).map(Some),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }
}

/// Computes `total` paths of `width` values each in chunks of `every`,
/// saving progress after each chunk and resuming from `path` if a matching
/// checkpoint exists. The checkpoint is removed on completion.
pub fn run_checkpointed<F>(
    path: &Path,
    fingerprint: &str,
    total: u64,
    every: u64,
    width: u32,
    mut compute: F,
) -> Result<Vec<f64>>
where
    F: FnMut(Range<u64>) -> Result<Vec<f64>>,
{
    let mut state = match Checkpoint::load(path)? {
        Some(c) if c.fingerprint != fingerprint => {
            return Err(Error::FingerprintMismatch {
                expected: fingerprint.to_string(),
                found: c.fingerprint,
            })
        }
        Some(c) if c.width != width || c.progress > total => {
            return Err(Error::Internal(format!(
                "checkpoint {} does not match this run",
                path.display()
            )))
        }
        Some(c) => c,
        None => Checkpoint {
            fingerprint: fingerprint.to_string(),
            width,
            progress: 0,
            values: Vec::new(),
        },
    };
    while state.progress < total {
        let end = (state.progress + every.max(1)).min(total);
        let chunk = compute(state.progress..end)?;
        if chunk.len() as u64 != (end - state.progress) * width as u64 {
            return Err(Error::Internal("chunk has the wrong number of values".into()));
        }
        state.values.extend(chunk);
        state.progress = end;
        if state.progress < total {
            state.save(path)?;
        }
    }
    match fs::remove_file(path) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => return Err(e.into()),
        _ => {}
    }
    Ok(state.values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(r: Range<u64>) -> Result<Vec<f64>> {
        Ok(r.flat_map(|i| [i as f64, (i * i) as f64]).collect())
    }

    #[test]
    fn encode_decode_round_trip() {
        let c = Checkpoint {
            fingerprint: "fp".into(),
            width: 2,
            progress: 2,
            values: vec![1.0, -0.0, f64::MAX, 1e-300],
        };
        let back = Checkpoint::decode(&c.encode()).unwrap();
        assert_eq!(back.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), c.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(back.progress, 2);
        assert!(Checkpoint::decode(&c.encode()[..20]).is_err());
    }

    #[test]
    fn interrupted_run_resumes_to_the_same_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ckpt");
        let full = run_checkpointed(&path, "fp", 25, 4, 2, square).unwrap();
        assert!(!path.exists());

        let mut calls = 0;
        let interrupted = run_checkpointed(&path, "fp", 25, 4, 2, |r| {
            calls += 1;
            if calls == 3 {
                Err(Error::Internal("interrupted".into()))
            } else {
                square(r)
            }
        });
        assert!(interrupted.is_err());
        assert_eq!(Checkpoint::load(&path).unwrap().unwrap().progress, 8);
        assert!(run_checkpointed(&path, "other", 25, 4, 2, square).is_err());

        let mut first = None;
        let resumed = run_checkpointed(&path, "fp", 25, 4, 2, |r| {
            first.get_or_insert(r.start);
            square(r)
        })
        .unwrap();
        assert_eq!(first, Some(8));
        assert_eq!(resumed, full);
    }
}

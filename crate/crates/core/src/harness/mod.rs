//! Configuration, run directories, checkpoints and the six pipelines behind
//! the command line.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod store;

pub use checkpoint::{run_checkpointed, Checkpoint};
pub use commands::{run_subcommand, CommandOutcome, Subcommand};
pub use config::ExperimentConfig;
pub use store::{default_root, Manifest, ResultStore, OUTPUT_ROOT_VAR};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::localtime::EstimateRecord;
use crate::stats::Accumulator;

/// SHA-256 of the canonical JSON form (object keys sorted) of `value`.
pub fn fingerprint<T: Serialize>(value: &T) -> String {
    let canonical = serde_json::to_value(value).expect("fingerprinted values serialize");
    let text = serde_json::to_string(&canonical).expect("json values serialize");
    crate::gaussian::hex(&Sha256::digest(text.as_bytes()))
}

/// Pool partial estimates of one quantity.
///
/// Records are folded in a canonical order, so any permutation of `parts`
/// gives the same bits. Empty records are skipped.
pub fn merge_partials(parts: &[EstimateRecord]) -> Result<EstimateRecord> {
    let first = parts
        .first()
        .ok_or_else(|| Error::domain("nothing to merge"))?;
    for p in parts {
        if p.fingerprint != first.fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: first.fingerprint.clone(),
                found: p.fingerprint.clone(),
            });
        }
        if p.seed != first.seed {
            return Err(Error::domain(format!("cannot merge seeds {} and {}", first.seed, p.seed)));
        }
    }
    let mut accs: Vec<Accumulator> = parts.iter().map(|p| p.accumulator).filter(|a| a.count > 0).collect();
    accs.sort_by(|a, b| {
        a.count
            .cmp(&b.count)
            .then(a.sum.hi.total_cmp(&b.sum.hi))
            .then(a.sum.lo.total_cmp(&b.sum.lo))
            .then(a.sum_sq.hi.total_cmp(&b.sum_sq.hi))
            .then(a.sum_sq.lo.total_cmp(&b.sum_sq.lo))
    });
    let pooled = match accs.split_first() {
        Some((head, rest)) => rest.iter().fold(*head, |acc, a| acc.merge(a)),
        None => Accumulator::new(),
    };
    Ok(EstimateRecord::from_accumulator(pooled, first.seed, first.fingerprint.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(xs: &[f64]) -> EstimateRecord {
        EstimateRecord::from_accumulator(Accumulator::from_slice(xs), 7, "fp".into())
    }

    #[test]
    fn empty_record_is_the_identity() {
        let x = record(&[0.3, -1.25, 4.5, 2.0]);
        let merged = merge_partials(&[x.clone(), record(&[])]).unwrap();
        assert_eq!(merged, x);
    }

    #[test]
    fn pooled_halves_match_the_full_run() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37 % 101) as f64).sin()).collect();
        let full = record(&xs);
        let pooled = merge_partials(&[record(&xs[..500]), record(&xs[500..])]).unwrap();
        assert_eq!(pooled.n_samples, 1000);
        assert!((pooled.value - full.value).abs() <= 1e-15);
        assert!((pooled.std_error - full.std_error).abs() <= 1e-14 * full.std_error);
    }

    #[test]
    fn mismatched_fingerprints_are_rejected() {
        let mut other = record(&[1.0]);
        other.fingerprint = "elsewhere".into();
        assert!(matches!(
            merge_partials(&[record(&[1.0]), other]),
            Err(Error::FingerprintMismatch { .. })
        ));
    }
}

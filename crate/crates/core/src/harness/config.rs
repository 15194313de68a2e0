use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clarkocone::Schedule;
use crate::error::{Error, Result};
use crate::kernel::HurstParams;
use crate::localtime::MollifierConfig;

/// Everything a run needs, one TOML section per module.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub representation: RepresentationSection,
    #[serde(default)]
    pub bounds: BoundsSection,
    #[serde(default)]
    pub lnd: LndSection,
    #[serde(default)]
    pub moments: MomentsSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hurst: f64,
    pub dim: usize,
    pub horizon: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hurst: 0.5,
            dim: 2,
            horizon: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Grid size `N`.
    pub n: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub eps: f64,
    /// Decreasing `ε` values; the geometric default when absent.
    pub eps_schedule: Option<Vec<f64>>,
    pub checkpoint_every: usize,
    /// Root for run directories; falls back to `SILT_OUTPUT_ROOT`.
    pub output_dir: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            n: 256,
            n_paths: 100,
            seed: 1,
            eps: 0.05,
            eps_schedule: None,
            checkpoint_every: 10_000,
            output_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimulationMethod {
    Volterra,
    Cholesky,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub method: SimulationMethod,
    /// Paths written to `paths.csv`; the rest only enter the summary.
    pub paths_written: usize,
    pub kernel_table: bool,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            method: SimulationMethod::Volterra,
            paths_written: 4,
            kernel_table: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RepresentationSection {
    pub sizes: Vec<usize>,
    pub schedule: Schedule,
    pub batch_size: usize,
    pub per_path_csv: bool,
}

impl Default for RepresentationSection {
    fn default() -> Self {
        Self {
            sizes: vec![128, 256, 512],
            schedule: Schedule::Incremental,
            batch_size: 64,
            per_path_csv: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsSection {
    /// Lower limits `r` as fractions of the horizon.
    pub r_fractions: Vec<f64>,
    pub simplex_exponents: Vec<f64>,
    pub simplex_orders: Vec<usize>,
    pub simplex_mc_samples: usize,
    /// Orders up to which the Monte Carlo oracle is run.
    pub simplex_mc_max_order: usize,
    pub transfer_paths: usize,
    pub transfer_n: usize,
    pub transfer_p: f64,
}

impl Default for BoundsSection {
    fn default() -> Self {
        Self {
            r_fractions: (1..=9).map(|i| i as f64 / 10.0).collect(),
            simplex_exponents: (1..=9).map(|i| i as f64 / 10.0).collect(),
            simplex_orders: (1..=6).collect(),
            simplex_mc_samples: 200_000,
            simplex_mc_max_order: 4,
            transfer_paths: 200,
            transfer_n: 128,
            transfer_p: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LndSection {
    pub nodes: usize,
}

impl Default for LndSection {
    fn default() -> Self {
        Self { nodes: 128 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MomentsSection {
    pub samples: u64,
}

impl Default for MomentsSection {
    fn default() -> Self {
        Self { samples: 200_000 }
    }
}


impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn params(&self) -> HurstParams {
        HurstParams {
            hurst: self.model.hurst,
            dim: self.model.dim,
            horizon: self.model.horizon,
        }
    }

    pub fn eps_schedule(&self) -> Vec<f64> {
        self.run
            .eps_schedule
            .clone()
            .unwrap_or_else(|| MollifierConfig::geometric(&self.params()).schedule)
    }

    /// Identity of the numerical content: the output location and the
    /// checkpoint spacing are left out.
    pub fn fingerprint(&self) -> String {
        let mut numeric = self.clone();
        numeric.run.output_dir = None;
        numeric.run.checkpoint_every = 0;
        super::fingerprint(&numeric)
    }

    /// Every violated invariant.
    pub fn violations(&self) -> Vec<String> {
        let mut v: Vec<String> = self.params().violations().into_iter().map(|m| format!("model: {m}")).collect();
        let run = &self.run;
        if run.n < 2 {
            v.push(format!("run: n must be at least 2, got {}", run.n));
        }
        if run.n_paths == 0 {
            v.push("run: n_paths must be positive".into());
        }
        if !(run.eps > 0.0 && run.eps.is_finite()) {
            v.push(format!("run: eps must be positive, got {}", run.eps));
        }
        if let Some(schedule) = &run.eps_schedule {
            let m = MollifierConfig {
                epsilon: *schedule.last().unwrap_or(&f64::NAN),
                schedule: schedule.clone(),
            };
            v.extend(m.violations().into_iter().map(|m| format!("run: eps_schedule: {m}")));
            if schedule.len() < 3 {
                v.push("run: eps_schedule needs at least three entries".into());
            }
        }
        if run.checkpoint_every == 0 {
            v.push("run: checkpoint_every must be positive".into());
        }
        if self.simulate.method == SimulationMethod::Cholesky && run.n > crate::gaussian::CHOLESKY_MAX_NODES {
            v.push(format!(
                "simulate: cholesky is limited to {} nodes",
                crate::gaussian::CHOLESKY_MAX_NODES
            ));
        }
        let rep = &self.representation;
        if rep.sizes.is_empty() || rep.sizes.iter().any(|&n| n < 2) {
            v.push("representation: sizes must be non-empty with every N >= 2".into());
        }
        if rep.batch_size == 0 {
            v.push("representation: batch_size must be positive".into());
        }
        if self.model.dim > 8 {
            v.push(format!("model: the representation engine supports dim <= 8, got {}", self.model.dim));
        }
        let b = &self.bounds;
        if b.r_fractions.iter().any(|&r| !(r > 0.0 && r < 1.0)) {
            v.push("bounds: r_fractions must lie in (0, 1)".into());
        }
        if b.simplex_exponents.iter().any(|&a| !(a < 1.0)) {
            v.push("bounds: simplex_exponents must be < 1".into());
        }
        if b.simplex_orders.iter().any(|&n| n == 0 || n > crate::bounds::MAX_SIMPLEX_ORDER) {
            v.push(format!(
                "bounds: simplex_orders must lie in 1..={}",
                crate::bounds::MAX_SIMPLEX_ORDER
            ));
        }
        if b.simplex_mc_samples < 2 {
            v.push("bounds: simplex_mc_samples must be at least 2".into());
        }
        if !(b.transfer_p > 0.0 && b.transfer_p <= 1.0) {
            v.push(format!("bounds: transfer_p must lie in (0, 1], got {}", b.transfer_p));
        }
        if b.transfer_n < 2 || b.transfer_paths < 10 {
            v.push("bounds: transfer_n must be >= 2 and transfer_paths >= 10".into());
        }
        if self.lnd.nodes < 64 {
            v.push(format!("lnd: nodes must be at least 64, got {}", self.lnd.nodes));
        }
        if self.moments.samples < 2 {
            v.push("moments: samples must be at least 2".into());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_through_toml() {
        let mut cfg = ExperimentConfig::default();
        cfg.run.eps_schedule = Some(vec![0.4, 0.2, 0.1]);
        cfg.run.output_dir = Some("out".into());
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn fingerprint_ignores_section_order_and_output_location() {
        let a = ExperimentConfig::from_toml("[model]\nhurst = 0.4\ndim = 3\n[run]\nseed = 9\nn = 64\n").unwrap();
        let b = ExperimentConfig::from_toml("[run]\nn = 64\nseed = 9\noutput_dir = \"x\"\n[model]\ndim = 3\nhurst = 0.4\n")
            .unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = ExperimentConfig::from_toml("[model]\nhurst = 0.4\ndim = 3\n[run]\nseed = 10\nn = 64\n").unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn validation_lists_every_violation() {
        let cfg = ExperimentConfig::from_toml("[model]\nhurst = 1.5\ndim = 0\n[run]\nn = 1\neps = -1.0\n").unwrap();
        let v = cfg.violations();
        assert!(v.len() >= 4, "{v:?}");
        assert!(matches!(cfg.validate(), Err(Error::Validation(_))));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml("[model]\nhurts = 0.3\n").is_err());
    }
}

//! Run configuration, read from TOML.
//!
//! ```toml
//! [cohort]          # synthetic generator, see CohortConfig
//! n_patients = 200
//! seed = 0
//!
//! [split]           # patient-level fractions and shuffling seed
//! train = 0.6
//! val = 0.2
//! test = 0.2
//! seed = 0
//!
//! [train]           # see TrainConfig
//! batch_size = 64
//!
//! [sweep]
//! n_labeled = [5, 7, 12, 18, 41, 59, 120]
//! arms = ["chrono-dae", "scratch"]
//! repetitions = 5
//!
//! [eval]
//! bootstrap_resamples = 2000
//! cluster_by_patient = true
//! ```
//!
//! Every table and key is optional; missing values take their defaults.
//! Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthetic::CohortConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
            seed: 0,
        }
    }
}

impl SplitConfig {
    pub fn fractions(&self) -> (f64, f64, f64) {
        (self.train, self.val, self.test)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub n_labeled: Vec<usize>,
    pub arms: Vec<String>,
    pub repetitions: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n_labeled: vec![5, 7, 12, 18, 41, 59, 120],
            arms: vec!["chrono-dae".into(), "scratch".into()],
            repetitions: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub bootstrap_resamples: usize,
    pub cluster_by_patient: bool,
    pub max_missing_fraction: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            bootstrap_resamples: 2000,
            cluster_by_patient: true,
            max_missing_fraction: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub cohort: CohortConfig,
    pub split: SplitConfig,
    pub train: TrainConfig,
    pub sweep: SweepConfig,
    pub eval: EvalConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            cohort: CohortConfig::default(),
            split: SplitConfig::default(),
            train: TrainConfig::desk_scale(),
            sweep: SweepConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.cohort.validate()?;
        self.train.validate()?;
        let (a, b, c) = self.split.fractions();
        if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) || (a + b + c - 1.0).abs() > 1e-9 {
            return Err(Error::Config("split fractions must be in [0, 1] and sum to 1".into()));
        }
        if self.sweep.repetitions == 0 {
            return Err(Error::Config("sweep repetitions must be at least 1".into()));
        }
        if self.sweep.n_labeled.contains(&0) {
            return Err(Error::Config("labeled-patient counts must be positive".into()));
        }
        if self.eval.bootstrap_resamples < 100 {
            return Err(Error::Config("bootstrap_resamples must be at least 100".into()));
        }
        Ok(())
    }

    /// Maximum label per score type, as used when reading cohort files.
    pub fn score_max(&self) -> BTreeMap<String, u32> {
        self.cohort
            .score_types
            .iter()
            .map(|s| (s.clone(), self.cohort.label_max))
            .collect()
    }
}

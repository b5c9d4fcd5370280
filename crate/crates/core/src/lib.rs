//! Chronological contrastive learning for longitudinal ordinal scoring.
//!
//! Samples of the same group (patient and region of interest) are ranked by
//! visit order: a later visit must look less similar to an anchor than an
//! earlier one. No severity labels are needed for this stage; a small
//! multi-head regressor is fine-tuned afterwards on whatever labels exist.
//!
//! Module map:
//! - [`cohort`]: samples, cohorts, splits, CSV format
//! - [`synthetic`]: longitudinal cohort simulator
//! - [`pairing`]: anchor/positive/negative sets for each loss variant
//! - [`losses`]: loss values and analytic gradients
//! - [`nn`], [`model`], [`training`]: encoder, heads, two-stage training
//! - [`metrics`]: agreement statistics, bootstrap, paired t-test
//! - [`analysis`]: PCA, embedding similarity analysis, sweeps, reports

pub mod analysis;
pub mod cohort;
pub mod config;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pairing;
pub mod rng;
pub mod synthetic;
pub mod training;

pub use cohort::{Cohort, Sample, ScoreType, Split};
pub use error::{Error, Result};
pub use losses::{LossOutput, Similarity, SimilarityKind};
pub use pairing::{Direction, PairTerm, PairingPlan};

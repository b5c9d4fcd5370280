//! Two-stage training: contrastive (optionally denoising) pretraining of the
//! encoder without labels, then multi-head regression fine-tuning.

mod augment;
mod batches;
mod finetune;
mod pretrain;

use serde::{Deserialize, Serialize};

pub use augment::augment_two_views;
pub use batches::{build_batches, group_weights};
pub use finetune::{finetune, predict_scores, train_scratch, FinetuneOutput, Prediction};
pub use pretrain::{init_encoder, pretrain, PretrainOutput};

use crate::error::{Error, Result};
use crate::losses::Similarity;
use crate::nn::Activation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossVariant {
    Chrono,
    RncLabel,
    RncTime,
    OrdinalY,
    Simclr,
    DaeOnly,
}

impl LossVariant {
    pub const ALL: [LossVariant; 6] = [
        LossVariant::Chrono,
        LossVariant::RncLabel,
        LossVariant::RncTime,
        LossVariant::OrdinalY,
        LossVariant::Simclr,
        LossVariant::DaeOnly,
    ];

    pub fn needs_labels(self) -> bool {
        matches!(self, LossVariant::RncLabel | LossVariant::OrdinalY)
    }

    pub fn is_contrastive(self) -> bool {
        self != LossVariant::DaeOnly
    }

    /// Command-line spelling.
    pub fn as_str(self) -> &'static str {
        match self {
            LossVariant::Chrono => "chrono",
            LossVariant::RncLabel => "rnc",
            LossVariant::RncTime => "rnc-t",
            LossVariant::OrdinalY => "ordinal-y",
            LossVariant::Simclr => "simclr",
            LossVariant::DaeOnly => "dae",
        }
    }
}

impl std::str::FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown loss variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Encoder learning rate at `lr_reference_batch`; scaled linearly with
    /// the actual batch size.
    pub encoder_lr: f64,
    pub head_lr: f64,
    pub lr_reference_batch: usize,
    pub weight_decay: f64,
    pub stage2_encoder_lr_factor: f64,
    pub dae_weight: f64,
    pub dae_noise: f64,
    pub early_stop_patience: usize,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub pretrain_epochs: usize,
    pub max_epochs: usize,
    /// Lower bound on optimizer steps per epoch, for small labeled sets.
    pub min_batches_per_epoch: usize,
    pub augment_noise: f64,
    pub augment_dropout: f64,
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub activation: Activation,
    pub head_hidden: Vec<usize>,
    pub similarity: Similarity,
    pub simclr_similarity: Similarity,
    pub projector_dim: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            encoder_lr: 4e-4,
            head_lr: 4e-5,
            lr_reference_batch: 512,
            weight_decay: 1e-6,
            stage2_encoder_lr_factor: 0.1,
            dae_weight: 1e3,
            dae_noise: 1e-5,
            early_stop_patience: 10,
            plateau_patience: 5,
            plateau_factor: 0.5,
            pretrain_epochs: 50,
            max_epochs: 200,
            min_batches_per_epoch: 1,
            augment_noise: 0.002,
            augment_dropout: 0.1,
            hidden: vec![64, 64],
            embed_dim: 16,
            activation: Activation::Relu,
            head_hidden: vec![128, 128],
            similarity: Similarity::default(),
            simclr_similarity: Similarity::cosine(),
            projector_dim: 128,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Settings for the synthetic desk-scale cohort: few thousand samples and
    /// minutes of CPU time instead of GPU-days.
    pub fn desk_scale() -> Self {
        Self {
            encoder_lr: 8e-2,
            head_lr: 8e-2,
            stage2_encoder_lr_factor: 1.0,
            pretrain_epochs: 150,
            max_epochs: 150,
            min_batches_per_epoch: 8,
            head_hidden: vec![32, 32],
            ..Self::default()
        }
    }

    fn lr_scale(&self) -> f64 {
        self.batch_size as f64 / self.lr_reference_batch as f64
    }

    pub fn effective_encoder_lr(&self) -> f64 {
        self.encoder_lr * self.lr_scale()
    }

    pub fn effective_head_lr(&self) -> f64 {
        self.head_lr * self.lr_scale()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 || self.lr_reference_batch == 0 {
            return bad("batch sizes must be positive");
        }
        if !(self.encoder_lr > 0.0 && self.head_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.early_stop_patience == 0 || self.plateau_patience == 0 {
            return bad("patience must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.augment_dropout) {
            return bad("augment_dropout must be in [0, 1]");
        }
        if self.stage2_encoder_lr_factor < 0.0 {
            return bad("stage2_encoder_lr_factor must be nonnegative");
        }
        if self.embed_dim == 0 {
            return bad("embed_dim must be positive");
        }
        Similarity::new(self.similarity.kind, self.similarity.temperature)?;
        Similarity::new(self.simclr_similarity.kind, self.simclr_similarity.temperature)?;
        Ok(())
    }
}

/// One row of a training curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Validation MAE for fine-tuning; NaN during pretraining.
    pub val_mae: f64,
    pub lr: f64,
}

pub fn write_curve<W: std::io::Write>(curve: &[EpochRecord], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let csv_err = |e: csv::Error| Error::Other(format!("csv write: {e}"));
    w.write_record(["epoch", "train_loss", "val_loss", "val_mae", "lr"])
        .map_err(csv_err)?;
    for r in curve {
        w.write_record([
            r.epoch.to_string(),
            crate::cohort::fmt_real(r.train_loss),
            crate::cohort::fmt_real(r.val_loss),
            crate::cohort::fmt_real(r.val_mae),
            crate::cohort::fmt_real(r.lr),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Other(format!("csv flush: {e}")))?;
    Ok(())
}

/// Halves (by `factor`) the learning rate when the monitored value has not
/// improved by a relative 1e-4 for `patience` epochs.
#[derive(Debug, Clone)]
pub(crate) struct PlateauScheduler {
    best: f64,
    stale: usize,
    patience: usize,
    factor: f64,
}

impl PlateauScheduler {
    pub(crate) fn new(patience: usize, factor: f64) -> Self {
        Self {
            best: f64::INFINITY,
            stale: 0,
            patience,
            factor,
        }
    }

    /// Returns the multiplier to apply to the learning rate (1 or `factor`).
    pub(crate) fn observe(&mut self, value: f64) -> f64 {
        if value < self.best * (1.0 - 1e-4) || self.best == f64::INFINITY {
            self.best = value;
            self.stale = 0;
            1.0
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                self.stale = 0;
                self.factor
            } else {
                1.0
            }
        }
    }
}

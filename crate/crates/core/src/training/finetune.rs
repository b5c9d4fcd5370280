//! Stage 2: supervised multi-head regression on top of the encoder.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::batches::build_batches;
use super::pretrain::init_encoder;
use super::{EpochRecord, PlateauScheduler, TrainConfig};
use crate::cohort::{Cohort, Sample, Split};
use crate::error::{Error, Result};
use crate::model::{EncoderSpec, RegressorSpec};
use crate::nn::{AdamW, AdamWConfig};
use crate::rng::{rng_for, tag};

#[derive(Debug, Clone)]
pub struct FinetuneOutput {
    pub encoder: EncoderSpec,
    pub regressor: RegressorSpec,
    pub curve: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sample_id: u64,
    pub score_name: String,
    pub value: f64,
}

fn features(samples: &[&Sample], dim: usize) -> Result<Array2<f64>> {
    if let Some(s) = samples.iter().find(|s| s.features.len() != dim) {
        return Err(Error::Shape(format!(
            "sample {} has {} features, the encoder expects {dim}",
            s.sample_id,
            s.features.len()
        )));
    }
    Ok(Array2::from_shape_fn((samples.len(), dim), |(i, j)| samples[i].features[j]))
}

/// Squared error over present labels only, its gradient, and absolute error.
fn masked_errors(pred: &Array2<f64>, samples: &[&Sample]) -> (f64, f64, usize, Array2<f64>) {
    let mut grad = Array2::zeros(pred.raw_dim());
    let (mut sq, mut abs, mut n) = (0.0, 0.0, 0usize);
    for (i, s) in samples.iter().enumerate() {
        for (k, y) in s.labels.iter().enumerate() {
            if let Some(y) = y {
                let d = pred[[i, k]] - *y as f64;
                sq += d * d;
                abs += d.abs();
                grad[[i, k]] = 2.0 * d;
                n += 1;
            }
        }
    }
    if n > 0 {
        grad.mapv_inplace(|g| g / n as f64);
    }
    (sq, abs, n, grad)
}

fn evaluate(encoder: &EncoderSpec, regressor: &RegressorSpec, samples: &[&Sample]) -> Result<(f64, f64)> {
    let x = features(samples, encoder.input_dim())?;
    let pred = regressor.predict(encoder.embed(x.view()).view());
    let (sq, abs, n, _) = masked_errors(&pred, samples);
    let n = n.max(1) as f64;
    Ok((sq / n, abs / n))
}

/// Fits one regression head per score type on the labeled training samples,
/// updating the encoder at `encoder_lr_factor` times the encoder rate
/// (0 freezes it). Stops after `early_stop_patience` epochs without a new
/// best validation MAE and returns the best parameters.
pub fn finetune(
    encoder: &EncoderSpec,
    cohort: &Cohort,
    config: &TrainConfig,
    encoder_lr_factor: f64,
) -> Result<FinetuneOutput> {
    config.validate()?;
    let train: Vec<Sample> = cohort
        .samples_in(Split::Train)
        .filter(|s| s.has_any_label())
        .cloned()
        .collect();
    if train.is_empty() {
        return Err(Error::Degenerate("no labeled training samples".into()));
    }
    let val: Vec<&Sample> = cohort
        .samples_in(Split::Val)
        .filter(|s| s.has_any_label())
        .collect();
    let train_refs: Vec<&Sample> = train.iter().collect();
    let monitor: &[&Sample] = if val.is_empty() { &train_refs } else { &val };

    let names: Vec<String> = cohort.score_types.iter().map(|s| s.name.clone()).collect();
    let mut rng = rng_for(config.seed, &[tag("regressor-init")]);
    let mut encoder = encoder.clone();
    let mut regressor = RegressorSpec::new(
        &names,
        encoder.embed_dim(),
        &config.head_hidden,
        config.activation,
        &mut rng,
    );

    let adam = AdamWConfig {
        weight_decay: config.weight_decay,
        ..AdamWConfig::default()
    };
    let train_encoder = encoder_lr_factor > 0.0;
    let mut opt_enc = AdamW::new(
        encoder.net.params().len(),
        config.effective_encoder_lr() * encoder_lr_factor,
        adam,
    );
    let mut head_params = regressor.flat_params();
    let mut opt_head = AdamW::new(head_params.len(), config.effective_head_lr(), adam);
    let mut scheduler = PlateauScheduler::new(config.plateau_patience, config.plateau_factor);

    let mut best = (f64::INFINITY, 0usize, encoder.clone(), regressor.clone());
    let mut curve = Vec::new();
    for epoch in 0..config.max_epochs {
        let batches = build_batches(
            &train,
            config.batch_size,
            true,
            config.min_batches_per_epoch,
            config.seed,
            epoch as u64,
        );
        let mut sum = 0.0;
        for (step, idx) in batches.iter().enumerate() {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &train[i]).collect();
            let x = features(&batch, encoder.input_dim())?;
            let (emb, enc_cache) = encoder.forward_cached(x.view());
            let (pred, caches) = regressor.forward_cached(emb.view());
            let (sq, _, n, d_pred) = masked_errors(&pred, &batch);
            let loss = sq / n.max(1) as f64;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    detail: format!("regression mse={loss} head_lr={:.3e}", opt_head.lr),
                });
            }
            let (g_head, d_emb) = regressor.backward(&caches, d_pred.view());
            if train_encoder {
                let g_enc = encoder.backward(&enc_cache, d_emb.view());
                opt_enc.step(encoder.net.params_mut(), &g_enc);
            }
            opt_head.step(&mut head_params, &g_head);
            regressor.set_flat_params(&head_params);
            sum += loss;
        }
        let (val_mse, val_mae) = evaluate(&encoder, &regressor, monitor)?;
        curve.push(EpochRecord {
            epoch,
            train_loss: sum / batches.len().max(1) as f64,
            val_loss: val_mse,
            val_mae,
            lr: opt_head.lr,
        });
        if val_mae < best.0 {
            best = (val_mae, epoch, encoder.clone(), regressor.clone());
        }
        let f = scheduler.observe(val_mse);
        opt_enc.lr *= f;
        opt_head.lr *= f;
        log::debug!("finetune epoch {epoch}: val mae {val_mae:.5}");
        if epoch - best.1 >= config.early_stop_patience {
            break;
        }
    }
    let (best_val_mae, best_epoch, encoder, regressor) = if curve.is_empty() {
        let (_, mae) = evaluate(&encoder, &regressor, monitor)?;
        (mae, 0, encoder, regressor)
    } else {
        best
    };
    Ok(FinetuneOutput {
        encoder,
        regressor,
        curve,
        best_epoch,
        best_val_mae,
    })
}

/// Single-stage baseline: a freshly initialized encoder trained together
/// with the heads at the full encoder rate.
pub fn train_scratch(cohort: &Cohort, config: &TrainConfig) -> Result<FinetuneOutput> {
    let encoder = init_encoder(cohort, config)?;
    finetune(&encoder, cohort, config, 1.0)
}

/// Unclipped per-head predictions for every sample, in sample order and then
/// score order.
pub fn predict_scores(
    encoder: &EncoderSpec,
    regressor: &RegressorSpec,
    samples: &[Sample],
) -> Result<Vec<Prediction>> {
    if regressor.heads.iter().any(|h| h.input_dim() != encoder.embed_dim()) {
        return Err(Error::Shape("regressor input does not match encoder output".into()));
    }
    let refs: Vec<&Sample> = samples.iter().collect();
    let x = features(&refs, encoder.input_dim())?;
    let pred = regressor.predict(encoder.embed(x.view()).view());
    let mut out = Vec::with_capacity(samples.len() * regressor.heads.len());
    for (i, s) in samples.iter().enumerate() {
        for (k, name) in regressor.score_names.iter().enumerate() {
            out.push(Prediction {
                sample_id: s.sample_id,
                score_name: name.clone(),
                value: pred[[i, k]],
            });
        }
    }
    Ok(out)
}

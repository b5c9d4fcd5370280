//! Stage 1: label-free (or label-ranked) representation learning.

use ndarray::{Array2, ArrayView2, Axis};
use rand_distr::{Distribution, Normal};

use super::augment::augment_two_views;
use super::batches::build_batches;
use super::{EpochRecord, LossVariant, PlateauScheduler, TrainConfig};
use crate::cohort::{Cohort, Sample, Split};
use crate::error::{Error, Result};
use crate::losses::{self, LossOutput};
use crate::model::EncoderSpec;
use crate::nn::{Activation, AdamW, AdamWConfig, Mlp};
use crate::pairing;
use crate::rng::{rng_for, tag, Rng};

#[derive(Debug, Clone)]
pub struct PretrainOutput {
    pub encoder: EncoderSpec,
    pub decoder: Option<Mlp>,
    pub curve: Vec<EpochRecord>,
}

/// Randomly initialized encoder with input standardization fitted on the
/// training split.
pub fn init_encoder(cohort: &Cohort, config: &TrainConfig) -> Result<EncoderSpec> {
    let dim = cohort
        .feature_dim()
        .ok_or_else(|| Error::Degenerate("cohort has no samples".into()))?;
    let mut rng = rng_for(config.seed, &[tag("encoder-init")]);
    let mut enc = EncoderSpec::new(dim, &config.hidden, config.embed_dim, config.activation, &mut rng);
    let train: Vec<&Sample> = cohort.samples_in(Split::Train).collect();
    if train.is_empty() {
        return Err(Error::Degenerate("cohort has no training samples".into()));
    }
    enc.fit_normalization(features(&train).view());
    Ok(enc)
}

fn features(samples: &[&Sample]) -> Array2<f64> {
    let d = samples.first().map_or(0, |s| s.features.len());
    Array2::from_shape_fn((samples.len(), d), |(i, j)| samples[i].features[j])
}

struct Nets {
    encoder: EncoderSpec,
    decoder: Option<Mlp>,
    projector: Option<Mlp>,
}

struct StepResult {
    total: f64,
    contrastive: f64,
    dae: f64,
    g_enc: Vec<f64>,
    g_dec: Option<Vec<f64>>,
    g_proj: Option<Vec<f64>>,
}

fn label_plan_loss(
    elems: &[Sample],
    emb: ArrayView2<f64>,
    variant: LossVariant,
    config: &TrainConfig,
    n_scores: usize,
) -> Result<LossOutput> {
    let mut grad = Array2::zeros(emb.raw_dim());
    let mut value = 0.0;
    let mut used = 0usize;
    let mut term_values = Vec::new();
    for k in 0..n_scores {
        let idx: Vec<usize> = (0..elems.len())
            .filter(|&i| elems[i].labels.get(k).copied().flatten().is_some())
            .collect();
        if idx.len() < 2 {
            continue;
        }
        let sub: Vec<Sample> = idx.iter().map(|&i| elems[i].clone()).collect();
        let sub_emb = emb.select(Axis(0), &idx);
        let out = if variant == LossVariant::RncLabel {
            let plan = pairing::rnc_label_pairs(&sub, k)?;
            losses::rnc_loss(&plan, sub_emb.view(), config.similarity)?
        } else {
            let plan = pairing::ordinal_label_pairs(&sub, k)?;
            losses::ordinal_loss(&plan, sub_emb.view(), config.similarity)?
        };
        for (r, &i) in idx.iter().enumerate() {
            let mut row = grad.row_mut(i);
            row += &out.grad.row(r);
        }
        value += out.value;
        term_values.extend(out.term_values);
        used += 1;
    }
    if used > 1 {
        let u = used as f64;
        value /= u;
        grad.mapv_inplace(|g| g / u);
    }
    Ok(LossOutput {
        value,
        grad,
        term_values,
    })
}

fn objective(
    nets: &Nets,
    variant: LossVariant,
    config: &TrainConfig,
    n_scores: usize,
    elems: &[Sample],
    dae_noise: &mut Option<(Normal<f64>, Rng)>,
) -> Result<StepResult> {
    let refs: Vec<&Sample> = elems.iter().collect();
    let clean = features(&refs);
    let mut input = clean.clone();
    if let Some((normal, rng)) = dae_noise.as_mut() {
        input.mapv_inplace(|v| (v + normal.sample(rng)).clamp(0.0, 1.0));
    }
    let (emb, enc_cache) = nets.encoder.forward_cached(input.view());
    let mut d_emb = Array2::zeros(emb.raw_dim());
    let mut contrastive = 0.0;
    let mut g_proj = None;

    if variant.is_contrastive() {
        let out = match variant {
            LossVariant::Chrono => {
                let plan = pairing::chrono_pairs(elems);
                losses::chronocon_loss(&plan, emb.view(), config.similarity)?
            }
            LossVariant::RncTime => {
                let plan = pairing::rnc_time_pairs(elems);
                losses::rnc_time_loss(&plan, emb.view(), config.similarity)?
            }
            LossVariant::RncLabel | LossVariant::OrdinalY => {
                label_plan_loss(elems, emb.view(), variant, config, n_scores)?
            }
            LossVariant::Simclr => {
                let proj = nets.projector.as_ref().expect("projector for instance variant");
                let (z, cache) = proj.forward_cached(emb.view());
                let plan = pairing::simclr_pairs(elems)?;
                let out = losses::simclr_loss(&plan, z.view(), config.simclr_similarity)?;
                let (g, dz) = proj.backward(&cache, out.grad.view());
                g_proj = Some(g);
                LossOutput { grad: dz, ..out }
            }
            LossVariant::DaeOnly => unreachable!(),
        };
        contrastive = out.value;
        d_emb += &out.grad;
    }

    let mut dae = 0.0;
    let mut g_dec = None;
    if let Some(dec) = &nets.decoder {
        let (recon, cache) = dec.forward_cached(emb.view());
        let (value, d_recon) = losses::dae_loss(clean.view(), recon.view())?;
        let (g, dx) = dec.backward(&cache, d_recon.view());
        dae = value;
        g_dec = Some(g.into_iter().map(|v| v * config.dae_weight).collect());
        d_emb.scaled_add(config.dae_weight, &dx);
    }

    let g_enc = nets.encoder.backward(&enc_cache, d_emb.view());
    Ok(StepResult {
        total: contrastive + config.dae_weight * dae,
        contrastive,
        dae,
        g_enc,
        g_dec,
        g_proj,
    })
}

fn expand(batch: &[&Sample], variant: LossVariant, config: &TrainConfig, rng: &mut Rng) -> Vec<Sample> {
    if variant.is_contrastive() {
        let (mut first, mut second) = (Vec::with_capacity(batch.len()), Vec::with_capacity(batch.len()));
        for s in batch {
            let (a, b) = augment_two_views(s, config.augment_noise, config.augment_dropout, rng);
            first.push(a);
            second.push(b);
        }
        first.extend(second);
        first
    } else {
        batch
            .iter()
            .map(|s| augment_two_views(s, config.augment_noise, config.augment_dropout, rng).0)
            .collect()
    }
}

fn param_norm(p: &[f64]) -> f64 {
    p.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Trains an encoder with the chosen objective, optionally adding the
/// weighted denoising reconstruction term. Label-ranked variants see only
/// labeled training samples; every other variant ignores labels.
pub fn pretrain(
    cohort: &Cohort,
    variant: LossVariant,
    use_dae: bool,
    config: &TrainConfig,
) -> Result<PretrainOutput> {
    config.validate()?;
    let encoder = init_encoder(cohort, config)?;
    let with_dae = use_dae || variant == LossVariant::DaeOnly;
    let keep = |s: &&Sample| !variant.needs_labels() || s.has_any_label();
    let train: Vec<&Sample> = cohort.samples_in(Split::Train).filter(keep).collect();
    let val: Vec<&Sample> = cohort.samples_in(Split::Val).filter(keep).collect();
    if train.is_empty() {
        return Err(Error::Degenerate(format!(
            "no training samples usable by the `{}` objective",
            variant.as_str()
        )));
    }
    let train_owned: Vec<Sample> = train.iter().map(|&s| s.clone()).collect();
    let val_owned: Vec<Sample> = val.iter().map(|&s| s.clone()).collect();
    let n_scores = cohort.score_types.len();

    let mut init_rng = rng_for(config.seed, &[tag("pretrain-heads")]);
    let embed = config.embed_dim;
    let decoder = with_dae.then(|| {
        let mut dims: Vec<usize> = vec![embed];
        dims.extend(config.hidden.iter().rev());
        dims.push(encoder.input_dim());
        Mlp::new(&dims, config.activation, &mut init_rng)
    });
    let projector = (variant == LossVariant::Simclr).then(|| {
        Mlp::new(&[embed, embed, config.projector_dim], Activation::Tanh, &mut init_rng)
    });
    let mut nets = Nets {
        encoder,
        decoder,
        projector,
    };

    let adam = AdamWConfig {
        weight_decay: config.weight_decay,
        ..AdamWConfig::default()
    };
    let lr0 = config.effective_encoder_lr();
    let mut opt_enc = AdamW::new(nets.encoder.net.params().len(), lr0, adam);
    let mut opt_dec = nets.decoder.as_ref().map(|d| AdamW::new(d.params().len(), lr0, adam));
    let mut opt_proj = nets.projector.as_ref().map(|p| AdamW::new(p.params().len(), lr0, adam));
    let mut scheduler = PlateauScheduler::new(config.plateau_patience, config.plateau_factor);
    let dae_normal = Normal::new(0.0, config.dae_noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut curve = Vec::with_capacity(config.pretrain_epochs);

    for epoch in 0..config.pretrain_epochs {
        let batches = build_batches(
            &train_owned,
            config.batch_size,
            false,
            config.min_batches_per_epoch,
            config.seed,
            epoch as u64,
        );
        let mut sum = 0.0;
        for (step, idx) in batches.iter().enumerate() {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &train_owned[i]).collect();
            let mut rng = rng_for(config.seed, &[tag("augment"), epoch as u64, step as u64]);
            let elems = expand(&batch, variant, config, &mut rng);
            let mut noise = with_dae.then(|| {
                (dae_normal, rng_for(config.seed, &[tag("dae-noise"), epoch as u64, step as u64]))
            });
            let r = objective(&nets, variant, config, n_scores, &elems, &mut noise)?;
            let finite = r.total.is_finite()
                && r.g_enc.iter().all(|g| g.is_finite())
                && r.g_dec.iter().flatten().all(|g| g.is_finite());
            if !finite {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    detail: format!(
                        "contrastive={} reconstruction={} encoder_param_norm={:.6e} lr={:.3e} batch={}",
                        r.contrastive,
                        r.dae,
                        param_norm(nets.encoder.net.params()),
                        opt_enc.lr,
                        idx.len()
                    ),
                });
            }
            opt_enc.step(nets.encoder.net.params_mut(), &r.g_enc);
            if let (Some(d), Some(o), Some(g)) = (nets.decoder.as_mut(), opt_dec.as_mut(), &r.g_dec) {
                o.step(d.params_mut(), g);
            }
            if let (Some(p), Some(o), Some(g)) = (nets.projector.as_mut(), opt_proj.as_mut(), &r.g_proj) {
                o.step(p.params_mut(), g);
            }
            sum += r.total;
        }
        let train_loss = sum / batches.len().max(1) as f64;
        let val_loss = if val_owned.is_empty() {
            f64::NAN
        } else {
            validation_loss(&nets, variant, config, n_scores, &val_owned, with_dae, dae_normal)?
        };
        let lr = opt_enc.lr;
        curve.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_mae: f64::NAN,
            lr,
        });
        let monitored = if val_loss.is_finite() { val_loss } else { train_loss };
        let f = scheduler.observe(monitored);
        if f != 1.0 {
            log::info!("pretrain epoch {epoch}: plateau, learning rate {:.3e}", lr * f);
            opt_enc.lr *= f;
            for o in opt_dec.iter_mut().chain(opt_proj.iter_mut()) {
                o.lr *= f;
            }
        }
        log::debug!("pretrain epoch {epoch}: train {train_loss:.5} val {val_loss:.5}");
    }

    Ok(PretrainOutput {
        encoder: nets.encoder,
        decoder: nets.decoder,
        curve,
    })
}

fn validation_loss(
    nets: &Nets,
    variant: LossVariant,
    config: &TrainConfig,
    n_scores: usize,
    val: &[Sample],
    with_dae: bool,
    dae_normal: Normal<f64>,
) -> Result<f64> {
    let batches = build_batches(val, config.batch_size, false, 1, config.seed, u64::MAX);
    let mut sum = 0.0;
    for (step, idx) in batches.iter().enumerate() {
        let batch: Vec<&Sample> = idx.iter().map(|&i| &val[i]).collect();
        let mut rng = rng_for(config.seed, &[tag("val-augment"), step as u64]);
        let elems = expand(&batch, variant, config, &mut rng);
        let mut noise =
            with_dae.then(|| (dae_normal, rng_for(config.seed, &[tag("val-dae-noise"), step as u64])));
        sum += objective(nets, variant, config, n_scores, &elems, &mut noise)?.total;
    }
    Ok(sum / batches.len().max(1) as f64)
}

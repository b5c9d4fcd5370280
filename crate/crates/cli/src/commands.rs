use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use chronocon::analysis::{self as an, EmbeddingAnalysis};
use chronocon::analysis::{emit_report, write_embedding_analysis};
use chronocon::analysis::{eval_options, read_sweep_table};
use chronocon::analysis::{
    join_entries, prediction_entries, read_entries, truth_entries, write_entries, TableEntry,
};
use chronocon::cohort::{load_cohort, read_cohort, subsample_labeled_patients, write_cohort, Cohort, Sample};
use chronocon::model::ModelBundle;
use chronocon::{losses, pairing};
use chronocon::synthetic::{self, write_truth};
use chronocon::training::{self, write_curve, LossVariant};

use crate::args::{LossCommand, OnOff, PairingCommand, PairingVariant, SplitArg};
use crate::context::{write_json, write_with, Context};
use crate::CliResult;

pub fn generate(ctx: &Context, out: &Option<PathBuf>, truth: &Option<PathBuf>) -> CliResult<()> {
    let (cohort, trajectories) = synthetic::generate(&ctx.config.cohort)?;
    let out = ctx.output(out, "cohort.csv");
    let truth = ctx.output(truth, "truth.csv");
    write_with(&out, |buf| write_cohort(&cohort, buf))?;
    write_with(&truth, |buf| write_truth(&trajectories, buf))?;
    log::info!(
        "wrote {} samples to {} and trajectories to {}",
        cohort.samples.len(),
        out.display(),
        truth.display()
    );
    Ok(())
}

fn meta(pairs: &[(&str, String)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

pub fn pretrain(ctx: &Context, loss: LossVariant, dae: OnOff, out: &Option<PathBuf>) -> CliResult<()> {
    let cohort = ctx.cohort()?;
    let use_dae = dae == OnOff::On || loss == LossVariant::DaeOnly;
    let result = training::pretrain(&cohort, loss, use_dae, &ctx.config.train)?;
    let out = ctx.output(out, "pretrained.bin");
    let bundle = ModelBundle {
        encoder: result.encoder,
        decoder: result.decoder,
        regressor: None,
        meta: meta(&[
            ("stage", "pretrain".into()),
            ("loss", loss.as_str().into()),
            ("dae", use_dae.to_string()),
            ("seed", ctx.config.train.seed.to_string()),
        ]),
    };
    write_with(&out, |buf| {
        buf.extend(bundle.to_bytes());
        Ok(())
    })?;
    write_with(&ctx.out_dir.join("pretrain_curve.csv"), |buf| write_curve(&result.curve, buf))?;
    log::info!("wrote {}", out.display());
    Ok(())
}

pub fn finetune(
    ctx: &Context,
    model: &Option<PathBuf>,
    labeled_patients: Option<usize>,
    out: &Option<PathBuf>,
) -> CliResult<()> {
    let cohort = ctx.cohort()?;
    let tc = &ctx.config.train;
    let masked = match labeled_patients {
        Some(n) => subsample_labeled_patients(&cohort, n as i64, tc.seed)?,
        None => cohort,
    };
    let (fitted, origin) = match model {
        Some(path) => {
            let bundle = ModelBundle::load(path)?;
            let fitted = training::finetune(&bundle.encoder, &masked, tc, tc.stage2_encoder_lr_factor)?;
            let name = path.file_name().unwrap_or(path.as_os_str());
            (fitted, name.to_string_lossy().into_owned())
        }
        None => (training::train_scratch(&masked, tc)?, "scratch".to_string()),
    };
    let out = ctx.output(out, "finetuned.bin");
    let bundle = ModelBundle {
        encoder: fitted.encoder,
        decoder: None,
        regressor: Some(fitted.regressor),
        meta: meta(&[
            ("stage", "finetune".into()),
            ("init", origin),
            (
                "labeled_patients",
                labeled_patients.map_or_else(|| "all".into(), |n| n.to_string()),
            ),
            ("best_epoch", fitted.best_epoch.to_string()),
            ("seed", tc.seed.to_string()),
        ]),
    };
    write_with(&out, |buf| {
        buf.extend(bundle.to_bytes());
        Ok(())
    })?;
    write_with(&ctx.out_dir.join("finetune_curve.csv"), |buf| write_curve(&fitted.curve, buf))?;
    log::info!(
        "wrote {} (best epoch {}, val MAE {:.4})",
        out.display(),
        fitted.best_epoch,
        fitted.best_val_mae
    );
    Ok(())
}

fn select(cohort: &Cohort, split: SplitArg) -> Vec<Sample> {
    match split.split() {
        Some(s) => cohort.samples_in(s).cloned().collect(),
        None => cohort.samples.clone(),
    }
}

pub fn predict(
    ctx: &Context,
    model: &Path,
    split: SplitArg,
    out: &Option<PathBuf>,
    truth_out: &Option<PathBuf>,
) -> CliResult<()> {
    let cohort = ctx.cohort()?;
    let bundle = ModelBundle::load(model)?;
    let regressor = bundle
        .regressor
        .as_ref()
        .ok_or("model has no regression heads; run finetune first")?;
    let samples = select(&cohort, split);
    let preds = training::predict_scores(&bundle.encoder, regressor, &samples)?;
    let entries = prediction_entries(&cohort, &samples, &preds)?;
    let out = ctx.output(out, "predictions.csv");
    write_with(&out, |buf| write_entries(&entries, buf))?;
    if let Some(path) = truth_out {
        let truth = truth_entries(&cohort, &samples);
        write_with(path, |buf| write_entries(&truth, buf))?;
    }
    log::info!("wrote {} predictions to {}", entries.len(), out.display());
    Ok(())
}

/// Reads a score table, or derives one from a cohort CSV.
fn read_truth(ctx: &Context, path: &Path) -> CliResult<Vec<TableEntry>> {
    let mut text = String::new();
    fs::File::open(path)?.read_to_string(&mut text)?;
    if text.starts_with("patient,") {
        return Ok(read_entries(text.as_bytes())?);
    }
    let cohort = read_cohort(text.as_bytes(), &ctx.config.score_max(), ctx.config.cohort.label_max)?;
    Ok(truth_entries(&cohort, &cohort.samples))
}

fn read_pred(path: &Path) -> CliResult<Vec<TableEntry>> {
    Ok(read_entries(fs::File::open(path)?)?)
}

pub fn evaluate(
    ctx: &Context,
    pred: &Path,
    truth: &Path,
    pred_b: &Option<PathBuf>,
    out: &Option<PathBuf>,
) -> CliResult<()> {
    let truth = read_truth(ctx, truth)?;
    let table = join_entries(&read_pred(pred)?, &truth)?;
    let other = match pred_b {
        Some(p) => Some(join_entries(&read_pred(p)?, &truth)?),
        None => None,
    };
    let opts = eval_options(&ctx.config, ctx.config.train.seed);
    let report = chronocon::metrics::evaluate(&table, other.as_ref(), &opts)?;
    let out = ctx.output(out, "report.json");
    write_json(&out, &report)?;
    log::info!("wrote {}", out.display());
    Ok(())
}

fn score_index(cohort: &Cohort, score: &Option<String>) -> CliResult<usize> {
    match score {
        None if cohort.score_types.is_empty() => Err("cohort has no score types".into()),
        None => Ok(0),
        Some(name) => cohort
            .score_index(name)
            .ok_or_else(|| format!("unknown score type `{name}`").into()),
    }
}

pub fn analyze_embeddings(
    ctx: &Context,
    model: &Option<PathBuf>,
    score: &Option<String>,
    split: SplitArg,
    out: &Option<PathBuf>,
) -> CliResult<()> {
    let cohort = ctx.cohort()?;
    let encoder = match model {
        Some(p) => ModelBundle::load(p)?.encoder,
        None => training::init_encoder(&cohort, &ctx.config.train)?,
    };
    let k = score_index(&cohort, score)?;
    let samples = select(&cohort, split);
    let name = cohort.score_types[k].name.clone();
    let analysis = an::analyze_embeddings(&encoder, &samples, k, &name, ctx.config.train.similarity)?;
    write_embedding_analysis(Some(&analysis), &ctx.out_dir)?;
    let out = ctx.output(out, "embedding_analysis.json");
    write_json(&out, &analysis)?;
    log::info!("wrote {} and the fig4 tables", out.display());
    Ok(())
}

pub fn report(ctx: &Context, sweep: &Path, analysis: &Option<PathBuf>) -> CliResult<()> {
    let rows = read_sweep_table(fs::File::open(sweep)?)?;
    let analysis: Option<EmbeddingAnalysis> = match analysis {
        Some(p) => Some(serde_json::from_reader(fs::File::open(p)?)?),
        None => None,
    };
    emit_report(&rows, analysis.as_ref(), &ctx.out_dir, None)?;
    log::info!("wrote report for {} rows into {}", rows.len(), ctx.out_dir.display());
    Ok(())
}

fn plan_for(cohort: &Cohort, variant: PairingVariant, score: &Option<String>) -> CliResult<pairing::PairingPlan> {
    let samples = &cohort.samples;
    Ok(match variant {
        PairingVariant::Chrono => pairing::chrono_pairs(samples),
        PairingVariant::RncT => pairing::rnc_time_pairs(samples),
        PairingVariant::Simclr => pairing::simclr_pairs(samples)?,
        PairingVariant::OrdinalY => pairing::ordinal_label_pairs(samples, score_index(cohort, score)?)?,
        PairingVariant::Rnc => pairing::rnc_label_pairs(samples, score_index(cohort, score)?)?,
    })
}

pub fn pairing(ctx: &Context, command: &PairingCommand) -> CliResult<()> {
    let PairingCommand::Dump {
        batch,
        variant,
        score,
    } = command;
    let cohort = load_cohort(batch, &ctx.config.score_max(), ctx.config.cohort.label_max)?;
    let plan = plan_for(&cohort, *variant, score)?;
    println!("{}", serde_json::to_string_pretty(&plan)?);
    Ok(())
}

pub fn loss(ctx: &Context, command: &LossCommand) -> CliResult<()> {
    let LossCommand::Eval {
        batch,
        variant,
        score,
    } = command;
    let cohort = load_cohort(batch, &ctx.config.score_max(), ctx.config.cohort.label_max)?;
    let plan = plan_for(&cohort, *variant, score)?;
    let dim = cohort.feature_dim().ok_or("batch is empty")?;
    let flat: Vec<f64> = cohort.samples.iter().flat_map(|s| s.features.iter().copied()).collect();
    let emb = ndarray::Array2::from_shape_vec((cohort.samples.len(), dim), flat)?;
    let tc = &ctx.config.train;
    let out = match variant {
        PairingVariant::Chrono => losses::chronocon_loss(&plan, emb.view(), tc.similarity)?,
        PairingVariant::OrdinalY => losses::ordinal_loss(&plan, emb.view(), tc.similarity)?,
        PairingVariant::Rnc => losses::rnc_loss(&plan, emb.view(), tc.similarity)?,
        PairingVariant::RncT => losses::rnc_time_loss(&plan, emb.view(), tc.similarity)?,
        PairingVariant::Simclr => losses::simclr_loss(&plan, emb.view(), tc.simclr_similarity)?,
    };
    let grad: Vec<Vec<f64>> = out.grad.rows().into_iter().map(|r| r.to_vec()).collect();
    let json = serde_json::json!({
        "value": out.value,
        "term_values": out.term_values,
        "grad": grad,
    });
    println!("{}", serde_json::to_string_pretty(&json)?);
    Ok(())
}

pub fn show_config(ctx: &Context) -> CliResult<()> {
    print!("{}", ctx.config.to_toml());
    Ok(())
}

//! Browser demo. Three operations, each taking and returning a JSON string:
//!
//! - `simulate`: latent severity trajectories and labels of a small cohort
//! - `pairs`: pairing plan, loss and gradient for hand-placed 2-D points
//! - `pretrain`: embedding PCA and similarity medians before and after
//!   pretraining on a noiseless cohort
//!
//! Failures come back as `{"error": "..."}`.

use std::collections::BTreeMap;

use chronocon::analysis::{analyze_embeddings, first_visit_rank_correlation, EmbeddingAnalysis};
use chronocon::cohort::{split_patients, Sample};
use chronocon::losses::{chronocon_loss, rnc_time_loss, Similarity};
use chronocon::model::EncoderSpec;
use chronocon::pairing::{chrono_pairs, rnc_time_pairs};
use chronocon::synthetic::{generate, CohortConfig};
use chronocon::training::{init_encoder, pretrain as pretrain_encoder, LossVariant, TrainConfig};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::json;
use wasm_bindgen::prelude::wasm_bindgen;

type DemoResult<T> = Result<T, String>;

fn respond<T: Serialize>(r: DemoResult<T>) -> String {
    match r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string())) {
        Ok(s) => s,
        Err(e) => json!({ "error": e }).to_string(),
    }
}

fn parse<'a, T: Deserialize<'a>>(request: &'a str) -> DemoResult<T> {
    serde_json::from_str(request).map_err(|e| format!("bad request: {e}"))
}

#[derive(Debug, Deserialize)]
#[serde(default)]
pub struct SimulateRequest {
    pub n_patients: usize,
    pub seed: u64,
    pub jump_rate: f64,
    pub noise_sigma: f64,
    pub reader_noise_prob: f64,
}

impl Default for SimulateRequest {
    fn default() -> Self {
        let c = CohortConfig::default();
        Self {
            n_patients: 6,
            seed: 0,
            jump_rate: c.jump_rate,
            noise_sigma: c.noise_sigma,
            reader_noise_prob: c.reader_noise_prob,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct GroupTrace {
    pub group_id: String,
    pub times: Vec<f64>,
    pub severity: Vec<f64>,
    pub labels: Vec<Option<u32>>,
}

pub fn simulate_impl(req: &SimulateRequest) -> DemoResult<Vec<GroupTrace>> {
    if !(1..=40).contains(&req.n_patients) {
        return Err("n_patients must be between 1 and 40".into());
    }
    let config = CohortConfig {
        n_patients: req.n_patients,
        seed: req.seed,
        jump_rate: req.jump_rate,
        noise_sigma: req.noise_sigma,
        reader_noise_prob: req.reader_noise_prob,
        ..CohortConfig::default()
    };
    let (cohort, trajectories) = generate(&config).map_err(|e| e.to_string())?;
    let mut labels: BTreeMap<&str, Vec<Option<u32>>> = BTreeMap::new();
    for s in &cohort.samples {
        labels.entry(&s.group_id).or_default().push(s.labels[0]);
    }
    Ok(trajectories
        .values()
        .map(|t| GroupTrace {
            group_id: t.group_id.clone(),
            times: t.visit_times.clone(),
            severity: t.severity.clone(),
            labels: labels.get(t.group_id.as_str()).cloned().unwrap_or_default(),
        })
        .collect())
}

#[derive(Debug, Deserialize)]
pub struct Point {
    pub group: String,
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Deserialize)]
pub struct PairsRequest {
    pub points: Vec<Point>,
    /// `chrono` or `rnc-t`.
    #[serde(default = "default_variant")]
    pub variant: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
}

fn default_variant() -> String {
    "chrono".into()
}

fn default_temperature() -> f64 {
    1.0
}

#[derive(Debug, Serialize)]
pub struct PairsResponse {
    pub terms: Vec<chronocon::PairTerm>,
    pub loss: f64,
    pub term_values: Vec<f64>,
    pub grad: Vec<[f64; 2]>,
}

pub fn pairs_impl(req: &PairsRequest) -> DemoResult<PairsResponse> {
    if req.points.len() > 40 {
        return Err("at most 40 points".into());
    }
    let batch: Vec<Sample> = req
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| Sample {
            sample_id: i as u64,
            group_id: p.group.clone(),
            timestamp: p.t,
            view_id: 0,
            labels: Vec::new(),
            features: vec![p.x, p.y],
        })
        .collect();
    let emb = Array2::from_shape_fn((batch.len(), 2), |(i, j)| batch[i].features[j]);
    let sim = Similarity::new(chronocon::SimilarityKind::NegL2, req.temperature).map_err(|e| e.to_string())?;
    let (plan, out) = match req.variant.as_str() {
        "chrono" => {
            let plan = chrono_pairs(&batch);
            let out = chronocon_loss(&plan, emb.view(), sim);
            (plan, out)
        }
        "rnc-t" => {
            let plan = rnc_time_pairs(&batch);
            let out = rnc_time_loss(&plan, emb.view(), sim);
            (plan, out)
        }
        other => return Err(format!("unknown variant `{other}`")),
    };
    let out = out.map_err(|e| e.to_string())?;
    Ok(PairsResponse {
        terms: plan.terms,
        loss: out.value,
        term_values: out.term_values,
        grad: out.grad.rows().into_iter().map(|r| [r[0], r[1]]).collect(),
    })
}

#[derive(Debug, Deserialize)]
#[serde(default)]
pub struct PretrainRequest {
    pub n_patients: usize,
    pub epochs: usize,
    pub seed: u64,
    pub loss: String,
    pub dae: bool,
}

impl Default for PretrainRequest {
    fn default() -> Self {
        Self {
            n_patients: 40,
            epochs: 30,
            seed: 0,
            loss: "chrono".into(),
            dae: false,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct EmbeddingView {
    /// `[pc1, pc2, label]` per sample; a missing label is -1.
    pub points: Vec<[f64; 3]>,
    pub explained: Vec<f64>,
    pub medians: BTreeMap<i64, f64>,
    pub rank_correlation: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct PretrainResponse {
    pub before: EmbeddingView,
    pub after: EmbeddingView,
    pub curve: Vec<f64>,
}

fn view(encoder: &EncoderSpec, samples: &[Sample], sim: Similarity) -> DemoResult<EmbeddingView> {
    let a: EmbeddingAnalysis = analyze_embeddings(encoder, samples, 0, "score", sim).map_err(|e| e.to_string())?;
    Ok(EmbeddingView {
        points: a
            .points
            .iter()
            .map(|p| [p.pc1, p.pc2, p.label.map_or(-1.0, f64::from)])
            .collect(),
        explained: a.explained,
        medians: a.medians,
        rank_correlation: first_visit_rank_correlation(encoder, samples, sim).map_err(|e| e.to_string())?,
    })
}

pub fn pretrain_impl(req: &PretrainRequest) -> DemoResult<PretrainResponse> {
    if !(5..=120).contains(&req.n_patients) {
        return Err("n_patients must be between 5 and 120".into());
    }
    if !(1..=200).contains(&req.epochs) {
        return Err("epochs must be between 1 and 200".into());
    }
    let loss: LossVariant = req.loss.parse().map_err(|_| format!("unknown loss `{}`", req.loss))?;
    let config = CohortConfig {
        n_patients: req.n_patients,
        seed: req.seed,
        ..CohortConfig::default()
    }
    .noiseless();
    let (cohort, _) = generate(&config).map_err(|e| e.to_string())?;
    let cohort = split_patients(&cohort, (0.6, 0.2, 0.2), req.seed).map_err(|e| e.to_string())?;
    let tc = TrainConfig {
        pretrain_epochs: req.epochs,
        seed: req.seed,
        ..TrainConfig::desk_scale()
    };
    let sim = tc.similarity;
    let init = init_encoder(&cohort, &tc).map_err(|e| e.to_string())?;
    let trained = pretrain_encoder(&cohort, loss, req.dae || loss == LossVariant::DaeOnly, &tc).map_err(|e| e.to_string())?;
    Ok(PretrainResponse {
        before: view(&init, &cohort.samples, sim)?,
        after: view(&trained.encoder, &cohort.samples, sim)?,
        curve: trained.curve.iter().map(|r| r.train_loss).collect(),
    })
}

#[wasm_bindgen]
pub fn simulate(request: &str) -> String {
    respond(parse::<SimulateRequest>(request).and_then(|r| simulate_impl(&r)))
}

#[wasm_bindgen]
pub fn pairs(request: &str) -> String {
    respond(parse::<PairsRequest>(request).and_then(|r| pairs_impl(&r)))
}

#[wasm_bindgen]
pub fn pretrain(request: &str) -> String {
    respond(parse::<PretrainRequest>(request).and_then(|r| pretrain_impl(&r)))
}

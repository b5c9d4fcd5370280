//! Synthetic longitudinal cohorts with irreversible, nonlinearly progressing
//! latent severity.
//!
//! Each patient has `rois_per_patient` regions of interest (groups
//! `pNNNN/roiK`), imaged together at irregular visit times. Per group, latent
//! severity is a piecewise-constant jump process: exponential waiting times,
//! gamma-distributed positive jumps. Features are an intensity-like vector in
//! `[0, 1]`:
//!
//! ```text
//! x = baseline + feature_scale * ( stage_code(s) + parity(s) * u
//!                                  + group offset + visit acquisition + noise )
//! ```
//!
//! `stage_code` interpolates linearly between orthonormal stage prototypes
//! (one per integer severity level), so severity is linearly decodable but raw
//! Euclidean distance is not monotone in severity difference. The parity
//! component `u` alternates sign between consecutive stages. Group offsets and
//! per-visit acquisition effects live in directions orthogonal to all severity
//! directions.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Binomial, Distribution, Exp, Gamma, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, Sample, ScoreType};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Visit counts are `min_visits + Binomial(extra_trials, extra_prob)`. The
/// default (2 + Bin(4, 0.5)) has median 4 and quartiles 3 and 5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VisitCountDist {
    pub min_visits: u32,
    pub extra_trials: u32,
    pub extra_prob: f64,
}

impl Default for VisitCountDist {
    fn default() -> Self {
        Self {
            min_visits: 2,
            extra_trials: 4,
            extra_prob: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortConfig {
    pub n_patients: usize,
    pub visits_per_patient: VisitCountDist,
    pub rois_per_patient: usize,
    pub feature_dim: usize,
    /// Directions carrying severity: one per stage prototype plus the parity
    /// direction. Severity saturates at `severity_dims - 2`.
    pub severity_dims: usize,
    /// Follow-up horizon; visit times are uniform on `[0, horizon]`.
    pub horizon: f64,
    /// Expected severity jumps per unit time (before patient activity).
    pub jump_rate: f64,
    pub jump_shape: f64,
    pub jump_scale: f64,
    /// Per-patient multiplicative spread of the jump rate (log-normal sigma).
    pub activity_sigma: f64,
    pub initial_shape: f64,
    pub initial_scale: f64,
    pub stage_amplitude: f64,
    pub parity_contrast: f64,
    /// Root-mean-square norm of the constant per-group offset, spread evenly
    /// over the nuisance directions.
    pub nuisance_sigma: f64,
    /// Root-mean-square norm of the per-visit acquisition effect, shared by a
    /// patient's ROIs.
    pub acquisition_sigma: f64,
    pub noise_sigma: f64,
    pub feature_scale: f64,
    pub baseline: f64,
    pub label_max: u32,
    pub score_types: Vec<String>,
    pub reader_noise_prob: f64,
    pub seed: u64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            n_patients: 200,
            visits_per_patient: VisitCountDist::default(),
            rois_per_patient: 2,
            feature_dim: 32,
            severity_dims: 7,
            horizon: 6.0,
            jump_rate: 1.0,
            jump_shape: 2.0,
            jump_scale: 0.25,
            activity_sigma: 0.5,
            initial_shape: 1.5,
            initial_scale: 0.8,
            stage_amplitude: 1.0,
            parity_contrast: 1.0,
            nuisance_sigma: 1.0,
            acquisition_sigma: 0.5,
            noise_sigma: 0.2,
            feature_scale: 0.05,
            baseline: 0.5,
            label_max: 5,
            score_types: vec!["ero".into(), "jsn".into()],
            reader_noise_prob: 0.1,
            seed: 0,
        }
    }
}

impl CohortConfig {
    /// Monotone cohort without feature noise, acquisition effects, or reader
    /// error.
    pub fn noiseless(mut self) -> Self {
        self.noise_sigma = 0.0;
        self.acquisition_sigma = 0.0;
        self.reader_noise_prob = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.severity_dims < 3 {
            return bad("severity_dims must be at least 3");
        }
        if self.severity_dims > self.feature_dim {
            return bad("severity_dims must not exceed feature_dim");
        }
        if self.rois_per_patient == 0 {
            return bad("rois_per_patient must be positive");
        }
        if self.visits_per_patient.min_visits == 0 {
            return bad("min_visits must be positive");
        }
        if !(0.0..=1.0).contains(&self.visits_per_patient.extra_prob) {
            return bad("extra_prob must be in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.reader_noise_prob) {
            return bad("reader_noise_prob must be in [0, 1]");
        }
        let nonneg = [
            self.jump_rate,
            self.activity_sigma,
            self.stage_amplitude,
            self.parity_contrast,
            self.nuisance_sigma,
            self.acquisition_sigma,
            self.noise_sigma,
            self.feature_scale,
        ];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("rates, sigmas and scales must be finite and nonnegative");
        }
        if !(self.horizon > 0.0 && self.jump_shape > 0.0 && self.jump_scale > 0.0) {
            return bad("horizon and jump distribution parameters must be positive");
        }
        if !(self.initial_shape > 0.0 && self.initial_scale > 0.0) {
            return bad("initial severity distribution parameters must be positive");
        }
        if self.score_types.is_empty() {
            return bad("at least one score type is required");
        }
        Ok(())
    }

    fn max_stage(&self) -> usize {
        self.severity_dims - 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentTrajectory {
    pub group_id: String,
    pub visit_times: Vec<f64>,
    pub severity: Vec<f64>,
}

pub type Trajectories = BTreeMap<String, LatentTrajectory>;

/// Fixed random geometry of the feature space.
struct Basis {
    stages: Vec<Vec<f64>>,
    parity: Vec<f64>,
    nuisance: Vec<Vec<f64>>,
}

impl Basis {
    fn new(config: &CohortConfig) -> Self {
        let d = config.feature_dim;
        let mut r = rng::rng_for(config.seed, &[rng::tag("basis")]);
        let g = DMatrix::<f64>::from_fn(d, d, |_, _| r.sample(StandardNormal));
        let q = g.qr().q();
        let col = |j: usize| q.column(j).iter().copied().collect::<Vec<f64>>();
        let n_stage = config.max_stage() + 1;
        Basis {
            stages: (0..n_stage).map(col).collect(),
            parity: col(n_stage),
            nuisance: (config.severity_dims..d).map(col).collect(),
        }
    }
}

/// Hat-function weights of severity over integer stages `0..=max_stage`.
fn stage_weights(s: f64, max_stage: usize) -> Vec<f64> {
    let s = s.clamp(0.0, max_stage as f64);
    let lo = (s.floor() as usize).min(max_stage);
    let frac = s - lo as f64;
    let mut w = vec![0.0; max_stage + 1];
    w[lo] += 1.0 - frac;
    if frac > 0.0 {
        w[lo + 1] += frac;
    }
    w
}

fn render_features(
    config: &CohortConfig,
    basis: &Basis,
    severity: f64,
    offset: &[f64],
    acquisition: &[f64],
    r: &mut Rng,
) -> Vec<f64> {
    let d = config.feature_dim;
    let weights = stage_weights(severity, config.max_stage());
    let parity: f64 = weights
        .iter()
        .enumerate()
        .map(|(k, w)| if k % 2 == 0 { *w } else { -*w })
        .sum();
    let mut z = vec![0.0; d];
    for (w, proto) in weights.iter().zip(&basis.stages) {
        if *w != 0.0 {
            for (zi, pi) in z.iter_mut().zip(proto) {
                *zi += config.stage_amplitude * w * pi;
            }
        }
    }
    for (zi, ui) in z.iter_mut().zip(&basis.parity) {
        *zi += config.parity_contrast * parity * ui;
    }
    for (j, dir) in basis.nuisance.iter().enumerate() {
        let c = offset[j] + acquisition[j];
        if c != 0.0 {
            for (zi, di) in z.iter_mut().zip(dir) {
                *zi += c * di;
            }
        }
    }
    if config.noise_sigma > 0.0 {
        for zi in z.iter_mut() {
            let e: f64 = r.sample(StandardNormal);
            *zi += config.noise_sigma * e;
        }
    }
    z.iter()
        .map(|zi| (config.baseline + config.feature_scale * zi).clamp(0.0, 1.0))
        .collect()
}

fn draw_visit_times(config: &CohortConfig, r: &mut Rng) -> Vec<f64> {
    let v = &config.visits_per_patient;
    let extra = if v.extra_trials == 0 {
        0
    } else {
        Binomial::new(v.extra_trials as u64, v.extra_prob)
            .expect("validated")
            .sample(r) as u32
    };
    let n = (v.min_visits + extra) as usize;
    loop {
        let mut t: Vec<f64> = (0..n)
            .map(|_| r.random_range(0.0..config.horizon))
            .collect();
        t.sort_by(f64::total_cmp);
        if t.windows(2).all(|w| w[0] < w[1]) {
            return t;
        }
    }
}

fn draw_severity(config: &CohortConfig, activity: f64, times: &[f64], r: &mut Rng) -> Vec<f64> {
    let initial = Gamma::new(config.initial_shape, config.initial_scale).expect("validated");
    let jump = Gamma::new(config.jump_shape, config.jump_scale).expect("validated");
    let mut s = initial.sample(r);
    let rate = config.jump_rate * activity;
    let mut jumps = Vec::new();
    if rate > 0.0 {
        let wait = Exp::new(rate).expect("positive rate");
        let mut clock = wait.sample(r);
        while clock <= config.horizon {
            jumps.push((clock, jump.sample(r)));
            clock += wait.sample(r);
        }
    }
    let mut k = 0;
    times
        .iter()
        .map(|&t| {
            while k < jumps.len() && jumps[k].0 <= t {
                s += jumps[k].1;
                k += 1;
            }
            s
        })
        .collect()
}

fn reader_label(s: f64, config: &CohortConfig, r: &mut Rng) -> u32 {
    let k = config.label_max as f64;
    let mut y = s.round().clamp(0.0, k);
    if config.reader_noise_prob > 0.0 && r.random_bool(config.reader_noise_prob) {
        y += if r.random_bool(0.5) { 1.0 } else { -1.0 };
        y = y.clamp(0.0, k);
    }
    y as u32
}

struct PatientDraw {
    samples: Vec<Sample>,
    trajectories: Vec<LatentTrajectory>,
}

fn generate_patient(config: &CohortConfig, basis: &Basis, patient: usize) -> PatientDraw {
    let mut r = rng::rng_for(config.seed, &[rng::tag("patient"), patient as u64]);
    let times = draw_visit_times(config, &mut r);
    let activity = if config.activity_sigma > 0.0 {
        LogNormal::new(0.0, config.activity_sigma)
            .expect("validated")
            .sample(&mut r)
    } else {
        1.0
    };
    let n_nuis = basis.nuisance.len();
    let per_dim = 1.0 / (n_nuis.max(1) as f64).sqrt();
    let acquisition: Vec<Vec<f64>> = times
        .iter()
        .map(|_| {
            (0..n_nuis)
                .map(|_| per_dim * config.acquisition_sigma * r.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let mut samples = Vec::new();
    let mut trajectories = Vec::new();
    for roi in 0..config.rois_per_patient {
        let group_id = format!("p{patient:04}/roi{roi}");
        let severity = draw_severity(config, activity, &times, &mut r);
        let offset: Vec<f64> = (0..n_nuis)
            .map(|_| per_dim * config.nuisance_sigma * r.sample::<f64, _>(StandardNormal))
            .collect();
        for (v, (&t, &s)) in times.iter().zip(&severity).enumerate() {
            let features = render_features(config, basis, s, &offset, &acquisition[v], &mut r);
            let labels = config
                .score_types
                .iter()
                .map(|_| Some(reader_label(s, config, &mut r)))
                .collect();
            samples.push(Sample {
                sample_id: 0,
                group_id: group_id.clone(),
                timestamp: t,
                view_id: 0,
                labels,
                features,
            });
        }
        trajectories.push(LatentTrajectory {
            group_id,
            visit_times: times.clone(),
            severity,
        });
    }
    PatientDraw {
        samples,
        trajectories,
    }
}

/// Generates a cohort and its latent trajectories. Output is sorted by
/// `(group_id, timestamp)` and sample ids are assigned in that order.
pub fn generate(config: &CohortConfig) -> Result<(Cohort, Trajectories)> {
    config.validate()?;
    let basis = Basis::new(config);

    #[cfg(feature = "parallel")]
    let draws: Vec<PatientDraw> = {
        use rayon::prelude::*;
        (0..config.n_patients)
            .into_par_iter()
            .map(|p| generate_patient(config, &basis, p))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let draws: Vec<PatientDraw> = (0..config.n_patients)
        .map(|p| generate_patient(config, &basis, p))
        .collect();

    let mut cohort = Cohort::new(
        config
            .score_types
            .iter()
            .map(|name| ScoreType {
                name: name.clone(),
                max_value: config.label_max,
            })
            .collect(),
    );
    let mut trajectories = BTreeMap::new();
    for draw in draws {
        cohort.samples.extend(draw.samples);
        for t in draw.trajectories {
            trajectories.insert(t.group_id.clone(), t);
        }
    }
    cohort.samples.sort_by(|a, b| {
        a.group_id
            .cmp(&b.group_id)
            .then(a.timestamp.total_cmp(&b.timestamp))
    });
    for (i, s) in cohort.samples.iter_mut().enumerate() {
        s.sample_id = i as u64;
    }
    Ok((cohort, trajectories))
}

pub fn true_severity(trajectories: &Trajectories, group_id: &str, timestamp: f64) -> Result<f64> {
    let traj = trajectories
        .get(group_id)
        .ok_or_else(|| Error::Other(format!("unknown group `{group_id}`")))?;
    traj.visit_times
        .iter()
        .position(|&t| t == timestamp)
        .map(|i| traj.severity[i])
        .ok_or_else(|| Error::Other(format!("no visit of `{group_id}` at t = {timestamp}")))
}

/// Writes `group_id,timestamp,severity` rows in canonical order.
pub fn write_truth<W: std::io::Write>(trajectories: &Trajectories, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let csv_err = |e: csv::Error| Error::Other(format!("csv write: {e}"));
    w.write_record(["group_id", "timestamp", "severity"])
        .map_err(csv_err)?;
    for t in trajectories.values() {
        for (&time, &s) in t.visit_times.iter().zip(&t.severity) {
            w.write_record([
                t.group_id.clone(),
                crate::cohort::fmt_real(time),
                crate::cohort::fmt_real(s),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()
        .map_err(|e| Error::Other(format!("csv flush: {e}")))?;
    Ok(())
}

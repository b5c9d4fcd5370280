//! Evaluation statistics: aggregation of subscores into totals and
//! progression, agreement and error metrics, bootstrap intervals, the paired
//! t-test and the progression error decomposition.

mod basic;
mod bootstrap;
mod icc;
mod special;
mod stats;
mod table;

pub use basic::{mae, pearson, rmse};
pub use bootstrap::{bootstrap_ci, quantile_sorted, BootstrapCi};
pub use icc::{icc, IccResult};
pub use special::{ln_gamma, reg_inc_beta, student_t_cdf, student_t_two_sided_p};
pub use stats::{error_correlation, paired_mse_ttest, ErrorCorrelation, TTest};
pub use table::{aggregate_total, progression, MissingPolicy, Progression, ScoreRow, ScoreTable, VisitTotal};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub point: Option<f64>,
    pub low: Option<f64>,
    pub high: Option<f64>,
}

impl Interval {
    const EMPTY: Interval = Interval {
        point: None,
        low: None,
        high: None,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub n: usize,
    pub icc31: Interval,
    pub icc21: Interval,
    pub rmse: Interval,
    pub mae: Interval,
    pub pearson: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedTests {
    pub cross_sectional: Option<TTest>,
    pub progression: Option<TTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_patients: usize,
    pub cross_sectional: MetricSet,
    pub progression: MetricSet,
    pub c: Option<f64>,
    pub sigma2: Option<f64>,
    pub mse_delta_empirical: Option<f64>,
    pub mse_delta_model: Option<f64>,
    pub ttest: Option<PairedTests>,
    /// Human-readable notes on degenerate or undefined statistics.
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub bootstrap_resamples: usize,
    pub cluster_by_patient: bool,
    pub seed: u64,
    pub policy: MissingPolicy,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            bootstrap_resamples: 2000,
            cluster_by_patient: true,
            seed: 0,
            policy: MissingPolicy::default(),
        }
    }
}

type Stat = fn(&[(f64, f64)]) -> Option<f64>;

fn icc31_stat(p: &[(f64, f64)]) -> Option<f64> {
    icc(p).ok().filter(|r| !r.degenerate).map(|r| r.icc31)
}

fn icc21_stat(p: &[(f64, f64)]) -> Option<f64> {
    icc(p).ok().filter(|r| !r.degenerate).map(|r| r.icc21)
}

fn metric_set(
    pairs: &[(f64, f64)],
    patients: &[usize],
    opts: &EvalOptions,
    label: &str,
    flags: &mut Vec<String>,
) -> MetricSet {
    let stats: [(&str, Stat); 5] = [
        ("icc31", icc31_stat),
        ("icc21", icc21_stat),
        ("rmse", |p| rmse(p).ok()),
        ("mae", |p| mae(p).ok()),
        ("pearson", |p| pearson(p).ok()),
    ];
    let clusters = opts.cluster_by_patient.then_some(patients);
    let mut out = [Interval::EMPTY; 5];
    for (k, (name, f)) in stats.iter().enumerate() {
        let point = f(pairs);
        if point.is_none() {
            flags.push(format!("{label}.{name}: undefined"));
            continue;
        }
        let seed = crate::rng::derive_seed(opts.seed, &[crate::rng::tag(label), k as u64]);
        out[k] = match bootstrap_ci(pairs, clusters, f, opts.bootstrap_resamples, seed) {
            Ok(ci) => Interval {
                point: Some(ci.point),
                low: Some(ci.low),
                high: Some(ci.high),
            },
            Err(e) => {
                flags.push(format!("{label}.{name}: no interval ({e})"));
                Interval {
                    point,
                    low: point,
                    high: point,
                }
            }
        };
    }
    if let Ok(r) = icc(pairs) {
        if r.degenerate {
            flags.push(format!("{label}.icc: zero between-subject variance"));
        }
    }
    let [icc31, icc21, rmse, mae, pearson] = out;
    MetricSet {
        n: pairs.len(),
        icc31,
        icc21,
        rmse,
        mae,
        pearson,
    }
}

fn patient_ids<'a>(names: impl Iterator<Item = &'a str>) -> Vec<usize> {
    let mut ids: BTreeMap<&str, usize> = BTreeMap::new();
    names
        .map(|n| {
            let next = ids.len();
            *ids.entry(n).or_insert(next)
        })
        .collect()
}

/// Cross-sectional and progression evaluation of one model, optionally
/// compared to a second model on the same visits by paired t-tests.
pub fn evaluate(table: &ScoreTable, other: Option<&ScoreTable>, opts: &EvalOptions) -> Result<EvalReport> {
    let mut flags = Vec::new();
    let totals = aggregate_total(table, &opts.policy);
    let deltas = progression(&totals);

    let cs_pairs: Vec<(f64, f64)> = totals.iter().map(|v| (v.y_true, v.y_pred)).collect();
    let cs_patients = patient_ids(totals.iter().map(|v| v.patient.as_str()));
    let pr_pairs: Vec<(f64, f64)> = deltas.iter().map(|d| (d.delta_true, d.delta_pred)).collect();
    let pr_patients = patient_ids(deltas.iter().map(|d| d.patient.as_str()));

    let cross_sectional = metric_set(&cs_pairs, &cs_patients, opts, "cross_sectional", &mut flags);
    let progression_set = metric_set(&pr_pairs, &pr_patients, opts, "progression", &mut flags);

    let mut per_patient: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for v in &totals {
        per_patient.entry(&v.patient).or_default().push(v.y_pred - v.y_true);
    }
    let errors: Vec<Vec<f64>> = per_patient.into_values().collect();
    let ec = match error_correlation(&errors) {
        Ok(ec) => Some(ec),
        Err(e) => {
            flags.push(format!("error_correlation: {e}"));
            None
        }
    };

    let ttest = match other {
        None => None,
        Some(b) => {
            let totals_b = aggregate_total(b, &opts.policy);
            let deltas_b = progression(&totals_b);
            let key = |p: &str, t: f64| (p.to_string(), t.to_bits());
            let cs_b: BTreeMap<_, f64> = totals_b
                .iter()
                .map(|v| (key(&v.patient, v.timestamp), (v.y_pred - v.y_true).powi(2)))
                .collect();
            let pr_b: BTreeMap<_, f64> = deltas_b
                .iter()
                .map(|d| (key(&d.patient, d.t2), (d.delta_pred - d.delta_true).powi(2)))
                .collect();
            let mut test = |keys: Vec<((String, u64), f64)>, b: &BTreeMap<(String, u64), f64>, label: &str| {
                let (ea, eb): (Vec<f64>, Vec<f64>) = keys
                    .into_iter()
                    .filter_map(|(k, a)| b.get(&k).map(|&bv| (a, bv)))
                    .unzip();
                match paired_mse_ttest(&ea, &eb) {
                    Ok(t) => {
                        if t.degenerate {
                            flags.push(format!("ttest.{label}: zero variance of differences"));
                        }
                        Some(t)
                    }
                    Err(e) => {
                        flags.push(format!("ttest.{label}: {e}"));
                        None
                    }
                }
            };
            let cs_a = totals
                .iter()
                .map(|v| (key(&v.patient, v.timestamp), (v.y_pred - v.y_true).powi(2)))
                .collect();
            let pr_a = deltas
                .iter()
                .map(|d| (key(&d.patient, d.t2), (d.delta_pred - d.delta_true).powi(2)))
                .collect();
            Some(PairedTests {
                cross_sectional: test(cs_a, &cs_b, "cross_sectional"),
                progression: test(pr_a, &pr_b, "progression"),
            })
        }
    };

    Ok(EvalReport {
        n_patients: cs_patients.iter().max().map_or(0, |m| m + 1),
        cross_sectional,
        progression: progression_set,
        c: ec.map(|e| e.c),
        sigma2: ec.map(|e| e.sigma2),
        mse_delta_empirical: ec.map(|e| e.mse_delta_empirical),
        mse_delta_model: ec.map(|e| e.mse_delta_model),
        ttest,
        flags,
    })
}

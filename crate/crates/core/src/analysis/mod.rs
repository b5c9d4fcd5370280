//! Experiment orchestration and plot-ready outputs: label-efficiency sweeps,
//! embedding analyses and the report directory.

mod embedding;
mod pca;
mod report;
mod sweep;

pub use embedding::{
    analyze_embeddings, bucket_medians, delta_histogram, first_visit_rank_correlation,
    medians_strictly_decreasing, similarity_vs_scorediff, spearman, EmbeddingAnalysis, PcaPoint,
    SimDiffRow,
};
pub use pca::{pca_project, Pca};
pub use report::{emit_report, write_embedding_analysis, REPORT_FILES};
pub use sweep::{
    eval_options, pretrain_arm, read_sweep_table, rep_seed, run_cell, run_sweep, write_sweep_table,
    Arm, Cell, SweepRow, SweepSpec, SWEEP_HEADER,
};

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::cohort::{fmt_real, Cohort, Sample};
use crate::error::{Error, Result};
use crate::metrics::{ScoreRow, ScoreTable};
use crate::training::Prediction;

/// One line of a per-visit score file: a true label (possibly missing) or a
/// prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub patient: String,
    pub timestamp: f64,
    pub score_name: String,
    pub value: Option<f64>,
}

fn entry_key(cohort: &Cohort, s: &Sample, score: &str) -> (String, f64, String) {
    let patient = cohort.patient_of(s).to_string();
    let site = s
        .group_id
        .split_once(cohort.delimiter)
        .map(|(_, rest)| rest)
        .unwrap_or("");
    let name = if site.is_empty() {
        score.to_string()
    } else {
        format!("{site}:{score}")
    };
    (patient, s.timestamp, name)
}

/// Per-visit true labels of `samples`, one entry per score type.
pub fn truth_entries(cohort: &Cohort, samples: &[Sample]) -> Vec<TableEntry> {
    let mut out = Vec::with_capacity(samples.len() * cohort.score_types.len());
    for s in samples {
        for (k, st) in cohort.score_types.iter().enumerate() {
            let (patient, timestamp, score_name) = entry_key(cohort, s, &st.name);
            out.push(TableEntry {
                patient,
                timestamp,
                score_name,
                value: s.labels[k].map(f64::from),
            });
        }
    }
    out
}

pub fn prediction_entries(cohort: &Cohort, samples: &[Sample], preds: &[Prediction]) -> Result<Vec<TableEntry>> {
    let by_id: HashMap<u64, &Sample> = samples.iter().map(|s| (s.sample_id, s)).collect();
    preds
        .iter()
        .map(|p| {
            let s = by_id.get(&p.sample_id).ok_or_else(|| {
                Error::Shape(format!("prediction for unknown sample {}", p.sample_id))
            })?;
            let (patient, timestamp, score_name) = entry_key(cohort, s, &p.score_name);
            Ok(TableEntry {
                patient,
                timestamp,
                score_name,
                value: Some(p.value),
            })
        })
        .collect()
}

/// Pairs predictions with truth on (patient, timestamp, score name).
/// Truth entries without a prediction are ignored; predictions without a
/// truth entry count as missing truth.
pub fn join_entries(pred: &[TableEntry], truth: &[TableEntry]) -> Result<ScoreTable> {
    let truth_map: BTreeMap<(&str, u64, &str), Option<f64>> = truth
        .iter()
        .map(|t| ((t.patient.as_str(), t.timestamp.to_bits(), t.score_name.as_str()), t.value))
        .collect();
    let mut rows = Vec::with_capacity(pred.len());
    for p in pred {
        let y_pred = p.value.ok_or_else(|| {
            Error::Degenerate(format!(
                "missing prediction for {} at {} ({})",
                p.patient, p.timestamp, p.score_name
            ))
        })?;
        let key = (p.patient.as_str(), p.timestamp.to_bits(), p.score_name.as_str());
        rows.push(ScoreRow {
            patient: p.patient.clone(),
            timestamp: p.timestamp,
            score_name: p.score_name.clone(),
            y_true: truth_map.get(&key).copied().flatten(),
            y_pred,
        });
    }
    ScoreTable::new(rows)
}

/// Evaluation table for `samples` of `cohort` given their predictions.
pub fn score_table(cohort: &Cohort, samples: &[Sample], preds: &[Prediction]) -> Result<ScoreTable> {
    join_entries(&prediction_entries(cohort, samples, preds)?, &truth_entries(cohort, samples))
}

pub fn write_entries<W: std::io::Write>(entries: &[TableEntry], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let err = |e: csv::Error| Error::Other(format!("csv write: {e}"));
    w.write_record(["patient", "timestamp", "score_name", "value"]).map_err(err)?;
    for e in entries {
        w.write_record([
            e.patient.clone(),
            fmt_real(e.timestamp),
            e.score_name.clone(),
            e.value.map(fmt_real).unwrap_or_default(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::Other(format!("csv flush: {e}")))?;
    Ok(())
}

pub fn read_entries<R: std::io::Read>(input: R) -> Result<Vec<TableEntry>> {
    let mut r = csv::ReaderBuilder::new().from_reader(input);
    let headers = r
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["patient", "timestamp", "score_name", "value"] {
        return Err(Error::Parse {
            line: 1,
            message: "expected header patient,timestamp,score_name,value".into(),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let num = |s: &str, what: &str| -> Result<f64> {
            s.trim().parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("bad {what} `{s}`"),
            })
        };
        let value = match rec[3].trim() {
            "" => None,
            v => Some(num(v, "value")?),
        };
        out.push(TableEntry {
            patient: rec[0].to_string(),
            timestamp: num(&rec[1], "timestamp")?,
            score_name: rec[2].to_string(),
            value,
        });
    }
    Ok(out)
}

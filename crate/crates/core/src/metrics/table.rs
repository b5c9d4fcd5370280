//! Per-visit subscore tables, total-score aggregation and progression.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub patient: String,
    pub timestamp: f64,
    pub score_name: String,
    pub y_true: Option<f64>,
    pub y_pred: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    rows: Vec<ScoreRow>,
}

impl ScoreTable {
    /// Rejects duplicate `(patient, timestamp, score_name)` keys and
    /// non-finite values.
    pub fn new(rows: Vec<ScoreRow>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &rows {
            if !r.timestamp.is_finite() || !r.y_pred.is_finite() || r.y_true.is_some_and(|y| !y.is_finite()) {
                return Err(Error::Degenerate(format!(
                    "non-finite entry for {} at {} ({})",
                    r.patient, r.timestamp, r.score_name
                )));
            }
            if !seen.insert((r.patient.clone(), r.timestamp.to_bits(), r.score_name.clone())) {
                return Err(Error::Degenerate(format!(
                    "duplicate row for {} at {} ({})",
                    r.patient, r.timestamp, r.score_name
                )));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[ScoreRow] {
        &self.rows
    }

    pub fn score_names(&self) -> BTreeSet<&str> {
        self.rows.iter().map(|r| r.score_name.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingPolicy {
    /// Visits whose fraction of missing true subscores exceeds this are
    /// dropped.
    pub max_missing_fraction: f64,
    /// Per score-name upper clip for predictions; unlisted names use
    /// `default_max`.
    pub score_max: BTreeMap<String, f64>,
    pub default_max: Option<f64>,
}

impl Default for MissingPolicy {
    fn default() -> Self {
        Self {
            max_missing_fraction: 0.25,
            score_max: BTreeMap::new(),
            default_max: None,
        }
    }
}

impl MissingPolicy {
    fn clip(&self, name: &str, v: f64) -> f64 {
        match self.score_max.get(name).copied().or(self.default_max) {
            Some(hi) => v.clamp(0.0, hi),
            None => v.max(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitTotal {
    pub patient: String,
    pub timestamp: f64,
    pub y_true: f64,
    pub y_pred: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progression {
    pub patient: String,
    pub t1: f64,
    pub t2: f64,
    pub delta_true: f64,
    pub delta_pred: f64,
}

/// Linear interpolation over `(t, y)` points sorted by `t`, constant
/// outside their range.
fn interpolate(points: &[(f64, f64)], t: f64) -> f64 {
    let first = points[0];
    let last = points[points.len() - 1];
    if t <= first.0 {
        return first.1;
    }
    if t >= last.0 {
        return last.1;
    }
    let i = points.partition_point(|p| p.0 <= t);
    let (a, b) = (points[i - 1], points[i]);
    a.1 + (b.1 - a.1) * (t - a.0) / (b.0 - a.0)
}

/// Sums subscores per (patient, visit). Missing true subscores are
/// interpolated along the patient's series of that subscore; predictions are
/// clipped to each score's range before summing. Output is sorted by
/// patient, then time.
pub fn aggregate_total(table: &ScoreTable, policy: &MissingPolicy) -> Vec<VisitTotal> {
    let names: Vec<&str> = table.score_names().into_iter().collect();
    let mut by_patient: BTreeMap<&str, Vec<&ScoreRow>> = BTreeMap::new();
    for r in table.rows() {
        by_patient.entry(&r.patient).or_default().push(r);
    }
    let mut out = Vec::new();
    for (patient, rows) in by_patient {
        let mut visits: BTreeMap<u64, (f64, BTreeMap<&str, &ScoreRow>)> = BTreeMap::new();
        let mut series: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
        for r in &rows {
            visits
                .entry(order_key(r.timestamp))
                .or_insert_with(|| (r.timestamp, BTreeMap::new()))
                .1
                .insert(r.score_name.as_str(), *r);
            if let Some(y) = r.y_true {
                series.entry(r.score_name.as_str()).or_default().push((r.timestamp, y));
            }
        }
        for s in series.values_mut() {
            s.sort_by(|a, b| a.0.total_cmp(&b.0));
        }
        for name in &names {
            if !series.contains_key(name) {
                log::warn!("patient {patient}: subscore {name} is missing at every visit; counted as 0");
            }
        }
        for (t, subs) in visits.values() {
            let missing = names
                .iter()
                .filter(|n| subs.get(*n).is_none_or(|r| r.y_true.is_none()))
                .count();
            if missing as f64 > policy.max_missing_fraction * names.len() as f64 {
                continue;
            }
            let mut y_true = 0.0;
            let mut y_pred = 0.0;
            for name in &names {
                match subs.get(name) {
                    Some(r) => {
                        y_pred += policy.clip(name, r.y_pred);
                        y_true += match r.y_true {
                            Some(y) => y,
                            None => series.get(name).map_or(0.0, |s| interpolate(s, *t)),
                        };
                    }
                    None => {
                        y_true += series.get(name).map_or(0.0, |s| interpolate(s, *t));
                    }
                }
            }
            out.push(VisitTotal {
                patient: patient.to_string(),
                timestamp: *t,
                y_true,
                y_pred,
            });
        }
    }
    out
}

/// Maps a float to a key whose unsigned order matches numeric order.
fn order_key(t: f64) -> u64 {
    let b = t.to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | (1 << 63)
    }
}

/// Differences between consecutive visits of each patient.
pub fn progression(totals: &[VisitTotal]) -> Vec<Progression> {
    let mut by_patient: BTreeMap<&str, Vec<&VisitTotal>> = BTreeMap::new();
    for v in totals {
        by_patient.entry(&v.patient).or_default().push(v);
    }
    let mut out = Vec::new();
    for (patient, mut visits) in by_patient {
        visits.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        for w in visits.windows(2) {
            out.push(Progression {
                patient: patient.to_string(),
                t1: w[0].timestamp,
                t2: w[1].timestamp,
                delta_true: w[1].y_true - w[0].y_true,
                delta_pred: w[1].y_pred - w[0].y_pred,
            });
        }
    }
    out
}

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::pca::pca_project;
use crate::cohort::Sample;
use crate::error::Result;
use crate::losses::{similarity, Similarity};
use crate::metrics::quantile_sorted;
use crate::model::EncoderSpec;

/// One chronologically ordered visit pair within a group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDiffRow {
    pub group_id: String,
    pub t1: f64,
    pub t2: f64,
    /// Number of visits between the pair plus one.
    pub rank: usize,
    pub delta_label: i64,
    pub similarity: f64,
}

fn by_group(samples: &[Sample]) -> BTreeMap<&str, Vec<usize>> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        groups.entry(s.group_id.as_str()).or_default().push(i);
    }
    for idx in groups.values_mut() {
        idx.sort_by(|&a, &b| {
            samples[a]
                .timestamp
                .total_cmp(&samples[b].timestamp)
                .then(samples[a].sample_id.cmp(&samples[b].sample_id))
        });
    }
    groups
}

fn embed_all(encoder: &EncoderSpec, samples: &[Sample]) -> Array2<f64> {
    let d = encoder.input_dim();
    let x = Array2::from_shape_fn((samples.len(), d), |(i, j)| samples[i].features[j]);
    encoder.embed(x.view())
}

/// Feature similarity and label difference of every within-group visit pair
/// `(i, j)` with `t_i < t_j` and score `score` observed at both visits.
pub fn similarity_vs_scorediff(
    encoder: &EncoderSpec,
    samples: &[Sample],
    score: usize,
    sim: Similarity,
) -> Result<Vec<SimDiffRow>> {
    let emb = embed_all(encoder, samples);
    let mut rows = Vec::new();
    for (g, idx) in by_group(samples) {
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate().skip(a + 1) {
                let (si, sj) = (&samples[i], &samples[j]);
                if si.timestamp >= sj.timestamp {
                    continue;
                }
                let (Some(yi), Some(yj)) = (si.labels[score], sj.labels[score]) else {
                    continue;
                };
                rows.push(SimDiffRow {
                    group_id: g.to_string(),
                    t1: si.timestamp,
                    t2: sj.timestamp,
                    rank: b - a,
                    delta_label: yj as i64 - yi as i64,
                    similarity: similarity(emb.row(i), emb.row(j), sim)?,
                });
            }
        }
    }
    Ok(rows)
}

pub fn delta_histogram(rows: &[SimDiffRow]) -> BTreeMap<i64, usize> {
    let mut h = BTreeMap::new();
    for r in rows {
        *h.entry(r.delta_label).or_default() += 1;
    }
    h
}

/// Median similarity per label difference.
pub fn bucket_medians(rows: &[SimDiffRow]) -> BTreeMap<i64, f64> {
    let mut buckets: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for r in rows {
        buckets.entry(r.delta_label).or_default().push(r.similarity);
    }
    buckets
        .into_iter()
        .map(|(k, mut v)| {
            v.sort_by(f64::total_cmp);
            (k, quantile_sorted(&v, 0.5))
        })
        .collect()
}

/// True when the medians of buckets `0..=max_delta` exist and strictly
/// decrease.
pub fn medians_strictly_decreasing(medians: &BTreeMap<i64, f64>, max_delta: i64) -> bool {
    let vals: Option<Vec<f64>> = (0..=max_delta).map(|k| medians.get(&k).copied()).collect();
    vals.is_some_and(|v| v.windows(2).all(|w| w[1] < w[0]))
}

fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties; `None` when
/// either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    if x.len() < 2 {
        return None;
    }
    let pairs: Vec<(f64, f64)> = average_ranks(x).into_iter().zip(average_ranks(y)).collect();
    crate::metrics::pearson(&pairs).ok()
}

/// Mean over groups with at least three visits of the Spearman correlation
/// between similarity to the first visit and visit index.
pub fn first_visit_rank_correlation(encoder: &EncoderSpec, samples: &[Sample], sim: Similarity) -> Result<Option<f64>> {
    let emb = embed_all(encoder, samples);
    let mut sum = 0.0;
    let mut n = 0usize;
    for idx in by_group(samples).values() {
        if idx.len() < 3 {
            continue;
        }
        let first = emb.row(idx[0]);
        let mut s = Vec::with_capacity(idx.len());
        for &i in idx {
            s.push(similarity(first, emb.row(i), sim)?);
        }
        let order: Vec<f64> = (0..idx.len()).map(|k| k as f64).collect();
        if let Some(r) = spearman(&s, &order) {
            sum += r;
            n += 1;
        }
    }
    Ok((n > 0).then(|| sum / n as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaPoint {
    pub sample_id: u64,
    pub group_id: String,
    pub timestamp: f64,
    pub label: Option<u32>,
    pub pc1: f64,
    pub pc2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingAnalysis {
    pub score_name: String,
    pub points: Vec<PcaPoint>,
    pub explained: Vec<f64>,
    pub simdiff: Vec<SimDiffRow>,
    pub histogram: BTreeMap<i64, usize>,
    pub medians: BTreeMap<i64, f64>,
}

/// PCA projection of all embeddings plus the similarity/label-difference
/// table for one score type.
pub fn analyze_embeddings(
    encoder: &EncoderSpec,
    samples: &[Sample],
    score: usize,
    score_name: &str,
    sim: Similarity,
) -> Result<EmbeddingAnalysis> {
    let emb = embed_all(encoder, samples);
    let pca = pca_project(emb.view(), 2)?;
    let points = samples
        .iter()
        .enumerate()
        .map(|(i, s)| PcaPoint {
            sample_id: s.sample_id,
            group_id: s.group_id.clone(),
            timestamp: s.timestamp,
            label: s.labels[score],
            pc1: pca.projected.get((i, 0)).copied().unwrap_or(0.0),
            pc2: pca.projected.get((i, 1)).copied().unwrap_or(0.0),
        })
        .collect();
    let simdiff = similarity_vs_scorediff(encoder, samples, score, sim)?;
    Ok(EmbeddingAnalysis {
        score_name: score_name.to_string(),
        points,
        explained: pca.explained,
        histogram: delta_histogram(&simdiff),
        medians: bucket_medians(&simdiff),
        simdiff,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_with_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 4.0, 9.0, 16.0]).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        assert!(spearman(&[1.0, 1.0], &[0.0, 1.0]).is_none());
    }

    #[test]
    fn monotone_medians() {
        let m: BTreeMap<i64, f64> = [(0, -0.1), (1, -0.5), (2, -0.9), (3, -2.0)].into();
        assert!(medians_strictly_decreasing(&m, 3));
        let m: BTreeMap<i64, f64> = [(0, -0.1), (1, -0.5), (3, -2.0)].into();
        assert!(!medians_strictly_decreasing(&m, 3));
    }
}

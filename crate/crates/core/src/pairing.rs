//! Anchor/positive/negative construction for every contrastive variant.
//!
//! Indices refer to positions in the batch slice. Each emitted term has at
//! least one negative; pairs without negatives are dropped and never count
//! towards a normalizer. Terms are sorted by `(direction, anchor, positive)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cohort::Sample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
    Label,
    TimeDist,
    Instance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairTerm {
    pub anchor: usize,
    pub positive: usize,
    /// Sorted, never contains `anchor` or `positive`.
    pub negatives: Vec<usize>,
    pub direction: Direction,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairingPlan {
    pub terms: Vec<PairTerm>,
    pub n_forward: usize,
    pub n_backward: usize,
}

impl PairingPlan {
    fn from_terms(mut terms: Vec<PairTerm>) -> Self {
        terms.sort_by_key(|t| (t.direction, t.anchor, t.positive));
        let count = |d| terms.iter().filter(|t| t.direction == d).count();
        PairingPlan {
            n_forward: count(Direction::Forward),
            n_backward: count(Direction::Backward),
            terms,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }
}

/// Indices partitioned by key, in key order and batch order within a key.
fn partition<K: Ord>(keys: impl Iterator<Item = K>) -> Vec<Vec<usize>> {
    let mut groups: BTreeMap<K, Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.enumerate() {
        groups.entry(k).or_default().push(i);
    }
    groups.into_values().collect()
}

/// Forward/backward construction over an ordered value within each partition:
/// forward negatives `{n != a : v_a <= v_p < v_n}`, backward negatives
/// `{n != a : v_a >= v_p > v_n}`.
fn ordered_terms(groups: &[Vec<usize>], value: impl Fn(usize) -> f64) -> Vec<PairTerm> {
    let mut terms = Vec::new();
    for members in groups {
        for &a in members {
            let va = value(a);
            for &p in members {
                if p == a {
                    continue;
                }
                let vp = value(p);
                if va <= vp {
                    let negatives: Vec<usize> = members
                        .iter()
                        .copied()
                        .filter(|&n| n != a && vp < value(n))
                        .collect();
                    if !negatives.is_empty() {
                        terms.push(PairTerm {
                            anchor: a,
                            positive: p,
                            negatives,
                            direction: Direction::Forward,
                        });
                    }
                }
                if va >= vp {
                    let negatives: Vec<usize> = members
                        .iter()
                        .copied()
                        .filter(|&n| n != a && vp > value(n))
                        .collect();
                    if !negatives.is_empty() {
                        terms.push(PairTerm {
                            anchor: a,
                            positive: p,
                            negatives,
                            direction: Direction::Backward,
                        });
                    }
                }
            }
        }
    }
    for t in &mut terms {
        t.negatives.sort_unstable();
    }
    terms
}

/// Rank-style construction: negatives are elements at least as far from the
/// anchor as the positive, `{n ∉ {a, p} : |v_a - v_n| >= |v_a - v_p|}`.
fn distance_terms(
    groups: &[Vec<usize>],
    value: impl Fn(usize) -> f64,
    direction: Direction,
) -> Vec<PairTerm> {
    let mut terms = Vec::new();
    for members in groups {
        for &a in members {
            let va = value(a);
            for &p in members {
                if p == a {
                    continue;
                }
                let dap = (va - value(p)).abs();
                let mut negatives: Vec<usize> = members
                    .iter()
                    .copied()
                    .filter(|&n| n != a && n != p && (va - value(n)).abs() >= dap)
                    .collect();
                if !negatives.is_empty() {
                    negatives.sort_unstable();
                    terms.push(PairTerm {
                        anchor: a,
                        positive: p,
                        negatives,
                        direction,
                    });
                }
            }
        }
    }
    terms
}

fn labels_of(batch: &[Sample], score: usize, score_name: &str) -> Result<Vec<f64>> {
    batch
        .iter()
        .map(|s| {
            s.labels
                .get(score)
                .copied()
                .flatten()
                .map(f64::from)
                .ok_or_else(|| Error::MissingLabel {
                    sample_id: s.sample_id,
                    score: score_name.to_string(),
                })
        })
        .collect()
}

/// Chronological pairs within each group id.
pub fn chrono_pairs(batch: &[Sample]) -> PairingPlan {
    let groups = partition(batch.iter().map(|s| s.group_id.as_str()));
    PairingPlan::from_terms(ordered_terms(&groups, |i| batch[i].timestamp))
}

/// Chronological construction applied to ordinal labels of one score type;
/// any sample may be contrasted with any other.
pub fn ordinal_label_pairs(batch: &[Sample], score: usize) -> Result<PairingPlan> {
    let y = labels_of(batch, score, &format!("#{score}"))?;
    let groups = vec![(0..batch.len()).collect::<Vec<_>>()];
    Ok(PairingPlan::from_terms(ordered_terms(&groups, |i| y[i])))
}

/// Rank-N-Contrast pairs ranked by label distance for one score type.
pub fn rnc_label_pairs(batch: &[Sample], score: usize) -> Result<PairingPlan> {
    let y = labels_of(batch, score, &format!("#{score}"))?;
    let groups = vec![(0..batch.len()).collect::<Vec<_>>()];
    Ok(PairingPlan::from_terms(distance_terms(
        &groups,
        |i| y[i],
        Direction::Label,
    )))
}

/// Rank-N-Contrast pairs ranked by raw timestamp distance within each group.
pub fn rnc_time_pairs(batch: &[Sample]) -> PairingPlan {
    let groups = partition(batch.iter().map(|s| s.group_id.as_str()));
    PairingPlan::from_terms(distance_terms(
        &groups,
        |i| batch[i].timestamp,
        Direction::TimeDist,
    ))
}

/// Instance discrimination: each element's positive is the other view of the
/// same observation (same `sample_id`), all remaining elements are negatives.
pub fn simclr_pairs(batch: &[Sample]) -> Result<PairingPlan> {
    let observations = partition(batch.iter().map(|s| s.sample_id));
    let mut twin = vec![usize::MAX; batch.len()];
    for obs in &observations {
        match obs.as_slice() {
            [x, y] if batch[*x].view_id != batch[*y].view_id => {
                twin[*x] = *y;
                twin[*y] = *x;
            }
            _ => {
                return Err(Error::Shape(format!(
                    "sample {} does not have exactly two distinct views in the batch",
                    batch[obs[0]].sample_id
                )))
            }
        }
    }
    let terms = (0..batch.len())
        .filter_map(|a| {
            let p = twin[a];
            let negatives: Vec<usize> = (0..batch.len()).filter(|&n| n != a && n != p).collect();
            (!negatives.is_empty()).then_some(PairTerm {
                anchor: a,
                positive: p,
                negatives,
                direction: Direction::Instance,
            })
        })
        .collect();
    Ok(PairingPlan::from_terms(terms))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample(id: u64, group: &str, t: f64, view: u8, y: Option<u32>) -> Sample {
        Sample {
            sample_id: id,
            group_id: group.into(),
            timestamp: t,
            view_id: view,
            labels: vec![y],
            features: vec![],
        }
    }

    fn term(a: usize, p: usize, neg: &[usize], d: Direction) -> PairTerm {
        PairTerm {
            anchor: a,
            positive: p,
            negatives: neg.to_vec(),
            direction: d,
        }
    }

    #[test]
    fn three_visit_chrono_plan() {
        let batch = vec![
            sample(0, "g", 0.0, 0, None),
            sample(1, "g", 1.0, 0, None),
            sample(2, "g", 3.0, 0, None),
        ];
        let plan = chrono_pairs(&batch);
        assert_eq!(
            plan.terms,
            vec![
                term(0, 1, &[2], Direction::Forward),
                term(2, 1, &[0], Direction::Backward)
            ]
        );
        assert_eq!((plan.n_forward, plan.n_backward), (1, 1));
    }

    #[test]
    fn two_visits_single_view_is_empty() {
        let batch = vec![sample(0, "g", 0.0, 0, None), sample(1, "g", 1.0, 0, None)];
        assert!(chrono_pairs(&batch).is_empty());
    }

    #[test]
    fn two_visits_two_views_contribute() {
        let batch = vec![
            sample(0, "g", 1.0, 0, None),
            sample(0, "g", 1.0, 1, None),
            sample(1, "g", 2.0, 0, None),
            sample(1, "g", 2.0, 1, None),
        ];
        let plan = chrono_pairs(&batch);
        assert!(plan.terms.contains(&term(0, 1, &[2, 3], Direction::Forward)));
        assert!(plan.terms.contains(&term(2, 3, &[0, 1], Direction::Backward)));
        // twins at the same time: negatives need strict ordering vs the positive
        assert!(!plan.terms.iter().any(|t| t.anchor == 0 && t.positive == 2));
    }

    #[test]
    fn chrono_never_mixes_groups() {
        let batch = vec![
            sample(0, "a", 0.0, 0, None),
            sample(1, "b", 1.0, 0, None),
            sample(2, "a", 2.0, 0, None),
            sample(3, "b", 3.0, 0, None),
        ];
        assert!(chrono_pairs(&batch).is_empty());
    }

    #[test]
    fn rnc_label_examples() {
        let batch = vec![
            sample(0, "a", 0.0, 0, Some(0)),
            sample(1, "b", 0.0, 0, Some(1)),
            sample(2, "c", 0.0, 0, Some(2)),
        ];
        let plan = rnc_label_pairs(&batch, 0).unwrap();
        let t = plan
            .terms
            .iter()
            .find(|t| t.anchor == 0 && t.positive == 1)
            .unwrap();
        assert_eq!(t.negatives, vec![2]);

        let equal = vec![
            sample(0, "a", 0.0, 0, Some(3)),
            sample(1, "b", 0.0, 0, Some(3)),
            sample(2, "c", 0.0, 0, Some(3)),
        ];
        let plan = rnc_label_pairs(&equal, 0).unwrap();
        assert_eq!(plan.len(), 6);
        assert!(plan.terms.iter().all(|t| t.negatives.len() == 1));

        assert!(rnc_label_pairs(&batch[..1], 0).unwrap().is_empty());
        let mut missing = batch.clone();
        missing[1].labels[0] = None;
        assert!(matches!(
            rnc_label_pairs(&missing, 0),
            Err(Error::MissingLabel { sample_id: 1, .. })
        ));
    }

    #[test]
    fn rnc_time_examples() {
        let batch = vec![
            sample(0, "g", 0.0, 0, None),
            sample(1, "g", 1.0, 0, None),
            sample(2, "g", 3.0, 0, None),
        ];
        let plan = rnc_time_pairs(&batch);
        let find = |a, p| {
            plan.terms
                .iter()
                .find(|t| t.anchor == a && t.positive == p)
                .map(|t| t.negatives.clone())
        };
        assert_eq!(find(0, 1), Some(vec![2]));
        assert_eq!(find(1, 0), Some(vec![2]));
    }

    #[test]
    fn simclr_counts() {
        let two = vec![
            sample(0, "a", 0.0, 0, None),
            sample(0, "a", 0.0, 1, None),
            sample(1, "b", 0.0, 0, None),
            sample(1, "b", 0.0, 1, None),
        ];
        let plan = simclr_pairs(&two).unwrap();
        assert_eq!(plan.len(), 4);
        assert!(plan.terms.iter().all(|t| t.negatives.len() == 2));
        assert!(simclr_pairs(&two[..2]).unwrap().is_empty());
        assert!(simclr_pairs(&two[..3]).is_err());
    }

    #[test]
    fn ordinal_mirrors_chrono_shape() {
        let by_label = vec![
            sample(0, "a", 9.0, 0, Some(0)),
            sample(1, "b", 9.0, 0, Some(1)),
            sample(2, "c", 9.0, 0, Some(2)),
        ];
        let by_time = vec![
            sample(0, "g", 0.0, 0, None),
            sample(1, "g", 1.0, 0, None),
            sample(2, "g", 3.0, 0, None),
        ];
        assert_eq!(
            ordinal_label_pairs(&by_label, 0).unwrap(),
            chrono_pairs(&by_time)
        );
    }
}

#[cfg(test)]
pub(crate) mod tests_support {
    use crate::cohort::Sample;

    /// Single group, single view, one element per timestamp.
    pub(crate) fn line_batch(times: &[f64]) -> Vec<Sample> {
        times
            .iter()
            .enumerate()
            .map(|(i, &t)| Sample {
                sample_id: i as u64,
                group_id: "g".into(),
                timestamp: t,
                view_id: 0,
                labels: vec![],
                features: vec![],
            })
            .collect()
    }
}

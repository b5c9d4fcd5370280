//! Group-aware mini-batch construction.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;

use crate::cohort::Sample;
use crate::rng::{rng_for, tag};

/// Sampling weight per group: `1 + median` of the group's observed labels
/// (pooled over score types) when `oversample`, otherwise 1.
pub fn group_weights(samples: &[Sample], oversample: bool) -> BTreeMap<String, f64> {
    let mut labels: BTreeMap<String, Vec<u32>> = BTreeMap::new();
    for s in samples {
        let entry = labels.entry(s.group_id.clone()).or_default();
        if oversample {
            entry.extend(s.labels.iter().flatten());
        }
    }
    labels
        .into_iter()
        .map(|(g, mut ls)| {
            let w = if ls.is_empty() {
                1.0
            } else {
                ls.sort_unstable();
                let m = ls.len();
                let median = if m % 2 == 1 {
                    ls[m / 2] as f64
                } else {
                    (ls[m / 2 - 1] + ls[m / 2]) as f64 / 2.0
                };
                1.0 + median
            };
            (g, w)
        })
        .collect()
}

/// Builds one epoch of batches as index lists into `samples`.
///
/// A group's samples always travel together, ordered by time, unless the
/// group alone exceeds `batch_size`, in which case it is cut into
/// consecutive chunks. When everything fits into one batch and a single step
/// is enough, the whole set forms one batch. Otherwise groups are drawn
/// with replacement, proportionally to [`group_weights`], until the epoch
/// holds at least `max(len, min_batches * batch_size)` samples.
pub fn build_batches(
    samples: &[Sample],
    batch_size: usize,
    oversample: bool,
    min_batches: usize,
    seed: u64,
    epoch: u64,
) -> Vec<Vec<usize>> {
    assert!(batch_size > 0, "batch size must be positive");
    if samples.is_empty() {
        return Vec::new();
    }
    let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        members.entry(s.group_id.as_str()).or_default().push(i);
    }
    for idx in members.values_mut() {
        idx.sort_by(|&a, &b| {
            samples[a]
                .timestamp
                .total_cmp(&samples[b].timestamp)
                .then(samples[a].sample_id.cmp(&samples[b].sample_id))
        });
    }
    let mut units: Vec<(usize, Vec<usize>)> = Vec::new();
    for (g, (name, idx)) in members.iter().enumerate() {
        if idx.len() > batch_size {
            log::warn!(
                "group {name} has {} samples, more than the batch size {batch_size}; splitting it",
                idx.len()
            );
            units.extend(idx.chunks(batch_size).map(|c| (g, c.to_vec())));
        } else {
            units.push((g, idx.clone()));
        }
    }

    if samples.len() <= batch_size && min_batches <= 1 {
        return vec![units.into_iter().flat_map(|(_, u)| u).collect()];
    }

    let weights = group_weights(samples, oversample);
    let names: Vec<&str> = members.keys().copied().collect();
    let unit_weights: Vec<f64> = units
        .iter()
        .map(|(g, u)| {
            let name = names[*g];
            weights[name] * u.len() as f64 / members[name].len() as f64
        })
        .collect();
    let dist = WeightedIndex::new(&unit_weights).expect("positive weights");
    let mut rng = rng_for(seed, &[tag("batches"), epoch]);
    let budget = samples.len().max(min_batches * batch_size);

    let mut batches: Vec<Vec<usize>> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    let mut current_groups: Vec<usize> = Vec::new();
    let mut drawn = 0;
    while drawn < budget {
        let (g, unit) = &units[dist.sample(&mut rng)];
        drawn += unit.len();
        if current.len() + unit.len() > batch_size || current_groups.contains(g) {
            batches.push(std::mem::take(&mut current));
            current_groups.clear();
        }
        current.extend_from_slice(unit);
        current_groups.push(*g);
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches.retain(|b| !b.is_empty());
    batches
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: u64, group: &str, t: f64, label: Option<u32>) -> Sample {
        Sample {
            sample_id: id,
            group_id: group.to_string(),
            timestamp: t,
            view_id: 0,
            labels: vec![label],
            features: vec![0.0],
        }
    }

    fn cohort_like(groups: usize, visits: usize) -> Vec<Sample> {
        let mut out = Vec::new();
        for g in 0..groups {
            for v in 0..visits {
                out.push(sample(
                    (g * visits + v) as u64,
                    &format!("p{g}"),
                    v as f64,
                    Some((g % 3) as u32),
                ));
            }
        }
        out
    }

    #[test]
    fn everything_fits_in_one_batch() {
        let s = cohort_like(3, 4);
        let b = build_batches(&s, 64, true, 1, 0, 0);
        assert_eq!(b.len(), 1);
        let mut all = b[0].clone();
        all.sort_unstable();
        assert_eq!(all, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn groups_are_never_split() {
        let s = cohort_like(20, 4);
        for epoch in 0..5 {
            for batch in build_batches(&s, 10, false, 1, 1, epoch) {
                assert!(batch.len() <= 10);
                let mut per_group: BTreeMap<&str, usize> = BTreeMap::new();
                for &i in &batch {
                    *per_group.entry(&s[i].group_id).or_default() += 1;
                }
                assert!(per_group.values().all(|&c| c == 4));
            }
        }
    }

    #[test]
    fn oversized_group_is_chunked() {
        let s = cohort_like(1, 10);
        let b = build_batches(&s, 4, false, 1, 0, 0);
        assert!(b.iter().all(|x| x.len() <= 4 && !x.is_empty()));
        for batch in &b {
            assert!(batch.windows(2).all(|w| w[1] == w[0] + 1));
        }
    }

    #[test]
    fn deterministic_per_seed_and_epoch() {
        let s = cohort_like(30, 3);
        assert_eq!(
            build_batches(&s, 8, true, 1, 5, 2),
            build_batches(&s, 8, true, 1, 5, 2)
        );
        assert_ne!(
            build_batches(&s, 8, true, 1, 5, 2),
            build_batches(&s, 8, true, 1, 5, 3)
        );
    }

    #[test]
    fn min_batches_extends_epoch() {
        let s = cohort_like(4, 2);
        let b = build_batches(&s, 4, false, 6, 0, 0);
        assert!(b.iter().map(Vec::len).sum::<usize>() >= 24);
    }

    #[test]
    fn weights_use_median_label() {
        let s = vec![
            sample(0, "a", 0.0, Some(1)),
            sample(1, "a", 1.0, Some(4)),
            sample(2, "a", 2.0, Some(5)),
            sample(3, "b", 0.0, None),
            sample(4, "c", 0.0, Some(2)),
            sample(5, "c", 1.0, Some(3)),
        ];
        let w = group_weights(&s, true);
        assert_eq!(w["a"], 5.0);
        assert_eq!(w["b"], 1.0);
        assert_eq!(w["c"], 3.5);
        assert!(group_weights(&s, false).values().all(|&v| v == 1.0));
    }
}

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_for, tag};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub point: f64,
    pub low: f64,
    pub high: f64,
    /// Resamples discarded because the statistic was undefined on them.
    pub redraws: usize,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile 95% interval over `b` seeded resamples of `items`.
///
/// With `clusters`, each resample draws whole clusters (for example all
/// pairs of one patient) with replacement; otherwise single items. A
/// statistic returning `None` on a resample triggers a redraw; more than
/// `b / 10` redraws is an error. The interval is widened if needed so that
/// it contains the point estimate.
pub fn bootstrap_ci<T, F>(
    items: &[T],
    clusters: Option<&[usize]>,
    statistic: F,
    b: usize,
    seed: u64,
) -> Result<BootstrapCi>
where
    T: Clone + Sync,
    F: Fn(&[T]) -> Option<f64> + Sync,
{
    if b < 100 {
        return Err(Error::Config(format!("bootstrap needs at least 100 resamples, got {b}")));
    }
    let point = statistic(items)
        .ok_or_else(|| Error::Degenerate("statistic undefined on the full sample".into()))?;
    let groups: Vec<Vec<usize>> = match clusters {
        Some(c) => {
            if c.len() != items.len() {
                return Err(Error::Shape("cluster labels do not match items".into()));
            }
            let mut map: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
            for (i, &g) in c.iter().enumerate() {
                map.entry(g).or_default().push(i);
            }
            map.into_values().collect()
        }
        None => (0..items.len()).map(|i| vec![i]).collect(),
    };
    let cap = b / 10;

    let one = |r: usize| -> (Option<f64>, usize) {
        let mut redraws = 0;
        for attempt in 0..=cap as u64 {
            let mut rng = rng_for(seed, &[tag("bootstrap"), r as u64, attempt]);
            let mut sample = Vec::with_capacity(items.len());
            for _ in 0..groups.len() {
                let g = &groups[rng.random_range(0..groups.len())];
                sample.extend(g.iter().map(|&i| items[i].clone()));
            }
            match statistic(&sample) {
                Some(v) if v.is_finite() => return (Some(v), redraws),
                _ => redraws += 1,
            }
        }
        (None, redraws)
    };

    #[cfg(feature = "parallel")]
    let results: Vec<(Option<f64>, usize)> = {
        use rayon::prelude::*;
        (0..b).into_par_iter().map(one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<(Option<f64>, usize)> = (0..b).map(one).collect();

    let redraws: usize = results.iter().map(|r| r.1).sum();
    if redraws > cap || results.iter().any(|r| r.0.is_none()) {
        return Err(Error::Degenerate(format!(
            "statistic undefined on {redraws} of {b} resamples"
        )));
    }
    let mut values: Vec<f64> = results.into_iter().filter_map(|r| r.0).collect();
    values.sort_by(f64::total_cmp);
    let low = quantile_sorted(&values, 0.025).min(point);
    let high = quantile_sorted(&values, 0.975).max(point);
    Ok(BootstrapCi {
        point,
        low,
        high,
        redraws,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_statistic_gives_point_interval() {
        let xs: Vec<f64> = (0..20).map(f64::from).collect();
        let ci = bootstrap_ci(&xs, None, |_| Some(3.0), 200, 1).unwrap();
        assert_eq!((ci.low, ci.point, ci.high), (3.0, 3.0, 3.0));
    }

    #[test]
    fn interval_contains_point() {
        let xs: Vec<f64> = (0..30).map(|i| (i * i % 17) as f64).collect();
        let mean = |s: &[f64]| Some(s.iter().sum::<f64>() / s.len() as f64);
        let ci = bootstrap_ci(&xs, None, mean, 500, 4).unwrap();
        assert!(ci.low <= ci.point && ci.point <= ci.high);
        assert!(ci.low < ci.high);
    }

    #[test]
    fn clustered_draws_whole_clusters() {
        let xs = vec![1.0, 1.0, 5.0, 5.0];
        let clusters = [0, 0, 1, 1];
        let even_count = |s: &[f64]| {
            assert_eq!(s.len(), 4);
            Some(s.iter().filter(|&&v| v == 1.0).count() as f64)
        };
        let ci = bootstrap_ci(&xs, Some(&clusters), even_count, 200, 0).unwrap();
        assert!([0.0, 2.0, 4.0].contains(&ci.low));
        assert!([0.0, 2.0, 4.0].contains(&ci.high));
    }

    #[test]
    fn mostly_undefined_statistic_is_an_error() {
        let xs: Vec<f64> = (0..10).map(f64::from).collect();
        let full_len = xs.len();
        let picky = move |s: &[f64]| {
            let distinct: std::collections::BTreeSet<u64> = s.iter().map(|v| v.to_bits()).collect();
            (distinct.len() == full_len).then_some(1.0)
        };
        assert!(bootstrap_ci(&xs, None, picky, 100, 0).is_err());
    }

    #[test]
    fn quantiles_interpolate() {
        let s = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(quantile_sorted(&s, 0.5), 1.5);
        assert_eq!(quantile_sorted(&s, 0.0), 0.0);
        assert_eq!(quantile_sorted(&s, 1.0), 3.0);
    }
}

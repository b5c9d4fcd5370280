//! Two-view stochastic feature augmentation.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::cohort::Sample;
use crate::rng::Rng;

/// Returns two independently perturbed copies of `sample` with view ids 0
/// and 1; metadata and labels are kept. Each coordinate gets Gaussian noise
/// of standard deviation `noise`, and is replaced by the sample's mean
/// feature value with probability `dropout`.
pub fn augment_two_views(sample: &Sample, noise: f64, dropout: f64, rng: &mut Rng) -> (Sample, Sample) {
    let fill = if sample.features.is_empty() {
        0.0
    } else {
        sample.features.iter().sum::<f64>() / sample.features.len() as f64
    };
    let mut view = |id: u8| {
        let mut s = sample.clone();
        s.view_id = id;
        perturb(&mut s.features, noise, dropout, fill, rng);
        s
    };
    let a = view(0);
    let b = view(1);
    (a, b)
}

pub(crate) fn perturb(x: &mut [f64], noise: f64, dropout: f64, fill: f64, rng: &mut Rng) {
    let normal = (noise > 0.0).then(|| Normal::new(0.0, noise).expect("finite noise"));
    for v in x.iter_mut() {
        if dropout > 0.0 && rng.random::<f64>() < dropout {
            *v = fill;
        } else if let Some(n) = &normal {
            *v += n.sample(rng);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    fn sample() -> Sample {
        Sample {
            sample_id: 9,
            group_id: "p/roi0".into(),
            timestamp: 2.5,
            view_id: 0,
            labels: vec![Some(3), None],
            features: vec![0.2, 0.4, 0.6, 0.8],
        }
    }

    #[test]
    fn zero_strength_gives_identical_views() {
        let s = sample();
        let (a, b) = augment_two_views(&s, 0.0, 0.0, &mut rng_for(0, &[]));
        assert_eq!(a.features, s.features);
        assert_eq!(b.features, s.features);
        assert_eq!((a.view_id, b.view_id), (0, 1));
        assert_eq!(a.sample_id, b.sample_id);
        assert_eq!(a.labels, s.labels);
        assert_eq!(b.timestamp, s.timestamp);
    }

    #[test]
    fn views_differ_under_noise() {
        let s = sample();
        let (a, b) = augment_two_views(&s, 0.1, 0.1, &mut rng_for(1, &[]));
        assert_ne!(a.features, b.features);
        assert_eq!(a.group_id, s.group_id);
    }

    #[test]
    fn full_dropout_fills_with_mean() {
        let s = sample();
        let (a, _) = augment_two_views(&s, 0.0, 1.0, &mut rng_for(2, &[]));
        assert!(a.features.iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }
}

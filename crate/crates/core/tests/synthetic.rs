use std::collections::BTreeMap;

use chronocon::synthetic::{generate, true_severity, CohortConfig};

fn config(n: usize, seed: u64) -> CohortConfig {
    CohortConfig {
        n_patients: n,
        seed,
        ..CohortConfig::default()
    }
}

#[test]
fn median_visit_count_matches_configuration() {
    let (cohort, _) = generate(&config(1000, 5)).unwrap();
    let mut visits: BTreeMap<&str, std::collections::BTreeSet<u64>> = BTreeMap::new();
    for s in &cohort.samples {
        visits
            .entry(cohort.patient_of(s))
            .or_default()
            .insert(s.timestamp.to_bits());
    }
    let mut counts: Vec<usize> = visits.values().map(|v| v.len()).collect();
    counts.sort_unstable();
    let median = counts[counts.len() / 2];
    assert_eq!(counts.len(), 1000);
    assert!((3..=5).contains(&median), "median {median}");
}

#[test]
fn labels_track_latent_severity() {
    let cfg = CohortConfig {
        reader_noise_prob: 0.0,
        label_max: 30,
        ..config(300, 6)
    };
    let (cohort, traj) = generate(&cfg).unwrap();
    let top = traj.values().flat_map(|t| t.severity.iter().copied()).fold(0.0, f64::max);
    assert!(top <= 30.0);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for s in &cohort.samples {
        let sev = true_severity(&traj, &s.group_id, s.timestamp).unwrap();
        let label = s.labels[0].unwrap();
        assert_eq!(label, sev.round().clamp(0.0, 30.0) as u32);
        xs.push(sev);
        ys.push(f64::from(label));
    }
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    assert!(cov / (vx * vy).sqrt() > 0.9);
}

#[test]
fn reader_noise_creates_label_decreases() {
    let (cohort, traj) = generate(&config(200, 7)).unwrap();
    for t in traj.values() {
        assert!(t.visit_times.windows(2).all(|w| w[0] < w[1]));
        assert!(t.severity.windows(2).all(|w| w[0] <= w[1]));
    }
    let mut by_group: BTreeMap<&str, Vec<(f64, u32)>> = BTreeMap::new();
    for s in &cohort.samples {
        by_group
            .entry(&s.group_id)
            .or_default()
            .push((s.timestamp, s.labels[0].unwrap()));
    }
    let decreases = by_group
        .values()
        .flat_map(|v| v.windows(2).map(|w| i64::from(w[1].1) - i64::from(w[0].1)))
        .filter(|&d| d < 0)
        .count();
    assert!(decreases > 0);
}

#[test]
fn degenerate_process_and_determinism() {
    let cfg = CohortConfig {
        noise_sigma: 0.0,
        acquisition_sigma: 0.0,
        reader_noise_prob: 0.0,
        jump_rate: 0.0,
        ..config(10, 8)
    };
    let (cohort, _) = generate(&cfg).unwrap();
    let mut first: BTreeMap<&str, (&Vec<f64>, &Vec<Option<u32>>)> = BTreeMap::new();
    for s in &cohort.samples {
        let f = first.entry(&s.group_id).or_insert((&s.features, &s.labels));
        assert_eq!(f.0, &s.features);
        assert_eq!(f.1, &s.labels);
    }
    assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
    assert!(generate(&CohortConfig { severity_dims: 40, ..cfg }).is_err());
}

mod common;

use chronocon::analysis::{
    bucket_medians, delta_histogram, emit_report, medians_strictly_decreasing, pca_project, run_sweep,
    similarity_vs_scorediff, spearman, Arm, SweepSpec, REPORT_FILES,
};
use chronocon::cohort::split_patients;
use chronocon::config::Config;
use chronocon::synthetic::generate;
use chronocon::training::init_encoder;
use common::rng;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

fn small_config() -> Config {
    let mut c = Config::default();
    c.cohort.n_patients = 20;
    c.train.pretrain_epochs = 3;
    c.train.max_epochs = 5;
    c.eval.bootstrap_resamples = 200;
    c
}

#[test]
fn isotropic_data_spreads_variance_evenly() {
    let mut r = rng(60);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let d = 5;
    let x = Array2::from_shape_fn((20000, d), |_| normal.sample(&mut r));
    let pca = pca_project(x.view(), d).unwrap();
    for e in &pca.explained {
        assert!((e - 1.0 / d as f64).abs() < 0.02, "{:?}", pca.explained);
    }
    assert!(pca.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    for row in pca.components.rows() {
        let big = row.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        assert!(big > 0.0);
    }
}

#[test]
fn line_data_has_one_component() {
    let x = Array2::from_shape_fn((50, 3), |(i, j)| i as f64 * [1.0, -2.0, 0.5][j]);
    let pca = pca_project(x.view(), 2).unwrap();
    assert!((pca.explained[0] - 1.0).abs() < 1e-9);
    assert!(pca.rank_deficient);
}

#[test]
fn similarity_table_baselines() {
    let config = Config::default();
    let raw = generate(&config.cohort).unwrap().0;
    let c = split_patients(&raw, config.split.fractions(), 0).unwrap();
    let enc = init_encoder(&c, &config.train).unwrap();
    let rows = similarity_vs_scorediff(&enc, &c.samples, 0, config.train.similarity).unwrap();
    let hist = delta_histogram(&rows);
    assert!(hist.keys().any(|&d| d < 0));
    assert_eq!(hist.values().sum::<usize>(), rows.len());
    assert!(rows.iter().all(|r| r.t1 < r.t2));

    let sims: Vec<f64> = rows.iter().map(|r| r.similarity).collect();
    let mut deltas: Vec<f64> = rows.iter().map(|r| r.delta_label.abs() as f64).collect();
    deltas.shuffle(&mut rng(61));
    assert!(spearman(&sims, &deltas).unwrap().abs() < 0.05);
    let medians = bucket_medians(&rows);
    assert!(medians.keys().all(|d| hist.contains_key(d)));
}

#[test]
fn single_cell_sweep_and_report() {
    let config = small_config();
    let raw = generate(&config.cohort).unwrap().0;
    let c = split_patients(&raw, config.split.fractions(), 0).unwrap();
    let spec = SweepSpec {
        n_labeled: vec![3],
        arms: vec![Arm::Scratch],
        repetitions: 1,
    };
    let rows = run_sweep(&spec, &c, &config).unwrap();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].is_ok(), "{}", rows[0].status);

    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    emit_report(&rows, None, a.path(), None).unwrap();
    emit_report(&rows, None, b.path(), None).unwrap();
    for name in REPORT_FILES {
        let x = std::fs::read(a.path().join(name)).unwrap();
        assert_eq!(x, std::fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    let table2 = std::fs::read_to_string(a.path().join("table2.csv")).unwrap();
    let header: Vec<&str> = table2.lines().next().unwrap().split(',').collect();
    for col in ["n_labeled", "cs_rmse", "cs_icc", "pr_rmse", "pr_icc", "cs_icc_ci_half", "pr_rmse_ci_half"] {
        assert!(header.contains(&col), "{col}");
    }

    let empty = tempfile::tempdir().unwrap();
    emit_report(&[], None, empty.path(), None).unwrap();
    let summary = std::fs::read_to_string(empty.path().join("summary.md")).unwrap();
    assert!(summary.contains("zero cells"));
}

#[test]
fn median_monotonicity_helper() {
    let m = [(0, -1.0), (1, -2.0), (2, -2.5), (3, -4.0)].into_iter().collect();
    assert!(medians_strictly_decreasing(&m, 3));
    let flat = [(0, -1.0), (1, -2.0), (2, -2.0), (3, -4.0)].into_iter().collect();
    assert!(!medians_strictly_decreasing(&flat, 3));
}

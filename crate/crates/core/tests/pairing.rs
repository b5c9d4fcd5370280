mod common;

use chronocon::pairing::{
    chrono_pairs, ordinal_label_pairs, rnc_label_pairs, rnc_time_pairs, simclr_pairs, Direction,
};
use common::*;

#[test]
fn every_variant_matches_triple_enumeration() {
    let mut r = rng(1);
    for _ in 0..500 {
        let b = random_batch(&mut r, 10, 3, false);
        let plans = [
            (chrono_pairs(&b), chrono_oracle(&b)),
            (ordinal_label_pairs(&b, 0).unwrap(), ordinal_oracle(&b)),
            (rnc_label_pairs(&b, 0).unwrap(), rnc_label_oracle(&b)),
            (rnc_time_pairs(&b), rnc_time_oracle(&b)),
        ];
        for (plan, oracle) in plans {
            assert!(plan_well_formed(&plan));
            assert_eq!(term_set(&plan), oracle, "batch {b:?}");
        }
        let tb = random_batch(&mut r, 10, 3, true);
        let plan = simclr_pairs(&tb).unwrap();
        assert!(plan_well_formed(&plan));
        assert_eq!(term_set(&plan), simclr_oracle(&tb));
    }
}

#[test]
fn augmented_two_visit_group_contributes() {
    let b = vec![
        sample(0, "g", 1.0, 0, None),
        sample(0, "g", 1.0, 1, None),
        sample(1, "g", 2.0, 0, None),
        sample(1, "g", 2.0, 1, None),
    ];
    let plan = chrono_pairs(&b);
    assert!(!plan.is_empty());
    let t = plan
        .terms
        .iter()
        .find(|t| t.direction == Direction::Forward && t.anchor == 0 && t.positive == 1)
        .expect("view0 -> view1 at the first visit");
    assert_eq!(t.negatives, vec![2, 3]);
}

#[test]
fn rnc_time_depends_on_spacing_but_chrono_does_not() {
    let build = |ts: [f64; 4]| -> Vec<_> {
        ts.iter()
            .enumerate()
            .map(|(i, &t)| sample(i as u64, "g", t, 0, None))
            .collect()
    };
    let a = build([0.0, 1.0, 2.0, 10.0]);
    let b = build([0.0, 1.0, 8.0, 1000.0]);
    assert_eq!(chrono_pairs(&a), chrono_pairs(&b));
    assert_ne!(rnc_time_pairs(&a), rnc_time_pairs(&b));
    let c = build([0.0, 1.0, 3.0, 4.0]);
    let d = build([0.0, 1.0, 27.0, 64.0]);
    assert_eq!(chrono_pairs(&c), chrono_pairs(&d));
}

#[test]
fn rnc_time_three_visit_examples() {
    let b: Vec<_> = [0.0, 1.0, 3.0]
        .iter()
        .enumerate()
        .map(|(i, &t)| sample(i as u64, "g", t, 0, None))
        .collect();
    let plan = rnc_time_pairs(&b);
    let negs = |a, p| {
        plan.terms
            .iter()
            .find(|t| t.anchor == a && t.positive == p)
            .map(|t| t.negatives.clone())
    };
    assert_eq!(negs(0, 1), Some(vec![2]));
    assert_eq!(negs(1, 0), Some(vec![2]));
}

#[test]
fn chrono_invariant_under_per_group_monotone_retiming() {
    let mut r = rng(2);
    let transforms: [fn(f64) -> f64; 3] = [|t| t * t * t + 7.0, |t| (t + 1.0).ln(), |t| 5.0 * t.exp()];
    for i in 0..200 {
        let b = random_batch(&mut r, 10, 3, false);
        let mut moved = b.clone();
        for s in &mut moved {
            let g: usize = s.group_id[1..2].parse().unwrap();
            s.timestamp = transforms[(g + i) % 3](s.timestamp);
        }
        assert_eq!(chrono_pairs(&b), chrono_pairs(&moved));
    }
}

#[test]
fn chrono_terms_stay_within_one_group() {
    let mut r = rng(3);
    for _ in 0..200 {
        let b = random_batch(&mut r, 10, 3, false);
        for t in chrono_pairs(&b).terms {
            let g = &b[t.anchor].group_id;
            assert_eq!(&b[t.positive].group_id, g);
            assert!(t.negatives.iter().all(|&n| &b[n].group_id == g));
        }
    }
}

#[test]
fn label_variants_reject_missing_labels() {
    let b = vec![sample(0, "g", 0.0, 0, Some(1)), sample(1, "g", 1.0, 0, None)];
    assert!(rnc_label_pairs(&b, 0).is_err());
    assert!(ordinal_label_pairs(&b, 0).is_err());
}

#[test]
fn rnc_label_examples() {
    let b: Vec<_> = (0..3).map(|i| sample(i, "g", 0.0, 0, Some(i as u32))).collect();
    let plan = rnc_label_pairs(&b, 0).unwrap();
    let t = plan.terms.iter().find(|t| t.anchor == 0 && t.positive == 1).unwrap();
    assert_eq!(t.negatives, vec![2]);

    let equal: Vec<_> = (0..4).map(|i| sample(i, "g", 0.0, 0, Some(2))).collect();
    let plan = rnc_label_pairs(&equal, 0).unwrap();
    assert_eq!(plan.len(), 12);
    assert!(plan.terms.iter().all(|t| t.negatives.len() == 2));

    assert!(rnc_label_pairs(&b[..1], 0).unwrap().is_empty());
}

#[test]
fn ordinal_reuses_the_chronological_shape() {
    let by_label: Vec<_> = [0u32, 1, 2]
        .iter()
        .enumerate()
        .map(|(i, &y)| sample(i as u64, &format!("p{i}"), 0.0, 0, Some(y)))
        .collect();
    let by_time: Vec<_> = [0.0, 1.0, 3.0]
        .iter()
        .enumerate()
        .map(|(i, &t)| sample(i as u64, "g", t, 0, None))
        .collect();
    assert_eq!(ordinal_label_pairs(&by_label, 0).unwrap(), chrono_pairs(&by_time));
}

#[test]
fn simclr_counts_and_errors() {
    for n in 1..6u64 {
        let b: Vec<_> = (0..n)
            .flat_map(|i| [sample(i, "g", 0.0, 0, None), sample(i, "g", 0.0, 1, None)])
            .collect();
        let plan = simclr_pairs(&b).unwrap();
        if n == 1 {
            assert!(plan.is_empty());
        } else {
            assert_eq!(plan.len() as u64, 2 * n);
            assert!(plan.terms.iter().all(|t| t.negatives.len() as u64 == 2 * n - 2));
        }
    }
    let unpaired = vec![sample(0, "g", 0.0, 0, None), sample(1, "g", 0.0, 0, None)];
    assert!(simclr_pairs(&unpaired).is_err());
}

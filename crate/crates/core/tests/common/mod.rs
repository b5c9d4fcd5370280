//! Independent oracles shared by the integration tests: brute-force pair
//! enumeration, scalar loss arithmetic and central finite differences.

#![allow(dead_code)]

use std::collections::BTreeSet;

use chronocon::cohort::Sample;
use chronocon::pairing::{Direction, PairTerm, PairingPlan};
use ndarray::Array2;
use rand::Rng as _;

pub type Rng = chronocon::rng::Rng;

pub fn rng(seed: u64) -> Rng {
    chronocon::rng::rng_for(seed, &[0x7e57])
}

pub fn sample(id: u64, group: &str, t: f64, view: u8, label: Option<u32>) -> Sample {
    Sample {
        sample_id: id,
        group_id: group.to_string(),
        timestamp: t,
        view_id: view,
        labels: vec![label],
        features: Vec::new(),
    }
}

/// Up to `max_len` elements in up to `max_groups` groups. Timestamps and
/// labels come from small integer ranges so ties are frequent. With `twins`,
/// every observation appears as two views and the batch length is even.
pub fn random_batch(rng: &mut Rng, max_len: usize, max_groups: usize, twins: bool) -> Vec<Sample> {
    let groups = rng.random_range(1..=max_groups);
    let mut batch = Vec::new();
    let mut id = 0u64;
    let target = rng.random_range(1..=max_len);
    while batch.len() < target {
        let g = format!("p{}/r", rng.random_range(0..groups));
        let t = f64::from(rng.random_range(0..5u32));
        let y = rng.random_range(0..4u32);
        let views = if twins {
            if batch.len() + 2 > max_len {
                break;
            }
            2
        } else if batch.len() + 2 <= target && rng.random_bool(0.3) {
            2
        } else {
            1
        };
        for v in 0..views {
            batch.push(sample(id, &g, t, v, Some(y)));
        }
        id += 1;
    }
    if twins && batch.is_empty() {
        batch.push(sample(0, "p0/r", 0.0, 0, Some(0)));
        batch.push(sample(0, "p0/r", 0.0, 1, Some(0)));
    }
    batch
}

/// Canonical form of a plan for set comparison.
pub type TermSet = BTreeSet<(Direction, usize, usize, Vec<usize>)>;

pub fn term_set(plan: &PairingPlan) -> TermSet {
    plan.terms
        .iter()
        .map(|t| (t.direction, t.anchor, t.positive, t.negatives.clone()))
        .collect()
}

/// Structural checks every plan must satisfy in addition to matching its
/// oracle: sorted terms, sorted negatives, no self-reference, counts.
pub fn plan_well_formed(plan: &PairingPlan) -> bool {
    let keys: Vec<_> = plan.terms.iter().map(|t| (t.direction, t.anchor, t.positive)).collect();
    let sorted = keys.windows(2).all(|w| w[0] < w[1]);
    let terms_ok = plan.terms.iter().all(|t| {
        !t.negatives.is_empty()
            && t.anchor != t.positive
            && !t.negatives.contains(&t.anchor)
            && !t.negatives.contains(&t.positive)
            && t.negatives.windows(2).all(|w| w[0] < w[1])
    });
    let nf = plan.terms.iter().filter(|t| t.direction == Direction::Forward).count();
    let nb = plan.terms.iter().filter(|t| t.direction == Direction::Backward).count();
    sorted && terms_ok && nf == plan.n_forward && nb == plan.n_backward
}

/// Enumerates every triple `(a, p, n)` and keeps those satisfying `keep`.
/// A pair is emitted only when at least one negative qualifies.
fn enumerate(
    len: usize,
    pair_ok: impl Fn(usize, usize) -> bool,
    keep: impl Fn(usize, usize, usize) -> bool,
    direction: Direction,
) -> TermSet {
    let mut out = TermSet::new();
    for a in 0..len {
        for p in 0..len {
            if a == p || !pair_ok(a, p) {
                continue;
            }
            let negs: Vec<usize> = (0..len)
                .filter(|&n| n != a && n != p && keep(a, p, n))
                .collect();
            if !negs.is_empty() {
                out.insert((direction, a, p, negs));
            }
        }
    }
    out
}

fn ordered_oracle(len: usize, same: impl Fn(usize, usize) -> bool, v: impl Fn(usize) -> f64) -> TermSet {
    let mut out = enumerate(
        len,
        |a, p| same(a, p) && v(a) <= v(p),
        |a, p, n| same(a, n) && v(a) <= v(p) && v(p) < v(n),
        Direction::Forward,
    );
    out.extend(enumerate(
        len,
        |a, p| same(a, p) && v(a) >= v(p),
        |a, p, n| same(a, n) && v(a) >= v(p) && v(p) > v(n),
        Direction::Backward,
    ));
    out
}

fn distance_oracle(
    len: usize,
    same: impl Fn(usize, usize) -> bool,
    v: impl Fn(usize) -> f64,
    direction: Direction,
) -> TermSet {
    enumerate(
        len,
        &same,
        |a, p, n| same(a, n) && (v(a) - v(n)).abs() >= (v(a) - v(p)).abs(),
        direction,
    )
}

fn label(s: &Sample) -> f64 {
    f64::from(s.labels[0].expect("oracle batches are fully labeled"))
}

pub fn chrono_oracle(b: &[Sample]) -> TermSet {
    ordered_oracle(b.len(), |i, j| b[i].group_id == b[j].group_id, |i| b[i].timestamp)
}

pub fn ordinal_oracle(b: &[Sample]) -> TermSet {
    ordered_oracle(b.len(), |_, _| true, |i| label(&b[i]))
}

pub fn rnc_label_oracle(b: &[Sample]) -> TermSet {
    distance_oracle(b.len(), |_, _| true, |i| label(&b[i]), Direction::Label)
}

pub fn rnc_time_oracle(b: &[Sample]) -> TermSet {
    distance_oracle(
        b.len(),
        |i, j| b[i].group_id == b[j].group_id,
        |i| b[i].timestamp,
        Direction::TimeDist,
    )
}

pub fn simclr_oracle(b: &[Sample]) -> TermSet {
    let mut out = TermSet::new();
    for a in 0..b.len() {
        for p in 0..b.len() {
            if a != p && b[a].sample_id == b[p].sample_id {
                let negs: Vec<usize> = (0..b.len()).filter(|&n| n != a && n != p).collect();
                if !negs.is_empty() {
                    out.insert((Direction::Instance, a, p, negs));
                }
            }
        }
    }
    out
}

/// Euclidean distance by explicit summation.
pub fn dist(u: &[f64], v: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..u.len() {
        s += (u[i] - v[i]) * (u[i] - v[i]);
    }
    s.sqrt()
}

/// `-log(exp(l_p) / (exp(l_p) + sum exp(l_n)))` for logits `l_p` and `l_n`,
/// shifted by the maximum.
pub fn scalar_term(lp: f64, ln: &[f64]) -> f64 {
    let mut m = lp;
    for &x in ln {
        if x > m {
            m = x;
        }
    }
    let mut denom = (lp - m).exp();
    for &x in ln {
        denom += (x - m).exp();
    }
    -(lp - m) + denom.ln()
}

/// Loss of one term under negative-distance similarity.
pub fn scalar_term_l2(term: &PairTerm, emb: &Array2<f64>, tau: f64) -> f64 {
    let row = |i: usize| emb.row(i).to_vec();
    let a = row(term.anchor);
    let lp = -dist(&a, &row(term.positive)) / tau;
    let ln: Vec<f64> = term.negatives.iter().map(|&n| -dist(&a, &row(n)) / tau).collect();
    scalar_term(lp, &ln)
}

pub fn random_matrix(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| scale * (rng.random::<f64>() * 2.0 - 1.0))
}

/// Central differences of `f` at `x` with step `eps`.
pub fn finite_difference(x: &Array2<f64>, eps: f64, f: impl Fn(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut g = Array2::zeros(x.raw_dim());
    let mut y = x.clone();
    for idx in 0..x.len() {
        let (i, j) = (idx / x.ncols(), idx % x.ncols());
        let orig = y[[i, j]];
        y[[i, j]] = orig + eps;
        let up = f(&y);
        y[[i, j]] = orig - eps;
        let down = f(&y);
        y[[i, j]] = orig;
        g[[i, j]] = (up - down) / (2.0 * eps);
    }
    g
}

/// `||a - b|| / max(||a||, ||b||)`, 0 when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

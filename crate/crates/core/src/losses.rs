//! Contrastive loss values and exact gradients with respect to embeddings.
//!
//! Every variant shares the per-pair term
//! `-log( exp(s_ap) / (exp(s_ap) + sum_n exp(s_an)) )`, evaluated with a
//! max-shifted log-sum-exp. Variants differ in the plan that feeds the terms
//! and in normalization: the chronological and ordinal plans use separate
//! forward/backward means that are summed, everything else a single mean.

use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairing::{Direction, PairTerm, PairingPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityKind {
    /// Negative Euclidean distance.
    NegL2,
    /// Negative squared Euclidean distance.
    NegSquaredL2,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub kind: SimilarityKind,
    pub temperature: f64,
}

impl Default for Similarity {
    fn default() -> Self {
        Self {
            kind: SimilarityKind::NegL2,
            temperature: 1.0,
        }
    }
}

impl Similarity {
    pub fn new(kind: SimilarityKind, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        Ok(Self { kind, temperature })
    }

    /// Cosine similarity at the temperature used for instance discrimination.
    pub fn cosine() -> Self {
        Self {
            kind: SimilarityKind::Cosine,
            temperature: 0.07,
        }
    }
}

pub fn similarity(u: ArrayView1<f64>, v: ArrayView1<f64>, sim: Similarity) -> Result<f64> {
    let tau = sim.temperature;
    match sim.kind {
        SimilarityKind::NegL2 => Ok(-l2(u, v) / tau),
        SimilarityKind::NegSquaredL2 => Ok(-l2(u, v).powi(2) / tau),
        SimilarityKind::Cosine => {
            let (nu, nv) = (u.dot(&u).sqrt(), v.dot(&v).sqrt());
            if nu == 0.0 || nv == 0.0 {
                return Err(Error::Degenerate(
                    "cosine similarity of a zero vector".into(),
                ));
            }
            Ok(u.dot(&v) / (nu * nv * tau))
        }
    }
}

fn l2(u: ArrayView1<f64>, v: ArrayView1<f64>) -> f64 {
    u.iter()
        .zip(v.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Adds `scale * ds/du` to `gu` and `scale * ds/dv` to `gv`.
fn similarity_backward(
    u: ArrayView1<f64>,
    v: ArrayView1<f64>,
    sim: Similarity,
    scale: f64,
    mut gu: ArrayViewMut1<f64>,
    mut gv: ArrayViewMut1<f64>,
) {
    let tau = sim.temperature;
    match sim.kind {
        SimilarityKind::NegL2 => {
            let r = l2(u, v);
            if r == 0.0 {
                // minimal-norm subgradient at coincident embeddings
                return;
            }
            let c = -scale / (r * tau);
            for i in 0..u.len() {
                let d = u[i] - v[i];
                gu[i] += c * d;
                gv[i] -= c * d;
            }
        }
        SimilarityKind::NegSquaredL2 => {
            let c = -2.0 * scale / tau;
            for i in 0..u.len() {
                let d = u[i] - v[i];
                gu[i] += c * d;
                gv[i] -= c * d;
            }
        }
        SimilarityKind::Cosine => {
            let (nu, nv) = (u.dot(&u).sqrt(), v.dot(&v).sqrt());
            let s = u.dot(&v) / (nu * nv * tau);
            let k = 1.0 / (nu * nv * tau);
            for i in 0..u.len() {
                gu[i] += scale * (k * v[i] - s * u[i] / (nu * nu));
                gv[i] += scale * (k * u[i] - s * v[i] / (nv * nv));
            }
        }
    }
}

/// Stable `log(sum exp(x))`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn term_logits(term: &PairTerm, emb: ArrayView2<f64>, sim: Similarity) -> Result<Vec<f64>> {
    let a = emb.row(term.anchor);
    std::iter::once(term.positive)
        .chain(term.negatives.iter().copied())
        .map(|x| similarity(a, emb.row(x), sim))
        .collect()
}

/// Value of one per-pair term.
pub fn pair_term_loss(term: &PairTerm, emb: ArrayView2<f64>, sim: Similarity) -> Result<f64> {
    let logits = term_logits(term, emb, sim)?;
    Ok(log_sum_exp(&logits) - logits[0])
}

/// Term value; accumulates `weight * d(term)/d(emb)` into `grad`.
fn term_forward_backward(
    term: &PairTerm,
    emb: ArrayView2<f64>,
    sim: Similarity,
    weight: f64,
    grad: &mut Array2<f64>,
) -> Result<f64> {
    let logits = term_logits(term, emb, sim)?;
    let lse = log_sum_exp(&logits);
    let value = lse - logits[0];
    let a = term.anchor;
    for (j, x) in std::iter::once(term.positive)
        .chain(term.negatives.iter().copied())
        .enumerate()
    {
        let q = (logits[j] - lse).exp();
        let dlogit = if j == 0 { q - 1.0 } else { q };
        if dlogit == 0.0 {
            continue;
        }
        // a != x is guaranteed by the plan invariants
        let (ga, gx) = two_rows_mut(grad, a, x);
        similarity_backward(
            emb.row(a),
            emb.row(x),
            sim,
            weight * dlogit,
            ga,
            gx,
        );
    }
    Ok(value)
}

fn two_rows_mut(
    m: &mut Array2<f64>,
    i: usize,
    j: usize,
) -> (ArrayViewMut1<'_, f64>, ArrayViewMut1<'_, f64>) {
    assert_ne!(i, j);
    let (lo, hi) = (i.min(j), i.max(j));
    let (top, bottom) = m.view_mut().split_at(ndarray::Axis(0), hi);
    let r_lo = top.index_axis_move(ndarray::Axis(0), lo);
    let r_hi = bottom.index_axis_move(ndarray::Axis(0), 0);
    if i < j {
        (r_lo, r_hi)
    } else {
        (r_hi, r_lo)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    /// d(value)/d(embeddings), same shape as the embeddings.
    pub grad: Array2<f64>,
    /// Per-term values in plan order.
    pub term_values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Normalization {
    /// Separate means over forward and backward terms, summed.
    Directional,
    Mean,
}

fn evaluate(
    plan: &PairingPlan,
    emb: ArrayView2<f64>,
    sim: Similarity,
    norm: Normalization,
) -> Result<LossOutput> {
    let mut grad = Array2::zeros(emb.raw_dim());
    let mut term_values = Vec::with_capacity(plan.terms.len());
    let mut value = 0.0;
    let n_total = plan.terms.len();
    for term in &plan.terms {
        let count = match (norm, term.direction) {
            (Normalization::Directional, Direction::Forward) => plan.n_forward,
            (Normalization::Directional, Direction::Backward) => plan.n_backward,
            (Normalization::Directional, d) => {
                return Err(Error::Shape(format!(
                    "directional normalization got a {d:?} term"
                )))
            }
            (Normalization::Mean, _) => n_total,
        };
        let weight = 1.0 / count as f64;
        let v = term_forward_backward(term, emb, sim, weight, &mut grad)?;
        value += weight * v;
        term_values.push(v);
    }
    Ok(LossOutput {
        value,
        grad,
        term_values,
    })
}

/// Balanced sum of forward and backward chronological means. An empty
/// direction contributes zero; an empty plan gives zero value and gradient.
pub fn chronocon_loss(plan: &PairingPlan, emb: ArrayView2<f64>, sim: Similarity) -> Result<LossOutput> {
    evaluate(plan, emb, sim, Normalization::Directional)
}

/// Same normalization as [`chronocon_loss`], for label-ordered plans.
pub fn ordinal_loss(plan: &PairingPlan, emb: ArrayView2<f64>, sim: Similarity) -> Result<LossOutput> {
    evaluate(plan, emb, sim, Normalization::Directional)
}

pub fn rnc_loss(plan: &PairingPlan, emb: ArrayView2<f64>, sim: Similarity) -> Result<LossOutput> {
    evaluate(plan, emb, sim, Normalization::Mean)
}

pub fn rnc_time_loss(plan: &PairingPlan, emb: ArrayView2<f64>, sim: Similarity) -> Result<LossOutput> {
    evaluate(plan, emb, sim, Normalization::Mean)
}

pub fn simclr_loss(plan: &PairingPlan, emb: ArrayView2<f64>, sim: Similarity) -> Result<LossOutput> {
    evaluate(plan, emb, sim, Normalization::Mean)
}

/// Mean squared reconstruction error against the clean inputs, with its
/// gradient with respect to the reconstructions.
pub fn dae_loss(clean: ArrayView2<f64>, reconstruction: ArrayView2<f64>) -> Result<(f64, Array2<f64>)> {
    if clean.shape() != reconstruction.shape() {
        return Err(Error::Shape(format!(
            "inputs {:?} vs reconstructions {:?}",
            clean.shape(),
            reconstruction.shape()
        )));
    }
    let n = clean.len().max(1) as f64;
    let diff = &reconstruction - &clean;
    let value = diff.iter().map(|d| d * d).sum::<f64>() / n;
    Ok((value, diff * (2.0 / n)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pairing::chrono_pairs;
    use crate::pairing::tests_support::line_batch;
    use ndarray::array;

    #[test]
    fn similarity_examples() {
        let s = Similarity::default();
        let u = array![1.5, -2.0];
        assert_eq!(similarity(u.view(), u.view(), s).unwrap(), 0.0);
        assert_eq!(
            similarity(array![0.0].view(), array![3.0].view(), s).unwrap(),
            -3.0
        );
        let c = Similarity::new(SimilarityKind::Cosine, 1.0).unwrap();
        assert_eq!(
            similarity(array![1.0, 0.0].view(), array![0.0, 1.0].view(), c).unwrap(),
            0.0
        );
        assert!(similarity(array![0.0, 0.0].view(), array![0.0, 1.0].view(), c).is_err());
        assert!(Similarity::new(SimilarityKind::NegL2, 0.0).is_err());
    }

    #[test]
    fn pair_term_examples() {
        let emb = array![[0.0], [1.0], [3.0]];
        let t = PairTerm {
            anchor: 0,
            positive: 1,
            negatives: vec![2],
            direction: Direction::Forward,
        };
        let v = pair_term_loss(&t, emb.view(), Similarity::default()).unwrap();
        assert!((v - (1.0 + (-2.0f64).exp()).ln()).abs() < 1e-15);

        // positive at similarity 0, two negatives at -1
        let emb = array![[0.0], [0.0], [1.0], [-1.0]];
        let t = PairTerm {
            anchor: 0,
            positive: 1,
            negatives: vec![2, 3],
            direction: Direction::Forward,
        };
        let v = pair_term_loss(&t, emb.view(), Similarity::default()).unwrap();
        assert!((v - (1.0 + 2.0 * (-1.0f64).exp()).ln()).abs() < 1e-15);
    }

    #[test]
    fn loss_vanishes_as_positive_wins() {
        let mut last = f64::INFINITY;
        for gap in [1.0, 2.0, 5.0, 10.0, 40.0] {
            let emb = array![[0.0], [0.1], [gap]];
            let t = PairTerm {
                anchor: 0,
                positive: 1,
                negatives: vec![2],
                direction: Direction::Forward,
            };
            let v = pair_term_loss(&t, emb.view(), Similarity::default()).unwrap();
            assert!(v >= 0.0 && v < last);
            last = v;
        }
        assert!(last < 1e-15);
    }

    #[test]
    fn three_visit_chronocon_value() {
        let batch = line_batch(&[0.0, 1.0, 3.0]);
        let plan = chrono_pairs(&batch);
        let emb = array![[0.0], [1.0], [3.0]];
        let out = chronocon_loss(&plan, emb.view(), Similarity::default()).unwrap();
        let expect = (1.0 + (-2.0f64).exp()).ln() + (1.0 + (-1.0f64).exp()).ln();
        assert!((out.value - expect).abs() < 1e-12);
        assert_eq!(out.term_values.len(), 2);
    }

    #[test]
    fn empty_plan_is_zero() {
        let emb = array![[0.0, 1.0], [2.0, 3.0]];
        let out = chronocon_loss(&PairingPlan::default(), emb.view(), Similarity::default()).unwrap();
        assert_eq!(out.value, 0.0);
        assert!(out.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn coincident_embeddings_use_zero_subgradient() {
        let emb = array![[1.0], [1.0], [2.0]];
        let t = PairTerm {
            anchor: 0,
            positive: 1,
            negatives: vec![2],
            direction: Direction::Instance,
        };
        let plan = PairingPlan {
            terms: vec![t],
            ..Default::default()
        };
        let out = simclr_loss(&plan, emb.view(), Similarity::default()).unwrap();
        assert!(out.grad.iter().all(|g| g.is_finite()));
        assert_eq!(out.grad[[1, 0]], 0.0);
    }

    #[test]
    fn dae_examples() {
        let x = array![[0.5, 0.25], [1.0, 0.0]];
        let (v, g) = dae_loss(x.view(), x.view()).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|&g| g == 0.0));
        let shifted = &x + 1.0;
        assert_eq!(dae_loss(x.view(), shifted.view()).unwrap().0, 1.0);
        assert!(dae_loss(x.view(), array![[1.0]].view()).is_err());
    }

    #[test]
    fn dae_gradient_matches_finite_differences() {
        let x = array![[0.3, -0.2, 0.9], [0.1, 0.4, -0.7]];
        let r = array![[0.1, 0.5, 0.2], [-0.3, 0.4, 0.0]];
        let (_, g) = dae_loss(x.view(), r.view()).unwrap();
        let eps = 1e-6;
        for i in 0..2 {
            for j in 0..3 {
                let mut rp = r.clone();
                rp[[i, j]] += eps;
                let mut rm = r.clone();
                rm[[i, j]] -= eps;
                let fd = (dae_loss(x.view(), rp.view()).unwrap().0
                    - dae_loss(x.view(), rm.view()).unwrap().0)
                    / (2.0 * eps);
                assert!((fd - g[[i, j]]).abs() < 1e-8);
            }
        }
    }
}

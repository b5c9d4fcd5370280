use serde::{Deserialize, Serialize};

use super::special::student_t_two_sided_p;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub n: usize,
    /// Set when the paired differences have zero variance.
    pub degenerate: bool,
}

/// Two-sided paired t-test on per-instance squared errors of two models.
pub fn paired_mse_ttest(errors_a: &[f64], errors_b: &[f64]) -> Result<TTest> {
    if errors_a.len() != errors_b.len() {
        return Err(Error::Shape(format!(
            "paired test on {} vs {} errors",
            errors_a.len(),
            errors_b.len()
        )));
    }
    let n = errors_a.len();
    if n < 2 {
        return Err(Error::Degenerate("paired test needs at least two pairs".into()));
    }
    let d: Vec<f64> = errors_a.iter().zip(errors_b).map(|(a, b)| a - b).collect();
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    if var == 0.0 {
        let (t, p) = if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (mean.signum() * f64::INFINITY, 0.0)
        };
        return Ok(TTest {
            t,
            p,
            n,
            degenerate: true,
        });
    }
    let t = mean / (var / nf).sqrt();
    Ok(TTest {
        t,
        p: student_t_two_sided_p(t, nf - 1.0),
        n,
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorCorrelation {
    /// Mean squared error over all included visits.
    pub sigma2: f64,
    /// Mean within-patient cross-visit error product over `sigma2`.
    pub c: f64,
    /// Mean squared error of consecutive-visit differences.
    pub mse_delta_empirical: f64,
    /// `2 sigma2 (1 - c)`.
    pub mse_delta_model: f64,
    pub n_patients: usize,
}

/// Decomposes progression error from per-patient score errors listed in
/// visit order. Patients with a single visit are skipped.
pub fn error_correlation(errors: &[Vec<f64>]) -> Result<ErrorCorrelation> {
    let included: Vec<&Vec<f64>> = errors.iter().filter(|e| e.len() >= 2).collect();
    if included.is_empty() {
        return Err(Error::Degenerate(
            "error correlation needs a patient with at least two visits".into(),
        ));
    }
    let (mut sq, mut n_sq) = (0.0, 0usize);
    let (mut cross, mut n_cross) = (0.0, 0usize);
    let (mut dsq, mut n_d) = (0.0, 0usize);
    for e in &included {
        let total: f64 = e.iter().sum();
        let own: f64 = e.iter().map(|x| x * x).sum();
        sq += own;
        n_sq += e.len();
        cross += total * total - own;
        n_cross += e.len() * (e.len() - 1);
        for w in e.windows(2) {
            dsq += (w[1] - w[0]).powi(2);
            n_d += 1;
        }
    }
    let sigma2 = sq / n_sq as f64;
    if sigma2 == 0.0 {
        return Err(Error::Degenerate("all errors are zero".into()));
    }
    let c = cross / n_cross as f64 / sigma2;
    Ok(ErrorCorrelation {
        sigma2,
        c,
        mse_delta_empirical: dsq / n_d as f64,
        mse_delta_model: 2.0 * sigma2 * (1.0 - c),
        n_patients: included.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_errors_are_degenerate_with_unit_p() {
        let a = [1.0, 2.0, 3.0];
        let r = paired_mse_ttest(&a, &a).unwrap();
        assert_eq!((r.t, r.p, r.degenerate), (0.0, 1.0, true));
    }

    #[test]
    fn constant_difference_is_flagged() {
        let r = paired_mse_ttest(&[2.0, 3.0, 4.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p, 0.0);
    }

    #[test]
    fn mismatched_lengths() {
        assert!(paired_mse_ttest(&[1.0, 2.0], &[1.0]).is_err());
        assert!(paired_mse_ttest(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn shared_errors_give_unit_correlation() {
        let errors: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 - 2.5; 4]).collect();
        let r = error_correlation(&errors).unwrap();
        assert!((r.c - 1.0).abs() < 1e-12);
        assert_eq!(r.mse_delta_empirical, 0.0);
        assert!(r.mse_delta_model.abs() < 1e-12);
    }

    #[test]
    fn single_visits_only() {
        assert!(error_correlation(&[vec![1.0], vec![2.0]]).is_err());
    }
}

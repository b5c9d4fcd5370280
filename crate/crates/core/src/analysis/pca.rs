use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    /// Projected points, `(n, components)`.
    pub projected: Array2<f64>,
    /// Component loadings as rows, `(components, dim)`.
    pub components: Array2<f64>,
    pub eigenvalues: Vec<f64>,
    /// Fraction of total variance per returned component.
    pub explained: Vec<f64>,
    /// Set when fewer than the requested components carry variance.
    pub rank_deficient: bool,
}

/// Principal components of the mean-centered sample covariance, by
/// descending eigenvalue. Each component is signed so that its
/// largest-magnitude loading is positive.
pub fn pca_project(x: ArrayView2<f64>, n_components: usize) -> Result<Pca> {
    let (n, d) = x.dim();
    if n < n_components.max(1) {
        return Err(Error::Degenerate(format!(
            "PCA with {n_components} components needs at least that many samples, got {n}"
        )));
    }
    let mean = x.mean_axis(ndarray::Axis(0)).expect("nonempty");
    let centered = &x - &mean;
    let cov = centered.t().dot(&centered) / (n.max(2) - 1) as f64;
    let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| cov[[i, j]]));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let top = eig.eigenvalues[order[0]].max(0.0);
    let usable: Vec<usize> = order
        .into_iter()
        .take(n_components)
        .filter(|&k| eig.eigenvalues[k] > 1e-12 * top.max(f64::MIN_POSITIVE))
        .collect();
    let k = usable.len();
    let mut components = Array2::zeros((k, d));
    for (r, &c) in usable.iter().enumerate() {
        let v = eig.eigenvectors.column(c);
        let pivot = v
            .iter()
            .copied()
            .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for j in 0..d {
            components[[r, j]] = sign * v[j];
        }
    }
    let eigenvalues: Vec<f64> = usable.iter().map(|&c| eig.eigenvalues[c]).collect();
    let explained = eigenvalues
        .iter()
        .map(|v| if total > 0.0 { v / total } else { 0.0 })
        .collect();
    Ok(Pca {
        projected: centered.dot(&components.t()),
        components,
        eigenvalues,
        explained,
        rank_deficient: k < n_components,
    })
}

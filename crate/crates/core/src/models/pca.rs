use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::domain::{AffineMap, Dataset, Matrix, Vector};
use crate::error::{Error, Result};

/// Top-k principal directions as a centring projection `x ↦ V(x − μ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub map: AffineMap,
    /// Variance captured by each component, non-increasing.
    pub explained_variance: Vec<f64>,
    pub total_variance: f64,
}

fn mean(x: &Matrix) -> Vector {
    x.row_mean().transpose()
}

/// Rows of the map are orthonormal; each is sign-fixed so that its entry of
/// largest magnitude is positive.
pub fn fit_pca(data: &Dataset, k: usize) -> Result<Pca> {
    let d = data.dim();
    if k == 0 || k > d {
        return Err(Error::InvalidArgument(format!(
            "pca needs 1 ≤ k ≤ d, got k={k}, d={d}"
        )));
    }
    if data.len() < k + 1 {
        return Err(Error::InvalidArgument(format!(
            "pca with k={k} needs at least {} samples",
            k + 1
        )));
    }
    let x = data.features();
    let mu = mean(&x);
    let mut centred = x;
    for mut row in centred.row_iter_mut() {
        row -= mu.transpose();
    }
    let cov = centred.transpose() * &centred / (data.len() - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut basis = Matrix::zeros(k, d);
    for (r, &i) in order.iter().take(k).enumerate() {
        let mut col = eig.eigenvectors.column(i).into_owned();
        let pivot = col.iamax();
        if col[pivot] < 0.0 {
            col = -col;
        }
        basis.set_row(r, &col.transpose());
    }
    let offset = -(&basis * &mu);
    Ok(Pca {
        map: AffineMap::new(basis, offset)?,
        explained_variance: order.iter().take(k).map(|&i| eig.eigenvalues[i].max(0.0)).collect(),
        total_variance: eig.eigenvalues.iter().map(|v| v.max(0.0)).sum(),
    })
}

/// Z-scoring with population statistics; constant features keep unit scale.
pub fn fit_standardizer(data: &Dataset) -> Result<AffineMap> {
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    let x = data.features();
    let mu = mean(&x);
    let n = data.len() as f64;
    let sd = Vector::from_fn(data.dim(), |j, _| {
        let var = x.column(j).iter().map(|v| (v - mu[j]).powi(2)).sum::<f64>() / n;
        let s = var.sqrt();
        if s > 1e-12 {
            s
        } else {
            1.0
        }
    });
    let scale = Matrix::from_diagonal(&sd.map(|s| 1.0 / s));
    let offset = -(&scale * &mu);
    AffineMap::new(scale, offset)
}

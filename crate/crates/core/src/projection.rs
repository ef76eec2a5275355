//! Two-dimensional PCA of learned representations, for plotting.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::ArrayView2;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProjectionError {
    #[error("projection needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("projection needs at least 2 dimensions, got {0}")]
    TooFewDims(usize),
}

/// Coordinates of every row on the top two principal components of the
/// centered data. Component signs are fixed so that each axis has a
/// non-negative largest-magnitude loading.
pub fn pca_2d(points: ArrayView2<'_, f64>) -> Result<Vec<[f64; 2]>, ProjectionError> {
    let (n, dim) = points.dim();
    if n < 3 {
        return Err(ProjectionError::TooFewPoints(n));
    }
    if dim < 2 {
        return Err(ProjectionError::TooFewDims(dim));
    }
    let mean = points.mean_axis(ndarray::Axis(0)).expect("non-empty");
    let centered = DMatrix::from_fn(n, dim, |i, j| points[[i, j]] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let axes: Vec<Vec<f64>> = order[..2]
        .iter()
        .map(|&c| {
            let mut v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
            let lead = v
                .iter()
                .copied()
                .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            if lead < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();

    Ok((0..n)
        .map(|i| {
            let row = centered.row(i);
            let mut out = [0.0; 2];
            for (o, axis) in out.iter_mut().zip(&axes) {
                *o = row.iter().zip(axis).map(|(a, b)| a * b).sum();
            }
            out
        })
        .collect())
}

//! Normalized spectral clustering, used as a reference point.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;

use crate::cluster::{kmeans_restarts, Partition};
use crate::error::{Error, Result};
use crate::graph::{Graph, DENSE_FALLBACK_MAX_NODES};

/// Rows of the `k` leading eigenvectors of `D^{-1/2} A D^{-1/2}`,
/// normalized to unit length and clustered with k-means.
pub fn spectral_clustering(g: &Graph, k: usize, seed: u64) -> Result<Partition> {
    let n = g.n();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("spectral clustering needs 1 <= k <= n, got k={k}, n={n}")));
    }
    if n > DENSE_FALLBACK_MAX_NODES {
        return Err(Error::InvalidArgument(format!(
            "spectral clustering is dense and limited to {DENSE_FALLBACK_MAX_NODES} nodes"
        )));
    }
    let inv_sqrt: Vec<f64> = g.degree().iter().map(|&d| if d > 0.0 { d.sqrt().recip() } else { 0.0 }).collect();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for (i, j, w) in g.adjacency().iter() {
        m[(i, j)] = w * inv_sqrt[i] * inv_sqrt[j];
    }
    let eig = SymmetricEigen::try_new(m, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Decomposition("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut u = Array2::from_shape_fn((n, k), |(i, c)| eig.eigenvectors[(i, order[c])]);
    for mut row in u.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row /= norm;
        }
    }
    Ok(kmeans_restarts(u.view(), k, seed, 10)?.partition)
}

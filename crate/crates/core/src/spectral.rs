//! Spectral propagation of embeddings.
//!
//! `Z <- D^{-1} A (I - L~) Z` where `L~ = U g(Lambda) U^{-1}` modulates the
//! spectrum of the random-walk Laplacian `L = I - D^{-1} A`. The filter
//! `(I - L~)` is evaluated as a truncated Chebyshev series in `L - I`, whose
//! spectrum lies in `[-1, 1]`, using matrix products only.
//!
//! [`exact_filter`] forms the same operator from a dense eigendecomposition and
//! exists to check the series on small graphs.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{random_walk_matrix, rw_laplacian, Graph};
use crate::knn::standardize;
use crate::sparse::CsrMatrix;

/// Largest graph accepted by [`exact_filter`].
pub const EXACT_FILTER_MAX_NODES: usize = 500;

/// Spectral modulator `g(lambda)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Modulator {
    /// `exp(-theta/2 * ((lambda - mu)^2 - 1))`
    BandPass { mu: f64, theta: f64 },
    /// `g(lambda) = c` for every eigenvalue.
    Constant(f64),
}

impl Modulator {
    pub fn eval(&self, lambda: f64) -> f64 {
        match *self {
            Modulator::BandPass { mu, theta } => {
                let d = lambda - mu;
                (-0.5 * (d * d - 1.0) * theta).exp()
            }
            Modulator::Constant(c) => c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralConfig {
    pub modulator: Modulator,
    /// Highest Chebyshev degree kept.
    pub order: usize,
    /// Standardize every output column of [`propagate`].
    pub standardize: bool,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        SpectralConfig {
            modulator: Modulator::BandPass { mu: 0.2, theta: 0.5 },
            order: 10,
            standardize: true,
        }
    }
}

impl SpectralConfig {
    fn validate(&self) -> Result<()> {
        if self.order == 0 {
            return Err(Error::InvalidArgument("Chebyshev order must be at least 1".into()));
        }
        if let Modulator::BandPass { theta, mu } = self.modulator {
            if !(theta > 0.0 && theta.is_finite() && mu.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "band-pass modulator needs finite mu and theta > 0, got mu={mu}, theta={theta}"
                )));
            }
        }
        Ok(())
    }
}

/// Chebyshev coefficients `c_0..=c_order` of `x -> 1 - g(x + 1)` on `[-1, 1]`,
/// with `c_0` already halved.
pub fn chebyshev_coefficients(modulator: &Modulator, order: usize) -> Vec<f64> {
    if let Modulator::Constant(c) = modulator {
        let mut out = vec![0.0; order + 1];
        out[0] = 1.0 - c;
        return out;
    }
    let nodes = (4 * (order + 1)).max(256);
    let samples: Vec<(f64, f64)> = (0..nodes)
        .map(|j| {
            let t = PI * (j as f64 + 0.5) / nodes as f64;
            (t, 1.0 - modulator.eval(t.cos() + 1.0))
        })
        .collect();
    (0..=order)
        .map(|k| {
            let s: f64 = samples.iter().map(|&(t, f)| f * (k as f64 * t).cos()).sum();
            let c = 2.0 * s / nodes as f64;
            if k == 0 {
                c / 2.0
            } else {
                c
            }
        })
        .collect()
}

/// `(I - L~) Z` by the three-term recurrence on `M = L - I`.
pub fn chebyshev_filter(z: ArrayView2<'_, f64>, lbar: &CsrMatrix, config: &SpectralConfig) -> Result<Array2<f64>> {
    config.validate()?;
    if lbar.n_rows() != lbar.n_cols() || lbar.n_cols() != z.nrows() {
        return Err(Error::shape(
            "chebyshev_filter",
            format!("operator {}x{} on {} rows", lbar.n_rows(), lbar.n_cols(), z.nrows()),
        ));
    }
    let coeffs = chebyshev_coefficients(&config.modulator, config.order);
    let shifted = |x: &Array2<f64>| -> Result<Array2<f64>> { Ok(lbar.mul_dense(x.view())? - x) };

    let mut out = z.to_owned() * coeffs[0];
    if coeffs[1..].iter().all(|&c| c == 0.0) {
        return Ok(out);
    }
    let mut prev = z.to_owned();
    let mut cur = shifted(&prev)?;
    out.scaled_add(coeffs[1], &cur);
    for &c in &coeffs[2..] {
        let next = shifted(&cur)? * 2.0 - &prev;
        out.scaled_add(c, &next);
        prev = cur;
        cur = next;
    }
    Ok(out)
}

/// `(I - L~) Z` from a dense eigendecomposition of the random-walk Laplacian,
/// via its symmetric similar matrix `I - D^{-1/2} A D^{-1/2}`.
pub fn exact_filter(z: ArrayView2<'_, f64>, g: &Graph, config: &SpectralConfig) -> Result<Array2<f64>> {
    config.validate()?;
    let n = g.n();
    if n > EXACT_FILTER_MAX_NODES {
        return Err(Error::InvalidArgument(format!(
            "exact filter is limited to {EXACT_FILTER_MAX_NODES} nodes, graph has {n}"
        )));
    }
    if z.nrows() != n {
        return Err(Error::shape("exact_filter", format!("{} rows for {n} nodes", z.nrows())));
    }
    if let Some(&i) = g.isolated_nodes().first() {
        return Err(Error::IsolatedNode(i));
    }
    let sqrt_d: Vec<f64> = g.degree().iter().map(|d| d.sqrt()).collect();
    let mut lsym = DMatrix::<f64>::identity(n, n);
    for (i, j, w) in g.adjacency().iter() {
        lsym[(i, j)] -= w / (sqrt_d[i] * sqrt_d[j]);
    }
    let eig = SymmetricEigen::try_new(lsym, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Decomposition("symmetric eigensolver did not converge".into()))?;
    let v = eig.eigenvectors;
    let response = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 - config.modulator.eval(l)));

    let d = z.ncols();
    let zs = DMatrix::from_fn(n, d, |i, j| sqrt_d[i] * z[[i, j]]);
    let filtered = &v * response * v.transpose() * zs;
    Ok(Array2::from_shape_fn((n, d), |(i, j)| filtered[(i, j)] / sqrt_d[i]))
}

/// Applies `D^{-1} A (I - L~)` to `z`, then optionally standardizes columns.
pub fn propagate(z: ArrayView2<'_, f64>, g: &Graph, config: &SpectralConfig) -> Result<Array2<f64>> {
    let walk = random_walk_matrix(g)?;
    let lbar = rw_laplacian(g)?;
    let filtered = chebyshev_filter(z, &lbar, config)?;
    let out = walk.mul_dense(filtered.view())?;
    Ok(if config.standardize { standardize(out.view()) } else { out })
}

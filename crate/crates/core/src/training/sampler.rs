//! Negative sampling and Gaussian view augmentation.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::Mat;
use crate::error::{Error, Result};
use crate::graph::Graph;

/// Distribution over the non-neighbors of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegativeDistribution {
    #[default]
    Uniform,
    /// Proportional to `degree^0.75`.
    Degree,
}

/// Draws `m` negatives for node `i`, with replacement, from
/// `V \ (N(i) u {i})`.
pub fn sample_negatives(
    g: &Graph,
    i: usize,
    m: usize,
    dist: NegativeDistribution,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let n = g.n();
    let nbrs = g.neighbors(i);
    let self_loop = nbrs.binary_search(&i).is_ok();
    let available = n - 1 - (nbrs.len() - usize::from(self_loop));
    if available == 0 {
        return Err(Error::NoNegativesAvailable(i));
    }
    let allowed = |j: usize| j != i && nbrs.binary_search(&j).is_err();

    if dist == NegativeDistribution::Uniform && 2 * available >= n {
        // rejection sampling accepts with probability at least 1/2
        let mut out = Vec::with_capacity(m);
        while out.len() < m {
            let j = rng.random_range(0..n);
            if allowed(j) {
                out.push(j);
            }
        }
        return Ok(out);
    }

    let candidates: Vec<usize> = (0..n).filter(|&j| allowed(j)).collect();
    let weights: Vec<f64> = match dist {
        NegativeDistribution::Uniform => vec![1.0; candidates.len()],
        NegativeDistribution::Degree => candidates.iter().map(|&j| g.degree()[j].powf(0.75)).collect(),
    };
    match WeightedIndex::new(&weights) {
        Ok(w) => Ok((0..m).map(|_| candidates[w.sample(rng)]).collect()),
        // every candidate has zero weight (isolated nodes only)
        Err(_) => Ok((0..m).map(|_| candidates[rng.random_range(0..candidates.len())]).collect()),
    }
}

/// Negatives for every node, in node order.
pub fn sample_all(g: &Graph, m: usize, dist: NegativeDistribution, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<usize>>> {
    (0..g.n()).map(|i| sample_negatives(g, i, m, dist, rng)).collect()
}

/// An `rows x cols` matrix of independent `N(0, sigma^2)` draws.
pub fn gaussian_noise(rows: usize, cols: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Mat {
    Mat::from_shape_simple_fn((rows, cols), || sigma * rng.sample::<f64, _>(StandardNormal))
}

/// `Z + sigma * G` with standard normal `G`.
pub fn augment(z: &Mat, sigma: f64, rng: &mut ChaCha8Rng) -> Mat {
    z + &gaussian_noise(z.nrows(), z.ncols(), sigma, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn negatives_avoid_neighbors_and_self() {
        let g = Graph::from_edges(4, [(0, 1, 1.0), (0, 2, 1.0)]).unwrap();
        let mut rng = stream(1, Stream::Negatives);
        for dist in [NegativeDistribution::Uniform, NegativeDistribution::Degree] {
            let neg = sample_negatives(&g, 0, 50, dist, &mut rng).unwrap();
            assert!(neg.iter().all(|&j| j == 3));
        }
        let neg = sample_negatives(&g, 3, 200, NegativeDistribution::Uniform, &mut rng).unwrap();
        assert!(neg.iter().all(|&j| j < 3));
        assert!((0..3).all(|j| neg.contains(&j)));
    }

    #[test]
    fn complete_graph_has_no_negatives() {
        let g = Graph::from_edges(3, [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)]).unwrap();
        let mut rng = stream(1, Stream::Negatives);
        assert!(matches!(
            sample_negatives(&g, 1, 5, NegativeDistribution::Uniform, &mut rng),
            Err(Error::NoNegativesAvailable(1))
        ));
    }

    #[test]
    fn zero_sigma_is_identity() {
        let z = Mat::from_shape_fn((3, 2), |(i, j)| (i * 2 + j) as f64);
        let mut rng = stream(9, Stream::Noise);
        assert_eq!(augment(&z, 0.0, &mut rng), z);
    }

    #[test]
    fn noise_moments() {
        let mut rng = stream(3, Stream::Noise);
        let g = gaussian_noise(200, 50, 0.1, &mut rng);
        let mean = g.mean().unwrap();
        let var = g.mapv(|v| (v - mean) * (v - mean)).mean().unwrap();
        assert!(mean.abs() < 0.005);
        assert!((var.sqrt() - 0.1).abs() < 0.005);
    }
}

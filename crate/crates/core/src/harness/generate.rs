//! Synthetic datasets: planted-partition graphs and labeled tabular data.

use log::warn;
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::knn::TabularDataset;
use crate::rng::{stream, Stream};

/// Planted-partition graph parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SbmConfig {
    pub blocks: usize,
    pub block_size: usize,
    pub p_in: f64,
    pub p_out: f64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        SbmConfig {
            blocks: 4,
            block_size: 50,
            p_in: 0.3,
            p_out: 0.02,
        }
    }
}

impl SbmConfig {
    /// Expected edge count.
    pub fn expected_edges(&self) -> f64 {
        let (b, s) = (self.blocks as f64, self.block_size as f64);
        b * s * (s - 1.0) / 2.0 * self.p_in + b * (b - 1.0) / 2.0 * s * s * self.p_out
    }

    /// Variance of the edge count.
    pub fn edge_variance(&self) -> f64 {
        let (b, s) = (self.blocks as f64, self.block_size as f64);
        b * s * (s - 1.0) / 2.0 * self.p_in * (1.0 - self.p_in)
            + b * (b - 1.0) / 2.0 * s * s * self.p_out * (1.0 - self.p_out)
    }
}

/// Samples every within-block pair with probability `p_in` and every
/// cross-block pair with `p_out`. Labels are block ids.
pub fn generate_sbm(cfg: &SbmConfig, seed: u64) -> Result<Graph> {
    if !(0.0 <= cfg.p_out && cfg.p_out < cfg.p_in && cfg.p_in <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= p_out < p_in <= 1, got p_in={}, p_out={}",
            cfg.p_in, cfg.p_out
        )));
    }
    if cfg.blocks == 0 || cfg.block_size == 0 {
        return Err(Error::InvalidArgument("SBM needs at least one non-empty block".into()));
    }
    let n = cfg.blocks * cfg.block_size;
    let labels: Vec<usize> = (0..n).map(|i| i / cfg.block_size).collect();
    let mut rng = stream(seed, Stream::Generator);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] { cfg.p_in } else { cfg.p_out };
            if rng.random::<f64>() < p {
                edges.push((i, j, 1.0));
            }
        }
    }
    let g = Graph::from_edges(n, edges)?.with_labels(labels)?;
    let isolated = g.isolated_nodes().len();
    if isolated > 0 {
        warn!("SBM sample has {isolated} isolated nodes; consider larger probabilities");
    }
    Ok(g)
}

/// Tabular generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TabularKind {
    /// Uniform points in `[0, 1]^d`, positive when `sum_i a_i x_i >= a_0`.
    /// Coefficients are drawn when not given, with `a_0` at half their sum.
    Hyperplane { coefficients: Option<Vec<f64>>, threshold: Option<f64> },
    /// Three classes, each a random convex mix of two of three triangular
    /// base waves over 21 features plus unit Gaussian noise. Features beyond
    /// 21 are pure noise.
    Waveform,
}

pub const WAVEFORM_FEATURES: usize = 21;

fn base_wave(k: usize, t: usize) -> f64 {
    let center = [10.0, 6.0, 14.0][k];
    (6.0 - (t as f64 - center).abs()).max(0.0)
}

pub fn generate_tabular(kind: &TabularKind, n: usize, d: usize, seed: u64) -> Result<TabularDataset> {
    if n < 2 || d == 0 {
        return Err(Error::InvalidArgument(format!("tabular data needs n >= 2 and d >= 1, got n={n}, d={d}")));
    }
    let mut rng = stream(seed, Stream::Generator);
    let (x, labels) = match kind {
        TabularKind::Hyperplane { coefficients, threshold } => {
            let a = match coefficients {
                Some(a) if a.len() != d => {
                    return Err(Error::InvalidArgument(format!("{} coefficients for d={d}", a.len())));
                }
                Some(a) => a.clone(),
                None => (0..d).map(|_| rng.random::<f64>()).collect(),
            };
            let a0 = threshold.unwrap_or_else(|| 0.5 * a.iter().sum::<f64>());
            let x = Array2::from_shape_simple_fn((n, d), || rng.random::<f64>());
            let labels = x
                .rows()
                .into_iter()
                .map(|row| usize::from(row.iter().zip(&a).map(|(v, c)| v * c).sum::<f64>() >= a0))
                .collect();
            (x, labels)
        }
        TabularKind::Waveform => {
            if d < WAVEFORM_FEATURES {
                return Err(Error::InvalidArgument(format!(
                    "waveform data needs d >= {WAVEFORM_FEATURES}, got {d}"
                )));
            }
            const PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];
            let mut x = Array2::zeros((n, d));
            let mut labels = Vec::with_capacity(n);
            for mut row in x.rows_mut() {
                let class = rng.random_range(0..3);
                let (p, q) = PAIRS[class];
                let u: f64 = rng.random();
                for (t, v) in row.iter_mut().enumerate() {
                    let signal = if t < WAVEFORM_FEATURES {
                        u * base_wave(p, t) + (1.0 - u) * base_wave(q, t)
                    } else {
                        0.0
                    };
                    *v = signal + rng.sample::<f64, _>(StandardNormal);
                }
                labels.push(class);
            }
            (x, labels)
        }
    };
    TabularDataset::new(x, Some(labels))
}

//! Community assignments: k-means, Newman modularity and pair-counting
//! agreement with ground truth.

use std::collections::HashMap;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::{stream, Stream};

/// A hard assignment of `n` nodes to communities `0..k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    assignment: Vec<usize>,
    k: usize,
}

impl Partition {
    pub fn new(assignment: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("a partition needs k >= 1".into()));
        }
        if let Some(&bad) = assignment.iter().find(|&&c| c >= k) {
            return Err(Error::InvalidArgument(format!("community {bad} outside 0..{k}")));
        }
        Ok(Partition { assignment, k })
    }

    /// Uses `max label + 1` as `k`.
    pub fn from_labels(labels: &[usize]) -> Result<Self> {
        let k = labels.iter().max().map_or(1, |m| m + 1);
        Partition::new(labels.to_vec(), k)
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn same(&self, i: usize, j: usize) -> bool {
        self.assignment[i] == self.assignment[j]
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &c in &self.assignment {
            s[c] += 1;
        }
        s
    }

    /// Number of non-empty communities.
    pub fn effective_k(&self) -> usize {
        self.sizes().iter().filter(|&&s| s > 0).count()
    }
}

#[derive(Debug, Clone)]
pub struct KMeans {
    pub partition: Partition,
    pub centroids: Array2<f64>,
    /// Sum of squared distances to the assigned centroid.
    pub objective: f64,
    /// Objective after every assignment step.
    pub history: Vec<f64>,
    pub iterations: usize,
}

pub const KMEANS_TOL: f64 = 1e-4;
pub const KMEANS_MAX_ITER: usize = 300;

fn sq_dist(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn assign(z: ArrayView2<'_, f64>, centroids: &Array2<f64>, labels: &mut [usize]) -> f64 {
    let mut total = 0.0;
    for (i, row) in z.rows().into_iter().enumerate() {
        let mut best = f64::INFINITY;
        let mut best_c = 0;
        for (c, cen) in centroids.rows().into_iter().enumerate() {
            let d = sq_dist(row, cen);
            if d < best {
                best = d;
                best_c = c;
            }
        }
        labels[i] = best_c;
        total += best;
    }
    total
}

fn plus_plus_seeds(z: ArrayView2<'_, f64>, k: usize, rng: &mut impl Rng) -> Array2<f64> {
    let n = z.nrows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = z.rows().into_iter().map(|r| sq_dist(r, z.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            if d2[pick] == 0.0 {
                // rounding left the target past the last positive weight
                pick = d2.iter().rposition(|&d| d > 0.0).expect("total > 0");
            }
            pick
        } else {
            // all remaining points coincide with a seed
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, row) in z.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(row, z.row(next)));
        }
    }
    z.select(Axis(0), &chosen)
}

/// k-means++ seeding followed by Lloyd iterations until the largest centroid
/// move drops below [`KMEANS_TOL`] or [`KMEANS_MAX_ITER`] is reached.
///
/// A cluster that empties is given the point farthest from its current
/// centroid.
pub fn kmeans(z: ArrayView2<'_, f64>, k: usize, seed: u64) -> Result<KMeans> {
    let n = z.nrows();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("k-means needs 1 <= k <= n, got k={k}, n={n}")));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("k-means input".into()));
    }
    let mut rng = stream(seed, Stream::KMeans);
    let mut centroids = plus_plus_seeds(z, k, &mut rng);
    let mut labels = vec![0; n];
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let obj = assign(z, &centroids, &mut labels);
        history.push(obj);
        if iterations == KMEANS_MAX_ITER {
            break;
        }
        iterations += 1;

        let mut sums = Array2::<f64>::zeros(centroids.raw_dim());
        let mut counts = vec![0usize; k];
        for (i, row) in z.rows().into_iter().enumerate() {
            sums.row_mut(labels[i]).scaled_add(1.0, &row);
            counts[labels[i]] += 1;
        }
        let mut next = centroids.clone();
        for (c, &count) in counts.iter().enumerate() {
            if count > 0 {
                next.row_mut(c).assign(&(&sums.row(c) / count as f64));
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| counts[labels[i]] > 1)
                .map(|i| (i, sq_dist(z.row(i), next.row(labels[i]))))
                .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                    Some((_, bd)) if bd >= d => best,
                    _ => Some((i, d)),
                });
            if let Some((i, _)) = far {
                counts[labels[i]] -= 1;
                counts[c] = 1;
                labels[i] = c;
                next.row_mut(c).assign(&z.row(i));
            }
        }
        let shift = centroids
            .rows()
            .into_iter()
            .zip(next.rows())
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if shift < KMEANS_TOL {
            let obj = assign(z, &centroids, &mut labels);
            history.push(obj);
            break;
        }
    }
    let objective = *history.last().expect("at least one assignment");
    Ok(KMeans {
        partition: Partition::new(labels, k)?,
        centroids,
        objective,
        history,
        iterations,
    })
}

/// Best of `restarts` k-means runs by objective. Restart `t` uses seed
/// `seed + t`; ties keep the earlier run.
pub fn kmeans_restarts(z: ArrayView2<'_, f64>, k: usize, seed: u64, restarts: usize) -> Result<KMeans> {
    let mut best = kmeans(z, k, seed)?;
    for t in 1..restarts.max(1) as u64 {
        let run = kmeans(z, k, seed.wrapping_add(t))?;
        if run.objective < best.objective {
            best = run;
        }
    }
    Ok(best)
}

/// Newman modularity over all ordered node pairs, diagonal included.
pub fn modularity(g: &Graph, p: &Partition) -> Result<f64> {
    if p.len() != g.n() {
        return Err(Error::shape(
            "modularity",
            format!("partition of {} nodes for a graph of {}", p.len(), g.n()),
        ));
    }
    let labels = p.assignment();
    // Both sums run in node order so that a single community yields exactly 0.
    let mut internal = vec![0.0; p.k()];
    let mut community_degree = vec![0.0; p.k()];
    let mut two_m = 0.0;
    for (i, &c) in labels.iter().enumerate() {
        let (cols, vals) = g.adjacency().row(i);
        let row_in: f64 = cols.iter().zip(vals).filter(|&(&j, _)| labels[j] == c).map(|(_, w)| w).sum();
        internal[c] += row_in;
        community_degree[c] += g.degree()[i];
        two_m += g.degree()[i];
    }
    if two_m <= 0.0 {
        return Err(Error::Edgeless);
    }
    Ok(internal
        .iter()
        .zip(&community_degree)
        .map(|(&l, &d)| l / two_m - (d / two_m) * (d / two_m))
        .sum())
}

/// Confusion counts over unordered node pairs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    /// Same predicted community, same true class.
    pub tp: u64,
    /// Same predicted community, different true class.
    pub fp: u64,
    /// Different predicted community, same true class.
    pub fn_: u64,
    /// Different predicted community, different true class.
    pub tn: u64,
}

impl PairCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

fn pairs(m: u64) -> u64 {
    m * m.saturating_sub(1) / 2
}

/// Pair counts from the contingency table of the two partitions.
pub fn pair_counts(pred: &Partition, truth: &Partition) -> Result<PairCounts> {
    if pred.len() != truth.len() {
        return Err(Error::shape(
            "pair_counts",
            format!("{} predicted vs {} true assignments", pred.len(), truth.len()),
        ));
    }
    let mut table: HashMap<(usize, usize), u64> = HashMap::new();
    for (&a, &b) in pred.assignment().iter().zip(truth.assignment()) {
        *table.entry((a, b)).or_default() += 1;
    }
    let tp: u64 = table.values().map(|&c| pairs(c)).sum();
    let same_pred: u64 = pred.sizes().iter().map(|&s| pairs(s as u64)).sum();
    let same_truth: u64 = truth.sizes().iter().map(|&s| pairs(s as u64)).sum();
    let total = pairs(pred.len() as u64);
    let fp = same_pred - tp;
    let fn_ = same_truth - tp;
    Ok(PairCounts {
        tp,
        fp,
        fn_,
        tn: total - tp - fp - fn_,
    })
}

/// Jaccard, Fowlkes-Mallows, F1 and Kulczynski indices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub jaccard: f64,
    pub fm: f64,
    pub f1: f64,
    pub kulczynski: f64,
}

/// Requires at least one same-community pair in each partition. When no
/// pair agrees (`TP = 0`) F1 takes its limit value 0.
pub fn pair_metrics(c: &PairCounts) -> Result<PairMetrics> {
    if c.tp + c.fp == 0 {
        return Err(Error::UndefinedMetric("precision (no pair shares a predicted community)"));
    }
    if c.tp + c.fn_ == 0 {
        return Err(Error::UndefinedMetric("recall (no pair shares a true class)"));
    }
    let (tp, fp, fn_) = (c.tp as f64, c.fp as f64, c.fn_ as f64);
    let precision = tp / (tp + fp);
    let recall = tp / (tp + fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(PairMetrics {
        jaccard: tp / (tp + fn_ + fp),
        fm: tp / ((tp + fn_) * (tp + fp)).sqrt(),
        f1,
        kulczynski: 0.5 * (precision + recall),
    })
}

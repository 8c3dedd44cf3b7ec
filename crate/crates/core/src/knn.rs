//! K-nearest-neighbour graphs over tabular features.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Feature rows with optional class labels.
#[derive(Debug, Clone)]
pub struct TabularDataset {
    pub x: Array2<f64>,
    pub labels: Option<Vec<usize>>,
}

impl TabularDataset {
    pub fn new(x: Array2<f64>, labels: Option<Vec<usize>>) -> Result<Self> {
        if x.nrows() < 2 {
            return Err(Error::InvalidArgument(format!(
                "tabular data needs at least 2 rows, got {}",
                x.nrows()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature matrix".into()));
        }
        if let Some(l) = &labels {
            if l.len() != x.nrows() {
                return Err(Error::shape("labels", format!("{} labels for {} rows", l.len(), x.nrows())));
            }
        }
        Ok(TabularDataset { x, labels })
    }

    /// KNN graph over the standardized features, carrying the standardized
    /// features as node attributes and the labels, if any.
    pub fn to_graph(&self, k: usize) -> Result<Graph> {
        let z = standardize(self.x.view());
        let mut g = build_knn_graph(z.view(), k)?.with_attributes(z)?;
        if let Some(l) = &self.labels {
            g = g.with_labels(l.clone())?;
        }
        Ok(g)
    }
}

/// Centers every column and scales it to unit sample standard deviation.
/// Constant columns become zero.
pub fn standardize(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut out = x.to_owned();
    if n < 2 {
        out.fill(0.0);
        return out;
    }
    for mut col in out.axis_iter_mut(Axis(1)) {
        let mean = col.sum() / n as f64;
        col.mapv_inplace(|v| v - mean);
        let var = col.iter().map(|v| v * v).sum::<f64>() / (n - 1) as f64;
        if var > 0.0 {
            let sd = var.sqrt();
            col.mapv_inplace(|v| v / sd);
        } else {
            col.fill(0.0);
        }
    }
    out
}

/// For every row, the indices of its `k` nearest other rows under Euclidean
/// distance. Ties go to the lower index.
pub fn knn_neighbors(x: ArrayView2<'_, f64>, k: usize) -> Result<Vec<Vec<usize>>> {
    let n = x.nrows();
    if k == 0 {
        return Err(Error::InvalidArgument("K must be positive".into()));
    }
    if k >= n {
        return Err(Error::InvalidArgument(format!("K = {k} must be below the row count {n}")));
    }
    let sq_norms: Vec<f64> = x.rows().into_iter().map(|r| r.dot(&r)).collect();
    let gram = x.dot(&x.t());
    let mut out = Vec::with_capacity(n);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        cand.clear();
        for j in (0..n).filter(|&j| j != i) {
            let d = (sq_norms[i] + sq_norms[j] - 2.0 * gram[[i, j]]).max(0.0);
            cand.push((d, j));
        }
        cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out.push(cand[..k].iter().map(|&(_, j)| j).collect());
    }
    Ok(out)
}

/// Union-symmetrized KNN graph with unit weights.
pub fn build_knn_graph(x: ArrayView2<'_, f64>, k: usize) -> Result<Graph> {
    let nbrs = knn_neighbors(x, k)?;
    let edges = nbrs
        .iter()
        .enumerate()
        .flat_map(|(i, row)| row.iter().map(move |&j| (i, j, 1.0)));
    // the union of both directions appears as duplicates, which from_edges collapses
    let mut unique: Vec<(usize, usize, f64)> = edges
        .map(|(i, j, w)| (i.min(j), i.max(j), w))
        .collect();
    unique.sort_by_key(|a| (a.0, a.1));
    unique.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);
    Graph::from_edges(x.nrows(), unique)
}

//! Undirected graphs, their loaders, adjacency powers and Laplacians.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use log::warn;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Largest node count for which dense adjacency powers are permitted.
pub const DENSE_FALLBACK_MAX_NODES: usize = 5000;

/// An undirected, weighted graph with optional node attributes and labels.
///
/// The adjacency is symmetric with non-negative weights and, unless built by
/// [`Graph::with_isolated_self_loops`], a zero diagonal.
#[derive(Debug, Clone)]
pub struct Graph {
    adjacency: CsrMatrix,
    degree: Array1<f64>,
    attributes: Option<Array2<f64>>,
    labels: Option<Vec<usize>>,
}

impl Graph {
    /// Wraps an adjacency matrix, checking the graph invariants.
    pub fn new(adjacency: CsrMatrix) -> Result<Self> {
        let (rows, cols) = adjacency.shape();
        if rows != cols {
            return Err(Error::shape("graph", format!("adjacency is {rows}x{cols}")));
        }
        for (i, j, v) in adjacency.iter() {
            if i == j {
                return Err(Error::SelfLoop { node: i, line: 0 });
            }
            if v < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "negative edge weight {v} on ({i},{j})"
                )));
            }
        }
        if !adjacency.is_symmetric(0.0) {
            return Err(Error::InvalidArgument("adjacency is not symmetric".into()));
        }
        Ok(Self::from_parts(adjacency))
    }

    fn from_parts(adjacency: CsrMatrix) -> Self {
        let degree = adjacency.row_sums();
        Graph {
            adjacency,
            degree,
            attributes: None,
            labels: None,
        }
    }

    /// Builds a graph from undirected edges `(u, v, w)`.
    ///
    /// Repeated edges (in either orientation) keep the first weight and log a
    /// warning. Self-loops are rejected.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut seen: HashMap<(usize, usize), f64> = HashMap::new();
        let mut order = Vec::new();
        let mut duplicates = 0usize;
        for (u, v, w) in edges {
            if u == v {
                return Err(Error::SelfLoop { node: u, line: 0 });
            }
            if u >= n || v >= n {
                return Err(Error::InvalidArgument(format!(
                    "edge ({u},{v}) references a node outside 0..{n}"
                )));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "edge ({u},{v}) has weight {w}; weights must be finite and positive"
                )));
            }
            let key = (u.min(v), u.max(v));
            if seen.contains_key(&key) {
                duplicates += 1;
                continue;
            }
            seen.insert(key, w);
            order.push(key);
        }
        if duplicates > 0 {
            warn!("collapsed {duplicates} duplicate edge(s), keeping the first weight");
        }
        let triplets = order
            .iter()
            .flat_map(|&(u, v)| {
                let w = seen[&(u, v)];
                [(u, v, w), (v, u, w)]
            })
            .collect::<Vec<_>>();
        Ok(Self::from_parts(CsrMatrix::from_triplets(n, n, triplets)?))
    }

    pub fn with_attributes(mut self, x: Array2<f64>) -> Result<Self> {
        if x.nrows() != self.n() {
            return Err(Error::shape(
                "attributes",
                format!("{} rows for {} nodes", x.nrows(), self.n()),
            ));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("attribute matrix".into()));
        }
        self.attributes = Some(x);
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.n() {
            return Err(Error::shape(
                "labels",
                format!("{} labels for {} nodes", labels.len(), self.n()),
            ));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Returns a copy where every isolated node carries a unit self-loop.
    pub fn with_isolated_self_loops(&self) -> Graph {
        let loops: Vec<_> = self
            .isolated_nodes()
            .into_iter()
            .map(|i| (i, i, 1.0))
            .collect();
        if loops.is_empty() {
            return self.clone();
        }
        let n = self.n();
        let adjacency = CsrMatrix::from_triplets(n, n, self.adjacency.iter().chain(loops))
            .expect("indices come from a valid matrix");
        let mut g = Self::from_parts(adjacency);
        g.attributes = self.attributes.clone();
        g.labels = self.labels.clone();
        g
    }

    pub fn n(&self) -> usize {
        self.adjacency.n_rows()
    }

    pub fn adjacency(&self) -> &CsrMatrix {
        &self.adjacency
    }

    pub fn degree(&self) -> &Array1<f64> {
        &self.degree
    }

    pub fn attributes(&self) -> Option<&Array2<f64>> {
        self.attributes.as_ref()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Number of undirected edges, self-loops counted once.
    pub fn num_edges(&self) -> usize {
        let diag = self.adjacency.iter().filter(|&(i, j, _)| i == j).count();
        (self.adjacency.nnz() - diag) / 2 + diag
    }

    /// Sum of all adjacency entries, i.e. 2|E| for unit weights.
    pub fn total_weight(&self) -> f64 {
        self.degree.sum()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        self.adjacency.row(i).0
    }

    pub fn is_adjacent(&self, i: usize, j: usize) -> bool {
        self.neighbors(i).binary_search(&j).is_ok()
    }

    pub fn isolated_nodes(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.degree[i] == 0.0).collect()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.adjacency.iter().filter(|&(i, j, _)| i < j)
    }

    pub fn write_edge_list(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (u, v, w) in self.edges() {
            if w == 1.0 {
                out.push_str(&format!("{u} {v}\n"));
            } else {
                out.push_str(&format!("{u} {v} {w}\n"));
            }
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Reads a whitespace-separated edge list (`u v` or `u v w`, `#` comments).
///
/// The node count is one past the largest id, or `n_hint` when larger.
pub fn load_edge_list(path: &Path, n_hint: Option<usize>) -> Result<Graph> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut edges = Vec::new();
    let mut max_id = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 && fields.len() != 3 {
            return Err(parse_err(line_no, format!("expected 'u v' or 'u v w', got {line:?}")));
        }
        let mut ids = [0usize; 2];
        for (slot, field) in ids.iter_mut().zip(&fields[..2]) {
            let id: i64 = field
                .parse()
                .map_err(|_| parse_err(line_no, format!("bad node id {field:?}")))?;
            if id < 0 {
                return Err(parse_err(line_no, format!("negative node id {id}")));
            }
            *slot = id as usize;
        }
        let w = match fields.get(2) {
            Some(f) => f
                .parse::<f64>()
                .map_err(|_| parse_err(line_no, format!("bad weight {f:?}")))?,
            None => 1.0,
        };
        if ids[0] == ids[1] {
            return Err(Error::SelfLoop {
                node: ids[0],
                line: line_no,
            });
        }
        if !(w.is_finite() && w > 0.0) {
            return Err(parse_err(line_no, format!("weight {w} must be finite and positive")));
        }
        max_id = Some(max_id.unwrap_or(0).max(ids[0]).max(ids[1]));
        edges.push((ids[0], ids[1], w));
    }
    let Some(max_id) = max_id else {
        return Err(Error::Empty(format!("edge list {}", path.display())));
    };
    let n = match n_hint {
        Some(h) if h <= max_id => {
            return Err(Error::InvalidArgument(format!(
                "node count hint {h} is smaller than the largest id {max_id} + 1"
            )))
        }
        Some(h) => h,
        None => max_id + 1,
    };
    Graph::from_edges(n, edges)
}

/// Reads a comma-separated matrix of finite reals, optionally skipping a header row.
pub fn load_attributes_csv(path: &Path, has_header: bool) -> Result<Array2<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 && has_header {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                msg: e.to_string(),
            })?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                msg: "non-finite value".into(),
            });
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    msg: format!("expected {w} columns, found {}", row.len()),
                })
            }
            _ => {}
        }
        rows.push(row);
    }
    let width = width.ok_or_else(|| Error::Empty(format!("attribute file {}", path.display())))?;
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Array2::from_shape_vec((rows.len(), width), flat).expect("rows have equal width"))
}

/// Reads one non-negative integer label per line.
pub fn load_labels(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut labels = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: i64 = line.parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            msg: format!("bad label {line:?}"),
        })?;
        if v < 0 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                msg: format!("negative label {v}"),
            });
        }
        labels.push(v as usize);
    }
    if labels.is_empty() {
        return Err(Error::Empty(format!("label file {}", path.display())));
    }
    Ok(labels)
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for l in labels {
        writeln!(f, "{l}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// How adjacency powers are computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerOptions {
    /// Sparse fill-in budget as a multiple of `nnz(A)`.
    pub budget_factor: f64,
    /// Compute powers densely when the sparse budget is exceeded.
    pub dense_fallback: bool,
    /// Replace every positive entry of each power by 1.
    pub binarize: bool,
}

impl Default for PowerOptions {
    fn default() -> Self {
        PowerOptions {
            budget_factor: 50.0,
            dense_fallback: false,
            binarize: false,
        }
    }
}

/// Returns `[A, A^2, ..., A^r]` by repeated sparse multiplication.
pub fn matrix_power(a: &CsrMatrix, r: usize, opts: PowerOptions) -> Result<Vec<CsrMatrix>> {
    if r == 0 {
        return Err(Error::InvalidArgument("adjacency order r must be at least 1".into()));
    }
    let budget = (opts.budget_factor * a.nnz().max(1) as f64).ceil() as usize;
    let mut powers = vec![a.clone()];
    let mut dense: Option<Array2<f64>> = None;
    for order in 2..=r {
        let prev = powers.last().expect("non-empty");
        if let Some(d) = dense.as_mut() {
            let next = d.dot(&a.to_dense());
            powers.push(CsrMatrix::from_dense(next.view()));
            *d = next;
            continue;
        }
        match prev.matmul_budgeted(a, Some(budget))? {
            Some(m) => powers.push(m),
            None if opts.dense_fallback && a.n_rows() <= DENSE_FALLBACK_MAX_NODES => {
                let d = prev.to_dense().dot(&a.to_dense());
                powers.push(CsrMatrix::from_dense(d.view()));
                dense = Some(d);
            }
            None => {
                return Err(Error::FillInBudget {
                    order,
                    nnz: prev.matmul(a)?.nnz(),
                    budget,
                })
            }
        }
    }
    if opts.binarize {
        powers = powers
            .iter()
            .map(|m| m.map_values(|_, _, v| if v > 0.0 { 1.0 } else { v }))
            .collect();
    }
    Ok(powers)
}

/// `D^{-1/2} (M + I) D^{-1/2}` with `D` the row sums of `M + I`.
pub fn sym_normalize(m: &CsrMatrix) -> Result<CsrMatrix> {
    let shifted = m.add_scaled_identity(1.0)?;
    let inv_sqrt: Vec<f64> = shifted.row_sums().iter().map(|d| 1.0 / d.sqrt()).collect();
    Ok(shifted.map_values(|i, j, v| inv_sqrt[i] * v * inv_sqrt[j]))
}

/// Combinatorial Laplacian `L = D - W`.
pub fn laplacian(g: &Graph) -> CsrMatrix {
    let n = g.n();
    let neg = g.adjacency().iter().map(|(i, j, v)| (i, j, -v));
    let diag = (0..n).map(|i| (i, i, g.degree()[i]));
    CsrMatrix::from_triplets(n, n, neg.chain(diag)).expect("valid graph")
}

/// Random-walk transition matrix `D^{-1} A`. Fails on isolated nodes.
pub fn random_walk_matrix(g: &Graph) -> Result<CsrMatrix> {
    if let Some(&i) = g.isolated_nodes().first() {
        return Err(Error::IsolatedNode(i));
    }
    let deg = g.degree();
    Ok(g.adjacency().map_values(|i, _, v| v / deg[i]))
}

/// Random-walk normalized Laplacian `I - D^{-1} A`. Fails on isolated nodes.
pub fn rw_laplacian(g: &Graph) -> Result<CsrMatrix> {
    let p = random_walk_matrix(g)?;
    let n = g.n();
    let neg = p.iter().map(|(i, j, v)| (i, j, -v));
    CsrMatrix::from_triplets(n, n, neg.chain((0..n).map(|i| (i, i, 1.0))))
}

//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every primitive in evaluation order together with its
//! forward value. [`Tape::backward`] walks the record in reverse and returns
//! the adjoint of every node; [`Tape::backward_into`] adds the adjoints of
//! parameter leaves into a [`ParamStore`].
//!
//! Sparse operands (normalized adjacencies, Laplacians) enter the tape as
//! constants: no adjoint is ever formed for them.
//!
//! Scalars are represented as `1x1` matrices.

mod gradcheck;
mod optim;

use std::sync::Arc;

use ndarray::{s, Array1, Array2, Axis, Zip};

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

pub use gradcheck::{gradient_check, GradCheckReport};
pub use optim::{Adam, AdamConfig};

pub type Mat = Array2<f64>;

/// Variance floor inside batch normalization.
pub const BATCH_NORM_EPS: f64 = 1e-8;
/// Columns whose batch variance is at or below this are treated as constant.
const BATCH_NORM_DEGENERATE: f64 = 1e-14;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Handle to a [`Parameter`] inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// A trainable matrix with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Mat,
    pub grad: Mat,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let grad = Mat::zeros(value.raw_dim());
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total number of scalar entries across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    SpMM(Arc<CsrMatrix>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    AddConst(Var, Arc<Mat>),
    Scale(Var, f64),
    ScaleCols(Var, Arc<Array1<f64>>),
    Transpose(Var),
    Sigmoid(Var),
    Relu(Var),
    LogSigmoid(Var),
    MaxAffine { x: Var, coeffs: Var, pieces: usize },
    RowMean(Var),
    BatchNorm { x: Var, gamma: Var, beta: Var },
    FrobeniusSq(Var),
    TraceQuad(Arc<CsrMatrix>, Var),
    DotRows(Var, Var),
    GatherRows(Var, Arc<Vec<usize>>),
    ConcatCols(Vec<Var>),
    Sum(Var),
}

/// Forward-pass byproducts needed by some backward rules.
#[derive(Debug, Clone, PartialEq)]
enum Aux {
    None,
    /// Winning piece per entry of a max-of-affine activation.
    Argmax(Array2<u8>),
    /// Normalized input and per-column inverse standard deviation
    /// (zero for degenerate columns).
    BatchNorm { xhat: Mat, inv_std: Array1<f64> },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Mat,
    aux: Aux,
}

/// Adjoints of every node from one backward sweep.
#[derive(Debug)]
pub struct Gradients {
    adjoints: Vec<Option<Mat>>,
}

impl Gradients {
    /// Adjoint of `v`, or `None` when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.adjoints[v.0].as_ref()
    }
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_str(m: &Mat) -> String {
    format!("{}x{}", m.nrows(), m.ncols())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(sigmoid(x))` without overflow for large `|x|`.
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    /// Value of a `1x1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    fn val(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let (value, aux) = self.eval(&op)?;
        self.nodes.push(Node { op, value, aux });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.nodes.push(Node {
            op: Op::Constant,
            value,
            aux: Aux::None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.nodes.push(Node {
            op: Op::Param(id),
            value: store.get(id).value.clone(),
            aux: Aux::None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::MatMul(a, b))
    }

    /// `s * x` for a constant sparse `s`.
    pub fn spmm(&mut self, s: Arc<CsrMatrix>, x: Var) -> Result<Var> {
        self.push(Op::SpMM(s, x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Sub(a, b))
    }

    /// Adds the `1 x c` row `b` to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        self.push(Op::AddRow(x, b))
    }

    /// `x + c` for a constant `c` of the same shape.
    pub fn add_const(&mut self, x: Var, c: Mat) -> Result<Var> {
        self.push(Op::AddConst(x, Arc::new(c)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.push(Op::Scale(x, c))
    }

    /// Multiplies column `j` of `x` by the constant `s[j]`.
    pub fn scale_cols(&mut self, x: Var, s: Array1<f64>) -> Result<Var> {
        self.push(Op::ScaleCols(x, Arc::new(s)))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Transpose(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Relu(x))
    }

    pub fn log_sigmoid(&mut self, x: Var) -> Result<Var> {
        self.push(Op::LogSigmoid(x))
    }

    /// Pointwise `max_k (a_k[j] * x_ij + b_k[j])`.
    ///
    /// `coeffs` is a `1 x 2*pieces*c` row laid out as
    /// `[a_1 | ... | a_K | b_1 | ... | b_K]`, each block of width `c`.
    pub fn max_affine(&mut self, x: Var, coeffs: Var, pieces: usize) -> Result<Var> {
        self.push(Op::MaxAffine { x, coeffs, pieces })
    }

    /// Column means as a `1 x c` row.
    pub fn row_mean(&mut self, x: Var) -> Result<Var> {
        self.push(Op::RowMean(x))
    }

    /// Training-mode batch normalization over rows, followed by the affine
    /// `gamma * xhat + beta` with `1 x c` rows `gamma` and `beta`.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        self.push(Op::BatchNorm { x, gamma, beta })
    }

    pub fn frobenius_sq(&mut self, x: Var) -> Result<Var> {
        self.push(Op::FrobeniusSq(x))
    }

    /// `tr(x^T l x)` for a constant sparse `l`.
    pub fn trace_quad(&mut self, l: Arc<CsrMatrix>, x: Var) -> Result<Var> {
        self.push(Op::TraceQuad(l, x))
    }

    /// Row-wise dot products as an `n x 1` column.
    pub fn dot_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::DotRows(a, b))
    }

    pub fn gather_rows(&mut self, x: Var, rows: Vec<usize>) -> Result<Var> {
        self.push(Op::GatherRows(x, Arc::new(rows)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        self.push(Op::ConcatCols(parts.to_vec()))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Sum(x))
    }

    /// Mean of all entries.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let len = self.val(x).len().max(1) as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / len)
    }

    fn eval(&self, op: &Op) -> Result<(Mat, Aux)> {
        let plain = |m: Mat| Ok((m, Aux::None));
        match op {
            Op::Constant | Op::Param(_) => unreachable!("leaves are pushed directly"),
            Op::MatMul(a, b) => {
                let (a, b) = (self.val(*a), self.val(*b));
                if a.ncols() != b.nrows() {
                    return Err(Error::shape(
                        "matmul",
                        format!("{} times {}", shape_str(a), shape_str(b)),
                    ));
                }
                plain(a.dot(b))
            }
            Op::SpMM(s, x) => plain(s.mul_dense(self.val(*x).view())?),
            Op::Add(a, b) | Op::Sub(a, b) => {
                let (a, b) = (self.val(*a), self.val(*b));
                if a.dim() != b.dim() {
                    let name = if matches!(op, Op::Add(..)) { "add" } else { "sub" };
                    return Err(Error::shape(
                        name,
                        format!("{} and {}", shape_str(a), shape_str(b)),
                    ));
                }
                if matches!(op, Op::Add(..)) {
                    plain(a + b)
                } else {
                    plain(a - b)
                }
            }
            Op::AddRow(x, b) => {
                let (x, b) = (self.val(*x), self.val(*b));
                if b.nrows() != 1 || b.ncols() != x.ncols() {
                    return Err(Error::shape(
                        "add_row",
                        format!("{} plus row {}", shape_str(x), shape_str(b)),
                    ));
                }
                plain(x + b)
            }
            Op::AddConst(x, c) => {
                let x = self.val(*x);
                if x.dim() != c.dim() {
                    return Err(Error::shape(
                        "add_const",
                        format!("{} and {}", shape_str(x), shape_str(c)),
                    ));
                }
                plain(x + c.as_ref())
            }
            Op::Scale(x, c) => plain(self.val(*x) * *c),
            Op::ScaleCols(x, s) => {
                let x = self.val(*x);
                if s.len() != x.ncols() {
                    return Err(Error::shape(
                        "scale_cols",
                        format!("{} with {} column scales", shape_str(x), s.len()),
                    ));
                }
                plain(x * &s.view().insert_axis(Axis(0)))
            }
            Op::Transpose(x) => plain(self.val(*x).t().to_owned()),
            Op::Sigmoid(x) => plain(self.val(*x).mapv(sigmoid)),
            Op::Relu(x) => plain(self.val(*x).mapv(|v| v.max(0.0))),
            Op::LogSigmoid(x) => plain(self.val(*x).mapv(log_sigmoid)),
            Op::MaxAffine { x, coeffs, pieces } => {
                let (x, cf) = (self.val(*x), self.val(*coeffs));
                let c = x.ncols();
                if *pieces == 0 || *pieces > u8::MAX as usize || cf.nrows() != 1 || cf.ncols() != 2 * pieces * c {
                    return Err(Error::shape(
                        "max_affine",
                        format!(
                            "input {} needs a 1x{} coefficient row for {pieces} pieces, got {}",
                            shape_str(x),
                            2 * pieces * c,
                            shape_str(cf)
                        ),
                    ));
                }
                let cf = cf.row(0);
                let mut out = Mat::zeros(x.raw_dim());
                let mut arg = Array2::<u8>::zeros(x.raw_dim());
                for ((i, j), &v) in x.indexed_iter() {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_k = 0;
                    for k in 0..*pieces {
                        let y = cf[k * c + j] * v + cf[(pieces + k) * c + j];
                        if y > best {
                            best = y;
                            best_k = k;
                        }
                    }
                    out[[i, j]] = best;
                    arg[[i, j]] = best_k as u8;
                }
                Ok((out, Aux::Argmax(arg)))
            }
            Op::RowMean(x) => {
                let x = self.val(*x);
                if x.nrows() == 0 {
                    return Err(Error::shape("row_mean", "no rows"));
                }
                plain(x.mean_axis(Axis(0)).expect("non-empty").insert_axis(Axis(0)))
            }
            Op::BatchNorm { x, gamma, beta } => {
                let (x, g, b) = (self.val(*x), self.val(*gamma), self.val(*beta));
                let c = x.ncols();
                if g.dim() != (1, c) || b.dim() != (1, c) || x.nrows() == 0 {
                    return Err(Error::shape(
                        "batch_norm",
                        format!(
                            "input {}, scale {}, shift {}",
                            shape_str(x),
                            shape_str(g),
                            shape_str(b)
                        ),
                    ));
                }
                let n = x.nrows() as f64;
                let mean = x.mean_axis(Axis(0)).expect("non-empty");
                let centered = x - &mean.view().insert_axis(Axis(0));
                let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n;
                let inv_std = var.mapv(|v| {
                    if v <= BATCH_NORM_DEGENERATE {
                        0.0
                    } else {
                        1.0 / (v + BATCH_NORM_EPS).sqrt()
                    }
                });
                let xhat = centered * inv_std.view().insert_axis(Axis(0));
                let out = &xhat * g + b;
                Ok((out, Aux::BatchNorm { xhat, inv_std }))
            }
            Op::FrobeniusSq(x) => plain(scalar_mat(self.val(*x).iter().map(|v| v * v).sum())),
            Op::TraceQuad(l, x) => {
                let x = self.val(*x);
                let lx = l.mul_dense(x.view())?;
                plain(scalar_mat((x * &lx).sum()))
            }
            Op::DotRows(a, b) => {
                let (a, b) = (self.val(*a), self.val(*b));
                if a.dim() != b.dim() {
                    return Err(Error::shape(
                        "dot_rows",
                        format!("{} and {}", shape_str(a), shape_str(b)),
                    ));
                }
                plain((a * b).sum_axis(Axis(1)).insert_axis(Axis(1)))
            }
            Op::GatherRows(x, rows) => {
                let x = self.val(*x);
                if let Some(&bad) = rows.iter().find(|&&r| r >= x.nrows()) {
                    return Err(Error::shape(
                        "gather_rows",
                        format!("row {bad} of {}", shape_str(x)),
                    ));
                }
                plain(x.select(Axis(0), rows))
            }
            Op::ConcatCols(parts) => {
                if parts.is_empty() {
                    return Err(Error::shape("concat_cols", "no inputs"));
                }
                let n = self.val(parts[0]).nrows();
                if let Some(p) = parts.iter().find(|p| self.val(**p).nrows() != n) {
                    return Err(Error::shape(
                        "concat_cols",
                        format!("{} rows vs {}", n, shape_str(self.val(*p))),
                    ));
                }
                let views: Vec<_> = parts.iter().map(|p| self.val(*p).view()).collect();
                plain(ndarray::concatenate(Axis(1), &views).expect("row counts checked"))
            }
            Op::Sum(x) => plain(scalar_mat(self.val(*x).sum())),
        }
    }

    /// Recomputes every non-leaf node from its inputs and reports whether
    /// all cached values are reproduced bit for bit.
    pub fn replay_matches(&self) -> Result<bool> {
        let mut replay = Tape {
            nodes: Vec::with_capacity(self.nodes.len()),
        };
        for node in &self.nodes {
            match node.op {
                Op::Constant | Op::Param(_) => replay.nodes.push(node.clone()),
                _ => {
                    replay.push(node.op.clone())?;
                }
            }
        }
        Ok(self
            .nodes
            .iter()
            .zip(&replay.nodes)
            .all(|(a, b)| a.value == b.value && a.aux == b.aux))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.val(loss);
        if lv.dim() != (1, 1) {
            return Err(Error::shape(
                "backward",
                format!("loss must be 1x1, got {}", shape_str(lv)),
            ));
        }
        let mut adj: Vec<Option<Mat>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(scalar_mat(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut adj);
            adj[idx] = Some(g);
        }
        adj.resize(self.nodes.len(), None);
        Ok(Gradients { adjoints: adj })
    }

    /// Runs [`Tape::backward`] and adds parameter adjoints into `store`.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.backward(loss)?;
        for (node, g) in self.nodes.iter().zip(&grads.adjoints) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                store.get_mut(*id).grad += g;
            }
        }
        Ok(())
    }

    fn propagate(&self, node: &Node, g: &Mat, adj: &mut [Option<Mat>]) {
        let mut acc = |v: Var, d: Mat| match &mut adj[v.0] {
            Some(a) => *a += &d,
            slot @ None => *slot = Some(d),
        };
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                acc(*a, g.dot(&self.val(*b).t()));
                acc(*b, self.val(*a).t().dot(g));
            }
            Op::SpMM(s, x) => {
                acc(*x, s.transpose_mul_dense(g.view()).expect("shapes checked forward"));
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, -g);
            }
            Op::AddRow(x, b) => {
                acc(*x, g.clone());
                acc(*b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::AddConst(x, _) => acc(*x, g.clone()),
            Op::Scale(x, c) => acc(*x, g * *c),
            Op::ScaleCols(x, s) => acc(*x, g * &s.view().insert_axis(Axis(0))),
            Op::Transpose(x) => acc(*x, g.t().to_owned()),
            Op::Sigmoid(x) => {
                let y = &node.value;
                let mut d = g.clone();
                Zip::from(&mut d).and(y).for_each(|d, &y| *d *= y * (1.0 - y));
                acc(*x, d);
            }
            Op::Relu(x) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(self.val(*x))
                    .for_each(|d, &v| {
                        if v <= 0.0 {
                            *d = 0.0
                        }
                    });
                acc(*x, d);
            }
            Op::LogSigmoid(x) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(self.val(*x))
                    .for_each(|d, &v| *d *= sigmoid(-v));
                acc(*x, d);
            }
            Op::MaxAffine { x, coeffs, pieces } => {
                let Aux::Argmax(arg) = &node.aux else {
                    unreachable!("max_affine caches its argmax")
                };
                let xv = self.val(*x);
                let cf = self.val(*coeffs).row(0).to_owned();
                let c = xv.ncols();
                let mut dx = Mat::zeros(xv.raw_dim());
                let mut dc = Mat::zeros((1, 2 * pieces * c));
                for ((i, j), &k) in arg.indexed_iter() {
                    let k = k as usize;
                    let gij = g[[i, j]];
                    dx[[i, j]] = gij * cf[k * c + j];
                    dc[[0, k * c + j]] += gij * xv[[i, j]];
                    dc[[0, (pieces + k) * c + j]] += gij;
                }
                acc(*x, dx);
                acc(*coeffs, dc);
            }
            Op::RowMean(x) => {
                let n = self.val(*x).nrows();
                let row = g.row(0).to_owned() / n as f64;
                let d = row.insert_axis(Axis(0)).broadcast((n, g.ncols())).expect("row broadcast").to_owned();
                acc(*x, d);
            }
            Op::BatchNorm { x, gamma, beta } => {
                let Aux::BatchNorm { xhat, inv_std } = &node.aux else {
                    unreachable!("batch_norm caches its statistics")
                };
                let gam = self.val(*gamma);
                let n = xhat.nrows() as f64;
                acc(*beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                acc(*gamma, (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                let dxhat = g * gam;
                let sum_d = dxhat.sum_axis(Axis(0));
                let sum_dx = (&dxhat * xhat).sum_axis(Axis(0));
                let mut dx = dxhat * n;
                dx -= &sum_d.view().insert_axis(Axis(0));
                dx -= &(xhat * &sum_dx.view().insert_axis(Axis(0)));
                dx *= &(inv_std / n).view().insert_axis(Axis(0));
                acc(*x, dx);
            }
            Op::FrobeniusSq(x) => acc(*x, self.val(*x) * (2.0 * g[[0, 0]])),
            Op::TraceQuad(l, x) => {
                let xv = self.val(*x).view();
                let d = l.mul_dense(xv).expect("checked") + l.transpose_mul_dense(xv).expect("checked");
                acc(*x, d * g[[0, 0]]);
            }
            Op::DotRows(a, b) => {
                acc(*a, self.val(*b) * g);
                acc(*b, self.val(*a) * g);
            }
            Op::GatherRows(x, rows) => {
                let mut d = Mat::zeros(self.val(*x).raw_dim());
                for (r, &src) in rows.iter().enumerate() {
                    let mut dst = d.row_mut(src);
                    dst += &g.row(r);
                }
                acc(*x, d);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let w = self.val(*p).ncols();
                    acc(*p, g.slice(s![.., start..start + w]).to_owned());
                    start += w;
                }
            }
            Op::Sum(x) => acc(*x, Mat::from_elem(self.val(*x).raw_dim(), g[[0, 0]])),
        }
    }
}

pub(crate) fn scalar_mat(v: f64) -> Mat {
    Mat::from_elem((1, 1), v)
}

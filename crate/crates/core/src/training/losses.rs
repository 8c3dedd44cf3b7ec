//! The three training objectives recorded on a [`Tape`].

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Mat, Tape, Var};
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Weights of the reconstruction (`beta`) and regularization (`gamma`)
/// terms, and the contrastive temperature `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub beta: f64,
    pub gamma: f64,
    pub tau: f64,
}

/// The reconstruction term is two orders of magnitude larger than the other
/// terms at initialization, hence the small default `beta`.
impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            beta: 0.01,
            gamma: 1.0,
            tau: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) || !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidArgument(format!(
                "beta and gamma must lie in [0, 1], got beta={}, gamma={}",
                self.beta, self.gamma
            )));
        }
        if !(self.tau > 0.0 && self.tau <= 100.0) {
            return Err(Error::InvalidArgument(format!("tau must lie in (0, 100], got {}", self.tau)));
        }
        Ok(())
    }

    /// `beta * reconstruction + gamma * regularization - contrastive`.
    pub fn combine(&self, contrastive: f64, reconstruction: f64, regularization: f64) -> f64 {
        self.beta * reconstruction + self.gamma * regularization - contrastive
    }
}

/// Mean log-sigmoid similarity of positive pairs minus the mean over sampled
/// negatives. Every node must carry the same number of negatives.
pub fn contrastive_loss(tape: &mut Tape, z: Var, z_pos: Var, negatives: &[Vec<usize>], tau: f64) -> Result<Var> {
    let n = tape.value(z).nrows();
    if negatives.len() != n {
        return Err(Error::shape(
            "contrastive_loss",
            format!("{} negative lists for {n} nodes", negatives.len()),
        ));
    }
    let m = negatives.first().map_or(0, Vec::len);
    if m == 0 || negatives.iter().any(|l| l.len() != m) {
        return Err(Error::shape("contrastive_loss", "every node needs the same positive number of negatives"));
    }
    let pos = tape.dot_rows(z, z_pos)?;
    let pos = tape.scale(pos, 1.0 / tau)?;
    let pos = tape.log_sigmoid(pos)?;
    let pos = tape.mean(pos)?;

    let anchors: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, m)).collect();
    let others: Vec<usize> = negatives.iter().flatten().copied().collect();
    let a = tape.gather_rows(z, anchors)?;
    let b = tape.gather_rows(z, others)?;
    let neg = tape.dot_rows(a, b)?;
    let neg = tape.scale(neg, 1.0 / tau)?;
    let neg = tape.log_sigmoid(neg)?;
    let neg = tape.mean(neg)?;
    tape.sub(pos, neg)
}

/// Constants of the reconstruction objective that do not depend on `Z`.
#[derive(Debug, Clone)]
pub struct ReconstructionTarget {
    adjacency: Arc<CsrMatrix>,
    /// `X^T`, `p x n`.
    attributes_t: Mat,
    /// `||A||_F^2 + ||X^T X||_F^2`
    constant: f64,
}

impl ReconstructionTarget {
    pub fn new(adjacency: Arc<CsrMatrix>, attributes: &Mat) -> Result<Self> {
        if attributes.nrows() != adjacency.n_rows() {
            return Err(Error::shape(
                "reconstruction_loss",
                format!("{} attribute rows for {} nodes", attributes.nrows(), adjacency.n_rows()),
            ));
        }
        let gram = attributes.t().dot(attributes);
        let constant = adjacency.frobenius_squared() + gram.iter().map(|v| v * v).sum::<f64>();
        Ok(ReconstructionTarget {
            adjacency,
            attributes_t: attributes.t().to_owned(),
            constant,
        })
    }
}

/// `(||Z Z^T - A||^2 + ||Z Z^T - X X^T||^2) / n^2`, evaluated through
/// `d x d` and `p x d` Gram products so that no `n x n` matrix is formed:
///
/// `||ZZ^T - A||^2 = ||Z^T Z||^2 - 2 tr(Z^T A Z) + ||A||^2` and
/// `||ZZ^T - XX^T||^2 = ||Z^T Z||^2 - 2 ||X^T Z||^2 + ||X^T X||^2`.
pub fn reconstruction_loss(tape: &mut Tape, z: Var, target: &ReconstructionTarget) -> Result<Var> {
    let n = tape.value(z).nrows();
    if n != target.adjacency.n_rows() {
        return Err(Error::shape(
            "reconstruction_loss",
            format!("{n} embedding rows for {} nodes", target.adjacency.n_rows()),
        ));
    }
    let zt = tape.transpose(z)?;
    let ztz = tape.matmul(zt, z)?;
    let ztz = tape.frobenius_sq(ztz)?;
    let cross_a = tape.trace_quad(target.adjacency.clone(), z)?;
    let xt = tape.constant(target.attributes_t.clone());
    let xtz = tape.matmul(xt, z)?;
    let cross_x = tape.frobenius_sq(xtz)?;

    let quartic = tape.scale(ztz, 2.0)?;
    let cross = tape.add(cross_a, cross_x)?;
    let cross = tape.scale(cross, -2.0)?;
    let total = tape.add(quartic, cross)?;
    let total = tape.add_const(total, Mat::from_elem((1, 1), target.constant))?;
    tape.scale(total, 1.0 / (n * n) as f64)
}

/// `tr(Z^T L Z) / n` for the combinatorial Laplacian `L = D - W`.
pub fn regularization_loss(tape: &mut Tape, z: Var, laplacian: Arc<CsrMatrix>) -> Result<Var> {
    let n = tape.value(z).nrows();
    let t = tape.trace_quad(laplacian, z)?;
    tape.scale(t, 1.0 / n as f64)
}

/// `beta * L_sa + gamma * L_r - L_s`.
pub fn total_loss(tape: &mut Tape, contrastive: Var, reconstruction: Var, regularization: Var, weights: &LossWeights) -> Result<Var> {
    let a = tape.scale(reconstruction, weights.beta)?;
    let b = tape.scale(regularization, weights.gamma)?;
    let ab = tape.add(a, b)?;
    tape.sub(ab, contrastive)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{laplacian, Graph};
    use ndarray::array;

    fn edge() -> Graph {
        Graph::from_edges(2, [(0, 1, 1.0)]).unwrap()
    }

    #[test]
    fn contrastive_hand_value() {
        let mut t = Tape::new();
        let z = t.constant(array![[1.0, 0.0], [0.0, 1.0]]);
        // node 0: positive (1,0), negative node 1; node 1: positive (0,1), negative node 0
        let zp = t.constant(array![[1.0, 0.0], [0.0, 1.0]]);
        let l = contrastive_loss(&mut t, z, zp, &[vec![1], vec![0]], 1.0).unwrap();
        let expected = -(-1.0f64).exp().ln_1p() + std::f64::consts::LN_2;
        assert!((t.scalar(l) - 0.3799).abs() < 1e-4);
        assert!((t.scalar(l) - expected).abs() < 1e-15);
    }

    #[test]
    fn contrastive_zero_dots() {
        let mut t = Tape::new();
        let z = t.constant(array![[1.0, 0.0], [0.0, 1.0]]);
        let zp = t.constant(array![[0.0, 3.0], [2.0, 0.0]]);
        let l = contrastive_loss(&mut t, z, zp, &[vec![1, 1], vec![0, 0]], 2.0).unwrap();
        assert_eq!(t.scalar(l), 0.0);
        assert!(contrastive_loss(&mut t, z, zp, &[vec![1], vec![]], 2.0).is_err());
    }

    #[test]
    fn reconstruction_fixtures() {
        let g = edge();
        let a = Arc::new(g.adjacency().clone());
        let target = ReconstructionTarget::new(a.clone(), &Mat::zeros((2, 3))).unwrap();
        let mut t = Tape::new();
        let z = t.constant(Mat::zeros((2, 4)));
        let l = reconstruction_loss(&mut t, z, &target).unwrap();
        assert_eq!(t.scalar(l), 0.5);

        let empty = Arc::new(CsrMatrix::zeros(2, 2));
        let target = ReconstructionTarget::new(empty, &Mat::zeros((2, 1))).unwrap();
        let l = reconstruction_loss(&mut t, z, &target).unwrap();
        assert_eq!(t.scalar(l), 0.0);

        // Z Z^T = A = X X^T for A = I (diagonal stored as a sparse constant)
        let ident = Arc::new(CsrMatrix::identity(2));
        let x = array![[1.0, 0.0], [0.0, 1.0]];
        let target = ReconstructionTarget::new(ident, &x).unwrap();
        let z = t.constant(x.clone());
        let l = reconstruction_loss(&mut t, z, &target).unwrap();
        assert!(t.scalar(l).abs() < 1e-15);
    }

    #[test]
    fn regularization_fixtures() {
        let g = edge();
        let l = Arc::new(laplacian(&g));
        let mut t = Tape::new();
        let z = t.constant(array![[1.0], [-1.0]]);
        let r = regularization_loss(&mut t, z, l.clone()).unwrap();
        assert_eq!(t.scalar(r), 2.0);
        let c = t.constant(array![[0.3, 7.0], [0.3, 7.0]]);
        let r = regularization_loss(&mut t, c, l).unwrap();
        assert_eq!(t.scalar(r), 0.0);
    }

    #[test]
    fn total_combines_terms() {
        let w = LossWeights {
            beta: 1.0,
            gamma: 1.0,
            tau: 1.0,
        };
        assert!((w.combine(0.38, 0.5, 2.0) - 2.12).abs() < 1e-12);
        let zero = LossWeights {
            beta: 0.0,
            gamma: 0.0,
            tau: 1.0,
        };
        assert_eq!(zero.combine(0.7, 5.0, 3.0), -0.7);
        let mut t = Tape::new();
        let s = t.constant(array![[0.38]]);
        let a = t.constant(array![[0.5]]);
        let r = t.constant(array![[2.0]]);
        let tot = total_loss(&mut t, s, a, r, &w).unwrap();
        assert!((t.scalar(tot) - 2.12).abs() < 1e-12);
    }

    #[test]
    fn weight_ranges() {
        assert!(LossWeights::default().validate().is_ok());
        assert!(LossWeights { tau: 0.0, ..Default::default() }.validate().is_err());
        assert!(LossWeights { beta: 1.5, ..Default::default() }.validate().is_err());
        assert!(LossWeights { tau: 100.0, ..Default::default() }.validate().is_ok());
    }
}

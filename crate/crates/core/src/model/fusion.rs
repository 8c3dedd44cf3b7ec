use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

/// How the outputs of the per-order GCN stacks are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// `alpha_1 H_1 | ... | alpha_r H_r`
    #[serde(alias = "cat")]
    Concat,
    /// `sum_i alpha_i H_i`
    Sum,
}

impl Aggregation {
    pub fn as_str(self) -> &'static str {
        match self {
            Aggregation::Concat => "cat",
            Aggregation::Sum => "sum",
        }
    }

    /// Width of the fused matrix for `r` stacks of width `w` plus
    /// `attr_width` appended attribute columns.
    pub fn fused_width(self, r: usize, w: usize, attr_width: usize) -> usize {
        match self {
            Aggregation::Concat => r * w + attr_width,
            Aggregation::Sum => w + attr_width,
        }
    }
}

/// Softmax of per-stack modularities, shifted by the maximum for stability.
pub fn fusion_weights(q: &[f64]) -> Vec<f64> {
    if q.is_empty() {
        return Vec::new();
    }
    let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = q.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Weighted aggregation of stack outputs, optionally followed by the raw
/// attribute columns.
pub fn fuse(
    tape: &mut Tape,
    outputs: &[Var],
    alpha: &[f64],
    mode: Aggregation,
    attributes: Option<&Array2<f64>>,
) -> Result<Var> {
    if outputs.is_empty() || outputs.len() != alpha.len() {
        return Err(Error::shape(
            "fuse",
            format!("{} outputs with {} weights", outputs.len(), alpha.len()),
        ));
    }
    let weighted = outputs
        .iter()
        .zip(alpha)
        .map(|(&h, &a)| if a == 1.0 { Ok(h) } else { tape.scale(h, a) })
        .collect::<Result<Vec<_>>>()?;
    let mut fused = match mode {
        Aggregation::Sum => {
            let mut acc = weighted[0];
            for &h in &weighted[1..] {
                acc = tape.add(acc, h)?;
            }
            acc
        }
        Aggregation::Concat if weighted.len() == 1 => weighted[0],
        Aggregation::Concat => tape.concat_cols(&weighted)?,
    };
    if let Some(x) = attributes {
        let xv = tape.constant(x.clone());
        fused = tape.concat_cols(&[fused, xv])?;
    }
    Ok(fused)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmax_examples() {
        assert_eq!(fusion_weights(&[0.3, 0.3, 0.3, 0.3]), vec![0.25; 4]);
        let a = fusion_weights(&[0.0, 1.0]);
        assert!((a[0] - 0.2689).abs() < 1e-4 && (a[1] - 0.7311).abs() < 1e-4);
        assert_eq!(fusion_weights(&[-0.4]), vec![1.0]);
    }

    #[test]
    fn degenerate_weights_select_one_stack() {
        let mut t = Tape::new();
        let h1 = t.constant(array![[1.0, 2.0], [3.0, 4.0]]);
        let h2 = t.constant(array![[9.0, 9.0], [9.0, 9.0]]);
        let f = fuse(&mut t, &[h1, h2], &[1.0, 0.0], Aggregation::Sum, None).unwrap();
        assert_eq!(t.value(f), t.value(h1));
        let single = fuse(&mut t, &[h1], &[1.0], Aggregation::Concat, None).unwrap();
        assert_eq!(t.value(single), t.value(h1));
    }

    #[test]
    fn concat_width_with_attributes() {
        let n = 3;
        let mut t = Tape::new();
        let hs: Vec<_> = (0..4).map(|_| t.constant(Array2::ones((n, 100)))).collect();
        let x = Array2::zeros((n, 19));
        let f = fuse(&mut t, &hs, &[0.25; 4], Aggregation::Concat, Some(&x)).unwrap();
        assert_eq!(t.value(f).dim(), (n, 419));
        assert_eq!(Aggregation::Concat.fused_width(4, 100, 19), 419);
        assert!(fuse(&mut t, &hs, &[0.5; 2], Aggregation::Sum, None).is_err());
    }
}

use super::{ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    /// Parameter name and flat index where the maximum occurred.
    pub worst: Option<(String, usize)>,
    pub entries_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Denominator floor for near-zero gradient entries.
const REL_FLOOR: f64 = 1e-6;

/// Checks every parameter entry of `store` against central differences of
/// step `step`. `f` must rebuild the loss deterministically from the store.
pub fn gradient_check<F>(store: &mut ParamStore, step: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var>,
{
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = f(store, &mut tape)?;
        let v = tape.scalar(loss);
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("loss {v} during gradient check")));
        }
        Ok(v)
    };

    store.zero_grad();
    let mut tape = Tape::new();
    let loss = f(store, &mut tape)?;
    tape.backward_into(loss, store)?;
    let analytic: Vec<Vec<f64>> = store.iter().map(|p| p.grad.iter().copied().collect()).collect();
    if analytic.iter().flatten().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("reverse-mode gradient".into()));
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        entries_checked: 0,
    };
    let ids: Vec<_> = store.ids().collect();
    for (pi, id) in ids.into_iter().enumerate() {
        let len = store.get(id).value.len();
        for (k, &a) in analytic[pi].iter().enumerate().take(len) {
            let orig = store.get(id).value.as_slice().expect("standard layout")[k];
            store.get_mut(id).value.as_slice_mut().expect("standard layout")[k] = orig + step;
            let up = eval(store)?;
            store.get_mut(id).value.as_slice_mut().expect("standard layout")[k] = orig - step;
            let down = eval(store)?;
            store.get_mut(id).value.as_slice_mut().expect("standard layout")[k] = orig;
            let numeric = (up - down) / (2.0 * step);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.entries_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((store.get(id).name.clone(), k));
            }
        }
    }
    Ok(report)
}

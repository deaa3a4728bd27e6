//! Central finite-difference gradient checking.
//!
//! The oracle only ever evaluates the forward pass, so it is independent of
//! the backward rules it checks.

use super::{Graph, ParamStore, Var};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct Mismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_abs_err: f64,
    pub mismatches: Vec<Mismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub step: f64,
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            step: 1e-4,
            rtol: 1e-4,
            atol: 1e-6,
        }
    }
}

/// Compares backprop gradients of `loss` with central differences over every
/// coordinate of every trainable parameter in `store`.
pub fn check<F>(store: &mut ParamStore<f64>, tol: Tolerance, loss: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut g = Graph::new();
    let l = loss(&mut g, store)?;
    let grads = g.backward(l)?;
    store.zero_grad();
    store.accumulate(&g, &grads);

    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::inference();
        let l = loss(&mut g, store)?;
        Ok(g.value(l).item())
    };

    let mut report = GradCheckReport::default();
    let ids: Vec<_> = store
        .iter()
        .filter(|(_, p)| !p.frozen)
        .map(|(id, _)| id)
        .collect();
    for id in ids {
        let analytic = store.grad(id).expect("accumulated above").data().to_vec();
        for (i, &a) in analytic.iter().enumerate() {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + tol.step;
            let up = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig - tol.step;
            let down = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig;

            let numeric = (up - down) / (2.0 * tol.step);
            let err = (a - numeric).abs();
            report.checked += 1;
            report.max_abs_err = report.max_abs_err.max(err);
            if err > tol.atol.max(tol.rtol * a.abs().max(numeric.abs())) {
                report.mismatches.push(Mismatch {
                    param: store.get(id).name.clone(),
                    index: i,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    store.zero_grad();
    Ok(report)
}

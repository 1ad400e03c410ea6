use std::fmt;

use super::graph::{Graph, NodeId};
use super::params::ParamStore;
use crate::error::Result;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradViolation {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub error: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub violations: Vec<GradViolation>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} entries checked, max rel. error {:.3e} (tol {:.1e}): {}",
            self.checked,
            self.max_error,
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        )?;
        for v in self.violations.iter().take(20) {
            writeln!(
                f,
                "  {}[{}]: analytic {:.9e} numeric {:.9e} (err {:.3e})",
                v.param, v.index, v.analytic, v.numeric, v.error
            )?;
        }
        Ok(())
    }
}

/// Compares analytic parameter gradients of the scalar built by `loss` with
/// central finite differences. Every entry of every parameter is checked;
/// the error measure is `|analytic − numeric| / max(1, |numeric|)`.
pub fn check_gradients<F>(store: &mut ParamStore, tol: f64, loss: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<NodeId>,
{
    store.zero_grad();
    let mut g = Graph::new();
    let out = loss(&mut g, store)?;
    g.backward(out, store);

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let out = loss(&mut g, store)?;
        Ok(g.value(out).item())
    };

    let mut report = GradCheckReport {
        tolerance: tol,
        ..Default::default()
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let analytic = store.get(id).grad();
        for idx in 0..analytic.len() {
            let orig = store.get(id).value.as_slice()[idx];
            store.get_mut(id).value.as_mut_slice()[idx] = orig + FD_STEP;
            let plus = eval(store)?;
            store.get_mut(id).value.as_mut_slice()[idx] = orig - FD_STEP;
            let minus = eval(store)?;
            store.get_mut(id).value.as_mut_slice()[idx] = orig;

            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic.as_slice()[idx];
            let error = (a - numeric).abs() / numeric.abs().max(1.0);
            report.checked += 1;
            report.max_error = report.max_error.max(error);
            if error.is_nan() || error > tol {
                report.violations.push(GradViolation {
                    param: store.get(id).name.clone(),
                    index: idx,
                    analytic: a,
                    numeric,
                    error,
                });
            }
        }
    }
    store.zero_grad();
    Ok(report)
}

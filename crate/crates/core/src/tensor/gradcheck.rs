//! Central finite differences, used to verify backward rules.
//!
//! Only forward evaluations are used here, so the numeric side never
//! shares code with [`Graph::backward`](super::Graph::backward).

use super::{ParamStore, Tensor};
use crate::error::Result;

/// Step size for the central difference.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Denominator floor so gradients that are numerically zero compare absolutely.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Numeric gradient of `f` at `x`.
pub fn numeric_gradient(
    x: &Tensor,
    step: f64,
    mut f: impl FnMut(&Tensor) -> Result<f64>,
) -> Result<Vec<f64>> {
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - step;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        out.push((plus - minus) / (2.0 * step));
    }
    Ok(out)
}

/// Comparison result for one parameter tensor.
#[derive(Clone, Debug)]
pub struct GroupReport {
    pub name: String,
    pub numel: usize,
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares the gradients currently stored in `store` against central
/// differences of `loss`, for every parameter whose name satisfies `select`.
pub fn check_store(
    store: &mut ParamStore,
    step: f64,
    mut select: impl FnMut(&str) -> bool,
    mut loss: impl FnMut(&ParamStore) -> Result<f64>,
) -> Result<Vec<GroupReport>> {
    let ids: Vec<_> = store
        .iter()
        .filter(|(_, p)| select(&p.name))
        .map(|(id, _)| id)
        .collect();
    let mut reports = Vec::with_capacity(ids.len());
    for id in ids {
        let numel = store.get(id).value.numel();
        let mut report = GroupReport {
            name: store.get(id).name.clone(),
            numel,
            max_relative_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in 0..numel {
            let orig = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + step;
            let plus = loss(store)?;
            store.get_mut(id).value.data_mut()[i] = orig - step;
            let minus = loss(store)?;
            store.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let analytic = store.get(id).grad[i];
            let err = relative_error(analytic, numeric);
            if err > report.max_relative_error || i == 0 {
                report.max_relative_error = err;
                report.worst_index = i;
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
        reports.push(report);
    }
    Ok(reports)
}

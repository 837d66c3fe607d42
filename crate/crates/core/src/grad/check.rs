//! Central finite-difference gradient checking.

use super::params::{Grads, ParamId, ParamStore};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Relative error with an absolute floor so that near-zero gradients are
/// compared on an absolute scale.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares `analytic` against central differences of `loss` for every
/// scalar of the listed parameters (all parameters when `ids` is empty).
pub fn check_params<F>(store: &ParamStore, analytic: &Grads, ids: &[ParamId], step: f64, mut loss: F) -> GradCheckReport
where
    F: FnMut(&ParamStore) -> f64,
{
    let ids: Vec<ParamId> = if ids.is_empty() {
        store.ids().collect()
    } else {
        ids.to_vec()
    };
    let mut probe = store.clone();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    for id in ids {
        let n = store.get(id).len();
        for k in 0..n {
            let orig = store.get(id).as_slice().expect("standard layout")[k];
            probe.get_mut(id).as_slice_mut().unwrap()[k] = orig + step;
            let plus = loss(&probe);
            probe.get_mut(id).as_slice_mut().unwrap()[k] = orig - step;
            let minus = loss(&probe);
            probe.get_mut(id).as_slice_mut().unwrap()[k] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic
                .get(id)
                .map(|g| g.as_slice().expect("standard layout")[k])
                .unwrap_or(0.0);
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((store.name(id).to_string(), k, a, numeric));
            }
        }
    }
    report
}

//! Central finite-difference gradient checking.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};

/// Worst disagreement between analytic and numeric gradients for one parameter.
#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Relative error with an absolute floor so near-zero gradients compare sanely.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compare reverse-mode gradients of `loss_fn` with central differences of
/// step `h` for every scalar of every parameter in `store`. Returns the worst
/// entry per parameter. `loss_fn` must be deterministic.
pub fn check_gradients<F>(store: &mut ParamStore, h: f64, mut loss_fn: F) -> Result<Vec<GradCheckEntry>>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<Var>,
{
    store.zero_grad();
    let mut g = Graph::new();
    let loss = loss_fn(&mut g, store)?;
    g.backward(loss, store)?;
    let analytic: Vec<Vec<f64>> = store.ids().map(|id| store.grad(id).data().to_vec()).collect();
    store.zero_grad();

    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let loss = loss_fn(&mut g, store)?;
        Ok(g.value(loss).data()[0])
    };

    let mut report = Vec::new();
    for pid in 0..store.len() {
        let id = ParamId(pid);
        let mut worst: Option<GradCheckEntry> = None;
        for k in 0..store.value(id).len() {
            let orig = store.value(id).data()[k];
            store.get_mut(id).value.data_mut()[k] = orig + h;
            let plus = eval(store)?;
            store.get_mut(id).value.data_mut()[k] = orig - h;
            let minus = eval(store)?;
            store.get_mut(id).value.data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[pid][k];
            let rel = relative_error(a, numeric);
            if worst.as_ref().is_none_or(|w| rel > w.rel_error) {
                worst = Some(GradCheckEntry {
                    name: store.name(id).to_string(),
                    index: k,
                    analytic: a,
                    numeric,
                    rel_error: rel,
                });
            }
        }
        report.extend(worst);
    }
    Ok(report)
}

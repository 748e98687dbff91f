//! Central finite-difference verification of reverse-mode gradients.

use crate::error::Result;
use crate::nn::{Graph, NodeId, ParamStore};

/// Denominator floor of the relative error, so parameters whose true
/// gradient is ~0 are compared on an absolute scale.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares `backward` against `(L(θ+h) - L(θ-h)) / 2h` for every element
/// of every parameter in `store`. `build` records the loss onto a fresh graph.
pub fn check_gradients<F>(store: &ParamStore<f64>, step: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<NodeId>,
{
    let loss_at = |s: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let l = build(&mut g, s)?;
        Ok(g.value(l).item())
    };
    let mut g = Graph::new();
    let loss = build(&mut g, store)?;
    let grads = g.backward(loss)?;

    let mut probe = store.clone();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: String::new(),
    };
    let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
    for name in names {
        let n = store.get(&name)?.len();
        for i in 0..n {
            let orig = store.get(&name)?.data()[i];
            probe.get_mut(&name)?.data_mut()[i] = orig + step;
            let up = loss_at(&probe)?;
            probe.get_mut(&name)?.data_mut()[i] = orig - step;
            let down = loss_at(&probe)?;
            probe.get_mut(&name)?.data_mut()[i] = orig;

            let numeric = (up - down) / (2.0 * step);
            let analytic = grads.param(&name).map_or(0.0, |t| t.data()[i]);
            let err = relative_error(analytic, numeric);
            report.checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = format!("{name}[{i}]: analytic {analytic:e} numeric {numeric:e}");
            }
        }
    }
    Ok(report)
}

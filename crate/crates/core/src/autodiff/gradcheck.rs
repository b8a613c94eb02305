use super::graph::{Graph, NodeId};
use super::Real;
use crate::error::{Error, Result};

/// Largest relative disagreement between the analytic gradient of `root`
/// with respect to `leaf` and a central finite difference with `step`.
///
/// The error of one entry is `|a - n| / max(|a|, |n|, 1e-8)`. The graph
/// passed in is left untouched; evaluation happens on a copy.
pub fn grad_check(graph: &Graph, root: NodeId, leaf: NodeId, step: Real) -> Result<Real> {
    if !(step > 0.0) {
        return Err(Error::Contract(format!("finite-difference step {step} must be positive")));
    }
    if !graph.is_leaf(leaf) {
        return Err(Error::Contract("grad_check target must be a leaf".into()));
    }
    let mut work = graph.clone();
    work.track_grad(leaf).ok();
    work.forward(root)?;
    work.backward(root)?;
    let base: Vec<Real> = work
        .value(leaf)
        .ok_or_else(|| Error::State("leaf has no value".into()))?
        .to_vec();
    let analytic: Vec<Real> = work
        .grad(leaf)
        .map(<[Real]>::to_vec)
        .unwrap_or_else(|| vec![0.0; base.len()]);

    let mut probe = graph.clone();
    let mut eval_at = |values: Vec<Real>| -> Result<Real> {
        probe.set_leaf_value(leaf, values)?;
        probe.evaluate()?;
        Ok(probe.value(root).expect("evaluated")[0])
    };

    let mut worst: Real = 0.0;
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += step;
        let mut minus = base.clone();
        minus[i] -= step;
        let numeric = (eval_at(plus)? - eval_at(minus)?) / (2.0 * step);
        if !numeric.is_finite() {
            return Err(Error::Numeric {
                node: leaf.index(),
                op: "finite_difference",
            });
        }
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

//! Central finite-difference gradient validation.

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Compare analytic gradients of a scalar-valued graph against central finite
/// differences.
///
/// `build` constructs the loss from parameter vars inside a fresh graph; it is
/// re-invoked for every perturbed evaluation, so it must be deterministic.
/// Returns `max over parameter components of |analytic - fd| / (|fd| + 1e-12)`.
pub fn finite_diff_check<F>(build: F, params: &[Tensor<f64>], step: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    assert!(step > 0.0, "finite-difference step must be positive");

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p)).collect();
    let loss = build(&mut g, &vars)?;
    let mut grads = g.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(params)
        .map(|(v, p)| grads.take_or_zeros(*v, p.shape()))
        .collect();

    let eval = |ps: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.param(p)).collect();
        let loss = build(&mut g, &vars)?;
        let v = g.value(loss).item();
        if !v.is_finite() {
            return Err(Error::NonFinite { op: "finite_diff_check" });
        }
        Ok(v)
    };

    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut max_rel = 0.0f64;
    for pi in 0..params.len() {
        for ei in 0..params[pi].len() {
            let orig = work[pi].data()[ei];
            work[pi].data_mut()[ei] = orig + step;
            let fp = eval(&work)?;
            work[pi].data_mut()[ei] = orig - step;
            let fm = eval(&work)?;
            work[pi].data_mut()[ei] = orig;
            let fd = (fp - fm) / (2.0 * step);
            let rel = (analytic[pi].data()[ei] - fd).abs() / (fd.abs() + 1e-12);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

use super::replay::Replay;
use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Central-difference gradient of `f` with respect to every input entry.
///
/// `f` is recorded once; the shifted evaluations replay that tape in
/// double-double precision so rounding in the forward pass does not leak into
/// small gradient entries.
pub fn numeric_gradient<F>(f: &F, inputs: &[Tensor], eps: f64) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut graph = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| graph.constant(t.clone())).collect();
    let out = f(&mut graph, &vars)?;
    if graph.value(out).len() != 1 {
        return Err(Error::Contract(format!(
            "gradient check needs a scalar function, got shape {:?}",
            graph.value(out).shape()
        )));
    }
    let replay = Replay::new(&graph, out)?;
    let mut grads = Vec::with_capacity(inputs.len());
    for (var, input) in vars.iter().zip(inputs) {
        let downstream = replay.downstream(*var);
        let mut g = Tensor::zeros(input.shape());
        for i in 0..input.len() {
            let plus = replay.perturbed(*var, i, eps, &downstream)?;
            let minus = replay.perturbed(*var, i, -eps, &downstream)?;
            g.data_mut()[i] = ((plus - minus) / (2.0 * eps)).hi();
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Compares reverse-mode gradients of the scalar function `f` against central
/// differences and returns the worst relative error over all input entries.
///
/// `f` receives one graph variable per input tensor, in order.
///
/// ```
/// use tpg_dnn::tensor::{grad_check, Tensor};
///
/// let err = grad_check(
///     |g, x| {
///         let sq = g.mul(x[0], x[0])?;
///         Ok(g.sum_all(sq))
///     },
///     &[Tensor::scalar(2.0)],
///     1e-5,
/// )
/// .unwrap();
/// assert!(err < 1e-6);
/// ```
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Contract(format!("eps {eps} outside [1e-7, 1e-3]")));
    }
    let mut graph = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| graph.variable(t.clone())).collect();
    let out = f(&mut graph, &vars)?;
    graph.backward(out)?;
    let numeric = numeric_gradient(&f, inputs, eps)?;

    let mut worst: f64 = 0.0;
    for (var, num) in vars.iter().zip(&numeric) {
        let analytic = graph
            .grad(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(num.shape()));
        for (a, n) in analytic.data().iter().zip(num.data()) {
            worst = worst.max(relative_error(*a, *n));
        }
    }
    Ok(worst)
}

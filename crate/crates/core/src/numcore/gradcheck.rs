use crate::error::{Error, Result};

use super::graph::{Graph, Var};
use super::tensor::Tensor;

/// Result of comparing backward-pass gradients with central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Maximum relative error for each parameter, in input order.
    pub per_param: Vec<f64>,
    pub max_relative_error: f64,
}

/// Relative error with denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

/// Checks the gradient of the scalar produced by `build` with respect to every
/// component of `params` against `(f(x+eps) - f(x-eps)) / 2eps`.
///
/// `build` receives a fresh graph and the parameter leaves, in order, and must
/// return the loss node. It is called once for the analytic pass and twice
/// per parameter component.
pub fn grad_check<F>(params: &[Tensor], epsilon: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    grad_check_with(params, epsilon, build, |_| {})
}

/// As [`grad_check`], with a hook that may configure each graph first.
pub fn grad_check_with<F, S>(params: &[Tensor], epsilon: f64, build: F, setup: S) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
    S: Fn(&mut Graph),
{
    if !(1e-7..=1e-4).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!(
            "epsilon {epsilon} outside [1e-7, 1e-4]"
        )));
    }
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let loss = build(&mut g, &vars)?;
        scalar(&g, loss)
    };

    let mut g = Graph::new();
    setup(&mut g);
    let vars: Vec<Var> = params.iter().map(|t| g.param(t)).collect();
    let loss = build(&mut g, &vars)?;
    scalar(&g, loss)?;
    g.backward(loss)?;

    let mut work = params.to_vec();
    let mut per_param = Vec::with_capacity(params.len());
    for (pi, var) in vars.iter().enumerate() {
        let analytic = g.grad(*var);
        let mut worst = 0.0f64;
        for (ci, &a) in analytic.iter().enumerate() {
            let orig = work[pi].data()[ci];
            work[pi].data_mut()[ci] = orig + epsilon;
            let up = eval(&work)?;
            work[pi].data_mut()[ci] = orig - epsilon;
            let down = eval(&work)?;
            work[pi].data_mut()[ci] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            worst = worst.max(relative_error(a, numeric));
        }
        per_param.push(worst);
    }
    let max_relative_error = per_param.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_param,
        max_relative_error,
    })
}

fn scalar(g: &Graph, loss: Var) -> Result<f64> {
    let v = g.value(loss);
    if v.len() != 1 {
        return Err(Error::dim(
            "grad_check",
            format!("loss must be scalar, got shape {:?}", v.shape()),
        ));
    }
    Ok(v.item())
}

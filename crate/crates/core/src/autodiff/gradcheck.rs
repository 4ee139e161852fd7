//! Central finite-difference verification of analytic gradients.

use serde::Serialize;

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Lower bound on the denominator of the relative error, so that
    /// gradients at the level of finite-difference round-off are compared
    /// absolutely instead of relatively.
    pub scale_floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: 1e-6,
            tolerance: 1e-4,
            scale_floor: 1e-3,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub index: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(floor)
}

fn eval_scalar<F>(f: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|p| g.constant(p.clone())).collect();
    let out = f(&mut g, &ids)?;
    let v = g.value(out);
    if !v.is_scalar() {
        return Err(Error::NonScalarLoss(v.shape().to_vec()));
    }
    Ok(v.item())
}

/// Gradients of the scalar `f` with respect to each of `params`, by reverse mode.
pub fn analytic_gradient<F>(f: &F, params: &[Tensor]) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|p| g.param(p.clone())).collect();
    let out = f(&mut g, &ids)?;
    g.backward(out)?;
    Ok(ids.iter().map(|&id| g.grad(id)).collect())
}

/// Central differences `(f(x+ε) − f(x−ε)) / 2ε`, one coordinate at a time.
pub fn numeric_gradient<F>(f: &F, params: &[Tensor], epsilon: f64) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let mut work = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut grad = Tensor::zeros(params[p].shape());
        for i in 0..params[p].numel() {
            let orig = work[p].data()[i];
            work[p].data_mut()[i] = orig + epsilon;
            let plus = eval_scalar(f, &work)?;
            work[p].data_mut()[i] = orig - epsilon;
            let minus = eval_scalar(f, &work)?;
            work[p].data_mut()[i] = orig;
            grad.data_mut()[i] = (plus - minus) / (2.0 * epsilon);
        }
        out.push(grad);
    }
    Ok(out)
}

pub fn compare_gradients(
    analytic: &[Tensor],
    numeric: &[Tensor],
    options: &GradCheckOptions,
) -> GradCheckReport {
    let params = analytic
        .iter()
        .zip(numeric)
        .enumerate()
        .map(|(index, (a, n))| {
            let (mut rel, mut abs) = (0.0f64, 0.0f64);
            for (&x, &y) in a.data().iter().zip(n.data()) {
                rel = rel.max(relative_error(x, y, options.scale_floor));
                abs = abs.max((x - y).abs());
            }
            // NaN comparisons are false, so a NaN error fails the check.
            let passed = rel < options.tolerance;
            ParamCheck {
                index,
                max_rel_error: rel,
                max_abs_error: abs,
                passed,
            }
        })
        .collect();
    GradCheckReport {
        params,
        tolerance: options.tolerance,
    }
}

/// Compares reverse-mode gradients of `f` against central finite differences.
///
/// `f` must be deterministic: any stochastic gate noise has to be drawn from a
/// source that replays the same samples on every call.
pub fn grad_check<F>(f: F, params: &[Tensor], options: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let analytic = analytic_gradient(&f, params)?;
    let numeric = numeric_gradient(&f, params, options.epsilon)?;
    Ok(compare_gradients(&analytic, &numeric, options))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_sum_has_zero_error() {
        // A power-of-two step keeps the finite differences exact.
        let x = Tensor::vector(&[0.5, -1.0, 2.0]);
        let opts = GradCheckOptions {
            epsilon: 2f64.powi(-20),
            ..GradCheckOptions::default()
        };
        let report = grad_check(|g, p| Ok(g.sum(p[0])), &[x], &opts).unwrap();
        assert!(report.passed());
        assert_eq!(report.max_rel_error(), 0.0);
    }

    #[test]
    fn corrupted_gradient_is_flagged() {
        let f = |g: &mut Graph, p: &[NodeId]| {
            let t = g.tanh(p[0]);
            Ok(g.sum(t))
        };
        let x = [Tensor::vector(&[0.3, -0.7])];
        let opts = GradCheckOptions::default();
        let mut analytic = analytic_gradient(&f, &x).unwrap();
        let numeric = numeric_gradient(&f, &x, opts.epsilon).unwrap();
        assert!(compare_gradients(&analytic, &numeric, &opts).passed());
        analytic[0].data_mut()[1] += 0.1;
        let report = compare_gradients(&analytic, &numeric, &opts);
        assert!(!report.passed());
        assert!(!report.params[0].passed);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0, 1e-3), 0.0);
        assert!((relative_error(2.0, 1.0, 1e-3) - 0.5).abs() < 1e-15);
        assert!((relative_error(1e-9, 0.0, 1e-3) - 1e-6).abs() < 1e-18);
    }
}

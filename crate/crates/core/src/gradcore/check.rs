use super::graph::{Bindings, Graph};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Upper bound on coordinates probed per leaf; larger tensors are sampled
/// at an even stride.
pub const MAX_COORDS_PER_LEAF: usize = 24;

/// Result of comparing analytic gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates skipped because `x ± eps` straddles a kink.
    pub skipped: usize,
}

/// Max over probed coordinates of `|analytic - central| / max(1, |analytic|)`.
pub fn finite_difference_check(
    graph: &Graph,
    bindings: &Bindings,
    wrt: &[&str],
    eps: f64,
) -> Result<GradCheck> {
    finite_difference_check_with(graph, bindings, wrt, eps, |_, _| {})
}

/// As [`finite_difference_check`], with a hook that may alter the analytic
/// gradient before comparison (used for fault injection).
pub fn finite_difference_check_with(
    graph: &Graph,
    bindings: &Bindings,
    wrt: &[&str],
    eps: f64,
    mut tamper: impl FnMut(&str, &mut Tensor),
) -> Result<GradCheck> {
    if !(eps > 0.0) {
        return Err(Error::invalid("eps must be positive"));
    }
    let mut analytic = graph.gradient(bindings, wrt)?;
    for (name, g) in analytic.grads.iter_mut() {
        tamper(name, g);
    }
    let mut report = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for name in wrt {
        let base = bindings
            .get(name)
            .ok_or_else(|| Error::Unbound(name.to_string()))?;
        let grad = &analytic.grads[*name];
        let n = base.len();
        let stride = n.div_ceil(MAX_COORDS_PER_LEAF).max(1);
        let mut probe = base.clone();
        for idx in (0..n).step_by(stride) {
            let x0 = base.data()[idx];
            probe.data_mut()[idx] = x0 + eps;
            let plus = graph.forward(bindings, Some((name, &probe)))?;
            probe.data_mut()[idx] = x0 - eps;
            let minus = graph.forward(bindings, Some((name, &probe)))?;
            probe.data_mut()[idx] = x0;
            if graph.branch_pattern(&plus) != graph.branch_pattern(&minus) {
                report.skipped += 1;
                continue;
            }
            let fd = (plus.output().data()[0] - minus.output().data()[0]) / (2.0 * eps);
            let a = grad.data()[idx];
            let err = (a - fd).abs() / a.abs().max(1.0);
            report.max_rel_error = report.max_rel_error.max(err);
            report.checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let mut g = Graph::new();
        let x = g.leaf("x");
        let y = g.mul(x, x);
        g.set_output(y);
        let mut b = Bindings::new();
        b.bind_owned("x", Tensor::scalar(3.0));
        let r = finite_difference_check(&g, &b, &["x"], 1e-5).unwrap();
        assert!(r.max_rel_error <= 1e-8, "{:?}", r);
        assert_eq!(r.checked, 1);
    }

    #[test]
    fn relu_kink_is_excluded() {
        let mut g = Graph::new();
        let x = g.leaf("x");
        let r = g.relu(x);
        let s = g.sum(r);
        g.set_output(s);
        let mut b = Bindings::new();
        b.bind_owned("x", Tensor::vector(vec![0.0, 1.0, -2.0, 3e-6]));
        let r = finite_difference_check(&g, &b, &["x"], 1e-5).unwrap();
        assert_eq!(r.skipped, 2);
        assert_eq!(r.checked, 2);
        assert!(r.max_rel_error <= 1e-4);
    }

    #[test]
    fn rejects_nonpositive_eps() {
        let mut g = Graph::new();
        let x = g.leaf("x");
        g.set_output(x);
        let b = Bindings::new();
        assert!(finite_difference_check(&g, &b, &["x"], 0.0).is_err());
    }

    #[test]
    fn tampered_gradient_is_detected() {
        let mut g = Graph::new();
        let x = g.leaf("x");
        let y = g.mul(x, x);
        g.set_output(y);
        let mut b = Bindings::new();
        b.bind_owned("x", Tensor::scalar(3.0));
        let r = finite_difference_check_with(&g, &b, &["x"], 1e-5, |_, t| {
            t.data_mut()[0] += 1.0;
        })
        .unwrap();
        assert!(r.max_rel_error > 0.1);
    }
}

//! Central finite-difference gradient checking.

use crate::autodiff::{Graph, NodeId, OpKind};
use crate::error::{Error, Result};
use crate::params::ParamSet;

/// Outcome of one gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Max over all scalar parameters of
    /// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)`.
    pub max_relative_error: f64,
    /// Parameter name and flat index where the maximum occurred.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compares reverse-mode gradients of the scalar built by `build` against
/// central differences with step `epsilon`, for every entry of `params`.
///
/// `build` must bind each parameter through [`Graph::parameter`] under its
/// name in `params` and return the scalar root.
pub fn grad_check<F>(params: &ParamSet, epsilon: f64, build: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &ParamSet) -> Result<NodeId>,
{
    grad_check_with_fault(params, epsilon, None, build)
}

#[doc(hidden)]
pub fn grad_check_with_fault<F>(
    params: &ParamSet,
    epsilon: f64,
    fault: Option<OpKind>,
    build: F,
) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &ParamSet) -> Result<NodeId>,
{
    if !(epsilon > 0.0 && epsilon <= 1e-3) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must lie in (0, 1e-3], got {epsilon}"
        )));
    }
    let mut g = Graph::new();
    if let Some(k) = fault {
        g.inject_sign_error(k);
    }
    let root = build(&mut g, params)?;
    g.backward(root)?;
    let analytic = g.parameter_grads();

    let eval = |p: &ParamSet| -> Result<f64> {
        let mut g = Graph::new();
        let root = build(&mut g, p)?;
        Ok(g.value(root).item())
    };

    let mut report = GradCheck {
        max_relative_error: 0.0,
        worst: None,
        checked: 0,
    };
    let mut probe = params.clone();
    for (name, t) in params.iter() {
        let zeros = vec![0.0; t.len()];
        let a = analytic.get(name).unwrap_or(&zeros);
        for i in 0..t.len() {
            let orig = t.values()[i];
            probe.get_mut(name).expect("same names").values_mut()[i] = orig + epsilon;
            let plus = eval(&probe)?;
            probe.get_mut(name).expect("same names").values_mut()[i] = orig - epsilon;
            let minus = eval(&probe)?;
            probe.get_mut(name).expect("same names").values_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let denom = a[i].abs().max(numeric.abs()).max(1e-12);
            let rel = (a[i] - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = rel.max(report.max_relative_error);
                report.worst = Some((name.to_string(), i));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn square_params(x: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("x", Tensor::scalar(x)).unwrap();
        p
    }

    fn square(g: &mut Graph, p: &ParamSet) -> Result<NodeId> {
        let x = g.parameter("x", p.get("x").unwrap())?;
        Ok(g.power(x, 2.0)?)
    }

    #[test]
    fn exact_quadratic() {
        let r = grad_check(&square_params(3.0), 1e-6, square).unwrap();
        assert!(r.max_relative_error < 1e-8, "{r:?}");
        assert_eq!(r.checked, 1);
    }

    #[test]
    fn relu_away_from_kink() {
        let mut p = ParamSet::new();
        p.insert("x", Tensor::new(vec![3], vec![0.2, 0.7, 1.5]).unwrap())
            .unwrap();
        let r = grad_check(&p, 1e-6, |g, p| {
            let x = g.parameter("x", p.get("x").unwrap())?;
            let y = g.relu(x)?;
            let y2 = g.power(y, 2.0)?;
            Ok(g.reduce_sum(y2)?)
        })
        .unwrap();
        assert!(r.max_relative_error < 1e-7, "{r:?}");
    }

    #[test]
    fn sign_fault_is_detected() {
        let r = grad_check_with_fault(&square_params(3.0), 1e-6, Some(OpKind::Power), square)
            .unwrap();
        assert!(r.max_relative_error > 1.0);
    }

    #[test]
    fn epsilon_range_enforced() {
        assert!(grad_check(&square_params(1.0), 0.0, square).is_err());
        assert!(grad_check(&square_params(1.0), 1e-2, square).is_err());
    }
}

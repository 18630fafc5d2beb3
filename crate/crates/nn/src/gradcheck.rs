use crate::{Graph, NnError, ParamSet, Var};

/// Compares reverse-mode gradients of `loss_fn` against central finite
/// differences with step `h` over every trainable parameter component.
///
/// Returns the max over components of
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
/// `loss_fn` receives a fresh graph and the bound parameter vars and must
/// return a scalar node.
pub fn grad_check<F>(params: &ParamSet, h: f64, loss_fn: F) -> Result<f64, NnError>
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let eval = |p: &ParamSet| -> Result<f64, NnError> {
        let mut g = Graph::new();
        let vars = g.bind(p);
        let loss = loss_fn(&mut g, &vars);
        let v = g.value(loss);
        if v.len() != 1 {
            return Err(NnError::NonScalarLoss(v.shape().to_vec()));
        }
        let v = v.item();
        if !v.is_finite() {
            return Err(NnError::NonFinite("grad_check objective".into()));
        }
        Ok(v)
    };

    let mut g = Graph::new();
    let vars = g.bind(params);
    let loss = loss_fn(&mut g, &vars);
    let analytic = g.backward(loss)?;

    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    for idx in 0..params.len() {
        if !params.param(idx).trainable {
            continue;
        }
        for k in 0..params.get(idx).len() {
            let orig = params.get(idx).data()[k];
            probe.get_mut(idx).data_mut()[k] = orig + h;
            let up = eval(&probe)?;
            probe.get_mut(idx).data_mut()[k] = orig - h;
            let down = eval(&probe)?;
            probe.get_mut(idx).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.get(idx).map(|t| t.data()[k]).unwrap_or(0.0);
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    #[test]
    fn square_is_accurate() {
        let mut p = ParamSet::new();
        p.add("x", Tensor::scalar(3.0));
        let err = grad_check(&p, 1e-5, |g, v| {
            let s = g.square(v[0]);
            g.sum(s)
        })
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn linear_is_near_exact() {
        let mut p = ParamSet::new();
        p.add("w", Tensor::matrix(1, 3, vec![0.3, -1.0, 2.0]).unwrap());
        let err = grad_check(&p, 1e-5, |g, v| {
            let c = g.constant(Tensor::matrix(1, 3, vec![1.5, -0.5, 4.0]).unwrap());
            let m = g.mul(v[0], c);
            g.sum(m)
        })
        .unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn non_finite_objective_is_error() {
        let mut p = ParamSet::new();
        p.add("x", Tensor::scalar(0.0));
        let r = grad_check(&p, 1e-5, |g, v| {
            let l = g.log(v[0]);
            g.sum(l)
        });
        assert!(r.is_err());
    }
}

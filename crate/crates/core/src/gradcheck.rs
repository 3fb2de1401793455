//! Central finite-difference oracle for the autodiff engine.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Compares the analytic gradient of a scalar function against central
/// differences with step `h`.
///
/// Returns the maximum over entries of
/// `|analytic − numeric| / max(1, |numeric|)`.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    finite_diff_check_many(|g, vs| f(g, vs[0]), std::slice::from_ref(x), h)
}

/// Multi-input variant: every input tensor is perturbed and checked.
pub fn finite_diff_check_many<F>(f: F, xs: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::Usage("finite-difference step must be positive".into()));
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = xs.iter().map(|x| g.param(x.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| g.grad(v).unwrap().to_vec()).collect();

    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vs: Vec<Var> = inputs.iter().map(|x| g.constant(x.clone())).collect();
        let out = f(&mut g, &vs)?;
        let v = g.value(out).item()?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numeric("finite-difference evaluation".into()))
        }
    };

    let mut worst = 0.0f64;
    let mut inputs = xs.to_vec();
    for (which, grad) in analytic.iter().enumerate() {
        for i in 0..grad.len() {
            let orig = inputs[which].data()[i];
            inputs[which].data_mut()[i] = orig + h;
            let plus = eval(&inputs)?;
            inputs[which].data_mut()[i] = orig - h;
            let minus = eval(&inputs)?;
            inputs[which].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = (grad[i] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

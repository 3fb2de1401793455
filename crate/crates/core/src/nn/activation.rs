use crate::error::Result;
use crate::graph::{BackwardRule, Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// `x` for `x > 0`, `eˣ − 1` otherwise.
    Elu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => {
                // split by sign so exp never overflows
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

struct ActivationRule(Activation);

impl BackwardRule for ActivationRule {
    fn name(&self) -> &'static str {
        match self.0 {
            Activation::Elu => "elu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }

    fn backward(&self, grad_out: &[f64], inputs: &[&Tensor], output: &Tensor) -> Vec<Option<Vec<f64>>> {
        let d = grad_out
            .iter()
            .zip(inputs[0].data())
            .zip(output.data())
            .map(|((g, &x), &y)| g * self.0.derivative(x, y))
            .collect();
        vec![Some(d)]
    }
}

pub fn activation(g: &mut Graph, kind: Activation, x: Var) -> Result<Var> {
    let t = g.value(x);
    let out = Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|&v| kind.apply(v)).collect());
    g.custom(&[x], out, Box::new(ActivationRule(kind)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::finite_diff_check;

    #[test]
    fn elu_values() {
        assert_eq!(Activation::Elu.apply(0.0), 0.0);
        assert_eq!(Activation::Elu.apply(1.0), 1.0);
        assert!((Activation::Elu.apply(-1.0) - (-0.632_120_558_828_557_7)).abs() < 1e-15);
    }

    #[test]
    fn ranges() {
        for &x in &[-700.0, -30.0, -1.0, 0.0, 2.5, 30.0, 700.0] {
            let t = Activation::Tanh.apply(x);
            let s = Activation::Sigmoid.apply(x);
            assert!((-1.0..=1.0).contains(&t));
            assert!((0.0..=1.0).contains(&s));
        }
        // strict interior wherever f64 can represent it
        for &x in &[-15.0, -1.0, 0.0, 2.5, 15.0] {
            assert!(Activation::Tanh.apply(x).abs() < 1.0);
            let s = Activation::Sigmoid.apply(x);
            assert!(s > 0.0 && s < 1.0);
        }
    }

    #[test]
    fn elu_gradient_check() {
        let x = Tensor::new(&[2], vec![-1.0, 0.5]).unwrap();
        let err = finite_diff_check(
            |g, v| {
                let y = activation(g, Activation::Elu, v)?;
                g.sum_all(y)
            },
            &x,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn tanh_sigmoid_gradient_check() {
        let x = Tensor::new(&[4], vec![-2.0, -0.1, 0.3, 1.7]).unwrap();
        for kind in [Activation::Tanh, Activation::Sigmoid] {
            let err = finite_diff_check(
                |g, v| {
                    let y = activation(g, kind, v)?;
                    let y2 = g.mul(y, y)?;
                    g.sum_all(y2)
                },
                &x,
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-4, "{kind:?}: {err}");
        }
    }
}

//! Differentiable layers: convolution, dense, batch normalization, activations.

mod activation;
mod batchnorm;
mod conv;

pub use activation::{activation, Activation};
pub use batchnorm::{batchnorm, BatchNormState, BatchStats, DEFAULT_EPSILON, DEFAULT_MOMENTUM};
pub use conv::conv2d;

use rand::Rng;

use crate::error::{dim_err, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// A `h×w×k×n` convolution kernel and its length-`n` bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl ConvKernel {
    /// Glorot-uniform weights, zero bias.
    pub fn init(h: usize, w: usize, k: usize, n: usize, rng: &mut impl Rng) -> Self {
        let weights = glorot_uniform(&[h, w, k, n], h * w * k, h * w * n, rng);
        Self { weights, bias: Tensor::zeros(&[n]) }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.weights.shape().try_into().expect("rank-4 kernel")
    }
}

/// Uniform on `±√(6/(fan_in+fan_out))`.
pub fn glorot_uniform(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-limit..=limit)).collect();
    Tensor::new(shape, data).expect("finite init")
}

/// `y = x·W + b` for `x` of shape `N×p`.
pub fn dense(g: &mut Graph, x: Var, weights: Var, bias: Var) -> Result<Var> {
    let (sx, sw) = (g.shape(x), g.shape(weights));
    if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[0] {
        return dim_err(format!("dense input {sx:?} against weights {sw:?}"));
    }
    let y = g.matmul(x, weights)?;
    g.add_row_bias(y, bias)
}

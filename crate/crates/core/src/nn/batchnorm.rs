//! Per-depth batch normalization over every leading axis of a channel-last tensor.

use crate::error::{dim_err, Error, Result};
use crate::graph::{BackwardRule, Graph, Var};
use crate::nn::Mode;
use crate::tensor::Tensor;

pub const DEFAULT_MOMENTUM: f64 = 0.99;
pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Running statistics of one batch-norm layer. `gamma`/`beta` live in the
/// parameter store since they are trained.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNormState {
    pub fn new(depth: usize) -> Self {
        Self {
            running_mean: vec![0.0; depth],
            running_var: vec![1.0; depth],
            momentum: DEFAULT_MOMENTUM,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn depth(&self) -> usize {
        self.running_mean.len()
    }

    /// Exponential update `running ← m·running + (1−m)·batch`.
    pub fn update(&mut self, stats: &BatchStats) {
        let m = self.momentum;
        for (r, b) in self.running_mean.iter_mut().zip(&stats.mean) {
            *r = m * *r + (1.0 - m) * b;
        }
        for (r, b) in self.running_var.iter_mut().zip(&stats.var) {
            *r = m * *r + (1.0 - m) * b;
        }
    }
}

/// Biased per-depth statistics of one training batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

struct BatchNormRule {
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
    batch_stats: bool,
}

impl BackwardRule for BatchNormRule {
    fn name(&self) -> &'static str {
        "batchnorm"
    }

    fn backward(&self, grad_out: &[f64], inputs: &[&Tensor], _output: &Tensor) -> Vec<Option<Vec<f64>>> {
        let gamma = inputs[1].data();
        let c = gamma.len();
        let rows = (grad_out.len() / c) as f64;
        let mut d_gamma = vec![0.0; c];
        let mut d_beta = vec![0.0; c];
        for (g, xh) in grad_out.chunks_exact(c).zip(self.x_hat.chunks_exact(c)) {
            for j in 0..c {
                d_beta[j] += g[j];
                d_gamma[j] += g[j] * xh[j];
            }
        }
        let mut d_x = vec![0.0; grad_out.len()];
        for ((dx, g), xh) in d_x.chunks_exact_mut(c).zip(grad_out.chunks_exact(c)).zip(self.x_hat.chunks_exact(c)) {
            for j in 0..c {
                let k = gamma[j] * self.inv_std[j];
                dx[j] = if self.batch_stats {
                    k * (g[j] - d_beta[j] / rows - xh[j] * d_gamma[j] / rows)
                } else {
                    k * g[j]
                };
            }
        }
        vec![Some(d_x), Some(d_gamma), Some(d_beta)]
    }
}

/// Normalizes `x` (`N×…×C`). In [`Mode::Train`] the batch statistics are used
/// and returned so the caller can fold them into the running state.
pub fn batchnorm(
    g: &mut Graph,
    x: Var,
    gamma: Var,
    beta: Var,
    state: &BatchNormState,
    mode: Mode,
) -> Result<(Var, Option<BatchStats>)> {
    let shape = g.shape(x).to_vec();
    let c = *shape.last().ok_or_else(|| Error::Usage("batchnorm of scalar".into()))?;
    if g.value(gamma).len() != c || g.value(beta).len() != c || state.depth() != c {
        return dim_err(format!("batchnorm parameters do not match depth {c}"));
    }
    let data = g.value(x).data();
    let rows = data.len() / c;
    let (mean, var, stats) = match mode {
        Mode::Train => {
            if shape.len() < 2 || shape[0] < 2 {
                return Err(Error::Usage(format!("train-mode batchnorm needs batch ≥ 2, got shape {shape:?}")));
            }
            let mut mean = vec![0.0; c];
            for row in data.chunks_exact(c) {
                mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
            }
            mean.iter_mut().for_each(|m| *m /= rows as f64);
            let mut var = vec![0.0; c];
            for row in data.chunks_exact(c) {
                for j in 0..c {
                    let d = row[j] - mean[j];
                    var[j] += d * d;
                }
            }
            var.iter_mut().for_each(|v| *v /= rows as f64);
            let stats = BatchStats { mean: mean.clone(), var: var.clone() };
            (mean, var, Some(stats))
        }
        Mode::Infer => (state.running_mean.clone(), state.running_var.clone(), None),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + state.epsilon).sqrt()).collect();
    let (gm, bt) = (g.value(gamma).data(), g.value(beta).data());
    let mut x_hat = vec![0.0; data.len()];
    let mut out = vec![0.0; data.len()];
    for ((xh, o), row) in x_hat.chunks_exact_mut(c).zip(out.chunks_exact_mut(c)).zip(data.chunks_exact(c)) {
        for j in 0..c {
            xh[j] = (row[j] - mean[j]) * inv_std[j];
            o[j] = gm[j] * xh[j] + bt[j];
        }
    }
    let rule = BatchNormRule { x_hat, inv_std, batch_stats: mode == Mode::Train };
    let y = g.custom(&[x, gamma, beta], Tensor::from_parts(shape, out), Box::new(rule))?;
    Ok((y, stats))
}

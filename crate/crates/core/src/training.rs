//! MSE objective, element-wise gradient clipping, Adam, and the training loop.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{dim_err, Error, Result};
use crate::graph::{Graph, Var};
use crate::model::{Forward, Model, ParamStore};
use crate::nn::Mode;
use crate::tensor::Tensor;

pub const DEFAULT_LR: f64 = 0.001;
pub const DEFAULT_CLIP: f64 = 0.05;
pub const DEFAULT_BATCH: usize = 200;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
/// Upper bound on the batches averaged by a BN recalibration pass.
pub const RECALIBRATION_BATCHES: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub clip_value: f64,
    pub seed: u64,
    /// Checkpoint every this many steps; zero disables periodic checkpoints.
    pub checkpoint_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: DEFAULT_LR,
            batch_size: DEFAULT_BATCH,
            steps: 1000,
            clip_value: DEFAULT_CLIP,
            seed: 0,
            checkpoint_interval: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.clip_value > 0.0 && self.clip_value.is_finite()) {
            return Err(Error::Config(format!("clip_value must be positive, got {}", self.clip_value)));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2 for batch normalization".into()));
        }
        Ok(())
    }
}

/// `(1/K)·Σ (pred − target)²` over every entry of a `K×…` batch.
pub fn mse_loss(g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
    if g.shape(pred) != g.shape(target) {
        return dim_err(format!("loss of {:?} against {:?}", g.shape(pred), g.shape(target)));
    }
    let k = *g.shape(pred).first().ok_or_else(|| Error::Usage("loss of a scalar".into()))?;
    let d = g.sub(pred, target)?;
    let sq = g.mul(d, d)?;
    let s = g.sum_all(sq)?;
    g.scale(s, 1.0 / k as f64)
}

/// Plain-value version of [`mse_loss`].
pub fn mse_value(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() || pred.rank() == 0 {
        return dim_err(format!("loss of {:?} against {:?}", pred.shape(), target.shape()));
    }
    let k = pred.shape()[0] as f64;
    Ok(pred.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / k)
}

/// Clamps every entry to `[−clip, clip]`.
pub fn clip_gradients(grads: &mut [f64], clip: f64) {
    for g in grads {
        *g = g.clamp(-clip, clip);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = |p: &ParamStore| p.iter().map(|(n, t)| (n.clone(), vec![0.0; t.len()])).collect();
        Self { m: zeros(params), v: zeros(params), t: 0, beta1: ADAM_BETA1, beta2: ADAM_BETA2, eps: ADAM_EPS }
    }
}

/// One bias-corrected Adam update of a single buffer.
pub fn adam_update(theta: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], t: u64, lr: f64, b1: f64, b2: f64, eps: f64) {
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    for i in 0..theta.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Applies one Adam step to every parameter from its stored gradient.
pub fn adam_step(params: &mut ParamStore, state: &mut AdamState, lr: f64) -> Result<()> {
    state.t += 1;
    let (t, b1, b2, eps) = (state.t, state.beta1, state.beta2, state.eps);
    for (name, p) in params.iter_mut() {
        let grad = p.grad().ok_or_else(|| Error::Usage(format!("{name} has no gradient")))?.to_vec();
        let m = state.m.get_mut(name).ok_or_else(|| Error::Usage(format!("no Adam moments for {name}")))?;
        let v = state.v.get_mut(name).ok_or_else(|| Error::Usage(format!("no Adam moments for {name}")))?;
        adam_update(p.data_mut(), &grad, m, v, t, lr, b1, b2, eps);
        if p.data().iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("Adam update of {name}")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub step: usize,
    pub loss: f64,
}

/// Mini-batch trainer over an in-memory `N×Ñ_c×N_t×2` set.
///
/// Each epoch is a seeded shuffle of the sample indices cut into full
/// batches; a trailing partial batch is dropped.
pub struct Trainer<'d> {
    cfg: TrainConfig,
    data: &'d Tensor,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    pub adam: AdamState,
    pub step: usize,
}

impl<'d> Trainer<'d> {
    pub fn new(cfg: TrainConfig, model: &Model, data: &'d Tensor) -> Result<Self> {
        cfg.validate()?;
        let [h, w, c] = model.config.input_shape();
        match data.shape() {
            [n, dh, dw, dc] if (*dh, *dw, *dc) == (h, w, c) => {
                if *n < cfg.batch_size {
                    return Err(Error::Config(format!("{n} samples cannot fill a batch of {}", cfg.batch_size)));
                }
            }
            other => return dim_err(format!("training set {other:?} does not match model input {h}×{w}×{c}")),
        }
        let n = data.shape()[0];
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            order: (0..n).collect(),
            cursor: n,
            adam: AdamState::new(&model.params),
            step: 0,
            cfg,
            data,
        })
    }

    /// Continues from saved optimizer state.
    pub fn with_adam(mut self, adam: AdamState) -> Self {
        self.adam = adam;
        self
    }

    fn next_batch(&mut self) -> Result<Tensor> {
        let k = self.cfg.batch_size;
        if self.cursor + k > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let inner: usize = self.data.shape()[1..].iter().product();
        let mut buf = Vec::with_capacity(k * inner);
        for &i in &self.order[self.cursor..self.cursor + k] {
            buf.extend_from_slice(&self.data.data()[i * inner..(i + 1) * inner]);
        }
        self.cursor += k;
        let mut shape = self.data.shape().to_vec();
        shape[0] = k;
        Tensor::new(&shape, buf)
    }

    /// Forward, loss, backward, clip, Adam. Returns the batch loss.
    pub fn step(&mut self, model: &mut Model) -> Result<f64> {
        let batch = self.next_batch()?;
        let mut g = Graph::new();
        let mut fwd = Forward::new(&mut g, model, Mode::Train, true);
        let x = fwd.graph.constant(batch.clone());
        let stage = fwd.training_stage();
        let y = fwd.autoencoder(x, stage)?;
        let (bound, stats) = fwd.finish();
        let target = g.constant(batch);
        let loss = mse_loss(&mut g, y, target)?;
        let value = g.value(loss).item()?;
        if !value.is_finite() {
            return Err(Error::Numeric(format!("loss at step {}", self.step + 1)));
        }
        g.backward(loss)?;

        model.params.zero_grad();
        model.params.accumulate_grads(&g, &bound);
        for (_, p) in model.params.iter_mut() {
            if let Some(grad) = p.grad_mut() {
                clip_gradients(grad, self.cfg.clip_value);
            }
        }
        adam_step(&mut model.params, &mut self.adam, self.cfg.lr)?;
        model.apply_bn_stats(&stats);
        self.step += 1;
        Ok(value)
    }

    /// Resets BN running statistics from the current weights, using at most
    /// `RECALIBRATION_BATCHES` training batches. Running statistics do not
    /// feed train-mode steps, so this never changes the optimisation path.
    pub fn recalibrate(&self, model: &mut Model) -> Result<()> {
        let b = self.cfg.batch_size;
        let n = self.data.shape()[0].min(b * RECALIBRATION_BATCHES);
        model.recalibrate_bn(&self.data.slice_outer(0, n)?, b)
    }

    /// Runs `steps` updates, calling `checkpoint` at the configured interval.
    /// BN statistics are recalibrated before every checkpoint.
    pub fn run<F>(&mut self, model: &mut Model, steps: usize, mut checkpoint: F) -> Result<Vec<LossRow>>
    where
        F: FnMut(usize, &Model, &AdamState) -> Result<()>,
    {
        let mut trace = Vec::with_capacity(steps);
        for _ in 0..steps {
            let loss = self.step(model)?;
            trace.push(LossRow { step: self.step, loss });
            if self.cfg.checkpoint_interval > 0 && self.step % self.cfg.checkpoint_interval == 0 {
                self.recalibrate(model)?;
                checkpoint(self.step, model, &self.adam)?;
            }
        }
        Ok(trace)
    }
}

/// Trains `model` in place for `cfg.steps` steps and returns the loss trace.
/// BN running statistics are recalibrated at the end.
pub fn train(model: &mut Model, data: &Tensor, cfg: &TrainConfig) -> Result<(Vec<LossRow>, AdamState)> {
    let mut trainer = Trainer::new(cfg.clone(), model, data)?;
    let trace = trainer.run(model, cfg.steps, |_, _, _| Ok(()))?;
    if cfg.steps > 0 {
        trainer.recalibrate(model)?;
    }
    Ok((trace, trainer.adam))
}

/// Inference-mode MSE of a model over a set, through the bit codec.
pub fn evaluate_mse(model: &Model, data: &Tensor) -> Result<f64> {
    let rec = model.reconstruct(data, true)?;
    mse_value(&rec, data)
}

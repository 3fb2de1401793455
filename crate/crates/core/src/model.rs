//! JC-ResNet encoder/decoder with the in-graph quantizer.
//!
//! Encoder: `residual block(s) → elu → batchnorm → flatten → dense(M) → tanh`.
//! Decoder: `dense(2·Ñ_c·N_t) → reshape → residual block × 2 → sigmoid`.
//! A residual block is either a JC-ResNet (three JC blocks with depth ladder
//! 2→8→16→2 and an input shortcut) or its plain-convolution counterpart.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::channel::PreprocState;
use crate::error::{dim_err, Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{self, Activation, BatchNormState, BatchStats, ConvKernel, Mode};
use crate::quantizer::{self, BitFlow, QuantSpec};
use crate::tensor::Tensor;

/// Depth ladder of the three convolutions inside every residual block.
pub const DEPTH_LADDER: [(usize, usize); 3] = [(2, 8), (8, 16), (16, 2)];
/// Receptive field of every JC block.
pub const KERNEL: usize = 3;
/// Samples per forward pass when running inference over a large set.
const INFER_CHUNK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockStyle {
    Jc,
    Plain,
}

impl BlockStyle {
    pub fn code(self) -> u32 {
        match self {
            BlockStyle::Jc => 0,
            BlockStyle::Plain => 1,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(BlockStyle::Jc),
            1 => Ok(BlockStyle::Plain),
            other => Err(Error::Format(format!("unknown block style code {other}"))),
        }
    }
}

impl std::str::FromStr for BlockStyle {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jc" => Ok(BlockStyle::Jc),
            "plain" => Ok(BlockStyle::Plain),
            other => Err(Error::Config(format!("block_style must be jc or plain, got {other:?}"))),
        }
    }
}

impl std::fmt::Display for BlockStyle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BlockStyle::Jc => "jc",
            BlockStyle::Plain => "plain",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub nc_crop: usize,
    pub nt: usize,
    /// Codeword length `M`.
    pub codeword_len: usize,
    /// Bits per codeword entry `B`.
    pub bits: u8,
    pub block_style: BlockStyle,
    /// When false the quantizer is skipped during training only.
    pub quant_aware: bool,
    pub encoder_resnets: usize,
    pub decoder_resnets: usize,
}

impl ModelConfig {
    pub fn new(nc_crop: usize, nt: usize, codeword_len: usize, bits: u8) -> Self {
        Self {
            nc_crop,
            nt,
            codeword_len,
            bits,
            block_style: BlockStyle::Jc,
            quant_aware: true,
            encoder_resnets: 1,
            decoder_resnets: 2,
        }
    }

    /// 32×32 angular-delay input, 48 entries of 4 bits (192 feedback bits).
    pub fn reference() -> Self {
        Self::new(32, 32, 48, 4)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nc_crop == 0 || self.nt == 0 || self.codeword_len == 0 {
            return Err(Error::Config("model extents must be positive".into()));
        }
        QuantSpec::new(self.bits, self.codeword_len)?;
        Ok(())
    }

    pub fn quant_spec(&self) -> QuantSpec {
        QuantSpec { bits: self.bits, len: self.codeword_len }
    }

    pub fn feedback_bits(&self) -> usize {
        self.codeword_len * self.bits as usize
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.nc_crop, self.nt, 2]
    }

    pub fn flat_len(&self) -> usize {
        self.nc_crop * self.nt * 2
    }
}

/// Named trainable tensors, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    map: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.map.contains_key(&name) {
            return Err(Error::Usage(format!("duplicate parameter {name}")));
        }
        self.map.insert(name, tensor.with_grad());
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.map.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.map.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.map.values().map(Tensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        self.map.values_mut().for_each(Tensor::zero_grad);
    }

    /// Adds the gradients held by graph leaves into the stored tensors.
    pub fn accumulate_grads(&mut self, graph: &Graph, bound: &BTreeMap<String, Var>) {
        for (name, &var) in bound {
            if let (Some(t), Some(g)) = (self.map.get_mut(name), graph.grad(var)) {
                t.accumulate_grad(g);
            }
        }
    }
}

/// Encoder + decoder weights, batch-norm running statistics, and the
/// normalization constants of the data the model was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub bn: BTreeMap<String, BatchNormState>,
    pub preproc: PreprocState,
}

/// Codeword emitted by the encoder and its packed feedback payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub codeword: Vec<f64>,
    pub flow: BitFlow,
}

/// How the quantize/dequantize stage is realized in a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantStage {
    /// Identity, used for quantization-unaware training.
    Bypass,
    /// In-graph quantizer with straight-through gradient.
    Ste,
    /// Quantize, pack to bits, unpack, dequantize; no gradient.
    Codec,
}

struct Init<'a> {
    store: &'a mut ParamStore,
    bn: &'a mut BTreeMap<String, BatchNormState>,
    rng: ChaCha8Rng,
}

impl Init<'_> {
    fn conv(&mut self, prefix: &str, h: usize, w: usize, k: usize, n: usize) -> Result<()> {
        let kernel = ConvKernel::init(h, w, k, n, &mut self.rng);
        self.store.insert(format!("{prefix}.weights"), kernel.weights)?;
        self.store.insert(format!("{prefix}.bias"), kernel.bias)
    }

    fn batchnorm(&mut self, prefix: &str, depth: usize) -> Result<()> {
        self.store.insert(format!("{prefix}.gamma"), Tensor::ones(&[depth]))?;
        self.store.insert(format!("{prefix}.beta"), Tensor::zeros(&[depth]))?;
        self.bn.insert(prefix.to_string(), BatchNormState::new(depth));
        Ok(())
    }

    fn dense(&mut self, prefix: &str, p: usize, q: usize) -> Result<()> {
        let w = nn::glorot_uniform(&[p, q], p, q, &mut self.rng);
        self.store.insert(format!("{prefix}.weights"), w)?;
        self.store.insert(format!("{prefix}.bias"), Tensor::zeros(&[q]))
    }

    fn jc_block(&mut self, prefix: &str, m: usize, k: usize, n: usize) -> Result<()> {
        self.conv(&format!("{prefix}.flow1.conv_a"), 1, m, k, n)?;
        self.conv(&format!("{prefix}.flow1.conv_b"), m, 1, n, n)?;
        self.conv(&format!("{prefix}.flow2.conv_a"), m, 1, k, n)?;
        self.conv(&format!("{prefix}.flow2.conv_b"), 1, m, n, n)?;
        self.conv(&format!("{prefix}.flow3.conv"), m, m, k, n)?;
        self.conv(&format!("{prefix}.combine"), 1, 1, 3 * n, n)
    }

    fn residual(&mut self, prefix: &str, style: BlockStyle) -> Result<()> {
        for (i, &(k, n)) in DEPTH_LADDER.iter().enumerate() {
            match style {
                BlockStyle::Jc => self.jc_block(&format!("{prefix}.jc{}", i + 1), KERNEL, k, n)?,
                BlockStyle::Plain => self.conv(&format!("{prefix}.conv{}", i + 1), KERNEL, KERNEL, k, n)?,
            }
            if i < 2 {
                self.batchnorm(&format!("{prefix}.bn{}", i + 1), n)?;
            }
        }
        Ok(())
    }
}

fn residual_prefix(side: &str, index: usize) -> String {
    format!("{side}.res{index}")
}

impl Model {
    /// Seeded Glorot initialization; batch-norm scales start at one.
    pub fn new(config: ModelConfig, preproc: PreprocState, seed: u64) -> Result<Self> {
        config.validate()?;
        preproc.validate()?;
        let mut params = ParamStore::new();
        let mut bn = BTreeMap::new();
        let mut init = Init { store: &mut params, bn: &mut bn, rng: ChaCha8Rng::seed_from_u64(seed) };
        for i in 0..config.encoder_resnets {
            init.residual(&residual_prefix("enc", i), config.block_style)?;
        }
        init.batchnorm("enc.bn", 2)?;
        init.dense("enc.fc", config.flat_len(), config.codeword_len)?;
        init.dense("dec.fc", config.codeword_len, config.flat_len())?;
        for i in 0..config.decoder_resnets {
            init.residual(&residual_prefix("dec", i), config.block_style)?;
        }
        Ok(Self { config, params, bn, preproc })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn apply_bn_stats(&mut self, stats: &[(String, BatchStats)]) {
        for (name, s) in stats {
            if let Some(state) = self.bn.get_mut(name) {
                state.update(s);
            }
        }
    }

    /// Replaces every running mean and variance by the average of the
    /// train-mode batch statistics over `data` in full batches of `batch`.
    ///
    /// Running averages started at mean 0 / variance 1 need on the order of
    /// a thousand steps to forget that start when true variances are small,
    /// so short runs finish with this pass.
    pub fn recalibrate_bn(&mut self, data: &Tensor, batch: usize) -> Result<()> {
        let n = self.check_batch(data)?;
        if batch < 2 || n < batch {
            return Err(Error::Usage(format!("cannot recalibrate with batches of {batch} from {n} samples")));
        }
        let mut sums: BTreeMap<String, BatchStats> = BTreeMap::new();
        let mut count = 0usize;
        for start in (0..=n - batch).step_by(batch) {
            let chunk = data.slice_outer(start, batch)?;
            let mut g = Graph::new();
            let mut fwd = Forward::new(&mut g, self, Mode::Train, false);
            let x = fwd.graph.constant(chunk);
            let stage = fwd.training_stage();
            fwd.autoencoder(x, stage)?;
            for (name, s) in fwd.finish().1 {
                let acc = sums
                    .entry(name)
                    .or_insert_with(|| BatchStats { mean: vec![0.0; s.mean.len()], var: vec![0.0; s.var.len()] });
                acc.mean.iter_mut().zip(&s.mean).for_each(|(a, b)| *a += b);
                acc.var.iter_mut().zip(&s.var).for_each(|(a, b)| *a += b);
            }
            count += 1;
        }
        for (name, s) in sums {
            if let Some(state) = self.bn.get_mut(&name) {
                state.running_mean = s.mean.iter().map(|v| v / count as f64).collect();
                state.running_var = s.var.iter().map(|v| v / count as f64).collect();
            }
        }
        Ok(())
    }

    fn check_batch(&self, batch: &Tensor) -> Result<usize> {
        let [h, w, c] = self.config.input_shape();
        match batch.shape() {
            [n, bh, bw, bc] if (*bh, *bw, *bc) == (h, w, c) => Ok(*n),
            other => dim_err(format!("expected N×{h}×{w}×{c} batch, got {other:?}")),
        }
    }

    /// Inference-mode encoder: codewords and their packed bit flows.
    pub fn encode(&self, batch: &Tensor) -> Result<Vec<Encoded>> {
        let n = self.check_batch(batch)?;
        let spec = self.config.quant_spec();
        let mut out = Vec::with_capacity(n);
        for start in (0..n).step_by(INFER_CHUNK) {
            let chunk = batch.slice_outer(start, INFER_CHUNK.min(n - start))?;
            let mut g = Graph::new();
            let mut fwd = Forward::new(&mut g, self, Mode::Infer, false);
            let x = fwd.graph.constant(chunk);
            let code = fwd.encoder(x)?;
            for row in g.value(code).data().chunks_exact(spec.len) {
                let codeword: Vec<f64> = row.iter().map(|&v| quantizer::pull_inside(v)).collect();
                let q = quantizer::quantize(&codeword, spec)?;
                out.push(Encoded { codeword, flow: quantizer::pack(&q.levels, spec)? });
            }
        }
        Ok(out)
    }

    /// Inference-mode decoder from received bit flows.
    pub fn decode(&self, flows: &[BitFlow]) -> Result<Tensor> {
        let spec = self.config.quant_spec();
        let mut values = Vec::with_capacity(flows.len() * spec.len);
        for f in flows {
            if f.spec != spec {
                return Err(Error::Config(format!(
                    "bit flow of {}×{} bits for a {}×{}-bit model",
                    f.spec.len, f.spec.bits, spec.len, spec.bits
                )));
            }
            values.extend(quantizer::dequantize(f)?);
        }
        let codes = Tensor::new(&[flows.len(), spec.len], values)?;
        let mut parts = Vec::new();
        for start in (0..flows.len()).step_by(INFER_CHUNK) {
            let chunk = codes.slice_outer(start, INFER_CHUNK.min(flows.len() - start))?;
            let mut g = Graph::new();
            let mut fwd = Forward::new(&mut g, self, Mode::Infer, false);
            let y = fwd.graph.constant(chunk);
            let out = fwd.decoder(y)?;
            parts.push(g.value(out).clone());
        }
        concat_outer(&parts)
    }

    /// Inference-mode `f_d(D(Q(f_e(x))))`, optionally through the bit codec.
    pub fn reconstruct(&self, batch: &Tensor, through_codec: bool) -> Result<Tensor> {
        let n = self.check_batch(batch)?;
        let stage = if through_codec { QuantStage::Codec } else { QuantStage::Ste };
        let mut parts = Vec::new();
        for start in (0..n).step_by(INFER_CHUNK) {
            let chunk = batch.slice_outer(start, INFER_CHUNK.min(n - start))?;
            let mut g = Graph::new();
            let mut fwd = Forward::new(&mut g, self, Mode::Infer, false);
            let x = fwd.graph.constant(chunk);
            let out = fwd.autoencoder(x, stage)?;
            parts.push(g.value(out).clone());
        }
        concat_outer(&parts)
    }
}

fn concat_outer(parts: &[Tensor]) -> Result<Tensor> {
    let first = parts.first().ok_or_else(|| Error::Usage("empty batch".into()))?;
    let mut data = Vec::new();
    let mut n = 0;
    for p in parts {
        n += p.shape()[0];
        data.extend_from_slice(p.data());
    }
    let mut shape = first.shape().to_vec();
    shape[0] = n;
    Tensor::new(&shape, data)
}

/// One forward pass over a model's parameters, recorded on a graph.
pub struct Forward<'a> {
    pub graph: &'a mut Graph,
    model: &'a Model,
    bound: BTreeMap<String, Var>,
    mode: Mode,
    trainable: bool,
    bn_stats: Vec<(String, BatchStats)>,
}

impl<'a> Forward<'a> {
    /// `trainable` binds parameters as differentiable leaves.
    pub fn new(graph: &'a mut Graph, model: &'a Model, mode: Mode, trainable: bool) -> Self {
        Self { graph, model, bound: BTreeMap::new(), mode, trainable, bn_stats: Vec::new() }
    }

    /// Uses `var` for parameter `name` instead of the stored tensor.
    pub fn bind(&mut self, name: &str, var: Var) {
        self.bound.insert(name.to_string(), var);
    }

    pub fn bound(&self) -> &BTreeMap<String, Var> {
        &self.bound
    }

    /// Parameter bindings and the batch statistics gathered in train mode.
    pub fn finish(self) -> (BTreeMap<String, Var>, Vec<(String, BatchStats)>) {
        (self.bound, self.bn_stats)
    }

    fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = self
            .model
            .params
            .get(name)
            .ok_or_else(|| Error::Usage(format!("unknown parameter {name}")))?
            .clone();
        let v = if self.trainable { self.graph.param(t) } else { self.graph.constant(t) };
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    fn conv(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let w = self.param(&format!("{prefix}.weights"))?;
        let b = self.param(&format!("{prefix}.bias"))?;
        nn::conv2d(self.graph, x, w, b)
    }

    fn act(&mut self, kind: Activation, x: Var) -> Result<Var> {
        nn::activation(self.graph, kind, x)
    }

    fn batchnorm(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let gamma = self.param(&format!("{prefix}.gamma"))?;
        let beta = self.param(&format!("{prefix}.beta"))?;
        let state = self
            .model
            .bn
            .get(prefix)
            .ok_or_else(|| Error::Usage(format!("unknown batchnorm {prefix}")))?;
        let (y, stats) = nn::batchnorm(self.graph, x, gamma, beta, state, self.mode)?;
        if let Some(s) = stats {
            self.bn_stats.push((prefix.to_string(), s));
        }
        Ok(y)
    }

    /// Three parallel flows (`1×m → m×1`, `m×1 → 1×m`, `m×m`) concatenated
    /// to depth `3n` and fused by a `1×1` convolution.
    pub fn jc_block(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let a = self.conv(&format!("{prefix}.flow1.conv_a"), x)?;
        let a = self.act(Activation::Elu, a)?;
        let a = self.conv(&format!("{prefix}.flow1.conv_b"), a)?;
        let a = self.act(Activation::Elu, a)?;

        let b = self.conv(&format!("{prefix}.flow2.conv_a"), x)?;
        let b = self.act(Activation::Elu, b)?;
        let b = self.conv(&format!("{prefix}.flow2.conv_b"), b)?;
        let b = self.act(Activation::Elu, b)?;

        let c = self.conv(&format!("{prefix}.flow3.conv"), x)?;

        let cat = self.graph.concat_last(&[a, b, c])?;
        self.conv(&format!("{prefix}.combine"), cat)
    }

    /// `x + block3(BN(elu(block2(BN(elu(block1(x)))))))` where each block is
    /// a JC block or, for [`BlockStyle::Plain`], a single 3×3 convolution.
    pub fn residual(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let depth = *self.graph.shape(x).last().unwrap_or(&0);
        if depth != DEPTH_LADDER[0].0 {
            return dim_err(format!("residual block needs depth {}, got {depth}", DEPTH_LADDER[0].0));
        }
        let style = self.model.config.block_style;
        let mut t = x;
        for i in 0..DEPTH_LADDER.len() {
            t = match style {
                BlockStyle::Jc => self.jc_block(&format!("{prefix}.jc{}", i + 1), t)?,
                BlockStyle::Plain => self.conv(&format!("{prefix}.conv{}", i + 1), t)?,
            };
            if i < 2 {
                t = self.act(Activation::Elu, t)?;
                t = self.batchnorm(&format!("{prefix}.bn{}", i + 1), t)?;
            }
        }
        self.graph.add(x, t)
    }

    /// `N×Ñ_c×N_t×2` in `(0,1)` → tanh codewords `N×M`.
    pub fn encoder(&mut self, x: Var) -> Result<Var> {
        let cfg = &self.model.config;
        let [h, w, c] = cfg.input_shape();
        let shape = self.graph.shape(x).to_vec();
        if shape.len() != 4 || shape[1..] != [h, w, c] {
            return dim_err(format!("encoder expects N×{h}×{w}×{c}, got {shape:?}"));
        }
        if self.graph.value(x).data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Domain("encoder input outside [0, 1]".into()));
        }
        let (n, flat, m) = (shape[0], cfg.flat_len(), cfg.codeword_len);
        let mut t = x;
        for i in 0..cfg.encoder_resnets {
            t = self.residual(&residual_prefix("enc", i), t)?;
        }
        t = self.act(Activation::Elu, t)?;
        t = self.batchnorm("enc.bn", t)?;
        t = self.graph.reshape(t, &[n, flat])?;
        let w = self.param("enc.fc.weights")?;
        let b = self.param("enc.fc.bias")?;
        t = nn::dense(self.graph, t, w, b)?;
        debug_assert_eq!(self.graph.shape(t), &[n, m]);
        self.act(Activation::Tanh, t)
    }

    /// Dequantized codewords `N×M` → reconstruction `N×Ñ_c×N_t×2` in `(0,1)`.
    pub fn decoder(&mut self, y: Var) -> Result<Var> {
        let cfg = &self.model.config;
        let [h, w, c] = cfg.input_shape();
        let shape = self.graph.shape(y).to_vec();
        if shape.len() != 2 || shape[1] != cfg.codeword_len {
            return dim_err(format!("decoder expects N×{}, got {shape:?}", cfg.codeword_len));
        }
        let n = shape[0];
        let resnets = cfg.decoder_resnets;
        let wt = self.param("dec.fc.weights")?;
        let b = self.param("dec.fc.bias")?;
        let mut t = nn::dense(self.graph, y, wt, b)?;
        t = self.graph.reshape(t, &[n, h, w, c])?;
        for i in 0..resnets {
            t = self.residual(&residual_prefix("dec", i), t)?;
        }
        self.act(Activation::Sigmoid, t)
    }

    pub fn quantize(&mut self, code: Var, stage: QuantStage) -> Result<Var> {
        let spec = self.model.config.quant_spec();
        match stage {
            QuantStage::Bypass => Ok(code),
            QuantStage::Ste => quantizer::quantize_ste(self.graph, code, spec.bits),
            QuantStage::Codec => {
                let t = self.graph.value(code);
                let mut values = Vec::with_capacity(t.len());
                for row in t.data().chunks_exact(spec.len) {
                    let inside: Vec<f64> = row.iter().map(|&v| quantizer::pull_inside(v)).collect();
                    let q = quantizer::quantize(&inside, spec)?;
                    let flow = quantizer::pack(&q.levels, spec)?;
                    values.extend(quantizer::dequantize(&flow)?);
                }
                let out = Tensor::new(t.shape(), values)?;
                Ok(self.graph.constant(out))
            }
        }
    }

    pub fn autoencoder(&mut self, x: Var, stage: QuantStage) -> Result<Var> {
        let code = self.encoder(x)?;
        let y = self.quantize(code, stage)?;
        self.decoder(y)
    }

    /// Quantizer stage used during training for this model's configuration.
    pub fn training_stage(&self) -> QuantStage {
        if self.model.config.quant_aware {
            QuantStage::Ste
        } else {
            QuantStage::Bypass
        }
    }
}

//! `B`-bit uniform quantizer with a straight-through gradient, and the codec
//! between integer levels and the feedback bit flow.
//!
//! An entry `x ∈ (−1, 1)` maps to the level
//! `q = clamp(round(2^{B−1}·x), −(2^{B−1}−1), 2^{B−1}−1)` (ties away from
//! zero) and back to `y = q / 2^{B−1}`. Levels travel as `B`-bit two's
//! complement, most significant bit first, entries in order; the pattern
//! `100…0` is never emitted.

use crate::error::{Error, Result};
use crate::graph::{BackwardRule, Graph, Var};
use crate::tensor::Tensor;

pub const MAX_BITS: u8 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantSpec {
    pub bits: u8,
    pub len: usize,
}

impl QuantSpec {
    pub fn new(bits: u8, len: usize) -> Result<Self> {
        if bits == 0 || bits > MAX_BITS {
            return Err(Error::Config(format!("bits per entry must be in 1..={MAX_BITS}, got {bits}")));
        }
        if len == 0 {
            return Err(Error::Config("codeword length must be positive".into()));
        }
        Ok(Self { bits, len })
    }

    pub fn total_bits(&self) -> usize {
        self.len * self.bits as usize
    }

    pub fn payload_bytes(&self) -> usize {
        self.total_bits().div_ceil(8)
    }

    /// `2^{B−1}`.
    pub fn scale(&self) -> f64 {
        (1u32 << (self.bits - 1)) as f64
    }

    pub fn max_level(&self) -> i32 {
        (1i32 << (self.bits - 1)) - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub levels: Vec<i32>,
    pub values: Vec<f64>,
}

/// Level of one entry; `x` must already be inside `(−1, 1)`.
fn level_of(x: f64, scale: f64, max_level: i32) -> i32 {
    // f64::round rounds half away from zero
    ((scale * x).round() as i32).clamp(-max_level, max_level)
}

pub fn quantize(x: &[f64], spec: QuantSpec) -> Result<Quantized> {
    if x.len() != spec.len {
        return Err(Error::Dimension(format!("codeword of length {} for spec length {}", x.len(), spec.len)));
    }
    if let Some(bad) = x.iter().find(|v| !(v.abs() < 1.0)) {
        return Err(Error::Domain(format!("{bad} is not inside (−1, 1)")));
    }
    let (scale, max) = (spec.scale(), spec.max_level());
    let levels: Vec<i32> = x.iter().map(|&v| level_of(v, scale, max)).collect();
    let values = levels.iter().map(|&q| q as f64 / scale).collect();
    Ok(Quantized { levels, values })
}

/// Packed feedback payload of one codeword.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitFlow {
    pub payload: Vec<u8>,
    pub spec: QuantSpec,
}

impl BitFlow {
    pub fn total_bits(&self) -> usize {
        self.spec.total_bits()
    }
}

pub fn pack(levels: &[i32], spec: QuantSpec) -> Result<BitFlow> {
    if levels.len() != spec.len {
        return Err(Error::Dimension(format!("{} levels for spec length {}", levels.len(), spec.len)));
    }
    let max = spec.max_level();
    let bits = spec.bits as usize;
    let mask = (1u32 << bits) - 1;
    let mut payload = vec![0u8; spec.payload_bytes()];
    let mut cursor = 0usize;
    for &q in levels {
        if q < -max || q > max {
            return Err(Error::Encode(format!("level {q} outside ±{max} for {bits} bits")));
        }
        let word = (q as u32) & mask;
        for b in (0..bits).rev() {
            if (word >> b) & 1 == 1 {
                payload[cursor / 8] |= 0x80 >> (cursor % 8);
            }
            cursor += 1;
        }
    }
    Ok(BitFlow { payload, spec })
}

pub fn unpack(flow: &BitFlow) -> Result<Vec<i32>> {
    let spec = flow.spec;
    if flow.payload.len() != spec.payload_bytes() {
        return Err(Error::CorruptPayload(format!(
            "{} bytes for a {}-bit flow",
            flow.payload.len(),
            spec.total_bits()
        )));
    }
    let bits = spec.bits as usize;
    let used = spec.total_bits();
    if used % 8 != 0 {
        let tail = flow.payload[used / 8] & (0xFFu8 >> (used % 8));
        if tail != 0 {
            return Err(Error::CorruptPayload("nonzero padding bits".into()));
        }
    }
    let sign = 1u32 << (bits - 1);
    let mut levels = Vec::with_capacity(spec.len);
    let mut cursor = 0usize;
    for _ in 0..spec.len {
        let mut word = 0u32;
        for _ in 0..bits {
            let bit = (flow.payload[cursor / 8] >> (7 - cursor % 8)) & 1;
            word = (word << 1) | bit as u32;
            cursor += 1;
        }
        if word == sign {
            return Err(Error::CorruptPayload(format!("forbidden level pattern at entry {}", levels.len())));
        }
        let q = if word & sign != 0 { word as i32 - (1i32 << bits) } else { word as i32 };
        levels.push(q);
    }
    Ok(levels)
}

pub fn dequantize(flow: &BitFlow) -> Result<Vec<f64>> {
    let scale = flow.spec.scale();
    Ok(unpack(flow)?.into_iter().map(|q| q as f64 / scale).collect())
}

/// Straight-through rule: the gradient passes the quantizer unchanged.
pub fn ste_backward(upstream: &[f64]) -> Vec<f64> {
    upstream.to_vec()
}

struct SteRule;

impl BackwardRule for SteRule {
    fn name(&self) -> &'static str {
        "quantize_ste"
    }

    fn backward(&self, grad_out: &[f64], _inputs: &[&Tensor], _output: &Tensor) -> Vec<Option<Vec<f64>>> {
        vec![Some(ste_backward(grad_out))]
    }
}

/// Largest `f64` below one. `tanh` rounds to exactly `±1.0` for large
/// arguments; those entries are pulled back inside the open interval.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// In-graph quantization of every entry of `x` (any shape) with the
/// straight-through gradient.
pub fn quantize_ste(g: &mut Graph, x: Var, bits: u8) -> Result<Var> {
    let t = g.value(x);
    let spec = QuantSpec::new(bits, t.len())?;
    let inside: Vec<f64> = t.data().iter().map(|v| v.clamp(-BELOW_ONE, BELOW_ONE)).collect();
    let q = quantize(&inside, spec)?;
    let out = Tensor::new(t.shape(), q.values)?;
    g.custom(&[x], out, Box::new(SteRule))
}

/// Clamps a tanh output into the quantizer's open domain.
pub fn pull_inside(x: f64) -> f64 {
    x.clamp(-BELOW_ONE, BELOW_ONE)
}

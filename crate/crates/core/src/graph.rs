//! Eager reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation of one forward pass as a node holding
//! its output value. Nodes are appended after their inputs, so walking the
//! node list backwards is a reverse topological order and [`Graph::backward`]
//! visits each node once. Leaf gradients accumulate across `backward` calls;
//! the graph itself is meant to be dropped after one training step.

use crate::error::{dim_err, Error, Result};
use crate::linalg::gemm;
use crate::tensor::{numel, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Backward rule of an operation defined outside this module.
///
/// Returns one entry per input; `None` means no gradient flows to that input.
pub trait BackwardRule {
    fn name(&self) -> &'static str;
    fn backward(&self, grad_out: &[f64], inputs: &[&Tensor], output: &Tensor) -> Vec<Option<Vec<f64>>>;
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Reshape(Var),
    Concat(Vec<Var>),
    SumAll(Var),
    AddRowBias(Var, Var),
    Custom { inputs: Vec<Var>, rule: Box<dyn BackwardRule> },
}

impl Op {
    fn kind(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::MatMul(..) => "matmul",
            Op::Reshape(..) => "reshape",
            Op::Concat(..) => "concat",
            Op::SumAll(..) => "sum",
            Op::AddRowBias(..) => "add_row_bias",
            Op::Custom { rule, .. } => rule.name(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn check_finite(data: &[f64], what: &str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(what.to_string()))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inserts a leaf; it is differentiable iff the tensor carries a grad buffer.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        let requires_grad = value.requires_grad();
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Inserts a differentiable leaf, resetting its gradient to zero.
    pub fn param(&mut self, value: Tensor) -> Var {
        let value = Tensor::from_parts(value.shape().to_vec(), value.into_data()).with_grad();
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        let value = Tensor::from_parts(value.shape().to_vec(), value.into_data());
        self.push(value, Op::Leaf, false)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a differentiable leaf.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    fn derived(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, inputs: &[Var]) -> Result<Var> {
        check_finite(&data, op.kind())?;
        let requires_grad = inputs.iter().any(|&i| self.node(i).requires_grad);
        Ok(self.push(Tensor::from_parts(shape, data), op, requires_grad))
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Vec<f64>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if tb.len() == 1 && ta.shape() != tb.shape() {
            let s = tb.data()[0];
            return Ok(ta.data().iter().map(|&x| f(x, s)).collect());
        }
        if ta.shape() != tb.shape() {
            return dim_err(format!("{name} of {:?} and {:?}", ta.shape(), tb.shape()));
        }
        Ok(ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect())
    }

    /// Element-wise sum; `b` may be a one-element tensor broadcast over `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let data = self.binary(a, b, "add", |x, y| x + y)?;
        self.derived(self.shape(a).to_vec(), data, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let data = self.binary(a, b, "sub", |x, y| x - y)?;
        self.derived(self.shape(a).to_vec(), data, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let data = self.binary(a, b, "mul", |x, y| x * y)?;
        self.derived(self.shape(a).to_vec(), data, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let data = self.value(a).data().iter().map(|x| x * c).collect();
        self.derived(self.shape(a).to_vec(), data, Op::Scale(a, c), &[a])
    }

    /// `p×q · q×r → p×r`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return dim_err(format!("matmul of {sa:?} and {sb:?}"));
        }
        let (p, q, r) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; p * r];
        gemm(p, q, r, self.value(a).data(), false, self.value(b).data(), false, &mut out, 0.0);
        self.derived(vec![p, r], out, Op::MatMul(a, b), &[a, b])
    }

    /// Adds a length-`q` vector to every row of an `…×q` tensor.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        let q = *ta.shape().last().unwrap_or(&0);
        if tb.rank() != 1 || tb.len() != q {
            return dim_err(format!("bias {:?} for rows of {:?}", tb.shape(), ta.shape()));
        }
        let mut out = ta.data().to_vec();
        for row in out.chunks_exact_mut(q) {
            for (o, b) in row.iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        self.derived(ta.shape().to_vec(), out, Op::AddRowBias(a, bias), &[a, bias])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if numel(shape) != t.len() || shape.iter().any(|&d| d == 0) {
            return dim_err(format!("cannot reshape {:?} into {shape:?}", t.shape()));
        }
        let data = t.data().to_vec();
        self.derived(shape.to_vec(), data, Op::Reshape(a), &[a])
    }

    /// Concatenates along the last axis; all other extents must agree.
    pub fn concat_last(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| Error::Usage("concat of nothing".into()))?;
        let lead = self.shape(first);
        let lead = lead[..lead.len().saturating_sub(1)].to_vec();
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.shape(x);
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return dim_err(format!("concat of {:?} with {:?}", self.shape(first), s));
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let rows = numel(&lead);
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&x, &w) in xs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(x).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        self.derived(shape, out, Op::Concat(xs.to_vec()), xs)
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.derived(vec![], vec![s], Op::SumAll(a), &[a])
    }

    /// Records an externally computed operation together with its backward rule.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor, rule: Box<dyn BackwardRule>) -> Result<Var> {
        let shape = output.shape().to_vec();
        let data = output.into_data();
        self.derived(shape, data, Op::Custom { inputs: inputs.to_vec(), rule }, inputs)
    }

    /// Propagates `∂loss/∂·` to every differentiable leaf, accumulating into
    /// the leaves' gradient buffers.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward from non-scalar of shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.requires_grad(loss) {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let is_leaf = matches!(node.op, Op::Leaf);
            let contributions = self.input_grads(node, &g);
            for (input, dg) in contributions {
                check_finite(&dg, "backward")?;
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&dg).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(dg),
                }
            }
            if is_leaf {
                self.nodes[i].value.accumulate_grad(&g);
            }
        }
        Ok(())
    }

    fn input_grads(&self, node: &Node, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        // Reduces a full-size gradient onto a broadcast one-element operand.
        let fit = |v: Var, full: Vec<f64>| -> Vec<f64> {
            if self.value(v).len() == 1 && full.len() != 1 {
                vec![full.iter().sum()]
            } else {
                full
            }
        };
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if wants(*a) {
                    out.push((*a, g.to_vec()));
                }
                if wants(*b) {
                    out.push((*b, fit(*b, g.to_vec())));
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    out.push((*a, g.to_vec()));
                }
                if wants(*b) {
                    out.push((*b, fit(*b, g.iter().map(|x| -x).collect())));
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let broadcast = tb.len() == 1 && ta.shape() != tb.shape();
                if wants(*a) {
                    let ga = if broadcast {
                        g.iter().map(|x| x * tb.data()[0]).collect()
                    } else {
                        g.iter().zip(tb.data()).map(|(x, y)| x * y).collect()
                    };
                    out.push((*a, ga));
                }
                if wants(*b) {
                    let gb = g.iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                    out.push((*b, fit(*b, gb)));
                }
            }
            Op::Scale(a, c) => out.push((*a, g.iter().map(|x| x * c).collect())),
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (p, q, r) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if wants(*a) {
                    let mut ga = vec![0.0; p * q];
                    gemm(p, r, q, g, false, tb.data(), true, &mut ga, 0.0);
                    out.push((*a, ga));
                }
                if wants(*b) {
                    let mut gb = vec![0.0; q * r];
                    gemm(q, p, r, ta.data(), true, g, false, &mut gb, 0.0);
                    out.push((*b, gb));
                }
            }
            Op::AddRowBias(a, bias) => {
                if wants(*a) {
                    out.push((*a, g.to_vec()));
                }
                if wants(*bias) {
                    let q = self.value(*bias).len();
                    let mut gb = vec![0.0; q];
                    for row in g.chunks_exact(q) {
                        gb.iter_mut().zip(row).for_each(|(s, x)| *s += x);
                    }
                    out.push((*bias, gb));
                }
            }
            Op::Reshape(a) => out.push((*a, g.to_vec())),
            Op::Concat(xs) => {
                let widths: Vec<usize> = xs.iter().map(|&x| *self.shape(x).last().unwrap()).collect();
                let total: usize = widths.iter().sum();
                let rows = g.len() / total;
                let mut parts: Vec<Vec<f64>> = widths.iter().map(|w| Vec::with_capacity(rows * w)).collect();
                for row in g.chunks_exact(total) {
                    let mut at = 0;
                    for (part, &w) in parts.iter_mut().zip(&widths) {
                        part.extend_from_slice(&row[at..at + w]);
                        at += w;
                    }
                }
                for (&x, part) in xs.iter().zip(parts) {
                    if wants(x) {
                        out.push((x, part));
                    }
                }
            }
            Op::SumAll(a) => out.push((*a, vec![g[0]; self.value(*a).len()])),
            Op::Custom { inputs, rule } => {
                let values: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                let gs = rule.backward(g, &values, &node.value);
                debug_assert_eq!(gs.len(), inputs.len());
                for (&v, dg) in inputs.iter().zip(gs) {
                    if let Some(dg) = dg {
                        if wants(v) {
                            debug_assert_eq!(dg.len(), self.value(v).len());
                            out.push((v, dg));
                        }
                    }
                }
            }
        }
        out
    }
}

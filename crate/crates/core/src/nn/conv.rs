//! "Same"-padded stride-1 2-D convolution over channel-last batches.
//!
//! Input `N×H×W×C`, weights `kh×kw×C×O`, bias `O`. The padding offset along
//! each axis is `floor((k−1)/2)`; an even kernel puts its extra zero row at the
//! bottom/right. The kernel is lowered to one gemm per call via im2col.

use crate::error::{dim_err, Result};
use crate::graph::{BackwardRule, Graph, Var};
use crate::linalg::gemm;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
struct Geometry {
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    kh: usize,
    kw: usize,
    o: usize,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.kh * self.kw * self.c
    }

    fn pixels(&self) -> usize {
        self.n * self.h * self.w
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1
    }
}

/// Gathers every receptive field into a row of a `pixels × (kh·kw·C)` matrix.
fn im2col(input: &[f64], geo: &Geometry) -> Vec<f64> {
    let Geometry { n, h, w, c, kh, kw, .. } = *geo;
    let (oh, ow) = ((kh - 1) / 2, (kw - 1) / 2);
    let patch = geo.patch();
    let mut cols = vec![0.0; geo.pixels() * patch];
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                let row = ((b * h + y) * w + x) * patch;
                for dy in 0..kh {
                    let sy = y + dy;
                    if sy < oh || sy - oh >= h {
                        continue;
                    }
                    let sy = sy - oh;
                    for dx in 0..kw {
                        let sx = x + dx;
                        if sx < ow || sx - ow >= w {
                            continue;
                        }
                        let sx = sx - ow;
                        let src = ((b * h + sy) * w + sx) * c;
                        let dst = row + (dy * kw + dx) * c;
                        cols[dst..dst + c].copy_from_slice(&input[src..src + c]);
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch rows back onto the input grid.
fn col2im(cols: &[f64], geo: &Geometry) -> Vec<f64> {
    let Geometry { n, h, w, c, kh, kw, .. } = *geo;
    let (oh, ow) = ((kh - 1) / 2, (kw - 1) / 2);
    let patch = geo.patch();
    let mut out = vec![0.0; n * h * w * c];
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                let row = ((b * h + y) * w + x) * patch;
                for dy in 0..kh {
                    let sy = y + dy;
                    if sy < oh || sy - oh >= h {
                        continue;
                    }
                    let sy = sy - oh;
                    for dx in 0..kw {
                        let sx = x + dx;
                        if sx < ow || sx - ow >= w {
                            continue;
                        }
                        let sx = sx - ow;
                        let dst = ((b * h + sy) * w + sx) * c;
                        let src = row + (dy * kw + dx) * c;
                        for (o, v) in out[dst..dst + c].iter_mut().zip(&cols[src..src + c]) {
                            *o += v;
                        }
                    }
                }
            }
        }
    }
    out
}

struct Conv2dRule {
    geo: Geometry,
}

impl BackwardRule for Conv2dRule {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, grad_out: &[f64], inputs: &[&Tensor], _output: &Tensor) -> Vec<Option<Vec<f64>>> {
        let geo = self.geo;
        let (input, weights) = (inputs[0], inputs[1]);
        let (rows, patch, o) = (geo.pixels(), geo.patch(), geo.o);

        let mut d_bias = vec![0.0; o];
        for row in grad_out.chunks_exact(o) {
            d_bias.iter_mut().zip(row).for_each(|(s, g)| *s += g);
        }

        let owned_cols;
        let cols: &[f64] = if geo.pointwise() {
            input.data()
        } else {
            owned_cols = im2col(input.data(), &geo);
            &owned_cols
        };
        let mut d_weights = vec![0.0; patch * o];
        gemm(patch, rows, o, cols, true, grad_out, false, &mut d_weights, 0.0);

        let mut d_cols = vec![0.0; rows * patch];
        gemm(rows, o, patch, grad_out, false, weights.data(), true, &mut d_cols, 0.0);
        let d_input = if geo.pointwise() { d_cols } else { col2im(&d_cols, &geo) };

        vec![Some(d_input), Some(d_weights), Some(d_bias)]
    }
}

/// Records `conv2d(input, weights) + bias` on the graph.
pub fn conv2d(g: &mut Graph, input: Var, weights: Var, bias: Var) -> Result<Var> {
    let (si, sw, sb) = (g.shape(input), g.shape(weights), g.shape(bias));
    if si.len() != 4 || sw.len() != 4 || sb.len() != 1 {
        return dim_err(format!("conv2d expects N×H×W×C input, kh×kw×C×O weights; got {si:?}, {sw:?}"));
    }
    if si[3] != sw[2] {
        return dim_err(format!("conv2d input depth {} vs kernel depth {}", si[3], sw[2]));
    }
    if sb[0] != sw[3] {
        return dim_err(format!("conv2d bias length {} vs output depth {}", sb[0], sw[3]));
    }
    let geo = Geometry { n: si[0], h: si[1], w: si[2], c: si[3], kh: sw[0], kw: sw[1], o: sw[3] };
    let x = g.value(input).data();
    let owned_cols;
    let cols: &[f64] = if geo.pointwise() {
        x
    } else {
        owned_cols = im2col(x, &geo);
        &owned_cols
    };
    let mut out = vec![0.0; geo.pixels() * geo.o];
    for row in out.chunks_exact_mut(geo.o) {
        row.copy_from_slice(g.value(bias).data());
    }
    gemm(geo.pixels(), geo.patch(), geo.o, cols, false, g.value(weights).data(), false, &mut out, 1.0);
    let out = Tensor::from_parts(vec![geo.n, geo.h, geo.w, geo.o], out);
    g.custom(&[input, weights, bias], out, Box::new(Conv2dRule { geo }))
}

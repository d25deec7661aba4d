//! Reverse-mode differentiation over a linear record of operations.

use super::gemm::gemm;
use super::tensor::{axis_extents, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    fn col_rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.h_out * self.w_out
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Ln(Var),
    Sum(Var),
    Mean(Var),
    Dot(Var, Var),
    MeanSpatial(Var),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    LogSumExp(Var, usize),
    Reshape(Var),
    Slice0(Var, usize),
    Concat0(Vec<Var>),
    Upsample(Var, usize),
    ScaleChannels(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a computation and back-propagates through it. A tape is meant to
/// live for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let n = g.col_cols();
    let (k, s, p) = (g.k, g.stride as isize, g.pad as isize);
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = ((c * k + ki) * k + kj) * n;
                let dst = &mut cols[row..row + n];
                for oy in 0..g.h_out {
                    let iy = oy as isize * s + ki as isize - p;
                    let out_row = &mut dst[oy * g.w_out..(oy + 1) * g.w_out];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = ox as isize * s + kj as isize - p;
                        *o = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let n = g.col_cols();
    let (k, s, p) = (g.k, g.stride as isize, g.pad as isize);
    for c in 0..g.c_in {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = ((c * k + ki) * k + kj) * n;
                let src = &cols[row..row + n];
                for oy in 0..g.h_out {
                    let iy = oy as isize * s + ki as isize - p;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, &v) in src[oy * g.w_out..(oy + 1) * g.w_out].iter().enumerate() {
                        let ix = ox as isize * s + kj as isize - p;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// An input that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
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

    /// Gradient of the last `backward` target with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).map(f);
        self.push(value, op, &[a])
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&p, &q)| f(p, q))
            .collect();
        let value = Tensor::new(x.shape(), data)?;
        Ok(self.push(value, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Ln(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).len() != self.value(b).len() {
            return Err(Error::shape("dot", self.shape(a), self.shape(b)));
        }
        let s = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .sum();
        Ok(self.push(Tensor::scalar(s), Op::Dot(a, b), &[a, b]))
    }

    /// `m×k · k×n → m×n`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            0.0,
        );
        let value = Tensor::new(&[m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::shape("transpose", s, &[0, 0]));
        }
        let (r, c) = (s[0], s[1]);
        let x = self.value(a).data();
        let data = (0..r * c).map(|i| x[(i % r) * c + i / r]).collect();
        let value = Tensor::new(&[c, r], data)?;
        Ok(self.push(value, Op::Transpose(a), &[a]))
    }

    /// 2-D convolution of a `C×H×W` input with `O×C×k×k` weights, optional
    /// bias of length `O`, symmetric zero padding.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 3 || sw.len() != 4 || sw[1] != sx[0] || sw[2] != sw[3] || stride == 0 {
            return Err(Error::shape("conv2d", &sx, &sw));
        }
        let (c_in, h, wd, c_out, k) = (sx[0], sx[1], sx[2], sw[0], sw[2]);
        if h + 2 * pad < k || wd + 2 * pad < k {
            return Err(Error::shape("conv2d", &sx, &sw));
        }
        if let Some(b) = b {
            if self.shape(b) != [c_out] {
                return Err(Error::shape("conv2d bias", self.shape(b), &[c_out]));
            }
        }
        let geom = ConvGeom {
            c_in,
            h,
            w: wd,
            c_out,
            k,
            stride,
            pad,
            h_out: (h + 2 * pad - k) / stride + 1,
            w_out: (wd + 2 * pad - k) / stride + 1,
        };
        let (rows, n) = (geom.col_rows(), geom.col_cols());
        let mut cols = vec![0.0; rows * n];
        im2col(self.value(x).data(), &geom, &mut cols);
        let mut out = vec![0.0; c_out * n];
        if let Some(b) = b {
            for (row, &bias) in out.chunks_exact_mut(n).zip(self.value(b).data()) {
                row.fill(bias);
            }
        }
        gemm(
            c_out,
            rows,
            n,
            self.value(w).data(),
            false,
            &cols,
            false,
            &mut out,
            1.0,
        );
        let value = Tensor::new(&[c_out, geom.h_out, geom.w_out], out)?;
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.push(
            value,
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                cols,
            },
            &parents,
        ))
    }

    /// Spatial mean of a `C×…` tensor, giving a length-`C` vector.
    pub fn mean_spatial(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() < 2 {
            return Err(Error::shape("mean_spatial", s, &[0, 0]));
        }
        let c = s[0];
        let x = self.value(a).data();
        let n = x.len() / c;
        let data = x
            .chunks_exact(n)
            .map(|ch| ch.iter().sum::<f64>() / n as f64)
            .collect();
        let value = Tensor::new(&[c], data)?;
        Ok(self.push(value, Op::MeanSpatial(a), &[a]))
    }

    fn check_axis(&self, op: &'static str, a: Var, axis: usize) -> Result<()> {
        if axis >= self.shape(a).len() {
            return Err(Error::shape(op, self.shape(a), &[axis]));
        }
        Ok(())
    }

    fn lse_along(x: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
        let (outer, len, inner) = axis_extents(shape, axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| x[(o * len + a) * inner + i];
                let m = (0..len).map(at).fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = (0..len).map(|a| (at(a) - m).exp()).sum();
                out[o * inner + i] = m + s.ln();
            }
        }
        out
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis("softmax", a, axis)?;
        let t = self.value(a);
        let lse = Self::lse_along(t.data(), t.shape(), axis);
        let value = Self::broadcast_from_lse(t, &lse, axis, |x, l| (x - l).exp());
        Ok(self.push(value, Op::Softmax(a, axis), &[a]))
    }

    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis("log_softmax", a, axis)?;
        let t = self.value(a);
        let lse = Self::lse_along(t.data(), t.shape(), axis);
        let value = Self::broadcast_from_lse(t, &lse, axis, |x, l| x - l);
        Ok(self.push(value, Op::LogSoftmax(a, axis), &[a]))
    }

    /// Log-sum-exp along `axis`; the axis is removed from the shape.
    pub fn logsumexp(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis("logsumexp", a, axis)?;
        let t = self.value(a);
        let lse = Self::lse_along(t.data(), t.shape(), axis);
        let mut shape = t.shape().to_vec();
        shape.remove(axis);
        let value = Tensor::new(&shape, lse)?;
        Ok(self.push(value, Op::LogSumExp(a, axis), &[a]))
    }

    fn broadcast_from_lse(
        t: &Tensor,
        lse: &[f64],
        axis: usize,
        f: impl Fn(f64, f64) -> f64,
    ) -> Tensor {
        let (_, len, inner) = axis_extents(t.shape(), axis);
        let data = t
            .data()
            .iter()
            .enumerate()
            .map(|(idx, &x)| f(x, lse[(idx / (len * inner)) * inner + idx % inner]))
            .collect();
        Tensor::new(t.shape(), data).expect("same shape")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshaped(shape)?;
        Ok(self.push(value, Op::Reshape(a), &[a]))
    }

    /// Rows `start..start+len` along the leading axis.
    pub fn slice0(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.is_empty() || start + len > s[0] {
            return Err(Error::shape("slice0", &s, &[start, len]));
        }
        let inner: usize = s[1..].iter().product();
        let data = self.value(a).data()[start * inner..(start + len) * inner].to_vec();
        let mut shape = s;
        shape[0] = len;
        let value = Tensor::new(&shape, data)?;
        Ok(self.push(value, Op::Slice0(a, start), &[a]))
    }

    /// Concatenation along the leading axis.
    pub fn concat0(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.shape(parts[0]).to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[1..] != first[1..] {
                return Err(Error::shape("concat0", &first, s));
            }
            rows += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = first;
        shape[0] = rows;
        let value = Tensor::new(&shape, data)?;
        Ok(self.push(value, Op::Concat0(parts.to_vec()), parts))
    }

    /// Nearest-neighbor upsampling of a `C×H×W` tensor by an integer factor.
    pub fn upsample(&mut self, a: Var, factor: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 3 || factor == 0 {
            return Err(Error::shape("upsample", &s, &[factor]));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let (h2, w2) = (h * factor, w * factor);
        let x = self.value(a).data();
        let mut out = vec![0.0; c * h2 * w2];
        for ch in 0..c {
            for y in 0..h2 {
                let src = &x[(ch * h + y / factor) * w..(ch * h + y / factor + 1) * w];
                let dst = &mut out[(ch * h2 + y) * w2..(ch * h2 + y + 1) * w2];
                for (xo, d) in dst.iter_mut().enumerate() {
                    *d = src[xo / factor];
                }
            }
        }
        let value = Tensor::new(&[c, h2, w2], out)?;
        Ok(self.push(value, Op::Upsample(a, factor), &[a]))
    }

    /// Multiplies channel `c` of a `C×…` tensor by `s[c]`.
    pub fn scale_channels(&mut self, x: Var, s: Var) -> Result<Var> {
        let (sx, ss) = (self.shape(x), self.shape(s));
        if sx.is_empty() || ss != [sx[0]] {
            return Err(Error::shape("scale_channels", sx, ss));
        }
        let t = self.value(x);
        let n = t.len() / sx[0];
        let sv = self.value(s).data();
        let data = t
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * sv[i / n])
            .collect();
        let value = Tensor::new(t.shape(), data)?;
        Ok(self.push(value, Op::ScaleChannels(x, s), &[x, s]))
    }

    fn acc<'g>(
        grads: &'g mut [Option<Vec<f64>>],
        nodes: &[Node],
        v: Var,
    ) -> Option<&'g mut Vec<f64>> {
        if !nodes[v.0].requires_grad {
            return None;
        }
        let n = nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    /// Back-propagates from the scalar `out`. Gradients of earlier calls are
    /// discarded.
    pub fn backward(&mut self, out: Var) -> Result<()> {
        if self.value(out).len() != 1 {
            return Err(Error::shape("backward", self.shape(out), &[]));
        }
        self.grads = vec![None; self.nodes.len()];
        if !self.nodes[out.0].requires_grad {
            return Ok(());
        }
        self.grads[out.0] = Some(vec![1.0]);
        for i in (0..=out.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let node = &nodes[i];
        let y = node.value.data();
        let val = |v: Var| nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(d) = Self::acc(grads, nodes, v) {
                        d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(d) = Self::acc(grads, nodes, *a) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
                if let Some(d) = Self::acc(grads, nodes, *b) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d -= g);
                }
            }
            Op::Mul(a, b) => {
                let (x, z) = (val(*a), val(*b));
                if let Some(d) = Self::acc(grads, nodes, *a) {
                    for k in 0..d.len() {
                        d[k] += g[k] * z[k];
                    }
                }
                if let Some(d) = Self::acc(grads, nodes, *b) {
                    for k in 0..d.len() {
                        d[k] += g[k] * x[k];
                    }
                }
            }
            Op::Div(a, b) => {
                let (x, z) = (val(*a), val(*b));
                if let Some(d) = Self::acc(grads, nodes, *a) {
                    for k in 0..d.len() {
                        d[k] += g[k] / z[k];
                    }
                }
                if let Some(d) = Self::acc(grads, nodes, *b) {
                    for k in 0..d.len() {
                        d[k] -= g[k] * x[k] / (z[k] * z[k]);
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(d) = Self::acc(grads, nodes, *a) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += c * g);
                }
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                if let Some(d) = Self::acc(grads, nodes, *a) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
            }
            Op::Relu(a) => {
                let x = val(*a);
                if let Some(d) = Self::acc(grads, nodes, *a) {
                    for k in 0..d.len() {
                        if x[k] > 0.0 {
                            d[k] += g[k];
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(d) = Self::acc(grads, nodes, *a) {
                    for k in 0..d.len() {
                        d[k] += g[k] * y[k] * (1.0 - y[k]);
                    }
                }
            }
            Op::Softplus(a) => {
                let x = val(*a);
                if let Some(d) = Self::acc(grads, nodes, *a) {
                    for k in 0..d.len() {
                        d[k] += g[k] * sigmoid(x[k]);
                    }
                }
            }
            Op::Exp(a) => {
                if let Some(d) = Self::acc(grads, nodes, *a) {
                    for k in 0..d.len() {
                        d[k] += g[k] * y[k];
                    }
                }
            }
            Op::Ln(a) => {
                let x = val(*a);
                if let Some(d) = Self::acc(grads, nodes, *a) {
                    for k in 0..d.len() {
                        d[k] += g[k] / x[k];
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(d) = Self::acc(grads, nodes, *a) {
                    d.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(a) => {
                if let Some(d) = Self::acc(grads, nodes, *a) {
                    let s = g[0] / d.len() as f64;
                    d.iter_mut().for_each(|d| *d += s);
                }
            }
            Op::Dot(a, b) => {
                let (x, z) = (val(*a), val(*b));
                if let Some(d) = Self::acc(grads, nodes, *a) {
                    d.iter_mut().zip(z).for_each(|(d, z)| *d += g[0] * z);
                }
                if let Some(d) = Self::acc(grads, nodes, *b) {
                    d.iter_mut().zip(x).for_each(|(d, x)| *d += g[0] * x);
                }
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (nodes[a.0].value.shape(), nodes[b.0].value.shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (x, z) = (val(*a), val(*b));
                if let Some(d) = Self::acc(grads, nodes, *a) {
                    gemm(m, n, k, g, false, z, true, d, 1.0);
                }
                if let Some(d) = Self::acc(grads, nodes, *b) {
                    gemm(k, m, n, x, true, g, false, d, 1.0);
                }
            }
            Op::Transpose(a) => {
                let s = nodes[a.0].value.shape();
                let (r, c) = (s[0], s[1]);
                if let Some(d) = Self::acc(grads, nodes, *a) {
                    // y[j, i] = x[i, j]
                    for ii in 0..r {
                        for j in 0..c {
                            d[ii * c + j] += g[j * r + ii];
                        }
                    }
                }
            }
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                cols,
            } => {
                let (rows, n) = (geom.col_rows(), geom.col_cols());
                if let Some(bv) = b {
                    if let Some(d) = Self::acc(grads, nodes, *bv) {
                        for (dc, gr) in d.iter_mut().zip(g.chunks_exact(n)) {
                            *dc += gr.iter().sum::<f64>();
                        }
                    }
                }
                if let Some(d) = Self::acc(grads, nodes, *w) {
                    gemm(geom.c_out, n, rows, g, false, cols, true, d, 1.0);
                }
                if nodes[x.0].requires_grad {
                    let mut dcols = vec![0.0; rows * n];
                    gemm(
                        rows,
                        geom.c_out,
                        n,
                        val(*w),
                        true,
                        g,
                        false,
                        &mut dcols,
                        0.0,
                    );
                    let d = Self::acc(grads, nodes, *x).expect("requires grad");
                    col2im(&dcols, geom, d);
                }
            }
            Op::MeanSpatial(a) => {
                if let Some(d) = Self::acc(grads, nodes, *a) {
                    let n = d.len() / g.len();
                    for (chunk, &gc) in d.chunks_exact_mut(n).zip(g) {
                        let s = gc / n as f64;
                        chunk.iter_mut().for_each(|d| *d += s);
                    }
                }
            }
            Op::Softmax(a, axis) => {
                let (outer, len, inner) = axis_extents(node.value.shape(), *axis);
                if let Some(d) = Self::acc(grads, nodes, *a) {
                    for o in 0..outer {
                        for ii in 0..inner {
                            let idx = |k: usize| (o * len + k) * inner + ii;
                            let dotp: f64 = (0..len).map(|k| g[idx(k)] * y[idx(k)]).sum();
                            for k in 0..len {
                                d[idx(k)] += y[idx(k)] * (g[idx(k)] - dotp);
                            }
                        }
                    }
                }
            }
            Op::LogSoftmax(a, axis) => {
                let (outer, len, inner) = axis_extents(node.value.shape(), *axis);
                if let Some(d) = Self::acc(grads, nodes, *a) {
                    for o in 0..outer {
                        for ii in 0..inner {
                            let idx = |k: usize| (o * len + k) * inner + ii;
                            let gs: f64 = (0..len).map(|k| g[idx(k)]).sum();
                            for k in 0..len {
                                d[idx(k)] += g[idx(k)] - y[idx(k)].exp() * gs;
                            }
                        }
                    }
                }
            }
            Op::LogSumExp(a, axis) => {
                let x = val(*a);
                let (outer, len, inner) = axis_extents(nodes[a.0].value.shape(), *axis);
                if let Some(d) = Self::acc(grads, nodes, *a) {
                    for o in 0..outer {
                        for ii in 0..inner {
                            let r = o * inner + ii;
                            for k in 0..len {
                                let idx = (o * len + k) * inner + ii;
                                d[idx] += g[r] * (x[idx] - y[r]).exp();
                            }
                        }
                    }
                }
            }
            Op::Slice0(a, start) => {
                if let Some(d) = Self::acc(grads, nodes, *a) {
                    let off = start * (d.len() / nodes[a.0].value.shape()[0]);
                    d[off..off + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(d, g)| *d += g);
                }
            }
            Op::Concat0(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = nodes[p.0].value.len();
                    if let Some(d) = Self::acc(grads, nodes, p) {
                        d.iter_mut()
                            .zip(&g[off..off + n])
                            .for_each(|(d, g)| *d += g);
                    }
                    off += n;
                }
            }
            Op::Upsample(a, f) => {
                let s = nodes[a.0].value.shape();
                let (c, h, w) = (s[0], s[1], s[2]);
                let (h2, w2) = (h * f, w * f);
                if let Some(d) = Self::acc(grads, nodes, *a) {
                    for ch in 0..c {
                        for yy in 0..h2 {
                            let dst = &mut d[(ch * h + yy / f) * w..(ch * h + yy / f + 1) * w];
                            let src = &g[(ch * h2 + yy) * w2..(ch * h2 + yy + 1) * w2];
                            for (xo, &gv) in src.iter().enumerate() {
                                dst[xo / f] += gv;
                            }
                        }
                    }
                }
            }
            Op::ScaleChannels(x, s) => {
                let (xv, sv) = (val(*x), val(*s));
                let n = xv.len() / sv.len();
                if let Some(d) = Self::acc(grads, nodes, *x) {
                    for k in 0..d.len() {
                        d[k] += g[k] * sv[k / n];
                    }
                }
                if let Some(d) = Self::acc(grads, nodes, *s) {
                    for (c, dc) in d.iter_mut().enumerate() {
                        *dc += (c * n..(c + 1) * n).map(|k| g[k] * xv[k]).sum::<f64>();
                    }
                }
            }
        }
    }
}

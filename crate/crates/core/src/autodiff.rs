//! Reverse-mode automatic differentiation on a linear tape.
//!
//! A [`Graph`] records every operation in creation order, so the tape is
//! already a topological order and [`Graph::backward`] walks it once in
//! reverse. Only the operators the reconstruction networks need are provided;
//! there is no general broadcasting.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{gemm, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Sqrt(Var),
    Square(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sum(Var),
    Mean(Var),
    Conv2d {
        x: Var,
        k: Var,
        bias: Option<Var>,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    Upsample {
        x: Var,
        factor: usize,
    },
    Concat(Var, Var),
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        training: bool,
    },
    Reshape(Var),
    Permute {
        x: Var,
        axes: Vec<usize>,
    },
    FilterValid {
        x: Var,
        kernel: Vec<f64>,
        size: usize,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::AddRow(..) => "add_row",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::Sqrt(..) => "sqrt",
            Op::Square(..) => "square",
            Op::Relu(..) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool2 { .. } => "maxpool2",
            Op::Upsample { .. } => "upsample_nn",
            Op::Concat(..) => "concat_channels",
            Op::Dropout { .. } => "dropout",
            Op::BatchNorm { .. } => "batchnorm",
            Op::Reshape(..) => "reshape",
            Op::Permute { .. } => "permute",
            Op::FilterValid { .. } => "filter_valid",
        }
    }
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    op: Op,
    requires_grad: bool,
}

/// Running mean/variance carried between batch-norm calls.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchNormConfig {
    pub eps: f64,
    pub momentum: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            momentum: 0.1,
        }
    }
}

/// Tape of nodes for one forward/backward pass.
pub struct Graph {
    nodes: Vec<Node>,
    training: bool,
}

impl Graph {
    pub fn new(training: bool) -> Self {
        Self {
            nodes: Vec::new(),
            training,
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf treated as a constant (inputs, targets, frozen weights).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient accumulated for `v` by the last [`Graph::backward`], if `v`
    /// was reachable from the loss.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad.as_ref().map(|g| {
            Tensor::from_parts_unchecked(node.value.shape().to_vec(), g.clone())
                .expect("gradient shape matches value")
        })
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn emit(&mut self, op: Op, parents: &[Var], shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let name = op.name();
        let value = Tensor::from_parts_unchecked(shape, data)?;
        value.ensure_finite(name)?;
        let rg = self.needs(parents);
        Ok(self.push(value, op, rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn dims4(&self, op: &'static str, x: Var) -> Result<[usize; 4]> {
        match *self.shape(x) {
            [b, c, h, w] => Ok([b, c, h, w]),
            ref s => Err(Error::dim(op, format!("expected B×C×H×W, got {s:?}"))),
        }
    }

    // ----- forward operators -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let shape = out.shape().to_vec();
        self.emit(Op::MatMul(a, b), &[a, b], shape, out.into_data())
    }

    /// Adds the vector `bias[N]` to every row of `x[B×N]`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xs, bs) = (self.shape(x), self.shape(bias));
        if xs.len() != 2 || bs.len() != 1 || xs[1] != bs[0] {
            return Err(Error::dim("add_row", format!("{xs:?} + {bs:?}")));
        }
        let n = xs[1];
        let shape = xs.to_vec();
        let b = self.value(bias).data().to_vec();
        let data: Vec<f64> = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + b[i % n])
            .collect();
        self.emit(Op::AddRow(x, bias), &[x, bias], shape, data)
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<(Vec<usize>, Vec<f64>)> {
        self.same_shape(name, a, b)?;
        let out = self.value(a).zip_map(self.value(b), f)?;
        Ok((out.shape().to_vec(), out.into_data()))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (s, d) = self.binary("add", a, b, |x, y| x + y)?;
        self.emit(Op::Add(a, b), &[a, b], s, d)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (s, d) = self.binary("sub", a, b, |x, y| x - y)?;
        self.emit(Op::Sub(a, b), &[a, b], s, d)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (s, d) = self.binary("mul", a, b, |x, y| x * y)?;
        self.emit(Op::Mul(a, b), &[a, b], s, d)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (s, d) = self.binary("div", a, b, |x, y| x / y)?;
        self.emit(Op::Div(a, b), &[a, b], s, d)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v * s);
        let shape = out.shape().to_vec();
        self.emit(Op::Scale(x, s), &[x], shape, out.into_data())
    }

    /// Adds the constant `c` to every element.
    pub fn offset(&mut self, x: Var, c: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v + c);
        let shape = out.shape().to_vec();
        self.emit(Op::Offset(x), &[x], shape, out.into_data())
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        if self.value(x).min() < 0.0 {
            return Err(Error::param("sqrt of negative value"));
        }
        let out = self.value(x).map(f64::sqrt);
        let shape = out.shape().to_vec();
        self.emit(Op::Sqrt(x), &[x], shape, out.into_data())
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v * v);
        let shape = out.shape().to_vec();
        self.emit(Op::Square(x), &[x], shape, out.into_data())
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(0.0));
        let shape = out.shape().to_vec();
        self.emit(Op::Relu(x), &[x], shape, out.into_data())
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        let shape = out.shape().to_vec();
        self.emit(Op::LeakyRelu(x, slope), &[x], shape, out.into_data())
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.emit(Op::Sum(x), &[x], vec![1], vec![s])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).mean();
        self.emit(Op::Mean(x), &[x], vec![1], vec![s])
    }

    /// Stride-1 cross-correlation with zero "same" padding.
    /// `x: B×C×H×W`, `k: F×C×kh×kw` (odd extents), `bias: F`.
    pub fn conv2d(&mut self, x: Var, k: Var, bias: Option<Var>) -> Result<Var> {
        let [b, c, h, w] = self.dims4("conv2d", x)?;
        let ks = self.shape(k).to_vec();
        if ks.len() != 4 || ks[1] != c {
            return Err(Error::dim("conv2d", format!("input {:?}, kernel {ks:?}", self.shape(x))));
        }
        let (f, kh, kw) = (ks[0], ks[2], ks[3]);
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::param(format!("conv2d kernel {kh}×{kw} must be odd")));
        }
        if let Some(bv) = bias {
            if self.shape(bv) != [f] {
                return Err(Error::dim("conv2d", format!("bias {:?} for {f} filters", self.shape(bv))));
            }
        }
        let geo = ConvGeometry { c, h, w, kh, kw };
        let hw = h * w;
        let ckk = c * kh * kw;
        let mut out = vec![0.0; b * f * hw];
        let mut col = vec![0.0; ckk * hw];
        let xd = self.value(x).data();
        let kd = self.value(k).data();
        for bi in 0..b {
            geo.im2col(&xd[bi * c * hw..(bi + 1) * c * hw], &mut col);
            gemm(f, ckk, hw, kd, false, &col, false, &mut out[bi * f * hw..(bi + 1) * f * hw], 0.0);
        }
        if let Some(bv) = bias {
            let bd = self.value(bv).data();
            for (chunk, i) in out.chunks_exact_mut(hw).zip(0..) {
                let add = bd[i % f];
                chunk.iter_mut().for_each(|v| *v += add);
            }
        }
        let mut parents = vec![x, k];
        parents.extend(bias);
        self.emit(Op::Conv2d { x, k, bias }, &parents, vec![b, f, h, w], out)
    }

    /// 2×2 max pooling with stride 2. Ties resolve to the first element in
    /// row-major window order.
    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let [b, c, h, w] = self.dims4("maxpool2", x)?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::dim("maxpool2", format!("odd spatial extent {h}×{w}")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(b * c * oh * ow);
        let mut argmax = Vec::with_capacity(b * c * oh * ow);
        for plane in 0..b * c {
            let base = plane * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = base + 2 * i * w + 2 * j;
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * i + di) * w + 2 * j + dj;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                    out.push(xd[best]);
                    argmax.push(best);
                }
            }
        }
        self.emit(Op::MaxPool2 { x, argmax }, &[x], vec![b, c, oh, ow], out)
    }

    /// Indices (into the flattened input) selected by a maxpool node.
    pub fn argmax_indices(&self, pooled: Var) -> Option<&[usize]> {
        match &self.nodes[pooled.0].op {
            Op::MaxPool2 { argmax, .. } => Some(argmax),
            _ => None,
        }
    }

    pub fn upsample_nn(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(Error::param("upsample factor must be positive"));
        }
        let [b, c, h, w] = self.dims4("upsample_nn", x)?;
        let (oh, ow) = (h * factor, w * factor);
        let xd = self.value(x).data();
        let mut out = vec![0.0; b * c * oh * ow];
        for plane in 0..b * c {
            for i in 0..oh {
                for j in 0..ow {
                    out[plane * oh * ow + i * ow + j] = xd[plane * h * w + (i / factor) * w + j / factor];
                }
            }
        }
        self.emit(Op::Upsample { x, factor }, &[x], vec![b, c, oh, ow], out)
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let [ba, ca, ha, wa] = self.dims4("concat_channels", a)?;
        let [bb, cb, hb, wb] = self.dims4("concat_channels", b)?;
        if (ba, ha, wa) != (bb, hb, wb) {
            return Err(Error::dim(
                "concat_channels",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let hw = ha * wa;
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(ba * (ca + cb) * hw);
        for bi in 0..ba {
            out.extend_from_slice(&ad[bi * ca * hw..(bi + 1) * ca * hw]);
            out.extend_from_slice(&bd[bi * cb * hw..(bi + 1) * cb * hw]);
        }
        self.emit(Op::Concat(a, b), &[a, b], vec![ba, ca + cb, ha, wa], out)
    }

    /// Inverted dropout: zeroes each element with probability `p` and scales
    /// survivors by `1/(1-p)` in training mode; identity at inference.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::param(format!("dropout rate {p} outside [0,1)")));
        }
        if !self.training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - p;
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let out: Vec<f64> = self.value(x).data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let shape = self.shape(x).to_vec();
        self.emit(Op::Dropout { x, mask }, &[x], shape, out)
    }

    /// Batch normalization over axis 1 of `x: B×C×...`. In training mode
    /// the batch statistics are used and `stats` is updated; at inference
    /// `stats` is used as-is.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats,
        cfg: BatchNormConfig,
    ) -> Result<Var> {
        let batch_stats = self.training;
        self.batchnorm_mode(x, gamma, beta, stats, cfg, batch_stats)
    }

    /// Batch normalization with an explicit choice between batch statistics
    /// (updating `stats`) and the stored running statistics, independent of
    /// the graph's training flag. Frozen layers use the latter.
    pub fn batchnorm_mode(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats,
        cfg: BatchNormConfig,
        batch_stats: bool,
    ) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::dim("batchnorm", format!("rank {} input", shape.len())));
        }
        let (b, c) = (shape[0], shape[1]);
        let s: usize = shape[2..].iter().product();
        if self.shape(gamma) != [c] || self.shape(beta) != [c] || stats.mean.len() != c {
            return Err(Error::dim("batchnorm", format!("{c} channels vs affine/stats extents")));
        }
        if batch_stats && b < 2 {
            return Err(Error::param("batchnorm in training mode needs a batch of at least 2"));
        }
        let xd = self.value(x).data();
        let n = (b * s) as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        if batch_stats {
            for bi in 0..b {
                for ci in 0..c {
                    let o = (bi * c + ci) * s;
                    mean[ci] += xd[o..o + s].iter().sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            for bi in 0..b {
                for ci in 0..c {
                    let o = (bi * c + ci) * s;
                    var[ci] += xd[o..o + s].iter().map(|v| (v - mean[ci]).powi(2)).sum::<f64>();
                }
            }
            var.iter_mut().for_each(|v| *v /= n);
            let unbias = n / (n - 1.0);
            for ci in 0..c {
                stats.mean[ci] = (1.0 - cfg.momentum) * stats.mean[ci] + cfg.momentum * mean[ci];
                stats.var[ci] = (1.0 - cfg.momentum) * stats.var[ci] + cfg.momentum * var[ci] * unbias;
            }
        } else {
            mean.copy_from_slice(&stats.mean);
            var.copy_from_slice(&stats.var);
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + cfg.eps).sqrt()).collect();
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for bi in 0..b {
            for ci in 0..c {
                let o = (bi * c + ci) * s;
                for i in o..o + s {
                    xhat[i] = (xd[i] - mean[ci]) * inv_std[ci];
                    out[i] = gd[ci] * xhat[i] + bd[ci];
                }
            }
        }
        let training = batch_stats;
        self.emit(
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                training,
            },
            &[x, gamma, beta],
            shape,
            out,
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        self.emit(Op::Reshape(x), &[x], shape.to_vec(), out.into_data())
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::param(format!("invalid permutation {axes:?} for rank {}", shape.len())));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let out = permute_data(self.value(x).data(), &shape, axes);
        self.emit(Op::Permute { x, axes: axes.to_vec() }, &[x], out_shape, out)
    }

    /// Depthwise "valid" correlation of every channel with a fixed square
    /// kernel (not trainable). Used for windowed image statistics.
    pub fn filter_valid(&mut self, x: Var, kernel: &[f64], size: usize) -> Result<Var> {
        let [b, c, h, w] = self.dims4("filter_valid", x)?;
        if kernel.len() != size * size || size == 0 || size > h || size > w {
            return Err(Error::dim("filter_valid", format!("{size}×{size} window on {h}×{w}")));
        }
        let (oh, ow) = (h - size + 1, w - size + 1);
        let xd = self.value(x).data();
        let mut out = vec![0.0; b * c * oh * ow];
        for plane in 0..b * c {
            let src = &xd[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
            for ki in 0..size {
                for kj in 0..size {
                    let kv = kernel[ki * size + kj];
                    for i in 0..oh {
                        let srow = &src[(i + ki) * w + kj..(i + ki) * w + kj + ow];
                        let drow = &mut dst[i * ow..(i + 1) * ow];
                        for (d, s) in drow.iter_mut().zip(srow) {
                            *d += kv * s;
                        }
                    }
                }
            }
        }
        self.emit(
            Op::FilterValid {
                x,
                kernel: kernel.to_vec(),
                size,
            },
            &[x],
            vec![b, c, oh, ow],
            out,
        )
    }

    // ----- backward ----------------------------------------------------------

    /// Back-propagates from a scalar `loss`, filling the gradient of every
    /// node that depends on a [`Graph::param`] leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else { continue };
            self.backprop_node(i, &g);
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: Vec<f64>) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(g) => g.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
            None => node.grad = Some(delta),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&mut self, i: usize, g: &[f64]) {
        // The op is temporarily detached so parents can be borrowed mutably.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[1];
                if self.wants(a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g, false, self.value(b).data(), true, &mut da, 0.0);
                    self.accumulate(a, da);
                }
                if self.wants(b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, self.value(a).data(), true, g, false, &mut db, 0.0);
                    self.accumulate(b, db);
                }
            }
            &Op::AddRow(x, bias) => {
                let n = self.shape(bias)[0];
                if self.wants(bias) {
                    let mut db = vec![0.0; n];
                    for (j, v) in g.iter().enumerate() {
                        db[j % n] += v;
                    }
                    self.accumulate(bias, db);
                }
                self.accumulate(x, g.to_vec());
            }
            &Op::Add(a, b) => {
                self.accumulate(a, g.to_vec());
                self.accumulate(b, g.to_vec());
            }
            &Op::Sub(a, b) => {
                self.accumulate(a, g.to_vec());
                self.accumulate(b, g.iter().map(|v| -v).collect());
            }
            &Op::Mul(a, b) => {
                if self.wants(a) {
                    let d = zip(g, self.value(b).data(), |gv, bv| gv * bv);
                    self.accumulate(a, d);
                }
                if self.wants(b) {
                    let d = zip(g, self.value(a).data(), |gv, av| gv * av);
                    self.accumulate(b, d);
                }
            }
            &Op::Div(a, b) => {
                if self.wants(a) {
                    let d = zip(g, self.value(b).data(), |gv, bv| gv / bv);
                    self.accumulate(a, d);
                }
                if self.wants(b) {
                    let bd = self.value(b).data();
                    let ad = self.value(a).data();
                    let d: Vec<f64> = g
                        .iter()
                        .zip(ad.iter().zip(bd))
                        .map(|(gv, (av, bv))| -gv * av / (bv * bv))
                        .collect();
                    self.accumulate(b, d);
                }
            }
            &Op::Scale(x, s) => self.accumulate(x, g.iter().map(|v| v * s).collect()),
            &Op::Offset(x) => self.accumulate(x, g.to_vec()),
            &Op::Sqrt(x) => {
                let out = self.nodes[i].value.data();
                let d = zip(g, out, |gv, y| gv * 0.5 / y.max(1e-12));
                self.accumulate(x, d);
            }
            &Op::Square(x) => {
                let d = zip(g, self.value(x).data(), |gv, v| 2.0 * gv * v);
                self.accumulate(x, d);
            }
            &Op::Relu(x) => {
                let d = zip(g, self.value(x).data(), |gv, v| if v > 0.0 { gv } else { 0.0 });
                self.accumulate(x, d);
            }
            &Op::LeakyRelu(x, slope) => {
                let d = zip(g, self.value(x).data(), |gv, v| if v > 0.0 { gv } else { slope * gv });
                self.accumulate(x, d);
            }
            &Op::Sum(x) => {
                let n = self.value(x).len();
                self.accumulate(x, vec![g[0]; n]);
            }
            &Op::Mean(x) => {
                let n = self.value(x).len();
                self.accumulate(x, vec![g[0] / n as f64; n]);
            }
            &Op::Conv2d { x, k, bias } => self.conv2d_backward(x, k, bias, g),
            Op::MaxPool2 { x, argmax } => {
                let mut dx = vec![0.0; self.value(*x).len()];
                for (gv, &idx) in g.iter().zip(argmax) {
                    dx[idx] += gv;
                }
                self.accumulate(*x, dx);
            }
            &Op::Upsample { x, factor } => {
                let [b, c, h, w] = self.dims4("upsample_nn", x).expect("checked in forward");
                let (oh, ow) = (h * factor, w * factor);
                let mut dx = vec![0.0; b * c * h * w];
                for plane in 0..b * c {
                    for i in 0..oh {
                        for j in 0..ow {
                            dx[plane * h * w + (i / factor) * w + j / factor] += g[plane * oh * ow + i * ow + j];
                        }
                    }
                }
                self.accumulate(x, dx);
            }
            &Op::Concat(a, b) => {
                let [bs, ca, h, w] = self.dims4("concat_channels", a).expect("checked in forward");
                let cb = self.shape(b)[1];
                let hw = h * w;
                let mut da = Vec::with_capacity(bs * ca * hw);
                let mut db = Vec::with_capacity(bs * cb * hw);
                for bi in 0..bs {
                    let o = bi * (ca + cb) * hw;
                    da.extend_from_slice(&g[o..o + ca * hw]);
                    db.extend_from_slice(&g[o + ca * hw..o + (ca + cb) * hw]);
                }
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            Op::Dropout { x, mask } => {
                let d = zip(g, mask, |gv, m| gv * m);
                self.accumulate(*x, d);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                training,
            } => self.batchnorm_backward(*x, *gamma, *beta, xhat, inv_std, *training, g),
            &Op::Reshape(x) => self.accumulate(x, g.to_vec()),
            Op::Permute { x, axes } => {
                let out_shape = self.nodes[i].value.shape().to_vec();
                let mut inverse = vec![0; axes.len()];
                for (pos, &a) in axes.iter().enumerate() {
                    inverse[a] = pos;
                }
                let dx = permute_data(g, &out_shape, &inverse);
                self.accumulate(*x, dx);
            }
            Op::FilterValid { x, kernel, size } => {
                let [b, c, h, w] = self.dims4("filter_valid", *x).expect("checked in forward");
                let size = *size;
                let (oh, ow) = (h - size + 1, w - size + 1);
                let mut dx = vec![0.0; b * c * h * w];
                for plane in 0..b * c {
                    let gp = &g[plane * oh * ow..(plane + 1) * oh * ow];
                    let dp = &mut dx[plane * h * w..(plane + 1) * h * w];
                    for ki in 0..size {
                        for kj in 0..size {
                            let kv = kernel[ki * size + kj];
                            for r in 0..oh {
                                let drow = &mut dp[(r + ki) * w + kj..(r + ki) * w + kj + ow];
                                for (d, gv) in drow.iter_mut().zip(&gp[r * ow..(r + 1) * ow]) {
                                    *d += kv * gv;
                                }
                            }
                        }
                    }
                }
                self.accumulate(*x, dx);
            }
        }
        self.nodes[i].op = op;
    }

    fn conv2d_backward(&mut self, x: Var, k: Var, bias: Option<Var>, g: &[f64]) {
        let [b, c, h, w] = self.dims4("conv2d", x).expect("checked in forward");
        let ks = self.shape(k).to_vec();
        let (f, kh, kw) = (ks[0], ks[2], ks[3]);
        let geo = ConvGeometry { c, h, w, kh, kw };
        let hw = h * w;
        let ckk = c * kh * kw;
        if let Some(bv) = bias {
            if self.wants(bv) {
                let mut db = vec![0.0; f];
                for (chunk, idx) in g.chunks_exact(hw).zip(0..) {
                    db[idx % f] += chunk.iter().sum::<f64>();
                }
                self.accumulate(bv, db);
            }
        }
        let want_x = self.wants(x);
        let want_k = self.wants(k);
        if !want_x && !want_k {
            return;
        }
        let mut dk = vec![0.0; f * ckk];
        let mut dx = vec![0.0; if want_x { b * c * hw } else { 0 }];
        let mut col = vec![0.0; ckk * hw];
        let mut dcol = vec![0.0; ckk * hw];
        let xd = self.value(x).data();
        let kd = self.value(k).data();
        for bi in 0..b {
            let gb = &g[bi * f * hw..(bi + 1) * f * hw];
            if want_k {
                geo.im2col(&xd[bi * c * hw..(bi + 1) * c * hw], &mut col);
                gemm(f, hw, ckk, gb, false, &col, true, &mut dk, 1.0);
            }
            if want_x {
                gemm(ckk, f, hw, kd, true, gb, false, &mut dcol, 0.0);
                geo.col2im(&dcol, &mut dx[bi * c * hw..(bi + 1) * c * hw]);
            }
        }
        if want_k {
            self.accumulate(k, dk);
        }
        if want_x {
            self.accumulate(x, dx);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn batchnorm_backward(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: &[f64],
        inv_std: &[f64],
        training: bool,
        g: &[f64],
    ) {
        let shape = self.shape(x).to_vec();
        let (b, c) = (shape[0], shape[1]);
        let s: usize = shape[2..].iter().product();
        let n = (b * s) as f64;
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for bi in 0..b {
            for ci in 0..c {
                let o = (bi * c + ci) * s;
                for j in o..o + s {
                    dgamma[ci] += g[j] * xhat[j];
                    dbeta[ci] += g[j];
                }
            }
        }
        if self.wants(x) {
            let gd = self.value(gamma).data().to_vec();
            let mut dx = vec![0.0; g.len()];
            for bi in 0..b {
                for ci in 0..c {
                    let o = (bi * c + ci) * s;
                    for j in o..o + s {
                        dx[j] = if training {
                            gd[ci] * inv_std[ci] / n * (n * g[j] - dbeta[ci] - xhat[j] * dgamma[ci])
                        } else {
                            gd[ci] * inv_std[ci] * g[j]
                        };
                    }
                }
            }
            self.accumulate(x, dx);
        }
        self.accumulate(gamma, dgamma);
        self.accumulate(beta, dbeta);
    }
}

fn zip(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn permute_data(data: &[f64], shape: &[usize], axes: &[usize]) -> Vec<f64> {
    let rank = shape.len();
    let mut strides = vec![1; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| strides[a]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    for _ in 0..data.len() {
        let off: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        out.push(data[off]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

struct ConvGeometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
}

impl ConvGeometry {
    /// Unfolds one image `C×H×W` into `(C·kh·kw)×(H·W)` with zero padding.
    fn im2col(&self, img: &[f64], col: &mut [f64]) {
        let (h, w) = (self.h, self.w);
        let (ph, pw) = (self.kh / 2, self.kw / 2);
        let hw = h * w;
        for ci in 0..self.c {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = ((ci * self.kh + ki) * self.kw + kj) * hw;
                    let dst = &mut col[row..row + hw];
                    for i in 0..h {
                        let si = i as isize + ki as isize - ph as isize;
                        let drow = &mut dst[i * w..(i + 1) * w];
                        if si < 0 || si >= h as isize {
                            drow.fill(0.0);
                            continue;
                        }
                        let srow = &img[ci * hw + si as usize * w..ci * hw + (si as usize + 1) * w];
                        let shift = kj as isize - pw as isize;
                        for (j, d) in drow.iter_mut().enumerate() {
                            let sj = j as isize + shift;
                            *d = if sj < 0 || sj >= w as isize { 0.0 } else { srow[sj as usize] };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`ConvGeometry::im2col`], accumulating into `img`.
    fn col2im(&self, col: &[f64], img: &mut [f64]) {
        let (h, w) = (self.h, self.w);
        let (ph, pw) = (self.kh / 2, self.kw / 2);
        let hw = h * w;
        for ci in 0..self.c {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = ((ci * self.kh + ki) * self.kw + kj) * hw;
                    let src = &col[row..row + hw];
                    for i in 0..h {
                        let si = i as isize + ki as isize - ph as isize;
                        if si < 0 || si >= h as isize {
                            continue;
                        }
                        let base = ci * hw + si as usize * w;
                        let shift = kj as isize - pw as isize;
                        for j in 0..w {
                            let sj = j as isize + shift;
                            if sj >= 0 && sj < w as isize {
                                img[base + sj as usize] += src[i * w + j];
                            }
                        }
                    }
                }
            }
        }
    }
}

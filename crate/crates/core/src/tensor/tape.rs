use super::kernels::{col2im, gemm_a_bt_acc, gemm_acc, gemm_at_b_acc, im2col, ConvGeom};
use super::{conv_out_extent, conv_transpose_out_extent, Parameter, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    /// Subgradient at 0 is 0.
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with batch statistics and update the running estimates.
    Train,
    /// Normalize with the running estimates.
    Eval,
}

/// Per-channel running mean and (unbiased) variance for batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub momentum: f64,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            momentum: 0.1,
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    },
    ConvTranspose2d {
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Activation {
        input: Var,
        kind: Activation,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Upsample {
        input: Var,
        factor: usize,
    },
    Concat {
        inputs: Vec<Var>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        input: Var,
        factor: f64,
    },
    Sum {
        input: Var,
    },
    Mean {
        input: Var,
    },
    BceWithLogits {
        logits: Var,
        target: Vec<f64>,
    },
    L1 {
        pred: Var,
        target: Var,
    },
    WeightedCe {
        logits: Var,
        labels: Vec<usize>,
        weights: Vec<f64>,
        probs: Vec<f64>,
        weight_sum: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run record of a forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Option<Vec<Option<Vec<f64>>>>,
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

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Records a copy of the parameter's current value as a trainable leaf.
    pub fn param(&mut self, p: &Parameter) -> Var {
        self.leaf(p.value.clone(), true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of `v` after [`Tape::backward`]; `None` if `v`
    /// does not require grad or the loss does not depend on it.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let data = self.grads.as_ref()?.get(v.0)?.as_ref()?;
        Some(Tensor {
            shape: self.nodes[v.0].value.shape.clone(),
            data: data.clone(),
        })
    }

    /// Drops gradients from a previous backward pass so another may run.
    pub fn clear_grads(&mut self) {
        self.grads = None;
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite value produced by {}",
                op_name(&op)
            )));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let [n, cin, h, w] = self.value(input).dims4()?;
        let (cout, k) = conv_weight_dims(self.value(weight), cin, false)?;
        check_bias(self.value(bias), cout)?;
        if stride == 0 {
            return Err(Error::Config("conv2d stride must be positive".into()));
        }
        let (Some(out_h), Some(out_w)) = (conv_out_extent(h, k, stride, pad), conv_out_extent(w, k, stride, pad)) else {
            return Err(Error::Shape(format!("{h}x{w} input with pad {pad} is smaller than kernel {k}")));
        };
        let geom = ConvGeom {
            channels: cin,
            in_h: h,
            in_w: w,
            out_h,
            out_w,
            kernel: k,
            stride,
            pad,
        };
        let (kk, hw) = (geom.col_rows(), geom.col_cols());
        let x = self.value(input).data();
        let wt = self.value(weight).data();
        let b = self.value(bias).data();
        let mut out = vec![0.0; n * cout * hw];
        let mut cols = vec![0.0; kk * hw];
        for s in 0..n {
            im2col(&x[s * cin * h * w..(s + 1) * cin * h * w], &geom, &mut cols);
            let out_s = &mut out[s * cout * hw..(s + 1) * cout * hw];
            for (co, chunk) in out_s.chunks_mut(hw).enumerate() {
                chunk.fill(b[co]);
            }
            gemm_acc(wt, &cols, out_s, cout, kk, hw);
        }
        let value = Tensor::new(vec![n, cout, out_h, out_w], out)?;
        self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            },
            &[input, weight, bias],
        )
    }

    /// Transposed convolution; `weight` is laid out `[Cin, Cout, k, k]` so
    /// that the same tensor used by [`Tape::conv2d`] gives its adjoint.
    pub fn conv_transpose2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let [n, cin, h, w] = self.value(input).dims4()?;
        let (cout, k) = conv_weight_dims(self.value(weight), cin, true)?;
        check_bias(self.value(bias), cout)?;
        if stride == 0 {
            return Err(Error::Config("conv_transpose2d stride must be positive".into()));
        }
        let (Some(out_h), Some(out_w)) = (
            conv_transpose_out_extent(h, k, stride, pad),
            conv_transpose_out_extent(w, k, stride, pad),
        ) else {
            return Err(Error::Shape(format!("transposed conv of {h}x{w} with pad {pad} is empty")));
        };
        let geom = ConvGeom {
            channels: cout,
            in_h: out_h,
            in_w: out_w,
            out_h: h,
            out_w: w,
            kernel: k,
            stride,
            pad,
        };
        let (kk, hw) = (geom.col_rows(), geom.col_cols());
        let x = self.value(input).data();
        let wt = self.value(weight).data();
        let b = self.value(bias).data();
        let plane = out_h * out_w;
        let mut out = vec![0.0; n * cout * plane];
        let mut cols = vec![0.0; kk * hw];
        for s in 0..n {
            cols.fill(0.0);
            gemm_at_b_acc(wt, &x[s * cin * hw..(s + 1) * cin * hw], &mut cols, kk, cin, hw);
            let out_s = &mut out[s * cout * plane..(s + 1) * cout * plane];
            for (co, chunk) in out_s.chunks_mut(plane).enumerate() {
                chunk.fill(b[co]);
            }
            col2im(&cols, &geom, out_s);
        }
        let value = Tensor::new(vec![n, cout, out_h, out_w], out)?;
        self.push(
            value,
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                stride,
                pad,
            },
            &[input, weight, bias],
        )
    }

    pub fn batch_norm2d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats,
        mode: BnMode,
        epsilon: f64,
    ) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4()?;
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).shape() != [c] {
                return Err(Error::Shape(format!(
                    "batch norm {name} must be [{c}], got {:?}",
                    self.value(v).shape()
                )));
            }
        }
        if stats.mean.len() != c || stats.var.len() != c {
            return Err(Error::Shape(format!("running stats must cover {c} channels")));
        }
        let plane = h * w;
        let m = n * plane;
        if mode == BnMode::Train && m < 2 {
            return Err(Error::DegenerateBatch);
        }
        let x = self.value(input).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; c];
        for ch in 0..c {
            let idx = |s: usize| (s * c + ch) * plane;
            let (mean, var) = match mode {
                BnMode::Train => {
                    let mut sum = 0.0;
                    for s in 0..n {
                        sum += x[idx(s)..idx(s) + plane].iter().sum::<f64>();
                    }
                    let mean = sum / m as f64;
                    let mut sq = 0.0;
                    for s in 0..n {
                        sq += x[idx(s)..idx(s) + plane].iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
                    }
                    let var = sq / m as f64;
                    let mom = stats.momentum;
                    stats.mean[ch] = (1.0 - mom) * stats.mean[ch] + mom * mean;
                    stats.var[ch] = (1.0 - mom) * stats.var[ch] + mom * sq / (m - 1) as f64;
                    (mean, var)
                }
                BnMode::Eval => (stats.mean[ch], stats.var[ch]),
            };
            let is = 1.0 / (var + epsilon).sqrt();
            inv_std[ch] = is;
            for s in 0..n {
                for i in idx(s)..idx(s) + plane {
                    let xh = (x[i] - mean) * is;
                    xhat[i] = xh;
                    out[i] = g[ch] * xh + b[ch];
                }
            }
        }
        let value = Tensor::new(vec![n, c, h, w], out)?;
        self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train: mode == BnMode::Train,
            },
            &[input, gamma, beta],
        )
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Result<Var> {
        if let Activation::LeakyRelu(alpha) = kind {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(Error::Config(format!("leaky relu slope must be in (0,1), got {alpha}")));
            }
        }
        let x = self.value(input);
        let data = x.data().iter().map(|&v| activate(kind, v)).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        self.push(value, Op::Activation { input, kind }, &[input])
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        self.activation(input, Activation::Relu)
    }

    pub fn max_pool2d(&mut self, input: Var, kernel: usize, stride: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4()?;
        if kernel == 0 || stride == 0 {
            return Err(Error::Config("max_pool2d kernel and stride must be positive".into()));
        }
        let (Some(oh), Some(ow)) = (conv_out_extent(h, kernel, stride, 0), conv_out_extent(w, kernel, stride, 0)) else {
            return Err(Error::Shape(format!("{h}x{w} input is smaller than pool kernel {kernel}")));
        };
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane_idx in 0..n * c {
            let base = plane_idx * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * stride * w + ox * stride;
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            let i = base + (oy * stride + ky) * w + ox * stride + kx;
                            if x[i] > x[best] {
                                best = i;
                            }
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::new(vec![n, c, oh, ow], out)?;
        self.push(value, Op::MaxPool { input, argmax }, &[input])
    }

    pub fn upsample_nearest(&mut self, input: Var, factor: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4()?;
        if factor == 0 {
            return Err(Error::Config("upsample factor must be positive".into()));
        }
        let (oh, ow) = (h * factor, w * factor);
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        for plane_idx in 0..n * c {
            let base = plane_idx * h * w;
            for oy in 0..oh {
                let row = base + (oy / factor) * w;
                out.extend((0..ow).map(|ox| x[row + ox / factor]));
            }
        }
        let value = Tensor::new(vec![n, c, oh, ow], out)?;
        self.push(value, Op::Upsample { input, factor }, &[input])
    }

    /// Concatenates NCHW tensors along the channel axis.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return Err(Error::Shape("concat needs at least one input".into()));
        };
        let [n, _, h, w] = self.value(first).dims4()?;
        let mut channels = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let [vn, vc, vh, vw] = self.value(v).dims4()?;
            if (vn, vh, vw) != (n, h, w) {
                return Err(Error::Shape(format!(
                    "concat extent mismatch: {:?} vs {:?}",
                    self.value(first).shape(),
                    self.value(v).shape()
                )));
            }
            channels.push(vc);
        }
        let total: usize = channels.iter().sum();
        let plane = h * w;
        let mut out = Vec::with_capacity(n * total * plane);
        for s in 0..n {
            for (&v, &c) in inputs.iter().zip(&channels) {
                out.extend_from_slice(&self.value(v).data()[s * c * plane..(s + 1) * c * plane]);
            }
        }
        let value = Tensor::new(vec![n, total, h, w], out)?;
        self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
            },
            inputs,
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Shape(format!("add of {:?} and {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(value, Op::Add { a, b }, &[a, b])
    }

    /// Elementwise product of equal-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Shape(format!("mul of {:?} and {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(value, Op::Mul { a, b }, &[a, b])
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var> {
        let x = self.value(input);
        let data = x.data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        self.push(value, Op::Scale { input, factor }, &[input])
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let s = self.value(input).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum { input }, &[input])
    }

    pub fn mean(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let s = x.data().iter().sum::<f64>() / x.numel() as f64;
        self.push(Tensor::scalar(s), Op::Mean { input }, &[input])
    }

    /// Mean binary cross-entropy between `sigmoid(logits)` and a constant target.
    pub fn bce_with_logits(&mut self, logits: Var, target: &Tensor) -> Result<Var> {
        let x = self.value(logits);
        if x.shape() != target.shape() {
            return Err(Error::Shape(format!(
                "bce logits {:?} vs target {:?}",
                x.shape(),
                target.shape()
            )));
        }
        let n = x.numel() as f64;
        let loss = x
            .data()
            .iter()
            .zip(target.data())
            .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits {
                logits,
                target: target.data().to_vec(),
            },
            &[logits],
        )
    }

    /// Mean absolute difference.
    pub fn l1(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() {
            return Err(Error::Shape(format!("l1 of {:?} and {:?}", p.shape(), t.shape())));
        }
        let loss = p.data().iter().zip(t.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / p.numel() as f64;
        self.push(Tensor::scalar(loss), Op::L1 { pred, target }, &[pred, target])
    }

    /// Class-weighted softmax cross-entropy over `[N,K,H,W]` logits, divided
    /// by the sum of the weights applied to each pixel.
    pub fn weighted_softmax_ce(&mut self, logits: Var, labels: &[usize], class_weights: &[f64]) -> Result<Var> {
        let [n, k, h, w] = self.value(logits).dims4()?;
        let plane = h * w;
        if labels.len() != n * plane {
            return Err(Error::Shape(format!(
                "{} labels for {n}x{h}x{w} logits",
                labels.len()
            )));
        }
        if class_weights.len() != k {
            return Err(Error::Shape(format!("{} class weights for {k} classes", class_weights.len())));
        }
        if let Some(wt) = class_weights.iter().find(|&&wt| !(wt > 0.0)) {
            return Err(Error::Config(format!("class weights must be positive, got {wt}")));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::LabelRange(format!("class {bad} with K={k}")));
        }
        let z = self.value(logits).data();
        let mut probs = vec![0.0; z.len()];
        let mut total = 0.0;
        let mut weight_sum = 0.0;
        for s in 0..n {
            for p in 0..plane {
                let at = |c: usize| (s * k + c) * plane + p;
                let max = (0..k).map(|c| z[at(c)]).fold(f64::NEG_INFINITY, f64::max);
                let denom: f64 = (0..k).map(|c| (z[at(c)] - max).exp()).sum();
                let lse = max + denom.ln();
                for c in 0..k {
                    probs[at(c)] = (z[at(c)] - max).exp() / denom;
                }
                let y = labels[s * plane + p];
                let wy = class_weights[y];
                total += wy * (lse - z[at(y)]);
                weight_sum += wy;
            }
        }
        self.push(
            Tensor::scalar(total / weight_sum),
            Op::WeightedCe {
                logits,
                labels: labels.to_vec(),
                weights: class_weights.to_vec(),
                probs,
                weight_sum,
            },
            &[logits],
        )
    }

    /// Reverse sweep from a scalar `loss`. Runs at most once per tape unless
    /// [`Tape::clear_grads`] is called in between.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.grads.is_some() {
            return Err(Error::GradientState(
                "backward already ran on this tape; clear gradients first".into(),
            ));
        }
        let root = &self.nodes[loss.0];
        if !root.value.is_scalar() {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            if self.nodes[i].requires_grad {
                self.propagate(i, &g, &mut grads);
                grads[i] = Some(g);
            }
        }
        self.grads = Some(grads);
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            &Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            } => {
                let [n, cin, h, w] = self.value(input).dims4().expect("checked in forward");
                let [_, cout, out_h, out_w] = node.value.dims4().expect("checked in forward");
                let k = self.value(weight).shape()[2];
                let geom = ConvGeom {
                    channels: cin,
                    in_h: h,
                    in_w: w,
                    out_h,
                    out_w,
                    kernel: k,
                    stride,
                    pad,
                };
                let (kk, hw) = (geom.col_rows(), geom.col_cols());
                let x = self.value(input).data();
                let wt = self.value(weight).data();
                let mut gx = self.needs(input).then(|| vec![0.0; x.len()]);
                let mut gw = self.needs(weight).then(|| vec![0.0; wt.len()]);
                let mut gb = self.needs(bias).then(|| vec![0.0; cout]);
                let mut cols = vec![0.0; kk * hw];
                let in_len = cin * h * w;
                for s in 0..n {
                    let g_s = &g[s * cout * hw..(s + 1) * cout * hw];
                    if let Some(gw) = gw.as_mut() {
                        im2col(&x[s * in_len..(s + 1) * in_len], &geom, &mut cols);
                        gemm_a_bt_acc(g_s, &cols, gw, cout, hw, kk);
                    }
                    if let Some(gx) = gx.as_mut() {
                        cols.fill(0.0);
                        gemm_at_b_acc(wt, g_s, &mut cols, kk, cout, hw);
                        col2im(&cols, &geom, &mut gx[s * in_len..(s + 1) * in_len]);
                    }
                    if let Some(gb) = gb.as_mut() {
                        for (co, chunk) in g_s.chunks(hw).enumerate() {
                            gb[co] += chunk.iter().sum::<f64>();
                        }
                    }
                }
                accumulate_opt(grads, input, gx);
                accumulate_opt(grads, weight, gw);
                accumulate_opt(grads, bias, gb);
            }
            &Op::ConvTranspose2d {
                input,
                weight,
                bias,
                stride,
                pad,
            } => {
                let [n, cin, h, w] = self.value(input).dims4().expect("checked in forward");
                let [_, cout, out_h, out_w] = node.value.dims4().expect("checked in forward");
                let k = self.value(weight).shape()[2];
                let geom = ConvGeom {
                    channels: cout,
                    in_h: out_h,
                    in_w: out_w,
                    out_h: h,
                    out_w: w,
                    kernel: k,
                    stride,
                    pad,
                };
                let (kk, hw) = (geom.col_rows(), geom.col_cols());
                let plane = out_h * out_w;
                let x = self.value(input).data();
                let wt = self.value(weight).data();
                let mut gx = self.needs(input).then(|| vec![0.0; x.len()]);
                let mut gw = self.needs(weight).then(|| vec![0.0; wt.len()]);
                let mut gb = self.needs(bias).then(|| vec![0.0; cout]);
                let mut cols = vec![0.0; kk * hw];
                for s in 0..n {
                    let g_s = &g[s * cout * plane..(s + 1) * cout * plane];
                    im2col(g_s, &geom, &mut cols);
                    if let Some(gx) = gx.as_mut() {
                        gemm_acc(wt, &cols, &mut gx[s * cin * hw..(s + 1) * cin * hw], cin, kk, hw);
                    }
                    if let Some(gw) = gw.as_mut() {
                        gemm_a_bt_acc(&x[s * cin * hw..(s + 1) * cin * hw], &cols, gw, cin, hw, kk);
                    }
                    if let Some(gb) = gb.as_mut() {
                        for (co, chunk) in g_s.chunks(plane).enumerate() {
                            gb[co] += chunk.iter().sum::<f64>();
                        }
                    }
                }
                accumulate_opt(grads, input, gx);
                accumulate_opt(grads, weight, gw);
                accumulate_opt(grads, bias, gb);
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let [n, c, h, w] = node.value.dims4().expect("checked in forward");
                let plane = h * w;
                let m = (n * plane) as f64;
                let gam = self.value(*gamma).data();
                let mut gx = self.needs(*input).then(|| vec![0.0; g.len()]);
                let mut gg = vec![0.0; c];
                let mut gbeta = vec![0.0; c];
                for ch in 0..c {
                    let range = |s: usize| (s * c + ch) * plane..(s * c + ch + 1) * plane;
                    let (mut sum_g, mut sum_gx) = (0.0, 0.0);
                    for s in 0..n {
                        for j in range(s) {
                            sum_g += g[j];
                            sum_gx += g[j] * xhat[j];
                        }
                    }
                    gg[ch] = sum_gx;
                    gbeta[ch] = sum_g;
                    if let Some(gx) = gx.as_mut() {
                        let scale = gam[ch] * inv_std[ch];
                        for s in 0..n {
                            for j in range(s) {
                                gx[j] = if *train {
                                    scale / m * (m * g[j] - sum_g - xhat[j] * sum_gx)
                                } else {
                                    scale * g[j]
                                };
                            }
                        }
                    }
                }
                accumulate_opt(grads, *input, gx);
                if self.needs(*gamma) {
                    accumulate(grads, *gamma, gg);
                }
                if self.needs(*beta) {
                    accumulate(grads, *beta, gbeta);
                }
            }
            &Op::Activation { input, kind } => {
                let x = self.value(input).data();
                let y = node.value.data();
                let gx = g
                    .iter()
                    .zip(x.iter().zip(y))
                    .map(|(&gv, (&xv, &yv))| {
                        gv * match kind {
                            Activation::Relu => {
                                if xv > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Activation::LeakyRelu(alpha) => {
                                if xv > 0.0 {
                                    1.0
                                } else {
                                    alpha
                                }
                            }
                            Activation::Tanh => 1.0 - yv * yv,
                            Activation::Sigmoid => yv * (1.0 - yv),
                        }
                    })
                    .collect();
                accumulate(grads, input, gx);
            }
            Op::MaxPool { input, argmax } => {
                let mut gx = vec![0.0; self.value(*input).numel()];
                for (&src, &gv) in argmax.iter().zip(g) {
                    gx[src] += gv;
                }
                accumulate(grads, *input, gx);
            }
            &Op::Upsample { input, factor } => {
                let [n, c, h, w] = self.value(input).dims4().expect("checked in forward");
                let ow = w * factor;
                let mut gx = vec![0.0; n * c * h * w];
                for plane_idx in 0..n * c {
                    let out_base = plane_idx * h * w * factor * factor;
                    for oy in 0..h * factor {
                        let row = plane_idx * h * w + (oy / factor) * w;
                        for ox in 0..ow {
                            gx[row + ox / factor] += g[out_base + oy * ow + ox];
                        }
                    }
                }
                accumulate(grads, input, gx);
            }
            Op::Concat { inputs } => {
                let [n, total, h, w] = node.value.dims4().expect("checked in forward");
                let plane = h * w;
                let mut offset = 0;
                for &v in inputs {
                    let c = self.value(v).shape()[1];
                    if self.needs(v) {
                        let mut gv = Vec::with_capacity(n * c * plane);
                        for s in 0..n {
                            let start = (s * total + offset) * plane;
                            gv.extend_from_slice(&g[start..start + c * plane]);
                        }
                        accumulate(grads, v, gv);
                    }
                    offset += c;
                }
            }
            &Op::Add { a, b } => {
                if self.needs(a) {
                    accumulate(grads, a, g.to_vec());
                }
                if self.needs(b) {
                    accumulate(grads, b, g.to_vec());
                }
            }
            &Op::Mul { a, b } => {
                let (va, vb) = (self.value(a).data(), self.value(b).data());
                if self.needs(a) {
                    accumulate(grads, a, g.iter().zip(vb).map(|(gv, y)| gv * y).collect());
                }
                if self.needs(b) {
                    accumulate(grads, b, g.iter().zip(va).map(|(gv, x)| gv * x).collect());
                }
            }
            &Op::Scale { input, factor } => {
                accumulate(grads, input, g.iter().map(|v| v * factor).collect());
            }
            &Op::Sum { input } => {
                accumulate(grads, input, vec![g[0]; self.value(input).numel()]);
            }
            &Op::Mean { input } => {
                let n = self.value(input).numel();
                accumulate(grads, input, vec![g[0] / n as f64; n]);
            }
            Op::BceWithLogits { logits, target } => {
                let z = self.value(*logits).data();
                let n = z.len() as f64;
                let gx = z
                    .iter()
                    .zip(target)
                    .map(|(&zv, &t)| g[0] * (sigmoid(zv) - t) / n)
                    .collect();
                accumulate(grads, *logits, gx);
            }
            &Op::L1 { pred, target } => {
                let (p, t) = (self.value(pred).data(), self.value(target).data());
                let n = p.len() as f64;
                let sign: Vec<f64> = p
                    .iter()
                    .zip(t)
                    .map(|(a, b)| {
                        let d = a - b;
                        let sign = if d > 0.0 {
                            1.0
                        } else if d < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        g[0] * sign / n
                    })
                    .collect();
                if self.needs(target) {
                    accumulate(grads, target, sign.iter().map(|v| -v).collect());
                }
                if self.needs(pred) {
                    accumulate(grads, pred, sign);
                }
            }
            Op::WeightedCe {
                logits,
                labels,
                weights,
                probs,
                weight_sum,
            } => {
                let [n, k, h, w] = self.value(*logits).dims4().expect("checked in forward");
                let plane = h * w;
                let mut gx = vec![0.0; probs.len()];
                for s in 0..n {
                    for p in 0..plane {
                        let y = labels[s * plane + p];
                        let scale = g[0] * weights[y] / weight_sum;
                        for c in 0..k {
                            let at = (s * k + c) * plane + p;
                            let onehot = if c == y { 1.0 } else { 0.0 };
                            gx[at] = scale * (probs[at] - onehot);
                        }
                    }
                }
                accumulate(grads, *logits, gx);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, contribution: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contribution) {
                *e += c;
            }
        }
        slot @ None => *slot = Some(contribution),
    }
}

fn accumulate_opt(grads: &mut [Option<Vec<f64>>], v: Var, contribution: Option<Vec<f64>>) {
    if let Some(c) = contribution {
        accumulate(grads, v, c);
    }
}

fn conv_weight_dims(weight: &Tensor, cin: usize, transposed: bool) -> Result<(usize, usize)> {
    let [a, b, kh, kw] = weight.dims4()?;
    let (w_in, w_out) = if transposed { (a, b) } else { (b, a) };
    if w_in != cin || kh != kw {
        return Err(Error::Shape(format!(
            "weight {:?} does not fit {cin} input channels with a square kernel",
            weight.shape()
        )));
    }
    Ok((w_out, kh))
}

fn check_bias(bias: &Tensor, cout: usize) -> Result<()> {
    if bias.shape() != [cout] {
        return Err(Error::Shape(format!("bias must be [{cout}], got {:?}", bias.shape())));
    }
    Ok(())
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn activate(kind: Activation, x: f64) -> f64 {
    match kind {
        Activation::Relu => {
            if x > 0.0 {
                x
            } else {
                0.0
            }
        }
        Activation::LeakyRelu(alpha) => {
            if x > 0.0 {
                x
            } else {
                alpha * x
            }
        }
        Activation::Tanh => x.tanh(),
        Activation::Sigmoid => sigmoid(x),
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Conv2d { .. } => "conv2d",
        Op::ConvTranspose2d { .. } => "conv_transpose2d",
        Op::BatchNorm { .. } => "batch_norm2d",
        Op::Activation { .. } => "activation",
        Op::MaxPool { .. } => "max_pool2d",
        Op::Upsample { .. } => "upsample_nearest",
        Op::Concat { .. } => "concat_channels",
        Op::Add { .. } => "add",
        Op::Mul { .. } => "mul",
        Op::Scale { .. } => "scale",
        Op::Sum { .. } => "sum",
        Op::Mean { .. } => "mean",
        Op::BceWithLogits { .. } => "bce_with_logits",
        Op::L1 { .. } => "l1",
        Op::WeightedCe { .. } => "weighted_softmax_ce",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn t4(shape: [usize; 4], data: Vec<f64>) -> Tensor {
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    fn bcast_zero(c: usize) -> Tensor {
        Tensor::zeros(&[c])
    }

    #[test]
    fn conv2d_output_extent() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 3, 256, 256]));
        let w = tape.constant(Tensor::zeros(&[8, 3, 4, 4]));
        let b = tape.constant(bcast_zero(8));
        let y = tape.conv2d(x, w, b, 2, 1).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 8, 128, 128]);
    }

    #[test]
    fn conv2d_zero_weight_gives_zero() {
        let mut rng = seeded(1);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::randn(&[2, 3, 9, 9], 1.0, &mut rng));
        let w = tape.constant(Tensor::zeros(&[4, 3, 3, 3]));
        let b = tape.constant(bcast_zero(4));
        let y = tape.conv2d(x, w, b, 1, 1).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv2d_errors() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 2, 5, 5]));
        let w = tape.constant(Tensor::zeros(&[1, 3, 3, 3]));
        let b = tape.constant(bcast_zero(1));
        assert!(matches!(tape.conv2d(x, w, b, 1, 0), Err(Error::Shape(_))));
        let w = tape.constant(Tensor::zeros(&[1, 2, 3, 3]));
        assert!(matches!(tape.conv2d(x, w, b, 0, 0), Err(Error::Config(_))));
        let w = tape.constant(Tensor::zeros(&[1, 2, 7, 7]));
        assert!(matches!(tape.conv2d(x, w, b, 1, 0), Err(Error::Shape(_))));
    }

    #[test]
    fn conv_transpose_extent_and_zero_input() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 1, 128, 128]));
        let w = tape.constant(Tensor::full(&[1, 2, 4, 4], 0.3));
        let b = tape.constant(Tensor::new(vec![2], vec![0.5, -1.5]).unwrap());
        let y = tape.conv_transpose2d(x, w, b, 2, 1).unwrap();
        let out = tape.value(y);
        assert_eq!(out.shape(), &[1, 2, 256, 256]);
        let plane = 256 * 256;
        assert!(out.data()[..plane].iter().all(|&v| v == 0.5));
        assert!(out.data()[plane..].iter().all(|&v| v == -1.5));
    }

    #[test]
    fn batch_norm_normalizes_in_train_mode() {
        let mut rng = seeded(2);
        let mut tape = Tape::new();
        let mut x = Tensor::randn(&[3, 2, 4, 5], 2.0, &mut rng);
        for v in x.data_mut() {
            *v += 7.0;
        }
        let x = tape.constant(x);
        let g = tape.constant(Tensor::full(&[2], 1.0));
        let b = tape.constant(Tensor::zeros(&[2]));
        let mut stats = RunningStats::new(2);
        let y = tape.batch_norm2d(x, g, b, &mut stats, BnMode::Train, 1e-12).unwrap();
        let out = tape.value(y).data();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..3).flat_map(|s| out[(s * 2 + ch) * 20..(s * 2 + ch + 1) * 20].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-9, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-9, "var {var}");
        }
        // running mean moved 10% of the way from 0 toward ~7
        assert!(stats.mean.iter().all(|&m| m > 0.5 && m < 0.9));
    }

    #[test]
    fn batch_norm_zero_gamma_gives_beta() {
        let mut rng = seeded(3);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::randn(&[2, 2, 3, 3], 1.0, &mut rng));
        let g = tape.constant(Tensor::zeros(&[2]));
        let b = tape.constant(Tensor::new(vec![2], vec![0.25, -2.0]).unwrap());
        let mut stats = RunningStats::new(2);
        let y = tape.batch_norm2d(x, g, b, &mut stats, BnMode::Train, 1e-5).unwrap();
        let out = tape.value(y).data();
        for s in 0..2 {
            assert!(out[s * 18..s * 18 + 9].iter().all(|&v| v == 0.25));
            assert!(out[s * 18 + 9..s * 18 + 18].iter().all(|&v| v == -2.0));
        }
    }

    #[test]
    fn batch_norm_degenerate_batch() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 4, 1, 1]));
        let g = tape.constant(Tensor::full(&[4], 1.0));
        let b = tape.constant(Tensor::zeros(&[4]));
        let mut stats = RunningStats::new(4);
        assert!(matches!(
            tape.batch_norm2d(x, g, b, &mut stats, BnMode::Train, 1e-5),
            Err(Error::DegenerateBatch)
        ));
        assert!(tape.batch_norm2d(x, g, b, &mut stats, BnMode::Eval, 1e-5).is_ok());
    }

    #[test]
    fn activations_pointwise() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![3], vec![-2.0, 0.0, 3.0]).unwrap());
        let r = tape.relu(x).unwrap();
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 3.0]);
        let s = tape.activation(x, Activation::Sigmoid).unwrap();
        assert_eq!(tape.value(s).data()[1], 0.5);
        assert!(matches!(
            tape.activation(x, Activation::LeakyRelu(1.5)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![2], vec![0.0, 1.0]).unwrap(), true);
        let r = tape.relu(x).unwrap();
        let s = tape.sum(r).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn max_pool_and_concat_shapes() {
        let mut tape = Tape::new();
        let x = tape.constant(t4([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let p = tape.max_pool2d(x, 2, 2).unwrap();
        assert_eq!(tape.value(p).data(), &[4.0]);

        let a = tape.constant(Tensor::zeros(&[1, 3, 4, 4]));
        let b = tape.constant(Tensor::zeros(&[1, 1, 4, 4]));
        let c = tape.concat_channels(&[a, b]).unwrap();
        assert_eq!(tape.value(c).shape(), &[1, 4, 4, 4]);
        let d = tape.constant(Tensor::zeros(&[1, 1, 4, 5]));
        assert!(matches!(tape.concat_channels(&[a, d]), Err(Error::Shape(_))));
    }

    #[test]
    fn upsample_then_pool_round_trips() {
        let mut rng = seeded(4);
        let mut tape = Tape::new();
        let orig = Tensor::randn(&[1, 2, 8, 8], 1.0, &mut rng);
        let x = tape.constant(orig.clone());
        let u = tape.upsample_nearest(x, 2).unwrap();
        let p = tape.max_pool2d(u, 2, 2).unwrap();
        assert_eq!(tape.value(p), &orig);
    }

    #[test]
    fn loss_values() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![4], vec![0.3, -1.0, 2.0, 0.0]).unwrap());
        let l = tape.l1(x, x).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);

        let z = tape.constant(Tensor::scalar(0.0));
        let b = tape.bce_with_logits(z, &Tensor::scalar(1.0)).unwrap();
        assert!((tape.value(b).item() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn weighted_ce_uniform_logits_is_ln2() {
        // per-pixel loss is ln 2 everywhere, so the weighted mean is too
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::zeros(&[1, 2, 2, 2]));
        let ce = tape.weighted_softmax_ce(z, &[0, 1, 1, 0], &[0.674, 1.933]).unwrap();
        assert!((tape.value(ce).item() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(matches!(
            tape.weighted_softmax_ce(z, &[0, 2, 1, 0], &[1.0, 1.0]),
            Err(Error::LabelRange(_))
        ));
    }

    #[test]
    fn weighted_ce_matches_hand_computation() {
        // 2x2 map, K=2: logits chosen per pixel, hand-evaluated below
        let logits = vec![
            // class 0 plane
            1.0, 0.0, -1.0, 2.0, //
            // class 1 plane
            0.0, 0.5, 1.0, -1.0,
        ];
        let labels = [0usize, 1, 1, 0];
        let weights = [0.674, 1.933];
        let per_pixel = |z0: f64, z1: f64, y: usize| {
            let lse = (z0.exp() + z1.exp()).ln();
            lse - if y == 0 { z0 } else { z1 }
        };
        let mut num = 0.0;
        let mut den = 0.0;
        for p in 0..4 {
            let w = weights[labels[p]];
            num += w * per_pixel(logits[p], logits[4 + p], labels[p]);
            den += w;
        }
        let mut tape = Tape::new();
        let z = tape.constant(t4([1, 2, 2, 2], logits));
        let ce = tape.weighted_softmax_ce(z, &labels, &weights).unwrap();
        assert!((tape.value(ce).item() - num / den).abs() < 1e-14);
    }

    #[test]
    fn sum_gives_unit_gradient() {
        let mut rng = seeded(5);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::randn(&[2, 3], 1.0, &mut rng), true);
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert!(tape.grad(x).unwrap().data().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn backward_state_errors() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2, 2]), true);
        let y = tape.scale(x, 2.0).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::Shape(_))));
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        assert!(matches!(tape.backward(s), Err(Error::GradientState(_))));
        tape.clear_grads();
        assert!(tape.backward(s).is_ok());
    }

    #[test]
    fn forward_rejects_non_finite() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(f64::MAX));
        assert!(matches!(tape.scale(x, 10.0), Err(Error::Numerical(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0), true);
        let c = tape.constant(Tensor::scalar(1.0));
        let l = tape.l1(x, c).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap().item(), 1.0);
        assert!(tape.grad(c).is_none());
    }
}

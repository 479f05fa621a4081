use crate::gemm::gemm;
use crate::kernels::{self, ConvGeom};
use crate::{Real, Result, Tensor, TensorError};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

impl Activation {
    /// Leaky ReLU with the DCGAN slope of 0.2.
    pub const LEAKY: Activation = Activation::LeakyRelu(0.2);
}

/// How batch normalization picks its statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    /// Batch statistics; `track` folds them into the running averages.
    Train { track: bool },
    /// Running statistics.
    Eval,
}

/// Probabilities are clamped to `[BCE_EPS, 1 − BCE_EPS]` inside [`Tape::bce`].
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Matmul(Var, Var),
    AddBias { x: Var, bias: Var },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Conv2d { x: Var, w: Var, bias: Option<Var>, geom: ConvGeom },
    ConvTranspose2d { x: Var, w: Var, bias: Option<Var>, geom: ConvGeom },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, batch_stats: bool },
    Act(Var, Activation),
    Softmax(Var),
    CrossEntropy { logits: Var, labels: Vec<usize>, weights: Option<Vec<f64>>, probs: Vec<T> },
    Bce { input: Var, targets: Vec<f64>, from_logits: bool },
    ConcatChannels(Var, Var),
    SelectRows { x: Var, rows: Vec<usize> },
    GlobalAvgPool(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Linear record of the operations of one forward pass.
///
/// Nodes are appended in execution order, so every node's inputs precede it.
/// [`Tape::backward`] walks the nodes from the loss down to the first node,
/// visiting each once, and adds the resulting gradients into per-node
/// accumulators that persist until [`Tape::zero_grad`].
#[derive(Debug)]
pub struct Tape<T = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }
}

impl Tape {
    /// Empty production-precision tape; generic code uses `Tape::default()`.
    pub fn new() -> Self {
        Self::default()
    }
}

impl<T: Real> Tape<T> {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, mut value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        value.requires_grad = requires_grad;
        value.grad = None;
        self.nodes.push(Node { value, op });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].value.requires_grad)
    }

    /// Records an input tensor. Its stored gradient, if any, is dropped.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Records a copy of `var`'s value with no gradient path back to it.
    pub fn detach(&mut self, var: Var) -> Var {
        let value = self.nodes[var.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].value.requires_grad
    }

    /// Accumulated gradient of the last backward passes, if any reached `var`.
    pub fn grad(&self, var: Var) -> Option<&[T]> {
        self.grads[var.0].as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    /// Hash of the sign pattern feeding every ReLU / leaky ReLU on the tape.
    ///
    /// Two forward passes with equal patterns took the same branch at every
    /// kink, which finite-difference checks use to discard probes that
    /// straddle one.
    pub fn kink_pattern(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for node in &self.nodes {
            if let Op::Act(x, Activation::Relu | Activation::LeakyRelu(_)) = node.op {
                for &v in self.nodes[x.0].value.data() {
                    h = (h ^ (v > T::zero()) as u64).wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    // ----------------------------------------------------------------- linear

    /// `[M,K] × [K,N] → [M,N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::mismatch("matmul", format!("{sa:?} × {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        gemm(m, k, n, T::one(), va, (k, 1), vb, (n, 1), T::zero(), &mut out, (n, 1));
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, rg, Op::Matmul(a, b)))
    }

    /// Adds `bias[c]` along dimension 1 of a rank ≥ 2 tensor.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 || self.shape(bias) != [shape[1]] {
            return Err(TensorError::mismatch("add_bias", format!("{shape:?} + {:?}", self.shape(bias))));
        }
        let spatial = shape[2..].iter().product();
        let mut out = self.value(x).data().to_vec();
        kernels::add_channel_bias(&mut out, self.value(bias).data(), spatial);
        let rg = self.any_grad(&[x, bias]);
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::AddBias { x, bias }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let rg = self.any_grad(&[a, b]);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::Add(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let rg = self.any_grad(&[a, b]);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let v = self.value(x);
        let f = T::of(factor);
        let out = v.data().iter().map(|&e| e * f).collect();
        let t = Tensor::new(v.shape().to_vec(), out).expect("same shape");
        let rg = self.any_grad(&[x]);
        self.push(t, rg, Op::Scale(x, factor))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().map(|v| v.f64()).sum::<f64>();
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(T::of(s)), rg, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.value(x).data();
        let s = d.iter().map(|v| v.f64()).sum::<f64>() / d.len().max(1) as f64;
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(T::of(s)), rg, Op::Mean(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(t, rg, Op::Reshape(x)))
    }

    // ----------------------------------------------------------- convolution

    /// Cross-correlation of `x: [N,Cin,H,W]` with `w: [Cout,Cin,kh,kw]`,
    /// zero padding, optional `bias: [Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] {
            return Err(TensorError::mismatch("conv2d", format!("input {xs:?}, weight {ws:?}")));
        }
        self.check_bias("conv2d", bias, ws[0])?;
        let geom = ConvGeom::conv((xs[1], xs[2], xs[3]), (ws[0], ws[2], ws[3]), stride, pad)?;
        let n = xs[0];
        let mut out = vec![T::zero(); n * geom.out_len()];
        kernels::conv_forward(self.value(x).data(), self.value(w).data(), &geom, n, &mut out);
        if let Some(b) = bias {
            kernels::add_channel_bias(&mut out, self.value(b).data(), geom.out_pixels());
        }
        let rg = self.any_grad(&[x, w]) || bias.is_some_and(|b| self.requires_grad(b));
        let t = Tensor::new(vec![n, geom.cout, geom.oh, geom.ow], out)?;
        Ok(self.push(t, rg, Op::Conv2d { x, w, bias, geom }))
    }

    /// Transposed convolution of `x: [N,Cin,H,W]` with `w: [Cin,Cout,kh,kw]`;
    /// output side `(H−1)·stride − 2·pad + kh`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[0] {
            return Err(TensorError::mismatch("conv_transpose2d", format!("input {xs:?}, weight {ws:?}")));
        }
        self.check_bias("conv_transpose2d", bias, ws[1])?;
        let geom = ConvGeom::transpose((xs[1], xs[2], xs[3]), (ws[1], ws[2], ws[3]), stride, pad)?;
        let n = xs[0];
        let mut out = vec![T::zero(); n * geom.in_len()];
        kernels::conv_backward_data(self.value(x).data(), self.value(w).data(), &geom, n, &mut out);
        if let Some(b) = bias {
            kernels::add_channel_bias(&mut out, self.value(b).data(), geom.h * geom.w);
        }
        let rg = self.any_grad(&[x, w]) || bias.is_some_and(|b| self.requires_grad(b));
        let t = Tensor::new(vec![n, geom.cin, geom.h, geom.w], out)?;
        Ok(self.push(t, rg, Op::ConvTranspose2d { x, w, bias, geom }))
    }

    fn check_bias(&self, op: &'static str, bias: Option<Var>, channels: usize) -> Result<()> {
        match bias {
            Some(b) if self.shape(b) != [channels] => {
                Err(TensorError::mismatch(op, format!("bias {:?} for {channels} channels", self.shape(b))))
            }
            _ => Ok(()),
        }
    }

    // --------------------------------------------------------- normalization

    /// Per-channel batch normalization of `x: [N,C,H,W]` followed by
    /// `gamma·x̂ + beta`. Running statistics are updated as
    /// `r ← (1−momentum)·r + momentum·batch` when tracking; the running
    /// variance uses the unbiased batch variance.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &mut Tensor<T>,
        running_var: &mut Tensor<T>,
        mode: NormMode,
        momentum: f64,
        eps: f64,
    ) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 4 {
            return Err(TensorError::mismatch("batch_norm", format!("expected [N,C,H,W], got {shape:?}")));
        }
        let (n, c, spatial) = (shape[0], shape[1], shape[2] * shape[3]);
        for (name, len) in [
            ("gamma", self.shape(gamma).iter().product::<usize>()),
            ("beta", self.shape(beta).iter().product()),
            ("running mean", running_mean.numel()),
            ("running var", running_var.numel()),
        ] {
            if len != c {
                return Err(TensorError::mismatch("batch_norm", format!("{name} has {len} entries for {c} channels")));
            }
        }
        let count = n * spatial;
        let xd = self.value(x).data();
        let (mean, var, batch_stats) = match mode {
            NormMode::Train { track } => {
                if count == 0 {
                    return Err(TensorError::mismatch("batch_norm", "train mode needs N·H·W ≥ 1"));
                }
                let mut mean = vec![0.0f64; c];
                let mut var = vec![0.0f64; c];
                for (i, chunk) in xd.chunks(spatial).enumerate() {
                    mean[i % c] += chunk.iter().map(|v| v.f64()).sum::<f64>();
                }
                mean.iter_mut().for_each(|m| *m /= count as f64);
                for (i, chunk) in xd.chunks(spatial).enumerate() {
                    let m = mean[i % c];
                    var[i % c] += chunk.iter().map(|v| (v.f64() - m).powi(2)).sum::<f64>();
                }
                var.iter_mut().for_each(|v| *v /= count as f64);
                if track {
                    let unbias = if count > 1 { count as f64 / (count - 1) as f64 } else { 1.0 };
                    for ch in 0..c {
                        let rm = &mut running_mean.data_mut()[ch];
                        *rm = T::of((1.0 - momentum) * rm.f64() + momentum * mean[ch]);
                        let rv = &mut running_var.data_mut()[ch];
                        *rv = T::of((1.0 - momentum) * rv.f64() + momentum * var[ch] * unbias);
                    }
                }
                (mean, var, true)
            }
            NormMode::Eval => (
                running_mean.data().iter().map(|v| v.f64()).collect(),
                running_var.data().iter().map(|v| v.f64()).collect(),
                false,
            ),
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::of(1.0 / (v + eps).sqrt())).collect();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        for (i, (chunk, (hat, o))) in xd
            .chunks(spatial)
            .zip(xhat.chunks_mut(spatial).zip(out.chunks_mut(spatial)))
            .enumerate()
        {
            let ch = i % c;
            // Centre in f64 so a large shift does not leak through the rounded mean.
            let (m, s) = (mean[ch], inv_std[ch].f64());
            for ((&v, h), y) in chunk.iter().zip(hat.iter_mut()).zip(o.iter_mut()) {
                *h = T::of((v.f64() - m) * s);
                *y = g[ch] * *h + b[ch];
            }
        }
        let rg = self.any_grad(&[x, gamma, beta]);
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, rg, Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats }))
    }

    // ------------------------------------------------------------ elementwise

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let v = self.value(x);
        let zero = T::zero();
        let out: Vec<T> = match kind {
            Activation::Relu => v.data().iter().map(|&e| e.max(zero)).collect(),
            Activation::LeakyRelu(slope) => {
                let s = T::of(slope);
                v.data().iter().map(|&e| if e > zero { e } else { e * s }).collect()
            }
            Activation::Tanh => v.data().iter().map(|e| e.tanh()).collect(),
            Activation::Sigmoid => v.data().iter().map(|&e| sigmoid(e)).collect(),
        };
        let t = Tensor::new(v.shape().to_vec(), out).expect("same shape");
        let rg = self.any_grad(&[x]);
        self.push(t, rg, Op::Act(x, kind))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.activation(x, Activation::LeakyRelu(slope))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    // ---------------------------------------------------------- probability

    /// Row-wise softmax of `[N,K]` logits (max-subtracted).
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 || shape[1] < 2 {
            return Err(TensorError::mismatch("softmax", format!("expected [N,K≥2], got {shape:?}")));
        }
        let out = softmax_rows(self.value(x).data(), shape[1]);
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::Softmax(x)))
    }

    /// Mean over rows of `w_i · (−log softmax(logits_i)[label_i])`.
    ///
    /// An empty batch yields exactly zero and contributes no gradient.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize], weights: Option<&[f64]>) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(TensorError::mismatch(
                "cross_entropy",
                format!("logits {shape:?} with {} labels", labels.len()),
            ));
        }
        let (n, k) = (shape[0], shape[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(TensorError::InvalidLabel { label: bad, classes: k });
        }
        if let Some(w) = weights {
            if w.len() != n {
                return Err(TensorError::mismatch("cross_entropy", format!("{} weights for {n} rows", w.len())));
            }
            if w.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                return Err(TensorError::Contract("cross_entropy weights must be finite and nonnegative".into()));
            }
        }
        let data = self.value(logits).data();
        let mut total = 0.0f64;
        for (i, row) in data.chunks(k.max(1)).take(n).enumerate() {
            let max = row.iter().fold(f64::NEG_INFINITY, |a, b| a.max(b.f64()));
            let lse = max + row.iter().map(|v| (v.f64() - max).exp()).sum::<f64>().ln();
            let w = weights.map_or(1.0, |w| w[i]);
            total += w * (lse - row[labels[i]].f64());
        }
        let loss = if n == 0 { 0.0 } else { total / n as f64 };
        let probs = softmax_rows(data, k);
        let rg = self.any_grad(&[logits]);
        let op = Op::CrossEntropy {
            logits,
            labels: labels.to_vec(),
            weights: weights.map(<[f64]>::to_vec),
            probs,
        };
        Ok(self.push(Tensor::scalar(T::of(loss)), rg, op))
    }

    /// Mean binary cross-entropy of probabilities against targets in `[0,1]`.
    ///
    /// When `prob` is the output of a sigmoid, the loss is evaluated on the
    /// pre-sigmoid logits in the log-sum-exp form and the gradient flows to
    /// the logits directly. Either way probabilities are clamped to
    /// `[1e-7, 1 − 1e-7]`; the gradient is passed straight through the clamp.
    pub fn bce(&mut self, prob: Var, targets: &[f64]) -> Result<Var> {
        let n = self.value(prob).numel();
        if targets.len() != n {
            return Err(TensorError::mismatch("bce", format!("{} targets for {n} predictions", targets.len())));
        }
        let (input, from_logits) = match self.nodes[prob.0].op {
            Op::Act(logits, Activation::Sigmoid) => (logits, true),
            _ => (prob, false),
        };
        let data = self.value(input).data();
        let mut total = 0.0f64;
        for (v, &y) in data.iter().zip(targets) {
            total += if from_logits {
                let l = clamp_logit(v.f64());
                l.max(0.0) - l * y + (-l.abs()).exp().ln_1p()
            } else {
                let p = v.f64().clamp(BCE_EPS, 1.0 - BCE_EPS);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            };
        }
        let loss = if n == 0 { 0.0 } else { total / n as f64 };
        let rg = self.any_grad(&[input]);
        let op = Op::Bce { input, targets: targets.to_vec(), from_logits };
        Ok(self.push(Tensor::scalar(T::of(loss)), rg, op))
    }

    // ------------------------------------------------------------- reshaping

    /// Concatenates two `[N,·,H,W]` tensors along the channel dimension.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 4 || sb.len() != 4 || sa[0] != sb[0] || sa[2..] != sb[2..] {
            return Err(TensorError::mismatch("concat_channels", format!("{sa:?} with {sb:?}")));
        }
        let (la, lb) = (sa[1] * sa[2] * sa[3], sb[1] * sb[2] * sb[3]);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(da.len() + db.len());
        for i in 0..sa[0] {
            out.extend_from_slice(&da[i * la..(i + 1) * la]);
            out.extend_from_slice(&db[i * lb..(i + 1) * lb]);
        }
        let rg = self.any_grad(&[a, b]);
        let t = Tensor::new(vec![sa[0], sa[1] + sb[1], sa[2], sa[3]], out)?;
        Ok(self.push(t, rg, Op::ConcatChannels(a, b)))
    }

    /// Gathers rows of the leading dimension (repeats allowed, may be empty).
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let v = self.value(x);
        let lead = v.shape().first().copied().unwrap_or(0);
        if let Some(&r) = rows.iter().find(|&&r| r >= lead) {
            return Err(TensorError::mismatch("select_rows", format!("row {r} of {lead}")));
        }
        let t = v.gather_rows(rows);
        let rg = self.any_grad(&[x]);
        Ok(self.push(t, rg, Op::SelectRows { x, rows: rows.to_vec() }))
    }

    /// `[N,C,H,W] → [N,C]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(TensorError::mismatch("global_avg_pool", format!("expected [N,C,H,W], got {s:?}")));
        }
        let spatial = s[2] * s[3];
        let out = self
            .value(x)
            .data()
            .chunks(spatial)
            .map(|c| T::of(c.iter().map(|v| v.f64()).sum::<f64>() / spatial as f64))
            .collect();
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::new(vec![s[0], s[1]], out)?, rg, Op::GlobalAvgPool(x)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::mismatch(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    // --------------------------------------------------------------- backward

    /// Back-propagates from a single-element `loss`, adding into the
    /// gradient of every node that requires one.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(TensorError::Contract(format!("variable {} is not on this tape", loss.0)));
        }
        let value = &self.nodes[loss.0].value;
        if value.numel() != 1 {
            return Err(TensorError::NonScalarLoss(value.shape().to_vec()));
        }
        if !value.requires_grad {
            return Ok(());
        }
        let mut pending: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        pending[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = pending[i].take() else { continue };
            if !self.nodes[i].value.requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut pending);
            match &mut self.grads[i] {
                Some(acc) => add_into(acc, &g),
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], pending: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| nodes[v.0].value.data();
        let shp = |v: Var| nodes[v.0].value.shape();
        // Runs `f` on the pending gradient buffer of `v` when it needs one.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            let node = &nodes[v.0].value;
            if node.requires_grad {
                let buf = pending[v.0].get_or_insert_with(|| vec![T::zero(); node.numel()]);
                f(buf);
            }
        };
        let (zero, one) = (T::zero(), T::one());
        let out = &nodes[i].value;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (m, k, n) = (shp(*a)[0], shp(*a)[1], shp(*b)[1]);
                acc(*a, &mut |da| gemm(m, n, k, one, g, (n, 1), val(*b), (1, n), one, da, (k, 1)));
                acc(*b, &mut |db| gemm(k, m, n, one, val(*a), (1, k), g, (n, 1), one, db, (n, 1)));
            }
            Op::AddBias { x, bias } => {
                acc(*x, &mut |dx| add_into(dx, g));
                let s = shp(*x);
                let spatial = s[2..].iter().product();
                acc(*bias, &mut |db| kernels::channel_sums(g, s[1], spatial, db));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |da| add_into(da, g));
                acc(*b, &mut |db| add_into(db, g));
            }
            Op::Mul(a, b) => {
                acc(*a, &mut |da| da.iter_mut().zip(g).zip(val(*b)).for_each(|((d, &g), &y)| *d += g * y));
                acc(*b, &mut |db| db.iter_mut().zip(g).zip(val(*a)).for_each(|((d, &g), &x)| *d += g * x));
            }
            Op::Scale(x, f) => {
                let f = T::of(*f);
                acc(*x, &mut |dx| dx.iter_mut().zip(g).for_each(|(d, &g)| *d += g * f));
            }
            Op::Sum(x) => acc(*x, &mut |dx| dx.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(x) => {
                let share = T::of(g[0].f64() / val(*x).len().max(1) as f64);
                acc(*x, &mut |dx| dx.iter_mut().for_each(|d| *d += share));
            }
            Op::Reshape(x) => acc(*x, &mut |dx| add_into(dx, g)),
            Op::Conv2d { x, w, bias, geom } => {
                let n = shp(*x)[0];
                acc(*x, &mut |dx| kernels::conv_backward_data(g, val(*w), geom, n, dx));
                acc(*w, &mut |dw| kernels::conv_backward_weight(g, val(*x), geom, n, dw));
                if let Some(b) = bias {
                    acc(*b, &mut |db| kernels::channel_sums(g, geom.cout, geom.out_pixels(), db));
                }
            }
            Op::ConvTranspose2d { x, w, bias, geom } => {
                let n = shp(*x)[0];
                // Conv view: the op's output is the view's input and vice versa.
                acc(*x, &mut |dx| {
                    let mut tmp = vec![zero; dx.len()];
                    kernels::conv_forward(g, val(*w), geom, n, &mut tmp);
                    add_into(dx, &tmp);
                });
                acc(*w, &mut |dw| kernels::conv_backward_weight(val(*x), g, geom, n, dw));
                if let Some(b) = bias {
                    acc(*b, &mut |db| kernels::channel_sums(g, geom.cin, geom.h * geom.w, db));
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats } => {
                let s = shp(*x);
                let (c, spatial) = (s[1], s[2] * s[3]);
                let count = (s[0] * spatial) as f64;
                let gm = val(*gamma);
                let mut sum_g = vec![0.0f64; c];
                let mut sum_gx = vec![0.0f64; c];
                for (j, (gc, hc)) in g.chunks(spatial).zip(xhat.chunks(spatial)).enumerate() {
                    let ch = j % c;
                    for (&gv, &hv) in gc.iter().zip(hc) {
                        sum_g[ch] += gv.f64();
                        sum_gx[ch] += (gv * hv).f64();
                    }
                }
                acc(*gamma, &mut |dg| dg.iter_mut().zip(&sum_gx).for_each(|(d, &v)| *d += T::of(v)));
                acc(*beta, &mut |db| db.iter_mut().zip(&sum_g).for_each(|(d, &v)| *d += T::of(v)));
                acc(*x, &mut |dx| {
                    for (j, ((dc, gc), hc)) in dx
                        .chunks_mut(spatial)
                        .zip(g.chunks(spatial))
                        .zip(xhat.chunks(spatial))
                        .enumerate()
                    {
                        let ch = j % c;
                        let scale = gm[ch] * inv_std[ch];
                        if *batch_stats {
                            let mg = T::of(sum_g[ch] / count);
                            let mgx = T::of(sum_gx[ch] / count);
                            for ((d, &gv), &hv) in dc.iter_mut().zip(gc).zip(hc) {
                                *d += scale * (gv - mg - hv * mgx);
                            }
                        } else {
                            dc.iter_mut().zip(gc).for_each(|(d, &gv)| *d += scale * gv);
                        }
                    }
                });
            }
            Op::Act(x, kind) => {
                let (xin, y) = (val(*x), out.data());
                acc(*x, &mut |dx| match kind {
                    Activation::Relu => {
                        for ((d, &gv), &v) in dx.iter_mut().zip(g).zip(xin) {
                            if v > zero {
                                *d += gv;
                            }
                        }
                    }
                    Activation::LeakyRelu(slope) => {
                        let s = T::of(*slope);
                        for ((d, &gv), &v) in dx.iter_mut().zip(g).zip(xin) {
                            *d += if v > zero { gv } else { gv * s };
                        }
                    }
                    Activation::Tanh => {
                        for ((d, &gv), &yv) in dx.iter_mut().zip(g).zip(y) {
                            *d += gv * (one - yv * yv);
                        }
                    }
                    Activation::Sigmoid => {
                        for ((d, &gv), &yv) in dx.iter_mut().zip(g).zip(y) {
                            *d += gv * yv * (one - yv);
                        }
                    }
                });
            }
            Op::Softmax(x) => {
                let k = shp(*x)[1];
                let y = out.data();
                acc(*x, &mut |dx| {
                    for ((dr, gr), yr) in dx.chunks_mut(k).zip(g.chunks(k)).zip(y.chunks(k)) {
                        let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        dr.iter_mut().zip(gr).zip(yr).for_each(|((d, &gv), &yv)| *d += yv * (gv - dot));
                    }
                });
            }
            Op::CrossEntropy { logits, labels, weights, probs } => {
                let k = shp(*logits)[1];
                let n = labels.len();
                if n > 0 {
                    acc(*logits, &mut |dl| {
                        for (r, (dr, pr)) in dl.chunks_mut(k).zip(probs.chunks(k)).enumerate() {
                            let w = T::of(weights.as_ref().map_or(1.0, |w| w[r]) * g[0].f64() / n as f64);
                            for (c, (d, &p)) in dr.iter_mut().zip(pr).enumerate() {
                                let target = if c == labels[r] { one } else { zero };
                                *d += w * (p - target);
                            }
                        }
                    });
                }
            }
            Op::Bce { input, targets, from_logits } => {
                let scale = g[0].f64() / targets.len().max(1) as f64;
                let xin = val(*input);
                acc(*input, &mut |dx| {
                    for ((d, v), &y) in dx.iter_mut().zip(xin).zip(targets) {
                        let local = if *from_logits {
                            let p = 1.0 / (1.0 + (-clamp_logit(v.f64())).exp());
                            p - y
                        } else {
                            let p = v.f64().clamp(BCE_EPS, 1.0 - BCE_EPS);
                            (p - y) / (p * (1.0 - p))
                        };
                        *d += T::of(scale * local);
                    }
                });
            }
            Op::ConcatChannels(a, b) => {
                let (sa, sb) = (shp(*a), shp(*b));
                let (la, lb) = (sa[1] * sa[2] * sa[3], sb[1] * sb[2] * sb[3]);
                acc(*a, &mut |da| {
                    for (d, src) in da.chunks_mut(la).zip(g.chunks(la + lb)) {
                        add_into(d, &src[..la]);
                    }
                });
                acc(*b, &mut |db| {
                    for (d, src) in db.chunks_mut(lb).zip(g.chunks(la + lb)) {
                        add_into(d, &src[la..]);
                    }
                });
            }
            Op::SelectRows { x, rows } => {
                let row: usize = shp(*x)[1..].iter().product();
                acc(*x, &mut |dx| {
                    for (j, &r) in rows.iter().enumerate() {
                        add_into(&mut dx[r * row..(r + 1) * row], &g[j * row..(j + 1) * row]);
                    }
                });
            }
            Op::GlobalAvgPool(x) => {
                let s = shp(*x);
                let spatial = s[2] * s[3];
                acc(*x, &mut |dx| {
                    for (dc, &gv) in dx.chunks_mut(spatial).zip(g) {
                        let v = T::of(gv.f64() / spatial as f64);
                        dc.iter_mut().for_each(|d| *d += v);
                    }
                });
            }
        }
    }
}

fn zip_map<T: Real>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

fn sigmoid<T: Real>(x: T) -> T {
    let one = T::one();
    if x >= T::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    }
}

/// Logit clamp equivalent to clamping probabilities to `[ε, 1−ε]`.
fn clamp_logit(l: f64) -> f64 {
    let bound = ((1.0 - BCE_EPS) / BCE_EPS).ln();
    l.clamp(-bound, bound)
}

fn softmax_rows<T: Real>(data: &[T], k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); data.len()];
    if k == 0 {
        return out;
    }
    for (row, o) in data.chunks(k).zip(out.chunks_mut(k)) {
        let max = row.iter().fold(f64::NEG_INFINITY, |a, b| a.max(b.f64()));
        let exps: Vec<f64> = row.iter().map(|v| (v.f64() - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        o.iter_mut().zip(&exps).for_each(|(dst, e)| *dst = T::of(e / total));
    }
    out
}

//! Reverse-mode autodiff: a parameter store plus a recording tape.
//!
//! Parameters (weights, architecture logits, batch-norm buffers) live in a
//! [`ParamStore`] that outlives any single forward pass. Each forward builds
//! a [`Tape`]: ops append value nodes and a record carrying the node ids and
//! whatever state the backward rule needs. `backward` replays the records in
//! reverse, accumulating gradients into tape nodes and — for parameter
//! leaves — into the store, where the optimizers pick them up.
//!
//! The tape is confined to one thread and is deterministic for a fixed op
//! sequence. Calling `backward` twice without `reset` is rejected.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::ops::conv::{conv2d_backward_input, conv2d_backward_weight, conv2d_forward, conv2d_out_shape, ConvSpec};
use crate::ops::norm::{bn_backward_eval, bn_backward_training, bn_batch_stats, bn_forward};
use crate::ops::pool::{avgpool3_backward, avgpool3_forward, maxpool3_backward, maxpool3_forward, pool3_out_extent};
use crate::binconv;
use crate::tensor::{sign_val, Tensor};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// What a store entry is used for; optimizers only touch their own kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Network weights (convolutions, affine BN, PReLU slopes, scaling factors).
    Weight,
    /// Architecture logits.
    Arch,
    /// Non-learnable state such as batch-norm running statistics.
    Buffer,
}

/// Persistent storage for parameters and buffers.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    slots: Vec<(Tensor, ParamKind)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, mut tensor: Tensor, kind: ParamKind) -> ParamId {
        tensor.set_requires_grad(kind != ParamKind::Buffer);
        self.slots.push((tensor, kind));
        ParamId(self.slots.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.slots[id.0].0
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.slots[id.0].0
    }

    pub fn kind(&self, id: ParamId) -> ParamKind {
        self.slots[id.0].1
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Ids of every entry of the given kind, in insertion order.
    pub fn ids_of(&self, kind: ParamKind) -> Vec<ParamId> {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, (_, k))| *k == kind)
            .map(|(i, _)| ParamId(i))
            .collect()
    }

    /// All entries with their ids, in insertion order.
    pub fn entries(&self) -> impl Iterator<Item = (ParamId, &Tensor, ParamKind)> {
        self.slots.iter().enumerate().map(|(i, (t, k))| (ParamId(i), t, *k))
    }

    /// Total element count across entries of a kind.
    pub fn numel_of(&self, kind: ParamKind) -> usize {
        self.slots.iter().filter(|(_, k)| *k == kind).map(|(t, _)| t.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for (t, _) in self.slots.iter_mut() {
            t.zero_grad();
        }
    }
}

/// Id of a value node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vid(usize);

#[derive(Debug, Clone, Copy)]
enum Origin {
    Constant,
    Param(ParamId),
    Computed,
}

struct Node {
    origin: Origin,
    value: Option<Tensor>, // None for params: read through the store
    grad: Option<Vec<f64>>,
    needs_grad: bool,
}

/// Classification targets for the cross-entropy loss.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// One class index per example.
    Hard(Vec<usize>),
    /// Row-major `[N, classes]` probability vectors (e.g. from mixup).
    Soft {
        probs: Vec<f64>,
        classes: usize,
    },
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Hard(v) => v.len(),
            Targets::Soft { probs, classes } => {
                if *classes == 0 {
                    0
                } else {
                    probs.len() / classes
                }
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn prob(&self, row: usize, class: usize) -> f64 {
        match self {
            Targets::Hard(v) => {
                if v[row] == class {
                    1.0
                } else {
                    0.0
                }
            }
            Targets::Soft { probs, classes } => probs[row * classes + class],
        }
    }
}

enum OpRecord {
    Conv2d { x: Vid, w: Vid, out: Vid, spec: ConvSpec },
    BinConv2d { x: Vid, w: Vid, alpha_raw: Vid, out: Vid, spec: ConvSpec, dot: Vec<f64> },
    MaxPool3 { x: Vid, out: Vid, argmax: Vec<u32> },
    AvgPool3 { x: Vid, out: Vid, stride: usize },
    BatchNorm { x: Vid, gamma: Option<Vid>, beta: Option<Vid>, out: Vid, mean: Vec<f64>, var: Vec<f64>, training: bool },
    Prelu { x: Vid, slope: Vid, out: Vid },
    Linear { x: Vid, w: Vid, b: Option<Vid>, out: Vid },
    CrossEntropy { logits: Vid, out: Vid, targets: Targets, probs: Vec<f64> },
    ConcatC { xs: Vec<Vid>, out: Vid },
    Add { a: Vid, b: Vid, out: Vid },
    SignSte { x: Vid, out: Vid },
    SoftmaxT { x: Vid, out: Vid, temp: f64 },
    Mix { weights: Vid, xs: Vec<Vid>, out: Vid },
    ChannelScale { x: Vid, scale: Vid, out: Vid },
    Abs { x: Vid, out: Vid },
    Shift2d { x: Vid, out: Vid, down: usize, right: usize },
    GlobalAvgPool { x: Vid, out: Vid },
    Sum { x: Vid, out: Vid },
    SquareSum { x: Vid, out: Vid },
}

/// A single forward pass worth of recorded operations.
pub struct Tape<'s> {
    store: &'s mut ParamStore,
    nodes: Vec<Node>,
    records: Vec<OpRecord>,
    spent: bool,
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s mut ParamStore) -> Self {
        Tape { store, nodes: Vec::new(), records: Vec::new(), spent: false }
    }

    /// The value of a node.
    pub fn value(&self, v: Vid) -> &Tensor {
        let node = &self.nodes[v.0];
        match node.origin {
            Origin::Param(id) => self.store.get(id),
            _ => node.value.as_ref().expect("non-param node has a value"),
        }
    }

    /// The gradient accumulated on a node during `backward`, if any.
    pub fn grad(&self, v: Vid) -> Option<&[f64]> {
        let node = &self.nodes[v.0];
        match node.origin {
            Origin::Param(id) => self.store.get(id).grad(),
            _ => node.grad.as_deref(),
        }
    }

    /// Extracts a scalar node's value.
    pub fn scalar_value(&self, v: Vid) -> f64 {
        self.value(v).data()[0]
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    /// Registers a constant input (no gradient flows into it).
    pub fn constant(&mut self, t: Tensor) -> Vid {
        self.push_node(Node { origin: Origin::Constant, value: Some(t), grad: None, needs_grad: false })
    }

    /// Registers a parameter leaf; gradients accumulate in the store.
    pub fn param(&mut self, id: ParamId) -> Vid {
        let needs = self.store.kind(id) != ParamKind::Buffer;
        self.push_node(Node { origin: Origin::Param(id), value: None, grad: None, needs_grad: needs })
    }

    /// All-zero constant of the given shape.
    pub fn zeros(&mut self, shape: &[usize]) -> Vid {
        self.constant(Tensor::zeros(shape))
    }

    fn push_node(&mut self, node: Node) -> Vid {
        self.nodes.push(node);
        Vid(self.nodes.len() - 1)
    }

    fn push_computed(&mut self, value: Tensor, needs_grad: bool) -> Vid {
        self.push_node(Node { origin: Origin::Computed, value: Some(value), grad: None, needs_grad })
    }

    fn needs(&self, v: Vid) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn accumulate(&mut self, v: Vid, delta: &[f64]) {
        let node = &mut self.nodes[v.0];
        if !node.needs_grad {
            return;
        }
        match node.origin {
            Origin::Param(id) => self.store.get_mut(id).accumulate_grad(delta),
            _ => {
                let len = node.value.as_ref().map(Tensor::numel).unwrap_or(0);
                debug_assert_eq!(len, delta.len());
                let grad = node.grad.get_or_insert_with(|| vec![0.0; len]);
                for (g, d) in grad.iter_mut().zip(delta) {
                    *g += d;
                }
            }
        }
    }

    fn grad_cloned(&self, v: Vid) -> Option<Vec<f64>> {
        let node = &self.nodes[v.0];
        match node.origin {
            Origin::Param(id) => self.store.get(id).grad().map(<[f64]>::to_vec),
            _ => node.grad.clone(),
        }
    }

    // ── ops ──────────────────────────────────────────────────────────

    /// Grouped, dilated 2-d convolution (cross-correlation).
    pub fn conv2d(&mut self, x: Vid, w: Vid, spec: ConvSpec) -> Result<Vid> {
        let xs = self.value(x).dims4()?;
        let ws = self.value(w).dims4()?;
        let os = conv2d_out_shape(&xs, &ws, &spec)?;
        let data = conv2d_forward(self.value(x).data(), &xs, self.value(w).data(), &ws, &spec, &os);
        let needs = self.needs(x) || self.needs(w);
        let out = self.push_computed(Tensor::new(os.to_vec(), data)?, needs);
        self.records.push(OpRecord::Conv2d { x, w, out, spec });
        Ok(out)
    }

    /// Binary convolution: signs of input and weight, XNOR/popcount
    /// accumulation, per-output-channel scaling by `|alpha_raw|`.
    ///
    /// Forward runs on packed bit-planes; gradients use the clipped
    /// straight-through estimator for both operands.
    pub fn binary_conv2d(&mut self, x: Vid, w: Vid, alpha_raw: Vid, spec: ConvSpec) -> Result<Vid> {
        let xs = self.value(x).dims4()?;
        let ws = self.value(w).dims4()?;
        let os = conv2d_out_shape(&xs, &ws, &spec)?;
        let alpha_len = self.value(alpha_raw).numel();
        if alpha_len != ws[0] {
            return Err(Error::Shape(format!(
                "scaling factor has {} channels, weight has {} output channels",
                alpha_len, ws[0]
            )));
        }
        let dot = binconv::binconv_signed(self.value(x).data(), &xs, self.value(w).data(), &ws, &spec, &os);
        let alpha = self.value(alpha_raw).data();
        let plane = os[2] * os[3];
        let mut data = vec![0.0; dot.len()];
        for img in 0..os[0] {
            for oc in 0..os[1] {
                let a = alpha[oc].abs();
                let base = (img * os[1] + oc) * plane;
                for i in 0..plane {
                    data[base + i] = dot[base + i] * a;
                }
            }
        }
        let needs = self.needs(x) || self.needs(w) || self.needs(alpha_raw);
        let out = self.push_computed(Tensor::new(os.to_vec(), data)?, needs);
        self.records.push(OpRecord::BinConv2d { x, w, alpha_raw, out, spec, dot });
        Ok(out)
    }

    /// 3x3 max pooling, padding 1, stride 1 or 2.
    pub fn max_pool3(&mut self, x: Vid, stride: usize) -> Result<Vid> {
        let xs = self.pool_check(x, stride)?;
        let (data, argmax) = maxpool3_forward(self.value(x).data(), &xs, stride);
        let shape = vec![xs[0], xs[1], pool3_out_extent(xs[2], stride), pool3_out_extent(xs[3], stride)];
        let needs = self.needs(x);
        let out = self.push_computed(Tensor::new(shape, data)?, needs);
        self.records.push(OpRecord::MaxPool3 { x, out, argmax });
        Ok(out)
    }

    /// 3x3 average pooling, padding 1, stride 1 or 2.
    pub fn avg_pool3(&mut self, x: Vid, stride: usize) -> Result<Vid> {
        let xs = self.pool_check(x, stride)?;
        let data = avgpool3_forward(self.value(x).data(), &xs, stride);
        let shape = vec![xs[0], xs[1], pool3_out_extent(xs[2], stride), pool3_out_extent(xs[3], stride)];
        let needs = self.needs(x);
        let out = self.push_computed(Tensor::new(shape, data)?, needs);
        self.records.push(OpRecord::AvgPool3 { x, out, stride });
        Ok(out)
    }

    fn pool_check(&self, x: Vid, stride: usize) -> Result<[usize; 4]> {
        if stride != 1 && stride != 2 {
            return Err(Error::Invalid(format!("pool stride must be 1 or 2, got {}", stride)));
        }
        self.value(x).dims4()
    }

    /// Batch normalization with per-channel statistics over `N, H, W`.
    ///
    /// Training mode normalizes with batch statistics and folds them into the
    /// running buffers with the given momentum; eval mode uses the buffers.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Vid,
        affine: Option<(Vid, Vid)>,
        running: (ParamId, ParamId),
        momentum: f64,
        training: bool,
    ) -> Result<Vid> {
        let xs = self.value(x).dims4()?;
        let [n, c, h, w] = xs;
        if n == 0 {
            return Err(Error::Invalid("batch normalization over an empty batch".into()));
        }
        if let Some((g, b)) = affine {
            if self.value(g).numel() != c || self.value(b).numel() != c {
                return Err(Error::Shape(format!(
                    "affine parameters must have {} channels",
                    c
                )));
            }
        }
        let (mean, var) = if training {
            let (mean, var) = bn_batch_stats(self.value(x).data(), &xs);
            let count = (n * h * w) as f64;
            // Running variance uses the unbiased estimate when possible.
            let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            {
                let rm = self.store.get_mut(running.0).data_mut();
                for (r, &m) in rm.iter_mut().zip(&mean) {
                    *r = (1.0 - momentum) * *r + momentum * m;
                }
            }
            {
                let rv = self.store.get_mut(running.1).data_mut();
                for (r, &v) in rv.iter_mut().zip(&var) {
                    *r = (1.0 - momentum) * *r + momentum * v * unbias;
                }
            }
            (mean, var)
        } else {
            (self.store.get(running.0).data().to_vec(), self.store.get(running.1).data().to_vec())
        };
        let gamma = affine.map(|(g, _)| self.value(g).data().to_vec());
        let beta = affine.map(|(_, b)| self.value(b).data().to_vec());
        let data = bn_forward(self.value(x).data(), &xs, &mean, &var, gamma.as_deref(), beta.as_deref());
        let needs = self.needs(x) || affine.map_or(false, |(g, b)| self.needs(g) || self.needs(b));
        let out = self.push_computed(Tensor::new(xs.to_vec(), data)?, needs);
        self.records.push(OpRecord::BatchNorm {
            x,
            gamma: affine.map(|(g, _)| g),
            beta: affine.map(|(_, b)| b),
            out,
            mean,
            var,
            training,
        });
        Ok(out)
    }

    /// PReLU with a per-channel learnable slope.
    pub fn prelu(&mut self, x: Vid, slope: Vid) -> Result<Vid> {
        let xs = self.value(x).dims4()?;
        if self.value(slope).numel() != xs[1] {
            return Err(Error::Shape(format!(
                "prelu slope has {} entries, input has {} channels",
                self.value(slope).numel(),
                xs[1]
            )));
        }
        let plane = xs[2] * xs[3];
        let slopes = self.value(slope).data().to_vec();
        let mut data = self.value(x).data().to_vec();
        for img in 0..xs[0] {
            for ch in 0..xs[1] {
                let s = slopes[ch];
                for v in data[(img * xs[1] + ch) * plane..][..plane].iter_mut() {
                    if *v < 0.0 {
                        *v *= s;
                    }
                }
            }
        }
        let needs = self.needs(x) || self.needs(slope);
        let out = self.push_computed(Tensor::new(xs.to_vec(), data)?, needs);
        self.records.push(OpRecord::Prelu { x, slope, out });
        Ok(out)
    }

    /// Fully connected layer: `x [N,F] * w^T [F,O] + b`.
    pub fn linear(&mut self, x: Vid, w: Vid, b: Option<Vid>) -> Result<Vid> {
        let [n, f] = self.value(x).dims2()?;
        let [o, wf] = self.value(w).dims2()?;
        if wf != f {
            return Err(Error::Shape(format!("linear expects {} features, input has {}", wf, f)));
        }
        if let Some(b) = b {
            if self.value(b).numel() != o {
                return Err(Error::Shape(format!("bias has {} entries, expected {}", self.value(b).numel(), o)));
            }
        }
        let mut data = vec![0.0; n * o];
        {
            let xd = self.value(x).data();
            let wd = self.value(w).data();
            for i in 0..n {
                for j in 0..o {
                    let mut acc = 0.0;
                    let xr = &xd[i * f..][..f];
                    let wr = &wd[j * f..][..f];
                    for (a, b) in xr.iter().zip(wr) {
                        acc += a * b;
                    }
                    data[i * o + j] = acc;
                }
            }
            if let Some(b) = b {
                let bd = self.value(b).data();
                for i in 0..n {
                    for j in 0..o {
                        data[i * o + j] += bd[j];
                    }
                }
            }
        }
        let needs = self.needs(x) || self.needs(w) || b.map_or(false, |b| self.needs(b));
        let out = self.push_computed(Tensor::new(vec![n, o], data)?, needs);
        self.records.push(OpRecord::Linear { x, w, b, out });
        Ok(out)
    }

    /// Mean softmax cross-entropy over the batch.
    pub fn softmax_cross_entropy(&mut self, logits: Vid, targets: &Targets) -> Result<Vid> {
        let [n, k] = self.value(logits).dims2()?;
        if targets.len() != n {
            return Err(Error::Shape(format!(
                "{} targets for a batch of {}",
                targets.len(),
                n
            )));
        }
        if n == 0 {
            return Err(Error::Invalid("cross entropy over an empty batch".into()));
        }
        if let Targets::Hard(labels) = targets {
            if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
                return Err(Error::Invalid(format!("label {} out of range for {} classes", bad, k)));
            }
        }
        let ld = self.value(logits).data();
        let mut probs = vec![0.0; n * k];
        let mut loss = 0.0;
        for i in 0..n {
            let row = &ld[i * k..][..k];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for &v in row {
                denom += math::exp(v - max);
            }
            let lse = max + math::ln(denom);
            for (j, &v) in row.iter().enumerate() {
                probs[i * k + j] = math::exp(v - lse);
            }
            let mut row_loss = 0.0;
            for j in 0..k {
                let t = targets.prob(i, j);
                if t != 0.0 {
                    row_loss += t * (lse - row[j]);
                }
            }
            loss += row_loss;
        }
        loss /= n as f64;
        let needs = self.needs(logits);
        let out = self.push_computed(Tensor::scalar(loss), needs);
        self.records.push(OpRecord::CrossEntropy { logits, out, targets: targets.clone(), probs });
        Ok(out)
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(&mut self, xs: &[Vid]) -> Result<Vid> {
        if xs.is_empty() {
            return Err(Error::Invalid("concat of zero tensors".into()));
        }
        let first = self.value(xs[0]).dims4()?;
        let mut channels = 0usize;
        for &v in xs {
            let d = self.value(v).dims4()?;
            if [d[0], d[2], d[3]] != [first[0], first[2], first[3]] {
                return Err(Error::Shape(format!(
                    "concat operands disagree: {:?} vs {:?}",
                    first, d
                )));
            }
            channels += d[1];
        }
        let plane = first[2] * first[3];
        let mut data = vec![0.0; first[0] * channels * plane];
        for img in 0..first[0] {
            let mut c_off = 0usize;
            for &v in xs {
                let d = self.value(v).dims4()?;
                let src = self.value(v).data();
                let rows = d[1] * plane;
                let dst = &mut data[(img * channels + c_off) * plane..][..rows];
                dst.copy_from_slice(&src[img * rows..][..rows]);
                c_off += d[1];
            }
        }
        let needs = xs.iter().any(|&v| self.needs(v));
        let out = self.push_computed(Tensor::new(vec![first[0], channels, first[2], first[3]], data)?, needs);
        self.records.push(OpRecord::ConcatC { xs: xs.to_vec(), out });
        Ok(out)
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: Vid, b: Vid) -> Result<Vid> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "add operands disagree: {} vs {}",
                self.value(a).shape_string(),
                self.value(b).shape_string()
            )));
        }
        let data: Vec<f64> =
            self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let shape = self.value(a).shape().to_vec();
        let needs = self.needs(a) || self.needs(b);
        let out = self.push_computed(Tensor::new(shape, data)?, needs);
        self.records.push(OpRecord::Add { a, b, out });
        Ok(out)
    }

    /// Elementwise sign (`sign(0) = +1`) with the clipped straight-through
    /// estimator as its backward rule.
    pub fn sign_ste(&mut self, x: Vid) -> Result<Vid> {
        let value = self.value(x).sign();
        let needs = self.needs(x);
        let out = self.push_computed(value, needs);
        self.records.push(OpRecord::SignSte { x, out });
        Ok(out)
    }

    /// Temperature-scaled softmax over a vector of logits.
    pub fn softmax_t(&mut self, logits: Vid, temp: f64) -> Result<Vid> {
        if !(temp > 0.0) {
            return Err(Error::Invalid(format!("temperature must be positive, got {}", temp)));
        }
        let ld = self.value(logits).data();
        if ld.is_empty() {
            return Err(Error::Invalid("softmax over zero logits".into()));
        }
        let max = ld.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut data: Vec<f64> = ld.iter().map(|&v| math::exp((v - max) / temp)).collect();
        let denom: f64 = data.iter().sum();
        for v in data.iter_mut() {
            *v /= denom;
        }
        let shape = self.value(logits).shape().to_vec();
        let needs = self.needs(logits);
        let out = self.push_computed(Tensor::new(shape, data)?, needs);
        self.records.push(OpRecord::SoftmaxT { x: logits, out, temp });
        Ok(out)
    }

    /// Weighted sum of same-shape tensors: `out = sum_k weights[k] * xs[k]`.
    pub fn mix(&mut self, weights: Vid, xs: &[Vid]) -> Result<Vid> {
        if self.value(weights).numel() != xs.len() || xs.is_empty() {
            return Err(Error::Shape(format!(
                "{} mixing weights for {} operands",
                self.value(weights).numel(),
                xs.len()
            )));
        }
        let shape = self.value(xs[0]).shape().to_vec();
        for &v in xs {
            if self.value(v).shape() != shape.as_slice() {
                return Err(Error::Shape("mix operands must share a shape".into()));
            }
        }
        let wd = self.value(weights).data().to_vec();
        let mut data = vec![0.0; self.value(xs[0]).numel()];
        for (k, &v) in xs.iter().enumerate() {
            let src = self.value(v).data();
            let wk = wd[k];
            for (o, &s) in data.iter_mut().zip(src) {
                *o += wk * s;
            }
        }
        let needs = self.needs(weights) || xs.iter().any(|&v| self.needs(v));
        let out = self.push_computed(Tensor::new(shape, data)?, needs);
        self.records.push(OpRecord::Mix { weights, xs: xs.to_vec(), out });
        Ok(out)
    }

    /// Multiplies each channel by a per-channel factor.
    pub fn channel_scale(&mut self, x: Vid, scale: Vid) -> Result<Vid> {
        let xs = self.value(x).dims4()?;
        if self.value(scale).numel() != xs[1] {
            return Err(Error::Shape(format!(
                "scale has {} entries, input has {} channels",
                self.value(scale).numel(),
                xs[1]
            )));
        }
        let plane = xs[2] * xs[3];
        let sd = self.value(scale).data().to_vec();
        let mut data = self.value(x).data().to_vec();
        for img in 0..xs[0] {
            for ch in 0..xs[1] {
                for v in data[(img * xs[1] + ch) * plane..][..plane].iter_mut() {
                    *v *= sd[ch];
                }
            }
        }
        let needs = self.needs(x) || self.needs(scale);
        let out = self.push_computed(Tensor::new(xs.to_vec(), data)?, needs);
        self.records.push(OpRecord::ChannelScale { x, scale, out });
        Ok(out)
    }

    /// Elementwise absolute value.
    pub fn abs(&mut self, x: Vid) -> Result<Vid> {
        let data: Vec<f64> = self.value(x).data().iter().map(|v| v.abs()).collect();
        let shape = self.value(x).shape().to_vec();
        let needs = self.needs(x);
        let out = self.push_computed(Tensor::new(shape, data)?, needs);
        self.records.push(OpRecord::Abs { x, out });
        Ok(out)
    }

    /// Shifts spatial planes up-left by `(down, right)` source offset,
    /// zero-filling; shape is preserved.
    pub fn shift2d(&mut self, x: Vid, down: usize, right: usize) -> Result<Vid> {
        let xs = self.value(x).dims4()?;
        let [n, c, h, w] = xs;
        let src = self.value(x).data();
        let mut data = vec![0.0; src.len()];
        for img in 0..n {
            for ch in 0..c {
                let s = &src[(img * c + ch) * h * w..][..h * w];
                let d = &mut data[(img * c + ch) * h * w..][..h * w];
                for y in 0..h.saturating_sub(down) {
                    let sy = y + down;
                    for xx in 0..w.saturating_sub(right) {
                        d[y * w + xx] = s[sy * w + xx + right];
                    }
                }
            }
        }
        let needs = self.needs(x);
        let out = self.push_computed(Tensor::new(xs.to_vec(), data)?, needs);
        self.records.push(OpRecord::Shift2d { x, out, down, right });
        Ok(out)
    }

    /// Spatial mean: `[N,C,H,W] -> [N,C]`.
    pub fn global_avg_pool(&mut self, x: Vid) -> Result<Vid> {
        let [n, c, h, w] = self.value(x).dims4()?;
        let plane = h * w;
        let src = self.value(x).data();
        let mut data = vec![0.0; n * c];
        for i in 0..n * c {
            let mut acc = 0.0;
            for &v in &src[i * plane..][..plane] {
                acc += v;
            }
            data[i] = acc / plane as f64;
        }
        let needs = self.needs(x);
        let out = self.push_computed(Tensor::new(vec![n, c], data)?, needs);
        self.records.push(OpRecord::GlobalAvgPool { x, out });
        Ok(out)
    }

    /// Sum of all elements (scalar).
    pub fn sum(&mut self, x: Vid) -> Result<Vid> {
        let total: f64 = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        let out = self.push_computed(Tensor::scalar(total), needs);
        self.records.push(OpRecord::Sum { x, out });
        Ok(out)
    }

    /// Sum of squared elements (scalar).
    pub fn square_sum(&mut self, x: Vid) -> Result<Vid> {
        let total: f64 = self.value(x).data().iter().map(|v| v * v).sum();
        let needs = self.needs(x);
        let out = self.push_computed(Tensor::scalar(total), needs);
        self.records.push(OpRecord::SquareSum { x, out });
        Ok(out)
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse replay from a scalar loss; accumulates into node and
    /// parameter gradients.
    pub fn backward(&mut self, loss: Vid) -> Result<()> {
        if self.spent {
            return Err(Error::Tape("backward called twice without reset".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Tape(format!(
                "backward needs a scalar loss, got shape {}",
                self.value(loss).shape_string()
            )));
        }
        self.spent = true;
        self.accumulate_unchecked(loss, &[1.0]);
        let records = core::mem::take(&mut self.records);
        for rec in records.iter().rev() {
            self.replay(rec);
        }
        self.records = records;
        Ok(())
    }

    /// Seeds the loss gradient even if the node is marked as not needing one.
    fn accumulate_unchecked(&mut self, v: Vid, delta: &[f64]) {
        self.nodes[v.0].needs_grad = true;
        self.accumulate(v, delta);
    }

    /// Clears all nodes and records so the tape can record a fresh pass.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.records.clear();
        self.spent = false;
    }

    fn replay(&mut self, rec: &OpRecord) {
        match rec {
            OpRecord::Conv2d { x, w, out, spec } => {
                let Some(dy) = self.grad_cloned(*out) else { return };
                let xs = self.value(*x).dims4().unwrap();
                let ws = self.value(*w).dims4().unwrap();
                let os = self.value(*out).dims4().unwrap();
                if self.needs(*x) {
                    let dx = conv2d_backward_input(&dy, &os, self.value(*w).data(), &ws, &xs, spec);
                    self.accumulate(*x, &dx);
                }
                if self.needs(*w) {
                    let dw = conv2d_backward_weight(&dy, &os, self.value(*x).data(), &xs, &ws, spec);
                    self.accumulate(*w, &dw);
                }
            }
            OpRecord::BinConv2d { x, w, alpha_raw, out, spec, dot } => {
                let Some(dy) = self.grad_cloned(*out) else { return };
                let xs = self.value(*x).dims4().unwrap();
                let ws = self.value(*w).dims4().unwrap();
                let os = self.value(*out).dims4().unwrap();
                let alpha_raw_vals = self.value(*alpha_raw).data().to_vec();
                let plane = os[2] * os[3];
                if self.needs(*alpha_raw) {
                    let mut da = vec![0.0; alpha_raw_vals.len()];
                    for img in 0..os[0] {
                        for oc in 0..os[1] {
                            let base = (img * os[1] + oc) * plane;
                            let mut acc = 0.0;
                            for i in 0..plane {
                                acc += dy[base + i] * dot[base + i];
                            }
                            da[oc] += acc * sign_val(alpha_raw_vals[oc]);
                        }
                    }
                    self.accumulate(*alpha_raw, &da);
                }
                if self.needs(*x) || self.needs(*w) {
                    // Scale upstream by |alpha| once; the rest is the float
                    // convolution backward on the signed operands, masked by
                    // the straight-through estimator.
                    let mut dy_scaled = dy;
                    for img in 0..os[0] {
                        for oc in 0..os[1] {
                            let a = alpha_raw_vals[oc].abs();
                            for v in dy_scaled[(img * os[1] + oc) * plane..][..plane].iter_mut() {
                                *v *= a;
                            }
                        }
                    }
                    if self.needs(*x) {
                        let sw = self.value(*w).sign();
                        let mut dx = conv2d_backward_input(&dy_scaled, &os, sw.data(), &ws, &xs, spec);
                        for (g, &v) in dx.iter_mut().zip(self.value(*x).data()) {
                            if v.abs() > 1.0 {
                                *g = 0.0;
                            }
                        }
                        self.accumulate(*x, &dx);
                    }
                    if self.needs(*w) {
                        let sx = self.value(*x).sign();
                        let mut dw = conv2d_backward_weight(&dy_scaled, &os, sx.data(), &xs, &ws, spec);
                        for (g, &v) in dw.iter_mut().zip(self.value(*w).data()) {
                            if v.abs() > 1.0 {
                                *g = 0.0;
                            }
                        }
                        self.accumulate(*w, &dw);
                    }
                }
            }
            OpRecord::MaxPool3 { x, out, argmax } => {
                let Some(dy) = self.grad_cloned(*out) else { return };
                if self.needs(*x) {
                    let dx = maxpool3_backward(&dy, argmax, self.value(*x).numel());
                    self.accumulate(*x, &dx);
                }
            }
            OpRecord::AvgPool3 { x, out, stride } => {
                let Some(dy) = self.grad_cloned(*out) else { return };
                if self.needs(*x) {
                    let xs = self.value(*x).dims4().unwrap();
                    let dx = avgpool3_backward(&dy, &xs, *stride);
                    self.accumulate(*x, &dx);
                }
            }
            OpRecord::BatchNorm { x, gamma, beta, out, mean, var, training } => {
                let Some(dy) = self.grad_cloned(*out) else { return };
                let xs = self.value(*x).dims4().unwrap();
                let gamma_vals = gamma.map(|g| self.value(g).data().to_vec());
                let (dx, dgamma, dbeta) = if *training {
                    bn_backward_training(self.value(*x).data(), &xs, mean, var, gamma_vals.as_deref(), &dy)
                } else {
                    bn_backward_eval(self.value(*x).data(), &xs, mean, var, gamma_vals.as_deref(), &dy)
                };
                if self.needs(*x) {
                    self.accumulate(*x, &dx);
                }
                if let Some(g) = gamma {
                    self.accumulate(*g, &dgamma);
                }
                if let Some(b) = beta {
                    self.accumulate(*b, &dbeta);
                }
            }
            OpRecord::Prelu { x, slope, out } => {
                let Some(dy) = self.grad_cloned(*out) else { return };
                let xs = self.value(*x).dims4().unwrap();
                let plane = xs[2] * xs[3];
                let (dx, ds) = {
                    let xd = self.value(*x).data();
                    let sd = self.value(*slope).data();
                    let dx = self.needs(*x).then(|| {
                        let mut dx = vec![0.0; xd.len()];
                        for img in 0..xs[0] {
                            for ch in 0..xs[1] {
                                let s = sd[ch];
                                let base = (img * xs[1] + ch) * plane;
                                for i in 0..plane {
                                    let v = xd[base + i];
                                    dx[base + i] = dy[base + i] * if v > 0.0 { 1.0 } else { s };
                                }
                            }
                        }
                        dx
                    });
                    let ds = self.needs(*slope).then(|| {
                        let mut ds = vec![0.0; sd.len()];
                        for img in 0..xs[0] {
                            for ch in 0..xs[1] {
                                let base = (img * xs[1] + ch) * plane;
                                let mut acc = 0.0;
                                for i in 0..plane {
                                    let v = xd[base + i];
                                    if v <= 0.0 {
                                        acc += dy[base + i] * v;
                                    }
                                }
                                ds[ch] += acc;
                            }
                        }
                        ds
                    });
                    (dx, ds)
                };
                if let Some(dx) = dx {
                    self.accumulate(*x, &dx);
                }
                if let Some(ds) = ds {
                    self.accumulate(*slope, &ds);
                }
            }
            OpRecord::Linear { x, w, b, out } => {
                let Some(dy) = self.grad_cloned(*out) else { return };
                let [n, f] = self.value(*x).dims2().unwrap();
                let [o, _] = self.value(*w).dims2().unwrap();
                if self.needs(*x) {
                    let wd = self.value(*w).data();
                    let mut dx = vec![0.0; n * f];
                    for i in 0..n {
                        for j in 0..o {
                            let g = dy[i * o + j];
                            if g == 0.0 {
                                continue;
                            }
                            let wr = &wd[j * f..][..f];
                            let dr = &mut dx[i * f..][..f];
                            for (d, &wv) in dr.iter_mut().zip(wr) {
                                *d += g * wv;
                            }
                        }
                    }
                    self.accumulate(*x, &dx);
                }
                if self.needs(*w) {
                    let xd = self.value(*x).data();
                    let mut dw = vec![0.0; o * f];
                    for i in 0..n {
                        for j in 0..o {
                            let g = dy[i * o + j];
                            if g == 0.0 {
                                continue;
                            }
                            let xr = &xd[i * f..][..f];
                            let dr = &mut dw[j * f..][..f];
                            for (d, &xv) in dr.iter_mut().zip(xr) {
                                *d += g * xv;
                            }
                        }
                    }
                    self.accumulate(*w, &dw);
                }
                if let Some(b) = b {
                    if self.needs(*b) {
                        let mut db = vec![0.0; o];
                        for i in 0..n {
                            for j in 0..o {
                                db[j] += dy[i * o + j];
                            }
                        }
                        self.accumulate(*b, &db);
                    }
                }
            }
            OpRecord::CrossEntropy { logits, out, targets, probs } => {
                let Some(dy) = self.grad_cloned(*out) else { return };
                if self.needs(*logits) {
                    let [n, k] = self.value(*logits).dims2().unwrap();
                    let scale = dy[0] / n as f64;
                    let mut dl = vec![0.0; n * k];
                    for i in 0..n {
                        for j in 0..k {
                            dl[i * k + j] = scale * (probs[i * k + j] - targets.prob(i, j));
                        }
                    }
                    self.accumulate(*logits, &dl);
                }
            }
            OpRecord::ConcatC { xs, out } => {
                let Some(dy) = self.grad_cloned(*out) else { return };
                let od = self.value(*out).dims4().unwrap();
                let plane = od[2] * od[3];
                let mut c_off = 0usize;
                for &v in xs {
                    let d = self.value(v).dims4().unwrap();
                    if self.needs(v) {
                        let rows = d[1] * plane;
                        let mut dx = vec![0.0; d[0] * rows];
                        for img in 0..d[0] {
                            let src = &dy[(img * od[1] + c_off) * plane..][..rows];
                            dx[img * rows..][..rows].copy_from_slice(src);
                        }
                        self.accumulate(v, &dx);
                    }
                    c_off += d[1];
                }
            }
            OpRecord::Add { a, b, out } => {
                let Some(dy) = self.grad_cloned(*out) else { return };
                if self.needs(*a) {
                    self.accumulate(*a, &dy);
                }
                if self.needs(*b) {
                    self.accumulate(*b, &dy);
                }
            }
            OpRecord::SignSte { x, out } => {
                let Some(dy) = self.grad_cloned(*out) else { return };
                if self.needs(*x) {
                    let dx = binconv::sign_ste_backward(self.value(*x).data(), &dy);
                    self.accumulate(*x, &dx);
                }
            }
            OpRecord::SoftmaxT { x, out, temp } => {
                let Some(dy) = self.grad_cloned(*out) else { return };
                if self.needs(*x) {
                    let p = self.value(*out).data();
                    let inner: f64 = dy.iter().zip(p).map(|(g, q)| g * q).sum();
                    let dx: Vec<f64> =
                        dy.iter().zip(p).map(|(g, q)| q * (g - inner) / temp).collect();
                    self.accumulate(*x, &dx);
                }
            }
            OpRecord::Mix { weights, xs, out } => {
                let Some(dy) = self.grad_cloned(*out) else { return };
                if self.needs(*weights) {
                    let mut dw = vec![0.0; xs.len()];
                    for (k, &v) in xs.iter().enumerate() {
                        let src = self.value(v).data();
                        let mut acc = 0.0;
                        for (g, &s) in dy.iter().zip(src) {
                            acc += g * s;
                        }
                        dw[k] = acc;
                    }
                    self.accumulate(*weights, &dw);
                }
                let wd = self.value(*weights).data().to_vec();
                for (k, &v) in xs.iter().enumerate() {
                    if self.needs(v) {
                        let dx: Vec<f64> = dy.iter().map(|g| g * wd[k]).collect();
                        self.accumulate(v, &dx);
                    }
                }
            }
            OpRecord::ChannelScale { x, scale, out } => {
                let Some(dy) = self.grad_cloned(*out) else { return };
                let xs = self.value(*x).dims4().unwrap();
                let plane = xs[2] * xs[3];
                let sd = self.value(*scale).data().to_vec();
                if self.needs(*x) {
                    let mut dx = vec![0.0; dy.len()];
                    for img in 0..xs[0] {
                        for ch in 0..xs[1] {
                            let base = (img * xs[1] + ch) * plane;
                            for i in 0..plane {
                                dx[base + i] = dy[base + i] * sd[ch];
                            }
                        }
                    }
                    self.accumulate(*x, &dx);
                }
                if self.needs(*scale) {
                    let xd = self.value(*x).data();
                    let mut ds = vec![0.0; sd.len()];
                    for img in 0..xs[0] {
                        for ch in 0..xs[1] {
                            let base = (img * xs[1] + ch) * plane;
                            let mut acc = 0.0;
                            for i in 0..plane {
                                acc += dy[base + i] * xd[base + i];
                            }
                            ds[ch] += acc;
                        }
                    }
                    self.accumulate(*scale, &ds);
                }
            }
            OpRecord::Abs { x, out } => {
                let Some(dy) = self.grad_cloned(*out) else { return };
                if self.needs(*x) {
                    let dx: Vec<f64> = dy
                        .iter()
                        .zip(self.value(*x).data())
                        .map(|(g, &v)| g * sign_val(v))
                        .collect();
                    self.accumulate(*x, &dx);
                }
            }
            OpRecord::Shift2d { x, out, down, right } => {
                let Some(dy) = self.grad_cloned(*out) else { return };
                if self.needs(*x) {
                    let [n, c, h, w] = self.value(*x).dims4().unwrap();
                    let mut dx = vec![0.0; dy.len()];
                    for img in 0..n {
                        for ch in 0..c {
                            let s = &dy[(img * c + ch) * h * w..][..h * w];
                            let d = &mut dx[(img * c + ch) * h * w..][..h * w];
                            for y in 0..h.saturating_sub(*down) {
                                for xx in 0..w.saturating_sub(*right) {
                                    d[(y + down) * w + xx + right] += s[y * w + xx];
                                }
                            }
                        }
                    }
                    self.accumulate(*x, &dx);
                }
            }
            OpRecord::GlobalAvgPool { x, out } => {
                let Some(dy) = self.grad_cloned(*out) else { return };
                if self.needs(*x) {
                    let [n, c, h, w] = self.value(*x).dims4().unwrap();
                    let plane = h * w;
                    let mut dx = vec![0.0; n * c * plane];
                    for i in 0..n * c {
                        let g = dy[i] / plane as f64;
                        for v in dx[i * plane..][..plane].iter_mut() {
                            *v = g;
                        }
                    }
                    self.accumulate(*x, &dx);
                }
            }
            OpRecord::Sum { x, out } => {
                let Some(dy) = self.grad_cloned(*out) else { return };
                if self.needs(*x) {
                    let dx = vec![dy[0]; self.value(*x).numel()];
                    self.accumulate(*x, &dx);
                }
            }
            OpRecord::SquareSum { x, out } => {
                let Some(dy) = self.grad_cloned(*out) else { return };
                if self.needs(*x) {
                    let dx: Vec<f64> =
                        self.value(*x).data().iter().map(|&v| 2.0 * v * dy[0]).collect();
                    self.accumulate(*x, &dx);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_twice_is_rejected() {
        let mut store = ParamStore::new();
        let p = store.add(Tensor::new(vec![1], vec![2.0]).unwrap(), ParamKind::Weight);
        let mut tape = Tape::new(&mut store);
        let v = tape.param(p);
        let loss = tape.square_sum(v).unwrap();
        tape.backward(loss).unwrap();
        assert!(matches!(tape.backward(loss), Err(Error::Tape(_))));
        tape.reset();
        let v = tape.param(p);
        let loss = tape.square_sum(v).unwrap();
        assert!(tape.backward(loss).is_ok());
    }

    #[test]
    fn gradients_accumulate_across_tapes() {
        // backward(f) then backward(g) equals backward(f + g)
        let data = vec![0.3, -0.7, 1.2];
        let mut store = ParamStore::new();
        let p = store.add(Tensor::new(vec![3], data.clone()).unwrap(), ParamKind::Weight);
        {
            let mut tape = Tape::new(&mut store);
            let v = tape.param(p);
            let f = tape.square_sum(v).unwrap();
            tape.backward(f).unwrap();
            tape.reset();
            let v = tape.param(p);
            let g = tape.sum(v).unwrap();
            tape.backward(g).unwrap();
        }
        let separate = store.get(p).grad().unwrap().to_vec();

        let mut store2 = ParamStore::new();
        let p2 = store2.add(Tensor::new(vec![3], data).unwrap(), ParamKind::Weight);
        {
            let mut tape = Tape::new(&mut store2);
            let v = tape.param(p2);
            let f = tape.square_sum(v).unwrap();
            let g = tape.sum(v).unwrap();
            let total = tape.add_scalars(f, g).unwrap();
            tape.backward(total).unwrap();
        }
        let joint = store2.get(p2).grad().unwrap().to_vec();
        for (a, b) in separate.iter().zip(&joint) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn uniform_cross_entropy_is_ln_k() {
        let mut store = ParamStore::new();
        let mut tape = Tape::new(&mut store);
        let logits = tape.constant(Tensor::new(vec![2, 5], vec![0.25; 10]).unwrap());
        let loss = tape.softmax_cross_entropy(logits, &Targets::Hard(vec![3, 0])).unwrap();
        assert!((tape.scalar_value(loss) - (5.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn softmax_temperature_sharpens() {
        let mut store = ParamStore::new();
        let mut tape = Tape::new(&mut store);
        let logits = tape.constant(Tensor::new(vec![2], vec![1.0, 0.0]).unwrap());
        let sharp = tape.softmax_t(logits, 0.2).unwrap();
        let vals = tape.value(sharp).data();
        assert!((vals[0] - 0.993307).abs() < 1e-6);
        assert!((vals[1] - 0.006693).abs() < 1e-6);
        let soft = tape.softmax_t(logits, 1.0).unwrap();
        let vals = tape.value(soft).data();
        assert!((vals[0] - 0.731059).abs() < 1e-6);
        assert!((vals[1] - 0.268941).abs() < 1e-6);
        assert!(tape.softmax_t(logits, 0.0).is_err());
    }

    #[test]
    fn prelu_with_unit_slope_is_identity() {
        let mut store = ParamStore::new();
        let slope = store.add(Tensor::new(vec![2], vec![1.0, 1.0]).unwrap(), ParamKind::Weight);
        let mut tape = Tape::new(&mut store);
        let x = tape.constant(Tensor::new(vec![1, 2, 1, 2], vec![-1.0, 2.0, 0.5, -3.0]).unwrap());
        let s = tape.param(slope);
        let y = tape.prelu(x, s).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }
}

impl Tape<'_> {
    /// Adds two scalar nodes; test and loss-combination helper.
    pub fn add_scalars(&mut self, a: Vid, b: Vid) -> Result<Vid> {
        if self.value(a).numel() != 1 || self.value(b).numel() != 1 {
            return Err(Error::Shape("add_scalars expects scalars".into()));
        }
        let val = self.scalar_value(a) + self.scalar_value(b);
        let needs = self.needs(a) || self.needs(b);
        let out = self.push_computed(Tensor::scalar(val), needs);
        self.records.push(OpRecord::Add { a, b, out });
        Ok(out)
    }
}

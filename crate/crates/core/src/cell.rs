//! Cell DAG, temperature-scaled continuous relaxation and the stackable
//! supernet.
//!
//! A cell has two input nodes fed by the previous two cells (through 1x1
//! preprocessing convolutions) and `n_nodes` intermediate nodes. Every edge
//! `(i, j)` with `i < j` mixes its candidate ops with
//! `softmax(alpha_edge / T)`; a node sums its incoming edges and the cell
//! output concatenates the intermediate nodes. Normal and reduction cells
//! keep separate alpha tables shared across all cells of that type.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::math;
use crate::ops::conv::ConvSpec;
use crate::space::{make_op, BnParams, DomainMode, GroupConfig, OpInstance, OpKind};
use crate::tape::{ParamId, ParamKind, ParamStore, Tape, Targets, Vid};
use crate::tensor::Tensor;
use crate::SeedRng;

/// Cell topology constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellConfig {
    /// Intermediate nodes per cell.
    pub n_nodes: usize,
    /// Input nodes (always 2 here).
    pub n_inputs: usize,
    /// How many intermediate nodes concatenate into the output.
    pub multiplier: usize,
    /// Whether this cell halves the spatial extent.
    pub reduction: bool,
}

/// `(from, to)` node pairs in canonical order: per intermediate node, all
/// predecessors in index order. Nodes 0 and 1 are the inputs.
pub fn edge_list(n_nodes: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for node in 0..n_nodes {
        let to = node + 2;
        for from in 0..to {
            edges.push((from, to));
        }
    }
    edges
}

/// Edges in a cell with `n_nodes` intermediate nodes.
pub fn edge_count(n_nodes: usize) -> usize {
    n_nodes * (n_nodes + 3) / 2
}

/// Candidate ops and their logits on one edge.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EdgeAlpha {
    pub ops: Vec<OpKind>,
    pub logits: Vec<f64>,
}

/// Architecture parameters: per-edge logits for both cell types plus their
/// temperatures.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ArchParams {
    pub normal: Vec<EdgeAlpha>,
    pub reduce: Vec<EdgeAlpha>,
    pub t_normal: f64,
    pub t_reduce: f64,
}

impl ArchParams {
    /// Fresh logits over the full op set: zeros plus uniform noise in
    /// `[-1e-3, 1e-3]` to break symmetry deterministically under the seed.
    pub fn init(n_nodes: usize, t_normal: f64, t_reduce: f64, rng: &mut SeedRng) -> Result<Self> {
        if !(t_normal > 0.0) || !(t_reduce > 0.0) {
            return Err(Error::Invalid(format!(
                "temperatures must be positive, got {} / {}",
                t_normal, t_reduce
            )));
        }
        let edges = edge_count(n_nodes);
        let table = |rng: &mut SeedRng| -> Vec<EdgeAlpha> {
            (0..edges)
                .map(|_| EdgeAlpha {
                    ops: OpKind::ALL.to_vec(),
                    logits: (0..OpKind::ALL.len()).map(|_| rng.random_range(-1e-3..1e-3)).collect(),
                })
                .collect()
        };
        let normal = table(rng);
        let reduce = table(rng);
        Ok(ArchParams { normal, reduce, t_normal, t_reduce })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_normal > 0.0) || !(self.t_reduce > 0.0) {
            return Err(Error::Invalid("temperatures must be positive".into()));
        }
        for edge in self.normal.iter().chain(&self.reduce) {
            if edge.ops.len() != edge.logits.len() || edge.ops.is_empty() {
                return Err(Error::Invalid("edge op/logit tables disagree".into()));
            }
            if edge.logits.iter().any(|v| !v.is_finite()) {
                return Err(Error::Invalid("non-finite architecture logit".into()));
            }
        }
        Ok(())
    }

    /// Softmax probabilities for every edge of one cell type.
    pub fn edge_probs(&self, reduction: bool) -> Vec<Vec<f64>> {
        let (table, temp) = if reduction {
            (&self.reduce, self.t_reduce)
        } else {
            (&self.normal, self.t_normal)
        };
        table.iter().map(|e| softmax_scaled(&e.logits, temp)).collect()
    }

    /// Mean probability mass the listed op kinds hold across the edges of
    /// one cell type.
    pub fn mean_prob_of(&self, kinds: &[OpKind], reduction: bool) -> f64 {
        let table = if reduction { &self.reduce } else { &self.normal };
        let probs = self.edge_probs(reduction);
        let mut total = 0.0;
        for (edge, p) in table.iter().zip(&probs) {
            for (op, &prob) in edge.ops.iter().zip(p) {
                if kinds.contains(op) {
                    total += prob;
                }
            }
        }
        total / table.len() as f64
    }
}

/// Numerically-stable `softmax(logits / temp)`.
pub fn softmax_scaled(logits: &[f64], temp: f64) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&v| math::exp((v - max) / temp)).collect();
    let denom: f64 = out.iter().sum();
    for v in out.iter_mut() {
        *v /= denom;
    }
    out
}

/// Shannon entropy (nats) of each edge's mixing distribution at the given
/// temperature.
pub fn arch_entropy(table: &[EdgeAlpha], temp: f64) -> Vec<f64> {
    table
        .iter()
        .map(|edge| {
            let p = softmax_scaled(&edge.logits, temp);
            -p.iter().filter(|&&q| q > 0.0).map(|&q| q * math::ln(q)).sum::<f64>()
        })
        .collect()
}

/// Continuous relaxation of one edge: `sum_o softmax(alpha/T)_o * op_o(x)`.
pub fn mixed_edge_forward(
    tape: &mut Tape,
    x: Vid,
    ops: &[OpInstance],
    alpha_edge: Vid,
    temp: f64,
    training: bool,
) -> Result<Vid> {
    if ops.is_empty() || tape.value(alpha_edge).numel() != ops.len() {
        return Err(Error::Shape(format!(
            "{} logits for {} candidate ops",
            tape.value(alpha_edge).numel(),
            ops.len()
        )));
    }
    let weights = tape.softmax_t(alpha_edge, temp)?;
    mixed_edge_with_weights(tape, x, ops, weights, training)
}

/// Mixing with an already-softmaxed weight vector (shared across cells).
pub fn mixed_edge_with_weights(
    tape: &mut Tape,
    x: Vid,
    ops: &[OpInstance],
    weights: Vid,
    training: bool,
) -> Result<Vid> {
    let mut outputs = Vec::with_capacity(ops.len());
    for op in ops {
        outputs.push(op.forward(tape, x, training)?);
    }
    tape.mix(weights, &outputs)
}

/// Input preprocessing: 1x1 convolution or, after a reduction, the
/// spatial-halving factorized reduce.
///
/// Real-valued by default; evaluation networks may binarize these too, in
/// which case the convolution runs on the packed sign kernel with a
/// learnable scaling factor.
#[derive(Debug, Clone)]
pub enum Preprocess {
    Conv { w: ParamId, bn: BnParams, alpha: Option<crate::binconv::ScaleFactor> },
    FactorizedReduce {
        w1: ParamId,
        w2: ParamId,
        bn: BnParams,
        alphas: Option<(crate::binconv::ScaleFactor, crate::binconv::ScaleFactor)>,
    },
}

impl Preprocess {
    /// Real-valued 1x1 preprocessing.
    pub fn conv(store: &mut ParamStore, rng: &mut SeedRng, c_in: usize, c_out: usize, affine: bool) -> Self {
        Self::conv_in_domain(store, rng, c_in, c_out, affine, crate::space::Domain::Real)
    }

    pub fn conv_in_domain(
        store: &mut ParamStore,
        rng: &mut SeedRng,
        c_in: usize,
        c_out: usize,
        affine: bool,
        domain: crate::space::Domain,
    ) -> Self {
        let w = crate::space::conv_weight_init(store, rng, [c_out, c_in, 1, 1]);
        let alpha = (domain == crate::space::Domain::Binary)
            .then(|| crate::binconv::ScaleFactor::init(store, c_out, 1.0));
        Preprocess::Conv { w, bn: BnParams::init(store, c_out, affine), alpha }
    }

    /// Real-valued factorized reduce.
    pub fn factorized_reduce(
        store: &mut ParamStore,
        rng: &mut SeedRng,
        c_in: usize,
        c_out: usize,
        affine: bool,
    ) -> Result<Self> {
        Self::factorized_reduce_in_domain(store, rng, c_in, c_out, affine, crate::space::Domain::Real)
    }

    pub fn factorized_reduce_in_domain(
        store: &mut ParamStore,
        rng: &mut SeedRng,
        c_in: usize,
        c_out: usize,
        affine: bool,
        domain: crate::space::Domain,
    ) -> Result<Self> {
        if c_out % 2 != 0 {
            return Err(Error::Invalid(format!(
                "factorized reduce needs even output channels, got {}",
                c_out
            )));
        }
        let w1 = crate::space::conv_weight_init(store, rng, [c_out / 2, c_in, 1, 1]);
        let w2 = crate::space::conv_weight_init(store, rng, [c_out / 2, c_in, 1, 1]);
        let alphas = (domain == crate::space::Domain::Binary).then(|| {
            (
                crate::binconv::ScaleFactor::init(store, c_out / 2, 1.0),
                crate::binconv::ScaleFactor::init(store, c_out / 2, 1.0),
            )
        });
        Ok(Preprocess::FactorizedReduce { w1, w2, bn: BnParams::init(store, c_out, affine), alphas })
    }

    pub fn forward(&self, tape: &mut Tape, x: Vid, training: bool) -> Result<Vid> {
        match self {
            Preprocess::Conv { w, bn, alpha } => {
                let wv = tape.param(*w);
                let y = match alpha {
                    None => tape.conv2d(x, wv, ConvSpec::plain(0))?,
                    Some(a) => {
                        let av = tape.param(a.raw_id());
                        tape.binary_conv2d(x, wv, av, ConvSpec::plain(0))?
                    }
                };
                bn.forward(tape, y, training)
            }
            Preprocess::FactorizedReduce { w1, w2, bn, alphas } => {
                let spec = ConvSpec { groups: 1, stride: 2, padding: 0, dilation: 1 };
                let shifted = tape.shift2d(x, 1, 1)?;
                let w1v = tape.param(*w1);
                let w2v = tape.param(*w2);
                let (p1, p2) = match alphas {
                    None => (tape.conv2d(x, w1v, spec)?, tape.conv2d(shifted, w2v, spec)?),
                    Some((a1, a2)) => {
                        let a1v = tape.param(a1.raw_id());
                        let a2v = tape.param(a2.raw_id());
                        (
                            tape.binary_conv2d(x, w1v, a1v, spec)?,
                            tape.binary_conv2d(shifted, w2v, a2v, spec)?,
                        )
                    }
                };
                let cat = tape.concat_channels(&[p1, p2])?;
                bn.forward(tape, cat, training)
            }
        }
    }
}

/// One supernet cell: preprocessing plus candidate ops on every edge.
#[derive(Debug)]
pub struct SearchCell {
    pub config: CellConfig,
    pre0: Preprocess,
    pre1: Preprocess,
    /// Candidate ops per edge, edge order as in [`edge_list`].
    edges: Vec<Vec<OpInstance>>,
}

impl SearchCell {
    /// Builds a cell at width `channels` with the given candidate op kinds
    /// per edge.
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        store: &mut ParamStore,
        rng: &mut SeedRng,
        config: CellConfig,
        ops_per_edge: &[Vec<OpKind>],
        channels: usize,
        c_pp: usize,
        c_p: usize,
        prev_reduction: bool,
        mode: DomainMode,
        group_config: GroupConfig,
    ) -> Result<Self> {
        let edges = edge_list(config.n_nodes);
        if ops_per_edge.len() != edges.len() {
            return Err(Error::Invalid(format!(
                "{} edge op lists for {} edges",
                ops_per_edge.len(),
                edges.len()
            )));
        }
        let pre0 = if prev_reduction {
            Preprocess::factorized_reduce(store, rng, c_pp, channels, false)?
        } else {
            Preprocess::conv(store, rng, c_pp, channels, false)
        };
        let pre1 = Preprocess::conv(store, rng, c_p, channels, false);
        let gc = group_config.scaled_to(channels)?;
        let mut edge_ops = Vec::with_capacity(edges.len());
        for (edge_idx, &(from, _)) in edges.iter().enumerate() {
            let stride = if config.reduction && from < 2 { 2 } else { 1 };
            let mut ops = Vec::with_capacity(ops_per_edge[edge_idx].len());
            for &kind in &ops_per_edge[edge_idx] {
                ops.push(make_op(store, rng, kind, channels, stride, mode, gc, false)?);
            }
            edge_ops.push(ops);
        }
        Ok(SearchCell { config, pre0, pre1, edges: edge_ops })
    }

    /// Node-by-node evaluation; `edge_weights[k]` is the softmaxed mixing
    /// vector for edge `k`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        s0: Vid,
        s1: Vid,
        edge_weights: &[Vid],
        training: bool,
    ) -> Result<Vid> {
        if edge_weights.len() != self.edges.len() {
            return Err(Error::Shape(format!(
                "{} edge weights for {} edges",
                edge_weights.len(),
                self.edges.len()
            )));
        }
        let p0 = self.pre0.forward(tape, s0, training)?;
        let p1 = self.pre1.forward(tape, s1, training)?;
        let mut states = vec![p0, p1];
        let mut edge_idx = 0;
        for _node in 0..self.config.n_nodes {
            let mut acc: Option<Vid> = None;
            for from in 0..states.len() {
                let mixed = mixed_edge_with_weights(
                    tape,
                    states[from],
                    &self.edges[edge_idx],
                    edge_weights[edge_idx],
                    training,
                )?;
                acc = Some(match acc {
                    None => mixed,
                    Some(a) => tape.add(a, mixed)?,
                });
                edge_idx += 1;
            }
            states.push(acc.expect("every node has at least two inputs"));
        }
        let keep = &states[states.len() - self.config.multiplier..];
        tape.concat_channels(keep)
    }
}

/// Stem: one real-valued 3x3 convolution plus affine batch norm.
#[derive(Debug, Clone)]
pub struct Stem {
    pub w: ParamId,
    pub bn: BnParams,
    pub stride: usize,
}

impl Stem {
    pub fn build(
        store: &mut ParamStore,
        rng: &mut SeedRng,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
    ) -> Self {
        let w = crate::space::conv_weight_init(store, rng, [out_channels, in_channels, 3, 3]);
        Stem { w, bn: BnParams::init(store, out_channels, true), stride }
    }

    pub fn forward(&self, tape: &mut Tape, x: Vid, training: bool) -> Result<Vid> {
        let wv = tape.param(self.w);
        let spec = ConvSpec { groups: 1, stride: self.stride, padding: 1, dilation: 1 };
        let y = tape.conv2d(x, wv, spec)?;
        self.bn.forward(tape, y, training)
    }
}

/// Global average pooling plus a real-valued linear classifier.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub w: ParamId,
    pub b: ParamId,
}

impl Classifier {
    pub fn build(store: &mut ParamStore, rng: &mut SeedRng, features: usize, classes: usize) -> Self {
        let w = crate::space::linear_weight_init(store, rng, classes, features);
        let b = store.add(Tensor::zeros(&[classes]), ParamKind::Weight);
        Classifier { w, b }
    }

    pub fn forward(&self, tape: &mut Tape, x: Vid) -> Result<Vid> {
        let pooled = tape.global_avg_pool(x)?;
        let wv = tape.param(self.w);
        let bv = tape.param(self.b);
        tape.linear(pooled, wv, Some(bv))
    }
}

/// Reduction-cell positions for a stack of `cells`: one and two thirds in.
pub fn reduction_positions(cells: usize) -> [usize; 2] {
    [cells / 3, 2 * cells / 3]
}

/// Supernet configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupernetConfig {
    pub cells: usize,
    pub n_nodes: usize,
    pub multiplier: usize,
    pub group_config: GroupConfig,
    pub stem_multiplier: usize,
    pub stem_stride: usize,
    pub in_channels: usize,
    pub num_classes: usize,
    pub mode: DomainMode,
}

impl SupernetConfig {
    /// Small CPU-friendly defaults: 12-channel cells, halved stem resolution.
    pub fn desk(cells: usize, num_classes: usize, mode: DomainMode) -> Self {
        SupernetConfig {
            cells,
            n_nodes: 4,
            multiplier: 4,
            group_config: GroupConfig::desk(),
            stem_multiplier: 1,
            stem_stride: 2,
            in_channels: 3,
            num_classes,
            mode,
        }
    }
}

/// Outcome of one supernet forward (and optional backward) pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardStats {
    pub loss: f64,
    pub correct: usize,
    pub examples: usize,
}

/// The continuous-relaxation network: every candidate op on every edge,
/// weighted by `softmax(alpha / T)`.
pub struct Supernet {
    pub config: SupernetConfig,
    pub store: ParamStore,
    stem: Stem,
    cells: Vec<SearchCell>,
    pub classifier: Classifier,
    arch_normal: Vec<ParamId>,
    arch_reduce: Vec<ParamId>,
    normal_ops: Vec<Vec<OpKind>>,
    reduce_ops: Vec<Vec<OpKind>>,
    pub t_normal: f64,
    pub t_reduce: f64,
}

impl Supernet {
    /// Builds the stack with freshly initialized weights; the architecture
    /// logits are copied from `arch`.
    pub fn build(config: SupernetConfig, arch: &ArchParams, rng: &mut SeedRng) -> Result<Self> {
        arch.validate()?;
        let expected = edge_count(config.n_nodes);
        if arch.normal.len() != expected || arch.reduce.len() != expected {
            return Err(Error::Invalid(format!(
                "architecture tables have {}/{} edges, cell topology needs {}",
                arch.normal.len(),
                arch.reduce.len(),
                expected
            )));
        }
        let mut store = ParamStore::new();
        let c_init = config.group_config.channels();
        let stem_c = config.stem_multiplier * c_init;
        let stem = Stem::build(&mut store, rng, config.in_channels, stem_c, config.stem_stride);

        let add_table = |store: &mut ParamStore, table: &[EdgeAlpha]| -> Vec<ParamId> {
            table
                .iter()
                .map(|e| {
                    store.add(
                        Tensor::new(vec![e.logits.len()], e.logits.clone()).expect("logit shape"),
                        ParamKind::Arch,
                    )
                })
                .collect()
        };
        let arch_normal = add_table(&mut store, &arch.normal);
        let arch_reduce = add_table(&mut store, &arch.reduce);
        let normal_ops: Vec<Vec<OpKind>> = arch.normal.iter().map(|e| e.ops.clone()).collect();
        let reduce_ops: Vec<Vec<OpKind>> = arch.reduce.iter().map(|e| e.ops.clone()).collect();

        let reductions = reduction_positions(config.cells);
        let mut cells = Vec::with_capacity(config.cells);
        let (mut c_pp, mut c_p) = (stem_c, stem_c);
        let mut c_curr = c_init;
        let mut prev_reduction = false;
        for idx in 0..config.cells {
            let reduction = reductions.contains(&idx);
            if reduction {
                c_curr *= 2;
            }
            let cfg = CellConfig {
                n_nodes: config.n_nodes,
                n_inputs: 2,
                multiplier: config.multiplier,
                reduction,
            };
            let ops_table = if reduction { &reduce_ops } else { &normal_ops };
            let cell = SearchCell::build(
                &mut store,
                rng,
                cfg,
                ops_table,
                c_curr,
                c_pp,
                c_p,
                prev_reduction,
                config.mode,
                config.group_config,
            )?;
            cells.push(cell);
            c_pp = c_p;
            c_p = config.multiplier * c_curr;
            prev_reduction = reduction;
        }
        let classifier = Classifier::build(&mut store, rng, c_p, config.num_classes);
        Ok(Supernet {
            config,
            store,
            stem,
            cells,
            classifier,
            arch_normal,
            arch_reduce,
            normal_ops,
            reduce_ops,
            t_normal: arch.t_normal,
            t_reduce: arch.t_reduce,
        })
    }

    fn forward_internal(&mut self, images: Tensor, training: bool) -> Result<(Tape<'_>, Vid)> {
        let Supernet {
            store,
            stem,
            cells,
            classifier,
            arch_normal,
            arch_reduce,
            t_normal,
            t_reduce,
            ..
        } = self;
        let mut tape = Tape::new(store);
        let x = tape.constant(images);
        let s = stem.forward(&mut tape, x, training)?;
        let normal_w = register_edge_weights(&mut tape, arch_normal, *t_normal)?;
        let reduce_w = register_edge_weights(&mut tape, arch_reduce, *t_reduce)?;
        let (mut s0, mut s1) = (s, s);
        for cell in cells.iter() {
            let weights = if cell.config.reduction { &reduce_w } else { &normal_w };
            let out = cell.forward(&mut tape, s0, s1, weights, training)?;
            s0 = s1;
            s1 = out;
        }
        let logits = classifier.forward(&mut tape, s1)?;
        Ok((tape, logits))
    }

    /// Forward pass over a batch; computes the loss when targets are given
    /// and runs backward when requested. Gradients land in `self.store`.
    pub fn run_batch(
        &mut self,
        images: Tensor,
        targets: Option<&Targets>,
        training: bool,
        do_backward: bool,
    ) -> Result<ForwardStats> {
        let examples = images.dims4()?[0];
        let (mut tape, logits) = self.forward_internal(images, training)?;
        let mut stats = ForwardStats { loss: 0.0, correct: 0, examples };
        if let Some(t) = targets {
            let loss = tape.softmax_cross_entropy(logits, t)?;
            stats.loss = tape.scalar_value(loss);
            stats.correct = count_correct(tape.value(logits), t);
            if do_backward {
                tape.backward(loss)?;
            }
        }
        Ok(stats)
    }

    /// Forward only, returning the logits tensor.
    pub fn logits(&mut self, images: Tensor, training: bool) -> Result<Tensor> {
        let (tape, logits) = self.forward_internal(images, training)?;
        Ok(tape.value(logits).clone())
    }

    /// Reads the current logits back out of the store.
    pub fn arch_params(&self) -> ArchParams {
        let read = |ids: &[ParamId], ops: &[Vec<OpKind>]| {
            ids.iter()
                .zip(ops)
                .map(|(&id, kinds)| EdgeAlpha {
                    ops: kinds.clone(),
                    logits: self.store.get(id).data().to_vec(),
                })
                .collect()
        };
        ArchParams {
            normal: read(&self.arch_normal, &self.normal_ops),
            reduce: read(&self.arch_reduce, &self.reduce_ops),
            t_normal: self.t_normal,
            t_reduce: self.t_reduce,
        }
    }

    /// Store ids of the architecture logits.
    pub fn arch_ids(&self) -> Vec<ParamId> {
        self.arch_normal.iter().chain(&self.arch_reduce).copied().collect()
    }

    /// Store ids of the network weights.
    pub fn weight_ids(&self) -> Vec<ParamId> {
        self.store.ids_of(ParamKind::Weight)
    }
}

fn register_edge_weights(tape: &mut Tape, ids: &[ParamId], temp: f64) -> Result<Vec<Vid>> {
    ids.iter()
        .map(|&id| {
            let v = tape.param(id);
            tape.softmax_t(v, temp)
        })
        .collect()
}

/// Correct predictions: argmax of the logits against the target class
/// (argmax of the target vector for soft targets).
pub fn count_correct(logits: &Tensor, targets: &Targets) -> usize {
    let [n, k] = match logits.dims2() {
        Ok(d) => d,
        Err(_) => return 0,
    };
    let data = logits.data();
    let mut correct = 0;
    for i in 0..n {
        let row = &data[i * k..][..k];
        let mut best = 0usize;
        for j in 1..k {
            if row[j] > row[best] {
                best = j;
            }
        }
        let label = match targets {
            Targets::Hard(l) => l[i],
            Targets::Soft { probs, classes } => {
                let trow = &probs[i * classes..][..*classes];
                let mut arg = 0usize;
                for j in 1..*classes {
                    if trow[j] > trow[arg] {
                        arg = j;
                    }
                }
                arg
            }
        };
        if best == label {
            correct += 1;
        }
    }
    correct
}

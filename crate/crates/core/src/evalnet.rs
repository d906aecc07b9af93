//! Derived-network construction, training and the two-phase binarization
//! protocol.
//!
//! The network stacks a genotype's cells with a real-valued stem and
//! classifier; reduction cells sit at one and two thirds of the depth and
//! double the width. The same layout walk that builds the network also
//! produces a flat layer plan for the static cost model.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::cell::{reduction_positions, Classifier, Preprocess};
use crate::data::{epoch_batches, make_batch, AugmentPolicy, Dataset};
use crate::error::{Error, Result};
use crate::genotype::Genotype;
use crate::optim::{cosine_lr, Adam, AdamConfig, Sgd, SgdConfig};
use crate::ops::conv::ConvSpec;
use crate::ops::pool::pool3_out_extent;
use crate::space::{make_op, BnParams, Domain, DomainMode, GroupConfig, OpInstance, OpKind};
use crate::tape::{ParamKind, ParamStore, Tape, Targets, Vid};
use crate::tensor::Tensor;
use crate::SeedRng;

/// Stem variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum StemKind {
    /// One 3x3 convolution to `multiplier x` the cell width.
    Cifar { multiplier: usize, stride: usize },
    /// Two stride-2 3x3 convolutions (the second grouped) plus a third
    /// stride-2 convolution feeding the second cell input.
    ImageNet { second_conv_groups: usize },
}

/// Evaluation-network configuration.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalNetConfig {
    pub cells: usize,
    pub group_config: GroupConfig,
    pub stem: StemKind,
    pub in_channels: usize,
    pub num_classes: usize,
    pub mode: DomainMode,
    /// When set, preprocessing and downsampling convolutions inside the
    /// cell fabric are binarized too; otherwise they stay real-valued.
    pub binarize_aux: bool,
    pub input_side: usize,
}

impl EvalNetConfig {
    /// 20 cells, 36 channels in 12 groups, CIFAR-scale input.
    pub fn paper_cifar(num_classes: usize, mode: DomainMode) -> Self {
        EvalNetConfig {
            cells: 20,
            group_config: GroupConfig::paper_cifar(),
            stem: StemKind::Cifar { multiplier: 3, stride: 1 },
            in_channels: 3,
            num_classes,
            mode,
            binarize_aux: false,
            input_side: 32,
        }
    }

    /// 14 cells, 80 channels in 16 groups, 224px input, binary fabric.
    pub fn paper_imagenet(num_classes: usize, mode: DomainMode) -> Self {
        EvalNetConfig {
            cells: 14,
            group_config: GroupConfig::paper_imagenet(),
            stem: StemKind::ImageNet { second_conv_groups: 4 },
            in_channels: 3,
            num_classes,
            mode,
            binarize_aux: true,
            input_side: 224,
        }
    }

    /// Small CPU-scale network.
    pub fn toy(cells: usize, num_classes: usize, mode: DomainMode) -> Self {
        EvalNetConfig {
            cells,
            group_config: GroupConfig::desk(),
            stem: StemKind::Cifar { multiplier: 1, stride: 2 },
            in_channels: 3,
            num_classes,
            mode,
            binarize_aux: false,
            input_side: 32,
        }
    }
}

/// Spatial/channel bookkeeping for one cell position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellLayout {
    pub index: usize,
    pub reduction: bool,
    pub prev_reduction: bool,
    pub channels: usize,
    pub c_pp: usize,
    pub c_p: usize,
    /// Spatial side of the `s0` input.
    pub side_pp: usize,
    /// Spatial side of the `s1` input.
    pub side_p: usize,
    /// Spatial side of the cell output.
    pub side_out: usize,
}

/// Stem output description plus per-cell layouts and the classifier input.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkLayout {
    pub cells: Vec<CellLayout>,
    pub final_features: usize,
}

/// Computes the channel/spatial progression of the whole stack.
pub fn network_layout(cfg: &EvalNetConfig) -> Result<NetworkLayout> {
    let c_init = cfg.group_config.channels();
    let (mut c_pp, mut c_p, mut side_pp, mut side_p, mut prev_reduction) = match cfg.stem {
        StemKind::Cifar { multiplier, stride } => {
            let side = conv_out_side(cfg.input_side, stride);
            (multiplier * c_init, multiplier * c_init, side, side, false)
        }
        StemKind::ImageNet { .. } => {
            let s0_side = conv_out_side(conv_out_side(cfg.input_side, 2), 2);
            let s1_side = conv_out_side(s0_side, 2);
            (c_init, c_init, s0_side, s1_side, true)
        }
    };
    let reductions = reduction_positions(cfg.cells);
    let mut c_curr = c_init;
    let mut cells = Vec::with_capacity(cfg.cells);
    for index in 0..cfg.cells {
        let reduction = reductions.contains(&index);
        if reduction {
            c_curr *= 2;
        }
        cfg.group_config.scaled_to(c_curr)?;
        let side_out = if reduction { pool3_out_extent(side_p, 2) } else { side_p };
        cells.push(CellLayout {
            index,
            reduction,
            prev_reduction,
            channels: c_curr,
            c_pp,
            c_p,
            side_pp,
            side_p,
            side_out,
        });
        c_pp = c_p;
        c_p = 4 * c_curr;
        side_pp = side_p;
        side_p = side_out;
        prev_reduction = reduction;
    }
    Ok(NetworkLayout { cells, final_features: c_p })
}

fn conv_out_side(side: usize, stride: usize) -> usize {
    // 3x3 kernel, padding 1.
    (side - 1) / stride + 1
}

// ── static layer plan ────────────────────────────────────────────────

/// One plannable layer; only convolutions and the linear head carry cost.
#[derive(Debug, Clone, PartialEq)]
pub enum PlannedLayer {
    Conv {
        name: String,
        cin: usize,
        cout: usize,
        groups: usize,
        k: usize,
        side_out: usize,
        domain: Domain,
        params: usize,
    },
    Linear {
        name: String,
        in_features: usize,
        out_features: usize,
        params: usize,
    },
    ZeroCost {
        name: String,
        params: usize,
    },
}

impl PlannedLayer {
    pub fn name(&self) -> &str {
        match self {
            PlannedLayer::Conv { name, .. }
            | PlannedLayer::Linear { name, .. }
            | PlannedLayer::ZeroCost { name, .. } => name,
        }
    }

    pub fn params(&self) -> usize {
        match self {
            PlannedLayer::Conv { params, .. }
            | PlannedLayer::Linear { params, .. }
            | PlannedLayer::ZeroCost { params, .. } => *params,
        }
    }
}

/// Walks a genotype at the given configuration into a flat layer plan.
pub fn plan_network(genotype: &Genotype, cfg: &EvalNetConfig) -> Result<Vec<PlannedLayer>> {
    genotype.validate()?;
    let layout = network_layout(cfg)?;
    let c_init = cfg.group_config.channels();
    let aux_domain = if cfg.binarize_aux { Domain::Binary } else { Domain::Real };
    let mut plan = Vec::new();
    match cfg.stem {
        StemKind::Cifar { multiplier, stride } => {
            let side = conv_out_side(cfg.input_side, stride);
            let cout = multiplier * c_init;
            plan.push(PlannedLayer::Conv {
                name: "stem.conv".into(),
                cin: cfg.in_channels,
                cout,
                groups: 1,
                k: 3,
                side_out: side,
                domain: Domain::Real,
                params: cfg.in_channels * cout * 9 + 2 * cout,
            });
        }
        StemKind::ImageNet { second_conv_groups } => {
            let half = c_init / 2;
            let side0 = conv_out_side(cfg.input_side, 2);
            plan.push(PlannedLayer::Conv {
                name: "stem0.conv1".into(),
                cin: cfg.in_channels,
                cout: half,
                groups: 1,
                k: 3,
                side_out: side0,
                domain: Domain::Real,
                params: cfg.in_channels * half * 9 + 2 * half + half,
            });
            let side1 = conv_out_side(side0, 2);
            plan.push(PlannedLayer::Conv {
                name: "stem0.conv2".into(),
                cin: half,
                cout: c_init,
                groups: second_conv_groups,
                k: 3,
                side_out: side1,
                domain: Domain::Real,
                params: (half / second_conv_groups) * c_init * 9 + 2 * c_init,
            });
            let side2 = conv_out_side(side1, 2);
            plan.push(PlannedLayer::Conv {
                name: "stem1.conv".into(),
                cin: c_init,
                cout: c_init,
                groups: 1,
                k: 3,
                side_out: side2,
                domain: Domain::Real,
                params: c_init * c_init * 9 + 2 * c_init + c_init,
            });
        }
    }
    for cell in &layout.cells {
        let prefix = format!("cell{}", cell.index);
        plan_preprocess(&mut plan, &format!("{}.pre0", prefix), cell.c_pp, cell.channels, cell.side_p, cell.prev_reduction, aux_domain);
        plan_preprocess(&mut plan, &format!("{}.pre1", prefix), cell.c_p, cell.channels, cell.side_p, false, aux_domain);
        let table = if cell.reduction { &genotype.reduce } else { &genotype.normal };
        let gc = cfg.group_config.scaled_to(cell.channels)?;
        for (pair_idx, (op, input)) in table.iter().enumerate() {
            let node = 2 + pair_idx / 2;
            let name = format!("{}.node{}.{:?}", prefix, node, op).to_lowercase();
            let stride2 = cell.reduction && *input < 2;
            plan_op(&mut plan, &name, *op, cell.channels, gc.groups, cell.side_out, stride2, cfg.mode, aux_domain);
        }
    }
    plan.push(PlannedLayer::Linear {
        name: "classifier".into(),
        in_features: layout.final_features,
        out_features: cfg.num_classes,
        params: layout.final_features * cfg.num_classes + cfg.num_classes,
    });
    Ok(plan)
}

fn plan_preprocess(
    plan: &mut Vec<PlannedLayer>,
    name: &str,
    cin: usize,
    cout: usize,
    side_out: usize,
    factorized: bool,
    domain: Domain,
) {
    if factorized {
        // Two stride-2 1x1 paths, each half the output channels.
        plan.push(PlannedLayer::Conv {
            name: format!("{}.fr", name),
            cin,
            cout,
            groups: 1,
            k: 1,
            side_out,
            domain,
            params: 2 * (cin * (cout / 2)) + 2 * cout,
        });
    } else {
        plan.push(PlannedLayer::Conv {
            name: name.into(),
            cin,
            cout,
            groups: 1,
            k: 1,
            side_out,
            domain,
            params: cin * cout + 2 * cout,
        });
    }
}

#[allow(clippy::too_many_arguments)]
fn plan_op(
    plan: &mut Vec<PlannedLayer>,
    name: &str,
    op: OpKind,
    channels: usize,
    groups: usize,
    side_out: usize,
    stride2: bool,
    mode: DomainMode,
    aux_domain: Domain,
) {
    match op {
        OpKind::Zero | OpKind::MaxPool3 | OpKind::AvgPool3 => {
            plan.push(PlannedLayer::ZeroCost { name: name.into(), params: 0 });
        }
        OpKind::Identity => {
            if stride2 {
                plan.push(PlannedLayer::Conv {
                    name: format!("{}.fr", name),
                    cin: channels,
                    cout: channels,
                    groups: 1,
                    k: 1,
                    side_out,
                    domain: aux_domain,
                    params: channels * channels + 2 * channels,
                });
            } else {
                plan.push(PlannedLayer::ZeroCost { name: name.into(), params: 0 });
            }
        }
        _ => {
            let (k, _, _) = op.conv_geometry().expect("conv kind");
            let cg = channels / groups;
            let alpha = if mode.weights == Domain::Binary { channels } else { 0 };
            // BN affine + PReLU slope + optional scale.
            let params = k * k * cg * channels + 2 * channels + channels + alpha;
            plan.push(PlannedLayer::Conv {
                name: name.into(),
                cin: channels,
                cout: channels,
                groups,
                k,
                side_out,
                domain: mode.weights,
                params,
            });
        }
    }
}

/// Sum of learnable parameters across the plan.
pub fn plan_params(plan: &[PlannedLayer]) -> usize {
    plan.iter().map(PlannedLayer::params).sum()
}

// ── materialized network ─────────────────────────────────────────────

#[derive(Debug)]
enum EvalStem {
    Cifar {
        stem: crate::cell::Stem,
    },
    ImageNet {
        w1: crate::tape::ParamId,
        bn1: BnParams,
        slope1: crate::tape::ParamId,
        w2: crate::tape::ParamId,
        bn2: BnParams,
        second_conv_groups: usize,
        slope2: crate::tape::ParamId,
        w3: crate::tape::ParamId,
        bn3: BnParams,
    },
}

/// One derived cell: two chosen ops per intermediate node.
#[derive(Debug)]
pub struct EvalCell {
    pre0: Preprocess,
    pre1: Preprocess,
    ops: Vec<(OpInstance, usize)>,
    concat: Vec<usize>,
    n_nodes: usize,
}

impl EvalCell {
    #[allow(clippy::too_many_arguments)]
    fn build(
        store: &mut ParamStore,
        rng: &mut SeedRng,
        table: &[(OpKind, usize)],
        concat: &[usize],
        layout: &CellLayout,
        mode: DomainMode,
        group_config: GroupConfig,
        binarize_aux: bool,
    ) -> Result<Self> {
        let aux_domain = if binarize_aux { Domain::Binary } else { Domain::Real };
        let pre0 = if layout.prev_reduction {
            Preprocess::factorized_reduce_in_domain(store, rng, layout.c_pp, layout.channels, true, aux_domain)?
        } else {
            Preprocess::conv_in_domain(store, rng, layout.c_pp, layout.channels, true, aux_domain)
        };
        let pre1 = Preprocess::conv_in_domain(store, rng, layout.c_p, layout.channels, true, aux_domain);
        let gc = group_config.scaled_to(layout.channels)?;
        let mut ops = Vec::with_capacity(table.len());
        for (pair_idx, (kind, input)) in table.iter().enumerate() {
            let node = 2 + pair_idx / 2;
            if *input >= node {
                return Err(Error::Genotype(format!("node {} reads from node {}", node, input)));
            }
            let stride = if layout.reduction && *input < 2 { 2 } else { 1 };
            let op = make_op(store, rng, *kind, layout.channels, stride, mode, gc, true)?;
            ops.push((op, *input));
        }
        Ok(EvalCell {
            pre0,
            pre1,
            ops,
            concat: concat.to_vec(),
            n_nodes: table.len() / 2,
        })
    }

    fn forward(&self, tape: &mut Tape, s0: Vid, s1: Vid, training: bool) -> Result<Vid> {
        let p0 = self.pre0.forward(tape, s0, training)?;
        let p1 = self.pre1.forward(tape, s1, training)?;
        let mut states = vec![p0, p1];
        for node in 0..self.n_nodes {
            let (op_a, in_a) = &self.ops[2 * node];
            let (op_b, in_b) = &self.ops[2 * node + 1];
            let a = op_a.forward(tape, states[*in_a], training)?;
            let b = op_b.forward(tape, states[*in_b], training)?;
            states.push(tape.add(a, b)?);
        }
        let keep: Vec<Vid> = self.concat.iter().map(|&c| states[c]).collect();
        tape.concat_channels(&keep)
    }

    /// Flips every conv op to binary weights, deriving its scaling factor
    /// from the trained latent weights.
    fn binarize_weights(&mut self, store: &mut ParamStore) {
        for (op, _) in self.ops.iter_mut() {
            op.binarize_weights(store);
        }
    }
}

/// A stacked derived network.
pub struct EvalNetwork {
    pub config: EvalNetConfig,
    pub genotype: Genotype,
    pub store: ParamStore,
    stem: EvalStem,
    cells: Vec<EvalCell>,
    pub classifier: Classifier,
}

/// Builds the evaluation network for a genotype.
pub fn build_eval_network(
    genotype: &Genotype,
    cfg: &EvalNetConfig,
    rng: &mut SeedRng,
) -> Result<EvalNetwork> {
    genotype.validate()?;
    let layout = network_layout(cfg)?;
    let mut store = ParamStore::new();
    let c_init = cfg.group_config.channels();
    let stem = match cfg.stem {
        StemKind::Cifar { multiplier, stride } => EvalStem::Cifar {
            stem: crate::cell::Stem::build(&mut store, rng, cfg.in_channels, multiplier * c_init, stride),
        },
        StemKind::ImageNet { second_conv_groups } => {
            let half = c_init / 2;
            if half % second_conv_groups != 0 {
                return Err(Error::Invalid(format!(
                    "stem conv: {} channels not divisible by {} groups",
                    half, second_conv_groups
                )));
            }
            let w1 = crate::space::conv_weight_init(&mut store, rng, [half, cfg.in_channels, 3, 3]);
            let bn1 = BnParams::init(&mut store, half, true);
            let slope1 = store.add(Tensor::full(&[half], crate::space::PRELU_INIT), ParamKind::Weight);
            let w2 = crate::space::conv_weight_init(&mut store, rng, [c_init, half / second_conv_groups, 3, 3]);
            let bn2 = BnParams::init(&mut store, c_init, true);
            let slope2 = store.add(Tensor::full(&[c_init], crate::space::PRELU_INIT), ParamKind::Weight);
            let w3 = crate::space::conv_weight_init(&mut store, rng, [c_init, c_init, 3, 3]);
            let bn3 = BnParams::init(&mut store, c_init, true);
            EvalStem::ImageNet { w1, bn1, slope1, w2, bn2, second_conv_groups, slope2, w3, bn3 }
        }
    };
    let mut cells = Vec::with_capacity(cfg.cells);
    for cell_layout in &layout.cells {
        let table = if cell_layout.reduction { &genotype.reduce } else { &genotype.normal };
        cells.push(EvalCell::build(
            &mut store,
            rng,
            table,
            &genotype.concat,
            cell_layout,
            cfg.mode,
            cfg.group_config,
            cfg.binarize_aux,
        )?);
    }
    let classifier = Classifier::build(&mut store, rng, layout.final_features, cfg.num_classes);
    Ok(EvalNetwork { config: *cfg, genotype: genotype.clone(), store, stem, cells, classifier })
}

fn forward_net<'s>(
    stem: &EvalStem,
    cells: &[EvalCell],
    classifier: &crate::cell::Classifier,
    store: &'s mut ParamStore,
    images: Tensor,
    training: bool,
) -> Result<(Tape<'s>, Vid)> {
    let mut tape = Tape::new(store);
    let x = tape.constant(images);
    let (mut s0, mut s1) = match stem {
        EvalStem::Cifar { stem } => {
            let s = stem.forward(&mut tape, x, training)?;
            (s, s)
        }
        EvalStem::ImageNet { w1, bn1, slope1, w2, bn2, second_conv_groups, slope2, w3, bn3 } => {
            let spec2 = ConvSpec { groups: 1, stride: 2, padding: 1, dilation: 1 };
            let wv = tape.param(*w1);
            let mut h = tape.conv2d(x, wv, spec2)?;
            h = bn1.forward(&mut tape, h, training)?;
            let sl = tape.param(*slope1);
            h = tape.prelu(h, sl)?;
            let wv = tape.param(*w2);
            let grouped = ConvSpec { groups: *second_conv_groups, stride: 2, padding: 1, dilation: 1 };
            h = tape.conv2d(h, wv, grouped)?;
            let s0 = bn2.forward(&mut tape, h, training)?;
            let sl = tape.param(*slope2);
            let a = tape.prelu(s0, sl)?;
            let wv = tape.param(*w3);
            let h = tape.conv2d(a, wv, spec2)?;
            let s1 = bn3.forward(&mut tape, h, training)?;
            (s0, s1)
        }
    };
    for cell in cells.iter() {
        let out = cell.forward(&mut tape, s0, s1, training)?;
        s0 = s1;
        s1 = out;
    }
    let logits = classifier.forward(&mut tape, s1)?;
    Ok((tape, logits))
}

#[allow(clippy::too_many_arguments)]
fn run_batch_on(
    stem: &EvalStem,
    cells: &[EvalCell],
    classifier: &crate::cell::Classifier,
    store: &mut ParamStore,
    images: Tensor,
    targets: Option<&Targets>,
    training: bool,
    do_backward: bool,
) -> Result<crate::cell::ForwardStats> {
    let examples = images.dims4()?[0];
    let (mut tape, logits) = forward_net(stem, cells, classifier, store, images, training)?;
    let mut stats = crate::cell::ForwardStats { loss: 0.0, correct: 0, examples };
    if let Some(t) = targets {
        let loss = tape.softmax_cross_entropy(logits, t)?;
        stats.loss = tape.scalar_value(loss);
        stats.correct = crate::cell::count_correct(tape.value(logits), t);
        if do_backward {
            tape.backward(loss)?;
        }
    }
    Ok(stats)
}

impl EvalNetwork {
    /// Forward (+ optional backward) over one batch.
    pub fn run_batch(
        &mut self,
        images: Tensor,
        targets: Option<&Targets>,
        training: bool,
        do_backward: bool,
    ) -> Result<crate::cell::ForwardStats> {
        let EvalNetwork { store, stem, cells, classifier, .. } = self;
        run_batch_on(stem, cells, classifier, store, images, targets, training, do_backward)
    }

    /// Forward over one batch against an external parameter-store copy.
    ///
    /// The network structure only holds store indices, so any clone of the
    /// store works; this is what lets evaluation fan out over threads.
    pub fn run_batch_with_store(
        &self,
        store: &mut ParamStore,
        images: Tensor,
        targets: Option<&Targets>,
        training: bool,
    ) -> Result<crate::cell::ForwardStats> {
        run_batch_on(&self.stem, &self.cells, &self.classifier, store, images, targets, training, false)
    }

    /// Forward only, returning logits.
    pub fn logits(&mut self, images: Tensor, training: bool) -> Result<Tensor> {
        let EvalNetwork { store, stem, cells, classifier, .. } = self;
        let (tape, logits) = forward_net(stem, cells, classifier, store, images, training)?;
        Ok(tape.value(logits).clone())
    }

    /// Phase-2 swap: every cell convolution moves to binary weights with an
    /// analytic scaling factor; the latent real weights stay in place.
    pub fn binarize_weights(&mut self) {
        let EvalNetwork { store, cells, config, .. } = self;
        for cell in cells.iter_mut() {
            cell.binarize_weights(store);
        }
        config.mode = DomainMode { weights: Domain::Binary, activations: config.mode.activations };
    }

    /// Learnable parameter count.
    pub fn param_count(&self) -> usize {
        self.store.numel_of(ParamKind::Weight)
    }
}

// ── training ─────────────────────────────────────────────────────────

/// Optimizer selection for evaluation training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimKind {
    Adam { betas: (f64, f64) },
    Sgd { momentum: f64 },
}

/// Evaluation-phase training configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub optim: OptimKind,
    /// Cosine-anneal the learning rate over the epochs.
    pub cosine: bool,
    pub steps_per_epoch: Option<usize>,
    pub augment: AugmentPolicy,
    pub seed: u64,
}

impl TrainConfig {
    /// Adam at 0.001, betas (0.9, 0.999), no weight decay, cosine schedule.
    pub fn paper_eval(epochs: usize, seed: u64) -> Self {
        TrainConfig {
            epochs,
            batch_size: 256,
            lr: 0.001,
            weight_decay: 0.0,
            optim: OptimKind::Adam { betas: (0.9, 0.999) },
            cosine: true,
            steps_per_epoch: None,
            augment: AugmentPolicy::CROP_FLIP,
            seed,
        }
    }

    /// CPU-scale training.
    pub fn toy(epochs: usize, seed: u64) -> Self {
        TrainConfig {
            epochs,
            batch_size: 16,
            lr: 0.003,
            weight_decay: 0.0,
            optim: OptimKind::Adam { betas: (0.9, 0.999) },
            cosine: true,
            steps_per_epoch: Some(40),
            augment: AugmentPolicy::CROP_FLIP,
            seed,
        }
    }
}

/// Per-epoch training metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetric {
    pub epoch: usize,
    pub loss: f64,
    pub acc: f64,
    pub lr: f64,
}

/// Trains the network on the dataset; returns per-epoch metrics.
pub fn train_network(
    net: &mut EvalNetwork,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<Vec<EpochMetric>> {
    cfg.augment.validate()?;
    let weight_ids = net.store.ids_of(ParamKind::Weight);
    let mut adam = match cfg.optim {
        OptimKind::Adam { betas } => Some(Adam::new(
            &net.store,
            weight_ids.clone(),
            AdamConfig::new(cfg.lr, betas, cfg.weight_decay),
        )),
        OptimKind::Sgd { .. } => None,
    };
    let mut sgd = match cfg.optim {
        OptimKind::Sgd { momentum } => Some(Sgd::new(
            &net.store,
            weight_ids,
            SgdConfig { lr: cfg.lr, momentum, weight_decay: cfg.weight_decay },
        )),
        OptimKind::Adam { .. } => None,
    };
    let mut rng = <SeedRng as rand::SeedableRng>::seed_from_u64(cfg.seed);
    let indices: Vec<usize> = (0..data.len()).collect();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = if cfg.cosine { cosine_lr(cfg.lr, 0.0, epoch, cfg.epochs) } else { cfg.lr };
        let batches = epoch_batches(&indices, cfg.batch_size, cfg.steps_per_epoch, &mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut seen = 0usize;
        for batch_idx in &batches {
            let batch = make_batch(data, batch_idx, &cfg.augment, &mut rng)?;
            net.store.zero_grads();
            let stats = net.run_batch(batch.images, Some(&batch.targets), true, true)?;
            if !stats.loss.is_finite() {
                return Err(Error::Diverged { stage: 0, epoch });
            }
            if let Some(a) = adam.as_mut() {
                a.step(&mut net.store, lr);
            }
            if let Some(s) = sgd.as_mut() {
                s.step(&mut net.store, lr);
            }
            loss_sum += stats.loss * stats.examples as f64;
            correct += stats.correct;
            seen += stats.examples;
        }
        if seen == 0 {
            return Err(Error::Invalid("no full batch fits the dataset".into()));
        }
        metrics.push(EpochMetric {
            epoch,
            loss: loss_sum / seen as f64,
            acc: correct as f64 / seen as f64,
            lr,
        });
    }
    Ok(metrics)
}

/// Top-1 accuracy over a dataset (no augmentation, eval-mode statistics).
pub fn evaluate_accuracy(net: &mut EvalNetwork, data: &Dataset, batch_size: usize) -> Result<f64> {
    let mut correct = 0usize;
    let mut seen = 0usize;
    let mut rng = <SeedRng as rand::SeedableRng>::seed_from_u64(0);
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size) {
        let batch = make_batch(data, chunk, &AugmentPolicy::NONE, &mut rng)?;
        let stats = net.run_batch(batch.images, Some(&batch.targets), false, false)?;
        correct += stats.correct;
        seen += stats.examples;
    }
    if seen == 0 {
        return Err(Error::Invalid("empty evaluation set".into()));
    }
    Ok(correct as f64 / seen as f64)
}

/// Outcome of the two-phase protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoPhaseReport {
    /// Accuracy with binary activations and real weights (phase 1).
    pub acc_binary_act: f64,
    /// Accuracy after weight binarization (phase 2, packed kernels).
    pub acc_fully_binary: f64,
    ///

    /// `acc_binary_act - acc_fully_binary`.
    pub gap: f64,
    pub train_metrics: Vec<EpochMetric>,
}

/// Trains a fresh network with binary activations and real weights, then
/// binarizes the weights (keeping them as latents) and evaluates both forms.
pub fn two_phase_train_eval(
    genotype: &Genotype,
    net_cfg: &EvalNetConfig,
    train_cfg: &TrainConfig,
    train_data: &Dataset,
    test_data: &Dataset,
) -> Result<TwoPhaseReport> {
    let mut cfg = *net_cfg;
    cfg.mode = DomainMode::PROPOSED;
    let mut rng = <SeedRng as rand::SeedableRng>::seed_from_u64(train_cfg.seed);
    let mut net = build_eval_network(genotype, &cfg, &mut rng)?;
    let train_metrics = train_network(&mut net, train_data, train_cfg)?;
    let acc_binary_act = evaluate_accuracy(&mut net, test_data, train_cfg.batch_size)?;
    net.binarize_weights();
    let acc_fully_binary = evaluate_accuracy(&mut net, test_data, train_cfg.batch_size)?;
    Ok(TwoPhaseReport {
        acc_binary_act,
        acc_fully_binary,
        gap: acc_binary_act - acc_fully_binary,
        train_metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn layout_positions_reductions_and_doubles_width() {
        let cfg = EvalNetConfig::paper_cifar(10, DomainMode::FULL_BINARY);
        let layout = network_layout(&cfg).unwrap();
        assert_eq!(layout.cells.len(), 20);
        let reds: Vec<usize> =
            layout.cells.iter().filter(|c| c.reduction).map(|c| c.index).collect();
        assert_eq!(reds, vec![6, 13]);
        assert_eq!(layout.cells[0].channels, 36);
        assert_eq!(layout.cells[6].channels, 72);
        assert_eq!(layout.cells[13].channels, 144);
        assert_eq!(layout.final_features, 4 * 144);
        assert_eq!(layout.cells[19].side_out, 8);
    }

    #[test]
    fn single_cell_stack_builds_and_forwards() {
        let g = Genotype::reference();
        let cfg = EvalNetConfig::toy(1, 2, DomainMode::PROPOSED);
        let mut rng = SeedRng::seed_from_u64(5);
        let mut net = build_eval_network(&g, &cfg, &mut rng).unwrap();
        let logits = net.logits(Tensor::full(&[2, 3, 32, 32], 0.25), true).unwrap();
        assert_eq!(logits.shape(), &[2, 2]);
    }

    #[test]
    fn five_cell_build_from_the_reference_cell_forwards() {
        let g = Genotype::reference();
        let cfg = EvalNetConfig::toy(5, 10, DomainMode::PROPOSED);
        let mut rng = SeedRng::seed_from_u64(6);
        let mut net = build_eval_network(&g, &cfg, &mut rng).unwrap();
        let logits = net.logits(Tensor::full(&[1, 3, 32, 32], -0.1), true).unwrap();
        assert_eq!(logits.shape(), &[1, 10]);
    }

    #[test]
    fn plan_matches_built_network_parameter_count() {
        let g = Genotype::reference();
        for mode in [DomainMode::PROPOSED, DomainMode::FULL_BINARY] {
            let mut cfg = EvalNetConfig::toy(3, 2, mode);
            cfg.binarize_aux = false;
            let plan = plan_network(&g, &cfg).unwrap();
            let mut rng = SeedRng::seed_from_u64(9);
            let net = build_eval_network(&g, &cfg, &mut rng).unwrap();
            assert_eq!(plan_params(&plan), net.param_count());
        }
    }

    #[test]
    fn paper_cifar_parameter_count_is_near_the_published_size() {
        let g = Genotype::reference();
        let cfg = EvalNetConfig::paper_cifar(10, DomainMode::FULL_BINARY);
        let plan = plan_network(&g, &cfg).unwrap();
        let params = plan_params(&plan) as f64;
        let target = 2.8e6;
        assert!(
            (params - target).abs() / target <= 0.15,
            "{} params vs {} +-15%",
            params,
            target
        );
    }

    #[test]
    fn weight_binarization_switches_conv_ops_to_packed_mode() {
        let g = Genotype::reference();
        let cfg = EvalNetConfig::toy(1, 2, DomainMode::PROPOSED);
        let mut rng = SeedRng::seed_from_u64(7);
        let mut net = build_eval_network(&g, &cfg, &mut rng).unwrap();
        let before = net.param_count();
        net.binarize_weights();
        assert_eq!(net.config.mode, DomainMode::FULL_BINARY);
        // Analytic scaling factors were added for every conv op.
        assert!(net.param_count() > before);
        let logits = net.logits(Tensor::full(&[1, 3, 32, 32], 0.4), false).unwrap();
        assert!(logits.data().iter().all(|v| v.is_finite()));
    }
}

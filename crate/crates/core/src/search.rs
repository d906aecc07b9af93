//! Bilevel first-order search with the progressive stage schedule.
//!
//! Each stage trains a supernet at a fixed depth: per batch, one weight
//! update on the weight split with the logits frozen, then — once the
//! warmup epochs have passed — one logit update on the arch split with the
//! weights frozen. Between stages the worst ops are dropped per edge and a
//! deeper supernet is rebuilt with fresh weights, carrying the surviving
//! logits over unchanged.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::cell::{arch_entropy, ArchParams, EdgeAlpha, ForwardStats, Supernet, SupernetConfig};
use crate::data::{epoch_batches, make_batch, split_indices, AugmentPolicy, Dataset, ImageBatch};
use crate::error::{Error, Result};
use crate::genotype::{derive_genotype, Genotype};
use crate::optim::{Adam, AdamConfig, Sgd, SgdConfig};
use crate::space::{DomainMode, GroupConfig, OpKind};
use crate::SeedRng;

/// One progressive stage: supernet depth, candidate ops per edge after the
/// transition into this stage, and the epoch budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchStage {
    pub depth: usize,
    pub ops_kept: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
}

/// The full progressive schedule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchSchedule {
    pub stages: Vec<SearchStage>,
}

impl SearchSchedule {
    /// Depths 5, 11, 17; ops 8, 5, 3; 25 epochs per stage with 10 warmup.
    pub fn paper() -> Self {
        SearchSchedule {
            stages: vec![
                SearchStage { depth: 5, ops_kept: 8, epochs: 25, warmup_epochs: 10 },
                SearchStage { depth: 11, ops_kept: 5, epochs: 25, warmup_epochs: 10 },
                SearchStage { depth: 17, ops_kept: 3, epochs: 25, warmup_epochs: 10 },
            ],
        }
    }

    /// A short CPU-scale schedule with the same shape.
    pub fn toy() -> Self {
        SearchSchedule {
            stages: vec![
                SearchStage { depth: 2, ops_kept: 8, epochs: 5, warmup_epochs: 2 },
                SearchStage { depth: 3, ops_kept: 5, epochs: 5, warmup_epochs: 1 },
                SearchStage { depth: 4, ops_kept: 3, epochs: 4, warmup_epochs: 1 },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Invalid("schedule needs at least one stage".into()));
        }
        for pair in self.stages.windows(2) {
            if pair[1].ops_kept > pair[0].ops_kept {
                return Err(Error::Invalid("ops per edge must be non-increasing across stages".into()));
            }
            if pair[1].depth < pair[0].depth {
                return Err(Error::Invalid("depth must be non-decreasing across stages".into()));
            }
        }
        for stage in &self.stages {
            if stage.depth == 0 || stage.ops_kept == 0 {
                return Err(Error::Invalid("stage depth and op count must be positive".into()));
            }
            if stage.epochs > 0 && stage.warmup_epochs >= stage.epochs {
                return Err(Error::Invalid(format!(
                    "warmup {} must be below the epoch budget {}",
                    stage.warmup_epochs, stage.epochs
                )));
            }
        }
        Ok(())
    }
}

/// Weight-side optimizer choice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightOptim {
    Adam(AdamConfig),
    Sgd(SgdConfig),
}

impl WeightOptim {
    fn lr(&self) -> f64 {
        match self {
            WeightOptim::Adam(c) => c.lr,
            WeightOptim::Sgd(c) => c.lr,
        }
    }
}

/// Optimizer settings for both levels plus the mixing temperatures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    pub arch: AdamConfig,
    pub weights: WeightOptim,
    pub batch_size: usize,
    pub t_normal: f64,
    pub t_reduce: f64,
}

impl OptimConfig {
    /// Adam for both levels: arch lr 6e-4, wd 1e-3, betas (0.5, 0.999);
    /// weights lr 1e-3, wd 3e-4, betas (0.9, 0.999); batch 96; T 0.2/0.15.
    pub fn paper() -> Self {
        OptimConfig {
            arch: AdamConfig::new(6e-4, (0.5, 0.999), 1e-3),
            weights: WeightOptim::Adam(AdamConfig::new(1e-3, (0.9, 0.999), 3e-4)),
            batch_size: 96,
            t_normal: 0.2,
            t_reduce: 0.15,
        }
    }

    /// Real-valued variant: weights move to SGD, lr 0.1, momentum 0.9.
    pub fn paper_real() -> Self {
        OptimConfig {
            weights: WeightOptim::Sgd(SgdConfig { lr: 0.1, momentum: 0.9, weight_decay: 3e-4 }),
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch size must be positive".into()));
        }
        if !(self.t_normal > 0.0) || !(self.t_reduce > 0.0) {
            return Err(Error::Invalid("temperatures must be positive".into()));
        }
        if self.t_reduce >= self.t_normal {
            return Err(Error::Invalid(format!(
                "reduction temperature {} must stay below the normal-cell temperature {}",
                self.t_reduce, self.t_normal
            )));
        }
        Ok(())
    }
}

/// Everything a search run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub schedule: SearchSchedule,
    pub optim: OptimConfig,
    pub mode: DomainMode,
    pub group_config: GroupConfig,
    pub n_nodes: usize,
    pub multiplier: usize,
    pub stem_multiplier: usize,
    pub stem_stride: usize,
    pub num_classes: usize,
    pub augment: AugmentPolicy,
    pub steps_per_epoch: Option<usize>,
    pub seed: u64,
}

impl SearchConfig {
    /// CPU-scale defaults over the desk group configuration.
    pub fn toy(num_classes: usize, mode: DomainMode, seed: u64) -> Self {
        let mut optim = OptimConfig::paper();
        optim.batch_size = 16;
        SearchConfig {
            schedule: SearchSchedule::toy(),
            optim,
            mode,
            group_config: GroupConfig::desk(),
            n_nodes: 4,
            multiplier: 4,
            stem_multiplier: 1,
            stem_stride: 2,
            num_classes,
            augment: AugmentPolicy::CROP_FLIP,
            steps_per_epoch: Some(24),
            seed,
        }
    }

    /// The full CIFAR-scale configuration.
    pub fn paper(num_classes: usize, mode: DomainMode, seed: u64) -> Self {
        SearchConfig {
            schedule: SearchSchedule::paper(),
            optim: OptimConfig::paper(),
            mode,
            group_config: GroupConfig::paper_cifar(),
            n_nodes: 4,
            multiplier: 4,
            stem_multiplier: 3,
            stem_stride: 1,
            num_classes,
            augment: AugmentPolicy::CROP_FLIP,
            steps_per_epoch: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.optim.validate()?;
        if self.n_nodes == 0 || self.num_classes < 2 {
            return Err(Error::Invalid("need at least one node and two classes".into()));
        }
        self.augment.validate()
    }

    fn supernet_config(&self, depth: usize) -> SupernetConfig {
        SupernetConfig {
            cells: depth,
            n_nodes: self.n_nodes,
            multiplier: self.multiplier,
            group_config: self.group_config,
            stem_multiplier: self.stem_multiplier,
            stem_stride: self.stem_stride,
            in_channels: 3,
            num_classes: self.num_classes,
            mode: self.mode,
        }
    }
}

/// Metric split tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Weights,
    Arch,
}

impl Split {
    pub fn tag(self) -> &'static str {
        match self {
            Split::Weights => "weights",
            Split::Arch => "arch",
        }
    }
}

/// One per-epoch, per-split metrics row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRow {
    pub epoch: usize,
    pub stage: usize,
    pub split: Split,
    pub loss: f64,
    pub acc: f64,
    pub mean_edge_entropy: f64,
    pub skip_prob: f64,
    pub conv5_prob: f64,
}

/// Renders the metrics table as CSV with the canonical column set.
pub fn render_metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from("epoch,stage,split,loss,acc,mean_edge_entropy,skip_prob,conv5_prob\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            r.epoch, r.stage, r.split.tag(), r.loss, r.acc, r.mean_edge_entropy, r.skip_prob, r.conv5_prob
        ));
    }
    out
}

/// Architecture-statistics snapshot used in the metric rows.
fn arch_stats(arch: &ArchParams) -> (f64, f64, f64) {
    let normal_h = arch_entropy(&arch.normal, arch.t_normal);
    let reduce_h = arch_entropy(&arch.reduce, arch.t_reduce);
    let total: f64 = normal_h.iter().chain(&reduce_h).sum();
    let mean_entropy = total / (normal_h.len() + reduce_h.len()) as f64;
    let skip = arch.mean_prob_of(&[OpKind::Identity], false);
    let conv5 = arch.mean_prob_of(&[OpKind::GConv5, OpKind::DilGConv5], false);
    (mean_entropy, skip, conv5)
}

/// Losses from one bilevel step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilevelLosses {
    pub weights: ForwardStats,
    pub arch: Option<ForwardStats>,
}

/// Optimizer pair for one stage.
pub struct StageOptimizers {
    weights: WeightStepper,
    arch: Adam,
}

enum WeightStepper {
    Adam(Adam),
    Sgd(Sgd),
}

impl StageOptimizers {
    pub fn new(net: &Supernet, optim: &OptimConfig) -> Self {
        let weights = match optim.weights {
            WeightOptim::Adam(cfg) => WeightStepper::Adam(Adam::new(&net.store, net.weight_ids(), cfg)),
            WeightOptim::Sgd(cfg) => WeightStepper::Sgd(Sgd::new(&net.store, net.weight_ids(), cfg)),
        };
        let arch = Adam::new(&net.store, net.arch_ids(), optim.arch);
        StageOptimizers { weights, arch }
    }

    fn step_weights(&mut self, net: &mut Supernet, lr: f64) {
        match &mut self.weights {
            WeightStepper::Adam(a) => a.step(&mut net.store, lr),
            WeightStepper::Sgd(s) => s.step(&mut net.store, lr),
        }
    }

    fn step_arch(&mut self, net: &mut Supernet, lr: f64) {
        self.arch.step(&mut net.store, lr);
    }
}

/// One bilevel update: a weight step on `batch_w` with the logits frozen,
/// then — when `batch_a` is given (post-warmup) — a logit step on `batch_a`
/// with the weights frozen.
pub fn bilevel_step(
    net: &mut Supernet,
    opts: &mut StageOptimizers,
    optim: &OptimConfig,
    batch_w: &ImageBatch,
    batch_a: Option<&ImageBatch>,
) -> Result<BilevelLosses> {
    if batch_w.targets.is_empty() || batch_a.map_or(false, |b| b.targets.is_empty()) {
        return Err(Error::Invalid("bilevel step received an empty batch".into()));
    }
    net.store.zero_grads();
    let w_stats = net.run_batch(batch_w.images.clone(), Some(&batch_w.targets), true, true)?;
    if !w_stats.loss.is_finite() {
        return Err(Error::Diverged { stage: 0, epoch: 0 });
    }
    opts.step_weights(net, optim.weights.lr());
    let mut a_out = None;
    if let Some(batch) = batch_a {
        net.store.zero_grads();
        let a_stats = net.run_batch(batch.images.clone(), Some(&batch.targets), true, true)?;
        if !a_stats.loss.is_finite() {
            return Err(Error::Diverged { stage: 0, epoch: 0 });
        }
        opts.step_arch(net, optim.arch.lr);
        a_out = Some(a_stats);
    }
    net.store.zero_grads();
    Ok(BilevelLosses { weights: w_stats, arch: a_out })
}

/// Drops the worst ops per edge, keeping `ops_kept` of the entering stage.
///
/// Survivors are the highest-logit ops (ties broken by the canonical op
/// enumeration order); their logits carry over unchanged and their relative
/// order is preserved.
pub fn stage_transition(
    arch: &ArchParams,
    schedule: &SearchSchedule,
    stage_index: usize,
) -> Result<ArchParams> {
    let stage = schedule
        .stages
        .get(stage_index)
        .ok_or_else(|| Error::Invalid(format!("stage {} outside the schedule", stage_index)))?;
    let prune_table = |table: &[EdgeAlpha]| -> Result<Vec<EdgeAlpha>> {
        table
            .iter()
            .map(|edge| {
                if stage.ops_kept > edge.ops.len() {
                    return Err(Error::Invalid(format!(
                        "cannot keep {} ops on an edge with {}",
                        stage.ops_kept,
                        edge.ops.len()
                    )));
                }
                let mut order: Vec<usize> = (0..edge.ops.len()).collect();
                order.sort_by(|&a, &b| {
                    edge.logits[b]
                        .partial_cmp(&edge.logits[a])
                        .expect("finite logits")
                        .then(edge.ops[a].index().cmp(&edge.ops[b].index()))
                });
                let mut keep = vec![false; edge.ops.len()];
                for &slot in &order[..stage.ops_kept] {
                    keep[slot] = true;
                }
                let ops: Vec<OpKind> = edge
                    .ops
                    .iter()
                    .zip(&keep)
                    .filter(|(_, &k)| k)
                    .map(|(&op, _)| op)
                    .collect();
                let logits: Vec<f64> = edge
                    .logits
                    .iter()
                    .zip(&keep)
                    .filter(|(_, &k)| k)
                    .map(|(&l, _)| l)
                    .collect();
                Ok(EdgeAlpha { ops, logits })
            })
            .collect()
    };
    Ok(ArchParams {
        normal: prune_table(&arch.normal)?,
        reduce: prune_table(&arch.reduce)?,
        t_normal: arch.t_normal,
        t_reduce: arch.t_reduce,
    })
}

/// Full search outcome.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub genotype: Genotype,
    pub metrics: Vec<MetricRow>,
    pub final_arch: ArchParams,
    /// Architecture snapshot at the end of every stage.
    pub stage_archs: Vec<ArchParams>,
}

impl SearchOutcome {
    /// Mean arch-split accuracy over the final stage's post-warmup epochs;
    /// falls back to the weight split when the schedule never left warmup.
    pub fn final_search_accuracy(&self) -> f64 {
        let last_stage = self.metrics.iter().map(|r| r.stage).max().unwrap_or(0);
        let arch_rows: Vec<f64> = self
            .metrics
            .iter()
            .filter(|r| r.stage == last_stage && r.split == Split::Arch)
            .map(|r| r.acc)
            .collect();
        let rows = if arch_rows.is_empty() {
            self.metrics
                .iter()
                .filter(|r| r.stage == last_stage && r.split == Split::Weights)
                .map(|r| r.acc)
                .collect()
        } else {
            arch_rows
        };
        if rows.is_empty() {
            return 0.0;
        }
        let tail = &rows[rows.len().saturating_sub(3)..];
        tail.iter().sum::<f64>() / tail.len() as f64
    }
}

/// Runs the progressive bilevel search on a dataset.
///
/// The dataset splits 50/50 into weight and arch halves (seeded). Per epoch,
/// batches alternate weight/arch updates; during warmup epochs only the
/// weights learn and the logits stay bit-identical. A non-finite loss aborts
/// with the stage and epoch.
pub fn run_search(cfg: &SearchConfig, data: &Dataset) -> Result<SearchOutcome> {
    cfg.validate()?;
    if data.len() < 2 * cfg.optim.batch_size {
        return Err(Error::Invalid(format!(
            "dataset of {} cannot fill two {}-element splits",
            data.len(),
            cfg.optim.batch_size
        )));
    }
    let mut rng = <SeedRng as rand::SeedableRng>::seed_from_u64(cfg.seed);
    let (w_idx, a_idx) = split_indices(data.len(), 0.5, cfg.seed)?;
    let mut arch = ArchParams::init(cfg.n_nodes, cfg.optim.t_normal, cfg.optim.t_reduce, &mut rng)?;
    let mut metrics = Vec::new();
    let mut stage_archs = Vec::new();
    let mut global_epoch = 0usize;

    for (stage_idx, stage) in cfg.schedule.stages.iter().enumerate() {
        if stage_idx > 0 {
            arch = stage_transition(&arch, &cfg.schedule, stage_idx)?;
        }
        let mut net = Supernet::build(cfg.supernet_config(stage.depth), &arch, &mut rng)?;
        let mut opts = StageOptimizers::new(&net, &cfg.optim);
        for epoch in 0..stage.epochs {
            let warmup = epoch < stage.warmup_epochs;
            let w_batches = epoch_batches(&w_idx, cfg.optim.batch_size, cfg.steps_per_epoch, &mut rng);
            let a_batches = epoch_batches(&a_idx, cfg.optim.batch_size, cfg.steps_per_epoch, &mut rng);
            if w_batches.is_empty() || a_batches.is_empty() {
                return Err(Error::Invalid("batch size exceeds the split size".into()));
            }
            let mut w_sum = (0.0, 0usize, 0usize);
            let mut a_sum = (0.0, 0usize, 0usize);
            for (step, w_batch) in w_batches.iter().enumerate() {
                let batch_w = make_batch(data, w_batch, &cfg.augment, &mut rng)?;
                let batch_a = if warmup {
                    None
                } else {
                    let idx = &a_batches[step % a_batches.len()];
                    Some(make_batch(data, idx, &cfg.augment, &mut rng)?)
                };
                let losses = bilevel_step(&mut net, &mut opts, &cfg.optim, &batch_w, batch_a.as_ref())
                    .map_err(|e| match e {
                        Error::Diverged { .. } => Error::Diverged { stage: stage_idx, epoch },
                        other => other,
                    })?;
                w_sum.0 += losses.weights.loss * losses.weights.examples as f64;
                w_sum.1 += losses.weights.correct;
                w_sum.2 += losses.weights.examples;
                if let Some(a) = losses.arch {
                    a_sum.0 += a.loss * a.examples as f64;
                    a_sum.1 += a.correct;
                    a_sum.2 += a.examples;
                }
            }
            let snapshot = net.arch_params();
            let (entropy, skip, conv5) = arch_stats(&snapshot);
            metrics.push(MetricRow {
                epoch: global_epoch,
                stage: stage_idx,
                split: Split::Weights,
                loss: w_sum.0 / w_sum.2 as f64,
                acc: w_sum.1 as f64 / w_sum.2 as f64,
                mean_edge_entropy: entropy,
                skip_prob: skip,
                conv5_prob: conv5,
            });
            if a_sum.2 > 0 {
                metrics.push(MetricRow {
                    epoch: global_epoch,
                    stage: stage_idx,
                    split: Split::Arch,
                    loss: a_sum.0 / a_sum.2 as f64,
                    acc: a_sum.1 as f64 / a_sum.2 as f64,
                    mean_edge_entropy: entropy,
                    skip_prob: skip,
                    conv5_prob: conv5,
                });
            }
            global_epoch += 1;
        }
        arch = net.arch_params();
        stage_archs.push(arch.clone());
    }
    let genotype = derive_genotype(&arch)?;
    Ok(SearchOutcome { genotype, metrics, final_arch: arch, stage_archs })
}

/// Draws a uniformly random valid genotype: two distinct input edges per
/// node, each with a uniformly drawn non-zero op.
pub fn random_genotype(n_nodes: usize, rng: &mut SeedRng) -> Genotype {
    use rand::Rng;
    let non_zero: Vec<OpKind> =
        OpKind::ALL.iter().copied().filter(|k| *k != OpKind::Zero).collect();
    let cell = |rng: &mut SeedRng| {
        let mut table = Vec::with_capacity(2 * n_nodes);
        for node in 0..n_nodes {
            let choices = node + 2;
            let first = rng.random_range(0..choices);
            let mut second = rng.random_range(0..choices - 1);
            if second >= first {
                second += 1;
            }
            let mut pair = [first.min(second), first.max(second)];
            pair.sort_unstable();
            for input in pair {
                let op = non_zero[rng.random_range(0..non_zero.len())];
                table.push((op, input));
            }
        }
        table
    };
    Genotype { normal: cell(rng), reduce: cell(rng), concat: (2..2 + n_nodes).collect() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn schedule_validation_catches_bad_shapes() {
        assert!(SearchSchedule::paper().validate().is_ok());
        let grow = SearchSchedule {
            stages: vec![
                SearchStage { depth: 5, ops_kept: 5, epochs: 2, warmup_epochs: 1 },
                SearchStage { depth: 5, ops_kept: 8, epochs: 2, warmup_epochs: 1 },
            ],
        };
        assert!(grow.validate().is_err());
        let shrink_depth = SearchSchedule {
            stages: vec![
                SearchStage { depth: 5, ops_kept: 8, epochs: 2, warmup_epochs: 1 },
                SearchStage { depth: 4, ops_kept: 5, epochs: 2, warmup_epochs: 1 },
            ],
        };
        assert!(shrink_depth.validate().is_err());
        let warm = SearchSchedule {
            stages: vec![SearchStage { depth: 2, ops_kept: 8, epochs: 2, warmup_epochs: 2 }],
        };
        assert!(warm.validate().is_err());
    }

    #[test]
    fn temperature_ordering_is_enforced() {
        let mut optim = OptimConfig::paper();
        assert!(optim.validate().is_ok());
        optim.t_reduce = 0.3;
        assert!(optim.validate().is_err());
    }

    fn arch_with_logits(logits: [f64; 8]) -> ArchParams {
        let edge = EdgeAlpha { ops: OpKind::ALL.to_vec(), logits: logits.to_vec() };
        ArchParams {
            normal: vec![edge.clone(); crate::cell::edge_count(4)],
            reduce: vec![edge; crate::cell::edge_count(4)],
            t_normal: 0.2,
            t_reduce: 0.15,
        }
    }

    #[test]
    fn transition_keeps_the_top_ops_by_logit() {
        let arch = arch_with_logits([0.1, 0.8, -0.5, 0.3, 0.7, -0.2, 0.9, 0.0]);
        let schedule = SearchSchedule {
            stages: vec![
                SearchStage { depth: 2, ops_kept: 8, epochs: 1, warmup_epochs: 0 },
                SearchStage { depth: 3, ops_kept: 5, epochs: 1, warmup_epochs: 0 },
            ],
        };
        let pruned = stage_transition(&arch, &schedule, 1).unwrap();
        // Brute-force oracle: sort (logit, op) pairs and take the best five.
        let mut pairs: Vec<(f64, OpKind)> =
            OpKind::ALL.iter().copied().zip([0.1, 0.8, -0.5, 0.3, 0.7, -0.2, 0.9, 0.0]).map(|(o, l)| (l, o)).collect();
        pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let mut expect: Vec<OpKind> = pairs[..5].iter().map(|&(_, o)| o).collect();
        expect.sort_by_key(|o| o.index());
        for edge in pruned.normal.iter().chain(&pruned.reduce) {
            assert_eq!(edge.ops, expect);
            assert_eq!(edge.ops.len(), 5);
            // Survivor logits carried over unchanged, in enumeration order.
            let want: Vec<f64> = expect
                .iter()
                .map(|o| [0.1, 0.8, -0.5, 0.3, 0.7, -0.2, 0.9, 0.0][o.index()])
                .collect();
            assert_eq!(edge.logits, want);
        }
    }

    #[test]
    fn transition_breaks_ties_by_enumeration_order() {
        let arch = arch_with_logits([0.5; 8]);
        let schedule = SearchSchedule {
            stages: vec![
                SearchStage { depth: 2, ops_kept: 8, epochs: 1, warmup_epochs: 0 },
                SearchStage { depth: 3, ops_kept: 3, epochs: 1, warmup_epochs: 0 },
            ],
        };
        let pruned = stage_transition(&arch, &schedule, 1).unwrap();
        for edge in &pruned.normal {
            assert_eq!(edge.ops, vec![OpKind::GConv3, OpKind::GConv5, OpKind::DilGConv3]);
        }
    }

    #[test]
    fn transition_rejects_growing_the_op_set() {
        let arch = {
            let edge = EdgeAlpha { ops: vec![OpKind::GConv3, OpKind::Identity], logits: vec![0.0, 0.1] };
            ArchParams {
                normal: vec![edge.clone(); crate::cell::edge_count(4)],
                reduce: vec![edge; crate::cell::edge_count(4)],
                t_normal: 0.2,
                t_reduce: 0.15,
            }
        };
        let schedule = SearchSchedule {
            stages: vec![SearchStage { depth: 2, ops_kept: 5, epochs: 1, warmup_epochs: 0 }],
        };
        assert!(stage_transition(&arch, &schedule, 0).is_err());
    }

    #[test]
    fn random_genotypes_are_valid() {
        let mut rng = SeedRng::seed_from_u64(50);
        for _ in 0..100 {
            random_genotype(4, &mut rng).validate().unwrap();
        }
    }
}

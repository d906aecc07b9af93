//! Run configuration: TOML file plus command-line overrides.
//!
//! Every knob has a desk-scale default (the `toy` preset) and a
//! paper-faithful counterpart (the `paper` preset); a config file starts
//! from its preset and overrides individual fields. Unknown keys are
//! rejected with the offending key named.

use std::path::PathBuf;

use serde::Deserialize;

use bnas_core::data::AugmentPolicy;
use bnas_core::evalnet::{EvalNetConfig, OptimKind, StemKind, TrainConfig};
use bnas_core::optim::{AdamConfig, SgdConfig};
use bnas_core::search::{SearchConfig, SearchSchedule, SearchStage, WeightOptim};
use bnas_core::space::{DomainMode, GroupConfig};

use crate::{CommonArgs, Failure};

/// Top-level config file shape.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Base defaults: "toy" (desk scale, default) or "paper".
    pub preset: Option<String>,
    /// Master seed; desk default 7.
    pub seed: Option<u64>,
    /// bin-proposed | bin-full | bin-w-real-a | real; default bin-proposed.
    pub mode: Option<String>,
    /// Evaluation worker threads; default 1.
    pub threads: Option<usize>,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub search: SearchSection,
    #[serde(default)]
    pub train: TrainSection,
}

/// Dataset selection.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    /// Use the synthetic generator; toy default true, paper default false.
    pub synthetic: Option<bool>,
    /// Synthetic class count; toy default 2 (CIFAR presets use 10).
    pub classes: Option<usize>,
    /// Synthetic records per class; toy default 1250 (2,500 total).
    pub per_class: Option<usize>,
    /// Generator seed; defaults to the master seed.
    pub synthetic_seed: Option<u64>,
    /// CIFAR binary batch directory (train: data_batch_*.bin).
    pub data_dir: Option<PathBuf>,
    /// Keep only these original labels, relabeled 0..n.
    pub keep_classes: Option<Vec<usize>>,
    /// Cap the record count after filtering.
    pub take: Option<usize>,
}

/// Search knobs. Paper defaults: batch 96, arch Adam lr 6e-4 / wd 1e-3 /
/// betas (0.5, 0.999), weight Adam lr 1e-3 / wd 3e-4 / betas (0.9, 0.999),
/// T 0.2/0.15, stages (5,8)(11,5)(17,3) x 25 epochs with 10 warmup.
/// Toy defaults shrink to batch 16, stages (2,8)(3,5)(4,3) and capped steps.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSection {
    pub batch_size: Option<usize>,
    pub steps_per_epoch: Option<usize>,
    pub arch_lr: Option<f64>,
    pub arch_weight_decay: Option<f64>,
    pub arch_betas: Option<[f64; 2]>,
    pub weights_lr: Option<f64>,
    pub weights_weight_decay: Option<f64>,
    pub weights_betas: Option<[f64; 2]>,
    /// Momentum when the real-mode SGD optimizer is active; default 0.9.
    pub weights_momentum: Option<f64>,
    pub t_normal: Option<f64>,
    pub t_reduce: Option<f64>,
    /// Intermediate nodes per cell; default 4.
    pub n_nodes: Option<usize>,
    /// Concatenated nodes; default 4.
    pub multiplier: Option<usize>,
    /// Stem width multiplier; paper 3, toy 1.
    pub stem_multiplier: Option<usize>,
    /// Stem stride; paper 1, toy 2.
    pub stem_stride: Option<usize>,
    /// Groups; paper 12, toy 4.
    pub groups: Option<usize>,
    /// Channels per group; default 3.
    pub channels_per_group: Option<usize>,
    pub stages: Option<Vec<StageSection>>,
    #[serde(default)]
    pub augment: AugmentSection,
}

/// One progressive stage.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSection {
    pub depth: usize,
    pub ops_kept: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
}

/// Augmentation knobs; defaults: pad-4 crop plus flip, no cutout, no mixup.
/// The CIFAR-10 evaluation recipe adds cutout 16; CIFAR-100 uses mixup 0.2.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSection {
    pub pad_crop: Option<usize>,
    pub flip: Option<bool>,
    pub cutout: Option<usize>,
    pub mixup: Option<f64>,
}

impl AugmentSection {
    fn resolve(&self, base: AugmentPolicy) -> AugmentPolicy {
        AugmentPolicy {
            pad_crop: self.pad_crop.map(Some).unwrap_or(base.pad_crop),
            flip: self.flip.unwrap_or(base.flip),
            cutout: self.cutout.map(Some).unwrap_or(base.cutout),
            mixup: self.mixup.map(Some).unwrap_or(base.mixup),
        }
    }
}

/// Evaluation-training knobs. Paper defaults: 20 cells, batch 256, Adam lr
/// 1e-3 betas (0.9, 0.999), no weight decay, cosine schedule, 600 epochs.
/// Toy defaults: 3 cells, batch 16, lr 3e-3, 12 epochs, capped steps.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub cells: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub cosine: Option<bool>,
    pub steps_per_epoch: Option<usize>,
    pub groups: Option<usize>,
    pub channels_per_group: Option<usize>,
    pub stem_multiplier: Option<usize>,
    pub stem_stride: Option<usize>,
    /// Binarize preprocessing/downsampling convolutions too; default false.
    pub binarize_aux: Option<bool>,
    #[serde(default)]
    pub augment: AugmentSection,
}

/// Fully resolved settings.
#[derive(Debug, Clone)]
pub struct Settings {
    pub config: RunConfig,
    pub paper_preset: bool,
    pub seed: u64,
    pub mode: DomainMode,
    pub mode_name: String,
    pub threads: usize,
}

pub fn parse_mode(name: &str) -> Result<DomainMode, Failure> {
    match name {
        "bin-proposed" => Ok(DomainMode::PROPOSED),
        "bin-full" => Ok(DomainMode::FULL_BINARY),
        "bin-w-real-a" => Ok(DomainMode::BINARY_WEIGHTS),
        "real" => Ok(DomainMode::REAL),
        other => Err(Failure::Usage(format!(
            "unknown mode \"{}\" (expected bin-proposed, bin-full, bin-w-real-a or real)",
            other
        ))),
    }
}

impl Settings {
    /// Loads the config file (if any) and applies flag overrides.
    pub fn load(args: &CommonArgs) -> Result<Settings, Failure> {
        let config: RunConfig = match &args.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Failure::Usage(format!("cannot read {}: {}", path.display(), e)))?;
                toml::from_str(&text).map_err(|e| Failure::Usage(format!("{}", e)))?
            }
            None => RunConfig::default(),
        };
        let paper_preset = match config.preset.as_deref() {
            None | Some("toy") => false,
            Some("paper") => true,
            Some(other) => {
                return Err(Failure::Usage(format!(
                    "unknown preset \"{}\" (expected toy or paper)",
                    other
                )))
            }
        };
        let seed = args.seed.or(config.seed).unwrap_or(7);
        let mode_name = args
            .mode
            .clone()
            .or_else(|| config.mode.clone())
            .unwrap_or_else(|| "bin-proposed".into());
        let mode = parse_mode(&mode_name)?;
        let threads = if args.threads != 1 { args.threads } else { config.threads.unwrap_or(1) };
        if threads == 0 {
            return Err(Failure::Usage("threads must be at least 1".into()));
        }
        Ok(Settings { config, paper_preset, seed, mode, mode_name, threads })
    }

    pub fn group_config_search(&self) -> GroupConfig {
        let base = if self.paper_preset { GroupConfig::paper_cifar() } else { GroupConfig::desk() };
        GroupConfig::new(
            self.config.search.groups.unwrap_or(base.groups),
            self.config.search.channels_per_group.unwrap_or(base.channels_per_group),
        )
    }

    /// The search configuration after preset + overrides.
    pub fn search_config(&self, num_classes: usize) -> Result<SearchConfig, Failure> {
        let s = &self.config.search;
        let mut cfg = if self.paper_preset {
            SearchConfig::paper(num_classes, self.mode, self.seed)
        } else {
            SearchConfig::toy(num_classes, self.mode, self.seed)
        };
        cfg.group_config = self.group_config_search();
        if let Some(v) = s.batch_size {
            cfg.optim.batch_size = v;
        }
        if s.steps_per_epoch.is_some() {
            cfg.steps_per_epoch = s.steps_per_epoch;
        }
        if let Some(v) = s.n_nodes {
            cfg.n_nodes = v;
            cfg.multiplier = v.min(cfg.multiplier);
        }
        if let Some(v) = s.multiplier {
            cfg.multiplier = v;
        }
        if let Some(v) = s.stem_multiplier {
            cfg.stem_multiplier = v;
        }
        if let Some(v) = s.stem_stride {
            cfg.stem_stride = v;
        }
        let arch = AdamConfig::new(
            s.arch_lr.unwrap_or(cfg.optim.arch.lr),
            s.arch_betas.map(|b| (b[0], b[1])).unwrap_or(cfg.optim.arch.betas),
            s.arch_weight_decay.unwrap_or(cfg.optim.arch.weight_decay),
        );
        // Real mode uses SGD with momentum 0.9 at lr 0.1 for the weights.
        let weights = if self.mode == DomainMode::REAL {
            WeightOptim::Sgd(SgdConfig {
                lr: s.weights_lr.unwrap_or(0.1),
                momentum: s.weights_momentum.unwrap_or(0.9),
                weight_decay: s.weights_weight_decay.unwrap_or(3e-4),
            })
        } else {
            let base = match cfg.optim.weights {
                WeightOptim::Adam(a) => a,
                WeightOptim::Sgd(_) => AdamConfig::new(1e-3, (0.9, 0.999), 3e-4),
            };
            WeightOptim::Adam(AdamConfig::new(
                s.weights_lr.unwrap_or(base.lr),
                s.weights_betas.map(|b| (b[0], b[1])).unwrap_or(base.betas),
                s.weights_weight_decay.unwrap_or(base.weight_decay),
            ))
        };
        cfg.optim.arch = arch;
        cfg.optim.weights = weights;
        if let Some(v) = s.t_normal {
            cfg.optim.t_normal = v;
        }
        if let Some(v) = s.t_reduce {
            cfg.optim.t_reduce = v;
        }
        if let Some(stages) = &s.stages {
            cfg.schedule = SearchSchedule {
                stages: stages
                    .iter()
                    .map(|st| SearchStage {
                        depth: st.depth,
                        ops_kept: st.ops_kept,
                        epochs: st.epochs,
                        warmup_epochs: st.warmup_epochs,
                    })
                    .collect(),
            };
        }
        cfg.augment = s.augment.resolve(cfg.augment);
        cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
        Ok(cfg)
    }

    /// Evaluation network + training configs after preset + overrides.
    pub fn train_configs(&self, num_classes: usize) -> Result<(EvalNetConfig, TrainConfig), Failure> {
        let t = &self.config.train;
        let (mut net, mut train) = if self.paper_preset {
            (
                EvalNetConfig::paper_cifar(num_classes, self.mode),
                TrainConfig::paper_eval(t.epochs.unwrap_or(600), self.seed),
            )
        } else {
            (
                EvalNetConfig::toy(t.cells.unwrap_or(3), num_classes, self.mode),
                TrainConfig::toy(t.epochs.unwrap_or(12), self.seed),
            )
        };
        if let Some(cells) = t.cells {
            net.cells = cells;
        }
        let base_gc = net.group_config;
        net.group_config = GroupConfig::new(
            t.groups.unwrap_or(base_gc.groups),
            t.channels_per_group.unwrap_or(base_gc.channels_per_group),
        );
        if let StemKind::Cifar { multiplier, stride } = net.stem {
            net.stem = StemKind::Cifar {
                multiplier: t.stem_multiplier.unwrap_or(multiplier),
                stride: t.stem_stride.unwrap_or(stride),
            };
        }
        net.binarize_aux = t.binarize_aux.unwrap_or(net.binarize_aux);
        if let Some(v) = t.batch_size {
            train.batch_size = v;
        }
        if let Some(v) = t.lr {
            train.lr = v;
        }
        if let Some(v) = t.weight_decay {
            train.weight_decay = v;
        }
        if let Some(v) = t.cosine {
            train.cosine = v;
        }
        if t.steps_per_epoch.is_some() {
            train.steps_per_epoch = t.steps_per_epoch;
        }
        if self.mode == DomainMode::REAL {
            // Real-valued runs train with SGD at lr 0.1, momentum 0.9.
            train.optim = OptimKind::Sgd { momentum: 0.9 };
            train.lr = t.lr.unwrap_or(0.1);
        }
        train.augment = t.augment.resolve(train.augment);
        train.augment.validate().map_err(|e| Failure::Usage(e.to_string()))?;
        Ok((net, train))
    }
}

//! Search-loop contracts: warmup freezing, determinism, degenerate
//! schedules and the single-step loss-decrease statistic.

use bnas_core::cell::{ArchParams, Supernet, SupernetConfig};
use bnas_core::data::{make_batch, synthetic_cifar_bytes, AugmentPolicy, Dataset, SYNTHETIC_STATS};
use bnas_core::optim::AdamConfig;
use bnas_core::search::{
    bilevel_step, run_search, OptimConfig, SearchConfig, SearchSchedule, SearchStage,
    StageOptimizers, WeightOptim,
};
use bnas_core::space::DomainMode;
use bnas_core::SeedRng;
use rand::SeedableRng;

fn toy_data(per_class: usize, seed: u64) -> Dataset {
    let bytes = synthetic_cifar_bytes(2, per_class, seed);
    Dataset::from_cifar_bytes(&bytes, 2, SYNTHETIC_STATS).unwrap()
}

fn tiny_supernet(seed: u64, mode: DomainMode) -> (Supernet, ArchParams) {
    let mut rng = SeedRng::seed_from_u64(seed);
    let mut config = SupernetConfig::desk(1, 2, mode);
    config.n_nodes = 2;
    config.multiplier = 2;
    let arch = ArchParams::init(2, 0.2, 0.15, &mut rng).unwrap();
    let net = Supernet::build(config, &arch, &mut rng).unwrap();
    (net, arch)
}

fn arch_logits_bits(net: &Supernet) -> Vec<u64> {
    let arch = net.arch_params();
    arch.normal
        .iter()
        .chain(&arch.reduce)
        .flat_map(|e| e.logits.iter().map(|v| v.to_bits()))
        .collect()
}

#[test]
fn warmup_steps_leave_the_logits_bit_identical() {
    let data = toy_data(32, 3);
    let (mut net, _) = tiny_supernet(11, DomainMode::PROPOSED);
    let optim = OptimConfig { batch_size: 8, ..OptimConfig::paper() };
    let mut opts = StageOptimizers::new(&net, &optim);
    let before = arch_logits_bits(&net);
    let mut rng = SeedRng::seed_from_u64(5);
    for _ in 0..3 {
        let batch = make_batch(&data, &[0, 5, 9, 13, 21, 30, 40, 50], &AugmentPolicy::NONE, &mut rng).unwrap();
        bilevel_step(&mut net, &mut opts, &optim, &batch, None).unwrap();
    }
    assert_eq!(arch_logits_bits(&net), before);
}

#[test]
fn zero_learning_rates_change_no_parameters() {
    let data = toy_data(32, 3);
    let (mut net, _) = tiny_supernet(12, DomainMode::PROPOSED);
    let optim = OptimConfig {
        arch: AdamConfig::new(0.0, (0.5, 0.999), 0.0),
        weights: WeightOptim::Adam(AdamConfig::new(0.0, (0.9, 0.999), 0.0)),
        batch_size: 8,
        t_normal: 0.2,
        t_reduce: 0.15,
    };
    let mut opts = StageOptimizers::new(&net, &optim);
    let snapshot: Vec<u64> = net
        .store
        .entries()
        .filter(|(_, _, kind)| *kind != bnas_core::tape::ParamKind::Buffer)
        .flat_map(|(_, t, _)| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        .collect();
    let mut rng = SeedRng::seed_from_u64(6);
    let batch_w = make_batch(&data, &[0, 2, 4, 6, 8, 10, 12, 14], &AugmentPolicy::NONE, &mut rng).unwrap();
    let batch_a = make_batch(&data, &[1, 3, 5, 7, 9, 11, 13, 15], &AugmentPolicy::NONE, &mut rng).unwrap();
    bilevel_step(&mut net, &mut opts, &optim, &batch_w, Some(&batch_a)).unwrap();
    let after: Vec<u64> = net
        .store
        .entries()
        .filter(|(_, _, kind)| *kind != bnas_core::tape::ParamKind::Buffer)
        .flat_map(|(_, t, _)| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        .collect();
    assert_eq!(snapshot, after);
}

#[test]
fn search_trajectories_are_deterministic_under_a_seed() {
    let data = toy_data(48, 9);
    let cfg = |seed| {
        let mut c = SearchConfig::toy(2, DomainMode::PROPOSED, seed);
        c.schedule = SearchSchedule {
            stages: vec![SearchStage { depth: 1, ops_kept: 8, epochs: 2, warmup_epochs: 1 }],
        };
        c.n_nodes = 2;
        c.multiplier = 2;
        c.optim.batch_size = 8;
        c.steps_per_epoch = Some(3);
        c
    };
    let a = run_search(&cfg(77), &data).unwrap();
    let b = run_search(&cfg(77), &data).unwrap();
    assert_eq!(a.genotype, b.genotype);
    assert_eq!(a.metrics.len(), b.metrics.len());
    for (x, y) in a.metrics.iter().zip(&b.metrics) {
        assert_eq!(x.loss.to_bits(), y.loss.to_bits());
        assert_eq!(x.acc.to_bits(), y.acc.to_bits());
    }
    for (ea, eb) in a.final_arch.normal.iter().zip(&b.final_arch.normal) {
        let la: Vec<u64> = ea.logits.iter().map(|v| v.to_bits()).collect();
        let lb: Vec<u64> = eb.logits.iter().map(|v| v.to_bits()).collect();
        assert_eq!(la, lb);
    }
    let c = run_search(&cfg(78), &data).unwrap();
    assert!(
        c.metrics[0].loss.to_bits() != a.metrics[0].loss.to_bits()
            || c.genotype != a.genotype
    );
}

#[test]
fn zero_epoch_schedule_completes_with_an_initial_genotype() {
    let data = toy_data(48, 10);
    let mut cfg = SearchConfig::toy(2, DomainMode::PROPOSED, 5);
    cfg.schedule = SearchSchedule {
        stages: vec![SearchStage { depth: 1, ops_kept: 8, epochs: 0, warmup_epochs: 0 }],
    };
    cfg.n_nodes = 2;
    cfg.multiplier = 2;
    cfg.optim.batch_size = 8;
    let outcome = run_search(&cfg, &data).unwrap();
    outcome.genotype.validate().unwrap();
    assert!(outcome.metrics.is_empty());
}

#[test]
fn single_weight_step_decreases_training_loss_for_most_seeds() {
    // One bilevel weight update on a fixed batch lowers that batch's loss
    // in at least 80% of seeds.
    let data = toy_data(24, 21);
    let mut improved = 0usize;
    let seeds = 50usize;
    for seed in 0..seeds as u64 {
        let (mut net, _) = tiny_supernet(1000 + seed, DomainMode::PROPOSED);
        let optim = OptimConfig { batch_size: 8, ..OptimConfig::paper() };
        let mut opts = StageOptimizers::new(&net, &optim);
        let mut rng = SeedRng::seed_from_u64(seed);
        let idx: Vec<usize> = (0..8).map(|i| (i * 5 + seed as usize) % data.len()).collect();
        let batch = make_batch(&data, &idx, &AugmentPolicy::NONE, &mut rng).unwrap();
        let before = net
            .run_batch(batch.images.clone(), Some(&batch.targets), true, false)
            .unwrap()
            .loss;
        bilevel_step(&mut net, &mut opts, &optim, &batch, None).unwrap();
        let after = net
            .run_batch(batch.images.clone(), Some(&batch.targets), true, false)
            .unwrap()
            .loss;
        if after < before {
            improved += 1;
        }
    }
    println!("loss decreased for {}/{} seeds", improved, seeds);
    assert!(improved * 10 >= seeds * 8, "only {}/{} seeds improved", improved, seeds);
}

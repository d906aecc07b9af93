//! Dataset materialization: CIFAR batch files or the synthetic generator.

use std::path::Path;

use bnas_core::data::{synthetic_cifar_bytes, ChannelStats, Dataset, CIFAR10_STATS, SYNTHETIC_STATS};

use crate::config::Settings;
use crate::Failure;
use crate::CommonArgs;

/// CIFAR-10 training batch file names.
const TRAIN_FILES: [&str; 5] =
    ["data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"];

/// Loads the training set from a CIFAR directory.
pub fn load_cifar_train(dir: &Path, num_classes: usize, stats: ChannelStats) -> Result<Dataset, Failure> {
    let mut bytes = Vec::new();
    for name in TRAIN_FILES {
        let path = dir.join(name);
        let chunk = std::fs::read(&path)
            .map_err(|e| Failure::Runtime(format!("cannot read {}: {}", path.display(), e)))?;
        bytes.extend_from_slice(&chunk);
    }
    Ok(Dataset::from_cifar_bytes(&bytes, num_classes, stats)?)
}

/// Loads the test batch from a CIFAR directory.
pub fn load_cifar_test(dir: &Path, num_classes: usize, stats: ChannelStats) -> Result<Dataset, Failure> {
    let path = dir.join("test_batch.bin");
    let bytes = std::fs::read(&path)
        .map_err(|e| Failure::Runtime(format!("cannot read {}: {}", path.display(), e)))?;
    Ok(Dataset::from_cifar_bytes(&bytes, num_classes, stats)?)
}

/// Builds the dataset the settings ask for. `eval_split` selects the test
/// batch (files) or an independently seeded synthetic draw.
pub fn load_dataset(settings: &Settings, args: &CommonArgs, eval_split: bool) -> Result<Dataset, Failure> {
    let section = &settings.config.dataset;
    let synthetic = args.synthetic || section.synthetic.unwrap_or(!settings.paper_preset);
    let data_dir = args.data_dir.clone().or_else(|| section.data_dir.clone());
    let mut dataset = if synthetic {
        let classes = section.classes.unwrap_or(2);
        let per_class = section.per_class.unwrap_or(1250);
        let base_seed = section.synthetic_seed.unwrap_or(settings.seed);
        // The evaluation draw comes from a disjoint generator stream.
        let seed = if eval_split { base_seed.wrapping_add(0x5EED) } else { base_seed };
        let per_class = if eval_split { per_class.div_ceil(4) } else { per_class };
        let bytes = synthetic_cifar_bytes(classes, per_class, seed);
        Dataset::from_cifar_bytes(&bytes, classes, SYNTHETIC_STATS)?
    } else {
        let dir = data_dir.ok_or_else(|| {
            Failure::Usage("need --data-dir (or dataset.data_dir) unless --synthetic is set".into())
        })?;
        if eval_split {
            load_cifar_test(&dir, 10, CIFAR10_STATS)?
        } else {
            load_cifar_train(&dir, 10, CIFAR10_STATS)?
        }
    };
    if let Some(keep) = &section.keep_classes {
        dataset = dataset.filter_classes(keep);
    }
    if let Some(take) = section.take {
        dataset = dataset.take(take);
    }
    if dataset.is_empty() {
        return Err(Failure::Usage("dataset selection produced no records".into()));
    }
    Ok(dataset)
}

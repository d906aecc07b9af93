//! `bnas train`: phase-1 training of a derived network (binary activations,
//! real weights), saving a checkpoint plus per-epoch metrics.

use std::path::Path;

use bnas_core::evalnet::{build_eval_network, train_network};
use bnas_core::genotype::parse;
use bnas_core::space::DomainMode;

use crate::checkpoint::Checkpoint;
use crate::commands::{out_dir, write_text};
use crate::config::Settings;
use crate::dataio::load_dataset;
use crate::{CommonArgs, Failure};

pub fn run(genotype_path: &Path, args: &CommonArgs) -> Result<(), Failure> {
    let settings = Settings::load(args)?;
    let text = std::fs::read_to_string(genotype_path)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {}", genotype_path.display(), e)))?;
    let genotype = parse(&text).map_err(|e| Failure::Usage(e.to_string()))?;
    let data = load_dataset(&settings, args, false)?;
    let (mut net_cfg, train_cfg) = settings.train_configs(data.num_classes())?;
    // Phase 1 always trains with real weights and the configured activation
    // domain of the proposed strategy.
    if settings.mode != DomainMode::REAL {
        net_cfg.mode = DomainMode::PROPOSED;
    } else {
        net_cfg.mode = DomainMode::REAL;
    }
    println!(
        "train: {} cells, {} epochs, {} records, mode {}",
        net_cfg.cells,
        train_cfg.epochs,
        data.len(),
        settings.mode_name
    );
    let mut rng = bnas_core::seed_rng(settings.seed);
    let mut net = build_eval_network(&genotype, &net_cfg, &mut rng)?;
    println!("parameters: {}", net.param_count());
    let metrics = train_network(&mut net, &data, &train_cfg)?;
    let dir = out_dir(&args.out)?;
    let mut csv = String::from("epoch,loss,acc,lr\n");
    for m in &metrics {
        csv.push_str(&format!("{},{:.6},{:.6},{:.6}\n", m.epoch, m.loss, m.acc, m.lr));
    }
    write_text(&dir.join("train_metrics.csv"), &csv)?;
    let ckpt = Checkpoint::capture(&net, settings.seed);
    ckpt.save(&dir.join("checkpoint.json"))?;
    if let Some(last) = metrics.last() {
        println!("final train loss {:.4}, accuracy {:.3}", last.loss, last.acc);
    }
    println!("wrote {}", dir.join("checkpoint.json").display());
    println!("wrote {}", dir.join("train_metrics.csv").display());
    Ok(())
}

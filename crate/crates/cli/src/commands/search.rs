//! `bnas search`: run the progressive bilevel search and write the results.

use bnas_core::genotype::serialize;
use bnas_core::search::{render_metrics_csv, run_search};

use crate::commands::{out_dir, write_text};
use crate::config::Settings;
use crate::dataio::load_dataset;
use crate::{CommonArgs, Failure};

pub fn run(args: &CommonArgs) -> Result<(), Failure> {
    let settings = Settings::load(args)?;
    let data = load_dataset(&settings, args, false)?;
    let cfg = settings.search_config(data.num_classes())?;
    println!(
        "search: mode={} seed={} dataset={} records x {} classes, {} stages",
        settings.mode_name,
        settings.seed,
        data.len(),
        data.num_classes(),
        cfg.schedule.stages.len()
    );
    let outcome = run_search(&cfg, &data)?;
    let dir = out_dir(&args.out)?;
    write_text(&dir.join("genotype.json"), &serialize(&outcome.genotype))?;
    write_text(&dir.join("metrics.csv"), &render_metrics_csv(&outcome.metrics))?;
    let arch_json = serde_json::to_string_pretty(&outcome.final_arch)
        .map_err(|e| Failure::Runtime(format!("arch serialization: {}", e)))?;
    write_text(&dir.join("arch_final.json"), &arch_json)?;
    println!(
        "search done: final accuracy {:.3}, skip fraction {:.3}, conv fraction {:.3}",
        outcome.final_search_accuracy(),
        outcome.genotype.fraction_of(&[bnas_core::space::OpKind::Identity]),
        outcome.genotype.fraction_of(&[
            bnas_core::space::OpKind::GConv3,
            bnas_core::space::OpKind::GConv5,
            bnas_core::space::OpKind::DilGConv3,
            bnas_core::space::OpKind::DilGConv5,
        ]),
    );
    println!("wrote {}", dir.join("genotype.json").display());
    println!("wrote {}", dir.join("metrics.csv").display());
    println!("wrote {}", dir.join("arch_final.json").display());
    Ok(())
}

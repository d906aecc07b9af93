//! `bnas cost`: static FLOPs/BOPs accounting as CSV.

use std::path::Path;

use bnas_core::cost::{count_network, render_cost_csv, resnet18_report, CostReport};
use bnas_core::evalnet::{plan_network, plan_params, EvalNetConfig};
use bnas_core::genotype::{parse, Genotype};
use bnas_core::space::DomainMode;

use crate::config::Settings;
use crate::{CommonArgs, Failure};

pub fn run(genotype_path: Option<&Path>, preset: Option<&str>, args: &CommonArgs) -> Result<(), Failure> {
    let settings = Settings::load(args)?;
    let genotype = match genotype_path {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read {}: {}", path.display(), e)))?;
            parse(&text).map_err(|e| Failure::Usage(e.to_string()))?
        }
        None => Genotype::reference(),
    };
    let (report, config) = match preset.unwrap_or("toy") {
        "resnet18-stem" => (resnet18_report(), None),
        "cifar-paper" => {
            let cfg = EvalNetConfig::paper_cifar(10, DomainMode::FULL_BINARY);
            (count_network(&genotype, &cfg)?, Some(cfg))
        }
        "imagenet-paper" => {
            let cfg = EvalNetConfig::paper_imagenet(1000, DomainMode::FULL_BINARY);
            (count_network(&genotype, &cfg)?, Some(cfg))
        }
        "toy" => {
            let (mut cfg, _) = settings.train_configs(settings.config.dataset.classes.unwrap_or(2))?;
            cfg.mode = DomainMode::FULL_BINARY;
            (count_network(&genotype, &cfg)?, Some(cfg))
        }
        other => {
            return Err(Failure::Usage(format!(
                "unknown cost preset \"{}\" (expected resnet18-stem, cifar-paper, imagenet-paper or toy)",
                other
            )))
        }
    };
    emit(&report, config.as_ref(), &genotype, args)
}

fn emit(
    report: &CostReport,
    config: Option<&EvalNetConfig>,
    genotype: &Genotype,
    args: &CommonArgs,
) -> Result<(), Failure> {
    let csv = render_cost_csv(report);
    match &args.out {
        Some(path) => {
            std::fs::write(path, &csv)?;
            println!("wrote {}", path.display());
        }
        None => print!("{}", csv),
    }
    eprintln!(
        "totals: {} FLOPs ({:.4}e8), {} BOPs ({:.4}e9)",
        report.total_flops,
        report.total_flops as f64 / 1e8,
        report.total_bops,
        report.total_bops as f64 / 1e9
    );
    if let Some(cfg) = config {
        let params = plan_params(&plan_network(genotype, cfg)?);
        eprintln!("parameters: {} ({:.2}M)", params, params as f64 / 1e6);
    }
    Ok(())
}

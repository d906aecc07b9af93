//! `bnas eval`: accuracy of a checkpoint, optionally after phase-2 weight
//! binarization. Evaluation batches can fan out over threads; per-batch
//! correct counts are integers, so the result is identical at any thread
//! count.

use std::path::Path;

use bnas_core::data::{make_batch, AugmentPolicy, Dataset};
use bnas_core::evalnet::EvalNetwork;
use bnas_core::tape::ParamStore;

use crate::checkpoint::Checkpoint;
use crate::config::Settings;
use crate::dataio::load_dataset;
use crate::{CommonArgs, Failure};

pub fn run(checkpoint_path: &Path, binarize_weights: bool, args: &CommonArgs) -> Result<(), Failure> {
    let settings = Settings::load(args)?;
    let ckpt = Checkpoint::load(checkpoint_path)?;
    let mut net = ckpt.restore()?;
    if binarize_weights {
        net.binarize_weights();
    }
    let data = load_dataset(&settings, args, true)?;
    let batch = settings.config.train.batch_size.unwrap_or(32);
    let (correct, total) = evaluate_parallel(&net, &data, batch, settings.threads)?;
    let acc = correct as f64 / total as f64;
    println!(
        "eval: {} examples, weights {}, accuracy {:.4} ({}/{})",
        total,
        if binarize_weights { "binary (packed kernels)" } else { "real (latent)" },
        acc,
        correct,
        total
    );
    if let Some(out) = &args.out {
        let report = serde_json::json!({
            "examples": total,
            "correct": correct,
            "accuracy": acc,
            "binarized_weights": binarize_weights,
        });
        std::fs::write(out, serde_json::to_string_pretty(&report).expect("report json"))?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

/// Splits evaluation batches over worker threads, each with its own store
/// copy; sums of integer counts keep the result thread-count independent.
pub fn evaluate_parallel(
    net: &EvalNetwork,
    data: &Dataset,
    batch_size: usize,
    threads: usize,
) -> Result<(usize, usize), Failure> {
    let indices: Vec<usize> = (0..data.len()).collect();
    let chunks: Vec<&[usize]> = indices.chunks(batch_size).collect();
    if threads <= 1 || chunks.len() <= 1 {
        let mut store = net.store.clone();
        let counts = eval_chunks(net, &mut store, data, &chunks)?;
        return Ok(counts);
    }
    let workers = threads.min(chunks.len());
    let groups: Vec<Vec<&[usize]>> = (0..workers)
        .map(|w| chunks.iter().skip(w).step_by(workers).copied().collect())
        .collect();
    let results: Vec<Result<(usize, usize), Failure>> = std::thread::scope(|scope| {
        let handles: Vec<_> = groups
            .iter()
            .map(|group| {
                scope.spawn(move || {
                    let mut store = net.store.clone();
                    eval_chunks(net, &mut store, data, group)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("eval worker panicked")).collect()
    });
    let mut correct = 0;
    let mut total = 0;
    for r in results {
        let (c, t) = r?;
        correct += c;
        total += t;
    }
    Ok((correct, total))
}

fn eval_chunks(
    net: &EvalNetwork,
    store: &mut ParamStore,
    data: &Dataset,
    chunks: &[&[usize]],
) -> Result<(usize, usize), Failure> {
    let mut rng = bnas_core::seed_rng(0);
    let mut correct = 0usize;
    let mut total = 0usize;
    for chunk in chunks {
        let batch = make_batch(data, chunk, &AugmentPolicy::NONE, &mut rng)?;
        let stats = net.run_batch_with_store(store, batch.images, Some(&batch.targets), false)?;
        correct += stats.correct;
        total += stats.examples;
    }
    Ok((correct, total))
}

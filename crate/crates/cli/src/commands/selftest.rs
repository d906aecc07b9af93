//! `bnas selftest`: kernel bit-exactness plus gradient checks; exits 3 on
//! any failure.

use std::process::ExitCode;
use std::time::Instant;

use bnas_core::check::{gradient_suite, kernel_equivalence_suite};

pub fn run() -> ExitCode {
    let mut failed = false;

    let start = Instant::now();
    let kernels = kernel_equivalence_suite(0xB1A5, 1100);
    println!(
        "kernel bit-exactness: {} configs, {} failures ({:.1}s)",
        kernels.cases,
        kernels.failures.len(),
        start.elapsed().as_secs_f64()
    );
    for f in &kernels.failures {
        eprintln!("  {}", f);
        failed = true;
    }

    let start = Instant::now();
    let grads = gradient_suite(0xB1A5, 5);
    println!(
        "gradient checks: {} cases, {} failures ({:.1}s)",
        grads.cases,
        grads.failures.len(),
        start.elapsed().as_secs_f64()
    );
    for f in &grads.failures {
        eprintln!("  {}", f);
        failed = true;
    }

    if failed {
        eprintln!("selftest FAILED");
        ExitCode::from(3)
    } else {
        println!("selftest passed");
        ExitCode::SUCCESS
    }
}

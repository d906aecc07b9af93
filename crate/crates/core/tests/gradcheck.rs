//! Full gradient suite: analytic gradients against central finite
//! differences (double precision, step 1e-4, relative tolerance 1e-4) for
//! every differentiable operation, the binary-conv scaling factor, batch
//! norm, mixed edges and full cells.

use std::time::Instant;

use bnas_core::check::gradient_suite;

#[test]
fn gradients_match_finite_differences_over_100_cases() {
    let start = Instant::now();
    let report = gradient_suite(2024, 5);
    let elapsed = start.elapsed();
    assert!(report.ok(), "gradient failures: {:?}", report.failures);
    assert!(report.cases >= 100, "only {} cases ran", report.cases);
    assert!(elapsed.as_secs() < 300, "gradient suite took {:?}", elapsed);
    println!(
        "gradient suite: {} cases in {:.1}s",
        report.cases,
        elapsed.as_secs_f64()
    );
}

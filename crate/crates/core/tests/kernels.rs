//! Packed-kernel bit-exactness against the float convolution of pre-signed
//! operands, plus an opt-in throughput comparison.

use std::time::Instant;

use bnas_core::check::kernel_equivalence_suite;
use bnas_core::ops::conv::{conv2d_forward, conv2d_out_shape, ConvSpec};
use bnas_core::binconv::binconv_signed;
use rand::Rng;
use rand::SeedableRng;

#[test]
fn packed_conv_matches_float_oracle_over_1000_configs() {
    let start = Instant::now();
    let report = kernel_equivalence_suite(99, 1100);
    let elapsed = start.elapsed();
    assert!(report.ok(), "kernel mismatches: {:?}", report.failures);
    assert!(report.cases >= 1000, "only {} configs ran", report.cases);
    assert!(elapsed.as_secs() < 120, "kernel suite took {:?}", elapsed);
    println!(
        "kernel suite: {} configs in {:.1}s",
        report.cases,
        elapsed.as_secs_f64()
    );
}

/// Throughput comparison, not a correctness gate: run with
/// `cargo test -p bnas-core --release -- --ignored throughput`.
#[test]
#[ignore]
fn throughput_packed_vs_float() {
    let mut rng = bnas_core::SeedRng::seed_from_u64(1);
    let (c, o, h, k) = (256usize, 256usize, 32usize, 3usize);
    let spec = ConvSpec::plain(1);
    let xs = [1, c, h, h];
    let ws = [o, c, k, k];
    let x: Vec<f64> = (0..c * h * h).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w: Vec<f64> = (0..o * c * k * k).map(|_| rng.random_range(-1.0..1.0)).collect();
    let os = conv2d_out_shape(&xs, &ws, &spec).unwrap();
    let sx: Vec<f64> = x.iter().map(|&v| if v >= 0.0 { 1.0 } else { -1.0 }).collect();
    let sw: Vec<f64> = w.iter().map(|&v| if v >= 0.0 { 1.0 } else { -1.0 }).collect();

    let t0 = Instant::now();
    let float = conv2d_forward(&sx, &xs, &sw, &ws, &spec, &os);
    let float_time = t0.elapsed();

    let t1 = Instant::now();
    let packed = binconv_signed(&x, &xs, &w, &ws, &spec, &os);
    let packed_time = t1.elapsed();

    assert_eq!(packed, float);
    let speedup = float_time.as_secs_f64() / packed_time.as_secs_f64();
    println!(
        "float {:.3}s, packed {:.3}s, speedup {:.1}x",
        float_time.as_secs_f64(),
        packed_time.as_secs_f64(),
        speedup
    );
    assert!(speedup >= 5.0, "packed conv only {:.1}x faster", speedup);
}

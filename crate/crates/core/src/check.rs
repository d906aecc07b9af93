//! Self-verification suites: gradient checks against central finite
//! differences and bit-exactness of the packed kernels against the float
//! reference. The CLI selftest runs these; the test suites assert on them.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;

use crate::binconv::binconv_signed;
use crate::cell::{edge_count, ArchParams, SearchCell, CellConfig};
use crate::error::Result;
use crate::ops::conv::{conv2d_forward, conv2d_out_shape, ConvSpec};
use crate::space::{make_op, DomainMode, GroupConfig, OpKind};
use crate::tape::{ParamId, ParamKind, ParamStore, Tape, Targets};
use crate::tensor::Tensor;
use crate::SeedRng;

/// Outcome of a suite: how many cases ran and what failed.
#[derive(Debug, Clone, Default)]
pub struct CheckReport {
    pub cases: usize,
    pub failures: Vec<String>,
}

impl CheckReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }

    fn merge(&mut self, other: CheckReport) {
        self.cases += other.cases;
        self.failures.extend(other.failures);
    }
}

const FD_STEP: f64 = 1e-4;
const REL_TOL: f64 = 1e-4;
const ABS_TOL: f64 = 1e-7;
/// Elements checked per tensor (deterministic stride sample beyond this).
const MAX_COMPONENTS: usize = 16;

/// Central finite differences over every listed parameter against the
/// gradients that one backward pass accumulates.
///
/// `forward` must be deterministic given the store contents; the `grad`
/// flag asks for a backward pass. Components where a halved step disagrees
/// wildly with the full step sit on a kink (pooling ties, activation zero
/// crossings) and are skipped rather than counted.
fn fd_check(
    store: &mut ParamStore,
    ids: &[ParamId],
    forward: &mut dyn FnMut(&mut ParamStore, bool) -> Result<f64>,
    label: &str,
    report: &mut CheckReport,
) {
    store.zero_grads();
    if let Err(e) = forward(store, true) {
        report.failures.push(format!("{}: forward failed: {}", label, e));
        return;
    }
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| {
            let t = store.get(id);
            t.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();
    for (slot, &id) in ids.iter().enumerate() {
        let numel = store.get(id).numel();
        let stride = numel.div_ceil(MAX_COMPONENTS).max(1);
        let mut component = 0usize;
        while component < numel {
            let fd = |store: &mut ParamStore,
                      forward: &mut dyn FnMut(&mut ParamStore, bool) -> Result<f64>,
                      h: f64|
             -> Result<f64> {
                let orig = store.get(id).data()[component];
                store.get_mut(id).data_mut()[component] = orig + h;
                let up = forward(store, false)?;
                store.get_mut(id).data_mut()[component] = orig - h;
                let down = forward(store, false)?;
                store.get_mut(id).data_mut()[component] = orig;
                Ok((up - down) / (2.0 * h))
            };
            let estimate = match fd(store, forward, FD_STEP) {
                Ok(v) => v,
                Err(e) => {
                    report.failures.push(format!("{}: fd eval failed: {}", label, e));
                    return;
                }
            };
            let a = analytic[slot][component];
            let tol = REL_TOL * a.abs().max(estimate.abs()) + ABS_TOL;
            if (a - estimate).abs() > tol {
                // Distinguish a kink from a wrong gradient: a genuine
                // derivative is stable under a smaller step.
                let refined = fd(store, forward, FD_STEP / 4.0).unwrap_or(estimate);
                if (refined - estimate).abs() > 10.0 * tol {
                    component += stride;
                    continue;
                }
                report.failures.push(format!(
                    "{}: param {} component {}: analytic {} vs fd {}",
                    label,
                    id.index(),
                    component,
                    a,
                    estimate
                ));
                return;
            }
            component += stride;
        }
    }
    report.cases += 1;
}

fn rand_tensor(rng: &mut SeedRng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

fn add_param(store: &mut ParamStore, rng: &mut SeedRng, shape: &[usize]) -> ParamId {
    store.add(rand_tensor(rng, shape, -1.0, 1.0), ParamKind::Weight)
}

/// Gradient suite: every differentiable op against central finite
/// differences, including the scaling factor of the packed binary
/// convolution, batch norm in both modes, a temperature-mixed edge and a
/// full cell.
pub fn gradient_suite(seed: u64, rounds: usize) -> CheckReport {
    let mut report = CheckReport::default();
    for round in 0..rounds {
        let s = seed.wrapping_add(round as u64);
        report.merge(check_conv_cases(s));
        report.merge(check_pool_cases(s));
        report.merge(check_bn_cases(s));
        report.merge(check_pointwise_cases(s));
        report.merge(check_loss_cases(s));
        report.merge(check_binary_cases(s));
        report.merge(check_mixed_edge(s));
    }
    report.merge(check_full_cell(seed));
    report
}

fn check_conv_cases(seed: u64) -> CheckReport {
    let mut report = CheckReport::default();
    let configs = [
        (1usize, 1usize, 3usize, 1usize, 1usize),
        (1, 2, 3, 1, 2),
        (2, 2, 5, 1, 1),
        (3, 1, 3, 2, 1),
        (2, 1, 5, 2, 2),
        (1, 3, 1, 1, 1),
    ];
    for (idx, &(groups, cg, k, dilation, stride)) in configs.iter().enumerate() {
        let mut rng = SeedRng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(idx as u64));
        let c = groups * cg;
        let o = groups * 2;
        let mut store = ParamStore::new();
        let x = add_param(&mut store, &mut rng, &[2, c, 7, 7]);
        let w = add_param(&mut store, &mut rng, &[o, cg, k, k]);
        let spec = ConvSpec { groups, stride, padding: dilation * (k - 1) / 2, dilation };
        let mut forward = |store: &mut ParamStore, grad: bool| -> Result<f64> {
            let mut tape = Tape::new(store);
            let xv = tape.param(x);
            let wv = tape.param(w);
            let y = tape.conv2d(xv, wv, spec)?;
            let loss = tape.square_sum(y)?;
            if grad {
                tape.backward(loss)?;
            }
            Ok(tape.scalar_value(loss))
        };
        fd_check(&mut store, &[x, w], &mut forward, &format!("conv2d g{} k{} d{} s{}", groups, k, dilation, stride), &mut report);
    }
    report
}

fn check_pool_cases(seed: u64) -> CheckReport {
    let mut report = CheckReport::default();
    for (idx, (max, stride)) in [(true, 1usize), (true, 2), (false, 1), (false, 2)].iter().enumerate() {
        let mut rng = SeedRng::seed_from_u64(seed.wrapping_mul(37).wrapping_add(idx as u64));
        let mut store = ParamStore::new();
        let x = add_param(&mut store, &mut rng, &[2, 2, 6, 6]);
        let mut forward = |store: &mut ParamStore, grad: bool| -> Result<f64> {
            let mut tape = Tape::new(store);
            let xv = tape.param(x);
            let y = if *max { tape.max_pool3(xv, *stride)? } else { tape.avg_pool3(xv, *stride)? };
            let loss = tape.square_sum(y)?;
            if grad {
                tape.backward(loss)?;
            }
            Ok(tape.scalar_value(loss))
        };
        let name = if *max { "max_pool3" } else { "avg_pool3" };
        fd_check(&mut store, &[x], &mut forward, &format!("{} s{}", name, stride), &mut report);
    }
    report
}

fn check_bn_cases(seed: u64) -> CheckReport {
    let mut report = CheckReport::default();
    for (idx, training) in [true, false].iter().enumerate() {
        let mut rng = SeedRng::seed_from_u64(seed.wrapping_mul(41).wrapping_add(idx as u64));
        let mut store = ParamStore::new();
        let x = add_param(&mut store, &mut rng, &[3, 2, 4, 4]);
        let gamma = store.add(rand_tensor(&mut rng, &[2], 0.5, 1.5), ParamKind::Weight);
        let beta = store.add(rand_tensor(&mut rng, &[2], -0.5, 0.5), ParamKind::Weight);
        let run_mean = store.add(rand_tensor(&mut rng, &[2], -0.2, 0.2), ParamKind::Buffer);
        let run_var = store.add(rand_tensor(&mut rng, &[2], 0.5, 1.5), ParamKind::Buffer);
        let training = *training;
        let mut forward = move |store: &mut ParamStore, grad: bool| -> Result<f64> {
            let mut tape = Tape::new(store);
            let xv = tape.param(x);
            let gv = tape.param(gamma);
            let bv = tape.param(beta);
            let y = tape.batch_norm(xv, Some((gv, bv)), (run_mean, run_var), 0.1, training)?;
            let loss = tape.square_sum(y)?;
            if grad {
                tape.backward(loss)?;
            }
            Ok(tape.scalar_value(loss))
        };
        fd_check(
            &mut store,
            &[x, gamma, beta],
            &mut forward,
            &format!("batch_norm training={}", training),
            &mut report,
        );
    }
    report
}

fn check_pointwise_cases(seed: u64) -> CheckReport {
    let mut report = CheckReport::default();
    let mut rng = SeedRng::seed_from_u64(seed.wrapping_mul(43));

    // prelu
    {
        let mut store = ParamStore::new();
        let x = add_param(&mut store, &mut rng, &[2, 3, 4, 4]);
        let slope = store.add(rand_tensor(&mut rng, &[3], 0.1, 0.6), ParamKind::Weight);
        let mut forward = |store: &mut ParamStore, grad: bool| -> Result<f64> {
            let mut tape = Tape::new(store);
            let xv = tape.param(x);
            let sv = tape.param(slope);
            let y = tape.prelu(xv, sv)?;
            let loss = tape.square_sum(y)?;
            if grad {
                tape.backward(loss)?;
            }
            Ok(tape.scalar_value(loss))
        };
        fd_check(&mut store, &[x, slope], &mut forward, "prelu", &mut report);
    }
    // linear
    {
        let mut store = ParamStore::new();
        let x = add_param(&mut store, &mut rng, &[3, 5]);
        let w = add_param(&mut store, &mut rng, &[4, 5]);
        let b = add_param(&mut store, &mut rng, &[4]);
        let mut forward = |store: &mut ParamStore, grad: bool| -> Result<f64> {
            let mut tape = Tape::new(store);
            let xv = tape.param(x);
            let wv = tape.param(w);
            let bv = tape.param(b);
            let y = tape.linear(xv, wv, Some(bv))?;
            let loss = tape.square_sum(y)?;
            if grad {
                tape.backward(loss)?;
            }
            Ok(tape.scalar_value(loss))
        };
        fd_check(&mut store, &[x, w, b], &mut forward, "linear", &mut report);
    }
    // concat + add + shift + global pool + channel scale + abs
    {
        let mut store = ParamStore::new();
        let a = add_param(&mut store, &mut rng, &[2, 2, 4, 4]);
        let b = add_param(&mut store, &mut rng, &[2, 3, 4, 4]);
        let scale = store.add(rand_tensor(&mut rng, &[5], 0.3, 1.2), ParamKind::Weight);
        let mut forward = |store: &mut ParamStore, grad: bool| -> Result<f64> {
            let mut tape = Tape::new(store);
            let av = tape.param(a);
            let bv = tape.param(b);
            let cat = tape.concat_channels(&[av, bv])?;
            let shifted = tape.shift2d(cat, 1, 1)?;
            let summed = tape.add(cat, shifted)?;
            let sv = tape.param(scale);
            let eff = tape.abs(sv)?;
            let scaled = tape.channel_scale(summed, eff)?;
            let pooled = tape.global_avg_pool(scaled)?;
            let loss = tape.square_sum(pooled)?;
            if grad {
                tape.backward(loss)?;
            }
            Ok(tape.scalar_value(loss))
        };
        fd_check(&mut store, &[a, b, scale], &mut forward, "concat/shift/add/scale/pool", &mut report);
    }
    report
}

fn check_loss_cases(seed: u64) -> CheckReport {
    let mut report = CheckReport::default();
    let mut rng = SeedRng::seed_from_u64(seed.wrapping_mul(47));
    // hard labels
    {
        let mut store = ParamStore::new();
        let logits = add_param(&mut store, &mut rng, &[4, 5]);
        let labels = Targets::Hard(vec![0, 2, 4, 1]);
        let mut forward = |store: &mut ParamStore, grad: bool| -> Result<f64> {
            let mut tape = Tape::new(store);
            let lv = tape.param(logits);
            let loss = tape.softmax_cross_entropy(lv, &labels)?;
            if grad {
                tape.backward(loss)?;
            }
            Ok(tape.scalar_value(loss))
        };
        fd_check(&mut store, &[logits], &mut forward, "cross_entropy hard", &mut report);
    }
    // soft labels
    {
        let mut store = ParamStore::new();
        let logits = add_param(&mut store, &mut rng, &[3, 4]);
        let mut probs = vec![0.0; 12];
        for row in 0..3 {
            let mut total = 0.0;
            for k in 0..4 {
                let v: f64 = rng.random_range(0.05..1.0);
                probs[row * 4 + k] = v;
                total += v;
            }
            for k in 0..4 {
                probs[row * 4 + k] /= total;
            }
        }
        let targets = Targets::Soft { probs, classes: 4 };
        let mut forward = |store: &mut ParamStore, grad: bool| -> Result<f64> {
            let mut tape = Tape::new(store);
            let lv = tape.param(logits);
            let loss = tape.softmax_cross_entropy(lv, &targets)?;
            if grad {
                tape.backward(loss)?;
            }
            Ok(tape.scalar_value(loss))
        };
        fd_check(&mut store, &[logits], &mut forward, "cross_entropy soft", &mut report);
    }
    // temperature softmax; the squared norm has a non-trivial gradient
    // through the simplex constraint
    for temp in [0.15, 0.2, 1.0] {
        let mut store = ParamStore::new();
        let logits = add_param(&mut store, &mut rng, &[8]);
        let mut forward = |store: &mut ParamStore, grad: bool| -> Result<f64> {
            let mut tape = Tape::new(store);
            let lv = tape.param(logits);
            let p = tape.softmax_t(lv, temp)?;
            let loss = tape.square_sum(p)?;
            if grad {
                tape.backward(loss)?;
            }
            Ok(tape.scalar_value(loss))
        };
        fd_check(&mut store, &[logits], &mut forward, &format!("softmax_t T={}", temp), &mut report);
    }
    report
}

fn check_binary_cases(seed: u64) -> CheckReport {
    let mut report = CheckReport::default();
    let mut rng = SeedRng::seed_from_u64(seed.wrapping_mul(53));
    // Scaling-factor gradient through the packed convolution.
    {
        let mut store = ParamStore::new();
        let x = store.add(rand_tensor(&mut rng, &[1, 4, 5, 5], -1.0, 1.0), ParamKind::Buffer);
        let w = store.add(rand_tensor(&mut rng, &[4, 4, 3, 3], -1.0, 1.0), ParamKind::Buffer);
        let alpha = store.add(rand_tensor(&mut rng, &[4], 0.4, 1.5), ParamKind::Weight);
        let mut forward = |store: &mut ParamStore, grad: bool| -> Result<f64> {
            let mut tape = Tape::new(store);
            let xv = tape.param(x);
            let wv = tape.param(w);
            let av = tape.param(alpha);
            let y = tape.binary_conv2d(xv, wv, av, ConvSpec::plain(1))?;
            let loss = tape.square_sum(y)?;
            if grad {
                tape.backward(loss)?;
            }
            Ok(tape.scalar_value(loss))
        };
        fd_check(&mut store, &[alpha], &mut forward, "binary_conv2d alpha", &mut report);
    }
    // Real weights behind binarized activations stay fully differentiable:
    // the sign sits on the activation side, so the weight and slope paths
    // reach the loss without crossing the discontinuity. The BN affine
    // parameters live before the sign and are excluded here — their true
    // derivative is zero almost everywhere and only the straight-through
    // surrogate (checked exactly elsewhere) gives them a training signal.
    {
        let gc = GroupConfig::new(2, 2);
        let mut store = ParamStore::new();
        let op = make_op(&mut store, &mut rng, OpKind::GConv3, 4, 1, DomainMode::PROPOSED, gc, true)
            .expect("valid op");
        let x = store.add(rand_tensor(&mut rng, &[2, 4, 5, 5], -1.0, 1.0), ParamKind::Buffer);
        let ids: Vec<ParamId> =
            [op.conv_weight(), op.prelu_slope()].iter().flatten().copied().collect();
        let mut forward = |store: &mut ParamStore, grad: bool| -> Result<f64> {
            let mut tape = Tape::new(store);
            let xv = tape.param(x);
            let y = op.forward(&mut tape, xv, true)?;
            let loss = tape.square_sum(y)?;
            if grad {
                tape.backward(loss)?;
            }
            Ok(tape.scalar_value(loss))
        };
        fd_check(&mut store, &ids, &mut forward, "binary-activation conv block weights", &mut report);
    }
    report
}

fn check_mixed_edge(seed: u64) -> CheckReport {
    let mut report = CheckReport::default();
    let mut rng = SeedRng::seed_from_u64(seed.wrapping_mul(59));
    let gc = GroupConfig::new(2, 2);
    let mut store = ParamStore::new();
    let ops: Vec<_> = OpKind::ALL
        .iter()
        .map(|&k| make_op(&mut store, &mut rng, k, 4, 1, DomainMode::REAL, gc, false).expect("valid op"))
        .collect();
    let logits = store.add(rand_tensor(&mut rng, &[8], -0.5, 0.5), ParamKind::Arch);
    let x = store.add(rand_tensor(&mut rng, &[1, 4, 5, 5], -1.0, 1.0), ParamKind::Buffer);
    let weight_ids: Vec<ParamId> = ops.iter().filter_map(|o| o.conv_weight()).collect();
    let mut check_ids = vec![logits];
    check_ids.extend(weight_ids.iter().take(2));
    let mut forward = |store: &mut ParamStore, grad: bool| -> Result<f64> {
        let mut tape = Tape::new(store);
        let xv = tape.param(x);
        let lv = tape.param(logits);
        let y = crate::cell::mixed_edge_forward(&mut tape, xv, &ops, lv, 0.2, true)?;
        let loss = tape.square_sum(y)?;
        if grad {
            tape.backward(loss)?;
        }
        Ok(tape.scalar_value(loss))
    };
    fd_check(&mut store, &check_ids, &mut forward, "mixed edge (real ops, T=0.2)", &mut report);
    report
}

fn check_full_cell(seed: u64) -> CheckReport {
    let mut report = CheckReport::default();
    // Finite differences only see true derivatives, so the checkable set
    // depends on the domain mode: a real cell is differentiable everywhere;
    // with binary activations, any perturbation routed through a downstream
    // sign shows its surrogate gradient instead. The binary case therefore
    // uses a single intermediate node — the op outputs are constant in the
    // logits, making the logit gradient exact.
    for (idx, mode) in [DomainMode::REAL, DomainMode::PROPOSED].iter().enumerate() {
        let mut rng = SeedRng::seed_from_u64(seed.wrapping_mul(61).wrapping_add(idx as u64));
        let gc = GroupConfig::new(2, 2);
        let channels = 4;
        let n_nodes = if *mode == DomainMode::REAL { 2 } else { 1 };
        let config = CellConfig { n_nodes, n_inputs: 2, multiplier: n_nodes, reduction: false };
        let ops_per_edge: Vec<Vec<OpKind>> =
            (0..edge_count(n_nodes)).map(|_| OpKind::ALL.to_vec()).collect();
        let mut store = ParamStore::new();
        let cell = SearchCell::build(
            &mut store,
            &mut rng,
            config,
            &ops_per_edge,
            channels,
            channels,
            channels,
            false,
            *mode,
            gc,
        )
        .expect("cell builds");
        let arch = ArchParams::init(n_nodes, 0.2, 0.15, &mut rng).expect("arch");
        let logit_ids: Vec<ParamId> = arch
            .normal
            .iter()
            .map(|e| {
                store.add(
                    Tensor::new(vec![e.logits.len()], e.logits.clone()).expect("shape"),
                    ParamKind::Arch,
                )
            })
            .collect();
        let s0 = store.add(rand_tensor(&mut rng, &[1, channels, 6, 6], -1.0, 1.0), ParamKind::Buffer);
        let s1 = store.add(rand_tensor(&mut rng, &[1, channels, 6, 6], -1.0, 1.0), ParamKind::Buffer);
        let mut ids = logit_ids.clone();
        if *mode == DomainMode::REAL {
            ids.extend(store.ids_of(ParamKind::Weight).into_iter().step_by(7).take(6));
        }
        let mut forward = |store: &mut ParamStore, grad: bool| -> Result<f64> {
            let mut tape = Tape::new(store);
            let s0v = tape.param(s0);
            let s1v = tape.param(s1);
            let weights: Result<Vec<_>> = logit_ids
                .iter()
                .map(|&id| {
                    let v = tape.param(id);
                    tape.softmax_t(v, 0.2)
                })
                .collect();
            let y = cell.forward(&mut tape, s0v, s1v, &weights?, true)?;
            let loss = tape.square_sum(y)?;
            if grad {
                tape.backward(loss)?;
            }
            Ok(tape.scalar_value(loss))
        };
        let label = if *mode == DomainMode::REAL {
            "full cell (real)"
        } else {
            "full cell (binary activations) arch grads"
        };
        fd_check(&mut store, &ids, &mut forward, label, &mut report);
    }
    report
}

/// Kernel suite: packed binary convolution against the float convolution of
/// pre-signed operands, exact equality over randomized geometries including
/// reduction lengths that straddle 64-bit word boundaries.
pub fn kernel_equivalence_suite(seed: u64, configs: usize) -> CheckReport {
    let mut report = CheckReport::default();
    let mut rng = SeedRng::seed_from_u64(seed);
    // Channel/kernel pairs whose per-group tap count sits next to word
    // boundaries: 63, 72, 75, 125, 126, 135 bits.
    let boundary_pairs: [(usize, usize); 6] = [(7, 3), (8, 3), (3, 5), (5, 5), (14, 3), (15, 3)];
    for case in 0..configs {
        let groups = [1usize, 2, 3, 12][case % 4];
        let (cg, k) = if case % 5 == 0 {
            boundary_pairs[(case / 5) % boundary_pairs.len()]
        } else {
            ([1usize, 2, 3][case % 3], if case % 2 == 0 { 3 } else { 5 })
        };
        let dilation = 1 + case % 2;
        let stride = 1 + (case / 7) % 2;
        let c = groups * cg;
        let o = groups * (1 + (case / 3) % 2);
        let h = 5 + case % 4;
        let spec = ConvSpec { groups, stride, padding: dilation * (k - 1) / 2, dilation };
        let xs = [1, c, h, h];
        let ws = [o, cg, k, k];
        let os = match conv2d_out_shape(&xs, &ws, &spec) {
            Ok(os) => os,
            Err(_) => continue,
        };
        let x: Vec<f64> = (0..c * h * h).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..o * cg * k * k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let packed = binconv_signed(&x, &xs, &w, &ws, &spec, &os);
        let sx: Vec<f64> = x.iter().map(|&v| crate::tensor::sign_val(v)).collect();
        let sw: Vec<f64> = w.iter().map(|&v| crate::tensor::sign_val(v)).collect();
        let float = conv2d_forward(&sx, &xs, &sw, &ws, &spec, &os);
        if packed != float {
            report.failures.push(format!(
                "kernel mismatch: case {} g{} cg{} k{} d{} s{}",
                case, groups, cg, k, dilation, stride
            ));
            if report.failures.len() > 8 {
                return report;
            }
        }
        report.cases += 1;
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_gradient_suite_passes() {
        let report = gradient_suite(7, 1);
        assert!(report.ok(), "{:?}", report.failures);
        assert!(report.cases >= 20, "{} cases", report.cases);
    }

    #[test]
    fn small_kernel_suite_passes() {
        let report = kernel_equivalence_suite(3, 64);
        assert!(report.ok(), "{:?}", report.failures);
        assert!(report.cases >= 60);
    }
}

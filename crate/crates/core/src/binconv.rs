//! Packed binary convolution and straight-through-estimator helpers.
//!
//! `binconv_signed` computes `conv2d(sign(x), sign(w))` exactly, via packed
//! XNOR/popcount. Zero padding is handled by excluding padded taps from the
//! bit count, which matches the float semantics where a padded position
//! contributes `0` rather than +-1: per output position,
//! `dot = popcount(valid) - 2 * popcount((patch ^ weight) & valid)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::bitpack::BitPlanes;
use crate::ops::conv::ConvSpec;
use crate::tape::{ParamId, ParamKind, ParamStore};
use crate::tensor::Tensor;

/// Learnable positive per-output-channel scaling factor.
///
/// The parameter is stored unconstrained and mapped through `|.|` on use, so
/// the effective factor stays positive while gradients flow to the raw value.
#[derive(Debug, Clone, Copy)]
pub struct ScaleFactor {
    raw: ParamId,
}

impl ScaleFactor {
    /// Creates the raw parameter, one entry per output channel.
    pub fn init(store: &mut ParamStore, channels: usize, value: f64) -> Self {
        let raw = store.add(Tensor::full(&[channels], value), ParamKind::Weight);
        ScaleFactor { raw }
    }

    /// Wraps an existing raw parameter.
    pub fn from_raw(raw: ParamId) -> Self {
        ScaleFactor { raw }
    }

    pub fn raw_id(&self) -> ParamId {
        self.raw
    }

    /// The effective (positive) per-channel factors.
    pub fn effective(&self, store: &ParamStore) -> Vec<f64> {
        store.get(self.raw).data().iter().map(|v| v.abs()).collect()
    }
}

/// Exact `conv2d(sign(x), sign(w))` through bit-packed planes.
///
/// Patch bits are laid out `[channel-in-group][ky][kx]`, matching the weight
/// rows, so one gather per (group, output position) serves every output
/// channel of that group.
pub fn binconv_signed(
    x: &[f64],
    xs: &[usize; 4],
    w: &[f64],
    ws: &[usize; 4],
    spec: &ConvSpec,
    os: &[usize; 4],
) -> Vec<f64> {
    let [n, c, h, wid] = *xs;
    let [o, cg, kh, kw] = *ws;
    let [_, _, ho, wo] = *os;
    let ocg = o / spec.groups;
    let taps = cg * kh * kw;
    let nwords = taps.div_ceil(64).max(1);

    // Weight rows: one packed row per output channel.
    let wbits = BitPlanes::pack_rows(w, o, taps, &[o, cg, kh, kw]);

    let mut out = vec![0.0; n * o * ho * wo];
    let mut patch = vec![0u64; nwords];
    let mut valid = vec![0u64; nwords];

    for img in 0..n {
        for g in 0..spec.groups {
            for oy in 0..ho {
                for ox in 0..wo {
                    for wslot in patch.iter_mut() {
                        *wslot = 0;
                    }
                    for wslot in valid.iter_mut() {
                        *wslot = 0;
                    }
                    for ic_rel in 0..cg {
                        let ic = g * cg + ic_rel;
                        let plane = &x[(img * c + ic) * h * wid..][..h * wid];
                        for ky in 0..kh {
                            let iy = (oy * spec.stride + ky * spec.dilation) as isize - spec.padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * spec.stride + kx * spec.dilation) as isize
                                    - spec.padding as isize;
                                if ix < 0 || ix >= wid as isize {
                                    continue;
                                }
                                let bit = (ic_rel * kh + ky) * kw + kx;
                                valid[bit / 64] |= 1u64 << (bit % 64);
                                if plane[iy as usize * wid + ix as usize] >= 0.0 {
                                    patch[bit / 64] |= 1u64 << (bit % 64);
                                }
                            }
                        }
                    }
                    let mut n_valid = 0u32;
                    for &m in &valid {
                        n_valid += m.count_ones();
                    }
                    for oc_rel in 0..ocg {
                        let oc = g * ocg + oc_rel;
                        let wrow = wbits.row(oc);
                        let mut diff = 0u32;
                        for i in 0..nwords {
                            diff += ((patch[i] ^ wrow[i]) & valid[i]).count_ones();
                        }
                        out[((img * o + oc) * ho + oy) * wo + ox] =
                            n_valid as f64 - 2.0 * diff as f64;
                    }
                }
            }
        }
    }
    out
}

/// Clipped straight-through estimator: the upstream gradient passes where
/// `|saved_input| <= 1` and is zeroed elsewhere.
pub fn sign_ste_backward(saved_input: &[f64], upstream: &[f64]) -> Vec<f64> {
    saved_input
        .iter()
        .zip(upstream)
        .map(|(&v, &g)| if v.abs() <= 1.0 { g } else { 0.0 })
        .collect()
}

/// Analytic per-output-channel scaling factor: mean of `|w|` over each
/// output channel. This is how a trained real-valued weight tensor gets its
/// initial scaling when the weights are binarized after the fact.
pub fn analytic_alpha(w: &[f64], ws: &[usize; 4]) -> Vec<f64> {
    let [o, cg, kh, kw] = *ws;
    let per = cg * kh * kw;
    let mut alpha = vec![0.0; o];
    for oc in 0..o {
        let row = &w[oc * per..][..per];
        let mut acc = 0.0;
        for &v in row {
            acc += v.abs();
        }
        alpha[oc] = acc / per as f64;
    }
    alpha
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::conv::{conv2d_forward, conv2d_out_shape};
    use crate::tensor::Tensor;
    use rand::Rng;
    use rand::SeedableRng;

    fn float_oracle(x: &[f64], xs: &[usize; 4], w: &[f64], ws: &[usize; 4], spec: &ConvSpec) -> Vec<f64> {
        let sx: Vec<f64> = Tensor::new(xs.to_vec(), x.to_vec()).unwrap().sign().data().to_vec();
        let sw: Vec<f64> = Tensor::new(ws.to_vec(), w.to_vec()).unwrap().sign().data().to_vec();
        let os = conv2d_out_shape(xs, ws, spec).unwrap();
        conv2d_forward(&sx, xs, &sw, ws, spec, &os)
    }

    #[test]
    fn all_positive_one_by_one_counts_channels() {
        // 1x1 kernel, all +1, C=4, g=1: every output element is 4.
        let xs = [1, 4, 3, 3];
        let ws = [2, 4, 1, 1];
        let spec = ConvSpec::plain(0);
        let os = conv2d_out_shape(&xs, &ws, &spec).unwrap();
        let out = binconv_signed(&[1.0; 36], &xs, &[1.0; 8], &ws, &spec, &os);
        assert!(out.iter().all(|&v| v == 4.0));
    }

    #[test]
    fn matches_float_oracle_on_random_configs() {
        let mut rng = crate::SeedRng::seed_from_u64(17);
        for case in 0..120 {
            let groups = [1usize, 2, 3, 12][case % 4];
            let k = if case % 2 == 0 { 3 } else { 5 };
            let dilation = 1 + (case / 2) % 2;
            let cg = [1usize, 2, 3][case % 3];
            let c = groups * cg;
            let o = groups * (1 + (case / 5) % 2);
            let h = 5 + case % 5;
            let spec = ConvSpec {
                groups,
                stride: 1 + (case / 3) % 2,
                padding: dilation * (k - 1) / 2,
                dilation,
            };
            let xs = [1, c, h, h];
            let ws = [o, cg, k, k];
            if conv2d_out_shape(&xs, &ws, &spec).is_err() {
                continue;
            }
            let x: Vec<f64> = (0..c * h * h).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..o * cg * k * k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let os = conv2d_out_shape(&xs, &ws, &spec).unwrap();
            let got = binconv_signed(&x, &xs, &w, &ws, &spec, &os);
            let want = float_oracle(&x, &xs, &w, &ws, &spec);
            assert_eq!(got, want, "case {}", case);
        }
    }

    #[test]
    fn ste_masks_outside_unit_interval() {
        assert_eq!(sign_ste_backward(&[0.5], &[1.0]), vec![1.0]);
        assert_eq!(sign_ste_backward(&[1.5], &[1.0]), vec![0.0]);
        let mut rng = crate::SeedRng::seed_from_u64(4);
        let x: Vec<f64> = (0..256).map(|_| rng.random_range(-2.0..2.0)).collect();
        let g: Vec<f64> = (0..256).map(|_| rng.random_range(-1.0..1.0)).collect();
        let got = sign_ste_backward(&x, &g);
        for i in 0..256 {
            let want = if x[i].abs() <= 1.0 { g[i] } else { 0.0 };
            assert_eq!(got[i], want);
        }
    }

    #[test]
    fn analytic_alpha_is_channel_mean_abs() {
        let w = [1.0, -2.0, 3.0, -4.0, 0.5, 0.5, -0.5, -0.5];
        let alpha = analytic_alpha(&w, &[2, 1, 2, 2]);
        assert_eq!(alpha, vec![2.5, 0.5]);
    }
}

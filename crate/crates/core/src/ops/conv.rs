//! Grouped, dilated 2-d cross-correlation and its gradients.
//!
//! Layout: inputs `[N, C, H, W]`, weights `[O, C/g, kh, kw]`, all row-major.
//! Convolution here means the deep-learning convention (no kernel flip).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Geometry of a convolution: groups, stride, zero padding, dilation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub groups: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvSpec {
    /// Dense stride-1 convolution with the given padding.
    pub fn plain(padding: usize) -> Self {
        ConvSpec { groups: 1, stride: 1, padding, dilation: 1 }
    }
}

/// Output spatial size along one axis, or `None` if the kernel does not fit.
fn out_extent(input: usize, k: usize, spec: &ConvSpec) -> Option<usize> {
    let span = spec.dilation * (k - 1) + 1;
    let padded = input + 2 * spec.padding;
    if padded < span {
        return None;
    }
    Some((padded - span) / spec.stride + 1)
}

/// Validates shapes and returns the output shape `[N, O, H', W']`.
pub fn conv2d_out_shape(x: &[usize; 4], w: &[usize; 4], spec: &ConvSpec) -> Result<[usize; 4]> {
    let [n, c, h, width] = *x;
    let [o, wc, kh, kw] = *w;
    if spec.groups == 0 || spec.stride == 0 || spec.dilation == 0 {
        return Err(Error::Invalid(format!(
            "groups/stride/dilation must be positive, got {}/{}/{}",
            spec.groups, spec.stride, spec.dilation
        )));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::Invalid(format!("kernel sides must be odd, got {}x{}", kh, kw)));
    }
    if c % spec.groups != 0 {
        return Err(Error::Shape(format!(
            "input channels {} not divisible by groups {}",
            c, spec.groups
        )));
    }
    if o % spec.groups != 0 {
        return Err(Error::Shape(format!(
            "output channels {} not divisible by groups {}",
            o, spec.groups
        )));
    }
    if wc != c / spec.groups {
        return Err(Error::Shape(format!(
            "weight expects {} channels per group, input provides {}",
            wc,
            c / spec.groups
        )));
    }
    let ho = out_extent(h, kh, spec)
        .ok_or_else(|| Error::Shape(format!("kernel {}x{} does not fit input {}x{}", kh, kw, h, width)))?;
    let wo = out_extent(width, kw, spec)
        .ok_or_else(|| Error::Shape(format!("kernel {}x{} does not fit input {}x{}", kh, kw, h, width)))?;
    Ok([n, o, ho, wo])
}

/// Range of output positions whose tap `k` lands inside the input.
///
/// For output index `t`, the input index is `t*stride + k*dilation - padding`;
/// the returned half-open range keeps it within `0..input`.
#[inline]
fn valid_out_range(input: usize, out: usize, k: usize, spec: &ConvSpec) -> (usize, usize) {
    let off = k as isize * spec.dilation as isize - spec.padding as isize;
    let lo = if off >= 0 { 0 } else { ((-off) as usize).div_ceil(spec.stride) };
    let hi_in = input as isize - 1 - off;
    if hi_in < 0 {
        return (0, 0);
    }
    let hi = (hi_in as usize / spec.stride + 1).min(out);
    (lo.min(hi), hi)
}

/// Forward pass. Shapes must already be validated via [`conv2d_out_shape`].
pub fn conv2d_forward(
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
    let mut out = vec![0.0; n * o * ho * wo];

    for img in 0..n {
        for g in 0..spec.groups {
            for oc_rel in 0..ocg {
                let oc = g * ocg + oc_rel;
                for oy in 0..ho {
                    let orow = &mut out[((img * o + oc) * ho + oy) * wo..][..wo];
                    for ky in 0..kh {
                        let iy = oy as isize * spec.stride as isize + ky as isize * spec.dilation as isize
                            - spec.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let iy = iy as usize;
                        for ic_rel in 0..cg {
                            let ic = g * cg + ic_rel;
                            let xrow = &x[((img * c + ic) * h + iy) * wid..][..wid];
                            let wrow = &w[((oc * cg + ic_rel) * kh + ky) * kw..][..kw];
                            for kx in 0..kw {
                                let wv = wrow[kx];
                                if wv == 0.0 {
                                    continue;
                                }
                                let (lo, hi) = valid_out_range(wid, wo, kx, spec);
                                let off = kx as isize * spec.dilation as isize - spec.padding as isize;
                                for ox in lo..hi {
                                    let ix = (ox as isize * spec.stride as isize + off) as usize;
                                    orow[ox] += wv * xrow[ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradient with respect to the input.
pub fn conv2d_backward_input(
    dy: &[f64],
    os: &[usize; 4],
    w: &[f64],
    ws: &[usize; 4],
    xs: &[usize; 4],
    spec: &ConvSpec,
) -> Vec<f64> {
    let [n, c, h, wid] = *xs;
    let [o, cg, kh, kw] = *ws;
    let [_, _, ho, wo] = *os;
    let ocg = o / spec.groups;
    let mut dx = vec![0.0; n * c * h * wid];

    for img in 0..n {
        for g in 0..spec.groups {
            for oc_rel in 0..ocg {
                let oc = g * ocg + oc_rel;
                for oy in 0..ho {
                    let dyrow = &dy[((img * o + oc) * ho + oy) * wo..][..wo];
                    for ky in 0..kh {
                        let iy = oy as isize * spec.stride as isize + ky as isize * spec.dilation as isize
                            - spec.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let iy = iy as usize;
                        for ic_rel in 0..cg {
                            let ic = g * cg + ic_rel;
                            let dxrow = &mut dx[((img * c + ic) * h + iy) * wid..][..wid];
                            let wrow = &w[((oc * cg + ic_rel) * kh + ky) * kw..][..kw];
                            for kx in 0..kw {
                                let wv = wrow[kx];
                                if wv == 0.0 {
                                    continue;
                                }
                                let (lo, hi) = valid_out_range(wid, wo, kx, spec);
                                let off = kx as isize * spec.dilation as isize - spec.padding as isize;
                                for ox in lo..hi {
                                    let ix = (ox as isize * spec.stride as isize + off) as usize;
                                    dxrow[ix] += wv * dyrow[ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Gradient with respect to the weights.
pub fn conv2d_backward_weight(
    dy: &[f64],
    os: &[usize; 4],
    x: &[f64],
    xs: &[usize; 4],
    ws: &[usize; 4],
    spec: &ConvSpec,
) -> Vec<f64> {
    let [n, c, h, wid] = *xs;
    let [o, cg, kh, kw] = *ws;
    let [_, _, ho, wo] = *os;
    let ocg = o / spec.groups;
    let mut dw = vec![0.0; o * cg * kh * kw];

    for img in 0..n {
        for g in 0..spec.groups {
            for oc_rel in 0..ocg {
                let oc = g * ocg + oc_rel;
                for oy in 0..ho {
                    let dyrow = &dy[((img * o + oc) * ho + oy) * wo..][..wo];
                    for ky in 0..kh {
                        let iy = oy as isize * spec.stride as isize + ky as isize * spec.dilation as isize
                            - spec.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let iy = iy as usize;
                        for ic_rel in 0..cg {
                            let ic = g * cg + ic_rel;
                            let xrow = &x[((img * c + ic) * h + iy) * wid..][..wid];
                            let dwrow = &mut dw[((oc * cg + ic_rel) * kh + ky) * kw..][..kw];
                            for kx in 0..kw {
                                let (lo, hi) = valid_out_range(wid, wo, kx, spec);
                                let off = kx as isize * spec.dilation as isize - spec.padding as isize;
                                let mut acc = 0.0;
                                for ox in lo..hi {
                                    let ix = (ox as isize * spec.stride as isize + off) as usize;
                                    acc += dyrow[ox] * xrow[ix];
                                }
                                dwrow[kx] += acc;
                            }
                        }
                    }
                }
            }
        }
    }
    dw
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use rand::Rng;
    use rand::SeedableRng;

    /// Direct six-nested-loop reference convolution; written before the
    /// production kernel and kept deliberately naive.
    pub(crate) fn conv2d_reference(
        x: &[f64],
        xs: &[usize; 4],
        w: &[f64],
        ws: &[usize; 4],
        spec: &ConvSpec,
    ) -> Vec<f64> {
        let [n, c, h, wid] = *xs;
        let [o, cg, kh, kw] = *ws;
        let os = conv2d_out_shape(xs, ws, spec).unwrap();
        let [_, _, ho, wo] = os;
        let ocg = o / spec.groups;
        let mut out = vec![0.0; n * o * ho * wo];
        for img in 0..n {
            for oc in 0..o {
                let g = oc / ocg;
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for ic_rel in 0..cg {
                            let ic = g * cg + ic_rel;
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = oy as isize * spec.stride as isize
                                        + ky as isize * spec.dilation as isize
                                        - spec.padding as isize;
                                    let ix = ox as isize * spec.stride as isize
                                        + kx as isize * spec.dilation as isize
                                        - spec.padding as isize;
                                    if iy >= 0 && iy < h as isize && ix >= 0 && ix < wid as isize {
                                        acc += x[((img * c + ic) * h + iy as usize) * wid + ix as usize]
                                            * w[((oc * cg + ic_rel) * kh + ky) * kw + kx];
                                    }
                                }
                            }
                        }
                        out[((img * o + oc) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn ones_identity_kernel_sums_channels() {
        // input all-ones [1,2,3,3], weight all-ones [2,2,1,1] -> all 2.0
        let xs = [1, 2, 3, 3];
        let ws = [2, 2, 1, 1];
        let spec = ConvSpec::plain(0);
        let os = conv2d_out_shape(&xs, &ws, &spec).unwrap();
        assert_eq!(os, [1, 2, 3, 3]);
        let out = conv2d_forward(&[1.0; 18], &xs, &[1.0; 4], &ws, &spec, &os);
        assert!(out.iter().all(|&v| v == 2.0));
    }

    #[test]
    fn grouping_halves_fan_in() {
        // input all-ones [1,4,3,3], weight all-ones [4,2,1,1], g=2 -> all 2.0
        let xs = [1, 4, 3, 3];
        let ws = [4, 2, 1, 1];
        let spec = ConvSpec { groups: 2, stride: 1, padding: 0, dilation: 1 };
        let os = conv2d_out_shape(&xs, &ws, &spec).unwrap();
        let out = conv2d_forward(&[1.0; 36], &xs, &[1.0; 8], &ws, &spec, &os);
        assert!(out.iter().all(|&v| v == 2.0));
    }

    #[test]
    fn rejects_bad_group_counts_and_even_kernels() {
        let spec = ConvSpec { groups: 3, stride: 1, padding: 0, dilation: 1 };
        assert!(conv2d_out_shape(&[1, 4, 3, 3], &[3, 1, 1, 1], &spec).is_err());
        assert!(conv2d_out_shape(&[1, 3, 3, 3], &[4, 1, 1, 1], &spec).is_err());
        let spec = ConvSpec::plain(0);
        assert!(conv2d_out_shape(&[1, 1, 4, 4], &[1, 1, 2, 2], &spec).is_err());
    }

    #[test]
    fn depthwise_dilated_matches_reference() {
        // random [1,12,8,8], g=12, k=3, dilation=2, pad=2
        let mut rng = crate::SeedRng::seed_from_u64(11);
        let xs = [1, 12, 8, 8];
        let ws = [12, 1, 3, 3];
        let spec = ConvSpec { groups: 12, stride: 1, padding: 2, dilation: 2 };
        let x: Vec<f64> = (0..12 * 64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..12 * 9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let os = conv2d_out_shape(&xs, &ws, &spec).unwrap();
        assert_eq!(os, [1, 12, 8, 8]);
        let got = conv2d_forward(&x, &xs, &w, &ws, &spec, &os);
        let want = conv2d_reference(&x, &xs, &w, &ws, &spec);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-10, "{} vs {}", a, b);
        }
    }

    #[test]
    fn random_configs_match_reference() {
        let mut rng = crate::SeedRng::seed_from_u64(7);
        for case in 0..60 {
            let groups = [1usize, 2, 3][case % 3];
            let k = if case % 2 == 0 { 3 } else { 5 };
            let dilation = 1 + case % 2;
            let stride = 1 + (case / 2) % 2;
            let cg = 1 + case % 3;
            let c = groups * cg;
            let ocg = 1 + (case / 3) % 2;
            let o = groups * ocg;
            let h = 5 + case % 4;
            let spec = ConvSpec { groups, stride, padding: dilation * (k - 1) / 2, dilation };
            let xs = [2, c, h, h];
            let ws = [o, cg, k, k];
            let x: Vec<f64> = (0..2 * c * h * h).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..o * cg * k * k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let os = conv2d_out_shape(&xs, &ws, &spec).unwrap();
            let got = conv2d_forward(&x, &xs, &w, &ws, &spec, &os);
            let want = conv2d_reference(&x, &xs, &w, &ws, &spec);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn grouped_conv_equals_independent_slices() {
        // conv2d with g groups == g independent convs on channel slices.
        let mut rng = crate::SeedRng::seed_from_u64(3);
        let groups = 3;
        let cg = 2;
        let ocg = 2;
        let (c, o, h) = (groups * cg, groups * ocg, 6);
        let spec = ConvSpec { groups, stride: 1, padding: 1, dilation: 1 };
        let xs = [1, c, h, h];
        let ws = [o, cg, 3, 3];
        let x: Vec<f64> = (0..c * h * h).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..o * cg * 9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let os = conv2d_out_shape(&xs, &ws, &spec).unwrap();
        let whole = conv2d_forward(&x, &xs, &w, &ws, &spec, &os);

        let single = ConvSpec { groups: 1, stride: 1, padding: 1, dilation: 1 };
        for g in 0..groups {
            let xg: Vec<f64> = x[g * cg * h * h..(g + 1) * cg * h * h].to_vec();
            let wg: Vec<f64> = w[g * ocg * cg * 9..(g + 1) * ocg * cg * 9].to_vec();
            let os_g = conv2d_out_shape(&[1, cg, h, h], &[ocg, cg, 3, 3], &single).unwrap();
            let part = conv2d_forward(&xg, &[1, cg, h, h], &wg, &[ocg, cg, 3, 3], &single, &os_g);
            let whole_slice = &whole[g * ocg * h * h..(g + 1) * ocg * h * h];
            assert_eq!(part.as_slice(), whole_slice);
        }
    }
}

//! 3x3 max and average pooling with padding 1.
//!
//! Stride 1 preserves the spatial extent; stride 2 halves it (rounding up).
//! Padded positions never participate: max is taken over in-bounds taps and
//! averages divide by the in-bounds tap count.

use alloc::vec;
use alloc::vec::Vec;

/// Output spatial extent for a 3-tap window with padding 1.
pub fn pool3_out_extent(input: usize, stride: usize) -> usize {
    (input - 1) / stride + 1
}

/// Max pooling; returns the output and, per output element, the flat input
/// index of its argmax (first-wins on ties, so backward is deterministic).
pub fn maxpool3_forward(x: &[f64], xs: &[usize; 4], stride: usize) -> (Vec<f64>, Vec<u32>) {
    let [n, c, h, w] = *xs;
    let (ho, wo) = (pool3_out_extent(h, stride), pool3_out_extent(w, stride));
    let mut out = vec![0.0; n * c * ho * wo];
    let mut arg = vec![0u32; n * c * ho * wo];
    for img in 0..n {
        for ch in 0..c {
            let plane = &x[(img * c + ch) * h * w..][..h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for ky in 0..3usize {
                        let iy = (oy * stride + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..3usize {
                            let ix = (ox * stride + kx) as isize - 1;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = iy as usize * w + ix as usize;
                            if plane[idx] > best {
                                best = plane[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o_idx = (img * c + ch) * ho * wo + oy * wo + ox;
                    out[o_idx] = best;
                    arg[o_idx] = ((img * c + ch) * h * w + best_idx) as u32;
                }
            }
        }
    }
    (out, arg)
}

/// Backward of max pooling: gradient routes to the recorded argmax.
pub fn maxpool3_backward(dy: &[f64], arg: &[u32], input_len: usize) -> Vec<f64> {
    let mut dx = vec![0.0; input_len];
    for (g, &idx) in dy.iter().zip(arg) {
        dx[idx as usize] += g;
    }
    dx
}

/// Average pooling over in-bounds taps.
pub fn avgpool3_forward(x: &[f64], xs: &[usize; 4], stride: usize) -> Vec<f64> {
    let [n, c, h, w] = *xs;
    let (ho, wo) = (pool3_out_extent(h, stride), pool3_out_extent(w, stride));
    let mut out = vec![0.0; n * c * ho * wo];
    for img in 0..n {
        for ch in 0..c {
            let plane = &x[(img * c + ch) * h * w..][..h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    let mut count = 0usize;
                    for ky in 0..3usize {
                        let iy = (oy * stride + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..3usize {
                            let ix = (ox * stride + kx) as isize - 1;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += plane[iy as usize * w + ix as usize];
                            count += 1;
                        }
                    }
                    out[(img * c + ch) * ho * wo + oy * wo + ox] = acc / count as f64;
                }
            }
        }
    }
    out
}

/// Backward of average pooling: gradient spreads uniformly over the taps
/// that contributed.
pub fn avgpool3_backward(dy: &[f64], xs: &[usize; 4], stride: usize) -> Vec<f64> {
    let [n, c, h, w] = *xs;
    let (ho, wo) = (pool3_out_extent(h, stride), pool3_out_extent(w, stride));
    let mut dx = vec![0.0; n * c * h * w];
    for img in 0..n {
        for ch in 0..c {
            let dplane = &mut dx[(img * c + ch) * h * w..][..h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut taps: [(usize, usize); 9] = [(0, 0); 9];
                    let mut count = 0usize;
                    for ky in 0..3usize {
                        let iy = (oy * stride + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..3usize {
                            let ix = (ox * stride + kx) as isize - 1;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            taps[count] = (iy as usize, ix as usize);
                            count += 1;
                        }
                    }
                    let g = dy[(img * c + ch) * ho * wo + oy * wo + ox] / count as f64;
                    for &(iy, ix) in &taps[..count] {
                        dplane[iy * w + ix] += g;
                    }
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;

    #[test]
    fn constant_input_is_preserved_by_both_pools() {
        let xs = [1, 1, 4, 4];
        let x = [3.25; 16];
        let (mx, _) = maxpool3_forward(&x, &xs, 1);
        let av = avgpool3_forward(&x, &xs, 1);
        assert!(mx.iter().all(|&v| v == 3.25));
        assert!(av.iter().all(|&v| v == 3.25));
    }

    #[test]
    fn spike_dominates_its_window() {
        let xs = [1, 1, 3, 3];
        let mut x = [0.0; 9];
        x[4] = 5.0; // center
        let (mx, _) = maxpool3_forward(&x, &xs, 1);
        assert!(mx.iter().all(|&v| v == 5.0));
    }

    #[test]
    fn random_map_matches_window_scan() {
        // Loop oracle: scan every window position explicitly.
        let mut rng = crate::SeedRng::seed_from_u64(5);
        let (h, w) = (5usize, 5usize);
        let xs = [1, 1, h, w];
        let x: alloc::vec::Vec<f64> = (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        for stride in [1usize, 2] {
            let (mx, _) = maxpool3_forward(&x, &xs, stride);
            let av = avgpool3_forward(&x, &xs, stride);
            let (ho, wo) = (pool3_out_extent(h, stride), pool3_out_extent(w, stride));
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut m = f64::NEG_INFINITY;
                    let mut s = 0.0;
                    let mut cnt = 0;
                    for ky in 0..3isize {
                        for kx in 0..3isize {
                            let iy = oy as isize * stride as isize + ky - 1;
                            let ix = ox as isize * stride as isize + kx - 1;
                            if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                let v = x[iy as usize * w + ix as usize];
                                m = m.max(v);
                                s += v;
                                cnt += 1;
                            }
                        }
                    }
                    assert_eq!(mx[oy * wo + ox], m);
                    assert!((av[oy * wo + ox] - s / cnt as f64).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn stride_two_rounds_up() {
        assert_eq!(pool3_out_extent(8, 2), 4);
        assert_eq!(pool3_out_extent(7, 2), 4);
        assert_eq!(pool3_out_extent(8, 1), 8);
    }
}

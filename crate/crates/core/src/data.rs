//! Dataset ingestion, deterministic splits and augmentation.
//!
//! Images live in memory in the 3073-byte record layout (1 label byte +
//! 3072 pixel bytes, channel-major R,G,B, row-major 32x32); batches are
//! materialized to normalized `f64` tensors on demand. A synthetic generator
//! emits the identical byte format so every pipeline stage can be exercised
//! without the real files.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};
use crate::math;
use crate::tape::Targets;
use crate::tensor::Tensor;
use crate::SeedRng;

/// Side of a dataset image in pixels.
pub const IMAGE_SIDE: usize = 32;
/// Pixel bytes per record (3 channels, channel-major).
pub const IMAGE_BYTES: usize = 3 * IMAGE_SIDE * IMAGE_SIDE;
/// Record bytes: one label byte plus the pixels.
pub const RECORD_BYTES: usize = 1 + IMAGE_BYTES;

/// Fixed per-channel normalization constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

/// The usual CIFAR-10 training statistics.
pub const CIFAR10_STATS: ChannelStats = ChannelStats {
    mean: [0.49139968, 0.48215827, 0.44653124],
    std: [0.24703233, 0.24348505, 0.26158768],
};

/// Statistics for the synthetic corpus (patterns centered on mid-gray).
pub const SYNTHETIC_STATS: ChannelStats = ChannelStats { mean: [0.5, 0.5, 0.5], std: [0.25, 0.25, 0.25] };

/// An in-memory labeled image set.
#[derive(Debug, Clone)]
pub struct Dataset {
    images: Vec<u8>,
    labels: Vec<u8>,
    num_classes: usize,
    pub stats: ChannelStats,
}

impl Dataset {
    /// Decodes a stream of 3073-byte records. A short tail is reported with
    /// the byte offset of the truncated record.
    pub fn from_cifar_bytes(bytes: &[u8], num_classes: usize, stats: ChannelStats) -> Result<Self> {
        let n = bytes.len() / RECORD_BYTES;
        if bytes.len() % RECORD_BYTES != 0 {
            return Err(Error::Record {
                offset: n * RECORD_BYTES,
                detail: format!(
                    "{} trailing bytes, record needs {}",
                    bytes.len() - n * RECORD_BYTES,
                    RECORD_BYTES
                ),
            });
        }
        let mut images = Vec::with_capacity(n * IMAGE_BYTES);
        let mut labels = Vec::with_capacity(n);
        for rec in 0..n {
            let base = rec * RECORD_BYTES;
            let label = bytes[base];
            if (label as usize) >= num_classes {
                return Err(Error::Record {
                    offset: base,
                    detail: format!("label {} out of range for {} classes", label, num_classes),
                });
            }
            labels.push(label);
            images.extend_from_slice(&bytes[base + 1..base + RECORD_BYTES]);
        }
        Ok(Dataset { images, labels, num_classes, stats })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn label(&self, idx: usize) -> usize {
        self.labels[idx] as usize
    }

    pub fn image_bytes(&self, idx: usize) -> &[u8] {
        &self.images[idx * IMAGE_BYTES..][..IMAGE_BYTES]
    }

    /// Keeps only the listed classes, relabeled to `0..keep.len()`.
    pub fn filter_classes(&self, keep: &[usize]) -> Dataset {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for idx in 0..self.len() {
            if let Some(new_label) = keep.iter().position(|&k| k == self.label(idx)) {
                images.extend_from_slice(self.image_bytes(idx));
                labels.push(new_label as u8);
            }
        }
        Dataset { images, labels, num_classes: keep.len(), stats: self.stats }
    }

    /// The first `n` records.
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            images: self.images[..n * IMAGE_BYTES].to_vec(),
            labels: self.labels[..n].to_vec(),
            num_classes: self.num_classes,
            stats: self.stats,
        }
    }
}

/// Deterministic disjoint, exhaustive split of `0..len` into a
/// `fraction`-sized part and the remainder.
pub fn split_indices(len: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Invalid(format!("split fraction must be in (0, 1), got {}", fraction)));
    }
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = <SeedRng as rand::SeedableRng>::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let cut = math::round(len as f64 * fraction) as usize;
    let a = order[..cut].to_vec();
    let b = order[cut..].to_vec();
    Ok((a, b))
}

/// Augmentation policy: zero-pad-then-crop, horizontal flip, cutout and
/// mixup. Cutout runs after normalization with fill value 0; mixup draws one
/// `lambda ~ Beta(a, a)` per batch and mixes images and one-hot labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentPolicy {
    pub pad_crop: Option<usize>,
    pub flip: bool,
    pub cutout: Option<usize>,
    pub mixup: Option<f64>,
}

impl AugmentPolicy {
    /// No augmentation (evaluation batches).
    pub const NONE: AugmentPolicy = AugmentPolicy { pad_crop: None, flip: false, cutout: None, mixup: None };

    /// Pad-4 random crop plus horizontal flip.
    pub const CROP_FLIP: AugmentPolicy =
        AugmentPolicy { pad_crop: Some(4), flip: true, cutout: None, mixup: None };

    pub fn validate(&self) -> Result<()> {
        if let Some(len) = self.cutout {
            if len == 0 || len > IMAGE_SIDE {
                return Err(Error::Invalid(format!(
                    "cutout length {} outside 1..={}",
                    len, IMAGE_SIDE
                )));
            }
        }
        if let Some(a) = self.mixup {
            if !(a > 0.0) {
                return Err(Error::Invalid(format!("mixup alpha must be positive, got {}", a)));
            }
        }
        Ok(())
    }
}

/// A normalized batch ready for the network.
#[derive(Debug, Clone)]
pub struct ImageBatch {
    pub images: Tensor,
    pub targets: Targets,
}

/// Decodes one image to `[0, 1]` floats, channel-major.
pub fn decode_unit(bytes: &[u8]) -> Vec<f64> {
    bytes.iter().map(|&b| b as f64 / 255.0).collect()
}

/// Zero-pad by `pad` then crop back to the original side at offset
/// `(dy, dx)` with `0 <= dy, dx <= 2 * pad`.
pub fn pad_crop(img: &[f64], pad: usize, dy: usize, dx: usize) -> Vec<f64> {
    let side = IMAGE_SIDE;
    let mut out = vec![0.0; img.len()];
    for c in 0..3 {
        for y in 0..side {
            for x in 0..side {
                let sy = (y + dy) as isize - pad as isize;
                let sx = (x + dx) as isize - pad as isize;
                if sy >= 0 && sy < side as isize && sx >= 0 && sx < side as isize {
                    out[(c * side + y) * side + x] = img[(c * side + sy as usize) * side + sx as usize];
                }
            }
        }
    }
    out
}

/// Horizontal flip (an involution).
pub fn hflip(img: &mut [f64]) {
    let side = IMAGE_SIDE;
    for c in 0..3 {
        for y in 0..side {
            let row = &mut img[(c * side + y) * side..][..side];
            row.reverse();
        }
    }
}

/// Per-channel normalization in place.
pub fn normalize(img: &mut [f64], stats: &ChannelStats) {
    let plane = IMAGE_SIDE * IMAGE_SIDE;
    for c in 0..3 {
        for v in img[c * plane..][..plane].iter_mut() {
            *v = (*v - stats.mean[c]) / stats.std[c];
        }
    }
}

/// Zeroes a `len x len` square centered at `(cy, cx)`, clipped at borders.
pub fn cutout(img: &mut [f64], cy: usize, cx: usize, len: usize) {
    let side = IMAGE_SIDE as isize;
    let half = len as isize / 2;
    let y0 = (cy as isize - half).max(0);
    let y1 = (cy as isize - half + len as isize).min(side);
    let x0 = (cx as isize - half).max(0);
    let x1 = (cx as isize - half + len as isize).min(side);
    for c in 0..3usize {
        for y in y0..y1 {
            for x in x0..x1 {
                img[(c * IMAGE_SIDE + y as usize) * IMAGE_SIDE + x as usize] = 0.0;
            }
        }
    }
}

/// Assembles a normalized, optionally augmented batch from dataset rows.
///
/// All randomness comes from `rng` in a fixed order, so identical seeds give
/// byte-identical batches.
pub fn make_batch(
    dataset: &Dataset,
    indices: &[usize],
    policy: &AugmentPolicy,
    rng: &mut SeedRng,
) -> Result<ImageBatch> {
    policy.validate()?;
    let n = indices.len();
    if n == 0 {
        return Err(Error::Invalid("empty batch".into()));
    }
    let mut images = Vec::with_capacity(n * IMAGE_BYTES);
    let mut labels = Vec::with_capacity(n);
    for &idx in indices {
        let mut img = decode_unit(dataset.image_bytes(idx));
        if let Some(pad) = policy.pad_crop {
            let dy = rng.random_range(0..=2 * pad);
            let dx = rng.random_range(0..=2 * pad);
            img = pad_crop(&img, pad, dy, dx);
        }
        if policy.flip && rng.random_range(0..2u8) == 1 {
            hflip(&mut img);
        }
        normalize(&mut img, &dataset.stats);
        if let Some(len) = policy.cutout {
            let cy = rng.random_range(0..IMAGE_SIDE);
            let cx = rng.random_range(0..IMAGE_SIDE);
            cutout(&mut img, cy, cx, len);
        }
        images.extend_from_slice(&img);
        labels.push(dataset.label(idx));
    }
    let mut tensor = Tensor::new(vec![n, 3, IMAGE_SIDE, IMAGE_SIDE], images)?;
    let k = dataset.num_classes();
    let targets = if let Some(alpha) = policy.mixup {
        let beta = Beta::new(alpha, alpha)
            .map_err(|_| Error::Invalid(format!("invalid mixup alpha {}", alpha)))?;
        let lambda: f64 = beta.sample(rng);
        let mut partner: Vec<usize> = (0..n).collect();
        partner.shuffle(rng);
        let mixed = mix_images(tensor.data(), &partner, lambda, n);
        tensor = Tensor::new(vec![n, 3, IMAGE_SIDE, IMAGE_SIDE], mixed)?;
        let mut probs = vec![0.0; n * k];
        for i in 0..n {
            probs[i * k + labels[i]] += lambda;
            probs[i * k + labels[partner[i]]] += 1.0 - lambda;
        }
        Targets::Soft { probs, classes: k }
    } else {
        Targets::Hard(labels)
    };
    Ok(ImageBatch { images: tensor, targets })
}

fn mix_images(data: &[f64], partner: &[usize], lambda: f64, n: usize) -> Vec<f64> {
    let per = data.len() / n;
    let mut out = vec![0.0; data.len()];
    for i in 0..n {
        let a = &data[i * per..][..per];
        let b = &data[partner[i] * per..][..per];
        for j in 0..per {
            out[i * per + j] = lambda * a[j] + (1.0 - lambda) * b[j];
        }
    }
    out
}

/// Emits `num_classes * per_class` records in the 3073-byte format.
///
/// Class identity is a spatial composition of oriented stripe textures: the
/// top and bottom halves carry orthogonal orientations and the assignment
/// flips between paired classes. Telling the classes apart requires features
/// that bind orientation to location, which a stack of small convolutions
/// learns and parameter-free paths cannot.
pub fn synthetic_cifar_bytes(num_classes: usize, per_class: usize, seed: u64) -> Vec<u8> {
    let mut rng = <SeedRng as rand::SeedableRng>::seed_from_u64(seed);
    let mut out = Vec::with_capacity(num_classes * per_class * RECORD_BYTES);
    let side = IMAGE_SIDE;
    let freq = 4.0;
    for class in 0..num_classes {
        // Paired classes share the two orientations but swap their layout.
        let base_angle = core::f64::consts::PI * (class / 2) as f64 / (num_classes as f64 / 2.0).max(1.0);
        let swap = class % 2 == 1;
        for _ in 0..per_class {
            let phase_top = rng.random_range(0.0..core::f64::consts::TAU);
            let phase_bottom = rng.random_range(0.0..core::f64::consts::TAU);
            let boundary = side / 2 + rng.random_range(0..7) - 3;
            out.push(class as u8);
            let mut pixels = vec![0u8; IMAGE_BYTES];
            for y in 0..side {
                for x in 0..side {
                    let top = y < boundary;
                    let angle = if top != swap { base_angle } else { base_angle + core::f64::consts::FRAC_PI_2 };
                    let phase = if top { phase_top } else { phase_bottom };
                    let t = freq * core::f64::consts::TAU
                        * (x as f64 * math::cos(angle) + y as f64 * math::sin(angle))
                        / side as f64
                        + phase;
                    let signal = 128.0 + 60.0 * math::sin(t);
                    for c in 0..3 {
                        let noise: f64 = rng.random_range(-25.0..25.0);
                        let v = math::round(signal + noise).clamp(0.0, 255.0);
                        pixels[(c * side + y) * side + x] = v as u8;
                    }
                }
            }
            out.extend_from_slice(&pixels);
        }
    }
    out
}

/// Batch index iterator: shuffles `indices` and yields chunks of
/// `batch_size`, dropping a trailing partial chunk.
pub fn epoch_batches(
    indices: &[usize],
    batch_size: usize,
    limit: Option<usize>,
    rng: &mut SeedRng,
) -> Vec<Vec<usize>> {
    let mut order = indices.to_vec();
    order.shuffle(rng);
    let mut batches: Vec<Vec<usize>> =
        order.chunks_exact(batch_size).map(|c| c.to_vec()).collect();
    if let Some(cap) = limit {
        batches.truncate(cap);
    }
    batches
}

/// Human-readable label histogram, for logs.
pub fn label_histogram(ds: &Dataset) -> String {
    let mut counts = vec![0usize; ds.num_classes()];
    for i in 0..ds.len() {
        counts[ds.label(i)] += 1;
    }
    format!("{:?}", counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn record_format_is_bit_exact() {
        // label 7, all pixels 255 -> label 7, image all 1.0 pre-normalization
        let mut bytes = vec![7u8];
        bytes.extend_from_slice(&[255u8; IMAGE_BYTES]);
        let ds = Dataset::from_cifar_bytes(&bytes, 10, CIFAR10_STATS).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.label(0), 7);
        assert!(decode_unit(ds.image_bytes(0)).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn two_records_make_a_dataset_of_two() {
        let bytes = vec![0u8; 2 * RECORD_BYTES];
        let ds = Dataset::from_cifar_bytes(&bytes, 10, CIFAR10_STATS).unwrap();
        assert_eq!(ds.len(), 2);
    }

    #[test]
    fn truncated_record_reports_its_offset() {
        let bytes = vec![0u8; RECORD_BYTES + 100];
        let err = Dataset::from_cifar_bytes(&bytes, 10, CIFAR10_STATS).unwrap_err();
        match err {
            Error::Record { offset, .. } => assert_eq!(offset, RECORD_BYTES),
            other => panic!("unexpected error {:?}", other),
        }
    }

    #[test]
    fn split_is_disjoint_exhaustive_and_deterministic() {
        let (a, b) = split_indices(101, 0.5, 9).unwrap();
        let (a2, b2) = split_indices(101, 0.5, 9).unwrap();
        assert_eq!(a, a2);
        assert_eq!(b, b2);
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..101).collect::<Vec<_>>());
        let (c, _) = split_indices(101, 0.5, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn fifty_fifty_split_of_fifty_thousand() {
        let (a, b) = split_indices(50_000, 0.5, 1).unwrap();
        assert_eq!(a.len(), 25_000);
        assert_eq!(b.len(), 25_000);
    }

    #[test]
    fn flip_is_an_involution() {
        let mut rng = SeedRng::seed_from_u64(3);
        let mut img: Vec<f64> = (0..IMAGE_BYTES).map(|_| rng.random_range(0.0..1.0)).collect();
        let original = img.clone();
        hflip(&mut img);
        assert_ne!(img, original);
        hflip(&mut img);
        assert_eq!(img, original);
    }

    #[test]
    fn interior_cutout_zeroes_exactly_256_pixels_per_channel() {
        let mut img = vec![1.0; IMAGE_BYTES];
        cutout(&mut img, 16, 16, 16);
        let plane = IMAGE_SIDE * IMAGE_SIDE;
        for c in 0..3 {
            let zeros = img[c * plane..][..plane].iter().filter(|&&v| v == 0.0).count();
            assert_eq!(zeros, 256);
        }
    }

    #[test]
    fn cutout_longer_than_the_image_is_rejected() {
        let policy = AugmentPolicy { pad_crop: None, flip: false, cutout: Some(33), mixup: None };
        assert!(policy.validate().is_err());
    }

    #[test]
    fn mixup_with_lambda_one_is_identity() {
        let partner = vec![1usize, 0];
        let data = vec![1.0, 2.0, 3.0, 4.0];
        let mixed = mix_images(&data, &partner, 1.0, 2);
        assert_eq!(mixed, data);
    }

    #[test]
    fn mixup_labels_sum_to_one() {
        let bytes = synthetic_cifar_bytes(2, 8, 5);
        let ds = Dataset::from_cifar_bytes(&bytes, 2, SYNTHETIC_STATS).unwrap();
        let policy = AugmentPolicy { pad_crop: None, flip: false, cutout: None, mixup: Some(0.2) };
        let mut rng = SeedRng::seed_from_u64(11);
        let batch = make_batch(&ds, &(0..16).collect::<Vec<_>>(), &policy, &mut rng).unwrap();
        match batch.targets {
            Targets::Soft { probs, classes } => {
                for row in probs.chunks(classes) {
                    let s: f64 = row.iter().sum();
                    assert!((s - 1.0).abs() < 1e-12);
                }
            }
            _ => panic!("mixup produces soft targets"),
        }
    }

    #[test]
    fn batches_are_deterministic_under_seed() {
        let bytes = synthetic_cifar_bytes(2, 10, 1);
        let ds = Dataset::from_cifar_bytes(&bytes, 2, SYNTHETIC_STATS).unwrap();
        let policy = AugmentPolicy { pad_crop: Some(4), flip: true, cutout: Some(8), mixup: None };
        let run = || {
            let mut rng = SeedRng::seed_from_u64(42);
            make_batch(&ds, &[0, 3, 7, 12], &policy, &mut rng).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.images.data(), b.images.data());
        assert_eq!(a.targets, b.targets);
    }

    #[test]
    fn synthetic_generator_emits_valid_records() {
        let bytes = synthetic_cifar_bytes(2, 5, 3);
        assert_eq!(bytes.len(), 10 * RECORD_BYTES);
        let ds = Dataset::from_cifar_bytes(&bytes, 2, SYNTHETIC_STATS).unwrap();
        assert_eq!(ds.len(), 10);
        assert_eq!(label_histogram(&ds), "[5, 5]");
    }

    #[test]
    fn class_filter_relabels() {
        let bytes = synthetic_cifar_bytes(4, 3, 3);
        let ds = Dataset::from_cifar_bytes(&bytes, 4, SYNTHETIC_STATS).unwrap();
        let filtered = ds.filter_classes(&[2, 3]);
        assert_eq!(filtered.len(), 6);
        assert_eq!(filtered.num_classes(), 2);
        assert!((0..filtered.len()).all(|i| filtered.label(i) < 2));
    }
}

//! Sign-bit packing for XNOR/popcount arithmetic.
//!
//! One bit per element, bit = 1 iff the element's sign is +1 (with the fixed
//! convention `sign(0) = +1`). Rows are word-aligned: every row starts on a
//! 64-bit boundary and its trailing pad bits are kept at zero, so they can
//! never contribute to a popcount.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Bit-packed sign planes: `rows` rows of `row_len` logical bits each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitPlanes {
    logical_shape: Vec<usize>,
    rows: usize,
    row_len: usize,
    words_per_row: usize,
    words: Vec<u64>,
}

impl BitPlanes {
    /// Packs raw values as `rows x row_len`, row-major.
    pub fn pack_rows(values: &[f64], rows: usize, row_len: usize, logical_shape: &[usize]) -> Self {
        debug_assert_eq!(values.len(), rows * row_len);
        let words_per_row = row_len.div_ceil(64).max(1);
        let mut words = vec![0u64; rows * words_per_row];
        for r in 0..rows {
            let src = &values[r * row_len..][..row_len];
            let dst = &mut words[r * words_per_row..][..words_per_row];
            for (i, &v) in src.iter().enumerate() {
                if v >= 0.0 {
                    dst[i / 64] |= 1u64 << (i % 64);
                }
            }
        }
        BitPlanes { logical_shape: logical_shape.to_vec(), rows, row_len, words_per_row, words }
    }

    /// Packs a whole tensor as a single row.
    pub fn pack(t: &Tensor) -> Self {
        Self::pack_rows(t.data(), 1, t.numel(), t.shape())
    }

    pub fn logical_shape(&self) -> &[usize] {
        &self.logical_shape
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Valid (non-pad) bits per row.
    pub fn row_len(&self) -> usize {
        self.row_len
    }

    pub fn words_per_row(&self) -> usize {
        self.words_per_row
    }

    /// Packed words of one row.
    pub fn row(&self, r: usize) -> &[u64] {
        &self.words[r * self.words_per_row..][..self.words_per_row]
    }

    /// Bit at logical position `(row, idx)`, as a sign value.
    pub fn get(&self, row: usize, idx: usize) -> f64 {
        let w = self.row(row)[idx / 64];
        if (w >> (idx % 64)) & 1 == 1 {
            1.0
        } else {
            -1.0
        }
    }

    /// Expands back to a +-1 tensor with the stored logical shape.
    pub fn unpack(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.rows * self.row_len);
        for r in 0..self.rows {
            for i in 0..self.row_len {
                data.push(self.get(r, i));
            }
        }
        Tensor::new(self.logical_shape.clone(), data).expect("shape matches packed size")
    }
}

/// Packs the signs of a tensor (flat, single row).
pub fn pack_signs(t: &Tensor) -> BitPlanes {
    BitPlanes::pack(t)
}

/// Dot product of two +-1 vectors of logical length `n`, computed as
/// `n - 2 * popcount(xor)` over the packed words.
pub fn binary_dot(a: &BitPlanes, b: &BitPlanes, n: usize) -> Result<i64> {
    if a.rows != 1 || b.rows != 1 || a.row_len != n || b.row_len != n {
        return Err(Error::Shape(format!(
            "binary_dot expects two single-row planes of length {}, got {}x{} and {}x{}",
            n, a.rows, a.row_len, b.rows, b.row_len
        )));
    }
    let mut diff = 0u32;
    for (x, y) in a.row(0).iter().zip(b.row(0)) {
        diff += (x ^ y).count_ones();
    }
    Ok(n as i64 - 2 * diff as i64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;

    #[test]
    fn pack_mixed_signs() {
        let t = Tensor::new(vec![3], vec![2.0, -0.5, 0.1]).unwrap();
        let p = pack_signs(&t);
        assert_eq!(p.row(0)[0] & 0b111, 0b101);
    }

    #[test]
    fn all_negative_packs_to_zero_words() {
        let t = Tensor::new(vec![70], vec![-1.0; 70]).unwrap();
        let p = pack_signs(&t);
        assert!(p.row(0).iter().all(|&w| w == 0));
    }

    #[test]
    fn unpack_round_trips_across_word_boundaries() {
        let mut rng = crate::SeedRng::seed_from_u64(21);
        for len in 1..=129usize {
            let data: Vec<f64> = (0..len)
                .map(|i| if i % 7 == 0 { 0.0 } else { rng.random_range(-1.0..1.0) })
                .collect();
            let t = Tensor::new(vec![len], data).unwrap();
            let p = pack_signs(&t);
            assert_eq!(p.unpack().data(), t.sign().data(), "len {}", len);
        }
    }

    #[test]
    fn dot_of_small_vectors() {
        let a = pack_signs(&Tensor::new(vec![3], vec![1.0, -1.0, 1.0]).unwrap());
        let b = pack_signs(&Tensor::new(vec![3], vec![1.0, 1.0, -1.0]).unwrap());
        assert_eq!(binary_dot(&a, &b, 3).unwrap(), -1);
    }

    #[test]
    fn dot_with_self_is_length() {
        let t = Tensor::new(vec![100], vec![-0.3; 100]).unwrap();
        let p = pack_signs(&t);
        assert_eq!(binary_dot(&p, &p, 100).unwrap(), 100);
    }

    #[test]
    fn dot_matches_float_oracle() {
        let mut rng = crate::SeedRng::seed_from_u64(8);
        for _ in 0..500 {
            let len = rng.random_range(1..=512usize);
            let a: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
            let ta = Tensor::new(vec![len], a.clone()).unwrap();
            let tb = Tensor::new(vec![len], b.clone()).unwrap();
            let got = binary_dot(&pack_signs(&ta), &pack_signs(&tb), len).unwrap();
            let want: f64 = ta.sign().data().iter().zip(tb.sign().data()).map(|(x, y)| x * y).sum();
            assert_eq!(got as f64, want);
        }
    }

    #[test]
    fn dot_rejects_length_mismatch() {
        let a = pack_signs(&Tensor::new(vec![3], vec![1.0; 3]).unwrap());
        let b = pack_signs(&Tensor::new(vec![4], vec![1.0; 4]).unwrap());
        assert!(binary_dot(&a, &b, 3).is_err());
    }
}

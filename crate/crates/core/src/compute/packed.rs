//! Bit-packed `{−1, +1}` matrices and the XNOR-popcount product.
//!
//! Layout: row-major, each row padded to a whole number of `u64` words,
//! entry `j` of a row at bit `j % 64` of word `j / 64` (little-endian within
//! the word). A set bit is `+1`. Pad bits are always zero and are masked out
//! of every popcount.

use serde::{Deserialize, Serialize};

use crate::compute::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedMatrix {
    rows: usize,
    cols: usize,
    words: Vec<u64>,
}

pub(crate) fn words_per_row(cols: usize) -> usize {
    cols.div_ceil(64)
}

/// Mask of the valid bits in the last word of a row.
fn tail_mask(cols: usize) -> u64 {
    match cols % 64 {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

impl PackedMatrix {
    /// Packs a matrix whose entries are exactly `±1`.
    pub fn pack(m: &Tensor) -> Result<Self> {
        if let Some(v) = m.data().iter().find(|&&v| v != 1.0 && v != -1.0) {
            return Err(Error::Contract(format!("cannot pack non-±1 entry {v}")));
        }
        Ok(Self::pack_signs(m))
    }

    /// Packs `sign(m)`: entries `≥ 0` become `+1`.
    pub fn pack_signs(m: &Tensor) -> Self {
        let (rows, cols) = (m.rows(), m.cols());
        let wpr = words_per_row(cols);
        let mut words = vec![0u64; rows * wpr];
        for r in 0..rows {
            for (c, &v) in m.row(r).iter().enumerate() {
                if v >= 0.0 {
                    words[r * wpr + c / 64] |= 1u64 << (c % 64);
                }
            }
        }
        PackedMatrix { rows, cols, words }
    }

    /// Rebuilds from raw words, validating the length and that pad bits are clear.
    pub fn from_words(rows: usize, cols: usize, words: Vec<u64>) -> Result<Self> {
        let wpr = words_per_row(cols);
        if words.len() != rows * wpr {
            return Err(Error::Format(format!(
                "{rows}x{cols} packed matrix needs {} words, got {}",
                rows * wpr,
                words.len()
            )));
        }
        if wpr > 0 {
            let pad = !tail_mask(cols);
            if (0..rows).any(|r| words[r * wpr + wpr - 1] & pad != 0) {
                return Err(Error::Format("non-zero pad bits in packed matrix".into()));
            }
        }
        Ok(PackedMatrix { rows, cols, words })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn row_words(&self, r: usize) -> &[u64] {
        let wpr = words_per_row(self.cols);
        &self.words[r * wpr..(r + 1) * wpr]
    }

    pub fn bit(&self, r: usize, c: usize) -> bool {
        let wpr = words_per_row(self.cols);
        self.words[r * wpr + c / 64] >> (c % 64) & 1 == 1
    }

    pub fn unpack(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.rows * self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                data.push(if self.bit(r, c) { 1.0 } else { -1.0 });
            }
        }
        Tensor::matrix(self.rows, self.cols, data).expect("shape matches")
    }

    pub fn transpose(&self) -> PackedMatrix {
        let wpr = words_per_row(self.rows);
        let mut words = vec![0u64; self.cols * wpr];
        for r in 0..self.rows {
            for c in 0..self.cols {
                if self.bit(r, c) {
                    words[c * wpr + r / 64] |= 1u64 << (r % 64);
                }
            }
        }
        PackedMatrix {
            rows: self.cols,
            cols: self.rows,
            words,
        }
    }

    /// Serialized payload size in bytes.
    pub fn payload_bytes(&self) -> usize {
        self.words.len() * 8
    }
}

/// Number of positions where two packed rows of length `len` agree.
fn agreements(a: &[u64], b: &[u64], len: usize) -> u32 {
    let last = a.len().saturating_sub(1);
    let mask = tail_mask(len);
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(w, (&x, &y))| {
            let same = !(x ^ y);
            if w == last {
                (same & mask).count_ones()
            } else {
                same.count_ones()
            }
        })
        .sum()
}

/// `a · b` for `±1` operands: entry `(i, j) = 2·popcount(XNOR(row_i, col_j)) − k`.
pub fn packed_matmul(a: &PackedMatrix, b: &PackedMatrix) -> Result<Tensor> {
    packed_matmul_t(a, &b.transpose())
}

/// Same as [`packed_matmul`] with the right operand already transposed
/// (`bt` is `n × k`), which is how frozen weights are cached.
pub fn packed_matmul_t(a: &PackedMatrix, bt: &PackedMatrix) -> Result<Tensor> {
    let k = a.cols;
    if bt.cols != k {
        return Err(Error::dim(
            "packed_matmul",
            format!("{}x{} · {}x{}", a.rows, a.cols, bt.cols, bt.rows),
        ));
    }
    let (m, n) = (a.rows, bt.rows);
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        let ra = a.row_words(i);
        for j in 0..n {
            let agree = agreements(ra, bt.row_words(j), k) as i64;
            out.push((2 * agree - k as i64) as f64);
        }
    }
    Tensor::matrix(m, n, out)
}

/// `x · W` for real `x` (`m × k`) and a `±1` weight given transposed as `wt`
/// (`n × k`). Each output is `2·Σ_{bit set} x − Σ x`, walking set bits only.
pub fn signed_matmul_t(x: &Tensor, wt: &PackedMatrix) -> Result<Tensor> {
    let k = x.cols();
    if wt.cols != k {
        return Err(Error::dim(
            "signed_matmul",
            format!("{:?} · {}x{}", x.shape(), wt.cols, wt.rows),
        ));
    }
    let (m, n) = (x.rows(), wt.rows);
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        let xr = x.row(i);
        let total: f64 = xr.iter().sum();
        for j in 0..n {
            let mut pos = 0.0;
            for (w, &word) in wt.row_words(j).iter().enumerate() {
                let mut bits = word;
                while bits != 0 {
                    let b = bits.trailing_zeros() as usize;
                    pos += xr[w * 64 + b];
                    bits &= bits - 1;
                }
            }
            out.push(2.0 * pos - total);
        }
    }
    Tensor::matrix(m, n, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pm(rows: &[&[f64]]) -> PackedMatrix {
        PackedMatrix::pack(&Tensor::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn all_plus_ones() {
        let a = pm(&[&[1.0, 1.0], &[1.0, 1.0]]);
        let out = packed_matmul(&a, &a).unwrap();
        assert_eq!(out.data(), &[2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn matching_row_and_column() {
        let a = pm(&[&[1.0, -1.0]]);
        let b = pm(&[&[1.0], &[-1.0]]);
        assert_eq!(packed_matmul(&a, &b).unwrap().data(), &[2.0]);
    }

    #[test]
    fn inner_extent_mismatch() {
        let a = pm(&[&[1.0, -1.0]]);
        assert!(matches!(
            packed_matmul(&a, &a),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn pack_rejects_reals() {
        let t = Tensor::row_vector(&[1.0, 0.5]);
        assert!(PackedMatrix::pack(&t).is_err());
    }

    #[test]
    fn pad_bits_are_validated() {
        assert!(PackedMatrix::from_words(1, 3, vec![0b1000]).is_err());
        assert!(PackedMatrix::from_words(1, 3, vec![0b101]).is_ok());
        assert!(PackedMatrix::from_words(2, 3, vec![0]).is_err());
    }

    fn pm_strategy(
        max: usize,
    ) -> impl Strategy<Value = (usize, usize, usize, Vec<bool>, Vec<bool>)> {
        (1..=max, 1..=max, 1..=max).prop_flat_map(|(m, k, n)| {
            (
                Just(m),
                Just(k),
                Just(n),
                proptest::collection::vec(any::<bool>(), m * k),
                proptest::collection::vec(any::<bool>(), k * n),
            )
        })
    }

    fn signs(bits: &[bool]) -> Vec<f64> {
        bits.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect()
    }

    proptest! {
        #[test]
        fn packed_equals_float((m, k, n, a, b) in pm_strategy(64)) {
            let ta = Tensor::matrix(m, k, signs(&a)).unwrap();
            let tb = Tensor::matrix(k, n, signs(&b)).unwrap();
            let pa = PackedMatrix::pack(&ta).unwrap();
            let pb = PackedMatrix::pack(&tb).unwrap();
            prop_assert_eq!(pa.unpack(), ta.clone());
            prop_assert_eq!(packed_matmul(&pa, &pb).unwrap(), ta.matmul(&tb).unwrap());
        }

        #[test]
        fn signed_kernel_tracks_float((m, k, n, a, b) in pm_strategy(70)) {
            let x = Tensor::matrix(m, k, a.iter().enumerate().map(|(i, &s)| {
                let v = (i as f64 * 0.37).sin();
                if s { v } else { -v * 0.5 }
            }).collect()).unwrap();
            let w = Tensor::matrix(k, n, signs(&b)).unwrap();
            let wt = PackedMatrix::pack(&w).unwrap().transpose();
            let fast = signed_matmul_t(&x, &wt).unwrap();
            prop_assert!(fast.max_abs_diff(&x.matmul(&w).unwrap()) < 1e-9);
        }
    }
}

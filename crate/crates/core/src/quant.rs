//! Symmetric uniform quantization: round-to-nearest, and the calibrated
//! column-sequential variant with inverse-Hessian error compensation.
//!
//! Codes for width `k` lie in `[-(2^(k-1) - 1), 2^(k-1) - 1]`; there is no
//! zero point. A vector's scale is `max|v| / (2^(k-1) - 1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{inverse_upper_cholesky, Matrix};
use crate::tensor::Tensor;

pub const MIN_BITS: u32 = 2;
pub const MAX_BITS: u32 = 16;

/// Rank range `[rank_begin, rank_end)` quantized at `bits`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitGroup {
    pub rank_begin: usize,
    pub rank_end: usize,
    pub bits: u32,
}

impl BitGroup {
    pub fn new(rank_begin: usize, rank_end: usize, bits: u32) -> Self {
        BitGroup { rank_begin, rank_end, bits }
    }

    pub fn len(&self) -> usize {
        self.rank_end - self.rank_begin
    }

    pub fn is_empty(&self) -> bool {
        self.rank_end <= self.rank_begin
    }
}

pub fn check_bits(bits: u32) -> Result<()> {
    if (MIN_BITS..=MAX_BITS).contains(&bits) {
        Ok(())
    } else {
        Err(Error::invalid(format!("bit width must lie in {MIN_BITS}..={MAX_BITS}, got {bits}")))
    }
}

/// Checks that `groups` are nonempty, contiguous, start at 0 and end at `rank`.
pub fn check_groups(groups: &[BitGroup], rank: usize) -> Result<()> {
    let mut cursor = 0;
    for g in groups {
        check_bits(g.bits)?;
        if g.rank_begin != cursor || g.is_empty() {
            return Err(Error::invalid(format!("bit groups must be contiguous and nonempty, got {groups:?}")));
        }
        cursor = g.rank_end;
    }
    if cursor != rank {
        return Err(Error::invalid(format!("bit groups cover [0, {cursor}) but rank is {rank}")));
    }
    Ok(())
}

#[inline]
pub fn qmax(bits: u32) -> i32 {
    (1i32 << (bits - 1)) - 1
}

/// Which vectors share a scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// One scale per row.
    PerRow,
    /// One scale per column.
    PerColumn,
}

/// Integer codes with one scale per vector along `axis`. `groups` partition
/// the vector indices and assign each a bit width.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedMatrix {
    pub rows: usize,
    pub cols: usize,
    pub axis: Axis,
    pub groups: Vec<BitGroup>,
    pub scales: Vec<f32>,
    /// Row-major `rows × cols`.
    pub codes: Vec<i32>,
}

impl QuantizedMatrix {
    pub fn vector_count(&self) -> usize {
        match self.axis {
            Axis::PerRow => self.rows,
            Axis::PerColumn => self.cols,
        }
    }

    pub fn bits_of_vector(&self, v: usize) -> u32 {
        self.groups
            .iter()
            .find(|g| v >= g.rank_begin && v < g.rank_end)
            .map(|g| g.bits)
            .expect("groups cover every vector")
    }

    #[inline]
    fn vector_of(&self, i: usize, j: usize) -> usize {
        match self.axis {
            Axis::PerRow => i,
            Axis::PerColumn => j,
        }
    }

    /// Verifies every code fits its group's width.
    pub fn validate(&self, name: &str) -> Result<()> {
        check_groups(&self.groups, self.vector_count())?;
        if self.scales.len() != self.vector_count() || self.codes.len() != self.rows * self.cols {
            return Err(Error::InvalidFormat(format!("'{name}': quantized buffer sizes disagree with shape")));
        }
        for i in 0..self.rows {
            for j in 0..self.cols {
                let bits = self.bits_of_vector(self.vector_of(i, j));
                let c = self.codes[i * self.cols + j];
                if c.abs() > qmax(bits) {
                    return Err(Error::CorruptCodes { name: name.to_string(), code: c as i64, bits });
                }
            }
        }
        Ok(())
    }

    /// `code · scale` in 32-bit.
    pub fn dequantize(&self) -> Matrix<f32> {
        Matrix::from_fn(self.rows, self.cols, |i, j| {
            self.codes[i * self.cols + j] as f32 * self.scales[self.vector_of(i, j)]
        })
    }

    /// Codes of vector `v` in storage order (a row for `PerRow`, a column for
    /// `PerColumn`).
    pub fn vector_codes(&self, v: usize) -> Vec<i32> {
        match self.axis {
            Axis::PerRow => self.codes[v * self.cols..(v + 1) * self.cols].to_vec(),
            Axis::PerColumn => (0..self.rows).map(|i| self.codes[i * self.cols + v]).collect(),
        }
    }
}

/// `max|v| / qmax` as a 32-bit scale; zero for an all-zero vector.
pub fn rtn_scale(values: impl IntoIterator<Item = f64>, bits: u32) -> f32 {
    let max = values.into_iter().fold(0.0f64, |m, v| m.max(v.abs()));
    (max / qmax(bits) as f64) as f32
}

/// Round-half-away-from-zero code for `v`, clamped to the representable range.
#[inline]
pub fn quantize_value(v: f64, scale: f32, bits: u32) -> i32 {
    if scale == 0.0 {
        return 0;
    }
    let q = qmax(bits) as f64;
    (v / scale as f64).round().clamp(-q, q) as i32
}

fn vectors_f64(m: &Matrix<f64>, axis: Axis) -> Vec<Vec<f64>> {
    match axis {
        Axis::PerRow => (0..m.rows()).map(|i| m.row(i).to_vec()).collect(),
        Axis::PerColumn => (0..m.cols()).map(|j| m.column(j)).collect(),
    }
}

pub(crate) fn rtn_matrix(m: &Matrix<f64>, bits: u32, axis: Axis) -> QuantizedMatrix {
    let scales: Vec<f32> = vectors_f64(m, axis).into_iter().map(|v| rtn_scale(v, bits)).collect();
    let cols = m.cols();
    let codes = m
        .as_slice()
        .iter()
        .enumerate()
        .map(|(idx, &v)| {
            let (i, j) = (idx / cols, idx % cols);
            let s = match axis {
                Axis::PerRow => scales[i],
                Axis::PerColumn => scales[j],
            };
            quantize_value(v, s, bits)
        })
        .collect();
    let n = scales.len();
    QuantizedMatrix { rows: m.rows(), cols, axis, groups: vec![BitGroup::new(0, n, bits)], scales, codes }
}

/// Round-to-nearest baseline.
pub fn quantize_rtn(m: &Tensor, bits: u32, axis: Axis) -> Result<QuantizedMatrix> {
    check_bits(bits)?;
    Ok(rtn_matrix(&m.to_matrix_f64()?, bits, axis))
}

/// Calibrated quantization of `w` against activations `x` (`w.cols × s`).
///
/// Columns are visited in natural order. The Hessian is `x xᵀ + λI` with
/// `λ = damping · mean(diag(x xᵀ))`; zero diagonal entries (inputs that never
/// fire) are set to 1 first. Scales are fixed from the uncompensated weights
/// along `axis`.
pub(crate) fn gptq_matrix(
    w: &Matrix<f64>,
    x: &Matrix<f64>,
    bits: u32,
    damping: f64,
    axis: Axis,
) -> Result<QuantizedMatrix> {
    check_bits(bits)?;
    if x.rows() != w.cols() {
        return Err(Error::DimensionMismatch(format!(
            "calibration has {} rows, matrix has {} columns",
            x.rows(),
            w.cols()
        )));
    }
    let hinv = hessian_factor(x, damping)?;
    gptq_with_factor(w, &hinv, bits, axis)
}

/// Upper Cholesky factor of the damped inverse Hessian for activations `x`.
pub(crate) fn hessian_factor(x: &Matrix<f64>, damping: f64) -> Result<Matrix<f64>> {
    let cols = x.rows();
    if x.cols() == 0 {
        return Err(Error::invalid("calibration needs at least one sample"));
    }
    if !(damping >= 0.0) || !damping.is_finite() {
        return Err(Error::invalid(format!("damping must be finite and nonnegative, got {damping}")));
    }
    let mut h = x.gram();
    for j in 0..cols {
        if h[(j, j)] == 0.0 {
            h[(j, j)] = 1.0;
        }
    }
    let mean_diag = if cols == 0 { 0.0 } else { (0..cols).map(|j| h[(j, j)]).sum::<f64>() / cols as f64 };
    let lambda = damping * mean_diag;
    for j in 0..cols {
        h[(j, j)] += lambda;
    }
    inverse_upper_cholesky(&h)
}

pub(crate) fn gptq_with_factor(w: &Matrix<f64>, hinv: &Matrix<f64>, bits: u32, axis: Axis) -> Result<QuantizedMatrix> {
    check_bits(bits)?;
    let (rows, cols) = w.shape();
    if hinv.rows() != cols {
        return Err(Error::DimensionMismatch(format!("hessian is {}-wide, matrix has {cols} columns", hinv.rows())));
    }
    let scales: Vec<f32> = vectors_f64(w, axis).into_iter().map(|v| rtn_scale(v, bits)).collect();
    let mut work = w.clone();
    let mut codes = vec![0i32; rows * cols];
    for j in 0..cols {
        let d = hinv[(j, j)];
        let tail = &hinv.row(j)[j + 1..];
        for i in 0..rows {
            let s = match axis {
                Axis::PerRow => scales[i],
                Axis::PerColumn => scales[j],
            };
            let row = work.row_mut(i);
            let v = row[j];
            let q = quantize_value(v, s, bits);
            codes[i * cols + j] = q;
            let err = (v - q as f64 * s as f64) / d;
            if err != 0.0 {
                for (wk, &hk) in row[j + 1..].iter_mut().zip(tail) {
                    *wk -= err * hk;
                }
            }
        }
    }
    let n = scales.len();
    Ok(QuantizedMatrix { rows, cols, axis, groups: vec![BitGroup::new(0, n, bits)], scales, codes })
}

/// Calibrated quantization with per-row scales.
pub fn quantize_gptq(m: &Tensor, x: &Tensor, bits: u32, damping: f64) -> Result<QuantizedMatrix> {
    gptq_matrix(&m.to_matrix_f64()?, &x.to_matrix_f64()?, bits, damping, Axis::PerRow)
}

/// ‖m x − m̂ x‖_F with `m̂` the dequantized matrix.
pub fn calibration_error(m: &Tensor, q: &QuantizedMatrix, x: &Tensor) -> Result<f64> {
    let x = x.to_matrix_f64()?;
    let exact = m.to_matrix_f64()?.matmul(&x)?;
    let approx = q.dequantize().cast::<f64>().matmul(&x)?;
    Ok(exact.sub(&approx)?.frobenius_norm())
}

/// Packs codes as `bits`-wide two's complement fields, LSB first, padded to a
/// whole byte.
pub fn pack_codes(codes: &[i32], bits: u32) -> Vec<u8> {
    let total_bits = codes.len() * bits as usize;
    let mut out = vec![0u8; total_bits.div_ceil(8)];
    let mask = (1u64 << bits) - 1;
    let mut bitpos = 0usize;
    for &c in codes {
        let mut field = (c as i64 as u64) & mask;
        let mut remaining = bits as usize;
        while remaining > 0 {
            let byte = bitpos / 8;
            let shift = bitpos % 8;
            let take = remaining.min(8 - shift);
            out[byte] |= ((field & ((1 << take) - 1)) as u8) << shift;
            field >>= take;
            bitpos += take;
            remaining -= take;
        }
    }
    out
}

/// Inverse of [`pack_codes`].
pub fn unpack_codes(bytes: &[u8], bits: u32, count: usize) -> Result<Vec<i32>> {
    let needed = (count * bits as usize).div_ceil(8);
    if bytes.len() != needed {
        return Err(Error::InvalidFormat(format!(
            "{count} codes at {bits} bits need {needed} bytes, got {}",
            bytes.len()
        )));
    }
    let mut out = Vec::with_capacity(count);
    let mut bitpos = 0usize;
    let sign = 1u64 << (bits - 1);
    for _ in 0..count {
        let mut field = 0u64;
        let mut got = 0usize;
        while got < bits as usize {
            let byte = bitpos / 8;
            let shift = bitpos % 8;
            let take = (bits as usize - got).min(8 - shift);
            let chunk = (bytes[byte] >> shift) as u64 & ((1 << take) - 1);
            field |= chunk << got;
            got += take;
            bitpos += take;
        }
        let v = if field & sign != 0 { field as i64 - (1i64 << bits) } else { field as i64 };
        out.push(v as i32);
    }
    Ok(out)
}

//! Dense tensors and the tensor-level numerical operations: SVD, magnitude
//! pruning, norms and products.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, SvdFactors};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F16,
}

impl DType {
    pub fn size_bytes(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F16 => 2,
        }
    }
}

/// Dense row-major tensor.
///
/// Elements are held as `f32` regardless of `dtype`; an `F16` tensor only ever
/// holds values that are exactly representable in half precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dtype: DType,
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Builds an `F32` tensor, rejecting non-finite elements.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Self::with_dtype(DType::F32, shape, data)
    }

    /// Builds a tensor of the given dtype. For `F16` every value is rounded to
    /// half precision.
    pub fn with_dtype(dtype: DType, shape: Vec<usize>, mut data: Vec<f32>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::DimensionMismatch(format!(
                "shape {shape:?} holds {numel} elements, buffer has {}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("element {bad}")));
        }
        if dtype == DType::F16 {
            for v in &mut data {
                *v = half::f16::from_f32(*v).to_f32();
            }
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("value overflows f16".into()));
            }
        }
        Ok(Tensor { dtype, shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor { dtype: DType::F32, shape, data: vec![0.0; numel] }
    }

    pub fn from_matrix(m: &Matrix<f32>) -> Self {
        Tensor { dtype: DType::F32, shape: vec![m.rows(), m.cols()], data: m.as_slice().to_vec() }
    }

    /// Rounds an `f64` matrix to a 32-bit tensor.
    pub fn from_matrix_f64(m: &Matrix<f64>) -> Result<Self> {
        Self::new(vec![m.rows(), m.cols()], m.as_slice().iter().map(|&v| v as f32).collect())
    }

    #[inline]
    pub fn dtype(&self) -> DType {
        self.dtype
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// `(rows, cols)` of a 2-D tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::invalid(format!("expected a 2-D tensor, got shape {:?}", self.shape))),
        }
    }

    pub fn to_matrix(&self) -> Result<Matrix<f32>> {
        let (r, c) = self.dims2()?;
        Matrix::from_vec(r, c, self.data.clone())
    }

    pub fn to_matrix_f64(&self) -> Result<Matrix<f64>> {
        let (r, c) = self.dims2()?;
        Matrix::from_vec(r, c, self.data.iter().map(|&v| v as f64).collect())
    }

    /// Same values promoted to `F32`.
    pub fn to_f32(&self) -> Tensor {
        Tensor { dtype: DType::F32, ..self.clone() }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }

    /// Bitwise equality of shape, dtype and every element.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.dtype == other.dtype
            && self.shape == other.shape
            && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Retained elements of a pruned matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseEntries {
    pub shape: Vec<usize>,
    /// Flat row-major positions, strictly increasing.
    pub indices: Vec<u64>,
    pub values: Vec<f32>,
}

impl SparseEntries {
    pub fn to_dense(&self) -> Tensor {
        let mut out = Tensor::zeros(self.shape.clone());
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out.data[i as usize] = v;
        }
        out
    }
}

/// SVD of a 2-D tensor, computed in 64-bit.
pub fn svd(a: &Tensor) -> Result<SvdFactors<f64>> {
    linalg::svd(&a.to_matrix_f64()?)
}

pub fn truncate(f: &SvdFactors<f64>, rank: usize) -> Result<SvdFactors<f64>> {
    f.truncate(rank)
}

/// `ceil(alpha * n)`, snapping products within rounding noise of an integer.
pub fn retained_count(alpha: f64, n: usize) -> usize {
    let x = alpha * n as f64;
    let nearest = x.round();
    let k = if (x - nearest).abs() <= 1e-9 * x.max(1.0) { nearest } else { x.ceil() };
    (k as usize).max(1).min(n)
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("retention ratio must lie in (0, 1], got {alpha}")))
    }
}

/// Keeps the `ceil(alpha · N)` entries of largest magnitude; ties go to the
/// smaller flat index.
pub fn magnitude_prune(a: &Tensor, alpha: f64) -> Result<SparseEntries> {
    check_alpha(alpha)?;
    a.dims2()?;
    let keep = retained_count(alpha, a.numel());
    let mut order: Vec<usize> = (0..a.numel()).collect();
    order.sort_by(|&i, &j| {
        a.data[j].abs().total_cmp(&a.data[i].abs()).then(i.cmp(&j))
    });
    let mut kept: Vec<usize> = order[..keep].to_vec();
    kept.sort_unstable();
    Ok(SparseEntries {
        shape: a.shape.clone(),
        values: kept.iter().map(|&i| a.data[i]).collect(),
        indices: kept.into_iter().map(|i| i as u64).collect(),
    })
}

/// ‖a − b‖_F / ‖a‖_F, accumulated in 64-bit.
pub fn frobenius_rel_err(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape != b.shape {
        return Err(Error::ShapeMismatch {
            name: "frobenius_rel_err".into(),
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let diff = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt();
    let base = a.frobenius_norm();
    Ok(if base == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        diff / base
    })
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let prod = a.to_matrix()?.matmul(&b.to_matrix()?)?;
    Ok(Tensor::from_matrix(&prod))
}

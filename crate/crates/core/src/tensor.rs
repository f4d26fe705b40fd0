//! Dense row-major `f32` tensors and the handful of linear-algebra kernels the
//! training engine needs.
//!
//! All reductions accumulate in `f32` strictly left to right so that results
//! are bit-reproducible across runs and implementations.

use serde::{Deserialize, Serialize};

use crate::error::{Result, VqError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl DenseTensor {
    /// Builds a tensor, checking that `data.len()` equals the product of `shape`.
    ///
    /// A rank-0 tensor (empty shape) holds exactly one value.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(VqError::Dimension(format!(
                "dimension sizes must be positive, got {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(VqError::Dimension(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// Like [`DenseTensor::new`] but additionally rejects NaN and infinities.
    pub fn new_finite(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(VqError::Numeric(format!(
                "non-finite value {} at flat index {i}",
                data[i]
            )));
        }
        Self::new(shape, data)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![0.0; n]).expect("zeros: positive dims")
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(VqError::Dimension("ragged rows".into()));
        }
        Self::new(vec![r, c], rows.concat())
    }

    pub fn vector(data: Vec<f32>) -> Self {
        let n = data.len();
        Self { shape: vec![n], data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    fn dims2(&self, what: &str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(VqError::Dimension(format!(
                "{what}: expected rank-2 tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.dims2("transpose")?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self::new(vec![c, r], out)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Standard matrix product `a × b` with `f32` left-to-right accumulation over
/// the inner dimension.
pub fn matmul(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    let (m, k) = a.dims2("matmul lhs")?;
    let (k2, n) = b.dims2("matmul rhs")?;
    if k != k2 {
        return Err(VqError::Dimension(format!(
            "matmul inner dimensions differ: {m}x{k} by {k2}x{n}"
        )));
    }
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        for j in 0..n {
            let mut acc = 0.0f32;
            for (p, &av) in arow.iter().enumerate() {
                acc += av * b.data[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    DenseTensor::new(vec![m, n], out)
}

/// `a × bᵀ` without materialising the transpose. Same accumulation order as
/// `matmul(a, &b.transpose())`.
pub fn matmul_transposed(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    let (m, k) = a.dims2("matmul lhs")?;
    let (n, k2) = b.dims2("matmul rhs (transposed)")?;
    if k != k2 {
        return Err(VqError::Dimension(format!(
            "matmul inner dimensions differ: {m}x{k} by ({n}x{k2})^T"
        )));
    }
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b.data[j * k..(j + 1) * k];
            let mut acc = 0.0f32;
            for (x, y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            out[i * n + j] = acc;
        }
    }
    DenseTensor::new(vec![m, n], out)
}

/// `aᵀ × b`, accumulating over the shared leading dimension in order.
pub fn matmul_lhs_transposed(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    let (k, m) = a.dims2("matmul lhs (transposed)")?;
    let (k2, n) = b.dims2("matmul rhs")?;
    if k != k2 {
        return Err(VqError::Dimension(format!(
            "matmul inner dimensions differ: ({k}x{m})^T by {k2}x{n}"
        )));
    }
    let mut out = vec![0.0f32; m * n];
    for p in 0..k {
        let arow = &a.data[p * m..(p + 1) * m];
        let brow = &b.data[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    DenseTensor::new(vec![m, n], out)
}

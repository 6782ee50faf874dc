//! Dense m-way tensors, index conventions, separations and unfoldings.
//!
//! Grouped indices are lexicographic with the last sub-index varying fastest.
//! Under this convention the flat buffer of a tensor is, without any data
//! movement, the row-major buffer of every separation `T<i>`, and the buffer
//! of a 3-way core is the row-major buffer of both its left unfolding
//! `L(U)` and its right unfolding `R(U)`.

use nalgebra::{DMatrix, DMatrixView};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TtError};

/// Default cap on the number of entries any dense materialization may hold
/// (2^27 f64 values, about 1 GiB).
pub const DEFAULT_DENSE_CAP: usize = 1 << 27;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Shape {
    dims: Vec<usize>,
}

impl TryFrom<Vec<usize>> for Shape {
    type Error = TtError;
    fn try_from(dims: Vec<usize>) -> Result<Self> {
        Shape::new(dims)
    }
}

impl From<Shape> for Vec<usize> {
    fn from(s: Shape) -> Self {
        s.dims
    }
}

impl Shape {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.len() < 2 {
            return Err(TtError::Shape(format!(
                "tensor order must be at least 2, got {}",
                dims.len()
            )));
        }
        if let Some(k) = dims.iter().position(|&d| d == 0) {
            return Err(TtError::Shape(format!("dimension {k} is zero")));
        }
        let total: u128 = dims.iter().map(|&d| d as u128).product();
        if total > u64::MAX as u128 {
            return Err(TtError::Shape(format!(
                "total size {total} overflows a 64-bit index"
            )));
        }
        Ok(Shape { dims })
    }

    pub fn cubic(d: usize, m: usize) -> Result<Self> {
        Shape::new(vec![d; m])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn dim(&self, k: usize) -> usize {
        self.dims[k]
    }

    /// d* = d_1 ... d_m.
    pub fn total(&self) -> usize {
        self.dims.iter().product()
    }

    /// d-bar = max d_i.
    pub fn max_dim(&self) -> usize {
        *self.dims.iter().max().unwrap()
    }

    /// d_1 ... d_i, i.e. rows of the i-th separation (`i` is 1-based).
    pub fn left_size(&self, i: usize) -> usize {
        self.dims[..i].iter().product()
    }

    /// d_{i+1} ... d_m, i.e. columns of the i-th separation.
    pub fn right_size(&self, i: usize) -> usize {
        self.dims[i..].iter().product()
    }

    pub fn check_dense(&self, cap: usize) -> Result<()> {
        let total: u128 = self.dims.iter().map(|&d| d as u128).product();
        if total > cap as u128 {
            Err(TtError::CapExceeded {
                entries: total,
                cap,
            })
        } else {
            Ok(())
        }
    }

    pub fn check_index(&self, x: &[usize]) -> Result<()> {
        if x.len() != self.dims.len() {
            return Err(TtError::Index(format!(
                "multi-index has {} components, shape has order {}",
                x.len(),
                self.dims.len()
            )));
        }
        for (k, (&xi, &di)) in x.iter().zip(&self.dims).enumerate() {
            if xi >= di {
                return Err(TtError::Index(format!(
                    "component {k} = {xi} out of range 0..{di}"
                )));
            }
        }
        Ok(())
    }
}

/// Flat position of `x` with the last index fastest.
pub fn flat_index(shape: &Shape, x: &[usize]) -> Result<usize> {
    shape.check_index(x)?;
    Ok(flat_index_unchecked(shape.dims(), x))
}

pub(crate) fn flat_index_unchecked(dims: &[usize], x: &[usize]) -> usize {
    x.iter().zip(dims).fold(0, |acc, (&xi, &di)| acc * di + xi)
}

/// Inverse of [`flat_index`].
pub fn multi_index(shape: &Shape, flat: usize) -> Result<Vec<usize>> {
    if flat >= shape.total() {
        return Err(TtError::Index(format!(
            "flat index {flat} out of range 0..{}",
            shape.total()
        )));
    }
    let mut x = vec![0; shape.order()];
    let mut rest = flat;
    for k in (0..shape.order()).rev() {
        x[k] = rest % shape.dims[k];
        rest /= shape.dims[k];
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Shape,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.total() {
            return Err(TtError::Shape(format!(
                "buffer of length {} for shape {:?} (needs {})",
                data.len(),
                shape.dims(),
                shape.total()
            )));
        }
        Ok(DenseTensor { shape, data })
    }

    pub fn zeros(shape: Shape, cap: usize) -> Result<Self> {
        shape.check_dense(cap)?;
        let n = shape.total();
        Ok(DenseTensor {
            shape,
            data: vec![0.0; n],
        })
    }

    pub fn from_fn(shape: Shape, cap: usize, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        shape.check_dense(cap)?;
        let n = shape.total();
        let mut data = Vec::with_capacity(n);
        let mut x = vec![0usize; shape.order()];
        for _ in 0..n {
            data.push(f(&x));
            for k in (0..x.len()).rev() {
                x[k] += 1;
                if x[k] < shape.dims[k] {
                    break;
                }
                x[k] = 0;
            }
        }
        Ok(DenseTensor { shape, data })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, x: &[usize]) -> Result<f64> {
        Ok(self.data[flat_index(&self.shape, x)?])
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn inner(&self, other: &DenseTensor) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn sub(&self, other: &DenseTensor) -> Result<DenseTensor> {
        self.check_same_shape(other)?;
        Ok(DenseTensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn add(&self, other: &DenseTensor) -> Result<DenseTensor> {
        self.check_same_shape(other)?;
        Ok(DenseTensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn scaled(&self, c: f64) -> DenseTensor {
        DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| c * v).collect(),
        }
    }

    fn check_same_shape(&self, other: &DenseTensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(TtError::Shape(format!(
                "shape mismatch {:?} vs {:?}",
                self.shape.dims(),
                other.shape.dims()
            )));
        }
        Ok(())
    }

    /// The i-th separation `T<i>` (1 <= i <= m-1) as a zero-copy view.
    pub fn separation(&self, i: usize) -> Result<SeparationView<'_>> {
        let m = self.shape.order();
        if i == 0 || i >= m {
            return Err(TtError::Index(format!(
                "separation mode {i} out of range 1..={}",
                m - 1
            )));
        }
        Ok(SeparationView {
            mode: i,
            rows: self.shape.left_size(i),
            cols: self.shape.right_size(i),
            tensor: self,
        })
    }
}

/// `T<i>` viewed as a (d_1...d_i) x (d_{i+1}...d_m) matrix over the tensor's buffer.
#[derive(Debug, Clone, Copy)]
pub struct SeparationView<'a> {
    mode: usize,
    rows: usize,
    cols: usize,
    tensor: &'a DenseTensor,
}

impl<'a> SeparationView<'a> {
    pub fn mode(&self) -> usize {
        self.mode
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.tensor.data[row * self.cols + col]
    }

    /// The same buffer seen as a strided nalgebra matrix (row stride `cols`).
    /// Borrowed transpose `T<i>^T`: the row-major buffer read column-major.
    pub fn transposed(&self) -> DMatrixView<'a, f64> {
        DMatrixView::from_slice(&self.tensor.data, self.cols, self.rows)
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.tensor.data)
    }

    pub fn to_tensor(&self) -> DenseTensor {
        self.tensor.clone()
    }
}

/// Reassemble a tensor from a separation matrix of the given shape.
pub fn from_separation(shape: &Shape, i: usize, mat: &DMatrix<f64>) -> Result<DenseTensor> {
    if i == 0 || i >= shape.order() {
        return Err(TtError::Index(format!("separation mode {i} out of range")));
    }
    if mat.nrows() != shape.left_size(i) || mat.ncols() != shape.right_size(i) {
        return Err(TtError::Shape(format!(
            "{}x{} matrix is not separation {i} of {:?}",
            mat.nrows(),
            mat.ncols(),
            shape.dims()
        )));
    }
    DenseTensor::from_vec(shape.clone(), to_row_major(mat))
}

/// 3-way tensor `U(j, x, k)` of shape p1 x p2 x p3, stored with the last index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub(crate) p: [usize; 3],
    pub(crate) data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(p1: usize, p2: usize, p3: usize) -> Self {
        Tensor3 {
            p: [p1, p2, p3],
            data: vec![0.0; p1 * p2 * p3],
        }
    }

    pub fn from_vec(p1: usize, p2: usize, p3: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != p1 * p2 * p3 {
            return Err(TtError::Shape(format!(
                "buffer of length {} for a {p1}x{p2}x{p3} tensor",
                data.len()
            )));
        }
        Ok(Tensor3 {
            p: [p1, p2, p3],
            data,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.p
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, j: usize, x: usize, k: usize) -> f64 {
        self.data[(j * self.p[1] + x) * self.p[2] + k]
    }

    #[inline]
    pub fn set(&mut self, j: usize, x: usize, k: usize, v: f64) {
        self.data[(j * self.p[1] + x) * self.p[2] + k] = v;
    }

    /// Row-major slice of the p1 x p3 matrix `U(:, x, :)` is not contiguous;
    /// this copies it out.
    pub fn slice_matrix(&self, x: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.p[0], self.p[2], |j, k| self.get(j, x, k))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// L(U): (p1 p2) x p3 with L(U)(j p2 + x, k) = U(j, x, k).
    pub fn left_unfold(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.p[0] * self.p[1], self.p[2], &self.data)
    }

    /// R(U): p1 x (p2 p3) with R(U)(j, x p3 + k) = U(j, x, k).
    pub fn right_unfold(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.p[0], self.p[1] * self.p[2], &self.data)
    }

    /// Inverse of [`Tensor3::left_unfold`].
    pub fn from_left_unfold(p1: usize, p2: usize, l: &DMatrix<f64>) -> Result<Self> {
        if l.nrows() != p1 * p2 {
            return Err(TtError::Shape(format!(
                "left unfolding has {} rows, expected {}",
                l.nrows(),
                p1 * p2
            )));
        }
        Tensor3::from_vec(p1, p2, l.ncols(), to_row_major(l))
    }

    /// Inverse of [`Tensor3::right_unfold`].
    pub fn from_right_unfold(p2: usize, p3: usize, r: &DMatrix<f64>) -> Result<Self> {
        if r.ncols() != p2 * p3 {
            return Err(TtError::Shape(format!(
                "right unfolding has {} columns, expected {}",
                r.ncols(),
                p2 * p3
            )));
        }
        Tensor3::from_vec(r.nrows(), p2, p3, to_row_major(r))
    }
}

pub fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}

/// Reinterpret a matrix's row-major buffer with a new row count.
pub fn reshape_row_major(m: &DMatrix<f64>, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    if rows * cols != m.len() {
        return Err(TtError::Shape(format!(
            "cannot reshape {}x{} into {rows}x{cols}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &to_row_major(m)))
}

/// `N (x) I_d`.
pub fn kron_identity_right(n: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(n.nrows() * d, n.ncols() * d);
    for r in 0..n.nrows() {
        for c in 0..n.ncols() {
            let v = n[(r, c)];
            if v != 0.0 {
                for x in 0..d {
                    out[(r * d + x, c * d + x)] = v;
                }
            }
        }
    }
    out
}

/// `I_d (x) M`.
pub fn kron_identity_left(d: usize, m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(d * m.nrows(), d * m.ncols());
    for x in 0..d {
        out.view_mut((x * m.nrows(), x * m.ncols()), (m.nrows(), m.ncols()))
            .copy_from(m);
    }
    out
}

/// Reshape identities between neighbouring separations.
///
/// With `N` of size d_N x (d_1...d_i) and `M` of size (d_{i+2}...d_m) x d_M:
///
/// * `shift_rows`:   reshape(N T<i>, [d_N d_{i+1}, d_{i+2}...d_m]) = (N (x) I) T<i+1>
/// * `unshift_rows`: reshape((N (x) I) T<i+1>, [d_N, d_{i+1}...d_m]) = N T<i>
/// * `shift_cols`:   reshape(T<i+1> M, [d_1...d_i, d_{i+1} d_M]) = T<i> (I (x) M)
/// * `unshift_cols`: reshape(T<i> (I (x) M), [d_1...d_{i+1}, d_M]) = T<i+1> M
///
/// Each is a pure row-major reinterpretation; the functions check that the
/// input is conformal with the requested mode.
pub mod reshape {
    use super::*;

    fn expect(cond: bool, what: &str) -> Result<()> {
        if cond {
            Ok(())
        } else {
            Err(TtError::Shape(format!("nonconformal reshape: {what}")))
        }
    }

    /// `N T<i>` -> `(N (x) I_{d_{i+1}}) T<i+1>`.
    pub fn shift_rows(shape: &Shape, i: usize, nt: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        expect(i >= 1 && i + 1 < shape.order(), "mode")?;
        expect(nt.ncols() == shape.right_size(i), "columns of N T<i>")?;
        let d = shape.dim(i);
        reshape_row_major(nt, nt.nrows() * d, shape.right_size(i + 1))
    }

    /// `(N (x) I_{d_{i+1}}) T<i+1>` -> `N T<i>`.
    pub fn unshift_rows(shape: &Shape, i: usize, nt: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        expect(i >= 1 && i + 1 < shape.order(), "mode")?;
        expect(
            nt.ncols() == shape.right_size(i + 1),
            "columns of (N (x) I) T<i+1>",
        )?;
        let d = shape.dim(i);
        expect(nt.nrows() % d == 0, "rows divisible by d_{i+1}")?;
        reshape_row_major(nt, nt.nrows() / d, shape.right_size(i))
    }

    /// `T<i+1> M` -> `T<i> (I_{d_{i+1}} (x) M)`.
    pub fn shift_cols(shape: &Shape, i: usize, tm: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        expect(i >= 1 && i + 1 < shape.order(), "mode")?;
        expect(tm.nrows() == shape.left_size(i + 1), "rows of T<i+1> M")?;
        let d = shape.dim(i);
        reshape_row_major(tm, shape.left_size(i), d * tm.ncols())
    }

    /// `T<i> (I_{d_{i+1}} (x) M)` -> `T<i+1> M`.
    pub fn unshift_cols(shape: &Shape, i: usize, tm: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        expect(i >= 1 && i + 1 < shape.order(), "mode")?;
        expect(tm.nrows() == shape.left_size(i), "rows of T<i> (I (x) M)")?;
        let d = shape.dim(i);
        expect(tm.ncols() % d == 0, "columns divisible by d_{i+1}")?;
        reshape_row_major(tm, shape.left_size(i + 1), tm.ncols() / d)
    }
}

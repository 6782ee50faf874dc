//! Tensor-train representation and the operations on it.
//!
//! A [`TtTensor`] stores cores `T_i` of shape `r_{i-1} x d_i x r_i` with
//! `r_0 = r_m = 1`, so that `T(x) = T_1(x_1) T_2(x_2) ... T_m(x_m)`.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TtError};
use crate::linalg::{self, complete_orthonormal};
use crate::rng::{gaussian_vec, rng_from_seed};
use crate::tensor::{DenseTensor, Shape, Tensor3};

/// Singular values below this fraction of the largest are treated as zero.
pub const RANK_DEFICIENCY_RTOL: f64 = 1e-14;

/// TT ranks `r_1 ... r_{m-1}`; the boundary ranks `r_0 = r_m = 1` are implicit.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct RankVector(Vec<usize>);

impl TryFrom<Vec<usize>> for RankVector {
    type Error = TtError;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        RankVector::new(v)
    }
}

impl From<RankVector> for Vec<usize> {
    fn from(r: RankVector) -> Self {
        r.0
    }
}

impl RankVector {
    pub fn new(ranks: Vec<usize>) -> Result<Self> {
        if ranks.is_empty() {
            return Err(TtError::InfeasibleRanks("empty rank vector".into()));
        }
        if ranks.contains(&0) {
            return Err(TtError::InfeasibleRanks(format!(
                "ranks must be positive, got {ranks:?}"
            )));
        }
        Ok(RankVector(ranks))
    }

    pub fn uniform(r: usize, m: usize) -> Result<Self> {
        RankVector::new(vec![r; m.saturating_sub(1)])
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `r_0, r_1, ..., r_m` including the unit boundary ranks.
    pub fn with_boundary(&self) -> Vec<usize> {
        let mut v = Vec::with_capacity(self.0.len() + 2);
        v.push(1);
        v.extend_from_slice(&self.0);
        v.push(1);
        v
    }

    pub fn max(&self) -> usize {
        *self.0.iter().max().unwrap()
    }

    pub fn min(&self) -> usize {
        *self.0.iter().min().unwrap()
    }

    pub fn product(&self) -> usize {
        self.0.iter().product()
    }

    /// Check that a tensor of `shape` can have exactly these ranks.
    pub fn check_feasible(&self, shape: &Shape) -> Result<()> {
        let m = shape.order();
        if self.0.len() != m - 1 {
            return Err(TtError::InfeasibleRanks(format!(
                "{} ranks for an order-{m} tensor",
                self.0.len()
            )));
        }
        let full = self.with_boundary();
        for i in 1..m {
            let r = full[i];
            let cap = shape.left_size(i).min(shape.right_size(i));
            if r > cap {
                return Err(TtError::InfeasibleRanks(format!(
                    "r_{i} = {r} exceeds min(d_1..d_{i}, d_{}..d_m) = {cap}",
                    i + 1
                )));
            }
        }
        for i in 1..=m {
            let d = shape.dim(i - 1);
            if full[i] > full[i - 1] * d || full[i - 1] > d * full[i] {
                return Err(TtError::InfeasibleRanks(format!(
                    "core {i} of size {}x{d}x{} cannot have full unfoldings",
                    full[i - 1],
                    full[i]
                )));
            }
        }
        Ok(())
    }

    pub fn componentwise_le(&self, other: &RankVector) -> bool {
        self.0.len() == other.0.len() && self.0.iter().zip(&other.0).all(|(a, b)| a <= b)
    }
}

impl std::fmt::Display for RankVector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|r| r.to_string()).collect();
        write!(f, "{}", parts.join("x"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Gauge {
    None,
    LeftOrthogonal,
    RightOrthogonal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TtTensor {
    shape: Shape,
    cores: Vec<Tensor3>,
    gauge: Gauge,
}

impl TtTensor {
    pub fn new(cores: Vec<Tensor3>) -> Result<Self> {
        if cores.len() < 2 {
            return Err(TtError::Shape(format!(
                "a TT tensor needs at least 2 cores, got {}",
                cores.len()
            )));
        }
        if cores[0].p[0] != 1 || cores[cores.len() - 1].p[2] != 1 {
            return Err(TtError::Shape("boundary ranks must be 1".into()));
        }
        for (k, w) in cores.windows(2).enumerate() {
            if w[0].p[2] != w[1].p[0] {
                return Err(TtError::Shape(format!(
                    "core {} has right rank {} but core {} has left rank {}",
                    k + 1,
                    w[0].p[2],
                    k + 2,
                    w[1].p[0]
                )));
            }
        }
        let shape = Shape::new(cores.iter().map(|c| c.p[1]).collect())?;
        Ok(TtTensor {
            shape,
            cores,
            gauge: Gauge::None,
        })
    }

    pub(crate) fn from_parts(shape: Shape, cores: Vec<Tensor3>, gauge: Gauge) -> Self {
        debug_assert_eq!(cores.len(), shape.order());
        TtTensor {
            shape,
            cores,
            gauge,
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.cores.len()
    }

    pub fn cores(&self) -> &[Tensor3] {
        &self.cores
    }

    pub fn core(&self, k: usize) -> &Tensor3 {
        &self.cores[k]
    }

    pub fn gauge(&self) -> Gauge {
        self.gauge
    }

    pub fn ranks(&self) -> RankVector {
        RankVector(
            self.cores[..self.cores.len() - 1]
                .iter()
                .map(|c| c.p[2])
                .collect(),
        )
    }

    /// `T(x) = T_1(x_1) ... T_m(x_m)`.
    pub fn eval(&self, x: &[usize]) -> Result<f64> {
        self.shape.check_index(x)?;
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: &[usize]) -> f64 {
        let mut v = vec![1.0];
        let mut next = Vec::new();
        for (core, &xi) in self.cores.iter().zip(x) {
            let [r0, d, r1] = core.p;
            next.clear();
            next.resize(r1, 0.0);
            for (a, &va) in v.iter().enumerate().take(r0) {
                if va == 0.0 {
                    continue;
                }
                let row = &core.data[(a * d + xi) * r1..(a * d + xi + 1) * r1];
                for (n, &c) in next.iter_mut().zip(row) {
                    *n += va * c;
                }
            }
            std::mem::swap(&mut v, &mut next);
        }
        v[0]
    }

    /// Dense materialization, entrywise equal to [`TtTensor::eval`].
    pub fn full(&self, cap: usize) -> Result<DenseTensor> {
        self.shape.check_dense(cap)?;
        let left = self.left_part(self.order(), cap)?;
        DenseTensor::from_vec(self.shape.clone(), left)
    }

    /// Row-major buffer of the left part `T^{<=i}` ((d_1..d_i) x r_i).
    pub fn left_part(&self, i: usize, cap: usize) -> Result<Vec<f64>> {
        let rows = self.shape.left_size(i);
        let r = if i == self.order() {
            1
        } else {
            self.cores[i - 1].p[2]
        };
        if rows as u128 * r as u128 > cap as u128 {
            return Err(TtError::CapExceeded {
                entries: rows as u128 * r as u128,
                cap,
            });
        }
        let mut part = vec![1.0];
        let mut rows_so_far = 1;
        for core in &self.cores[..i] {
            let [r0, d, r1] = core.p;
            let mut next = vec![0.0; rows_so_far * d * r1];
            for row in 0..rows_so_far {
                let prefix = &part[row * r0..(row + 1) * r0];
                for x in 0..d {
                    let out = &mut next[(row * d + x) * r1..(row * d + x + 1) * r1];
                    for (a, &pa) in prefix.iter().enumerate() {
                        if pa == 0.0 {
                            continue;
                        }
                        let src = &core.data[(a * d + x) * r1..(a * d + x + 1) * r1];
                        for (o, &s) in out.iter_mut().zip(src) {
                            *o += pa * s;
                        }
                    }
                }
            }
            part = next;
            rows_so_far *= d;
        }
        Ok(part)
    }

    /// Row-major buffer of the right part `T^{>=i}` (r_{i-1} x (d_i..d_m)), `i` 1-based.
    pub fn right_part(&self, i: usize, cap: usize) -> Result<Vec<f64>> {
        let m = self.order();
        let cols = self.shape.right_size(i - 1);
        let r = self.cores[i - 1].p[0];
        if cols as u128 * r as u128 > cap as u128 {
            return Err(TtError::CapExceeded {
                entries: cols as u128 * r as u128,
                cap,
            });
        }
        let mut part = vec![1.0];
        let mut cols_so_far = 1;
        for core in self.cores[i - 1..m].iter().rev() {
            let [r0, d, r1] = core.p;
            let mut next = vec![0.0; r0 * d * cols_so_far];
            for a in 0..r0 {
                for x in 0..d {
                    let out = &mut next[(a * d + x) * cols_so_far..(a * d + x + 1) * cols_so_far];
                    for b in 0..r1 {
                        let c = core.data[(a * d + x) * r1 + b];
                        if c == 0.0 {
                            continue;
                        }
                        let src = &part[b * cols_so_far..(b + 1) * cols_so_far];
                        for (o, &s) in out.iter_mut().zip(src) {
                            *o += c * s;
                        }
                    }
                }
            }
            part = next;
            cols_so_far *= d;
        }
        Ok(part)
    }

    /// QR sweep left to right; every core but the last gets L(T_i)^T L(T_i) = I.
    pub fn left_orthogonalize(&self) -> TtTensor {
        let mut cores = self.cores.clone();
        let m = cores.len();
        for k in 0..m - 1 {
            let [r0, d, _] = cores[k].p;
            let (q, r) = linalg::qr(&cores[k].left_unfold());
            cores[k] = Tensor3::from_left_unfold(r0, d, &q).expect("QR shape");
            let [_, d1, r2] = cores[k + 1].p;
            let next = r * cores[k + 1].right_unfold();
            cores[k + 1] = Tensor3::from_right_unfold(d1, r2, &next).expect("QR shape");
        }
        TtTensor::from_parts(self.shape.clone(), cores, Gauge::LeftOrthogonal)
    }

    /// Mirrored sweep right to left; every core but the first gets R(T_i) R(T_i)^T = I.
    pub fn right_orthogonalize(&self) -> TtTensor {
        let mut cores = self.cores.clone();
        let m = cores.len();
        for k in (1..m).rev() {
            let [_, d, r1] = cores[k].p;
            let (q, r) = linalg::qr(&cores[k].right_unfold().transpose());
            cores[k] = Tensor3::from_right_unfold(d, r1, &q.transpose()).expect("QR shape");
            let [r0, dp, _] = cores[k - 1].p;
            let prev = cores[k - 1].left_unfold() * r.transpose();
            cores[k - 1] = Tensor3::from_left_unfold(r0, dp, &prev).expect("QR shape");
        }
        TtTensor::from_parts(self.shape.clone(), cores, Gauge::RightOrthogonal)
    }

    /// Returns a left-orthogonal representation, reusing `self` when it already is one.
    pub fn to_left_orthogonal(&self) -> TtTensor {
        match self.gauge {
            Gauge::LeftOrthogonal => self.clone(),
            _ => self.left_orthogonalize(),
        }
    }

    /// Largest deviation from the orthogonality condition of the current gauge.
    pub fn gauge_defect(&self) -> f64 {
        let m = self.order();
        match self.gauge {
            Gauge::None => 0.0,
            Gauge::LeftOrthogonal => self.cores[..m - 1]
                .iter()
                .map(|c| linalg::orthonormality_defect(&c.left_unfold()))
                .fold(0.0, f64::max),
            Gauge::RightOrthogonal => self.cores[1..]
                .iter()
                .map(|c| linalg::orthonormality_defect(&c.right_unfold().transpose()))
                .fold(0.0, f64::max),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        let lo = self.to_left_orthogonal();
        lo.cores[lo.order() - 1].frobenius_norm()
    }

    /// `<A, B>` through transfer matrices, never densifying.
    pub fn inner(&self, other: &TtTensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(TtError::Shape("inner product of different shapes".into()));
        }
        let mut e = DMatrix::from_element(1, 1, 1.0);
        for (a, b) in self.cores.iter().zip(&other.cores) {
            let [ra0, d, ra1] = a.p;
            let [rb0, _, rb1] = b.p;
            let mut next = DMatrix::zeros(ra1, rb1);
            for x in 0..d {
                let sa = a.slice_matrix(x);
                let sb = b.slice_matrix(x);
                debug_assert_eq!((sa.nrows(), sb.nrows()), (ra0, rb0));
                next += sa.transpose() * &e * sb;
            }
            e = next;
        }
        Ok(e[(0, 0)])
    }

    pub fn scale(&self, c: f64) -> TtTensor {
        let mut cores = self.cores.clone();
        let m = cores.len();
        for v in cores[m - 1].data.iter_mut() {
            *v *= c;
        }
        let gauge = match self.gauge {
            Gauge::LeftOrthogonal => Gauge::LeftOrthogonal,
            _ => Gauge::None,
        };
        TtTensor::from_parts(self.shape.clone(), cores, gauge)
    }

    /// Block construction with ranks `r_A + r_B`.
    pub fn add(&self, other: &TtTensor) -> Result<TtTensor> {
        if self.shape != other.shape {
            return Err(TtError::Shape(format!(
                "cannot add {:?} and {:?}",
                self.shape.dims(),
                other.shape.dims()
            )));
        }
        let m = self.order();
        let mut cores = Vec::with_capacity(m);
        for k in 0..m {
            let a = &self.cores[k];
            let b = &other.cores[k];
            let [ra0, d, ra1] = a.p;
            let [rb0, _, rb1] = b.p;
            let (r0, r1) = match k {
                0 => (1, ra1 + rb1),
                _ if k == m - 1 => (ra0 + rb0, 1),
                _ => (ra0 + rb0, ra1 + rb1),
            };
            let mut c = Tensor3::zeros(r0, d, r1);
            let (off_b0, off_b1) = match k {
                0 => (0, ra1),
                _ if k == m - 1 => (ra0, 0),
                _ => (ra0, ra1),
            };
            for x in 0..d {
                for i in 0..ra0 {
                    for j in 0..ra1 {
                        c.set(i, x, j, a.get(i, x, j));
                    }
                }
                for i in 0..rb0 {
                    for j in 0..rb1 {
                        c.set(off_b0 + i, x, off_b1 + j, b.get(i, x, j));
                    }
                }
            }
            cores.push(c);
        }
        TtTensor::new(cores)
    }

    pub fn sub(&self, other: &TtTensor) -> Result<TtTensor> {
        self.add(&other.scale(-1.0))
    }

    /// Interface factors of a left-orthogonal tensor: right-orthogonal cores
    /// `Y_2..Y_m` and `Lambda_{i+1}` (r_i x r_i) with `T^{>=i+1} = Lambda_{i+1} Y^{>=i+1}`.
    ///
    /// Entry `k` of both returned vectors belongs to core `k` (0-based); entry 0
    /// is unused (the first core is copied and its factor is the 1x1 identity).
    pub(crate) fn right_interfaces(&self) -> (Vec<Tensor3>, Vec<DMatrix<f64>>) {
        let m = self.order();
        let mut ys: Vec<Tensor3> = self.cores.clone();
        let mut lambdas = vec![DMatrix::from_element(1, 1, 1.0); m + 1];
        for k in (1..m).rev() {
            let core = &self.cores[k];
            let [_, d, r1] = core.p;
            // M = R(T_k) (I (x) Lambda_{k+1})
            let scaled = if k == m - 1 {
                core.clone()
            } else {
                let l = core.left_unfold() * &lambdas[k + 1];
                Tensor3::from_left_unfold(core.p[0], d, &l).expect("shape")
            };
            let (q, r) = linalg::qr(&scaled.right_unfold().transpose());
            ys[k] = Tensor3::from_right_unfold(d, r1, &q.transpose()).expect("shape");
            lambdas[k] = r.transpose();
        }
        (ys, lambdas)
    }
}

/// Algorithm of sequential truncated SVDs producing a left-orthogonal TT.
///
/// Step i takes the top `r_i` left singular vectors of
/// `(T^{<=i-1} (x) I)^T A<i>`, carried as the running projected remainder.
pub fn tt_svd(a: &DenseTensor, ranks: &RankVector) -> Result<TtTensor> {
    let shape = a.shape().clone();
    ranks.check_feasible(&shape)?;
    let m = shape.order();
    let dims = shape.dims();
    let mut rest = a.data().to_vec();
    let mut cols = shape.total() / dims[0];
    let mut r_prev = 1;
    let mut cores = Vec::with_capacity(m);
    for i in 0..m - 1 {
        let rows = r_prev * dims[i];
        let mat = DMatrix::from_row_slice(rows, cols, &rest);
        let ri = ranks.as_slice()[i];
        let u = top_left_singular_vectors(&mat, ri)?;
        cores.push(Tensor3::from_left_unfold(r_prev, dims[i], &u)?);
        let projected = u.transpose() * &mat;
        rest = crate::tensor::to_row_major(&projected);
        cols /= dims[i + 1];
        r_prev = ri;
    }
    cores.push(Tensor3::from_vec(r_prev, dims[m - 1], 1, rest)?);
    Ok(TtTensor::from_parts(shape, cores, Gauge::LeftOrthogonal))
}

/// Top-`r` left singular vectors, padded with a deterministic orthonormal
/// completion where singular values vanish.
pub(crate) fn top_left_singular_vectors(mat: &DMatrix<f64>, r: usize) -> Result<DMatrix<f64>> {
    if mat.iter().all(|&v| v == 0.0) {
        let mut u = DMatrix::zeros(mat.nrows(), r);
        complete_orthonormal(&mut u, 0);
        return Ok(u);
    }
    let dec = linalg::svd(mat)?;
    if dec.u.ncols() < r {
        return Err(TtError::InfeasibleRanks(format!(
            "rank {r} requested from a {}x{} matrix",
            mat.nrows(),
            mat.ncols()
        )));
    }
    let mut u = dec.u.columns(0, r).into_owned();
    let s1 = dec.s[0];
    let valid = dec.s[..r]
        .iter()
        .take_while(|&&s| s > RANK_DEFICIENCY_RTOL * s1)
        .count();
    if valid < r {
        complete_orthonormal(&mut u, valid);
    }
    Ok(u)
}

/// Structured truncation of a TT tensor to smaller ranks; equal (up to
/// rotation of the cores) to [`tt_svd`] applied to the dense tensor.
pub fn tt_rounding(t: &TtTensor, target: &RankVector) -> Result<TtTensor> {
    if !target.componentwise_le(&t.ranks()) {
        return Err(TtError::InfeasibleRanks(format!(
            "target ranks {target} exceed current ranks {}",
            t.ranks()
        )));
    }
    target.check_feasible(t.shape())?;
    let mut y = t.right_orthogonalize();
    let m = y.order();
    for k in 0..m - 1 {
        let [r0, d, _] = y.cores[k].p;
        let l = y.cores[k].left_unfold();
        let rk = target.as_slice()[k];
        let u = top_left_singular_vectors(&l, rk)?;
        let carry = u.transpose() * &l;
        y.cores[k] = Tensor3::from_left_unfold(r0, d, &u)?;
        let [_, d1, r2] = y.cores[k + 1].p;
        let next = carry * y.cores[k + 1].right_unfold();
        y.cores[k + 1] = Tensor3::from_right_unfold(d1, r2, &next)?;
    }
    y.gauge = Gauge::LeftOrthogonal;
    Ok(y)
}

/// How [`random_tt`] produced an instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TruthMethod {
    /// TT-SVD truncation of a dense Gaussian tensor.
    DenseTruncation,
    /// Gaussian cores, left-orthogonalized (used above the dense cap; a
    /// different distribution from the dense method).
    GaussianCores,
}

pub fn truth_method(shape: &Shape, cap: usize) -> TruthMethod {
    if shape.check_dense(cap).is_ok() {
        TruthMethod::DenseTruncation
    } else {
        TruthMethod::GaussianCores
    }
}

/// Random low-TT-rank tensor, deterministic in `seed`.
///
/// Below `cap` this truncates a dense standard Gaussian tensor with
/// [`tt_svd`]; above it falls back to Gaussian cores and logs a warning.
pub fn random_tt(shape: &Shape, ranks: &RankVector, seed: u64, cap: usize) -> Result<TtTensor> {
    ranks.check_feasible(shape)?;
    match truth_method(shape, cap) {
        TruthMethod::DenseTruncation => {
            let mut rng = rng_from_seed(seed);
            let data = gaussian_vec(&mut rng, shape.total());
            tt_svd(&DenseTensor::from_vec(shape.clone(), data)?, ranks)
        }
        TruthMethod::GaussianCores => {
            log::warn!(
                "shape {:?} exceeds the dense cap; drawing Gaussian cores instead of truncating a dense tensor",
                shape.dims()
            );
            random_tt_gaussian_cores(shape, ranks, seed)
        }
    }
}

/// Gaussian cores followed by left-orthogonalization.
pub fn random_tt_gaussian_cores(shape: &Shape, ranks: &RankVector, seed: u64) -> Result<TtTensor> {
    ranks.check_feasible(shape)?;
    let full = ranks.with_boundary();
    let mut rng = rng_from_seed(seed);
    let cores = (0..shape.order())
        .map(|k| {
            let (r0, d, r1) = (full[k], shape.dim(k), full[k + 1]);
            Tensor3::from_vec(r0, d, r1, gaussian_vec(&mut rng, r0 * d * r1))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TtTensor::new(cores)?.left_orthogonalize())
}

/// Singular-value summary over all separations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    /// Singular values of each separation `T<i>`, i = 1..m-1.
    pub per_separation: Vec<Vec<f64>>,
    /// min over i of sigma_{r_i}(T<i>).
    pub sigma_min: f64,
    /// max over i of sigma_1(T<i>).
    pub sigma_max: f64,
    pub condition_number: f64,
}

impl SpectrumSummary {
    fn from_values(per_separation: Vec<Vec<f64>>, ranks: &[usize]) -> Result<Self> {
        let sigma_max = per_separation
            .iter()
            .map(|s| s.first().copied().unwrap_or(0.0))
            .fold(0.0, f64::max);
        if sigma_max == 0.0 {
            return Err(TtError::ZeroTensor("condition number undefined".into()));
        }
        let sigma_min = per_separation
            .iter()
            .zip(ranks)
            .map(|(s, &r)| s.get(r - 1).copied().unwrap_or(0.0))
            .fold(f64::INFINITY, f64::min);
        Ok(SpectrumSummary {
            condition_number: sigma_max / sigma_min,
            per_separation,
            sigma_min,
            sigma_max,
        })
    }
}

/// Singular values of `T<i>` for a dense tensor (1 <= i <= m-1).
pub fn dense_separation_singular_values(a: &DenseTensor, i: usize) -> Result<Vec<f64>> {
    linalg::singular_values(&a.separation(i)?.to_matrix())
}

/// Spectrum of a dense tensor at prescribed ranks.
pub fn dense_spectrum(a: &DenseTensor, ranks: &RankVector) -> Result<SpectrumSummary> {
    let m = a.shape().order();
    let per = (1..m)
        .map(|i| dense_separation_singular_values(a, i))
        .collect::<Result<Vec<_>>>()?;
    SpectrumSummary::from_values(per, ranks.as_slice())
}

impl TtTensor {
    /// Singular values of every separation from the gauge factors, without
    /// densifying: with a left-orthogonal point, `T<i> = T^{<=i} Lambda_{i+1} Y^{>=i+1}`
    /// has the singular values of the small matrix `Lambda_{i+1}`.
    pub fn spectrum(&self) -> Result<SpectrumSummary> {
        let lo = self.to_left_orthogonal();
        let (_, lambdas) = lo.right_interfaces();
        let m = lo.order();
        let per = (1..m)
            .map(|i| linalg::singular_values(&lambdas[i]))
            .collect::<Result<Vec<_>>>()?;
        SpectrumSummary::from_values(per, lo.ranks().as_slice())
    }

    pub fn separation_singular_values(&self, i: usize) -> Result<Vec<f64>> {
        if i == 0 || i >= self.order() {
            return Err(TtError::Index(format!("separation {i} out of range")));
        }
        Ok(self.spectrum()?.per_separation[i - 1].clone())
    }
}

const CONTAINER_MAGIC: &[u8; 4] = b"TTC1";

/// Binary little-endian container: "TTC1", u32 m, u32 dims[m], u32 ranks[m-1],
/// then each core as f64 values in (r_{i-1}, d_i, r_i) order, last index fastest.
pub fn write_container(t: &TtTensor, mut w: impl Write) -> Result<()> {
    w.write_all(CONTAINER_MAGIC)?;
    let u32_of = |v: usize| -> Result<[u8; 4]> {
        u32::try_from(v)
            .map(|x| x.to_le_bytes())
            .map_err(|_| TtError::Format(format!("{v} does not fit in u32")))
    };
    w.write_all(&u32_of(t.order())?)?;
    for &d in t.shape().dims() {
        w.write_all(&u32_of(d)?)?;
    }
    for &r in t.ranks().as_slice() {
        w.write_all(&u32_of(r)?)?;
    }
    for core in &t.cores {
        for v in &core.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_container(mut r: impl Read) -> Result<TtTensor> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        if pos + n > buf.len() {
            return Err(TtError::Format(format!(
                "truncated container: need {n} bytes at offset {pos}, have {}",
                buf.len()
            )));
        }
        let s = &buf[pos..pos + n];
        pos += n;
        Ok(s)
    };
    if take(4)? != CONTAINER_MAGIC {
        return Err(TtError::Format("bad magic, expected TTC1".into()));
    }
    let read_u32 = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap()) as usize;
    let m = read_u32(take(4)?);
    if m < 2 {
        return Err(TtError::Format(format!("order {m} < 2")));
    }
    let dims = (0..m)
        .map(|_| take(4).map(read_u32))
        .collect::<Result<Vec<_>>>()?;
    let ranks = (0..m - 1)
        .map(|_| take(4).map(read_u32))
        .collect::<Result<Vec<_>>>()?;
    let shape = Shape::new(dims).map_err(|e| TtError::Format(e.to_string()))?;
    let ranks = RankVector::new(ranks).map_err(|e| TtError::Format(e.to_string()))?;
    let full = ranks.with_boundary();
    let mut cores = Vec::with_capacity(m);
    for k in 0..m {
        let (r0, d, r1) = (full[k], shape.dim(k), full[k + 1]);
        let len = r0
            .checked_mul(d)
            .and_then(|v| v.checked_mul(r1))
            .ok_or_else(|| TtError::Format("core size overflow".into()))?;
        let bytes = take(
            len.checked_mul(8)
                .ok_or_else(|| TtError::Format("core size overflow".into()))?,
        )?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        cores.push(Tensor3::from_vec(r0, d, r1, data)?);
    }
    if pos != buf.len() {
        return Err(TtError::Format(format!(
            "{} trailing bytes after the last core",
            buf.len() - pos
        )));
    }
    TtTensor::new(cores)
}

pub fn save_container(t: &TtTensor, path: impl AsRef<Path>) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_container(t, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_container(path: impl AsRef<Path>) -> Result<TtTensor> {
    let f = std::fs::File::open(path)?;
    read_container(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::DEFAULT_DENSE_CAP;

    const CAP: usize = DEFAULT_DENSE_CAP;

    fn shape(d: &[usize]) -> Shape {
        Shape::new(d.to_vec()).unwrap()
    }

    fn ranks(r: &[usize]) -> RankVector {
        RankVector::new(r.to_vec()).unwrap()
    }

    fn rel_diff(a: &DenseTensor, b: &DenseTensor) -> f64 {
        a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm()
    }

    /// Oracle: evaluate the defining sum over all auxiliary indices.
    fn brute_force_entry(t: &TtTensor, x: &[usize]) -> f64 {
        let full = t.ranks().with_boundary();
        let m = t.order();
        let mut total = 0.0;
        let mut k = vec![0usize; m + 1];
        loop {
            let mut prod = 1.0;
            for i in 0..m {
                prod *= t.core(i).get(k[i], x[i], k[i + 1]);
            }
            total += prod;
            let mut j = 1;
            loop {
                if j == m {
                    return total;
                }
                k[j] += 1;
                if k[j] < full[j] {
                    break;
                }
                k[j] = 0;
                j += 1;
            }
        }
    }

    #[test]
    fn eval_rank_one_matrix() {
        let u = [1.0, -2.0, 0.5];
        let v = [3.0, 4.0];
        let c1 = Tensor3::from_vec(1, 3, 1, u.to_vec()).unwrap();
        let c2 = Tensor3::from_vec(1, 2, 1, v.to_vec()).unwrap();
        let t = TtTensor::new(vec![c1, c2]).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                assert_eq!(t.eval(&[i, j]).unwrap(), u[i] * v[j]);
            }
        }
        assert!(t.eval(&[3, 0]).is_err());
    }

    #[test]
    fn eval_all_ones() {
        let cores = vec![
            Tensor3::from_vec(1, 2, 2, vec![0.25; 4]).unwrap(),
            Tensor3::from_vec(2, 3, 2, vec![1.0; 12]).unwrap(),
            Tensor3::from_vec(2, 2, 1, vec![1.0; 4]).unwrap(),
        ];
        let t = TtTensor::new(cores).unwrap();
        let f = t.full(CAP).unwrap();
        assert!(f.data().iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn eval_and_full_match_brute_force() {
        let t = random_tt_gaussian_cores(&shape(&[3, 3, 3]), &ranks(&[2, 2]), 3).unwrap();
        let f = t.full(CAP).unwrap();
        let s = t.shape().clone();
        for flat in 0..27 {
            let x = crate::tensor::multi_index(&s, flat).unwrap();
            let want = brute_force_entry(&t, &x);
            assert!((t.eval(&x).unwrap() - want).abs() < 1e-13);
            assert!((f.data()[flat] - want).abs() < 1e-13);
        }
    }

    #[test]
    fn tt_svd_all_ones() {
        let s = shape(&[2, 2, 2]);
        let a = DenseTensor::from_fn(s, CAP, |_| 1.0).unwrap();
        let t = tt_svd(&a, &ranks(&[1, 1])).unwrap();
        assert!(rel_diff(&t.full(CAP).unwrap(), &a) < 1e-14);
        for k in 0..2 {
            let l = t.core(k).left_unfold();
            assert!((l.norm() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn tt_svd_exact_on_manifold() {
        for seed in 0..5 {
            let t = random_tt(&shape(&[4, 5, 3, 4]), &ranks(&[2, 3, 2]), seed, CAP).unwrap();
            let a = t.full(CAP).unwrap();
            let back = tt_svd(&a, &t.ranks()).unwrap();
            assert!(rel_diff(&back.full(CAP).unwrap(), &a) <= 1e-10);
            assert!(back.gauge_defect() < 1e-12);
        }
    }

    #[test]
    fn tt_svd_recursion_matches_dense_left_parts() {
        // T^{<=i} = (T^{<=i-1} (x) I) L(T_i), L(T_i) = top left singular vectors of (T^{<=i-1} (x) I)^T A<i>.
        let s = shape(&[3, 4, 5]);
        let mut rng = rng_from_seed(17);
        let a = DenseTensor::from_vec(s.clone(), gaussian_vec(&mut rng, 60)).unwrap();
        let r = ranks(&[2, 3]);
        let t = tt_svd(&a, &r).unwrap();
        let p1 = DMatrix::from_row_slice(3, 2, &t.left_part(1, CAP).unwrap());
        let m2 = crate::tensor::kron_identity_right(&p1, 4).transpose()
            * a.separation(2).unwrap().to_matrix();
        let svd = linalg::svd(&m2).unwrap();
        let l2 = t.core(1).left_unfold();
        // same subspace: projector equality
        let u = svd.u.columns(0, 3).into_owned();
        let diff = &u * u.transpose() - &l2 * l2.transpose();
        assert!(diff.norm() < 1e-10);
    }

    #[test]
    fn tt_svd_rejects_infeasible() {
        let a = DenseTensor::zeros(shape(&[2, 2, 2]), CAP).unwrap();
        assert!(matches!(
            tt_svd(&a, &ranks(&[3, 1])),
            Err(TtError::InfeasibleRanks(_))
        ));
        assert!(matches!(
            tt_svd(&a, &ranks(&[1])),
            Err(TtError::InfeasibleRanks(_))
        ));
        assert!(RankVector::new(vec![0, 1]).is_err());
    }

    #[test]
    fn tt_svd_rank_deficient_input_pads() {
        let s = shape(&[3, 3, 3]);
        let a = DenseTensor::from_fn(s, CAP, |x| (x[0] + 1) as f64).unwrap();
        let t = tt_svd(&a, &ranks(&[2, 2])).unwrap();
        assert!(t.gauge_defect() < 1e-12);
        assert!(rel_diff(&t.full(CAP).unwrap(), &a) < 1e-12);
        let zero = DenseTensor::zeros(shape(&[3, 3, 3]), CAP).unwrap();
        let tz = tt_svd(&zero, &ranks(&[2, 2])).unwrap();
        assert!(tz.gauge_defect() < 1e-12);
        assert_eq!(tz.full(CAP).unwrap().frobenius_norm(), 0.0);
    }

    #[test]
    fn orthogonalization_preserves_tensor() {
        let t = TtTensor::new(
            (0..3)
                .map(|k| {
                    let full = [1, 3, 2, 1];
                    let d = [4, 3, 5][k];
                    let mut rng = rng_from_seed(40 + k as u64);
                    Tensor3::from_vec(
                        full[k],
                        d,
                        full[k + 1],
                        gaussian_vec(&mut rng, full[k] * d * full[k + 1]),
                    )
                    .unwrap()
                })
                .collect(),
        )
        .unwrap();
        let f = t.full(CAP).unwrap();
        let lo = t.left_orthogonalize();
        assert_eq!(lo.gauge(), Gauge::LeftOrthogonal);
        assert!(lo.gauge_defect() <= 1e-12 * 3.0);
        assert!(rel_diff(&lo.full(CAP).unwrap(), &f) <= 1e-12);
        let ro = t.right_orthogonalize();
        assert_eq!(ro.gauge(), Gauge::RightOrthogonal);
        assert!(ro.gauge_defect() <= 1e-12 * 3.0);
        let s = t.shape().clone();
        let mut rng = rng_from_seed(99);
        for _ in 0..20 {
            let x: Vec<usize> = s
                .dims()
                .iter()
                .map(|&d| crate::rng::uniform_index(&mut rng, d))
                .collect();
            let a = t.eval(&x).unwrap();
            assert!((ro.eval(&x).unwrap() - a).abs() <= 1e-12 * f.frobenius_norm());
        }
        // already orthogonal input: same tensor
        let again = lo.left_orthogonalize();
        assert!(rel_diff(&again.full(CAP).unwrap(), &f) <= 1e-12);
    }

    #[test]
    fn rounding_identity_and_sum_closure() {
        let s = shape(&[4, 4, 4]);
        let t = random_tt(&s, &ranks(&[2, 2]), 1, CAP).unwrap();
        let same = tt_rounding(&t, &t.ranks()).unwrap();
        assert!(rel_diff(&same.full(CAP).unwrap(), &t.full(CAP).unwrap()) <= 1e-12);

        let a = random_tt(&s, &ranks(&[1, 1]), 2, CAP).unwrap();
        let b = random_tt(&s, &ranks(&[1, 1]), 3, CAP).unwrap();
        let sum = a.add(&b).unwrap();
        assert_eq!(sum.ranks(), ranks(&[2, 2]));
        let dense_sum = a.full(CAP).unwrap().add(&b.full(CAP).unwrap()).unwrap();
        let rounded = tt_rounding(&sum, &ranks(&[2, 2])).unwrap();
        assert!(rel_diff(&rounded.full(CAP).unwrap(), &dense_sum) <= 1e-12);
        assert!(tt_rounding(&a, &ranks(&[2, 2])).is_err());
    }

    #[test]
    fn rounding_matches_dense_tt_svd() {
        let s = shape(&[5, 6, 5]);
        let t = random_tt_gaussian_cores(&s, &ranks(&[4, 4]), 8).unwrap();
        let dense = t.full(CAP).unwrap();
        let a = tt_rounding(&t, &ranks(&[2, 2])).unwrap().full(CAP).unwrap();
        let b = tt_svd(&dense, &ranks(&[2, 2])).unwrap().full(CAP).unwrap();
        assert!(a.sub(&b).unwrap().frobenius_norm() <= 1e-9 * dense.frobenius_norm());
    }

    #[test]
    fn add_and_scale_match_dense() {
        let s = shape(&[3, 4, 2, 3]);
        let a = random_tt(&s, &ranks(&[2, 2, 2]), 4, CAP).unwrap();
        let b = random_tt(&s, &ranks(&[1, 3, 2]), 5, CAP).unwrap();
        let sum = a.add(&b).unwrap();
        assert_eq!(sum.ranks(), ranks(&[3, 5, 4]));
        let fa = a.full(CAP).unwrap();
        let fb = b.full(CAP).unwrap();
        let want = fa.add(&fb).unwrap();
        let got = sum.full(CAP).unwrap();
        for (g, w) in got.data().iter().zip(want.data()) {
            assert!((g - w).abs() <= 1e-13 * want.max_abs());
        }
        let z = a.scale(0.0);
        assert!(z.full(CAP).unwrap().data().iter().all(|&v| v == 0.0));
        let scaled = a.scale(-2.5).full(CAP).unwrap();
        assert!(rel_diff(&scaled, &fa.scaled(-2.5)) < 1e-13);
        assert!(a
            .add(&random_tt(&shape(&[3, 4, 2, 2]), &ranks(&[1, 1, 1]), 1, CAP).unwrap())
            .is_err());
    }

    #[test]
    fn inner_and_norm() {
        let s = shape(&[3, 4, 5]);
        let a = random_tt_gaussian_cores(&s, &ranks(&[2, 3]), 6).unwrap();
        let b = random_tt_gaussian_cores(&s, &ranks(&[3, 2]), 7).unwrap();
        let dense = a.full(CAP).unwrap().inner(&b.full(CAP).unwrap()).unwrap();
        assert!((a.inner(&b).unwrap() - dense).abs() < 1e-12 * dense.abs().max(1.0));
        let n = a.full(CAP).unwrap().frobenius_norm();
        assert!((a.frobenius_norm() - n).abs() < 1e-12 * n);
    }

    #[test]
    fn random_tt_determinism_and_ranks() {
        let s = shape(&[4, 5, 6]);
        let r = ranks(&[2, 3]);
        let a = random_tt(&s, &r, 12, CAP).unwrap();
        let b = random_tt(&s, &r, 12, CAP).unwrap();
        assert_eq!(a, b);
        let c = random_tt(&s, &r, 13, CAP).unwrap();
        assert!(a.sub(&c).unwrap().frobenius_norm() > 0.0);
        let f = a.full(CAP).unwrap();
        for i in 1..3 {
            let sv = dense_separation_singular_values(&f, i).unwrap();
            let rank = sv.iter().filter(|&&v| v > 1e-10 * sv[0]).count();
            assert_eq!(rank, r.as_slice()[i - 1]);
        }
        assert_eq!(a.gauge(), Gauge::LeftOrthogonal);
        // above the cap the Gaussian-core path is taken
        let big = random_tt(&s, &r, 12, 10).unwrap();
        assert_eq!(big.ranks(), r);
        assert_eq!(truth_method(&s, 10), TruthMethod::GaussianCores);
    }

    #[test]
    fn spectrum_rank_one_has_unit_condition() {
        let t = random_tt(&shape(&[3, 4, 3]), &ranks(&[1, 1]), 2, CAP).unwrap();
        let sp = t.spectrum().unwrap();
        let n = t.frobenius_norm();
        assert!((sp.condition_number - 1.0).abs() < 1e-12);
        assert!((sp.sigma_max - n).abs() < 1e-12 * n);
    }

    #[test]
    fn spectrum_known_singular_values() {
        // T<1> = U diag(s) V^T with orthonormal U (4x2) and V (6x2), m = 2 plus a trivial third mode.
        let s_vals = [5.0, 0.5];
        let mut rng = rng_from_seed(61);
        let (u, _) = linalg::qr(&DMatrix::from_vec(4, 2, gaussian_vec(&mut rng, 8)));
        let (v, _) = linalg::qr(&DMatrix::from_vec(6, 2, gaussian_vec(&mut rng, 12)));
        let sep = &u
            * DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&s_vals))
            * v.transpose();
        let a = crate::tensor::from_separation(&shape(&[4, 6]), 1, &sep).unwrap();
        let sv = dense_separation_singular_values(&a, 1).unwrap();
        assert!((sv[0] - 5.0).abs() < 1e-12 && (sv[1] - 0.5).abs() < 1e-12);
        let t = tt_svd(&a, &ranks(&[2])).unwrap();
        let sp = t.spectrum().unwrap();
        assert!((sp.sigma_max - 5.0).abs() < 1e-12 && (sp.sigma_min - 0.5).abs() < 1e-12);
        assert!((sp.condition_number - 10.0).abs() < 1e-10);
    }

    #[test]
    fn spectrum_tt_path_matches_dense_and_is_scale_invariant() {
        let s = shape(&[4, 5, 4]);
        let t = random_tt(&s, &ranks(&[2, 3]), 31, CAP).unwrap();
        let tt = t.spectrum().unwrap();
        let dense = dense_spectrum(&t.full(CAP).unwrap(), &t.ranks()).unwrap();
        assert!((tt.sigma_min - dense.sigma_min).abs() < 1e-10 * dense.sigma_max);
        assert!((tt.sigma_max - dense.sigma_max).abs() < 1e-10 * dense.sigma_max);
        let scaled = t.scale(3.0).spectrum().unwrap();
        assert!(
            (scaled.condition_number - tt.condition_number).abs() < 1e-10 * tt.condition_number
        );
        let zero = DenseTensor::zeros(s, CAP).unwrap();
        assert!(matches!(
            dense_spectrum(&zero, &ranks(&[1, 1])),
            Err(TtError::ZeroTensor(_))
        ));
    }

    #[test]
    fn container_round_trip_and_validation() {
        let t = random_tt(&shape(&[3, 4, 2]), &ranks(&[2, 2]), 9, CAP).unwrap();
        let mut buf = Vec::new();
        write_container(&t, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"TTC1");
        assert_eq!(buf.len(), 4 + 4 + 12 + 8 + 8 * (6 + 16 + 4));
        let back = read_container(&buf[..]).unwrap();
        assert_eq!(back.cores(), t.cores());
        let mut bad = buf.clone();
        bad.pop();
        assert!(matches!(read_container(&bad[..]), Err(TtError::Format(_))));
        let mut extra = buf.clone();
        extra.push(0);
        assert!(matches!(
            read_container(&extra[..]),
            Err(TtError::Format(_))
        ));
        let mut magic = buf;
        magic[0] = b'X';
        assert!(matches!(
            read_container(&magic[..]),
            Err(TtError::Format(_))
        ));
    }
}

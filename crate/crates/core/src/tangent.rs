//! Tangent space of the fixed-TT-rank manifold at a left-orthogonal point.
//!
//! A tangent vector is stored as components `X_1..X_m` with the gauge
//! condition `L(T_i)^T L(X_i) = 0` for `i < m`; it represents
//! `sum_i [T_1, ..., X_i, ..., T_m]`.
//!
//! Projections are computed with a right-orthogonal companion of the base
//! point: `T^{>=i+1} = Lambda_{i+1} Y^{>=i+1}` with `Y^{>=i+1}` having
//! orthonormal rows, so that `(T^{>=i+1})^T (T^{>=i+1} T^{>=i+1,T})^{-1}`
//! reduces to `Y^{>=i+1,T} Lambda_{i+1}^{-1}`.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Result, TtError};
use crate::linalg::{self, solve_right};
use crate::observations::ObservationSet;
use crate::tensor::{reshape_row_major, DenseTensor, Tensor3};
use crate::tt::{Gauge, TtTensor};

/// Below this ratio `sigma_{r_i} / sigma_1` the point is treated as lying on
/// the boundary of the manifold.
pub const ILL_CONDITIONED_RTOL: f64 = 1e-12;

/// Samples per chunk in the parallel gradient reduction.
const PARALLEL_CHUNK: usize = 4096;

#[derive(Debug, Clone)]
pub struct GaugePair {
    point: TtTensor,
    /// `right[k]` is `Y_{k+1}` (0-based core `k`); entry 0 is unused.
    right: Vec<Tensor3>,
    /// `lambdas[k]` maps `Y^{>=k+1}` to `T^{>=k+1}` (0-based core `k`);
    /// `lambdas[m]` is the 1x1 identity and entry 0 is unused.
    lambdas: Vec<DMatrix<f64>>,
}

/// Left-orthogonalize (if needed) and compute the right gauge factors.
pub fn build_gauge_pair(t: &TtTensor) -> Result<GaugePair> {
    let point = t.to_left_orthogonal();
    let (right, lambdas) = point.right_interfaces();
    let m = point.order();
    for (i, lambda) in lambdas.iter().enumerate().take(m).skip(1) {
        let s = linalg::singular_values(lambda)?;
        if s[0] == 0.0 {
            return Err(TtError::ZeroTensor(format!("separation {i} vanishes")));
        }
        let ratio = s[s.len() - 1] / s[0];
        if !(ratio >= ILL_CONDITIONED_RTOL) {
            return Err(TtError::IllConditioned {
                separation: i,
                ratio,
            });
        }
    }
    Ok(GaugePair {
        point,
        right,
        lambdas,
    })
}

impl GaugePair {
    /// The left-orthogonal base point.
    pub fn point(&self) -> &TtTensor {
        &self.point
    }

    pub fn order(&self) -> usize {
        self.point.order()
    }

    /// `Lambda_{i+1}` for separation `i` (1 <= i <= m-1), of size `r_i x r_i`.
    pub fn lambda(&self, i: usize) -> &DMatrix<f64> {
        &self.lambdas[i]
    }

    /// Right-orthogonal core `Y_k` for 1-based `k` in `2..=m`.
    pub fn right_core(&self, k: usize) -> &Tensor3 {
        &self.right[k - 1]
    }

    /// The same tensor with cores `[L(T_1) Lambda_2, Y_2, ..., Y_m]`.
    pub fn right_orthogonal(&self) -> TtTensor {
        let mut cores = self.right.clone();
        let c0 = self.point.core(0);
        let l = c0.left_unfold() * &self.lambdas[1];
        cores[0] = Tensor3::from_left_unfold(1, c0.p[1], &l).expect("shape");
        TtTensor::from_parts(self.point.shape().clone(), cores, Gauge::RightOrthogonal)
    }

    /// Row-major `Y^{>=i}` of size `r_{i-1} x (d_i..d_m)` for 1-based `i` in `2..=m`.
    pub fn right_part(&self, i: usize, cap: usize) -> Result<Vec<f64>> {
        TtTensor::from_parts(self.point.shape().clone(), self.right.clone(), Gauge::None)
            .right_part(i, cap)
    }

    /// Apply `X -> (I - L(T_k) L(T_k)^T) X Lambda_{k+1}^{-1}` to a raw
    /// component `Z_k` (0-based `k`); the last component is returned as is.
    fn finish_component(&self, k: usize, z: Tensor3) -> Result<Tensor3> {
        let m = self.order();
        if k == m - 1 {
            return Ok(z);
        }
        let t = self.point.core(k);
        let lt = t.left_unfold();
        let lz = z.left_unfold();
        let deflated = &lz - &lt * (lt.transpose() * &lz);
        let solved = solve_right(&deflated, &self.lambdas[k + 1])?;
        Tensor3::from_left_unfold(t.p[0], t.p[1], &solved)
    }

    fn check_components(&self, xi: &TangentVector) -> Result<()> {
        if xi.components.len() != self.order()
            || xi
                .components
                .iter()
                .zip(self.point.cores())
                .any(|(x, t)| x.p != t.p)
        {
            return Err(TtError::Shape(
                "tangent vector components do not match the base point".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    components: Vec<Tensor3>,
}

impl TangentVector {
    pub fn new(components: Vec<Tensor3>) -> Self {
        TangentVector { components }
    }

    pub fn zeros(gp: &GaugePair) -> Self {
        TangentVector {
            components: gp
                .point
                .cores()
                .iter()
                .map(|c| Tensor3::zeros(c.p[0], c.p[1], c.p[2]))
                .collect(),
        }
    }

    pub fn components(&self) -> &[Tensor3] {
        &self.components
    }

    pub fn component(&self, k: usize) -> &Tensor3 {
        &self.components[k]
    }

    pub fn into_components(self) -> Vec<Tensor3> {
        self.components
    }

    pub fn scaled(&self, c: f64) -> TangentVector {
        let mut out = self.clone();
        for comp in &mut out.components {
            for v in comp.data.iter_mut() {
                *v *= c;
            }
        }
        out
    }

    /// `max_i ||L(T_i)^T L(X_i)||_F` over `i < m`.
    pub fn gauge_defect(&self, gp: &GaugePair) -> f64 {
        let m = self.components.len();
        (0..m - 1)
            .map(|k| {
                (gp.point.core(k).left_unfold().transpose() * self.components[k].left_unfold())
                    .norm()
            })
            .fold(0.0, f64::max)
    }

    /// The single term `[T_1, ..., X_k, ..., T_m]` (0-based `k`) as a TT tensor.
    pub fn term(&self, gp: &GaugePair, k: usize) -> TtTensor {
        let mut cores = gp.point.cores().to_vec();
        cores[k] = self.components[k].clone();
        TtTensor::from_parts(gp.point.shape().clone(), cores, Gauge::None)
    }
}

/// Closed-form tangent projection of a dense tensor.
pub fn project_dense(gp: &GaugePair, a: &DenseTensor) -> Result<TangentVector> {
    let t = &gp.point;
    if a.shape() != t.shape() {
        return Err(TtError::Shape(
            "projection of a tensor of a different shape".into(),
        ));
    }
    let m = t.order();
    let cap = a.shape().total().max(1);
    let dims = t.shape().dims();
    let mut components = Vec::with_capacity(m);
    for k in 0..m {
        let i = k + 1;
        let [r0, d, r1] = t.core(k).p;
        // B = A<i> Y^{>=i+1,T}, of size (d_1..d_i) x r_i
        let b = if i < m {
            let y = DMatrix::from_row_slice(
                r1,
                a.shape().right_size(i),
                &gp.right_part(i + 1, usize::MAX)?,
            );
            (y * a.separation(i)?.transposed()).transpose()
        } else {
            DMatrix::from_row_slice(a.shape().total(), 1, a.data())
        };
        let prefix_rows = a.shape().left_size(k);
        let b = reshape_row_major(&b, prefix_rows, d * r1)?;
        let p = if k == 0 {
            DMatrix::from_element(1, 1, 1.0)
        } else {
            DMatrix::from_row_slice(prefix_rows, r0, &t.left_part(k, cap)?)
        };
        debug_assert_eq!(dims[k], d);
        let z = p.transpose() * b;
        let z = Tensor3::from_right_unfold(d, r1, &z)?;
        components.push(gp.finish_component(k, z)?);
    }
    Ok(TangentVector { components })
}

/// Riemannian gradient `P_T(G)` for a sparse `G`, accumulated sample by
/// sample from prefix products of the left cores and suffix products of the
/// right-orthogonal cores. Samples are reduced in input order.
pub fn riemannian_gradient(gp: &GaugePair, g: &ObservationSet) -> Result<TangentVector> {
    riemannian_gradient_with(gp, g, false)
}

/// As [`riemannian_gradient`]; with `parallel` the samples are processed in
/// fixed chunks whose partial sums are merged in chunk order. The result is
/// reproducible but differs from the sequential sum in the last bits.
pub fn riemannian_gradient_with(
    gp: &GaugePair,
    g: &ObservationSet,
    parallel: bool,
) -> Result<TangentVector> {
    if g.shape() != gp.point.shape() {
        return Err(TtError::Shape("gradient of a different shape".into()));
    }
    let m = gp.order();
    let raw = if parallel && g.len() > PARALLEL_CHUNK {
        let mi = g.shape().order();
        let chunks: Vec<Vec<Vec<f64>>> = g
            .indices()
            .par_chunks(PARALLEL_CHUNK * mi)
            .zip(g.values().par_chunks(PARALLEL_CHUNK))
            .map(|(idx, vals)| accumulate(gp, idx, vals))
            .collect();
        let mut it = chunks.into_iter();
        let mut total = it.next().unwrap();
        for part in it {
            for (acc, p) in total.iter_mut().zip(part) {
                for (a, b) in acc.iter_mut().zip(p) {
                    *a += b;
                }
            }
        }
        total
    } else {
        accumulate(gp, g.indices(), g.values())
    };
    let components = raw
        .into_iter()
        .enumerate()
        .map(|(k, data)| {
            let [r0, d, r1] = gp.point.core(k).p;
            let z = Tensor3::from_vec(r0, d, r1, data)?;
            gp.finish_component(k, z)
        })
        .collect::<Result<Vec<_>>>()?;
    debug_assert_eq!(components.len(), m);
    Ok(TangentVector { components })
}

/// Raw `Z_k` buffers (row-major `(r_{k-1}, d_k, r_k)`) for a block of samples.
fn accumulate(gp: &GaugePair, indices: &[usize], values: &[f64]) -> Vec<Vec<f64>> {
    let t = &gp.point;
    let m = t.order();
    let mut z: Vec<Vec<f64>> = t.cores().iter().map(|c| vec![0.0; c.data.len()]).collect();
    let ranks: Vec<usize> = std::iter::once(1)
        .chain(t.cores().iter().map(|c| c.p[2]))
        .collect();
    // prefixes[k] holds u_k (length r_{k}), the product of cores 0..k; suffixes[k]
    // holds v (length r_k), the product of right cores k..m-1 (0-based).
    let mut prefixes: Vec<Vec<f64>> = ranks.iter().map(|&r| vec![0.0; r]).collect();
    let mut suffixes: Vec<Vec<f64>> = ranks.iter().map(|&r| vec![0.0; r]).collect();
    for (x, &gv) in indices.chunks_exact(m).zip(values) {
        if gv == 0.0 {
            continue;
        }
        prefixes[0][0] = 1.0;
        for k in 0..m - 1 {
            let core = t.core(k);
            let [r0, d, r1] = core.p;
            let (head, tail) = prefixes.split_at_mut(k + 1);
            let (u, next) = (&head[k], &mut tail[0]);
            next.iter_mut().for_each(|v| *v = 0.0);
            for a in 0..r0 {
                let ua = u[a];
                let row = &core.data[(a * d + x[k]) * r1..(a * d + x[k] + 1) * r1];
                for (n, &c) in next.iter_mut().zip(row) {
                    *n += ua * c;
                }
            }
        }
        suffixes[m][0] = 1.0;
        for k in (1..m).rev() {
            let core = &gp.right[k];
            let [r0, d, r1] = core.p;
            let (head, tail) = suffixes.split_at_mut(k + 1);
            let (next, v) = (&mut head[k], &tail[0]);
            for (a, out) in next.iter_mut().enumerate().take(r0) {
                let row = &core.data[(a * d + x[k]) * r1..(a * d + x[k] + 1) * r1];
                *out = row.iter().zip(v).map(|(c, w)| c * w).sum();
            }
        }
        for k in 0..m {
            let [r0, d, r1] = t.core(k).p;
            let u = &prefixes[k];
            let v = &suffixes[k + 1];
            let zk = &mut z[k];
            for a in 0..r0 {
                let ga = gv * u[a];
                if ga == 0.0 {
                    continue;
                }
                let out = &mut zk[(a * d + x[k]) * r1..(a * d + x[k] + 1) * r1];
                for (o, &vb) in out.iter_mut().zip(v) {
                    *o += ga * vb;
                }
            }
        }
    }
    z
}

/// The tangent vector as an explicit TT tensor of ranks `2 r` (first rank
/// `2 r_1`, ..., last `2 r_{m-1}`), built from block cores.
pub fn embed(gp: &GaugePair, xi: &TangentVector) -> Result<TtTensor> {
    gp.check_components(xi)?;
    let t = &gp.point;
    let m = t.order();
    let mut cores = Vec::with_capacity(m);
    for k in 0..m {
        let tk = t.core(k);
        let xk = &xi.components[k];
        let [r0, d, r1] = tk.p;
        let c = if k == 0 {
            // [X_1 | T_1]
            let mut c = Tensor3::zeros(1, d, 2 * r1);
            for x in 0..d {
                for b in 0..r1 {
                    c.set(0, x, b, xk.get(0, x, b));
                    c.set(0, x, r1 + b, tk.get(0, x, b));
                }
            }
            c
        } else if k == m - 1 {
            // [T_m ; X_m]
            let mut c = Tensor3::zeros(2 * r0, d, 1);
            for a in 0..r0 {
                for x in 0..d {
                    c.set(a, x, 0, tk.get(a, x, 0));
                    c.set(r0 + a, x, 0, xk.get(a, x, 0));
                }
            }
            c
        } else {
            // [[T_k, 0], [X_k, T_k]]
            let mut c = Tensor3::zeros(2 * r0, d, 2 * r1);
            for a in 0..r0 {
                for x in 0..d {
                    for b in 0..r1 {
                        let tv = tk.get(a, x, b);
                        c.set(a, x, b, tv);
                        c.set(r0 + a, x, b, xk.get(a, x, b));
                        c.set(r0 + a, x, r1 + b, tv);
                    }
                }
            }
            c
        };
        cores.push(c);
    }
    TtTensor::new(cores)
}

/// `sum_i <L(X_i) Lambda_{i+1}, L(Z_i) Lambda_{i+1}>`, which equals the
/// Frobenius inner product of the represented tensors.
pub fn tangent_inner(gp: &GaugePair, xi: &TangentVector, zeta: &TangentVector) -> Result<f64> {
    gp.check_components(xi)?;
    gp.check_components(zeta)?;
    let m = gp.order();
    let mut total = 0.0;
    for k in 0..m {
        let lx = xi.components[k].left_unfold();
        let lz = zeta.components[k].left_unfold();
        total += if k == m - 1 {
            lx.dot(&lz)
        } else {
            let lam = &gp.lambdas[k + 1];
            (lx * lam).dot(&(lz * lam))
        };
    }
    Ok(total)
}

pub fn tangent_norm(gp: &GaugePair, xi: &TangentVector) -> Result<f64> {
    Ok(tangent_inner(gp, xi, xi)?.max(0.0).sqrt())
}

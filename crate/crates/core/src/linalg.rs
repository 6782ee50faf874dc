//! Thin dense linear-algebra layer. Everything above this module talks to
//! these functions only. Matrices are nalgebra types; SVD and symmetric
//! eigen-decompositions are delegated to faer.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, TtError};

/// Thin SVD `A = U diag(s) Vt` with singular values sorted descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub vt: DMatrix<f64>,
}

pub fn svd(a: &DMatrix<f64>) -> Result<Svd> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(TtError::Svd(format!(
            "empty {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(TtError::Svd("non-finite entry".into()));
    }
    let (p, q) = a.shape();
    let dec = to_faer(a)
        .thin_svd()
        .map_err(|e| TtError::Svd(format!("no convergence on a {p}x{q} matrix: {e:?}")))?;
    let s_diag = dec.S().column_vector();
    let k = p.min(q);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| s_diag[j].partial_cmp(&s_diag[i]).unwrap().then(i.cmp(&j)));
    let (u, v) = (dec.U(), dec.V());
    Ok(Svd {
        u: DMatrix::from_fn(p, k, |r, c| u[(r, order[c])]),
        s: order.iter().map(|&i| s_diag[i]).collect(),
        vt: DMatrix::from_fn(k, q, |r, c| v[(c, order[r])]),
    })
}

fn to_faer(a: &DMatrix<f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

pub fn singular_values(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    Ok(svd(a)?.s)
}

/// Thin QR `A = Q R` with `Q` of size p x min(p, q).
pub fn qr(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let dec = a.clone().qr();
    (dec.q(), dec.r())
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues sorted descending.
pub fn sym_eigen(a: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(TtError::Svd("non-finite entry in symmetric matrix".into()));
    }
    let sym = (a + a.transpose()) * 0.5;
    let dec = to_faer(&sym)
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| TtError::Svd(format!("eigen-decomposition failed: {e:?}")))?;
    let vals_in = dec.S().column_vector();
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| vals_in[j].partial_cmp(&vals_in[i]).unwrap().then(i.cmp(&j)));
    let u = dec.U();
    let vals = order.iter().map(|&i| vals_in[i]).collect();
    let vecs = DMatrix::from_fn(n, n, |r, c| u[(r, order[c])]);
    Ok((vals, vecs))
}

/// Replace columns `valid..` of `u` by an orthonormal completion of the
/// first `valid` columns. Candidates are the canonical basis vectors in
/// order, Gram-Schmidt orthogonalized (twice) against the kept columns.
pub fn complete_orthonormal(u: &mut DMatrix<f64>, valid: usize) {
    let (p, k) = u.shape();
    let mut filled = valid;
    let mut cand = 0;
    while filled < k && cand < p {
        let mut v = DVector::<f64>::zeros(p);
        v[cand] = 1.0;
        cand += 1;
        for _ in 0..2 {
            for j in 0..filled {
                let col = u.column(j);
                let proj = col.dot(&v);
                v.axpy(-proj, &col, 1.0);
            }
        }
        let n = v.norm();
        if n > 1e-8 {
            u.set_column(filled, &(v / n));
            filled += 1;
        }
    }
}

/// `X` such that `X A = B`, for a small square `A`.
pub fn solve_right(b: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    // X A = B  <=>  A^T X^T = B^T
    let lu = a.transpose().lu();
    lu.solve(&b.transpose())
        .map(|xt| xt.transpose())
        .ok_or_else(|| TtError::Svd("singular interface matrix".into()))
}

/// `G^{-1/2}` for a symmetric positive definite `G`; errors when the smallest
/// eigenvalue is below `floor`.
pub fn inv_sqrt_spd(g: &DMatrix<f64>, floor: f64) -> Result<DMatrix<f64>> {
    let (vals, vecs) = sym_eigen(g)?;
    let min = vals.last().copied().unwrap_or(0.0);
    if !(min >= floor) {
        return Err(TtError::Svd(format!(
            "Gram matrix eigenvalue {min:e} below {floor:e}"
        )));
    }
    let d = DMatrix::from_diagonal(&DVector::from_iterator(
        vals.len(),
        vals.iter().map(|v| 1.0 / v.sqrt()),
    ));
    Ok(&vecs * d * vecs.transpose())
}

/// ||A^T A - I||_F.
pub fn orthonormality_defect(a: &DMatrix<f64>) -> f64 {
    let g = a.transpose() * a;
    (g - DMatrix::<f64>::identity(a.ncols(), a.ncols())).norm()
}

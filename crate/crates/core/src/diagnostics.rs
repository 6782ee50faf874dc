//! Spikiness, incoherence, condition number, relative error and rank detection.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TtError};
use crate::linalg;
use crate::observations::{sample_indices, EntrySource};
use crate::tangent::build_gauge_pair;
use crate::tensor::{DenseTensor, Shape};
use crate::tt::{dense_spectrum, RankVector, SpectrumSummary, TtTensor};

/// Number of sampled entries used for the spikiness lower bound above the cap.
pub const SPIKINESS_SAMPLES: usize = 1 << 16;

/// `sqrt(d*) ||T||_inf / ||T||_F`.
pub fn spikiness_dense(a: &DenseTensor) -> Result<f64> {
    let n = a.frobenius_norm();
    if n == 0.0 {
        return Err(TtError::ZeroTensor("spikiness of the zero tensor".into()));
    }
    Ok((a.shape().total() as f64).sqrt() * a.max_abs() / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spikiness {
    pub value: f64,
    /// False when `||T||_inf` was replaced by the largest of sampled entries,
    /// making `value` a lower bound.
    pub exact: bool,
}

/// Spikiness of a TT tensor: exact by densification under `cap`, otherwise a
/// lower bound from `SPIKINESS_SAMPLES` uniformly sampled entries.
pub fn spikiness_tt(t: &TtTensor, cap: usize, seed: u64) -> Result<Spikiness> {
    if t.shape().check_dense(cap).is_ok() {
        return Ok(Spikiness {
            value: spikiness_dense(&t.full(cap)?)?,
            exact: true,
        });
    }
    let n = t.frobenius_norm();
    if n == 0.0 {
        return Err(TtError::ZeroTensor("spikiness of the zero tensor".into()));
    }
    let m = t.order();
    let idx = sample_indices(t.shape(), SPIKINESS_SAMPLES, seed);
    let max = idx
        .chunks_exact(m)
        .map(|x| t.entry(x).abs())
        .fold(0.0, f64::max);
    Ok(Spikiness {
        value: (t.shape().total() as f64).sqrt() * max / n,
        exact: false,
    })
}

fn max_row_norm(rows: usize, cols: usize, data: &[f64]) -> f64 {
    (0..rows)
        .map(|r| {
            data[r * cols..(r + 1) * cols]
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
        .sqrt()
}

fn max_col_norm(rows: usize, cols: usize, data: &[f64]) -> f64 {
    let mut sq = vec![0.0; cols];
    for r in 0..rows {
        for (s, v) in sq.iter_mut().zip(&data[r * cols..(r + 1) * cols]) {
            *s += v * v;
        }
    }
    sq.into_iter().fold(0.0, f64::max).sqrt()
}

fn separation_incoherence(shape: &Shape, i: usize, r: usize, u_max: f64, v_max: f64) -> f64 {
    let left = shape.left_size(i) as f64;
    let right = shape.right_size(i) as f64;
    let r = r as f64;
    ((left / r).sqrt() * u_max).max((right / r).sqrt() * v_max)
}

/// Incoherence from the gauge factors: the left part `T^{<=i}` spans the
/// left singular subspace of `T<i>` and `Y^{>=i+1}` the right one.
pub fn incoherence_tt(t: &TtTensor, cap: usize) -> Result<f64> {
    let gp = build_gauge_pair(t)?;
    let shape = t.shape();
    let ranks = gp.point().ranks();
    let mut worst: f64 = 0.0;
    for i in 1..t.order() {
        let r = ranks.as_slice()[i - 1];
        let left = gp.point().left_part(i, cap)?;
        let right = gp.right_part(i + 1, cap)?;
        let u_max = max_row_norm(shape.left_size(i), r, &left);
        let v_max = max_col_norm(r, shape.right_size(i), &right);
        worst = worst.max(separation_incoherence(shape, i, r, u_max, v_max));
    }
    Ok(worst)
}

/// Incoherence from dense SVDs of the separations, using the top `r_i`
/// singular vectors (or all available ones when the rank is smaller).
pub fn incoherence_dense(a: &DenseTensor, ranks: &RankVector) -> Result<f64> {
    if a.frobenius_norm() == 0.0 {
        return Err(TtError::ZeroTensor("incoherence of the zero tensor".into()));
    }
    let shape = a.shape();
    let mut worst: f64 = 0.0;
    for i in 1..shape.order() {
        let dec = linalg::svd(&a.separation(i)?.to_matrix())?;
        let r = ranks.as_slice()[i - 1].min(dec.s.len());
        let u = dec.u.columns(0, r).into_owned();
        let vt = dec.vt.rows(0, r).into_owned();
        let u_max = (0..u.nrows()).map(|k| u.row(k).norm()).fold(0.0, f64::max);
        let v_max = (0..vt.ncols())
            .map(|k| vt.column(k).norm())
            .fold(0.0, f64::max);
        worst = worst.max(separation_incoherence(shape, i, r, u_max, v_max));
    }
    Ok(worst)
}

/// `||A - B||_F / ||B||_F` in TT arithmetic.
pub fn relative_error(estimate: &TtTensor, reference: &TtTensor) -> Result<f64> {
    let denom = reference.frobenius_norm();
    if denom == 0.0 {
        return Err(TtError::ZeroTensor(
            "relative error against the zero tensor".into(),
        ));
    }
    Ok(estimate.sub(reference)?.frobenius_norm() / denom)
}

pub fn relative_error_dense(estimate: &DenseTensor, reference: &DenseTensor) -> Result<f64> {
    let denom = reference.frobenius_norm();
    if denom == 0.0 {
        return Err(TtError::ZeroTensor(
            "relative error against the zero tensor".into(),
        ));
    }
    Ok(estimate.sub(reference)?.frobenius_norm() / denom)
}

/// Number of singular values of each separation above `tol * sigma_1`
/// (zero for a vanishing separation).
pub fn detect_tt_rank(a: &DenseTensor, tol: f64) -> Result<Vec<usize>> {
    (1..a.shape().order())
        .map(|i| {
            let m: DMatrix<f64> = a.separation(i)?.to_matrix();
            if m.iter().all(|&v| v == 0.0) {
                return Ok(0);
            }
            let s = linalg::singular_values(&m)?;
            Ok(s.iter().filter(|&&v| v > tol * s[0]).count())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub shape: Vec<usize>,
    pub ranks: Vec<usize>,
    pub spikiness: f64,
    pub spikiness_exact: bool,
    pub incoherence: f64,
    pub condition_number: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub singular_values: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relative_error: Option<f64>,
}

pub fn diagnose(
    t: &TtTensor,
    reference: Option<&TtTensor>,
    cap: usize,
) -> Result<DiagnosticsReport> {
    let sp = spikiness_tt(t, cap, 0)?;
    let spectrum: SpectrumSummary = t.spectrum()?;
    Ok(DiagnosticsReport {
        shape: t.shape().dims().to_vec(),
        ranks: t.ranks().as_slice().to_vec(),
        spikiness: sp.value,
        spikiness_exact: sp.exact,
        incoherence: incoherence_tt(t, cap)?,
        condition_number: spectrum.condition_number,
        sigma_min: spectrum.sigma_min,
        sigma_max: spectrum.sigma_max,
        singular_values: spectrum.per_separation,
        relative_error: reference.map(|r| relative_error(t, r)).transpose()?,
    })
}

/// Dense counterpart of [`diagnose`] for a tensor given entrywise.
pub fn diagnose_dense(a: &DenseTensor, ranks: &RankVector) -> Result<DiagnosticsReport> {
    let spectrum = dense_spectrum(a, ranks)?;
    Ok(DiagnosticsReport {
        shape: a.shape().dims().to_vec(),
        ranks: ranks.as_slice().to_vec(),
        spikiness: spikiness_dense(a)?,
        spikiness_exact: true,
        incoherence: incoherence_dense(a, ranks)?,
        condition_number: spectrum.condition_number,
        sigma_min: spectrum.sigma_min,
        sigma_max: spectrum.sigma_max,
        singular_values: spectrum.per_separation,
        relative_error: None,
    })
}

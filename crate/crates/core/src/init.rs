//! Sequential second-order moment initialization, plus the naive one-shot
//! spectral baseline.
//!
//! Stage `i` estimates the core `T_i` from the top eigenvectors of a
//! split-sample moment `(T^{<=i-1} (x) I)^T N_i (T^{<=i-1} (x) I)`, where
//! `N_i` estimates `T<i> T<i>^T` from two independent sample groups.

use std::collections::HashMap;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::completion::{trim, trim_threshold};
use crate::error::{Result, TtError};
use crate::linalg::{inv_sqrt_spd, sym_eigen};
use crate::observations::{split_observations, ObservationSet};
use crate::tensor::Tensor3;
use crate::tt::{tt_rounding, tt_svd, Gauge, RankVector, TtTensor};

/// Default cap on `d*` for the dense trim + TT-SVD at the end of initialization.
pub const INIT_DENSE_MAX_ENTRIES: usize = 1 << 24;

/// Smallest Gram eigenvalue accepted by the re-normalization.
pub const GRAM_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    /// Spikiness tuning parameter; `default_nu` when absent.
    pub nu: Option<f64>,
    /// Incoherence tuning parameter; `4 nu^2` when absent, with the supplied
    /// `nu` or else the plug-in estimate.
    pub mu: Option<f64>,
    /// Seed of the sample split.
    pub seed: u64,
    /// Trim and TT-SVD densely when `d*` is at most this.
    pub dense_max_entries: usize,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            nu: None,
            mu: None,
            seed: 0,
            dense_max_entries: INIT_DENSE_MAX_ENTRIES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: usize,
    /// Leading eigenvalues of the projected moment (at most `r_i + 1`).
    pub top_eigenvalues: Vec<f64>,
    /// `lambda_{r_i} - lambda_{r_i + 1}` (or `lambda_{r_i}` when the matrix has no more).
    pub eigen_gap: f64,
    /// Rows clipped by the incoherence truncation.
    pub truncated_rows: usize,
    /// True when the truncated Gram matrix was singular and the raw
    /// eigenvectors were kept.
    pub fell_back: bool,
    pub ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitReport {
    /// Plug-in spikiness estimate from the samples.
    pub nu_hat: f64,
    pub nu: f64,
    pub mu: f64,
    pub group_sizes: Vec<usize>,
    pub stages: Vec<StageReport>,
    pub last_core_ms: f64,
    /// Entries clipped by the final trim; `None` when the dense trim was skipped.
    pub trimmed: Option<usize>,
    pub total_ms: f64,
}

#[derive(Debug, Clone)]
pub struct InitOutput {
    pub tensor: TtTensor,
    pub report: InitReport,
}

/// `max|v| * sqrt(n) / sqrt(sum v^2)`, floored at 1: the plug-in estimate of
/// `sqrt(d*) ||T||_inf / ||T||_F` using `(d*/n) sum v^2` for `||T||_F^2`.
pub fn estimate_spikiness(omega: &ObservationSet) -> Result<f64> {
    if omega.is_empty() {
        return Err(TtError::InsufficientSamples(
            "spikiness needs at least one sample".into(),
        ));
    }
    let max = omega.values().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let sum_sq: f64 = omega.values().iter().map(|v| v * v).sum();
    if sum_sq == 0.0 {
        return Err(TtError::ZeroTensor("all observed values are zero".into()));
    }
    Ok((max * (omega.len() as f64).sqrt() / sum_sq.sqrt()).max(1.0))
}

/// Factor applied to the plug-in spikiness when no `nu` is supplied: the
/// sample maximum underestimates `||T||_inf`, and a trim threshold below the
/// truth's peak entry biases the fixed point.
pub const NU_MARGIN: f64 = 2.0;

/// Trim parameter used when none is configured: `NU_MARGIN * estimate_spikiness`.
pub fn default_nu(omega: &ObservationSet) -> Result<f64> {
    Ok(NU_MARGIN * estimate_spikiness(omega)?)
}

/// Prefix product `T_1(x_1) ... T_k(x_k)` as a row vector.
fn prefix(cores: &[Tensor3], x: &[usize]) -> Vec<f64> {
    let mut v = vec![1.0];
    for (core, &xi) in cores.iter().zip(x) {
        let [r0, d, r1] = core.p;
        let mut next = vec![0.0; r1];
        for (a, &va) in v.iter().enumerate().take(r0) {
            let row = &core.data[(a * d + xi) * r1..(a * d + xi + 1) * r1];
            for (n, &c) in next.iter_mut().zip(row) {
                *n += va * c;
            }
        }
        v = next;
    }
    v
}

/// Columns of `(T^{<=i-1} (x) I)^T P_Ω(T*)<i>` keyed by the flat index of
/// `(x_{i+1}, ..., x_m)`, in order of first appearance.
struct ProjectedColumns {
    keys: Vec<usize>,
    slot: HashMap<usize, usize>,
    /// `keys.len()` columns of length `rows`, column-major.
    data: Vec<f64>,
    rows: usize,
}

fn projected_columns(i: usize, omega: &ObservationSet, left: &[Tensor3]) -> ProjectedColumns {
    let dims = omega.shape().dims();
    let d_i = dims[i - 1];
    let r_prev = left.last().map_or(1, |c| c.p[2]);
    let rows = r_prev * d_i;
    let mut cols = ProjectedColumns {
        keys: Vec::new(),
        slot: HashMap::new(),
        data: Vec::new(),
        rows,
    };
    for (x, v) in omega.iter() {
        let key = x[i..]
            .iter()
            .zip(&dims[i..])
            .fold(0usize, |acc, (&xk, &dk)| acc * dk + xk);
        let slot = *cols.slot.entry(key).or_insert_with(|| {
            cols.keys.push(key);
            cols.data.extend(std::iter::repeat_n(0.0, rows));
            cols.keys.len() - 1
        });
        let u = prefix(left, &x[..i - 1]);
        let col = &mut cols.data[slot * rows..(slot + 1) * rows];
        for (a, &ua) in u.iter().enumerate() {
            col[a * d_i + x[i - 1]] += v * ua;
        }
    }
    cols
}

/// `(d*/|Ω_a|)(d*/|Ω_b|) (T^{<=i-1} (x) I)^T (A_a A_b^T + A_b A_a^T)/2 (T^{<=i-1} (x) I)`
/// with `A_g = P_{Ω_g}(T*)<i>`, for 1-based stage `i`. `left` holds the
/// already estimated cores `T_1..T_{i-1}` (left-orthogonal).
///
/// Only columns observed in both groups contribute; they are paired with a
/// hash join and multiplied in the order they first appear in `Ω_a`.
pub fn projected_moment(
    i: usize,
    omega_a: &ObservationSet,
    omega_b: &ObservationSet,
    left: &[Tensor3],
) -> Result<DMatrix<f64>> {
    let shape = omega_a.shape();
    if omega_b.shape() != shape {
        return Err(TtError::Shape("sample groups differ in shape".into()));
    }
    if i == 0 || i >= shape.order() || left.len() != i - 1 {
        return Err(TtError::Index(format!(
            "stage {i} with {} estimated cores",
            left.len()
        )));
    }
    if omega_a.is_empty() || omega_b.is_empty() {
        return Err(TtError::InsufficientSamples("empty sample group".into()));
    }
    let a = projected_columns(i, omega_a, left);
    let b = projected_columns(i, omega_b, left);
    let rows = a.rows;
    let shared: Vec<(usize, usize)> = a
        .keys
        .iter()
        .enumerate()
        .filter_map(|(sa, key)| b.slot.get(key).map(|&sb| (sa, sb)))
        .collect();
    let ma = DMatrix::from_fn(rows, shared.len(), |r, c| a.data[shared[c].0 * rows + r]);
    let mb = DMatrix::from_fn(rows, shared.len(), |r, c| b.data[shared[c].1 * rows + r]);
    let p = &ma * mb.transpose();
    let d_star = shape.total() as f64;
    let scale = (d_star / omega_a.len() as f64) * (d_star / omega_b.len() as f64) * 0.5;
    Ok(DMatrix::from_fn(rows, rows, |r, c| {
        scale * (p[(r, c)] + p[(c, r)])
    }))
}

/// Clip rows to norm at most `b`, then right-multiply by `(X^T X)^{-1/2}`.
/// Returns the result and the number of clipped rows.
pub fn truncate_renormalize(x: &DMatrix<f64>, b: f64) -> Result<(DMatrix<f64>, usize)> {
    let mut clipped = x.clone();
    let mut count = 0;
    for mut row in clipped.row_iter_mut() {
        let n = row.norm();
        if n > b {
            row *= b / n;
            count += 1;
        }
    }
    let g = clipped.transpose() * &clipped;
    let inv = inv_sqrt_spd(&g, GRAM_FLOOR).map_err(|e| TtError::InitFailure {
        stage: 0,
        msg: format!("truncated columns are degenerate: {e}"),
    })?;
    Ok((clipped * inv, count))
}

/// Algorithm of sequential second-order moments followed by trim and TT-SVD.
pub fn initialize(
    omega: &ObservationSet,
    ranks: &RankVector,
    cfg: &InitConfig,
) -> Result<InitOutput> {
    let start = Instant::now();
    let shape = omega.shape().clone();
    let m = shape.order();
    ranks.check_feasible(&shape)?;
    if omega.len() < 2 * m - 1 {
        return Err(TtError::InsufficientSamples(format!(
            "{} samples cannot be split into {} groups",
            omega.len(),
            2 * m - 1
        )));
    }
    let nu_hat = estimate_spikiness(omega)?;
    let nu = cfg.nu.unwrap_or(NU_MARGIN * nu_hat);
    let nu_mu = cfg.nu.unwrap_or(nu_hat);
    let mu = cfg.mu.unwrap_or(4.0 * nu_mu * nu_mu);
    if !(nu > 0.0 && mu > 0.0) {
        return Err(TtError::Config("nu and mu must be positive".into()));
    }
    let groups = split_observations(omega, 2 * m - 1, cfg.seed)?;
    let full = ranks.with_boundary();
    let mut cores: Vec<Tensor3> = Vec::with_capacity(m);
    let mut stages = Vec::with_capacity(m - 1);
    for i in 1..m {
        let tick = Instant::now();
        let fail = |msg: String| TtError::InitFailure { stage: i, msg };
        let moment = projected_moment(i, &groups[2 * i - 2], &groups[2 * i - 1], &cores)
            .map_err(|e| fail(e.to_string()))?;
        let (vals, vecs) = sym_eigen(&moment).map_err(|e| fail(e.to_string()))?;
        let r = full[i];
        let x = vecs.columns(0, r).into_owned();
        let d_i = shape.dim(i - 1);
        let bound = (mu * r as f64 / d_i as f64).sqrt();
        let (core_mat, truncated_rows, fell_back) = match truncate_renormalize(&x, bound) {
            Ok((t, count)) => (t, count, false),
            Err(e) => {
                log::warn!("stage {i}: {e}; keeping the untruncated eigenvectors");
                (x, 0, true)
            }
        };
        cores.push(
            Tensor3::from_left_unfold(full[i - 1], d_i, &core_mat)
                .map_err(|e| fail(e.to_string()))?,
        );
        stages.push(StageReport {
            stage: i,
            top_eigenvalues: vals.iter().take(r + 1).copied().collect(),
            eigen_gap: vals[r - 1] - vals.get(r).copied().unwrap_or(0.0),
            truncated_rows,
            fell_back,
            ms: tick.elapsed().as_secs_f64() * 1e3,
        });
    }

    let tick = Instant::now();
    let last_group = &groups[2 * m - 2];
    let r_last = full[m - 1];
    let d_m = shape.dim(m - 1);
    let scale = shape.total() as f64 / last_group.len() as f64;
    let mut last = Tensor3::zeros(r_last, d_m, 1);
    for (x, v) in last_group.iter() {
        let u = prefix(&cores, &x[..m - 1]);
        for (a, &ua) in u.iter().enumerate() {
            last.data[a * d_m + x[m - 1]] += scale * v * ua;
        }
    }
    cores.push(last);
    let last_core_ms = tick.elapsed().as_secs_f64() * 1e3;
    let estimate = TtTensor::from_parts(shape.clone(), cores, Gauge::LeftOrthogonal);

    let stage_fail = |e: TtError| TtError::InitFailure {
        stage: m,
        msg: e.to_string(),
    };
    let (tensor, trimmed) = if shape.total() <= cfg.dense_max_entries {
        let dense = estimate.full(cfg.dense_max_entries).map_err(stage_fail)?;
        let zeta = trim_threshold(dense.frobenius_norm(), shape.total(), nu);
        let (trimmed, count) = trim(&dense, zeta);
        (tt_svd(&trimmed, ranks).map_err(stage_fail)?, Some(count))
    } else {
        log::warn!(
            "d* = {} exceeds {}; skipping the dense trim of the initial estimate",
            shape.total(),
            cfg.dense_max_entries
        );
        (tt_rounding(&estimate, ranks).map_err(stage_fail)?, None)
    };
    Ok(InitOutput {
        tensor,
        report: InitReport {
            nu_hat,
            nu,
            mu,
            group_sizes: groups.iter().map(|g| g.len()).collect(),
            stages,
            last_core_ms,
            trimmed,
            total_ms: start.elapsed().as_secs_f64() * 1e3,
        },
    })
}

/// Baseline: TT-SVD of the rescaled observed tensor `(d*/n) P_Ω(T*)`.
pub fn naive_init(omega: &ObservationSet, ranks: &RankVector, cap: usize) -> Result<TtTensor> {
    if omega.is_empty() {
        return Err(TtError::InsufficientSamples("no observations".into()));
    }
    let scale = omega.shape().total() as f64 / omega.len() as f64;
    let dense = omega.scatter_dense(cap)?.scaled(scale);
    tt_svd(&dense, ranks)
}

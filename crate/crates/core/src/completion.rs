//! Riemannian gradient descent with trimming on the fixed-TT-rank manifold.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::diagnostics::relative_error;
use crate::error::{Result, TtError};
use crate::init::default_nu;
use crate::observations::{residual_gradient_and_objective, ObservationSet};
use crate::tangent::{
    build_gauge_pair, embed, riemannian_gradient_with, tangent_norm, TangentVector,
};
use crate::tensor::{DenseTensor, DEFAULT_DENSE_CAP};
use crate::tt::{tt_rounding, tt_svd, RankVector, TtTensor};

/// Largest `d*` for which trimming (and hence a dense retraction) is on by default.
pub const TRIM_AUTO_MAX_ENTRIES: usize = 1 << 18;

/// Objective growth over its running minimum that flags divergence.
pub const DIVERGENCE_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionConfig {
    pub ranks: RankVector,
    /// Step size is `step_constant * d* / n`.
    pub step_constant: f64,
    /// Spikiness tuning parameter for the trim threshold; `default_nu` when absent.
    pub nu: Option<f64>,
    /// Trim before each retraction; when absent, on iff `d* <= TRIM_AUTO_MAX_ENTRIES`.
    pub trim: Option<bool>,
    pub max_iters: usize,
    pub rel_change_tol: f64,
    pub success_tol: f64,
    pub seed: u64,
    /// Chunked parallel reduction in the gradient (reproducible, not bit-equal
    /// to the sequential sum).
    pub parallel_gradient: bool,
    pub dense_cap: usize,
}

impl CompletionConfig {
    pub fn new(ranks: RankVector) -> Self {
        CompletionConfig {
            ranks,
            step_constant: 0.12,
            nu: None,
            trim: None,
            max_iters: 500,
            rel_change_tol: 1e-3,
            success_tol: 1e-2,
            seed: 0,
            parallel_gradient: false,
            dense_cap: DEFAULT_DENSE_CAP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_constant > 0.0) {
            return Err(TtError::Config("step_constant must be positive".into()));
        }
        if !(self.rel_change_tol > 0.0) || !(self.success_tol > 0.0) {
            return Err(TtError::Config("tolerances must be positive".into()));
        }
        if let Some(nu) = self.nu {
            if !(nu > 0.0) {
                return Err(TtError::Config("nu must be positive".into()));
            }
        }
        Ok(())
    }

    /// Whether the dense trimmed retraction runs for a tensor with `d*` entries.
    pub fn trim_enabled(&self, d_star: usize) -> bool {
        let affordable = d_star <= self.dense_cap;
        match self.trim {
            Some(t) => t && affordable,
            None => d_star <= TRIM_AUTO_MAX_ENTRIES && affordable,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Retraction {
    /// Densify, trim, TT-SVD.
    DenseTrim,
    /// TT rounding of the rank-2r iterate, no trimming.
    Structured,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Converged,
    MaxIters,
    Diverged,
}

/// One row of the trace. Row 0 describes the starting point (gradient norm
/// and relative change are NaN); row `l` describes `T_l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub f: f64,
    /// Norm of the Riemannian gradient used to produce this iterate.
    pub grad_norm: f64,
    /// `||T_l - T_{l-1}||_F / ||T_{l-1}||_F`.
    pub rel_change: f64,
    pub trim_count: usize,
    pub wall_ms: f64,
    /// `||T_l - T*||_F / ||T*||_F` when the truth was supplied.
    pub rel_err: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionTrace {
    pub records: Vec<IterationRecord>,
    pub status: Status,
    pub retraction: Retraction,
    pub nu: f64,
    /// Index of the returned (best by objective) iterate.
    pub best_iter: usize,
}

impl CompletionTrace {
    /// Number of gradient steps taken.
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let with_err = self.records.iter().any(|r| r.rel_err.is_some());
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec![
            "iter",
            "f",
            "grad_norm",
            "rel_change",
            "trim_count",
            "wall_ms",
        ];
        if with_err {
            header.push("rel_err");
        }
        out.write_record(&header).map_err(csv_err)?;
        for r in &self.records {
            let mut row = vec![
                r.iter.to_string(),
                r.f.to_string(),
                r.grad_norm.to_string(),
                r.rel_change.to_string(),
                r.trim_count.to_string(),
                format!("{:.3}", r.wall_ms),
            ];
            if with_err {
                row.push(r.rel_err.map(|e| e.to_string()).unwrap_or_default());
            }
            out.write_record(&row).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> TtError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => TtError::Io(io),
        other => TtError::Format(format!("{other:?}")),
    }
}

/// Entrywise clipping: `v` if `|v| < zeta`, else `zeta * sign(v)`. Also
/// returns the number of entries that changed.
pub fn trim(w: &DenseTensor, zeta: f64) -> (DenseTensor, usize) {
    let mut out = w.clone();
    let mut count = 0;
    for v in out.data_mut() {
        if v.abs() >= zeta {
            let clipped = zeta * v.signum();
            if clipped != *v {
                count += 1;
            }
            *v = clipped;
        }
    }
    (out, count)
}

/// `zeta = (10/9) * nu * ||W||_F / sqrt(d*)`.
pub fn trim_threshold(w_norm: f64, d_star: usize, nu: f64) -> f64 {
    10.0 / 9.0 * nu * w_norm / (d_star as f64).sqrt()
}

/// Result of one gradient step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub next: TtTensor,
    pub grad_norm: f64,
    pub trim_count: usize,
}

/// `W = T_l - alpha * P_T(G)` as a single TT of rank at most 2r: the tangent
/// vector `-alpha * xi` with its last component shifted by `T_m`.
pub fn gradient_update(
    t: &TtTensor,
    g: &ObservationSet,
    alpha: f64,
    parallel: bool,
) -> Result<(TtTensor, f64)> {
    let gp = build_gauge_pair(t)?;
    let xi = riemannian_gradient_with(&gp, g, parallel)?;
    let grad_norm = tangent_norm(&gp, &xi)?;
    let mut comps = xi.scaled(-alpha).into_components();
    let m = comps.len();
    let tm = gp.point().core(m - 1);
    for (c, &t) in comps[m - 1].data.iter_mut().zip(&tm.data) {
        *c += t;
    }
    Ok((embed(&gp, &TangentVector::new(comps))?, grad_norm))
}

/// Project the rank-2r iterate back to the manifold.
pub fn retract(
    w: &TtTensor,
    ranks: &RankVector,
    retraction: Retraction,
    nu: f64,
    cap: usize,
) -> Result<(TtTensor, usize)> {
    match retraction {
        Retraction::DenseTrim => {
            let dense = w.full(cap)?;
            let zeta = trim_threshold(dense.frobenius_norm(), dense.shape().total(), nu);
            let (trimmed, count) = trim(&dense, zeta);
            Ok((tt_svd(&trimmed, ranks)?, count))
        }
        Retraction::Structured => Ok((tt_rounding(w, ranks)?, 0)),
    }
}

/// One iteration: gradient `G = P_Ω(T_l - T*)`, tangent projection, fixed
/// step `alpha = step_constant * d* / n`, then retraction.
pub fn rgrad_step(
    t: &TtTensor,
    omega: &ObservationSet,
    cfg: &CompletionConfig,
    nu: f64,
) -> Result<StepOutcome> {
    let (g, _) = residual_gradient_and_objective(t, omega)?;
    step_with_gradient(t, &g, omega.len(), cfg, nu)
}

fn step_with_gradient(
    t: &TtTensor,
    g: &ObservationSet,
    n: usize,
    cfg: &CompletionConfig,
    nu: f64,
) -> Result<StepOutcome> {
    let d_star = t.shape().total();
    let alpha = cfg.step_constant * d_star as f64 / n as f64;
    let (w, grad_norm) = gradient_update(t, g, alpha, cfg.parallel_gradient)?;
    let retraction = if cfg.trim_enabled(d_star) {
        Retraction::DenseTrim
    } else {
        Retraction::Structured
    };
    let (next, trim_count) = retract(&w, &cfg.ranks, retraction, nu, cfg.dense_cap)?;
    Ok(StepOutcome {
        next,
        grad_norm,
        trim_count,
    })
}

#[derive(Debug, Clone)]
pub struct CompletionOutput {
    /// Best iterate by objective value.
    pub tensor: TtTensor,
    pub trace: CompletionTrace,
}

/// Run the gradient iteration from `t0` until the relative change drops to
/// `rel_change_tol`, `max_iters` steps are taken, or the objective blows up.
pub fn rgrad_complete(
    omega: &ObservationSet,
    cfg: &CompletionConfig,
    t0: &TtTensor,
    truth: Option<&TtTensor>,
) -> Result<CompletionOutput> {
    cfg.validate()?;
    if t0.ranks() != cfg.ranks {
        return Err(TtError::Config(format!(
            "starting point has ranks {}, configuration asks for {}",
            t0.ranks(),
            cfg.ranks
        )));
    }
    if omega.is_empty() {
        return Err(TtError::InsufficientSamples("no observations".into()));
    }
    if t0.shape() != omega.shape() {
        return Err(TtError::Shape(
            "starting point and observations differ in shape".into(),
        ));
    }
    let nu = match cfg.nu {
        Some(nu) => nu,
        None => default_nu(omega)?,
    };
    let d_star = t0.shape().total();
    let retraction = if cfg.trim_enabled(d_star) {
        Retraction::DenseTrim
    } else {
        Retraction::Structured
    };
    let err_of = |t: &TtTensor| truth.map(|s| relative_error(t, s)).transpose();

    let start = Instant::now();
    let mut t = t0.to_left_orthogonal();
    let (mut g, mut f) = residual_gradient_and_objective(&t, omega)?;
    let mut records = vec![IterationRecord {
        iter: 0,
        f,
        grad_norm: f64::NAN,
        rel_change: f64::NAN,
        trim_count: 0,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        rel_err: err_of(&t)?,
    }];
    let f0 = f;
    let mut best = (t.clone(), f, 0usize);
    let mut min_f = f;
    let mut status = Status::MaxIters;
    if f == 0.0 {
        status = Status::Converged;
    }
    let mut iter = 0;
    while status == Status::MaxIters && iter < cfg.max_iters {
        iter += 1;
        let tick = Instant::now();
        let step = step_with_gradient(&t, &g, omega.len(), cfg, nu)?;
        let rel_change = step.next.sub(&t)?.frobenius_norm() / t.frobenius_norm();
        t = step.next;
        (g, f) = residual_gradient_and_objective(&t, omega)?;
        records.push(IterationRecord {
            iter,
            f,
            grad_norm: step.grad_norm,
            rel_change,
            trim_count: step.trim_count,
            wall_ms: tick.elapsed().as_secs_f64() * 1e3,
            rel_err: err_of(&t)?,
        });
        if !f.is_finite() || f > DIVERGENCE_FACTOR * min_f.max(1e-16 * f0) {
            log::warn!("objective grew from {min_f:e} to {f:e} at iteration {iter}; stopping");
            status = Status::Diverged;
            break;
        }
        if f < best.1 {
            best = (t.clone(), f, iter);
        }
        min_f = min_f.min(f);
        if rel_change <= cfg.rel_change_tol {
            status = Status::Converged;
        }
    }
    let (tensor, _, best_iter) = best;
    Ok(CompletionOutput {
        tensor,
        trace: CompletionTrace {
            records,
            status,
            retraction,
            nu,
            best_iter,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observations::{objective_f, sample_uniform};
    use crate::rng::{gaussian_vec, rng_from_seed};
    use crate::tensor::{multi_index, Shape};
    use crate::tt::random_tt;

    const CAP: usize = DEFAULT_DENSE_CAP;

    fn shape(d: &[usize]) -> Shape {
        Shape::new(d.to_vec()).unwrap()
    }

    fn ranks(r: &[usize]) -> RankVector {
        RankVector::new(r.to_vec()).unwrap()
    }

    #[test]
    fn trim_examples() {
        let s = shape(&[2, 2]);
        let w = DenseTensor::from_vec(s, vec![0.5, -3.0, 1.0, 2.0]).unwrap();
        let (t, count) = trim(&w, 1.0);
        assert_eq!(t.data(), &[0.5, -1.0, 1.0, 1.0]);
        assert_eq!(count, 2);
        let (z, _) = trim(&w, 0.0);
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn trim_threshold_examples() {
        assert!((trim_threshold(9.0, 81, 1.0) - 10.0 / 9.0).abs() < 1e-15);
        assert_eq!(trim_threshold(9.0, 81, 0.0), 0.0);
        assert!((trim_threshold(27.0, 81, 1.0) - 3.0 * trim_threshold(9.0, 81, 1.0)).abs() < 1e-14);
    }

    #[test]
    fn trimming_moves_toward_bounded_truth() {
        let s = shape(&[4, 4, 4]);
        let truth = random_tt(&s, &ranks(&[2, 2]), 1, CAP)
            .unwrap()
            .full(CAP)
            .unwrap();
        let zeta = truth.max_abs();
        for seed in 0..20 {
            let mut rng = rng_from_seed(seed);
            let noise = DenseTensor::from_vec(s.clone(), gaussian_vec(&mut rng, 64)).unwrap();
            let w = truth.add(&noise.scaled(0.5)).unwrap();
            let (tw, _) = trim(&w, zeta);
            assert!(
                tw.sub(&truth).unwrap().frobenius_norm() <= w.sub(&truth).unwrap().frobenius_norm()
            );
        }
    }

    #[test]
    fn exact_interpolation_is_a_fixed_point() {
        let s = shape(&[5, 5, 5]);
        let truth = random_tt(&s, &ranks(&[2, 2]), 2, CAP).unwrap();
        let omega = sample_uniform(300, 3, &truth).unwrap();
        let mut cfg = CompletionConfig::new(ranks(&[2, 2]));
        cfg.nu = Some(100.0);
        for trim in [true, false] {
            cfg.trim = Some(trim);
            let step = rgrad_step(&truth, &omega, &cfg, 100.0).unwrap();
            let err = relative_error(&step.next, &truth).unwrap();
            assert!(err < 1e-12, "trim={trim}: {err}");
        }
    }

    #[test]
    fn full_grid_from_truth_converges_immediately() {
        let s = shape(&[3, 4, 3]);
        let truth = random_tt(&s, &ranks(&[2, 2]), 4, CAP).unwrap();
        let idx: Vec<usize> = (0..s.total())
            .flat_map(|f| multi_index(&s, f).unwrap())
            .collect();
        let omega = ObservationSet::observe(&truth, idx).unwrap();
        let cfg = CompletionConfig::new(ranks(&[2, 2]));
        let out = rgrad_complete(&omega, &cfg, &truth, Some(&truth)).unwrap();
        assert_eq!(out.trace.status, Status::Converged);
        assert!(out.trace.iterations() <= 1);
        assert!(relative_error(&out.tensor, &truth).unwrap() < 1e-10);
    }

    #[test]
    fn structured_retraction_matches_dense_untrimmed() {
        let s = shape(&[5, 6, 4]);
        let truth = random_tt(&s, &ranks(&[2, 2]), 5, CAP).unwrap();
        let start = random_tt(&s, &ranks(&[2, 2]), 6, CAP).unwrap();
        let omega = sample_uniform(100, 7, &truth).unwrap();
        let (g, _) = residual_gradient_and_objective(&start, &omega).unwrap();
        let (w, _) = gradient_update(&start, &g, 0.12 * 120.0 / 100.0, false).unwrap();
        let (a, _) = retract(&w, &ranks(&[2, 2]), Retraction::Structured, 1.0, CAP).unwrap();
        let b = tt_svd(&w.full(CAP).unwrap(), &ranks(&[2, 2])).unwrap();
        let fa = a.full(CAP).unwrap();
        let fb = b.full(CAP).unwrap();
        assert!(fa.sub(&fb).unwrap().frobenius_norm() <= 1e-9 * fb.frobenius_norm());
    }

    #[test]
    fn gradient_update_matches_dense_formula() {
        let s = shape(&[4, 3, 4]);
        let truth = random_tt(&s, &ranks(&[2, 2]), 8, CAP).unwrap();
        let start = random_tt(&s, &ranks(&[2, 2]), 9, CAP).unwrap();
        let omega = sample_uniform(40, 10, &truth).unwrap();
        let (g, f) = residual_gradient_and_objective(&start, &omega).unwrap();
        assert!((f - objective_f(&start, &omega).unwrap()).abs() <= 1e-12 * f);
        let alpha = 0.3;
        let (w, _) = gradient_update(&start, &g, alpha, false).unwrap();
        let gp = build_gauge_pair(&start).unwrap();
        let pg = embed(
            &gp,
            &crate::tangent::project_dense(&gp, &g.scatter_dense(CAP).unwrap()).unwrap(),
        )
        .unwrap()
        .full(CAP)
        .unwrap();
        let want = start.full(CAP).unwrap().sub(&pg.scaled(alpha)).unwrap();
        let got = w.full(CAP).unwrap();
        assert!(got.sub(&want).unwrap().frobenius_norm() <= 1e-12 * want.frobenius_norm());
    }

    #[test]
    fn iterates_stay_on_manifold_and_trace_is_consistent() {
        let s = shape(&[8, 8, 8]);
        let truth = random_tt(&s, &ranks(&[2, 2]), 11, CAP).unwrap();
        let omega = sample_uniform(300, 12, &truth).unwrap();
        let start = random_tt(&s, &ranks(&[2, 2]), 13, CAP).unwrap();
        let mut cfg = CompletionConfig::new(ranks(&[2, 2]));
        cfg.max_iters = 5;
        cfg.rel_change_tol = 1e-12;
        let out = rgrad_complete(&omega, &cfg, &start, Some(&truth)).unwrap();
        assert!(out.trace.records.len() <= cfg.max_iters + 1);
        assert_eq!(out.trace.retraction, Retraction::DenseTrim);
        let f_best = objective_f(&out.tensor, &omega).unwrap();
        let min_f = out
            .trace
            .records
            .iter()
            .map(|r| r.f)
            .fold(f64::INFINITY, f64::min);
        assert!((f_best - min_f).abs() <= 1e-12 * min_f.max(1e-300));
        let dense = out.tensor.full(CAP).unwrap();
        for i in 1..3 {
            let sv = crate::tt::dense_separation_singular_values(&dense, i).unwrap();
            assert_eq!(sv.iter().filter(|&&v| v > 1e-10 * sv[0]).count(), 2);
        }
        let mut buf = Vec::new();
        out.trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iter,f,grad_norm,rel_change,trim_count,wall_ms,rel_err\n"));
        assert_eq!(text.lines().count(), out.trace.records.len() + 1);
    }

    #[test]
    fn config_validation() {
        let mut cfg = CompletionConfig::new(ranks(&[2, 2]));
        assert!(cfg.validate().is_ok());
        cfg.step_constant = 0.0;
        assert!(cfg.validate().is_err());
        let cfg = CompletionConfig::new(ranks(&[2, 2]));
        assert!(cfg.trim_enabled(1000));
        assert!(!cfg.trim_enabled(TRIM_AUTO_MAX_ENTRIES + 1));
        let s = shape(&[3, 3, 3]);
        let t = random_tt(&s, &ranks(&[1, 1]), 1, CAP).unwrap();
        let omega = sample_uniform(10, 1, &t).unwrap();
        assert!(matches!(
            rgrad_complete(&omega, &cfg, &t, None),
            Err(TtError::Config(_))
        ));
    }
}

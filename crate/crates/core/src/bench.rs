//! Experiment harness: phase-transition grids, rank sweeps, convergence
//! traces and runtime scaling, all driven by seeded random instances.
//!
//! Each cell `(d, ranks, n, trial)` gets a seed from [`derive_seed`], so cells
//! are independent tasks. They run on a rayon pool capped at `jobs` threads
//! and results come back in cell order regardless of completion order.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::completion::{
    csv_err, rgrad_complete, CompletionConfig, CompletionOutput, CompletionTrace,
};
use crate::diagnostics::relative_error;
use crate::error::{Result, TtError};
use crate::init::{initialize, naive_init, InitConfig};
use crate::observations::sample_uniform;
use crate::rng::derive_seed;
use crate::tensor::{Shape, DEFAULT_DENSE_CAP};
use crate::tt::{
    random_tt, random_tt_gaussian_cores, save_container, tt_rounding, RankVector, TtTensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    PhaseGrid,
    RankSweep,
    Convergence,
    Runtime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    #[default]
    Spectral,
    Naive,
    /// Warm start: the truth plus a random rank-r perturbation of Frobenius
    /// norm `given_radius * sigma_min`, rounded back to rank r.
    Given,
}

/// Experiment description. Every field has a default, so a JSON config only
/// needs the fields it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Fixed shape; overrides `dims`/`order` when present.
    pub shape: Option<Vec<usize>>,
    /// Side lengths of cubic tensors of order `order`.
    pub dims: Vec<usize>,
    pub order: usize,
    /// Fixed ranks; overrides `rank_list` when present.
    pub ranks: Option<Vec<usize>>,
    pub rank_list: Vec<Vec<usize>>,
    /// Fixed sample count; overrides `ns` when present.
    pub n: Option<usize>,
    pub ns: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub init: InitMode,
    pub given_radius: f64,
    pub step_constant: f64,
    pub nu: Option<f64>,
    pub mu: Option<f64>,
    pub trim: Option<bool>,
    pub max_iters: usize,
    pub rel_change_tol: f64,
    pub success_tol: f64,
    /// Worker threads; all available cores when absent.
    pub jobs: Option<usize>,
    pub dense_cap: usize,
    pub out: Option<PathBuf>,
    /// Directory receiving the truth and estimate containers of every cell.
    pub artifacts: Option<PathBuf>,
}

/// Default stopping tolerance of the harness. With the default step the
/// error shrinks by roughly 12% per iteration, so a relative change of 1e-3
/// leaves errors near 1e-2, the success threshold itself.
pub const EXPERIMENT_REL_CHANGE_TOL: f64 = 1e-4;

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            shape: None,
            dims: vec![40],
            order: 3,
            ranks: None,
            rank_list: vec![vec![2, 2]],
            n: None,
            ns: vec![2000, 5000, 10000, 20000],
            trials: 10,
            seed: 0,
            init: InitMode::Spectral,
            given_radius: 0.1,
            step_constant: 0.12,
            nu: None,
            mu: None,
            trim: None,
            max_iters: 500,
            rel_change_tol: EXPERIMENT_REL_CHANGE_TOL,
            success_tol: 1e-2,
            jobs: None,
            dense_cap: DEFAULT_DENSE_CAP,
            out: None,
            artifacts: None,
        }
    }
}

/// One grid cell before it runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub shape: Shape,
    pub ranks: RankVector,
    pub n: usize,
    pub trial: usize,
    pub seed: u64,
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| TtError::Config(format!("experiment config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn shapes(&self) -> Result<Vec<Shape>> {
        match &self.shape {
            Some(s) => Ok(vec![Shape::new(s.clone())?]),
            None => self
                .dims
                .iter()
                .map(|&d| Shape::cubic(d, self.order))
                .collect(),
        }
    }

    pub fn rank_vectors(&self) -> Result<Vec<RankVector>> {
        match &self.ranks {
            Some(r) => Ok(vec![RankVector::new(r.clone())?]),
            None => self
                .rank_list
                .iter()
                .map(|r| RankVector::new(r.clone()))
                .collect(),
        }
    }

    pub fn sample_sizes(&self) -> Vec<usize> {
        self.n.map_or_else(|| self.ns.clone(), |n| vec![n])
    }

    pub fn validate(&self) -> Result<()> {
        let shapes = self.shapes()?;
        let ranks = self.rank_vectors()?;
        if shapes.is_empty() || ranks.is_empty() || self.sample_sizes().is_empty() {
            return Err(TtError::Config(
                "shape, rank and sample-size ranges must be non-empty".into(),
            ));
        }
        if self.trials == 0 {
            return Err(TtError::Config("trials must be at least 1".into()));
        }
        if self.jobs == Some(0) {
            return Err(TtError::Config("jobs must be at least 1".into()));
        }
        if !(self.given_radius >= 0.0) {
            return Err(TtError::Config("given_radius must be non-negative".into()));
        }
        for s in &shapes {
            for r in &ranks {
                r.check_feasible(s)?;
            }
        }
        self.completion_config(ranks[0].clone()).validate()
    }

    pub fn completion_config(&self, ranks: RankVector) -> CompletionConfig {
        CompletionConfig {
            ranks,
            step_constant: self.step_constant,
            nu: self.nu,
            trim: self.trim,
            max_iters: self.max_iters,
            rel_change_tol: self.rel_change_tol,
            success_tol: self.success_tol,
            seed: self.seed,
            parallel_gradient: false,
            dense_cap: self.dense_cap,
        }
    }

    /// Cells in output order: shape, then ranks, then n, then trial.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        self.validate()?;
        let ranks = self.rank_vectors()?;
        let sweep_ranks = ranks.len() > 1;
        let mut cells = Vec::new();
        for shape in self.shapes()? {
            for r in &ranks {
                for n in self.sample_sizes() {
                    for trial in 0..self.trials {
                        let mut coords = vec![shape.dim(0) as u64, n as u64, trial as u64];
                        if sweep_ranks {
                            coords.extend(r.as_slice().iter().map(|&v| v as u64));
                        }
                        cells.push(Cell {
                            shape: shape.clone(),
                            ranks: r.clone(),
                            n,
                            trial,
                            seed: derive_seed(self.seed, &coords),
                        });
                    }
                }
            }
        }
        Ok(cells)
    }
}

/// Outcome of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub d: usize,
    pub ranks: String,
    pub n: usize,
    pub trial: usize,
    pub seed: u64,
    pub iters: usize,
    pub rel_err: f64,
    pub success: bool,
    pub wall_ms: f64,
    pub init_rel_err: f64,
}

/// A random instance and its completion.
#[derive(Debug, Clone)]
pub struct Instance {
    pub truth: TtTensor,
    pub init: TtTensor,
    pub init_rel_err: f64,
    pub output: CompletionOutput,
    pub rel_err: f64,
    pub init_ms: f64,
}

/// Truth tensor of a cell: TT-SVD of a Gaussian tensor when it fits under
/// the cap, Gaussian cores otherwise.
pub fn cell_truth(cell: &Cell, cap: usize) -> Result<TtTensor> {
    random_tt(&cell.shape, &cell.ranks, derive_seed(cell.seed, &[0]), cap)
}

fn given_start(truth: &TtTensor, radius: f64, seed: u64) -> Result<TtTensor> {
    let noise = random_tt_gaussian_cores(truth.shape(), &truth.ranks(), seed)?;
    let sigma = truth.spectrum()?.sigma_min;
    let scale = radius * sigma / noise.frobenius_norm();
    tt_rounding(&truth.add(&noise.scale(scale))?, &truth.ranks())
}

/// Sample, initialize and complete one cell. With `track_error` every trace
/// row carries the relative error to the truth.
pub fn run_instance(spec: &ExperimentSpec, cell: &Cell, track_error: bool) -> Result<Instance> {
    let truth = cell_truth(cell, spec.dense_cap)?;
    let omega = sample_uniform(cell.n, derive_seed(cell.seed, &[1]), &truth)?;
    let tick = Instant::now();
    let init = match spec.init {
        InitMode::Spectral => {
            let cfg = InitConfig {
                nu: spec.nu,
                mu: spec.mu,
                seed: derive_seed(cell.seed, &[2]),
                ..InitConfig::default()
            };
            initialize(&omega, &cell.ranks, &cfg)?.tensor
        }
        InitMode::Naive => naive_init(&omega, &cell.ranks, spec.dense_cap)?,
        InitMode::Given => given_start(&truth, spec.given_radius, derive_seed(cell.seed, &[3]))?,
    };
    let init_ms = tick.elapsed().as_secs_f64() * 1e3;
    let init_rel_err = relative_error(&init, &truth)?;
    let cfg = spec.completion_config(cell.ranks.clone());
    let output = rgrad_complete(&omega, &cfg, &init, track_error.then_some(&truth))?;
    let rel_err = relative_error(&output.tensor, &truth)?;
    Ok(Instance {
        truth,
        init,
        init_rel_err,
        output,
        rel_err,
        init_ms,
    })
}

fn artifact_stem(cell: &Cell) -> String {
    format!(
        "d{}_r{}_n{}_t{}",
        cell.shape.dim(0),
        cell.ranks,
        cell.n,
        cell.trial
    )
}

/// Run one cell. Failures are logged and recorded as unsuccessful rows with
/// NaN errors; zero-sample cells report the zero estimate (`rel_err = 1`).
pub fn run_cell(spec: &ExperimentSpec, cell: &Cell) -> CellResult {
    let tick = Instant::now();
    let mut row = CellResult {
        d: cell.shape.dim(0),
        ranks: cell.ranks.to_string(),
        n: cell.n,
        trial: cell.trial,
        seed: cell.seed,
        iters: 0,
        rel_err: f64::NAN,
        success: false,
        wall_ms: 0.0,
        init_rel_err: f64::NAN,
    };
    if cell.n == 0 {
        row.rel_err = 1.0;
        row.init_rel_err = 1.0;
    } else {
        match run_instance(spec, cell, false) {
            Ok(inst) => {
                row.iters = inst.output.trace.iterations();
                row.rel_err = inst.rel_err;
                row.init_rel_err = inst.init_rel_err;
                row.success = inst.rel_err <= spec.success_tol;
                if let Some(dir) = &spec.artifacts {
                    let stem = artifact_stem(cell);
                    let saved = save_container(&inst.truth, dir.join(format!("{stem}_truth.ttc")))
                        .and_then(|_| {
                            save_container(&inst.output.tensor, dir.join(format!("{stem}_est.ttc")))
                        });
                    if let Err(e) = saved {
                        log::warn!("could not save containers for {stem}: {e}");
                    }
                }
            }
            Err(e) => log::warn!("cell {} failed: {e}", artifact_stem(cell)),
        }
    }
    row.wall_ms = tick.elapsed().as_secs_f64() * 1e3;
    row
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        b = b.num_threads(j);
    }
    b.build()
        .map_err(|e| TtError::Config(format!("thread pool: {e}")))
}

fn run_cells(spec: &ExperimentSpec) -> Result<Vec<CellResult>> {
    let cells = spec.cells()?;
    if let Some(dir) = &spec.artifacts {
        std::fs::create_dir_all(dir)?;
    }
    let pool = pool(spec.jobs)?;
    Ok(pool.install(|| cells.par_iter().map(|c| run_cell(spec, c)).collect()))
}

/// Success-rate grid over `(d, n)` at fixed ranks.
pub fn run_phase_grid(spec: &ExperimentSpec) -> Result<Vec<CellResult>> {
    if spec.rank_vectors()?.len() != 1 {
        return Err(TtError::Config(
            "a phase grid takes a single rank vector".into(),
        ));
    }
    run_cells(spec)
}

/// Success-rate curves over `(ranks, n)` at a fixed shape.
pub fn run_rank_sweep(spec: &ExperimentSpec) -> Result<Vec<CellResult>> {
    if spec.shapes()?.len() != 1 {
        return Err(TtError::Config("a rank sweep takes a single shape".into()));
    }
    run_cells(spec)
}

/// Per-iteration trace of a single instance (the first cell of the experiment),
/// with the relative error to the truth in every row.
pub fn run_convergence(spec: &ExperimentSpec) -> Result<CompletionTrace> {
    let cell = spec
        .cells()?
        .into_iter()
        .next()
        .ok_or_else(|| TtError::Config("empty experiment".into()))?;
    Ok(run_instance(spec, &cell, true)?.output.trace)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeResult {
    pub d: usize,
    pub ranks: String,
    pub n: usize,
    pub trial: usize,
    pub seed: u64,
    pub iters: usize,
    pub init_ms: f64,
    pub total_ms: f64,
    pub per_iter_ms: f64,
    pub rel_err: f64,
}

/// Wall-clock cost of initialization and iterations per cell. Trimming is
/// off unless the experiment turns it on, so the structured retraction is timed.
pub fn run_runtime(spec: &ExperimentSpec) -> Result<Vec<RuntimeResult>> {
    let mut spec = spec.clone();
    spec.trim = Some(spec.trim.unwrap_or(false));
    let cells = spec.cells()?;
    let pool = pool(spec.jobs)?;
    pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let tick = Instant::now();
                let inst = run_instance(&spec, cell, false)?;
                let total_ms = tick.elapsed().as_secs_f64() * 1e3;
                let recs = &inst.output.trace.records;
                let iters = inst.output.trace.iterations();
                let per_iter_ms = if iters == 0 {
                    0.0
                } else {
                    recs[1..].iter().map(|r| r.wall_ms).sum::<f64>() / iters as f64
                };
                Ok(RuntimeResult {
                    d: cell.shape.dim(0),
                    ranks: cell.ranks.to_string(),
                    n: cell.n,
                    trial: cell.trial,
                    seed: cell.seed,
                    iters,
                    init_ms: inst.init_ms,
                    total_ms,
                    per_iter_ms,
                    rel_err: inst.rel_err,
                })
            })
            .collect()
    })
}

/// Success statistics of the trials sharing `(d, ranks, n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub d: usize,
    pub ranks: String,
    pub n: usize,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub median_rel_err: f64,
}

/// Group consecutive rows with equal `(d, ranks, n)`, as produced by the
/// runners.
pub fn summarize(rows: &[CellResult]) -> Vec<CellSummary> {
    rows.chunk_by(|a, b| (a.d, &a.ranks, a.n) == (b.d, &b.ranks, b.n))
        .map(|group| {
            let successes = group.iter().filter(|r| r.success).count();
            let mut errs: Vec<f64> = group.iter().map(|r| r.rel_err).collect();
            errs.sort_by(f64::total_cmp);
            CellSummary {
                d: group[0].d,
                ranks: group[0].ranks.clone(),
                n: group[0].n,
                trials: group.len(),
                successes,
                success_rate: successes as f64 / group.len() as f64,
                median_rel_err: median_sorted(&errs),
            }
        })
        .collect()
}

/// Median of a sorted slice (mean of the middle pair for even lengths).
pub fn median_sorted(v: &[f64]) -> f64 {
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// Serialize rows with a header derived from the field names.
pub fn write_rows<T: Serialize>(rows: &[T], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Header-only output for an empty row set.
pub fn write_cells_csv(rows: &[CellResult], w: impl Write) -> Result<()> {
    if rows.is_empty() {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(CELL_HEADER).map_err(csv_err)?;
        out.flush()?;
        return Ok(());
    }
    write_rows(rows, w)
}

pub const CELL_HEADER: [&str; 10] = [
    "d",
    "ranks",
    "n",
    "trial",
    "seed",
    "iters",
    "rel_err",
    "success",
    "wall_ms",
    "init_rel_err",
];

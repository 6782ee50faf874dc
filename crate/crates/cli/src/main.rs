use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use tt_complete::bench::{
    run_convergence, run_phase_grid, run_rank_sweep, run_runtime, summarize, write_cells_csv,
    write_rows, CellResult, ExperimentSpec, InitMode,
};
use tt_complete::completion::rgrad_complete;
use tt_complete::diagnostics::{diagnose, relative_error, relative_error_dense};
use tt_complete::init::{initialize, naive_init, InitConfig};
use tt_complete::observations::{load_observations, sample_uniform, save_observations};
use tt_complete::rng::derive_seed;
use tt_complete::tt::{load_container, random_tt, save_container, tt_svd};
use tt_complete::{DenseTensor, TtTensor};

#[derive(Parser)]
#[command(
    name = "ttc",
    version,
    about = "Low-rank tensor-train completion toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a random TT instance and uniform samples of it.
    Gen {
        #[command(flatten)]
        common: Common,
        /// Truth container output.
        #[arg(long)]
        truth: PathBuf,
        /// Observation file output.
        #[arg(long)]
        obs: PathBuf,
    },
    /// TT-SVD of a fully listed tensor (observation format; unlisted entries are zero).
    Ttsvd {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
    /// Sequential second-order moment initialization from observations.
    Init {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        obs: PathBuf,
        /// JSON report output (stdout when absent).
        #[arg(long)]
        report: Option<PathBuf>,
        /// Use the one-shot TT-SVD of the rescaled observations instead.
        #[arg(long)]
        naive_init: bool,
    },
    /// Riemannian gradient descent from an initial TT (spectral init when absent).
    Complete {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        obs: PathBuf,
        #[arg(long)]
        init: Option<PathBuf>,
        /// Ground truth, adds a rel_err column to the trace.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Trace CSV output.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Print diagnostics of a TT container as JSON.
    Diag {
        #[arg(long)]
        tensor: PathBuf,
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, default_value_t = tt_complete::DEFAULT_DENSE_CAP)]
        dense_cap: usize,
    },
    /// Success-rate grid over (d, n).
    Phase {
        #[command(flatten)]
        common: Common,
    },
    /// Success-rate curves over (ranks, n) at a fixed shape.
    Ranksweep {
        #[command(flatten)]
        common: Common,
    },
    /// Per-iteration trace with relative errors for one instance.
    Convergence {
        #[command(flatten)]
        common: Common,
    },
    /// Initialization and per-iteration wall time per cell.
    Bench {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Spectral,
    Naive,
    Given,
}

/// Experiment configuration: a JSON file with every field optional, then
/// flag overrides.
#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    shape: Option<Vec<usize>>,
    /// Cubic side lengths for grids.
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    #[arg(long)]
    order: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    ranks: Option<Vec<usize>>,
    /// Rank vectors separated by ';', entries by ',' (e.g. "2,2;4,4").
    #[arg(long)]
    rank_list: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    ns: Option<Vec<usize>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    init_mode: Option<InitArg>,
    #[arg(long)]
    step_constant: Option<f64>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    trim: Option<bool>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    rel_change_tol: Option<f64>,
    #[arg(long)]
    success_tol: Option<f64>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    dense_cap: Option<usize>,
    /// Main output file (stdout for CSV output when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for per-cell truth and estimate containers.
    #[arg(long)]
    artifacts: Option<PathBuf>,
}

fn parse_rank_list(s: &str) -> Result<Vec<Vec<usize>>> {
    s.split(';')
        .map(|part| {
            part.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<usize>()
                        .with_context(|| format!("bad rank entry {v:?}"))
                })
                .collect()
        })
        .collect()
}

impl Common {
    fn spec(&self) -> Result<ExperimentSpec> {
        let mut s = match &self.config {
            Some(p) => {
                ExperimentSpec::load(p).with_context(|| format!("reading {}", p.display()))?
            }
            None => ExperimentSpec::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    s.$field = v.clone();
                }
            )*};
        }
        macro_rules! set_opt {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    s.$field = Some(v.clone());
                }
            )*};
        }
        set!(
            dims,
            order,
            ns,
            trials,
            seed,
            step_constant,
            max_iters,
            rel_change_tol,
            success_tol,
            dense_cap
        );
        set_opt!(shape, ranks, n, nu, mu, trim, jobs, out, artifacts);
        if let Some(r) = &self.rank_list {
            s.rank_list = parse_rank_list(r)?;
        }
        if let Some(m) = self.init_mode {
            s.init = match m {
                InitArg::Spectral => InitMode::Spectral,
                InitArg::Naive => InitMode::Naive,
                InitArg::Given => InitMode::Given,
            };
        }
        s.validate()?;
        Ok(s)
    }
}

fn first<T: Clone>(v: Vec<T>, what: &str) -> Result<T> {
    v.into_iter()
        .next()
        .with_context(|| format!("no {what} configured"))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn print_json(value: &impl serde::Serialize, path: Option<&Path>) -> Result<()> {
    let mut w = output(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

fn require_out(spec: &ExperimentSpec, what: &str) -> Result<PathBuf> {
    spec.out
        .clone()
        .with_context(|| format!("--out is required for the {what}"))
}

fn gen(spec: &ExperimentSpec, truth_path: &Path, obs_path: &Path) -> Result<()> {
    let shape = first(spec.shapes()?, "shape")?;
    let ranks = first(spec.rank_vectors()?, "ranks")?;
    let n = first(spec.sample_sizes(), "sample size")?;
    let truth = random_tt(&shape, &ranks, derive_seed(spec.seed, &[0]), spec.dense_cap)?;
    let omega = sample_uniform(n, derive_seed(spec.seed, &[1]), &truth)?;
    save_container(&truth, truth_path)?;
    save_observations(&omega, obs_path)?;
    eprintln!(
        "wrote {} (shape {:?}, ranks {ranks}) and {n} samples",
        truth_path.display(),
        shape.dims()
    );
    Ok(())
}

fn ttsvd(spec: &ExperimentSpec, input: &Path) -> Result<()> {
    let omega = load_observations(input)?;
    let ranks = first(spec.rank_vectors()?, "ranks")?;
    let mut dense = DenseTensor::zeros(omega.shape().clone(), spec.dense_cap)?;
    let dims = omega.shape().dims().to_vec();
    for (x, v) in omega.iter() {
        let flat = x.iter().zip(&dims).fold(0, |acc, (&xi, &di)| acc * di + xi);
        dense.data_mut()[flat] = v;
    }
    let t = tt_svd(&dense, &ranks)?;
    let out = require_out(spec, "TT container")?;
    save_container(&t, &out)?;
    let err = relative_error_dense(&t.full(spec.dense_cap)?, &dense)?;
    print_json(
        &json!({ "ranks": t.ranks().as_slice(), "relative_error": err }),
        None,
    )
}

fn init(spec: &ExperimentSpec, obs: &Path, report: Option<&Path>, naive: bool) -> Result<()> {
    let omega = load_observations(obs)?;
    let ranks = first(spec.rank_vectors()?, "ranks")?;
    let out = require_out(spec, "TT container")?;
    if naive {
        let t = naive_init(&omega, &ranks, spec.dense_cap)?;
        save_container(&t, &out)?;
        return print_json(
            &json!({ "method": "naive", "ranks": ranks.as_slice() }),
            report,
        );
    }
    let cfg = InitConfig {
        nu: spec.nu,
        mu: spec.mu,
        seed: spec.seed,
        ..InitConfig::default()
    };
    let res = initialize(&omega, &ranks, &cfg)?;
    save_container(&res.tensor, &out)?;
    print_json(&res.report, report)
}

fn complete(
    spec: &ExperimentSpec,
    obs: &Path,
    init: Option<&Path>,
    truth: Option<&Path>,
    trace: Option<&Path>,
) -> Result<()> {
    let omega = load_observations(obs)?;
    let ranks = first(spec.rank_vectors()?, "ranks")?;
    let out = require_out(spec, "TT container")?;
    let t0 = match init {
        Some(p) => load_container(p)?,
        None => {
            let cfg = InitConfig {
                nu: spec.nu,
                mu: spec.mu,
                seed: spec.seed,
                ..InitConfig::default()
            };
            initialize(&omega, &ranks, &cfg)?.tensor
        }
    };
    let truth: Option<TtTensor> = truth.map(load_container).transpose()?;
    let cfg = spec.completion_config(ranks);
    let res = rgrad_complete(&omega, &cfg, &t0, truth.as_ref())?;
    save_container(&res.tensor, &out)?;
    if let Some(p) = trace {
        res.trace.write_csv(BufWriter::new(File::create(p)?))?;
    }
    let rel_err = truth
        .as_ref()
        .map(|s| relative_error(&res.tensor, s))
        .transpose()?;
    print_json(
        &json!({
            "status": res.trace.status,
            "iterations": res.trace.iterations(),
            "best_iter": res.trace.best_iter,
            "retraction": res.trace.retraction,
            "nu": res.trace.nu,
            "final_objective": res.trace.records.last().map(|r| r.f),
            "relative_error": rel_err,
        }),
        None,
    )
}

fn report_cells(rows: &[CellResult], spec: &ExperimentSpec) -> Result<()> {
    write_cells_csv(rows, output(spec.out.as_deref())?)?;
    for s in summarize(rows) {
        eprintln!(
            "d={} ranks={} n={}: {}/{} successes, median rel_err {:.3e}",
            s.d, s.ranks, s.n, s.successes, s.trials, s.median_rel_err
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { common, truth, obs } => gen(&common.spec()?, &truth, &obs),
        Command::Ttsvd { common, input } => ttsvd(&common.spec()?, &input),
        Command::Init {
            common,
            obs,
            report,
            naive_init,
        } => init(&common.spec()?, &obs, report.as_deref(), naive_init),
        Command::Complete {
            common,
            obs,
            init,
            truth,
            trace,
        } => complete(
            &common.spec()?,
            &obs,
            init.as_deref(),
            truth.as_deref(),
            trace.as_deref(),
        ),
        Command::Diag {
            tensor,
            reference,
            dense_cap,
        } => {
            let t = load_container(&tensor)?;
            let r = reference.map(load_container).transpose()?;
            print_json(&diagnose(&t, r.as_ref(), dense_cap)?, None)
        }
        Command::Phase { common } => {
            let spec = common.spec()?;
            report_cells(&run_phase_grid(&spec)?, &spec)
        }
        Command::Ranksweep { common } => {
            let spec = common.spec()?;
            report_cells(&run_rank_sweep(&spec)?, &spec)
        }
        Command::Convergence { common } => {
            let spec = common.spec()?;
            let trace = run_convergence(&spec)?;
            trace.write_csv(output(spec.out.as_deref())?)?;
            Ok(())
        }
        Command::Bench { common } => {
            let spec = common.spec()?;
            write_rows(&run_runtime(&spec)?, output(spec.out.as_deref())?)?;
            Ok(())
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

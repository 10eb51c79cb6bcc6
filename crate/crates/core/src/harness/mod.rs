//! Sweep orchestration, target-domain evaluation and CSV output.

mod config;

use std::io::Write;
use std::path::Path;

use rand::RngCore;
use rayon::prelude::*;

pub use config::{Algorithm, EnvSpec, ReferenceKind, SweepConfig};

use crate::agents::{run_agent, Mode, PolicyUpdate, RunOutput, TrainedPolicy};
use crate::env::{rollout, Kernel, LinearMdp, TabularEnv};
use crate::error::{Error, Result};
use crate::oracle::{ave_subopt, oracle_optimal, RobustMode};
use crate::policy::{Policy, ReferencePolicy};
use crate::rng;

pub const CSV_HEADER: &str = "run_id,algorithm,env,mode,rho_or_sigma,eta,beta,seed,perturbation,metric,value";

/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "ROBUSTRL_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalStats {
    pub mean: f64,
    /// Standard error of the mean; zero for a single rollout.
    pub stderr: f64,
    pub n: usize,
}

/// Mean and standard error of the raw episode return under the target kernel.
pub fn evaluate_policy<E, P>(
    policy: &P,
    env: &E,
    n_rollouts: usize,
    rng: &mut dyn RngCore,
) -> Result<EvalStats>
where
    E: LinearMdp,
    P: Policy<E> + ?Sized,
{
    if n_rollouts == 0 {
        return Err(Error::invalid("n_rollouts", "must be >= 1"));
    }
    let returns: Vec<f64> = (0..n_rollouts)
        .map(|_| rollout(env, policy, Kernel::Target, rng).map(|t| t.total_reward()))
        .collect::<Result<_>>()?;
    let n = n_rollouts as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let stderr = if n_rollouts > 1 {
        let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(EvalStats {
        mean,
        stderr,
        n: n_rollouts,
    })
}

/// One metric of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub run_id: String,
    pub algorithm: String,
    pub env: String,
    pub mode: String,
    pub rho_or_sigma: f64,
    pub eta: f64,
    pub beta: f64,
    pub seed: u64,
    pub perturbation: f64,
    pub metric: String,
    pub value: f64,
}

impl ResultRow {
    fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            self.run_id,
            self.algorithm,
            self.env,
            self.mode,
            self.rho_or_sigma,
            self.eta,
            self.beta,
            self.seed,
            self.perturbation,
            self.metric,
            self.value
        )
    }
}

/// Sorts by `(algorithm, rho_or_sigma, perturbation, seed)` with the run id and
/// metric name as final tie-breaks.
pub fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by(|a, b| {
        a.algorithm
            .cmp(&b.algorithm)
            .then(a.rho_or_sigma.total_cmp(&b.rho_or_sigma))
            .then(a.perturbation.total_cmp(&b.perturbation))
            .then(a.seed.cmp(&b.seed))
            .then(a.run_id.cmp(&b.run_id))
            .then(a.metric.cmp(&b.metric))
    });
}

pub fn rows_to_csv(rows: &[ResultRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
    }
    out
}

pub fn write_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)
        .map_err(|e| Error::Io(format!("cannot write {}: {e}", path.display())))?;
    f.write_all(rows_to_csv(rows).as_bytes())?;
    Ok(())
}

/// One training run of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub run_id: String,
    pub algorithm: Algorithm,
    /// `ρ` or `σ`; zero where the algorithm has neither.
    pub param: f64,
    pub eta: f64,
    pub seed: u64,
}

impl Cell {
    fn mode_label(&self) -> &'static str {
        match self.algorithm {
            Algorithm::Agent(Mode::Drmdp) | Algorithm::Agent(Mode::DrLsviUcb) => "drmdp",
            Algorithm::Agent(Mode::Rrmdp) => "rrmdp",
            Algorithm::Agent(Mode::LsviUcb) => "nominal",
            Algorithm::Reference => "none",
        }
    }
}

/// Expands the config into its grid, in a fixed order.
pub fn grid(cfg: &SweepConfig) -> Vec<Cell> {
    let mut cells = Vec::new();
    for &algorithm in &cfg.algorithms {
        let params: Vec<f64> = match algorithm {
            Algorithm::Agent(Mode::Drmdp) | Algorithm::Agent(Mode::DrLsviUcb) => cfg.rhos.clone(),
            Algorithm::Agent(Mode::Rrmdp) => cfg.sigmas.clone(),
            _ => vec![0.0],
        };
        // η only matters for the softmax learners.
        let etas: Vec<f64> = match algorithm {
            Algorithm::Agent(Mode::Drmdp) | Algorithm::Agent(Mode::Rrmdp) => cfg.etas.clone(),
            _ => vec![cfg.etas[0]],
        };
        for &param in &params {
            for &eta in &etas {
                for &seed in &cfg.seeds {
                    cells.push(Cell {
                        run_id: format!("{}-p{}-e{}-s{}", algorithm.as_str(), param, eta, seed),
                        algorithm,
                        param,
                        eta,
                        seed,
                    });
                }
            }
        }
    }
    cells
}

/// Training stream for a seed. Every algorithm with the same seed starts from
/// the same stream, and it matches a standalone run with that seed.
pub fn train_stream(seed: u64) -> rand_chacha::ChaCha8Rng {
    rng::stream(seed, 0, rng::TAG_TRAIN)
}

/// Evaluation stream for `(seed, perturbation)`, shared across algorithms.
pub fn eval_stream(seed: u64, perturbation: f64) -> rand_chacha::ChaCha8Rng {
    rng::stream(seed, perturbation.to_bits(), rng::TAG_EVAL)
}

struct RowFactory<'a> {
    cell: &'a Cell,
    env: &'static str,
    beta: f64,
}

impl RowFactory<'_> {
    fn row(&self, perturbation: f64, metric: &str, value: f64) -> ResultRow {
        ResultRow {
            run_id: self.cell.run_id.clone(),
            algorithm: self.cell.algorithm.as_str().to_string(),
            env: self.env.to_string(),
            mode: self.cell.mode_label().to_string(),
            rho_or_sigma: self.cell.param,
            eta: self.cell.eta,
            beta: self.beta,
            seed: self.cell.seed,
            perturbation,
            metric: metric.to_string(),
            value,
        }
    }
}

/// Trains (unless the cell is the reference) and evaluates on each target.
fn train_and_eval<E: LinearMdp>(
    cfg: &SweepConfig,
    cell: &Cell,
    reference: &ReferencePolicy,
    targets: &[(f64, E)],
) -> Result<(Vec<ResultRow>, Option<RunOutput<E::State>>)> {
    let train_env = &targets[0].1;
    let (beta, output) = match cell.algorithm {
        Algorithm::Reference => (0.0, None),
        Algorithm::Agent(mode) => {
            let agent = cfg.agent_config(mode, cell.param, cell.eta, cell.seed);
            let spec = agent.spec(train_env)?;
            let out = run_agent(train_env, reference, &spec, &mut train_stream(cell.seed))?;
            (spec.beta, Some(out))
        }
    };
    let rows = RowFactory {
        cell,
        env: train_env.name(),
        beta,
    };
    let mut out = Vec::new();
    for (p, env) in targets {
        let mut stream = eval_stream(cell.seed, *p);
        let stats = match &output {
            Some(o) => evaluate_policy(&o.policy, env, cfg.eval_rollouts, &mut stream)?,
            None => evaluate_policy(reference, env, cfg.eval_rollouts, &mut stream)?,
        };
        out.push(rows.row(*p, "target_return", stats.mean));
        out.push(rows.row(*p, "target_return_se", stats.stderr));
    }
    if let Some(o) = &output {
        out.push(rows.row(0.0, "mean_bonus", o.log.mean_bonus_sum()));
    }
    Ok((out, output))
}

fn run_cell(cfg: &SweepConfig, cell: &Cell) -> Result<Vec<ResultRow>> {
    match &cfg.env {
        EnvSpec::Simulated { .. } => {
            let targets = cfg
                .perturbations
                .iter()
                .map(|&q| Ok((q, cfg.env.simulated(q)?)))
                .collect::<Result<Vec<_>>>()?;
            let train_env = &targets[0].1;
            let reference = cfg.reference.build(train_env.n_actions(), train_env.horizon())?;
            let (mut rows, output) = train_and_eval(cfg, cell, &reference, &targets)?;
            if cfg.ave_subopt {
                if let (Some(o), Algorithm::Agent(mode)) = (&output, cell.algorithm) {
                    if let Some(v) = subopt_metric(train_env, &reference, mode, cell, o)? {
                        let beta = o.log.spec.beta;
                        rows.push(
                            RowFactory {
                                cell,
                                env: train_env.name(),
                                beta,
                            }
                            .row(0.0, "ave_subopt", v),
                        );
                    }
                }
            }
            Ok(rows)
        }
        EnvSpec::PutOption { .. } => {
            let targets = cfg
                .perturbations
                .iter()
                .map(|&p| Ok((p, cfg.env.put_option(p)?)))
                .collect::<Result<Vec<_>>>()?;
            let train_env = &targets[0].1;
            let reference = cfg.reference.build(train_env.n_actions(), train_env.horizon())?;
            Ok(train_and_eval(cfg, cell, &reference, &targets)?.0)
        }
    }
}

/// Average suboptimality against the oracle of the run's own objective; only
/// defined for the softmax learners.
fn subopt_metric(
    env: &TabularEnv,
    reference: &ReferencePolicy,
    mode: Mode,
    cell: &Cell,
    output: &RunOutput<usize>,
) -> Result<Option<f64>> {
    let robust = match mode {
        Mode::Drmdp => RobustMode::Drmdp { rho: cell.param },
        Mode::Rrmdp => RobustMode::Rrmdp { sigma: cell.param },
        _ => return Ok(None),
    };
    debug_assert!(matches!(output.log.spec.update, PolicyUpdate::Softmax { .. }));
    let oracle = oracle_optimal(env.source(), robust, cell.eta, reference)?;
    ave_subopt(&output.log, &oracle, env, cell.eta, reference).map(Some)
}

fn worker_count(cfg: &SweepConfig) -> Result<usize> {
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        return match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::Config(format!("{WORKERS_ENV} must be a positive integer, got `{v}`"))),
        };
    }
    Ok(cfg.workers.unwrap_or_else(|| {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    }))
}

/// Runs every cell of the grid and returns the sorted rows. Writes the CSV
/// when the config names an output path.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let cells = grid(cfg);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count(cfg)?)
        .build()
        .map_err(|e| Error::Config(format!("cannot start workers: {e}")))?;
    let per_cell: Vec<Vec<ResultRow>> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                run_cell(cfg, cell).map_err(|e| Error::RunFailed {
                    run_id: cell.run_id.clone(),
                    source: Box::new(e),
                })
            })
            .collect::<Result<_>>()
    })?;
    let mut rows: Vec<ResultRow> = per_cell.into_iter().flatten().collect();
    sort_rows(&mut rows);
    if let Some(path) = &cfg.output {
        write_csv(&rows, path)?;
    }
    Ok(rows)
}

/// Target returns of a trained policy on every configured perturbation.
pub fn evaluate_on_targets(
    cfg: &SweepConfig,
    policy: &TrainedPolicy,
    seed: u64,
) -> Result<Vec<(f64, EvalStats)>> {
    cfg.perturbations
        .iter()
        .map(|&p| {
            let mut stream = eval_stream(seed, p);
            let stats = match &cfg.env {
                EnvSpec::Simulated { .. } => {
                    evaluate_policy(policy, &cfg.env.simulated(p)?, cfg.eval_rollouts, &mut stream)?
                }
                EnvSpec::PutOption { .. } => {
                    evaluate_policy(policy, &cfg.env.put_option(p)?, cfg.eval_rollouts, &mut stream)?
                }
            };
            Ok((p, stats))
        })
        .collect()
}

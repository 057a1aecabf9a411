//! CMA-ES over ROM parameters with a growing task curriculum.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cmaes::{cmaes_ask, cmaes_init_with, cmaes_tell, default_popsize, CmaState};
use crate::curriculum::{curriculum_expand, sample_cells, Cell, GridSpec, TaskGrid};
use crate::error::{Error, Result};
use crate::rollout::{episode_return, rollout, RolloutSetup};
use crate::rom::{BasisDescriptor, FeatureBasis, RomParams};
use crate::task::Task;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub sigma0: f64,
    /// Fraction of the active grid sampled per iteration.
    pub task_fraction: f64,
    pub expansion_period: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub popsize: Option<usize>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    /// Also evaluate the distribution mean each iteration (logged only).
    pub log_mean_return: bool,
    pub grid: GridSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            sigma0: 1e-3,
            task_fraction: 0.1,
            expansion_period: 30,
            popsize: None,
            seed: 0,
            workers: None,
            log_mean_return: true,
            grid: GridSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return Err(Error::config(
                "train.sigma0",
                format!("must be positive, got {}", self.sigma0),
            ));
        }
        if !(self.task_fraction > 0.0 && self.task_fraction <= 1.0) {
            return Err(Error::config("train.task_fraction", "must lie in (0, 1]"));
        }
        if self.expansion_period == 0 {
            return Err(Error::config("train.expansion_period", "must be at least 1"));
        }
        if matches!(self.popsize, Some(p) if p < 2) {
            return Err(Error::config("train.popsize", "must be at least 2"));
        }
        if self.workers == Some(0) {
            return Err(Error::config("train.workers", "must be at least 1"));
        }
        self.grid.validate().map_err(|e| match e {
            Error::InvalidConfig { field, message } => Error::InvalidConfig {
                field: format!("train.grid.{field}"),
                message,
            },
            other => other,
        })
    }
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of one rollout, independent of scheduling order.
pub fn rollout_seed(master: u64, iteration: usize, sample: usize, task: usize) -> u64 {
    let mut h = mix(master);
    for v in [iteration as u64, sample as u64, task as u64] {
        h = mix(h ^ v);
    }
    h
}

const TASK_STREAM: usize = usize::MAX;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub ret: f64,
    pub success: bool,
}

/// Scores one parameter vector on one task. Must be a pure function of its
/// arguments.
pub trait Evaluator: Sync {
    fn evaluate(&self, theta: &[f64], task: Task, seed: u64) -> Result<Evaluation>;
}

pub struct RolloutEvaluator {
    pub basis: FeatureBasis,
    pub setup: RolloutSetup,
}

impl Evaluator for RolloutEvaluator {
    fn evaluate(&self, theta: &[f64], task: Task, seed: u64) -> Result<Evaluation> {
        let params = RomParams::unflatten(self.basis.clone(), theta)?;
        let mut setup = self.setup.clone();
        setup.episode.seed = seed;
        let trace = rollout(&params, task, &setup);
        Ok(Evaluation {
            ret: episode_return(&trace),
            success: trace.is_success(&setup.episode),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iteration: usize,
    pub config_hash: String,
    pub basis: BasisDescriptor,
    pub cma: CmaState,
    pub grid: TaskGrid,
    pub best_theta: Vec<f64>,
    pub best_return: Option<f64>,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        c.cma.validate()?;
        c.grid.validate()?;
        FeatureBasis::from_descriptor(&c.basis)?;
        if c.best_theta.len() != c.cma.dim {
            return Err(Error::Parse("best_theta length does not match the optimizer".into()));
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// Current distribution mean as ROM parameters.
    pub fn mean_params(&self) -> Result<RomParams> {
        RomParams::unflatten(FeatureBasis::from_descriptor(&self.basis)?, &self.cma.mean)
    }

    pub fn best_params(&self) -> Result<RomParams> {
        RomParams::unflatten(FeatureBasis::from_descriptor(&self.basis)?, &self.best_theta)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub best_return: f64,
    pub mean_return: f64,
    pub grid_size: usize,
    pub sigma: f64,
    pub incumbent_return: Option<f64>,
}

/// Initial state before iteration 1.
pub fn initial_checkpoint(cfg: &TrainConfig, theta0: &RomParams, config_hash: &str) -> Result<Checkpoint> {
    cfg.validate()?;
    let flat = theta0.flatten();
    let popsize = cfg.popsize.unwrap_or_else(|| default_popsize(flat.len()));
    Ok(Checkpoint {
        iteration: 0,
        config_hash: config_hash.to_string(),
        basis: theta0.basis.descriptor(),
        cma: cmaes_init_with(&flat, cfg.sigma0, cfg.seed, popsize)?,
        grid: TaskGrid::new(cfg.grid.clone())?,
        best_theta: flat,
        best_return: None,
    })
}

fn worker_pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::config("train.workers", e.to_string()))
}

/// Advances `state` by one iteration. On error `state` is left untouched.
pub fn train_iteration<E: Evaluator>(
    cfg: &TrainConfig,
    state: &Checkpoint,
    evaluator: &E,
    pool: &rayon::ThreadPool,
) -> Result<(Checkpoint, IterationStats)> {
    let mut next = state.clone();
    let k = state.iteration + 1;
    if k.is_multiple_of(cfg.expansion_period) {
        next.grid = curriculum_expand(&next.grid);
    }
    let mut task_rng = ChaCha8Rng::seed_from_u64(rollout_seed(cfg.seed, k, TASK_STREAM, TASK_STREAM));
    let cells: Vec<Cell> = sample_cells(&next.grid, cfg.task_fraction, &mut task_rng);
    let tasks: Vec<Task> = cells.iter().map(|&c| next.grid.task(c)).collect();
    let samples = cmaes_ask(&mut next.cma)?;
    let popsize = samples.len();

    let mut jobs: Vec<(usize, usize)> = Vec::with_capacity((popsize + 1) * tasks.len());
    for i in 0..popsize {
        for j in 0..tasks.len() {
            jobs.push((i, j));
        }
    }
    if cfg.log_mean_return {
        for j in 0..tasks.len() {
            jobs.push((popsize, j));
        }
    }
    let mean_theta = next.cma.mean.clone();
    let results: Vec<Result<Evaluation>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(i, j)| {
                let theta = if i < popsize { &samples[i] } else { &mean_theta };
                evaluator
                    .evaluate(theta, tasks[j], rollout_seed(cfg.seed, k, i, j))
                    .map_err(|e| Error::Evaluation {
                        sample: i,
                        task: j,
                        message: e.to_string(),
                    })
            })
            .collect()
    });

    let nt = tasks.len() as f64;
    let mut fitness = vec![0.0; popsize];
    let mut task_success = vec![false; tasks.len()];
    let mut incumbent = 0.0;
    for (&(i, j), r) in jobs.iter().zip(results) {
        let r = r?;
        if !r.ret.is_finite() {
            return Err(Error::NonFiniteFitness { index: i, value: r.ret });
        }
        if i < popsize {
            fitness[i] += r.ret / nt;
            task_success[j] |= r.success;
        } else {
            incumbent += r.ret / nt;
        }
    }
    for (c, s) in cells.iter().zip(&task_success) {
        next.grid.record(*c, *s);
    }

    let mut best = 0;
    for i in 1..popsize {
        if fitness[i] > fitness[best] {
            best = i;
        }
    }
    if next.best_return.is_none_or(|b| fitness[best] > b) {
        next.best_return = Some(fitness[best]);
        next.best_theta = samples[best].clone();
    }
    cmaes_tell(&mut next.cma, &samples, &fitness, true)?;
    next.iteration = k;

    let stats = IterationStats {
        iteration: k,
        best_return: fitness[best],
        mean_return: fitness.iter().sum::<f64>() / popsize as f64,
        grid_size: next.grid.len(),
        sigma: next.cma.sigma,
        incumbent_return: cfg.log_mean_return.then_some(incumbent),
    };
    Ok((next, stats))
}

/// Runs iterations until `cfg.iterations`, calling `on_iteration` after each.
pub fn run_training<E, F>(
    cfg: &TrainConfig,
    start: Checkpoint,
    evaluator: &E,
    mut on_iteration: F,
) -> Result<Checkpoint>
where
    E: Evaluator,
    F: FnMut(&Checkpoint, &IterationStats) -> Result<()>,
{
    cfg.validate()?;
    let pool = worker_pool(cfg.workers)?;
    let mut state = start;
    while state.iteration < cfg.iterations {
        let (next, stats) = train_iteration(cfg, &state, evaluator, &pool)?;
        on_iteration(&next, &stats)?;
        state = next;
    }
    Ok(state)
}

pub const HISTORY_HEADER: [&str; 6] = [
    "iteration",
    "best_return",
    "mean_return",
    "grid_size",
    "sigma",
    "incumbent_return",
];

pub fn checkpoint_path(dir: &Path, iteration: usize) -> PathBuf {
    dir.join("checkpoints").join(format!("iter_{iteration:04}.ckpt"))
}

fn history_record(s: &IterationStats) -> Vec<String> {
    vec![
        s.iteration.to_string(),
        s.best_return.to_string(),
        s.mean_return.to_string(),
        s.grid_size.to_string(),
        s.sigma.to_string(),
        s.incumbent_return.map(|v| v.to_string()).unwrap_or_default(),
    ]
}

/// Rewrites `history.csv` keeping rows up to `iteration`.
fn reset_history(path: &Path, iteration: usize) -> Result<()> {
    let mut kept: Vec<csv::StringRecord> = Vec::new();
    if iteration > 0 && path.exists() {
        let mut rd = csv::Reader::from_path(path)?;
        for rec in rd.records() {
            let rec = rec?;
            let it: usize = rec.get(0).and_then(|v| v.parse().ok()).unwrap_or(usize::MAX);
            if it <= iteration {
                kept.push(rec);
            }
        }
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(HISTORY_HEADER)?;
    for rec in &kept {
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Training with on-disk checkpoints and history under `dir`.
pub fn train_to_dir<E: Evaluator>(
    cfg: &TrainConfig,
    start: Checkpoint,
    evaluator: &E,
    dir: &Path,
) -> Result<Checkpoint> {
    fs::create_dir_all(dir.join("checkpoints"))?;
    let history = dir.join("history.csv");
    reset_history(&history, start.iteration)?;
    run_training(cfg, start, evaluator, |ckpt, stats| {
        ckpt.save(&checkpoint_path(dir, ckpt.iteration))?;
        let file = fs::OpenOptions::new().append(true).open(&history)?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(history_record(stats))?;
        w.flush()?;
        Ok(())
    })
}

//! Command implementations behind the `romshaper` binary.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use romshaper::config::RunConfig;
use romshaper::export::{write_landscape_csv, write_trace_csv};
use romshaper::planner::RetargetOverrides;
use romshaper::rollout::{cost_landscape, episode_return, extract_periodic_gait, rollout, Outcome, RolloutTrace};
use romshaper::rom::{build_feature_basis, lip_init_with, RomParams};
use romshaper::train::{initial_checkpoint, train_to_dir, Checkpoint, RolloutEvaluator};
use romshaper::{Error, Task};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_MISMATCH: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

pub const MAX_PITCH_OVERRIDE: f64 = 0.5;

#[derive(Debug, Parser)]
#[command(
    name = "romshaper",
    version,
    about = "Learn reduced-order CoM models for a planar biped"
)]
pub struct Cli {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed for training, episode seed for rollouts.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parallel rollouts.
    #[arg(long, global = true, env = "ROMSHAPER_WORKERS")]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize ROM parameters with CMA-ES and the task curriculum.
    Train {
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override the iteration budget.
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Run one episode and write its trace.
    Rollout {
        #[command(flatten)]
        episode: EpisodeArgs,
    },
    /// Compare the torque cost of two models over a task grid.
    Landscape {
        /// Model A: `lip` or `ckpt:<path>`.
        #[arg(long)]
        a: String,
        /// Model B: `lip` or `ckpt:<path>`.
        #[arg(long)]
        b: String,
        /// Stride range `low:high:step` (m).
        #[arg(long, allow_hyphen_values = true)]
        strides: Option<String>,
        /// Incline range `low:high:step` (rad).
        #[arg(long, allow_hyphen_values = true)]
        inclines: Option<String>,
        /// Landscape CSV path.
        #[arg(short = 'o', long = "output")]
        output: Option<PathBuf>,
    },
    /// Roll out a learned model with a changed torso-pitch target.
    Retarget {
        #[command(flatten)]
        episode: EpisodeArgs,
        /// Desired torso pitch (rad).
        #[arg(long, allow_hyphen_values = true)]
        pitch: f64,
    },
}

#[derive(Debug, Args)]
pub struct EpisodeArgs {
    /// `lip` or `ckpt:<path>`.
    #[arg(long, default_value = "lip")]
    pub params: String,
    #[arg(long, allow_hyphen_values = true)]
    pub stride: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub incline: f64,
    /// Trace CSV path.
    #[arg(short = 'o', long = "output")]
    pub output: Option<PathBuf>,
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidConfig { .. } | Error::Parse(_) | Error::Io(_) | Error::Csv(_) => EXIT_USAGE,
            Error::ConfigMismatch { .. } | Error::ParameterLength { .. } | Error::UnsupportedDimension(_) => {
                EXIT_MISMATCH
            }
            _ => EXIT_NUMERICAL,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Train { resume, iterations } => cmd_train(cli, cfg, resume.as_deref(), *iterations),
        Command::Rollout { episode } => cmd_rollout(cli, &cfg, episode, None),
        Command::Landscape {
            a,
            b,
            strides,
            inclines,
            output,
        } => cmd_landscape(
            cli,
            &cfg,
            a,
            b,
            strides.as_deref(),
            inclines.as_deref(),
            output.as_deref(),
        ),
        Command::Retarget { episode, pitch } => {
            if !(pitch.abs() <= MAX_PITCH_OVERRIDE) {
                return Err(CliError::usage(format!(
                    "--pitch {pitch} is out of range; expected |pitch| <= {MAX_PITCH_OVERRIDE} rad"
                )));
            }
            let overrides = RetargetOverrides {
                torso_pitch: Some(*pitch),
                ..RetargetOverrides::default()
            };
            cmd_rollout(cli, &cfg, episode, Some(overrides))
        }
    }
}

fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(|d| CliError::usage(format!("{}: {d}", path.display())))?,
        None => RunConfig::default(),
    };
    if let Some(w) = cli.workers {
        cfg.train.workers = Some(w);
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.to_string_lossy().into_owned();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn lip_params(cfg: &RunConfig) -> RomParams {
    lip_init_with(build_feature_basis(2).expect("planar basis"), cfg.model.gravity)
}

/// Resolves a `lip` / `ckpt:<path>` parameter source.
pub fn load_params(source: &str, cfg: &RunConfig) -> CliResult<RomParams> {
    if source == "lip" {
        return Ok(lip_params(cfg));
    }
    let Some(path) = source.strip_prefix("ckpt:") else {
        return Err(CliError::usage(format!(
            "unknown parameter source {source:?}; expected `lip` or `ckpt:<path>`"
        )));
    };
    let ckpt = Checkpoint::load(Path::new(path))
        .map_err(|e| CliError::usage(format!("cannot read checkpoint {path}: {e}")))?;
    Ok(ckpt.mean_params()?)
}

fn parse_range(spec: &str, what: &str) -> CliResult<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let nums: Option<Vec<f64>> = parts.iter().map(|p| p.trim().parse().ok()).collect();
    match nums.as_deref() {
        Some(&[lo, hi, step]) if step > 0.0 && hi >= lo => {
            let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
            Ok((0..n).map(|i| lo + i as f64 * step).collect())
        }
        Some(&[v]) => Ok(vec![v]),
        _ => Err(CliError::usage(format!(
            "bad {what} range {spec:?}; expected `low:high:step` with step > 0"
        ))),
    }
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    PathBuf::from(&cfg.output.dir)
}

fn cmd_train(cli: &Cli, mut cfg: RunConfig, resume: Option<&Path>, iterations: Option<usize>) -> CliResult<()> {
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    if let Some(n) = iterations {
        cfg.train.iterations = n;
    }
    let hash = cfg.hash();
    let theta0 = lip_params(&cfg);
    let start = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)
                .map_err(|e| CliError::usage(format!("cannot read checkpoint {}: {e}", path.display())))?;
            if ckpt.config_hash != hash {
                return Err(Error::ConfigMismatch {
                    expected: hash,
                    found: ckpt.config_hash,
                }
                .into());
            }
            if ckpt.cma.dim != theta0.num_params() {
                return Err(Error::ParameterLength {
                    got: ckpt.cma.dim,
                    expected: theta0.num_params(),
                }
                .into());
            }
            ckpt
        }
        None => initial_checkpoint(&cfg.train, &theta0, &hash)?,
    };
    let dir = out_dir(&cfg);
    fs::create_dir_all(&dir).map_err(Error::from)?;
    fs::write(dir.join("config.toml"), cfg.to_toml()?).map_err(Error::from)?;
    let evaluator = RolloutEvaluator {
        basis: theta0.basis.clone(),
        setup: cfg.rollout_setup(),
    };
    println!(
        "training from iteration {} to {} in {}",
        start.iteration + 1,
        cfg.train.iterations,
        dir.display()
    );
    let last = train_to_dir(&cfg.train, start, &evaluator, &dir)?;
    println!(
        "done: iteration {}, best return {}, sigma {:.3e}, {} active tasks",
        last.iteration,
        last.best_return
            .map(|r| format!("{r:.4}"))
            .unwrap_or_else(|| "n/a".into()),
        last.cma.sigma,
        last.grid.len()
    );
    Ok(())
}

fn print_trace_summary(trace: &RolloutTrace, cfg: &RunConfig) {
    match &trace.outcome {
        Outcome::Completed => println!("outcome: completed ({} ticks)", trace.ticks.len()),
        Outcome::Fell { t, reason } => println!("outcome: fell at t = {t:.3} s ({reason})"),
    }
    println!("return R: {:.6}", episode_return(trace));
    println!("accumulated h: {:.6e}", trace.total_h());
    println!("mean task term: {:.4}", trace.mean_task_term());
    if !trace.ticks.is_empty() {
        let pitch = trace.ticks.iter().map(|t| t.state.q[2]).sum::<f64>() / trace.ticks.len() as f64;
        println!("mean torso pitch: {pitch:.4} rad");
    }
    match extract_periodic_gait(trace, &cfg.gait) {
        Some(g) => println!(
            "periodic gait: stride {:.4} m, speed {:.4} m/s, cost per footstep {:.6e}",
            g.mean_stride, g.mean_speed, g.cost
        ),
        None => println!("periodic gait: none"),
    }
}

fn cmd_rollout(cli: &Cli, cfg: &RunConfig, args: &EpisodeArgs, overrides: Option<RetargetOverrides>) -> CliResult<()> {
    let params = load_params(&args.params, cfg)?;
    let mut setup = cfg.rollout_setup();
    if let Some(seed) = cli.seed {
        setup.episode.seed = seed;
    }
    setup.overrides = overrides;
    let trace = rollout(&params, Task::new(args.stride, args.incline), &setup);
    print_trace_summary(&trace, cfg);
    if let Some(path) = &args.output {
        let f = File::create(path).map_err(Error::from)?;
        write_trace_csv(BufWriter::new(f), &trace)?;
    }
    Ok(())
}

fn cmd_landscape(
    cli: &Cli,
    cfg: &RunConfig,
    a: &str,
    b: &str,
    strides: Option<&str>,
    inclines: Option<&str>,
    output: Option<&Path>,
) -> CliResult<()> {
    let pa = load_params(a, cfg)?;
    let pb = load_params(b, cfg)?;
    let g = &cfg.train.grid;
    let default_strides = format!("{}:{}:{}", g.stride_bounds[0], g.stride_bounds[1], g.stride_step);
    let default_inclines = format!("{}:{}:{}", g.incline_bounds[0], g.incline_bounds[1], g.incline_step);
    let s = parse_range(strides.unwrap_or(&default_strides), "stride")?;
    let i = parse_range(inclines.unwrap_or(&default_inclines), "incline")?;
    let tasks: Vec<Task> = s
        .iter()
        .flat_map(|&sv| i.iter().map(move |&iv| Task::new(sv, iv)))
        .collect();
    let mut setup = cfg.rollout_setup();
    if let Some(seed) = cli.seed {
        setup.episode.seed = seed;
    }
    let pool = rayon_pool(cfg.train.workers)?;
    let grid = pool.install(|| cost_landscape(&pa, &pb, &tasks, &setup, &cfg.gait));
    let path = match output {
        Some(p) => p.to_path_buf(),
        None => {
            let dir = out_dir(cfg);
            fs::create_dir_all(&dir).map_err(Error::from)?;
            dir.join("landscape.csv")
        }
    };
    let f = File::create(&path).map_err(Error::from)?;
    write_landscape_csv(BufWriter::new(f), &grid)?;
    let sum = grid.summary();
    println!("cells: {}", grid.cells.len());
    match sum.mean_ratio {
        Some(r) => println!("mean cost ratio (A/B) over shared cells: {r:.4}"),
        None => println!("mean cost ratio: n/a (no shared cells)"),
    }
    println!("region A: {}, region B: {}", sum.region_a, sum.region_b);
    println!("gained by A: {}, lost by A: {}", sum.gained, sum.lost);
    match sum.region_change {
        Some(c) => println!("region size change: {:+.1}%", 100.0 * c),
        None => println!("region size change: n/a"),
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn rayon_pool(workers: Option<usize>) -> CliResult<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        b = b.num_threads(n);
    }
    b.build()
        .map_err(|e| CliError::usage(format!("cannot start worker pool: {e}")))
}

//! Episode rollouts with the MPC in the loop, rewards and returns.

mod controller;
mod gait;
mod landscape;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::biped::{
    fsm_state, impact_map, integrate_step, is_fallen, BipedModel, ContactMode, FsmMode, FsmSchedule, FullState, Leg,
    TorqueCommand,
};
use crate::error::{Error, Result};
use crate::planner::RetargetOverrides;
use crate::rom::RomParams;
use crate::task::Task;

pub use controller::{ControllerConfig, MpcController, OutputGains};
pub use gait::{episode_cost, extract_periodic_gait, GaitMetrics, PeriodicityCriteria};
pub use landscape::{cost_landscape, gait_cost, CellLabel, LandscapeCell, LandscapeGrid, LandscapeSummary};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardWeights {
    /// Exponent weight on the tick's torque cost.
    pub w: f64,
    /// Diagonal of `W` over (stride error, speed error).
    pub stride: f64,
    pub speed: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        // w normalizes a tick of single-support weight bearing to 1:
        // 1 / (0.05 s · ((m_t + m_f) g)²).
        let weight: f64 = 10.5 * 9.81;
        Self {
            w: 1.0 / (0.05 * weight * weight),
            stride: 25.0,
            speed: 25.0 * 0.35 * 0.35,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.w > 0.0 && self.w.is_finite()) {
            return Err(Error::config("reward.w", "must be positive"));
        }
        if !(self.stride >= 0.0 && self.speed >= 0.0 && self.stride.is_finite() && self.speed.is_finite()) {
            return Err(Error::config("reward.stride", "W entries must be non-negative"));
        }
        Ok(())
    }

    /// `exp(−‖γ − γ_fb‖_W)` where `γ` holds (stride, speed).
    pub fn task_term(&self, commanded: [f64; 2], achieved: [f64; 2]) -> f64 {
        let es = achieved[0] - commanded[0];
        let ev = achieved[1] - commanded[1];
        (-(self.stride * es * es + self.speed * ev * ev).sqrt()).exp()
    }
}

/// `exp(−w h) + ½ exp(−‖γ − γ_fb‖_W)` with `γ` = (stride, speed).
pub fn reward(h: f64, commanded: [f64; 2], achieved: [f64; 2], wts: &RewardWeights) -> f64 {
    (-wts.w * h).exp() + 0.5 * wts.task_term(commanded, achieved)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeConfig {
    /// Planner ticks per episode.
    pub horizon: usize,
    pub planner_rate: f64,
    pub sim_rate: f64,
    pub settle_time: f64,
    pub initial_com_height: f64,
    pub initial_half_spread: f64,
    /// Standard deviation of the optional initial-velocity perturbation.
    pub initial_velocity_noise: f64,
    pub seed: u64,
    pub single_support: f64,
    pub double_support: f64,
    pub success_task_term: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            horizon: 100,
            planner_rate: 20.0,
            sim_rate: 1000.0,
            settle_time: 0.1,
            initial_com_height: 0.9,
            initial_half_spread: 0.05,
            initial_velocity_noise: 0.0,
            seed: 0,
            single_support: 0.35,
            double_support: 0.0,
            success_task_term: 0.25,
        }
    }
}

impl EpisodeConfig {
    pub fn substeps(&self) -> usize {
        (self.sim_rate / self.planner_rate).round() as usize
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sim_rate
    }

    pub fn tick_duration(&self) -> f64 {
        1.0 / self.planner_rate
    }

    pub fn schedule(&self) -> FsmSchedule {
        FsmSchedule {
            single_support: self.single_support,
            double_support: self.double_support,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::config("episode.horizon", "must be at least 1"));
        }
        if !(self.planner_rate > 0.0 && self.sim_rate > 0.0) {
            return Err(Error::config("episode.sim_rate", "rates must be positive"));
        }
        let ratio = self.sim_rate / self.planner_rate;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
            return Err(Error::config(
                "episode.sim_rate",
                "must be an integer multiple of planner_rate",
            ));
        }
        if !(self.settle_time >= 0.0) {
            return Err(Error::config("episode.settle_time", "must be non-negative"));
        }
        if !(self.single_support > 0.0) {
            return Err(Error::config("episode.single_support", "must be positive"));
        }
        if self.double_support != 0.0 {
            return Err(Error::config(
                "episode.double_support",
                "rollouts support instantaneous touchdown only; set to 0",
            ));
        }
        let steps = self.single_support * self.planner_rate;
        if (steps - steps.round()).abs() > 1e-9 {
            return Err(Error::config(
                "episode.single_support",
                "must be a whole number of planner ticks",
            ));
        }
        if !(self.initial_com_height > 0.5 && self.initial_com_height < 1.3) {
            return Err(Error::config("episode.initial_com_height", "must be in (0.5, 1.3)"));
        }
        if !(self.initial_half_spread >= 0.0 && self.initial_half_spread < 0.4) {
            return Err(Error::config("episode.initial_half_spread", "must be in [0, 0.4)"));
        }
        if !(self.initial_velocity_noise >= 0.0 && self.initial_velocity_noise.is_finite()) {
            return Err(Error::config("episode.initial_velocity_noise", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TickRecord {
    pub tick: usize,
    /// Walking time at the start of the tick.
    pub t: f64,
    pub state: FullState,
    /// Command applied on the tick's first substep.
    pub u: TorqueCommand,
    /// World-frame stance contact force at the tick's first substep.
    pub force: [f64; 2],
    pub mode: FsmMode,
    pub step_index: usize,
    pub achieved: [f64; 2],
    pub h: f64,
    pub reward: f64,
    pub task_term: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Outcome {
    Completed,
    Fell { t: f64, reason: String },
}

/// Summary of one completed single-support phase.
#[derive(Clone, Debug, PartialEq)]
pub struct FootstepSummary {
    pub step_index: usize,
    pub stance: Leg,
    pub start_time: f64,
    pub duration: f64,
    /// Along-ground displacement of the next stance foot.
    pub stride: f64,
    pub mean_height: f64,
    pub mean_pitch: f64,
    /// Σ uᵀu over the phase's simulation steps.
    pub torque_sq: f64,
    pub sim_steps: usize,
}

impl FootstepSummary {
    pub fn speed(&self) -> f64 {
        self.stride / self.duration
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutTrace {
    pub task: Task,
    pub ticks: Vec<TickRecord>,
    pub footsteps: Vec<FootstepSummary>,
    pub outcome: Outcome,
}

impl RolloutTrace {
    pub fn completed(&self) -> bool {
        self.outcome == Outcome::Completed
    }

    pub fn mean_task_term(&self) -> f64 {
        if self.ticks.is_empty() {
            return 0.0;
        }
        self.ticks.iter().map(|t| t.task_term).sum::<f64>() / self.ticks.len() as f64
    }

    pub fn total_h(&self) -> f64 {
        self.ticks.iter().map(|t| t.h).sum()
    }

    /// Full horizon without a fall and adequate task tracking.
    pub fn is_success(&self, cfg: &EpisodeConfig) -> bool {
        self.completed() && self.ticks.len() == cfg.horizon && self.mean_task_term() >= cfg.success_task_term
    }
}

pub fn episode_return(trace: &RolloutTrace) -> f64 {
    trace.ticks.iter().map(|t| t.reward).sum()
}

/// Everything a rollout needs besides the ROM parameters and task.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutSetup {
    pub model: BipedModel,
    pub controller: ControllerConfig,
    pub episode: EpisodeConfig,
    pub reward: RewardWeights,
    pub overrides: Option<RetargetOverrides>,
}

struct StepAccumulator {
    start_time: f64,
    height: f64,
    pitch: f64,
    torque_sq: f64,
    steps: usize,
}

impl StepAccumulator {
    fn new(start_time: f64) -> Self {
        Self {
            start_time,
            height: 0.0,
            pitch: 0.0,
            torque_sq: 0.0,
            steps: 0,
        }
    }
}

/// Lengthens (or shortens) the swing leg so its foot lies on the ground.
fn project_to_ground(model: &BipedModel, x: &mut FullState, leg: Leg) -> Result<()> {
    let hip = model.hip(&x.q);
    let phi = x.q[2] + x.q[leg.hip_index()];
    let dir = [phi.sin(), -phi.cos()];
    let along_normal = model.height_above_ground(dir);
    if along_normal > -1e-3 {
        return Err(Error::Singular("swing leg does not point toward the ground"));
    }
    x.q[leg.length_index()] = -model.height_above_ground(hip) / along_normal;
    Ok(())
}

/// Runs one episode. Numerical failures end the episode as a fall.
pub fn rollout(params: &RomParams, task: Task, setup: &RolloutSetup) -> RolloutTrace {
    let mut trace = RolloutTrace {
        task,
        ticks: Vec::new(),
        footsteps: Vec::new(),
        outcome: Outcome::Completed,
    };
    if let Err((t, reason)) = run_episode(params, task, setup, &mut trace) {
        trace.outcome = Outcome::Fell { t, reason };
    }
    trace
}

fn run_episode(
    params: &RomParams,
    task: Task,
    setup: &RolloutSetup,
    trace: &mut RolloutTrace,
) -> std::result::Result<(), (f64, String)> {
    let fail = |t: f64| move |e: Error| (t, e.to_string());
    let ep = &setup.episode;
    let model = setup.model.with_incline(task.ground_incline);
    let schedule = ep.schedule();
    let dt = ep.dt();
    let substeps = ep.substeps();
    let tick_time = ep.tick_duration();
    let commanded = [task.stride_length, task.speed(schedule.single_support)];

    let mut x = model.standing_state(ep.initial_com_height, ep.initial_half_spread);
    if ep.initial_velocity_noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(ep.seed);
        let normal = Normal::new(0.0, ep.initial_velocity_noise).expect("finite std");
        x.v[0] += normal.sample(&mut rng);
        x.v[1] += normal.sample(&mut rng);
    }
    let mut ctrl = MpcController::new(
        params,
        &model,
        &setup.controller,
        schedule,
        task,
        setup.overrides.as_ref(),
    );
    let mut anchors = [model.foot(&x.q, Leg::Left), model.foot(&x.q, Leg::Right)];
    let com_hold = model.com(&x.q);

    // settle in double support
    let settle_steps = (ep.settle_time / dt).round() as usize;
    let both = ContactMode {
        left: Some(anchors[0]),
        right: Some(anchors[1]),
    };
    for _ in 0..settle_steps {
        let sol = ctrl.hold(&x, &both, com_hold).map_err(fail(0.0))?;
        x = integrate_step(&model, &x, &sol.u, &both, dt).map_err(fail(0.0))?;
    }

    let idx = |leg: Leg| match leg {
        Leg::Left => 0,
        Leg::Right => 1,
    };
    let mut step_index = 0usize;
    let mut stance = FsmSchedule::stance_leg(0);
    ctrl.set_swing_start(anchors[idx(stance.other())]);
    let mut acc = StepAccumulator::new(0.0);
    let mut last_stride = 0.0;

    for tick in 0..ep.horizon {
        let t0 = tick as f64 * tick_time;
        let snapshot = x.clone();
        let com_start = model.along_ground(model.com(&x.q));
        let mut h = 0.0;
        let mut first_u = TorqueCommand::zero();
        let mut force = [0.0; 2];
        let mut mode = FsmMode::LeftSupport;
        for sub in 0..substeps {
            let k = tick * substeps + sub;
            let t = k as f64 * dt;
            let fsm = fsm_state(t, &schedule);
            if fsm.step_index != step_index {
                // touchdown of the swing leg
                let landing = stance.other();
                project_to_ground(&model, &mut x, landing).map_err(fail(t))?;
                x = impact_map(&model, &x, landing).map_err(fail(t))?;
                let new_anchor = model.foot(&x.q, landing);
                let stride = model.along_ground(new_anchor) - model.along_ground(anchors[idx(stance)]);
                trace.footsteps.push(FootstepSummary {
                    step_index,
                    stance,
                    start_time: acc.start_time,
                    duration: t - acc.start_time,
                    stride,
                    mean_height: acc.height / acc.steps.max(1) as f64,
                    mean_pitch: acc.pitch / acc.steps.max(1) as f64,
                    torque_sq: acc.torque_sq,
                    sim_steps: acc.steps,
                });
                last_stride = stride;
                anchors[idx(landing)] = new_anchor;
                ctrl.set_swing_start(anchors[idx(stance)]);
                stance = landing;
                step_index = fsm.step_index;
                acc = StepAccumulator::new(t);
            }
            if sub == 0 {
                ctrl.replan(&x, fsm, anchors[idx(stance)], t).map_err(fail(t))?;
            }
            let sol = ctrl
                .control(&x, fsm, stance, anchors[idx(stance)], t)
                .map_err(fail(t))?;
            if sub == 0 {
                first_u = sol.u;
                force = sol.forces.first().copied().unwrap_or([0.0; 2]);
                mode = fsm.mode;
            }
            let usq = sol.u.squared_norm();
            h += usq * dt;
            acc.torque_sq += usq;
            acc.height += model.torso_height(&x.q);
            acc.pitch += x.q[2];
            acc.steps += 1;
            x = integrate_step(
                &model,
                &x,
                &sol.u,
                &ContactMode::single(stance, anchors[idx(stance)]),
                dt,
            )
            .map_err(fail(t))?;
            if is_fallen(&model, &x) {
                return Err((t + dt, "fell".to_string()));
            }
        }
        let speed = (model.along_ground(model.com(&x.q)) - com_start) / tick_time;
        let achieved = [last_stride, speed];
        let task_term = setup.reward.task_term(commanded, achieved);
        trace.ticks.push(TickRecord {
            tick,
            t: t0,
            state: snapshot,
            u: first_u,
            force,
            mode,
            step_index,
            achieved,
            h,
            reward: reward(h, commanded, achieved, &setup.reward),
            task_term,
        });
    }
    Ok(())
}

/// Mean return over `tasks` and the per-task traces.
pub fn eval_return(params: &RomParams, tasks: &[Task], setup: &RolloutSetup) -> (f64, Vec<RolloutTrace>) {
    let traces: Vec<RolloutTrace> = tasks.iter().map(|t| rollout(params, *t, setup)).collect();
    let mean = if traces.is_empty() {
        0.0
    } else {
        traces.iter().map(episode_return).sum::<f64>() / traces.len() as f64
    };
    (mean, traces)
}

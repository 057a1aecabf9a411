//! ROM trajectory optimization and the desired-output pipeline feeding the
//! operational-space controller.

mod swing;
mod targets;
pub mod transcription;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::biped::{FsmSchedule, FsmState, Leg};
use crate::error::{Error, Result};
use crate::rom::{RomParams, RomState};
use crate::task::Task;

pub use swing::{swing_foot_trajectory, SwingSample};
pub use targets::{
    pd_desired_accel, regularization_targets, DesiredOutputs, Gains, OutputKind, RegularizationTargets,
    RetargetOverrides, TrackedOutput,
};
pub use transcription::{transcription_residuals, CostWeights, ProblemData, Residuals};

use transcription::{constant_velocity_guess, simulate_guess, NZ};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    pub footsteps_in_horizon: usize,
    pub knots_per_phase: usize,
    pub reach_limit: f64,
    pub velocity_weight: f64,
    pub footstep_weight: f64,
    pub accel_weight: f64,
    pub penalty_weight: f64,
    pub raibert_gain: f64,
    pub com_height_min: f64,
    pub com_height_max: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            footsteps_in_horizon: 2,
            knots_per_phase: 5,
            reach_limit: 0.6,
            velocity_weight: 1.0,
            footstep_weight: 1.0,
            accel_weight: 1e-3,
            penalty_weight: 1e4,
            raibert_gain: 0.15,
            com_height_min: 0.6,
            com_height_max: 1.2,
            max_iterations: 20,
            tolerance: 1e-7,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.footsteps_in_horizon < 1 {
            return Err(Error::config(
                "controller.planner.footsteps_in_horizon",
                "must be at least 1",
            ));
        }
        if self.knots_per_phase < 3 {
            return Err(Error::config(
                "controller.planner.knots_per_phase",
                "must be at least 3",
            ));
        }
        for (name, v) in [
            ("controller.planner.reach_limit", self.reach_limit),
            ("controller.planner.tolerance", self.tolerance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(name, "must be positive"));
            }
        }
        for (name, v) in [
            ("controller.planner.velocity_weight", self.velocity_weight),
            ("controller.planner.footstep_weight", self.footstep_weight),
            ("controller.planner.accel_weight", self.accel_weight),
            ("controller.planner.penalty_weight", self.penalty_weight),
            ("controller.planner.raibert_gain", self.raibert_gain),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(name, "must be non-negative"));
            }
        }
        if !(self.com_height_min > 0.0 && self.com_height_min < self.com_height_max) {
            return Err(Error::config(
                "controller.planner.com_height_min",
                "must satisfy 0 < com_height_min < com_height_max",
            ));
        }
        if self.max_iterations == 0 {
            return Err(Error::config("controller.planner.max_iterations", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    MaxIter,
    Infeasible,
}

/// One support phase of a plan.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanPhase {
    pub step_index: usize,
    pub stance_leg: Leg,
    /// World position of the stance foot.
    pub stance_pos: [f64; 2],
    pub start_time: f64,
    pub duration: f64,
    /// CoM relative to `stance_pos`.
    pub knots: Vec<RomState>,
    pub accels: Vec<[f64; 2]>,
}

impl PlanPhase {
    pub fn knot_time(&self, k: usize) -> f64 {
        self.start_time + self.duration * k as f64 / (self.knots.len() - 1) as f64
    }

    pub fn end_time(&self) -> f64 {
        self.start_time + self.duration
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanSolution {
    pub knot_times: Vec<f64>,
    pub com_knots: Vec<RomState>,
    pub next_footstep: [f64; 2],
    pub solve_status: SolveStatus,
    pub iterations: usize,
    pub phases: Vec<PlanPhase>,
    /// Along-ground footstep displacements, one per switch.
    pub footsteps: Vec<f64>,
}

/// Measured inputs to a planning call.
#[derive(Clone, Debug)]
pub struct PlanInput<'a> {
    pub params: &'a RomParams,
    pub y0: RomState,
    pub stance_pos: [f64; 2],
    pub fsm: FsmState,
    pub schedule: FsmSchedule,
    pub task: Task,
    /// Absolute time of the call.
    pub t: f64,
}

const MIN_PHASE: f64 = 1e-3;
const FEAS_TOL: f64 = 1e-11;

fn problem_data(input: &PlanInput, cfg: &PlannerConfig) -> ProblemData {
    let ts = input.schedule.single_support;
    let first = (ts - input.fsm.time_in_mode).max(MIN_PHASE);
    let mut durations = vec![first];
    durations.extend(std::iter::repeat_n(ts, cfg.footsteps_in_horizon - 1));
    ProblemData {
        z0: [input.y0.y[0], input.y0.y[1], input.y0.ydot[0], input.y0.ydot[1]],
        durations,
        knots: cfg.knots_per_phase,
        tangent: input.task.tangent(),
        v_des: input.task.speed(ts),
        step_duration: ts,
        raibert_gain: cfg.raibert_gain,
        reach_limit: cfg.reach_limit,
        height_bounds: [cfg.com_height_min, cfg.com_height_max],
        weights: CostWeights {
            velocity: cfg.velocity_weight,
            footstep: cfg.footstep_weight,
            accel: cfg.accel_weight,
            penalty: cfg.penalty_weight,
        },
    }
}

/// Plans the CoM trajectory and the next footstep.
pub fn plan(input: &PlanInput, cfg: &PlannerConfig, warm: Option<&PlanSolution>) -> Result<PlanSolution> {
    if input.params.dim_y() != 2 {
        return Err(Error::UnsupportedDimension(input.params.dim_y()));
    }
    input.params.basis.eval(&input.y0)?;
    let data = problem_data(input, cfg);

    let mut status = SolveStatus::MaxIter;
    let guess = warm_guess(input, &data, warm)
        .or_else(|| {
            let steps: Vec<Option<f64>> = warm_footsteps(input, warm);
            simulate_guess(input.params, &data, &steps).ok()
        })
        .unwrap_or_else(|| constant_velocity_guess(&data));
    let (w, iterations) = match sqp(input.params, &data, guess.clone(), cfg) {
        Some((w, it, converged)) => {
            if converged {
                status = SolveStatus::Converged;
            }
            (w, it)
        }
        None => {
            status = SolveStatus::Infeasible;
            (guess, 0)
        }
    };
    let mut w = w;
    w[..NZ].copy_from_slice(&data.z0);
    build_solution(input, &data, &w, status, iterations)
}

fn warm_footsteps(input: &PlanInput, warm: Option<&PlanSolution>) -> Vec<Option<f64>> {
    match warm {
        Some(prev) => {
            let Some(first) = prev.phases.first() else {
                return Vec::new();
            };
            let offset = input.fsm.step_index as isize - first.step_index as isize;
            if offset < 0 {
                return Vec::new();
            }
            prev.footsteps.iter().skip(offset as usize).map(|d| Some(*d)).collect()
        }
        None => Vec::new(),
    }
}

/// Reuses a previous solution verbatim when the problem layout and times match.
fn warm_guess(input: &PlanInput, data: &ProblemData, warm: Option<&PlanSolution>) -> Option<Vec<f64>> {
    let prev = warm?;
    if prev.phases.len() != data.phases() {
        return None;
    }
    let mut w = vec![0.0; data.num_vars()];
    for (p, phase) in prev.phases.iter().enumerate() {
        if phase.knots.len() != data.knots
            || phase.step_index != input.fsm.step_index + p
            || (phase.duration - data.durations[p]).abs() > 1e-12
        {
            return None;
        }
        for (k, s) in phase.knots.iter().enumerate() {
            let iz = data.z_index(p, k);
            w[iz..iz + NZ].copy_from_slice(&s.to_z());
        }
    }
    if (prev.phases[0].start_time - input.t).abs() > 1e-12 {
        return None;
    }
    for (p, d) in prev.footsteps.iter().enumerate() {
        w[data.d_index(p + 1)] = *d;
    }
    Some(w)
}

fn merit(res: &Residuals, mu: f64) -> f64 {
    0.5 * res.cost.norm_squared() + mu * res.eq.lp_norm(1)
}

/// Gauss–Newton SQP with an ℓ1 merit line search. Returns the final
/// iterate, iteration count and convergence flag; `None` if the starting
/// point cannot be evaluated.
fn sqp(
    params: &RomParams,
    data: &ProblemData,
    mut w: Vec<f64>,
    cfg: &PlannerConfig,
) -> Option<(Vec<f64>, usize, bool)> {
    let n = data.num_vars();
    let mut res = transcription_residuals(params, &w, data).ok()?;
    let mut mu: f64 = 1.0;
    for it in 1..=cfg.max_iterations {
        let m = res.eq.len();
        let mut kkt = DMatrix::zeros(n + m, n + m);
        let jtj = res.cost_jac.transpose() * &res.cost_jac;
        kkt.view_mut((0, 0), (n, n)).copy_from(&jtj);
        for i in 0..n {
            kkt[(i, i)] += 1e-9;
        }
        kkt.view_mut((n, 0), (m, n)).copy_from(&res.eq_jac);
        kkt.view_mut((0, n), (n, m)).copy_from(&res.eq_jac.transpose());
        let mut rhs = DVector::zeros(n + m);
        rhs.rows_mut(0, n).copy_from(&(-(res.cost_jac.transpose() * &res.cost)));
        rhs.rows_mut(n, m).copy_from(&(-&res.eq));
        let sol = kkt.lu().solve(&rhs)?;
        let step = sol.rows(0, n).into_owned();
        let lambda = sol.rows(n, m);
        if !step.iter().all(|v| v.is_finite()) {
            return Some((w, it, false));
        }
        if step.amax() < cfg.tolerance && res.eq.amax() < FEAS_TOL {
            return Some((w, it, true));
        }
        mu = mu.max(1.1 * lambda.amax());
        let phi0 = merit(&res, mu);
        let slope = res.cost.dot(&(&res.cost_jac * &step)) - mu * res.eq.lp_norm(1);
        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha > 1e-6 {
            let trial: Vec<f64> = w.iter().zip(step.iter()).map(|(a, b)| a + alpha * b).collect();
            if let Ok(r) = transcription_residuals(params, &trial, data) {
                let phi = merit(&r, mu);
                if phi.is_finite() && phi <= phi0 + 1e-4 * alpha * slope.min(0.0) {
                    accepted = Some((trial, r));
                    break;
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((trial, r)) => {
                w = trial;
                res = r;
            }
            None => return Some((w, it, false)),
        }
    }
    Some((w, cfg.max_iterations, false))
}

fn build_solution(
    input: &PlanInput,
    data: &ProblemData,
    w: &[f64],
    status: SolveStatus,
    iterations: usize,
) -> Result<PlanSolution> {
    let e = data.tangent;
    let mut phases = Vec::with_capacity(data.phases());
    let mut stance = input.stance_pos;
    let mut start = input.t;
    let mut footsteps = Vec::with_capacity(data.phases());
    for p in 0..data.phases() {
        let mut knots = Vec::with_capacity(data.knots);
        let mut accels = Vec::with_capacity(data.knots);
        for k in 0..data.knots {
            let iz = data.z_index(p, k);
            let z = &w[iz..iz + NZ];
            knots.push(RomState::from_z(z));
            let a = input.params.accel_z(z).unwrap_or_else(|_| vec![0.0, 0.0]);
            accels.push([a[0], a[1]]);
        }
        let step_index = input.fsm.step_index + p;
        phases.push(PlanPhase {
            step_index,
            stance_leg: FsmSchedule::stance_leg(step_index),
            stance_pos: stance,
            start_time: start,
            duration: data.durations[p],
            knots,
            accels,
        });
        let d = w[data.d_index(p + 1)];
        footsteps.push(d);
        stance = [stance[0] + d * e[0], stance[1] + d * e[1]];
        start += data.durations[p];
    }
    let d1 = footsteps[0];
    let next_footstep = [input.stance_pos[0] + d1 * e[0], input.stance_pos[1] + d1 * e[1]];
    let mut knot_times = Vec::new();
    let mut com_knots = Vec::new();
    for phase in &phases {
        for (k, s) in phase.knots.iter().enumerate() {
            let t = phase.knot_time(k);
            if let Some(last) = knot_times.last() {
                if t <= *last + 1e-12 {
                    // boundary knot: keep the post-switch state
                    *com_knots.last_mut().unwrap() = s.clone();
                    continue;
                }
            }
            knot_times.push(t);
            com_knots.push(s.clone());
        }
    }
    // The first phase's opening knot is the measured state.
    com_knots[0] = input.y0.clone();
    let sol = PlanSolution {
        knot_times,
        com_knots,
        next_footstep,
        solve_status: status,
        iterations,
        phases,
        footsteps,
    };
    if sol.is_finite() {
        Ok(sol)
    } else {
        Err(Error::Singular("planner produced a non-finite solution"))
    }
}

/// Quintic Hermite interpolation of position, velocity and acceleration on
/// an interval of length `h` at normalized time `s ∈ [0, 1]`.
pub fn quintic_hermite(p0: [f64; 3], p1: [f64; 3], h: f64, s: f64) -> [f64; 3] {
    let (s2, s3, s4, s5) = (s * s, s * s * s, s.powi(4), s.powi(5));
    let b = [
        1.0 - 10.0 * s3 + 15.0 * s4 - 6.0 * s5,
        s - 6.0 * s3 + 8.0 * s4 - 3.0 * s5,
        0.5 * s2 - 1.5 * s3 + 1.5 * s4 - 0.5 * s5,
        0.5 * s3 - s4 + 0.5 * s5,
        -4.0 * s3 + 7.0 * s4 - 3.0 * s5,
        10.0 * s3 - 15.0 * s4 + 6.0 * s5,
    ];
    let db = [
        -30.0 * s2 + 60.0 * s3 - 30.0 * s4,
        1.0 - 18.0 * s2 + 32.0 * s3 - 15.0 * s4,
        s - 4.5 * s2 + 6.0 * s3 - 2.5 * s4,
        1.5 * s2 - 4.0 * s3 + 2.5 * s4,
        -12.0 * s2 + 28.0 * s3 - 15.0 * s4,
        30.0 * s2 - 60.0 * s3 + 30.0 * s4,
    ];
    let ddb = [
        -60.0 * s + 180.0 * s2 - 120.0 * s3,
        -36.0 * s + 96.0 * s2 - 60.0 * s3,
        1.0 - 9.0 * s + 18.0 * s2 - 10.0 * s3,
        3.0 * s - 12.0 * s2 + 10.0 * s3,
        -24.0 * s + 84.0 * s2 - 60.0 * s3,
        60.0 * s - 180.0 * s2 + 120.0 * s3,
    ];
    let c = [p0[0], p0[1] * h, p0[2] * h * h, p1[2] * h * h, p1[1] * h, p1[0]];
    let dot = |w: &[f64; 6]| w.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>();
    [dot(&b), dot(&db) / h, dot(&ddb) / (h * h)]
}

/// World-frame CoM reference sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComReference {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    pub acc: [f64; 2],
}

impl PlanSolution {
    pub fn is_finite(&self) -> bool {
        self.next_footstep.iter().all(|v| v.is_finite())
            && self
                .com_knots
                .iter()
                .all(|s| s.y.iter().chain(&s.ydot).all(|v| v.is_finite()))
            && self
                .phases
                .iter()
                .all(|p| p.accels.iter().flatten().all(|v| v.is_finite()))
    }

    /// Desired world CoM at time `t`, clamped to the planned horizon.
    pub fn com_reference(&self, t: f64) -> ComReference {
        let phase = self
            .phases
            .iter()
            .find(|p| t < p.end_time() - 1e-12)
            .unwrap_or_else(|| self.phases.last().expect("plan has phases"));
        let local = (t - phase.start_time).clamp(0.0, phase.duration);
        let intervals = phase.knots.len() - 1;
        let h = phase.duration / intervals as f64;
        let k = ((local / h).floor() as usize).min(intervals - 1);
        let s = ((local - k as f64 * h) / h).clamp(0.0, 1.0);
        let (a, b) = (&phase.knots[k], &phase.knots[k + 1]);
        let (aa, ab) = (phase.accels[k], phase.accels[k + 1]);
        let mut out = ComReference {
            pos: [0.0; 2],
            vel: [0.0; 2],
            acc: [0.0; 2],
        };
        for i in 0..2 {
            let r = quintic_hermite([a.y[i], a.ydot[i], aa[i]], [b.y[i], b.ydot[i], ab[i]], h, s);
            out.pos[i] = r[0] + phase.stance_pos[i];
            out.vel[i] = r[1];
            out.acc[i] = r[2];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::biped::fsm_state;
    use crate::rom::lip_init;

    fn input<'a>(params: &'a RomParams, y0: RomState, task: Task, t: f64) -> PlanInput<'a> {
        let schedule = FsmSchedule::default();
        PlanInput {
            params,
            y0,
            stance_pos: [0.0, 0.0],
            fsm: fsm_state(t, &schedule),
            schedule,
            task,
            t,
        }
    }

    #[test]
    fn quintic_hermite_matches_endpoints() {
        let a = [0.3, -0.2, 1.5];
        let b = [0.7, 0.4, -2.0];
        let h = 0.07;
        let r0 = quintic_hermite(a, b, h, 0.0);
        let r1 = quintic_hermite(a, b, h, 1.0);
        for i in 0..3 {
            assert!((r0[i] - a[i]).abs() < 1e-12);
            assert!((r1[i] - b[i]).abs() < 1e-9);
        }
        // derivative consistency
        let s = 0.37;
        let eps = 1e-6;
        let p = |s| quintic_hermite(a, b, h, s);
        let fd = (p(s + eps)[0] - p(s - eps)[0]) / (2.0 * eps * h);
        assert!((fd - p(s)[1]).abs() < 1e-6);
        let fd = (p(s + eps)[1] - p(s - eps)[1]) / (2.0 * eps * h);
        assert!((fd - p(s)[2]).abs() < 1e-4);
    }

    #[test]
    fn rest_case_steps_under_com() {
        let params = lip_init(9.81);
        let y0 = RomState::planar([0.0, 0.9], [0.0, 0.0]);
        let inp = input(&params, y0, Task::new(0.0, 0.0), 0.0);
        let sol = plan(&inp, &PlannerConfig::default(), None).unwrap();
        assert_eq!(sol.solve_status, SolveStatus::Converged);
        assert!(sol.next_footstep[0].abs() < 0.01, "{:?}", sol.next_footstep);
        for s in &sol.com_knots {
            assert!((s.ydot[0].powi(2) + s.ydot[1].powi(2)).sqrt() < 0.05);
        }
        for w in sol.knot_times.windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn warm_start_converges_immediately() {
        let params = lip_init(9.81);
        let y0 = RomState::planar([-0.05, 0.9], [0.3, 0.0]);
        let inp = input(&params, y0, Task::new(0.1, 0.0), 0.1);
        let cfg = PlannerConfig::default();
        let first = plan(&inp, &cfg, None).unwrap();
        let again = plan(&inp, &cfg, Some(&first)).unwrap();
        assert_eq!(again.solve_status, SolveStatus::Converged);
        assert!(again.iterations <= 2);
        let third = plan(&inp, &cfg, Some(&first)).unwrap();
        assert_eq!(again, third);
    }

    #[test]
    fn rejects_degenerate_height() {
        let params = lip_init(9.81);
        let y0 = RomState::planar([0.0, 0.1], [0.0, 0.0]);
        let inp = input(&params, y0, Task::new(0.1, 0.0), 0.0);
        assert!(matches!(
            plan(&inp, &PlannerConfig::default(), None),
            Err(Error::DegenerateHeight { .. })
        ));
    }
}

//! Oracles and fixtures shared by the integration suites.
#![allow(dead_code)]

use std::sync::Mutex;

use nalgebra::{DMatrix, DVector, SVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use romshaper::biped::{
    dynamics, fsm_state, total_energy, BipedModel, ContactMode, FsmSchedule, FullState, Leg, TorqueCommand, Vec7,
};
use romshaper::cmaes::{cmaes_ask, cmaes_init, cmaes_tell};
use romshaper::planner::{plan, DesiredOutputs, Gains, OutputKind, PlanInput, PlannerConfig, TrackedOutput};
use romshaper::rom::{lip_init, RomState};
use romshaper::train::{Evaluation, Evaluator};
use romshaper::{Error, Result, Task};

// ---- physics

pub fn random_q(rng: &mut ChaCha8Rng) -> Vec7 {
    Vec7::from_column_slice(&[
        rng.random_range(-1.0..1.0),
        rng.random_range(0.6..1.2),
        rng.random_range(-0.8..0.8),
        rng.random_range(-1.2..1.2),
        rng.random_range(0.5..1.1),
        rng.random_range(-1.2..1.2),
        rng.random_range(0.5..1.1),
    ])
}

pub fn random_v(rng: &mut ChaCha8Rng, scale: f64) -> Vec7 {
    Vec7::from_fn(|_, _| rng.random_range(-scale..scale))
}

/// Energy at the integrator's synchronized velocity. Semi-implicit Euler
/// carries the velocity half a step behind the configuration.
pub fn synchronized_energy(model: &BipedModel, x: &FullState, dt: f64) -> f64 {
    let (vdot, _) = dynamics(model, x, &TorqueCommand::zero(), &ContactMode::flight()).unwrap();
    let mut s = x.clone();
    s.v += vdot * (0.5 * dt);
    total_energy(model, &s)
}

pub fn thrown_state(model: &BipedModel) -> FullState {
    let mut x = model.standing_state(0.9, 0.1);
    x.q[1] += 0.3;
    // thrown upward so it is aloft for the whole second
    x.v = Vec7::from_column_slice(&[0.4, 4.9, 0.5, 0.3, 0.05, -0.2, -0.05]);
    x
}

// ---- operational-space control

pub struct Scenario {
    pub model: BipedModel,
    pub x: FullState,
    pub contact: ContactMode,
}

pub fn scenario(rng: &mut ChaCha8Rng) -> Scenario {
    let model = BipedModel::default().with_incline(rng.random_range(-0.2..0.2));
    let mut x = model.standing_state(rng.random_range(0.8..0.95), rng.random_range(0.0..0.15));
    x.q[2] += rng.random_range(-0.2..0.2);
    x.q[5] += rng.random_range(-0.3..0.3);
    x.q[6] = rng.random_range(0.6..0.9);
    for i in 0..7 {
        x.v[i] = rng.random_range(-0.3..0.3);
    }
    let contact = ContactMode::single(Leg::Left, model.foot(&x.q, Leg::Left));
    Scenario { model, x, contact }
}

fn command(u: &DVector<f64>) -> TorqueCommand {
    TorqueCommand {
        u: SVector::<f64, 4>::from_column_slice(u.as_slice()),
    }
}

/// Affine maps `v̇(u)`, `λ(u)` recovered column by column from forward
/// dynamics.
pub fn affine(s: &Scenario) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>, DVector<f64>) {
    let eval = |u: &DVector<f64>| {
        let (vdot, f) = dynamics(&s.model, &s.x, &command(u), &s.contact).unwrap();
        (
            DVector::from_column_slice(vdot.as_slice()),
            DVector::from_vec(vec![f[0][0], f[0][1]]),
        )
    };
    let (v0, l0) = eval(&DVector::zeros(4));
    let mut gv = DMatrix::zeros(7, 4);
    let mut gl = DMatrix::zeros(2, 4);
    for i in 0..4 {
        let mut e = DVector::zeros(4);
        e[i] = 1.0;
        let (v, l) = eval(&e);
        gv.set_column(i, &(v - &v0));
        gl.set_column(i, &(l - &l0));
    }
    (gv, v0, gl, l0)
}

/// Output accelerations (CoM x/z, torso pitch, swing leg length) as `A v̇ + b`.
pub fn output_map(s: &Scenario) -> (DMatrix<f64>, DVector<f64>) {
    let jc = s.model.com_jacobian(&s.x.q);
    let bc = s.model.com_bias(&s.x.q, &s.x.v);
    let mut a = DMatrix::zeros(4, 7);
    for c in 0..7 {
        a[(0, c)] = jc[(0, c)];
        a[(1, c)] = jc[(1, c)];
    }
    a[(2, 2)] = 1.0;
    a[(3, 6)] = 1.0;
    (a, DVector::from_vec(vec![bc[0], bc[1], 0.0, 0.0]))
}

pub fn outputs(des: &DVector<f64>, weights: [f64; 3]) -> DesiredOutputs {
    let no_gains = Gains { kp: 0.0, kd: 0.0 };
    let tracked = |kind, acc: [f64; 2], weight| TrackedOutput {
        kind,
        pos: [0.0; 2],
        vel: [0.0; 2],
        acc,
        gains: no_gains,
        weight,
    };
    DesiredOutputs {
        outputs: vec![
            tracked(OutputKind::Com, [des[0], des[1]], weights[0]),
            tracked(OutputKind::TorsoPitch, [des[2], 0.0], weights[1]),
            tracked(OutputKind::LegLength(Leg::Right), [des[3], 0.0], weights[2]),
        ],
    }
}

pub fn friction_ok(model: &BipedModel, l: &DVector<f64>, margin: f64) -> bool {
    let e = model.ground_tangent();
    let n = model.ground_normal();
    let lt = e[0] * l[0] + e[1] * l[1];
    let ln = n[0] * l[0] + n[1] * l[1];
    model.friction * ln - lt.abs() > margin
}

/// Minimizes `½uᵀHu + fᵀu` s.t. `Cu ≥ d` by trying every active set of up
/// to four constraints and keeping the best primal-feasible face minimizer.
pub fn brute_force_qp(h: &DMatrix<f64>, f: &DVector<f64>, c: &DMatrix<f64>, d: &DVector<f64>) -> DVector<f64> {
    let m = c.nrows();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << m) {
        let active: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        if active.len() > 4 {
            continue;
        }
        let k = active.len();
        let mut kkt = DMatrix::zeros(4 + k, 4 + k);
        let mut rhs = DVector::zeros(4 + k);
        kkt.view_mut((0, 0), (4, 4)).copy_from(h);
        for i in 0..4 {
            rhs[i] = -f[i];
        }
        for (r, &i) in active.iter().enumerate() {
            for col in 0..4 {
                kkt[(4 + r, col)] = c[(i, col)];
                kkt[(col, 4 + r)] = c[(i, col)];
            }
            rhs[4 + r] = d[i];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let u = sol.rows(0, 4).into_owned();
        if !u.iter().all(|v| v.is_finite()) {
            continue;
        }
        let slack = c * &u - d;
        if slack.iter().any(|s| *s < -1e-9) {
            continue;
        }
        let obj = 0.5 * (u.transpose() * h * &u)[(0, 0)] + f.dot(&u);
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, u));
        }
    }
    best.expect("feasible QP").1
}

/// Independent torque QP for a scenario: `Σ w‖A(G u + g) + b − des‖² + ρ‖u‖²`
/// under the torque box and the friction cone. Returns the enumerated
/// optimum and whether any constraint is active there.
pub fn torque_qp_oracle(s: &Scenario, des: &DVector<f64>, weights: [f64; 3], reg: f64) -> (DVector<f64>, bool) {
    let limits = s.model.torque_limits();
    let (gv, v0, gl, l0) = affine(s);
    let (a, b) = output_map(s);
    let ag = &a * &gv;
    let r0 = &a * &v0 + &b - des;
    let w = DVector::from_vec(vec![weights[0], weights[0], weights[1], weights[2]]);
    let wm = DMatrix::from_diagonal(&w);
    let h = ag.transpose() * &wm * &ag * 2.0 + DMatrix::identity(4, 4) * (2.0 * reg);
    let f = ag.transpose() * &wm * &r0 * 2.0;
    let e = s.model.ground_tangent();
    let n = s.model.ground_normal();
    let mu = s.model.friction;
    let mut c = DMatrix::zeros(10, 4);
    let mut d = DVector::zeros(10);
    for i in 0..4 {
        c[(2 * i, i)] = 1.0;
        c[(2 * i + 1, i)] = -1.0;
        d[2 * i] = -limits[i];
        d[2 * i + 1] = -limits[i];
    }
    for (r, sign) in [(8, 1.0), (9, -1.0)] {
        let wv = [mu * n[0] - sign * e[0], mu * n[1] - sign * e[1]];
        for col in 0..4 {
            c[(r, col)] = wv[0] * gl[(0, col)] + wv[1] * gl[(1, col)];
        }
        d[r] = -(wv[0] * l0[0] + wv[1] * l0[1]);
    }
    let u = brute_force_qp(&h, &f, &c, &d);
    let active = (&c * &u - &d).iter().any(|s| s.abs() < 1e-9);
    (u, active)
}

// ---- planner

pub fn lip_closed_form(y0: f64, v0: f64, omega: f64, t: f64) -> f64 {
    y0 * (omega * t).cosh() + v0 / omega * (omega * t).sinh()
}

/// Knot times and horizontal CoM of a one-phase LIP plan from
/// `y = (0, 0.9)`, `ẏ = (0.3, 0)`.
pub fn single_phase_plan(knots: usize) -> (Vec<f64>, Vec<f64>) {
    let params = lip_init(9.81);
    let schedule = FsmSchedule::default();
    let cfg = PlannerConfig {
        footsteps_in_horizon: 1,
        knots_per_phase: knots,
        ..PlannerConfig::default()
    };
    let inp = PlanInput {
        params: &params,
        y0: RomState::planar([0.0, 0.9], [0.3, 0.0]),
        stance_pos: [0.0, 0.0],
        fsm: fsm_state(0.0, &schedule),
        schedule,
        task: Task::new(0.1, 0.0),
        t: 0.0,
    };
    let sol = plan(&inp, &cfg, None).unwrap();
    let ys = sol.com_knots.iter().map(|s| s.y[0]).collect();
    (sol.knot_times, ys)
}

/// Worst deviation of the single-phase plan from the closed form.
pub fn lip_plan_error(knots: usize) -> f64 {
    let omega = (9.81f64 / 0.9).sqrt();
    let (times, ys) = single_phase_plan(knots);
    assert_eq!(times.len(), knots);
    times
        .iter()
        .zip(&ys)
        .map(|(t, y)| (y - lip_closed_form(0.0, 0.3, omega, *t)).abs())
        .fold(0.0, f64::max)
}

// ---- CMA-ES

pub fn sphere(x: &[f64], opt: &[f64]) -> f64 {
    x.iter().zip(opt).map(|(a, b)| (a - b).powi(2)).sum()
}

pub fn rosenbrock(x: &[f64]) -> f64 {
    x.windows(2)
        .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2))
        .sum()
}

/// Minimizes `f` until `f(mean) < target` or the budget runs out. Returns
/// the evaluations used on success.
pub fn minimize(
    f: impl Fn(&[f64]) -> f64,
    x0: &[f64],
    sigma0: f64,
    seed: u64,
    target: f64,
    budget: usize,
) -> Option<usize> {
    let mut s = cmaes_init(x0, sigma0, seed).unwrap();
    let mut evals = 0;
    while evals + s.popsize() <= budget {
        let xs = cmaes_ask(&mut s).unwrap();
        let fs: Vec<f64> = xs.iter().map(|x| f(x)).collect();
        evals += xs.len();
        cmaes_tell(&mut s, &xs, &fs, false).unwrap();
        if f(&s.mean) < target {
            return Some(evals);
        }
    }
    None
}

/// Seeds (out of ten) reaching the sphere and Rosenbrock targets.
pub fn benchmark_successes() -> (usize, usize) {
    let mut sphere_ok = 0;
    let mut rosen_ok = 0;
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let opt: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        if minimize(|x| sphere(x, &opt), &[0.0; 10], 0.5, seed, 1e-9, 2000).is_some() {
            sphere_ok += 1;
        }
        if minimize(rosenbrock, &[0.0; 10], 0.5, seed, 1e-6, 50_000).is_some() {
            rosen_ok += 1;
        }
    }
    (sphere_ok, rosen_ok)
}

// ---- training

/// Quadratic return peaked at θ = 1, success on strides up to 0.3 m.
pub struct Stub {
    pub calls: Mutex<Vec<(usize, Task)>>,
}

impl Stub {
    pub fn new() -> Self {
        Self {
            calls: Mutex::new(Vec::new()),
        }
    }
}

impl Evaluator for Stub {
    fn evaluate(&self, theta: &[f64], task: Task, seed: u64) -> Result<Evaluation> {
        self.calls.lock().unwrap().push((seed as usize, task));
        let d: f64 = theta.iter().map(|v| (v - 1.0).powi(2)).sum();
        Ok(Evaluation {
            ret: 100.0 - d - task.stride_length.abs(),
            success: task.stride_length <= 0.3 + 1e-9,
        })
    }
}

pub struct Failing;

impl Evaluator for Failing {
    fn evaluate(&self, _: &[f64], _: Task, _: u64) -> Result<Evaluation> {
        Err(Error::SimulationDiverged { t: 0.0 })
    }
}

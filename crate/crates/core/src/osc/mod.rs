//! Operational-space control: torques that best realize desired output
//! accelerations under the constrained full-order dynamics.
//!
//! Contact forces and accelerations are eliminated in closed form, leaving a
//! small QP over the four actuator commands.

mod qp;

use nalgebra::{DMatrix, DVector, Vector4};

pub use qp::{solve_qp, QpSolution};

use crate::biped::dynamics_internals::{contact_rows, ContactRows};
use crate::biped::{BipedModel, ContactMode, DynamicsTerms, FullState, Jac2, TorqueCommand, Vec7, NU};
use crate::error::{Error, Result};
use crate::planner::{pd_desired_accel, DesiredOutputs, OutputKind};

#[derive(Clone, Debug)]
pub struct OscSolution {
    pub u: TorqueCommand,
    pub vdot: Vec7,
    pub forces: Vec<[f64; 2]>,
    pub iterations: usize,
    /// `‖M v̇ + bias − B u − Jᵀλ‖∞`.
    pub dynamics_residual: f64,
    /// Desired output accelerations after PD, stacked in output order.
    pub desired_accel: Vec<f64>,
    /// Achieved output accelerations, stacked in output order.
    pub achieved_accel: Vec<f64>,
}

/// `v̇ = G_v u + g_v`, `λ = G_λ u + g_λ`.
pub(crate) struct AffineDynamics {
    pub terms: DynamicsTerms,
    pub rows: ContactRows,
    pub gv: DMatrix<f64>,
    pub g0: DVector<f64>,
    pub gl: DMatrix<f64>,
    pub l0: DVector<f64>,
}

pub(crate) fn affine_dynamics(model: &BipedModel, x: &FullState, c: &ContactMode) -> Result<AffineDynamics> {
    let terms = DynamicsTerms::new(model, x)?;
    let rows = contact_rows(model, x, c);
    let mut minv_b = DMatrix::zeros(7, NU);
    for k in 0..NU {
        let mut e = Vec7::zeros();
        e[3 + k] = 1.0;
        minv_b.set_column(k, &terms.solve_mass(&e));
    }
    let a0 = DVector::from_column_slice(terms.solve_mass(&(-terms.bias)).as_slice());
    let nc = rows.jac.nrows();
    if nc == 0 {
        return Ok(AffineDynamics {
            terms,
            rows,
            gv: minv_b,
            g0: a0,
            gl: DMatrix::zeros(0, NU),
            l0: DVector::zeros(0),
        });
    }
    let minv_jt = terms.solve_mass_dyn(&rows.jac.transpose());
    let schur = &rows.jac * &minv_jt;
    let chol = schur
        .cholesky()
        .ok_or(Error::Singular("contact constraints are degenerate"))?;
    let gl = -chol.solve(&(&rows.jac * &minv_b));
    let l0 = chol.solve(&(&rows.target - &rows.jac * &a0));
    let gv = minv_b + &minv_jt * &gl;
    let g0 = a0 + &minv_jt * &l0;
    Ok(AffineDynamics {
        terms,
        rows,
        gv,
        g0,
        gl,
        l0,
    })
}

/// Task Jacobian rows, `J̇v` and measured position/velocity of an output.
fn output_kinematics(
    model: &BipedModel,
    x: &FullState,
    kind: OutputKind,
) -> (DMatrix<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let from_jac = |j: Jac2, bias: [f64; 2], pos: [f64; 2]| {
        let vel = j * x.v;
        (
            DMatrix::from_fn(2, 7, |r, c| j[(r, c)]),
            bias.to_vec(),
            pos.to_vec(),
            vec![vel[0], vel[1]],
        )
    };
    let single = |idx: usize| {
        let mut j = DMatrix::zeros(1, 7);
        j[(0, idx)] = 1.0;
        (j, vec![0.0], vec![x.q[idx]], vec![x.v[idx]])
    };
    match kind {
        OutputKind::Com => from_jac(model.com_jacobian(&x.q), model.com_bias(&x.q, &x.v), model.com(&x.q)),
        OutputKind::Foot(leg) => from_jac(
            model.foot_jacobian(&x.q, leg),
            model.foot_bias(&x.q, &x.v, leg),
            model.foot(&x.q, leg),
        ),
        OutputKind::TorsoPitch => single(2),
        OutputKind::LegLength(leg) => single(leg.length_index()),
    }
}

/// Solves the OSC QP with torque regularization `torque_reg`.
pub fn osc_solve(
    model: &BipedModel,
    x: &FullState,
    outputs: &DesiredOutputs,
    c: &ContactMode,
    torque_reg: f64,
) -> Result<OscSolution> {
    let aff = affine_dynamics(model, x, c)?;
    let mut h = DMatrix::identity(NU, NU) * torque_reg;
    let mut f = DVector::zeros(NU);
    let mut jacs = Vec::with_capacity(outputs.outputs.len());
    let mut desired_accel = Vec::new();
    for out in &outputs.outputs {
        let (j, bias, pos, vel) = output_kinematics(model, x, out.kind);
        let a = &j * &aff.gv;
        let mut b = &j * &aff.g0;
        for r in 0..out.kind.dim() {
            let des = pd_desired_accel(out.pos[r], out.vel[r], out.acc[r], pos[r], vel[r], out.gains);
            desired_accel.push(des);
            b[r] += bias[r] - des;
        }
        if out.weight > 0.0 {
            h += a.transpose() * &a * out.weight;
            f += a.transpose() * &b * out.weight;
        }
        jacs.push((j, bias));
    }

    let limits = model.torque_limits();
    let nc = aff.rows.jac.nrows() / 2;
    let mut cm = DMatrix::zeros(2 * NU + 2 * nc, NU);
    let mut dv = DVector::zeros(2 * NU + 2 * nc);
    for k in 0..NU {
        cm[(2 * k, k)] = 1.0;
        cm[(2 * k + 1, k)] = -1.0;
        dv[2 * k] = -limits[k];
        dv[2 * k + 1] = -limits[k];
    }
    let (e, n) = (model.ground_tangent(), model.ground_normal());
    let mu = model.friction;
    for k in 0..nc {
        for (s, sign) in [(0, 1.0), (1, -1.0)] {
            // μ λ_n ∓ λ_t ≥ 0
            let w = [mu * n[0] - sign * e[0], mu * n[1] - sign * e[1]];
            let row = 2 * NU + 2 * k + s;
            for col in 0..NU {
                cm[(row, col)] = w[0] * aff.gl[(2 * k, col)] + w[1] * aff.gl[(2 * k + 1, col)];
            }
            dv[row] = -(w[0] * aff.l0[2 * k] + w[1] * aff.l0[2 * k + 1]);
        }
    }
    let sol = solve_qp(&h, &f, &cm, &dv)?;
    let u = Vector4::from_column_slice(sol.x.as_slice());
    let vdot_dyn = &aff.gv * &sol.x + &aff.g0;
    let lambda = &aff.gl * &sol.x + &aff.l0;
    let vdot = Vec7::from_column_slice(vdot_dyn.as_slice());

    let cmd = TorqueCommand { u };
    let mut resid = aff.terms.mass * vdot + aff.terms.bias - model.actuation(&cmd);
    if nc > 0 {
        let jt_l = aff.rows.jac.transpose() * &lambda;
        resid -= Vec7::from_column_slice(jt_l.as_slice());
    }
    let mut achieved_accel = Vec::with_capacity(desired_accel.len());
    for (j, bias) in &jacs {
        let acc = j * &vdot_dyn;
        for r in 0..acc.len() {
            achieved_accel.push(acc[r] + bias[r]);
        }
    }
    Ok(OscSolution {
        u: cmd,
        vdot,
        forces: lambda.as_slice().chunks(2).map(|p| [p[0], p[1]]).collect(),
        iterations: sol.iterations,
        dynamics_residual: resid.amax(),
        desired_accel,
        achieved_accel,
    })
}

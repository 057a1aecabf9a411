use nalgebra::{Cholesky, Const, DMatrix, DVector};

use super::{BipedModel, ContactMode, FullState, Jac2, Leg, Mat7, TorqueCommand, Vec7};
use crate::error::{Error, Result};

/// Manipulator-equation terms at a state:
/// `M v̇ + bias = B u + J_cᵀ λ`, with `bias = C v − G − τ_limits`.
#[derive(Clone, Debug)]
pub struct DynamicsTerms {
    pub mass: Mat7,
    pub coriolis: Mat7,
    pub gravity: Vec7,
    pub limits: Vec7,
    pub bias: Vec7,
    chol: Cholesky<f64, Const<7>>,
}

impl BipedModel {
    /// `J̇` of the foot point.
    pub fn foot_jacobian_dot(&self, q: &Vec7, v: &Vec7, leg: Leg) -> Jac2 {
        let (st, ct) = q[2].sin_cos();
        let phi = q[2] + q[leg.hip_index()];
        let len = q[leg.length_index()];
        let (sp, cp) = phi.sin_cos();
        let thd = v[2];
        let phid = v[2] + v[leg.hip_index()];
        let lend = v[leg.length_index()];
        let la = [lend * cp - len * phid * sp, lend * sp + len * phid * cp];
        let mut j = Jac2::zeros();
        j[(0, 2)] = -self.hip_offset * thd * st + la[0];
        j[(1, 2)] = self.hip_offset * thd * ct + la[1];
        j[(0, leg.hip_index())] = la[0];
        j[(1, leg.hip_index())] = la[1];
        j[(0, leg.length_index())] = phid * cp;
        j[(1, leg.length_index())] = phid * sp;
        j
    }

    pub fn mass_matrix(&self, q: &Vec7) -> Mat7 {
        let mut m = Mat7::zeros();
        m[(0, 0)] = self.torso_mass;
        m[(1, 1)] = self.torso_mass;
        m[(2, 2)] = self.torso_inertia;
        for leg in [Leg::Left, Leg::Right] {
            let j = self.foot_jacobian(q, leg);
            m += j.transpose() * j * self.foot_mass;
        }
        m
    }

    /// Coriolis matrix with `Ṁ − 2C` skew-symmetric.
    pub fn coriolis_matrix(&self, q: &Vec7, v: &Vec7) -> Mat7 {
        let mut c = Mat7::zeros();
        for leg in [Leg::Left, Leg::Right] {
            let j = self.foot_jacobian(q, leg);
            let jd = self.foot_jacobian_dot(q, v, leg);
            c += j.transpose() * jd * self.foot_mass;
        }
        c
    }

    /// Generalized gravity force `G = Σ mᵢ Jᵢᵀ g`.
    pub fn gravity_force(&self, q: &Vec7) -> Vec7 {
        let mut g = Vec7::zeros();
        g[1] = -self.torso_mass * self.gravity;
        for leg in [Leg::Left, Leg::Right] {
            let j = self.foot_jacobian(q, leg);
            g -= j.row(1).transpose() * (self.foot_mass * self.gravity);
        }
        g
    }

    /// One-sided spring-damper forces keeping leg lengths within limits.
    pub fn limit_force(&self, q: &Vec7, v: &Vec7) -> Vec7 {
        let mut f = Vec7::zeros();
        for leg in [Leg::Left, Leg::Right] {
            let i = leg.length_index();
            let len = q[i];
            let rate = v[i];
            if len < self.leg_length_min {
                let pen = self.leg_length_min - len;
                f[i] = (self.limit_stiffness * pen - self.limit_damping * rate).max(0.0);
            } else if len > self.leg_length_max {
                let pen = len - self.leg_length_max;
                f[i] = -(self.limit_stiffness * pen + self.limit_damping * rate).max(0.0);
            }
        }
        f
    }

    /// Generalized force from actuator commands.
    pub fn actuation(&self, u: &TorqueCommand) -> Vec7 {
        let mut f = Vec7::zeros();
        f[3] = u.u[0];
        f[4] = u.u[1];
        f[5] = u.u[2];
        f[6] = u.u[3];
        f
    }
}

impl DynamicsTerms {
    pub fn new(model: &BipedModel, x: &FullState) -> Result<Self> {
        let mass = model.mass_matrix(&x.q);
        let coriolis = model.coriolis_matrix(&x.q, &x.v);
        let gravity = model.gravity_force(&x.q);
        let limits = model.limit_force(&x.q, &x.v);
        let bias = coriolis * x.v - gravity - limits;
        let chol = Cholesky::new(mass).ok_or(Error::Singular("mass matrix not positive definite"))?;
        Ok(Self {
            mass,
            coriolis,
            gravity,
            limits,
            bias,
            chol,
        })
    }

    pub fn solve_mass(&self, rhs: &Vec7) -> Vec7 {
        self.chol.solve(rhs)
    }

    pub fn solve_mass_dyn(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = rhs.clone();
        for mut col in out.column_iter_mut() {
            let v = Vec7::from_iterator(col.iter().copied());
            col.copy_from(&self.chol.solve(&v));
        }
        out
    }
}

/// Stacked contact Jacobian, `J̇ v`, and the stabilized acceleration target
/// `J v̇ = −J̇ v − 2ω J v − ω² (p − anchor)` for every active contact.
pub(crate) struct ContactRows {
    pub jac: DMatrix<f64>,
    pub target: DVector<f64>,
}

pub(crate) fn contact_rows(model: &BipedModel, x: &FullState, c: &ContactMode) -> ContactRows {
    let nc = c.count();
    let mut jac = DMatrix::zeros(2 * nc, 7);
    let mut target = DVector::zeros(2 * nc);
    let w = model.baumgarte_omega;
    for (k, (leg, anchor)) in c.contacts().enumerate() {
        let j = model.foot_jacobian(&x.q, leg);
        let bias = model.foot_bias(&x.q, &x.v, leg);
        let vel = j * x.v;
        let p = model.foot(&x.q, leg);
        for r in 0..2 {
            for col in 0..7 {
                jac[(2 * k + r, col)] = j[(r, col)];
            }
            target[2 * k + r] = -bias[r] - 2.0 * w * vel[r] - w * w * (p[r] - anchor[r]);
        }
    }
    ContactRows { jac, target }
}

/// Solves `M v̇ = rhs + Jᵀ λ`, `J v̇ = target` by the Schur complement.
pub(crate) fn solve_constrained(terms: &DynamicsTerms, rhs: &Vec7, rows: &ContactRows) -> Result<(Vec7, DVector<f64>)> {
    let free = terms.solve_mass(rhs);
    if rows.jac.nrows() == 0 {
        return Ok((free, DVector::zeros(0)));
    }
    let minv_jt = terms.solve_mass_dyn(&rows.jac.transpose());
    let schur = &rows.jac * &minv_jt;
    let chol = schur
        .clone()
        .cholesky()
        .filter(|c| well_conditioned(c.l_dirty(), &schur))
        .ok_or(Error::Singular("contact constraints are degenerate"))?;
    let free_dyn = DVector::from_column_slice(free.as_slice());
    let resid = &rows.target - &rows.jac * &free_dyn;
    let lambda = chol.solve(&resid);
    let corr = &minv_jt * &lambda;
    let vdot = free + Vec7::from_column_slice(corr.as_slice());
    Ok((vdot, lambda))
}

fn well_conditioned(l: &DMatrix<f64>, a: &DMatrix<f64>) -> bool {
    let scale = a.diagonal().max();
    (0..l.nrows()).all(|i| l[(i, i)] * l[(i, i)] > 1e-10 * scale)
}

/// Constrained forward dynamics. Returns `v̇` and one contact force per
/// active contact, in the order left then right.
pub fn dynamics(
    model: &BipedModel,
    x: &FullState,
    u: &TorqueCommand,
    c: &ContactMode,
) -> Result<(Vec7, Vec<[f64; 2]>)> {
    let terms = DynamicsTerms::new(model, x)?;
    let rhs = model.actuation(u) - terms.bias;
    let rows = contact_rows(model, x, c);
    let (vdot, lambda) = solve_constrained(&terms, &rhs, &rows)?;
    let forces = lambda.as_slice().chunks(2).map(|f| [f[0], f[1]]).collect();
    Ok((vdot, forces))
}

/// Semi-implicit Euler: velocity first, then configuration.
pub fn integrate_step(
    model: &BipedModel,
    x: &FullState,
    u: &TorqueCommand,
    c: &ContactMode,
    dt: f64,
) -> Result<FullState> {
    let (vdot, _) = dynamics(model, x, u, c)?;
    let v = x.v + vdot * dt;
    let q = x.q + v * dt;
    let next = FullState::new(q, v, x.t + dt);
    if !next.is_finite() {
        return Err(Error::SimulationDiverged { t: x.t });
    }
    Ok(next)
}

/// Plastic impact of `leg`'s foot with the ground:
/// `M (v⁺ − v⁻) = Jᵀ Λ`, `J v⁺ = 0`.
pub fn impact_map(model: &BipedModel, x: &FullState, leg: Leg) -> Result<FullState> {
    let mass = model.mass_matrix(&x.q);
    let chol = Cholesky::new(mass).ok_or(Error::Singular("mass matrix not positive definite"))?;
    let j = model.foot_jacobian(&x.q, leg);
    let minv_jt = chol.solve(&j.transpose());
    let schur = j * minv_jt;
    let schur_chol = Cholesky::new(schur).ok_or(Error::Singular("impact constraint is degenerate"))?;
    let impulse = schur_chol.solve(&(-(j * x.v)));
    let v = x.v + minv_jt * impulse;
    Ok(FullState::new(x.q, v, x.t))
}

pub fn kinetic_energy(model: &BipedModel, x: &FullState) -> f64 {
    0.5 * (x.v.transpose() * model.mass_matrix(&x.q) * x.v)[(0, 0)]
}

pub fn potential_energy(model: &BipedModel, x: &FullState) -> f64 {
    let fl = model.foot(&x.q, Leg::Left);
    let fr = model.foot(&x.q, Leg::Right);
    model.gravity * (model.torso_mass * x.q[1] + model.foot_mass * (fl[1] + fr[1]))
}

pub fn total_energy(model: &BipedModel, x: &FullState) -> f64 {
    kinetic_energy(model, x) + potential_energy(model, x)
}

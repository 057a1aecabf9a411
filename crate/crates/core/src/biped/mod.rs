//! Planar floating-base biped: torso plus two massless telescoping legs with
//! point-mass feet.
//!
//! Configuration `q = [x, z, θ, α_L, ℓ_L, α_R, ℓ_R]` where `(x, z)` is the
//! torso CoM in the world frame, `θ` the torso pitch (counter-clockwise), `α`
//! the hip angle relative to the torso and `ℓ` the leg length. A leg with
//! absolute angle `φ = θ + α` points along `(sin φ, −cos φ)` from the hip.
//! The ground is a plane through the origin inclined by the model's incline
//! angle; gravity always points along world `−z`.

mod dynamics;
mod fsm;

use crate::error::{Error, Result};
use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

pub use dynamics::{
    dynamics, impact_map, integrate_step, kinetic_energy, potential_energy, total_energy, DynamicsTerms,
};
pub(crate) mod dynamics_internals {
    pub(crate) use super::dynamics::{contact_rows, ContactRows};
}
pub use fsm::{fsm_state, FsmMode, FsmSchedule, FsmState};

pub type Vec7 = SVector<f64, 7>;
pub type Mat7 = SMatrix<f64, 7, 7>;
pub type Jac2 = SMatrix<f64, 2, 7>;

pub const NQ: usize = 7;
pub const NU: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Leg {
    Left,
    Right,
}

impl Leg {
    pub fn other(self) -> Leg {
        match self {
            Leg::Left => Leg::Right,
            Leg::Right => Leg::Left,
        }
    }

    fn offset(self) -> usize {
        match self {
            Leg::Left => 0,
            Leg::Right => 2,
        }
    }

    /// Index of the hip angle in `q`.
    pub fn hip_index(self) -> usize {
        3 + self.offset()
    }

    /// Index of the leg length in `q`.
    pub fn length_index(self) -> usize {
        4 + self.offset()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BipedModel {
    pub torso_mass: f64,
    pub torso_inertia: f64,
    pub foot_mass: f64,
    /// Distance from torso CoM down to the hip along the torso axis.
    pub hip_offset: f64,
    pub leg_length_min: f64,
    pub leg_length_max: f64,
    pub hip_torque_limit: f64,
    pub leg_force_limit: f64,
    pub gravity: f64,
    pub friction: f64,
    /// Ground incline (rad); positive is uphill for `+x` walking.
    pub incline: f64,
    pub limit_stiffness: f64,
    pub limit_damping: f64,
    /// Baumgarte natural frequency for contact drift (rad/s).
    pub baumgarte_omega: f64,
}

impl Default for BipedModel {
    fn default() -> Self {
        Self {
            torso_mass: 10.0,
            torso_inertia: 1.0,
            foot_mass: 0.5,
            hip_offset: 0.1,
            leg_length_min: 0.5,
            leg_length_max: 1.1,
            hip_torque_limit: 60.0,
            leg_force_limit: 300.0,
            gravity: 9.81,
            friction: 0.8,
            incline: 0.0,
            limit_stiffness: 2.0e4,
            limit_damping: 200.0,
            baumgarte_omega: 20.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FullState {
    pub q: Vec7,
    pub v: Vec7,
    pub t: f64,
}

impl FullState {
    pub fn new(q: Vec7, v: Vec7, t: f64) -> Self {
        Self { q, v, t }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.v.iter()).all(|x| x.is_finite()) && self.t.is_finite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TorqueCommand {
    /// Left hip torque, left leg force, right hip torque, right leg force.
    pub u: SVector<f64, 4>,
}

impl TorqueCommand {
    pub fn zero() -> Self {
        Self { u: SVector::zeros() }
    }

    pub fn squared_norm(&self) -> f64 {
        self.u.norm_squared()
    }
}

/// Active point contacts with their world anchor positions.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ContactMode {
    pub left: Option<[f64; 2]>,
    pub right: Option<[f64; 2]>,
}

impl ContactMode {
    pub fn flight() -> Self {
        Self::default()
    }

    pub fn single(leg: Leg, anchor: [f64; 2]) -> Self {
        match leg {
            Leg::Left => Self {
                left: Some(anchor),
                right: None,
            },
            Leg::Right => Self {
                left: None,
                right: Some(anchor),
            },
        }
    }

    pub fn contacts(&self) -> impl Iterator<Item = (Leg, [f64; 2])> + '_ {
        self.left
            .map(|a| (Leg::Left, a))
            .into_iter()
            .chain(self.right.map(|a| (Leg::Right, a)))
    }

    pub fn count(&self) -> usize {
        self.left.is_some() as usize + self.right.is_some() as usize
    }

    pub fn is_consistent_with(&self, mode: FsmMode) -> bool {
        match mode {
            FsmMode::LeftSupport => self.left.is_some() && self.right.is_none(),
            FsmMode::RightSupport => self.right.is_some() && self.left.is_none(),
            FsmMode::DoubleSupport => self.count() == 2,
        }
    }
}

impl BipedModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("model.torso_mass", self.torso_mass),
            ("model.torso_inertia", self.torso_inertia),
            ("model.foot_mass", self.foot_mass),
            ("model.leg_length_min", self.leg_length_min),
            ("model.hip_torque_limit", self.hip_torque_limit),
            ("model.leg_force_limit", self.leg_force_limit),
            ("model.gravity", self.gravity),
            ("model.friction", self.friction),
            ("model.baumgarte_omega", self.baumgarte_omega),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(name, format!("must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("model.hip_offset", self.hip_offset),
            ("model.limit_stiffness", self.limit_stiffness),
            ("model.limit_damping", self.limit_damping),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(name, format!("must be non-negative, got {v}")));
            }
        }
        if !(self.leg_length_max > self.leg_length_min && self.leg_length_max.is_finite()) {
            return Err(Error::config("model.leg_length_max", "must exceed leg_length_min"));
        }
        if !(self.incline.abs() < 0.5) {
            return Err(Error::config("model.incline", "must lie in (-0.5, 0.5) rad"));
        }
        Ok(())
    }

    pub fn with_incline(&self, incline: f64) -> Self {
        Self {
            incline,
            ..self.clone()
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.torso_mass + 2.0 * self.foot_mass
    }

    pub fn torque_limits(&self) -> [f64; 4] {
        [
            self.hip_torque_limit,
            self.leg_force_limit,
            self.hip_torque_limit,
            self.leg_force_limit,
        ]
    }

    /// Unit vector along the ground, pointing in the walking direction.
    pub fn ground_tangent(&self) -> [f64; 2] {
        [self.incline.cos(), self.incline.sin()]
    }

    /// Unit ground normal.
    pub fn ground_normal(&self) -> [f64; 2] {
        [-self.incline.sin(), self.incline.cos()]
    }

    /// Signed distance of `p` above the ground plane.
    pub fn height_above_ground(&self, p: [f64; 2]) -> f64 {
        let n = self.ground_normal();
        p[0] * n[0] + p[1] * n[1]
    }

    /// Coordinate of `p` along the ground tangent.
    pub fn along_ground(&self, p: [f64; 2]) -> f64 {
        let e = self.ground_tangent();
        p[0] * e[0] + p[1] * e[1]
    }

    /// World point from ground coordinates (along, normal).
    pub fn from_ground(&self, along: f64, normal: f64) -> [f64; 2] {
        let e = self.ground_tangent();
        let n = self.ground_normal();
        [along * e[0] + normal * n[0], along * e[1] + normal * n[1]]
    }

    pub fn hip(&self, q: &Vec7) -> [f64; 2] {
        let (s, c) = q[2].sin_cos();
        [q[0] + self.hip_offset * s, q[1] - self.hip_offset * c]
    }

    pub fn foot(&self, q: &Vec7, leg: Leg) -> [f64; 2] {
        let hip = self.hip(q);
        let phi = q[2] + q[leg.hip_index()];
        let len = q[leg.length_index()];
        let (s, c) = phi.sin_cos();
        [hip[0] + len * s, hip[1] - len * c]
    }

    /// `∂p_foot/∂q`.
    pub fn foot_jacobian(&self, q: &Vec7, leg: Leg) -> Jac2 {
        let (st, ct) = q[2].sin_cos();
        let phi = q[2] + q[leg.hip_index()];
        let len = q[leg.length_index()];
        let (sp, cp) = phi.sin_cos();
        let mut j = Jac2::zeros();
        j[(0, 0)] = 1.0;
        j[(1, 1)] = 1.0;
        j[(0, 2)] = self.hip_offset * ct + len * cp;
        j[(1, 2)] = self.hip_offset * st + len * sp;
        j[(0, leg.hip_index())] = len * cp;
        j[(1, leg.hip_index())] = len * sp;
        j[(0, leg.length_index())] = sp;
        j[(1, leg.length_index())] = -cp;
        j
    }

    /// `J̇ v` for the foot point.
    pub fn foot_bias(&self, q: &Vec7, v: &Vec7, leg: Leg) -> [f64; 2] {
        let (st, ct) = q[2].sin_cos();
        let phi = q[2] + q[leg.hip_index()];
        let len = q[leg.length_index()];
        let (sp, cp) = phi.sin_cos();
        let thd = v[2];
        let phid = v[2] + v[leg.hip_index()];
        let lend = v[leg.length_index()];
        // d/dt (ℓ a) = ℓ̇ a − ℓ φ̇ u with a = (cos φ, sin φ), u = (sin φ, −cos φ)
        let la = [lend * cp - len * phid * sp, lend * sp + len * phid * cp];
        let col_theta = [-self.hip_offset * thd * st + la[0], self.hip_offset * thd * ct + la[1]];
        let col_len = [phid * cp, phid * sp];
        let ad = v[leg.hip_index()];
        [
            col_theta[0] * thd + la[0] * ad + col_len[0] * lend,
            col_theta[1] * thd + la[1] * ad + col_len[1] * lend,
        ]
    }

    pub fn foot_velocity(&self, q: &Vec7, v: &Vec7, leg: Leg) -> [f64; 2] {
        let vel = self.foot_jacobian(q, leg) * v;
        [vel[0], vel[1]]
    }

    pub fn com(&self, q: &Vec7) -> [f64; 2] {
        let m = self.total_mass();
        let fl = self.foot(q, Leg::Left);
        let fr = self.foot(q, Leg::Right);
        [
            (self.torso_mass * q[0] + self.foot_mass * (fl[0] + fr[0])) / m,
            (self.torso_mass * q[1] + self.foot_mass * (fl[1] + fr[1])) / m,
        ]
    }

    pub fn com_jacobian(&self, q: &Vec7) -> Jac2 {
        let m = self.total_mass();
        let mut j = (self.foot_jacobian(q, Leg::Left) + self.foot_jacobian(q, Leg::Right)) * self.foot_mass;
        j[(0, 0)] += self.torso_mass;
        j[(1, 1)] += self.torso_mass;
        j / m
    }

    pub fn com_bias(&self, q: &Vec7, v: &Vec7) -> [f64; 2] {
        let m = self.total_mass();
        let bl = self.foot_bias(q, v, Leg::Left);
        let br = self.foot_bias(q, v, Leg::Right);
        [
            self.foot_mass * (bl[0] + br[0]) / m,
            self.foot_mass * (bl[1] + br[1]) / m,
        ]
    }

    pub fn com_velocity(&self, q: &Vec7, v: &Vec7) -> [f64; 2] {
        let vel = self.com_jacobian(q) * v;
        [vel[0], vel[1]]
    }

    /// Torso height above local ground, measured along the ground normal.
    pub fn torso_height(&self, q: &Vec7) -> f64 {
        self.height_above_ground([q[0], q[1]])
    }

    /// Standing posture with both feet on the ground, torso upright and the
    /// CoM `com_height` above the midpoint between the feet. Feet are placed
    /// `half_spread` either side of that midpoint along the ground.
    pub fn standing_state(&self, com_height: f64, half_spread: f64) -> FullState {
        let m = self.total_mass();
        let fl = self.from_ground(-half_spread, 0.0);
        let fr = self.from_ground(half_spread, 0.0);
        // CoM above the ground origin: torso sits so the weighted mean lands there.
        let com = [0.0, com_height];
        let tx = (m * com[0] - self.foot_mass * (fl[0] + fr[0])) / self.torso_mass;
        let tz = (m * com[1] - self.foot_mass * (fl[1] + fr[1])) / self.torso_mass;
        let mut q = Vec7::zeros();
        q[0] = tx;
        q[1] = tz;
        let hip = self.hip(&q);
        for (leg, f) in [(Leg::Left, fl), (Leg::Right, fr)] {
            let dx = f[0] - hip[0];
            let dz = f[1] - hip[1];
            q[leg.length_index()] = (dx * dx + dz * dz).sqrt();
            // foot − hip = ℓ (sin φ, −cos φ)
            q[leg.hip_index()] = dx.atan2(-dz);
        }
        FullState::new(q, Vec7::zeros(), 0.0)
    }
}

/// True when the torso is below 0.4 m above local ground or pitched beyond
/// 1 rad.
pub fn is_fallen(model: &BipedModel, x: &FullState) -> bool {
    !x.is_finite() || model.torso_height(&x.q) < 0.4 || x.q[2].abs() > 1.0
}

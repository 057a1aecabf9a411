//! Direct transcription of the ROM over a sequence of single-support phases.
//!
//! Decision vector layout: `[z_{0,0} … z_{0,K−1}, z_{1,0} … z_{P−1,K−1}, d_1 … d_P]`
//! with `z = (y_h, y_v, ẏ_h, ẏ_v)` relative to the phase's stance foot and
//! `d_p` the along-ground displacement of the stance foot at the `p`-th switch.
//! Phase dynamics use compressed Hermite–Simpson collocation.

use nalgebra::{DMatrix, DVector, Matrix2x4, Matrix4, Vector4};

use crate::error::{Error, Result};
use crate::rom::RomParams;

pub const NZ: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostWeights {
    pub velocity: f64,
    pub footstep: f64,
    pub accel: f64,
    pub penalty: f64,
}

/// Everything but the decision vector.
#[derive(Clone, Debug)]
pub struct ProblemData {
    pub z0: [f64; 4],
    /// One entry per phase.
    pub durations: Vec<f64>,
    pub knots: usize,
    pub tangent: [f64; 2],
    pub v_des: f64,
    pub step_duration: f64,
    pub raibert_gain: f64,
    pub reach_limit: f64,
    /// Allowed `y_v` range.
    pub height_bounds: [f64; 2],
    pub weights: CostWeights,
}

impl ProblemData {
    pub fn phases(&self) -> usize {
        self.durations.len()
    }

    pub fn num_vars(&self) -> usize {
        NZ * self.phases() * self.knots + self.phases()
    }

    pub fn z_index(&self, phase: usize, knot: usize) -> usize {
        NZ * (phase * self.knots + knot)
    }

    /// Index of `d_p`, `p ≥ 1`.
    pub fn d_index(&self, p: usize) -> usize {
        NZ * self.phases() * self.knots + p - 1
    }

    pub fn knot_step(&self, phase: usize) -> f64 {
        self.durations[phase] / (self.knots - 1) as f64
    }

    fn num_eq(&self) -> usize {
        let p = self.phases();
        NZ + p * (self.knots - 1) * NZ + (p - 1) * NZ
    }

    fn num_cost(&self) -> usize {
        let p = self.phases();
        let knots = p * self.knots;
        // velocity (1) + accel (2) + height penalties (2) per knot,
        // footstep + reach per switch
        knots * 5 + p * 2
    }

    /// Raibert nominal displacement from the pre-switch state.
    pub fn nominal_step(&self, z: &[f64]) -> f64 {
        let e = self.tangent;
        let pos = z[0] * e[0] + z[1] * e[1];
        let vel = z[2] * e[0] + z[3] * e[1];
        pos + vel * self.step_duration / 2.0 + self.raibert_gain * (vel - self.v_des)
    }
}

pub struct Residuals {
    /// Least-squares residuals `r`; the cost is `½‖r‖²`.
    pub cost: DVector<f64>,
    pub cost_jac: DMatrix<f64>,
    /// Equality constraints `c = 0`.
    pub eq: DVector<f64>,
    pub eq_jac: DMatrix<f64>,
}

pub(crate) fn rom_rhs(params: &RomParams, z: &[f64]) -> Result<(Vector4<f64>, Matrix4<f64>)> {
    let acc = params.accel_z(z)?;
    let ja = params.accel_jacobian(z)?;
    let f = Vector4::new(z[2], z[3], acc[0], acc[1]);
    let mut jf = Matrix4::zeros();
    jf[(0, 2)] = 1.0;
    jf[(1, 3)] = 1.0;
    for c in 0..NZ {
        jf[(2, c)] = ja[(0, c)];
        jf[(3, c)] = ja[(1, c)];
    }
    Ok((f, jf))
}

fn accel_rows(params: &RomParams, z: &[f64]) -> Result<([f64; 2], Matrix2x4<f64>)> {
    let acc = params.accel_z(z)?;
    let ja = params.accel_jacobian(z)?;
    Ok(([acc[0], acc[1]], Matrix2x4::from_fn(|r, c| ja[(r, c)])))
}

/// Hermite–Simpson defect `(z₁ − z₀)/h − (f₀ + 4f_c + f₁)/6` and its
/// Jacobians with respect to `z₀` and `z₁`.
pub(crate) fn hs_defect(
    params: &RomParams,
    z0: &[f64],
    z1: &[f64],
    h: f64,
) -> Result<(Vector4<f64>, Matrix4<f64>, Matrix4<f64>)> {
    let (f0, j0) = rom_rhs(params, z0)?;
    let (f1, j1) = rom_rhs(params, z1)?;
    let a = Vector4::from_column_slice(z0);
    let b = Vector4::from_column_slice(z1);
    let zc = (a + b) * 0.5 + (f0 - f1) * (h / 8.0);
    let (fc, jc) = rom_rhs(params, zc.as_slice())?;
    let defect = (b - a) / h - (f0 + fc * 4.0 + f1) / 6.0;
    let eye = Matrix4::identity();
    let dzc0 = eye * 0.5 + j0 * (h / 8.0);
    let dzc1 = eye * 0.5 - j1 * (h / 8.0);
    let d0 = -eye / h - (j0 + jc * dzc0 * 4.0) / 6.0;
    let d1 = eye / h - (j1 + jc * dzc1 * 4.0) / 6.0;
    Ok((defect, d0, d1))
}

/// Stacked cost residuals and equality constraints with analytic Jacobians.
pub fn transcription_residuals(params: &RomParams, w: &[f64], data: &ProblemData) -> Result<Residuals> {
    let n = data.num_vars();
    if w.len() != n {
        return Err(Error::ParameterLength {
            got: w.len(),
            expected: n,
        });
    }
    let np = data.phases();
    let kk = data.knots;
    let e = data.tangent;
    let mut cost = DVector::zeros(data.num_cost());
    let mut cost_jac = DMatrix::zeros(data.num_cost(), n);
    let mut eq = DVector::zeros(data.num_eq());
    let mut eq_jac = DMatrix::zeros(data.num_eq(), n);
    let wt = data.weights;
    let (sv, sa, sf, sp) = (
        wt.velocity.sqrt(),
        wt.accel.sqrt(),
        wt.footstep.sqrt(),
        wt.penalty.sqrt(),
    );

    for i in 0..NZ {
        eq[i] = w[i] - data.z0[i];
        eq_jac[(i, i)] = 1.0;
    }
    let mut row_eq = NZ;
    let mut row_c = 0;

    for p in 0..np {
        let h = data.knot_step(p);
        for k in 0..kk {
            let iz = data.z_index(p, k);
            let z = &w[iz..iz + NZ];
            cost[row_c] = sv * (z[2] * e[0] + z[3] * e[1] - data.v_des);
            cost_jac[(row_c, iz + 2)] = sv * e[0];
            cost_jac[(row_c, iz + 3)] = sv * e[1];
            row_c += 1;
            let (acc, ja) = accel_rows(params, z)?;
            for r in 0..2 {
                cost[row_c + r] = sa * acc[r];
                for c in 0..NZ {
                    cost_jac[(row_c + r, iz + c)] = sa * ja[(r, c)];
                }
            }
            row_c += 2;
            let [lo, hi] = data.height_bounds;
            if z[1] < lo {
                cost[row_c] = sp * (lo - z[1]);
                cost_jac[(row_c, iz + 1)] = -sp;
            }
            if z[1] > hi {
                cost[row_c + 1] = sp * (z[1] - hi);
                cost_jac[(row_c + 1, iz + 1)] = sp;
            }
            row_c += 2;
            if k + 1 < kk {
                let (defect, d0, d1) = hs_defect(params, z, &w[iz + NZ..iz + 2 * NZ], h)?;
                for r in 0..NZ {
                    eq[row_eq + r] = defect[r];
                    for c in 0..NZ {
                        eq_jac[(row_eq + r, iz + c)] = d0[(r, c)];
                        eq_jac[(row_eq + r, iz + NZ + c)] = d1[(r, c)];
                    }
                }
                row_eq += NZ;
            }
        }

        // switch p+1 follows this phase
        let iend = data.z_index(p, kk - 1);
        let zend = &w[iend..iend + NZ];
        let id = data.d_index(p + 1);
        let d = w[id];
        let nominal = data.nominal_step(zend);
        let kv = data.raibert_gain;
        let ts = data.step_duration;
        cost[row_c] = sf * (d - nominal);
        cost_jac[(row_c, id)] = sf;
        for a in 0..2 {
            cost_jac[(row_c, iend + a)] = -sf * e[a];
            cost_jac[(row_c, iend + 2 + a)] = -sf * e[a] * (ts / 2.0 + kv);
        }
        row_c += 1;
        let rel = d - (zend[0] * e[0] + zend[1] * e[1]);
        let excess = rel.abs() - data.reach_limit;
        if excess > 0.0 {
            let s = rel.signum();
            cost[row_c] = sp * excess;
            cost_jac[(row_c, id)] = sp * s;
            cost_jac[(row_c, iend)] = -sp * s * e[0];
            cost_jac[(row_c, iend + 1)] = -sp * s * e[1];
        }
        row_c += 1;

        if p + 1 < np {
            let inext = data.z_index(p + 1, 0);
            for r in 0..NZ {
                let mut target = zend[r];
                if r < 2 {
                    target -= d * e[r];
                }
                eq[row_eq + r] = w[inext + r] - target;
                eq_jac[(row_eq + r, inext + r)] = 1.0;
                eq_jac[(row_eq + r, iend + r)] = -1.0;
                if r < 2 {
                    eq_jac[(row_eq + r, id)] = e[r];
                }
            }
            row_eq += NZ;
        }
    }
    debug_assert_eq!(row_eq, eq.len());
    debug_assert_eq!(row_c, cost.len());
    Ok(Residuals {
        cost,
        cost_jac,
        eq,
        eq_jac,
    })
}

fn rk4(params: &RomParams, z: &Vector4<f64>, h: f64) -> Result<Vector4<f64>> {
    let f = |s: &Vector4<f64>| rom_rhs(params, s.as_slice()).map(|r| r.0);
    let k1 = f(z)?;
    let k2 = f(&(z + k1 * (h / 2.0)))?;
    let k3 = f(&(z + k2 * (h / 2.0)))?;
    let k4 = f(&(z + k3 * h))?;
    Ok(z + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

/// Initial guess by forward simulation, with Raibert footsteps at every
/// switch (or `footsteps` where given).
pub(crate) fn simulate_guess(params: &RomParams, data: &ProblemData, footsteps: &[Option<f64>]) -> Result<Vec<f64>> {
    const SUBSTEPS: usize = 4;
    let mut w = vec![0.0; data.num_vars()];
    let mut z = Vector4::from_column_slice(&data.z0);
    for p in 0..data.phases() {
        let h = data.knot_step(p) / SUBSTEPS as f64;
        for k in 0..data.knots {
            if k > 0 {
                for _ in 0..SUBSTEPS {
                    z = rk4(params, &z, h)?;
                }
            }
            let iz = data.z_index(p, k);
            w[iz..iz + NZ].copy_from_slice(z.as_slice());
        }
        let d = footsteps
            .get(p)
            .copied()
            .flatten()
            .unwrap_or_else(|| data.nominal_step(z.as_slice()));
        w[data.d_index(p + 1)] = d;
        z[0] -= d * data.tangent[0];
        z[1] -= d * data.tangent[1];
    }
    if w.iter().all(|v| v.is_finite()) {
        Ok(w)
    } else {
        Err(Error::Singular("non-finite initial guess"))
    }
}

/// Constant-velocity guess used when forward simulation fails.
pub(crate) fn constant_velocity_guess(data: &ProblemData) -> Vec<f64> {
    let mut w = vec![0.0; data.num_vars()];
    let mut z = data.z0;
    for p in 0..data.phases() {
        let h = data.knot_step(p);
        for k in 0..data.knots {
            let iz = data.z_index(p, k);
            let t = k as f64 * h;
            w[iz] = z[0] + z[2] * t;
            w[iz + 1] = z[1] + z[3] * t;
            w[iz + 2] = z[2];
            w[iz + 3] = z[3];
        }
        let iend = data.z_index(p, data.knots - 1);
        let d = data.nominal_step(&w[iend..iend + NZ]);
        w[data.d_index(p + 1)] = d;
        z = [
            w[iend] - d * data.tangent[0],
            w[iend + 1] - d * data.tangent[1],
            z[2],
            z[3],
        ];
    }
    w
}

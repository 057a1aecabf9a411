//! Reduced-order CoM model: embedding, feature basis and linear-in-parameters
//! dynamics `ÿ = Θ φ(y, ẏ)`.
//!
//! The ROM state is the CoM position relative to the stance foot together
//! with its velocity. The last coordinate of `y` is the vertical one; every
//! other coordinate is horizontal. Features are all monomials of total degree
//! at most two in the stacked state `z = [y, ẏ]`, ordered graded
//! lexicographically, followed by one pendulum term `y_h / y_v` per
//! horizontal coordinate.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::biped::{BipedModel, FullState};
use crate::error::{Error, Result};

/// Default lower bound on `|y_v|` for evaluating the pendulum features.
pub const DEFAULT_HEIGHT_GUARD: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct RomState {
    pub y: Vec<f64>,
    pub ydot: Vec<f64>,
}

impl RomState {
    pub fn new(y: Vec<f64>, ydot: Vec<f64>) -> Self {
        debug_assert_eq!(y.len(), ydot.len());
        Self { y, ydot }
    }

    pub fn planar(y: [f64; 2], ydot: [f64; 2]) -> Self {
        Self::new(y.to_vec(), ydot.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.y.len()
    }

    /// Stacked state `[y, ẏ]`.
    pub fn to_z(&self) -> Vec<f64> {
        let mut z = self.y.clone();
        z.extend_from_slice(&self.ydot);
        z
    }

    pub fn from_z(z: &[f64]) -> Self {
        let n = z.len() / 2;
        Self::new(z[..n].to_vec(), z[n..].to_vec())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Monomial {
    Constant,
    Linear(usize),
    Quadratic(usize, usize),
}

impl Monomial {
    fn eval(self, z: &[f64]) -> f64 {
        match self {
            Monomial::Constant => 1.0,
            Monomial::Linear(i) => z[i],
            Monomial::Quadratic(i, j) => z[i] * z[j],
        }
    }

    /// Exponent tuple over the stacked state variables.
    pub fn exponents(self, nvars: usize) -> Vec<u8> {
        let mut e = vec![0u8; nvars];
        match self {
            Monomial::Constant => {}
            Monomial::Linear(i) => e[i] = 1,
            Monomial::Quadratic(i, j) => {
                e[i] += 1;
                e[j] += 1;
            }
        }
        e
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBasis {
    dim_y: usize,
    monomials: Vec<Monomial>,
    lip_term_count: usize,
    height_guard: f64,
}

/// Serializable descriptor of a feature basis, stored next to flattened
/// parameters in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisDescriptor {
    pub dim_y: usize,
    pub monomial_exponents: Vec<Vec<u8>>,
    pub lip_terms: usize,
    pub height_guard: f64,
}

/// Builds the degree-≤2 monomial basis plus pendulum terms.
pub fn build_feature_basis(dim_y: usize) -> Result<FeatureBasis> {
    if !(2..=3).contains(&dim_y) {
        return Err(Error::UnsupportedDimension(dim_y));
    }
    let nvars = 2 * dim_y;
    let mut monomials = vec![Monomial::Constant];
    monomials.extend((0..nvars).map(Monomial::Linear));
    for i in 0..nvars {
        for j in i..nvars {
            monomials.push(Monomial::Quadratic(i, j));
        }
    }
    Ok(FeatureBasis {
        dim_y,
        monomials,
        lip_term_count: dim_y - 1,
        height_guard: DEFAULT_HEIGHT_GUARD,
    })
}

impl FeatureBasis {
    pub fn dim_y(&self) -> usize {
        self.dim_y
    }

    pub fn state_dim(&self) -> usize {
        2 * self.dim_y
    }

    pub fn monomials(&self) -> &[Monomial] {
        &self.monomials
    }

    pub fn lip_term_count(&self) -> usize {
        self.lip_term_count
    }

    pub fn num_features(&self) -> usize {
        self.monomials.len() + self.lip_term_count
    }

    pub fn height_guard(&self) -> f64 {
        self.height_guard
    }

    pub fn with_height_guard(mut self, guard: f64) -> Self {
        self.height_guard = guard;
        self
    }

    /// Index of the pendulum feature for horizontal coordinate `axis`.
    pub fn lip_feature_index(&self, axis: usize) -> usize {
        assert!(axis < self.lip_term_count);
        self.monomials.len() + axis
    }

    fn check_height(&self, z: &[f64]) -> Result<f64> {
        let yv = z[self.dim_y - 1];
        if !yv.is_finite() || yv.abs() < self.height_guard {
            return Err(Error::DegenerateHeight {
                height: yv,
                min: self.height_guard,
            });
        }
        Ok(yv)
    }

    /// Feature vector at stacked state `z`, written into `out`.
    pub fn eval_into(&self, z: &[f64], out: &mut [f64]) -> Result<()> {
        debug_assert_eq!(z.len(), self.state_dim());
        debug_assert_eq!(out.len(), self.num_features());
        let yv = self.check_height(z)?;
        let nm = self.monomials.len();
        for (o, m) in out.iter_mut().zip(&self.monomials) {
            *o = m.eval(z);
        }
        for axis in 0..self.lip_term_count {
            out[nm + axis] = z[axis] / yv;
        }
        Ok(())
    }

    pub fn eval(&self, s: &RomState) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.num_features()];
        self.eval_into(&s.to_z(), &mut out)?;
        Ok(out)
    }

    /// Analytic Jacobian `∂φ/∂z`, shape `num_features × 2·dim_y`.
    pub fn jacobian(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        let yv = self.check_height(z)?;
        let iv = self.dim_y - 1;
        let mut jac = DMatrix::zeros(self.num_features(), self.state_dim());
        for (row, m) in self.monomials.iter().enumerate() {
            match *m {
                Monomial::Constant => {}
                Monomial::Linear(i) => jac[(row, i)] = 1.0,
                Monomial::Quadratic(i, j) => {
                    jac[(row, i)] += z[j];
                    jac[(row, j)] += z[i];
                }
            }
        }
        let nm = self.monomials.len();
        for axis in 0..self.lip_term_count {
            jac[(nm + axis, axis)] = 1.0 / yv;
            jac[(nm + axis, iv)] = -z[axis] / (yv * yv);
        }
        Ok(jac)
    }

    pub fn descriptor(&self) -> BasisDescriptor {
        let nvars = self.state_dim();
        BasisDescriptor {
            dim_y: self.dim_y,
            monomial_exponents: self.monomials.iter().map(|m| m.exponents(nvars)).collect(),
            lip_terms: self.lip_term_count,
            height_guard: self.height_guard,
        }
    }

    /// Rebuilds a basis from its descriptor, rejecting descriptors that do
    /// not match the canonical ordering.
    pub fn from_descriptor(d: &BasisDescriptor) -> Result<Self> {
        let basis = build_feature_basis(d.dim_y)?.with_height_guard(d.height_guard);
        if basis.descriptor() != *d {
            return Err(Error::Parse(
                "basis descriptor does not match the canonical monomial ordering".into(),
            ));
        }
        Ok(basis)
    }
}

pub fn eval_features(basis: &FeatureBasis, s: &RomState) -> Result<Vec<f64>> {
    basis.eval(s)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RomParams {
    /// `dim_y × num_features`.
    pub theta: DMatrix<f64>,
    pub basis: FeatureBasis,
    /// Dimension of the ROM input; always 0 here.
    pub input_dim: usize,
}

impl RomParams {
    pub fn zeros(basis: FeatureBasis) -> Self {
        Self {
            theta: DMatrix::zeros(basis.dim_y(), basis.num_features()),
            basis,
            input_dim: 0,
        }
    }

    pub fn dim_y(&self) -> usize {
        self.basis.dim_y()
    }

    pub fn num_params(&self) -> usize {
        self.theta.len()
    }

    /// Row-major flattening of Θ.
    pub fn flatten(&self) -> Vec<f64> {
        let (r, c) = self.theta.shape();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                out.push(self.theta[(i, j)]);
            }
        }
        out
    }

    pub fn unflatten(basis: FeatureBasis, flat: &[f64]) -> Result<Self> {
        let (r, c) = (basis.dim_y(), basis.num_features());
        if flat.len() != r * c {
            return Err(Error::ParameterLength {
                got: flat.len(),
                expected: r * c,
            });
        }
        Ok(Self {
            theta: DMatrix::from_row_slice(r, c, flat),
            basis,
            input_dim: 0,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|v| v.is_finite())
    }

    /// `ÿ` at stacked state `z`, written into `out` (length `dim_y`).
    pub fn accel_into(&self, z: &[f64], phi: &mut [f64], out: &mut [f64]) -> Result<()> {
        self.basis.eval_into(z, phi)?;
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.theta.row(i).iter().zip(phi.iter()).map(|(a, b)| a * b).sum();
        }
        Ok(())
    }

    pub fn accel_z(&self, z: &[f64]) -> Result<Vec<f64>> {
        let mut phi = vec![0.0; self.basis.num_features()];
        let mut out = vec![0.0; self.dim_y()];
        self.accel_into(z, &mut phi, &mut out)?;
        Ok(out)
    }

    /// `∂ÿ/∂z = Θ ∂φ/∂z`, shape `dim_y × 2·dim_y`.
    pub fn accel_jacobian(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        Ok(&self.theta * self.basis.jacobian(z)?)
    }
}

pub fn rom_accel(params: &RomParams, s: &RomState) -> Result<Vec<f64>> {
    params.accel_z(&s.to_z())
}

/// Planar LIP: `ÿ_h = g · y_h / y_v`, `ÿ_v = 0`.
pub fn lip_init(g: f64) -> RomParams {
    let basis = build_feature_basis(2).expect("planar basis");
    lip_init_with(basis, g)
}

pub fn lip_init_with(basis: FeatureBasis, g: f64) -> RomParams {
    let mut params = RomParams::zeros(basis);
    for axis in 0..params.basis.lip_term_count() {
        let col = params.basis.lip_feature_index(axis);
        params.theta[(axis, col)] = g;
    }
    params
}

/// CoM position relative to the stance foot and CoM velocity.
pub fn com_embedding(model: &BipedModel, x: &FullState, stance_foot: [f64; 2]) -> RomState {
    let com = model.com(&x.q);
    let vel = model.com_velocity(&x.q, &x.v);
    RomState::planar([com[0] - stance_foot[0], com[1] - stance_foot[1]], vel)
}

//! Dense strictly convex QP by the Goldfarb–Idnani dual active-set method:
//! `min ½xᵀHx + fᵀx` subject to `C x ≥ d`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// One multiplier per inequality row (zero when inactive).
    pub multipliers: DVector<f64>,
    pub active: Vec<usize>,
    pub iterations: usize,
}

const MAX_ITER: usize = 200;

fn qp_error(iterations: usize, reason: &str) -> Error {
    Error::Qp {
        iterations,
        reason: reason.to_string(),
    }
}

pub fn solve_qp(h: &DMatrix<f64>, f: &DVector<f64>, c: &DMatrix<f64>, d: &DVector<f64>) -> Result<QpSolution> {
    let n = h.nrows();
    let m = c.nrows();
    let chol: Cholesky<f64, Dyn> = h
        .clone()
        .cholesky()
        .ok_or_else(|| qp_error(0, "Hessian is not positive definite"))?;
    let hinv = chol.inverse();
    let mut x = -(&hinv * f);
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let scale = 1.0 + c.abs().max() * (1.0 + x.amax()) + d.amax();
    let tol = 1e-12 * scale;
    let mut iterations = 0;

    loop {
        // most violated inactive constraint
        let mut p = None;
        let mut worst = -tol;
        for j in 0..m {
            if active.contains(&j) {
                continue;
            }
            let s = c.row(j).dot(&x.transpose()) - d[j];
            if s < worst {
                worst = s;
                p = Some(j);
            }
        }
        let Some(p) = p else {
            let mut multipliers = DVector::zeros(m);
            for (j, &i) in active.iter().enumerate() {
                multipliers[i] = u[j];
            }
            return Ok(QpSolution {
                x,
                multipliers,
                active,
                iterations,
            });
        };
        let np = c.row(p).transpose();
        let mut u_new = 0.0;
        loop {
            iterations += 1;
            if iterations > MAX_ITER {
                return Err(qp_error(iterations, "iteration limit"));
            }
            let hn = &hinv * &np;
            let q = active.len();
            let (z, r) = if q == 0 {
                (hn, DVector::zeros(0))
            } else {
                let nmat = DMatrix::from_fn(n, q, |i, k| c[(active[k], i)]);
                let hinv_n = &hinv * &nmat;
                let w = nmat.transpose() * &hinv_n;
                let wchol = w
                    .cholesky()
                    .ok_or_else(|| qp_error(iterations, "active constraints are dependent"))?;
                let r = wchol.solve(&(hinv_n.transpose() * &np));
                (hn - hinv_n * &r, r)
            };
            // partial step: first active constraint whose multiplier hits zero
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for k in 0..q {
                if r[k] > 1e-14 {
                    let t = u[k] / r[k];
                    if t < t1 {
                        t1 = t;
                        drop = Some(k);
                    }
                }
            }
            let zn = z.dot(&np);
            let t2 = if z.amax() > 1e-14 && zn > 1e-14 {
                -(np.dot(&x) - d[p]) / zn
            } else {
                f64::INFINITY
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(qp_error(iterations, "constraints are infeasible"));
            }
            if t2.is_finite() {
                x += &z * t;
            }
            for k in 0..q {
                u[k] -= t * r[k];
            }
            u_new += t;
            if t2 <= t1 {
                active.push(p);
                u.push(u_new);
                break;
            }
            let k = drop.expect("partial step has a blocking constraint");
            active.remove(k);
            u.remove(k);
        }
    }
}

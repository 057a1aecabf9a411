//! Covariance matrix adaptation evolution strategy (rank-μ / rank-1 update with
//! cumulative step-size adaptation).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn default_popsize(n: usize) -> usize {
    4 + (3.0 * (n.max(1) as f64).ln()).floor() as usize
}

/// Strategy constants that depend only on `n` and the population size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CmaConstants {
    pub popsize: usize,
    pub mu: usize,
    pub weights: Vec<f64>,
    pub mueff: f64,
    pub cc: f64,
    pub cs: f64,
    pub c1: f64,
    pub cmu: f64,
    pub damps: f64,
    pub chi_n: f64,
}

impl CmaConstants {
    pub fn new(n: usize, popsize: usize) -> Self {
        let nf = n as f64;
        let mu = popsize / 2;
        let raw: Vec<f64> = (1..=mu).map(|i| (mu as f64 + 0.5).ln() - (i as f64).ln()).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mueff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let cc = (4.0 + mueff / nf) / (nf + 4.0 + 2.0 * mueff / nf);
        let cs = (mueff + 2.0) / (nf + mueff + 5.0);
        let c1 = 2.0 / ((nf + 1.3).powi(2) + mueff);
        let cmu = (1.0 - c1).min(2.0 * (mueff - 2.0 + 1.0 / mueff) / ((nf + 2.0).powi(2) + mueff));
        let damps = 1.0 + 2.0 * (((mueff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + cs;
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
        Self {
            popsize,
            mu,
            weights,
            mueff,
            cc,
            cs,
            c1,
            cmu,
            damps,
            chi_n,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    /// ChaCha word position, as a decimal string (it is a u128).
    pub word_pos: String,
}

impl RngState {
    fn capture(seed: u64, rng: &ChaCha8Rng) -> Self {
        Self {
            seed,
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    fn restore(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Parse(format!("bad RNG word position {:?}", self.word_pos)))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

/// Full optimizer state. The eigendecomposition of `C` is not stored; it is
/// recomputed on demand so a deserialized state behaves identically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CmaState {
    pub dim: usize,
    pub mean: Vec<f64>,
    pub sigma: f64,
    /// Row-major `dim × dim`.
    pub covariance: Vec<f64>,
    pub path_sigma: Vec<f64>,
    pub path_c: Vec<f64>,
    pub generation: usize,
    pub constants: CmaConstants,
    pub rng: RngState,
}

struct Eigen {
    /// Columns are eigenvectors.
    basis: DMatrix<f64>,
    /// Square roots of the eigenvalues.
    scales: DVector<f64>,
}

pub fn cmaes_init(theta0: &[f64], sigma0: f64, seed: u64) -> Result<CmaState> {
    cmaes_init_with(theta0, sigma0, seed, default_popsize(theta0.len()))
}

pub fn cmaes_init_with(theta0: &[f64], sigma0: f64, seed: u64, popsize: usize) -> Result<CmaState> {
    let n = theta0.len();
    if n == 0 {
        return Err(Error::config("theta0", "parameter vector is empty"));
    }
    if !(sigma0 > 0.0 && sigma0.is_finite()) {
        return Err(Error::config(
            "sigma0",
            format!("must be positive and finite, got {sigma0}"),
        ));
    }
    if popsize < 2 {
        return Err(Error::config("popsize", format!("must be at least 2, got {popsize}")));
    }
    if theta0.iter().any(|v| !v.is_finite()) {
        return Err(Error::config("theta0", "contains non-finite entries"));
    }
    let mut covariance = vec![0.0; n * n];
    for i in 0..n {
        covariance[i * n + i] = 1.0;
    }
    let rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(CmaState {
        dim: n,
        mean: theta0.to_vec(),
        sigma: sigma0,
        covariance,
        path_sigma: vec![0.0; n],
        path_c: vec![0.0; n],
        generation: 0,
        constants: CmaConstants::new(n, popsize),
        rng: RngState::capture(seed, &rng),
    })
}

impl CmaState {
    pub fn popsize(&self) -> usize {
        self.constants.popsize
    }

    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.covariance)
    }

    fn eigen(&self) -> Eigen {
        let c = self.covariance_matrix();
        let eig = SymmetricEigen::new(c);
        Eigen {
            basis: eig.eigenvectors,
            scales: eig.eigenvalues.map(|l| l.max(0.0).sqrt()),
        }
    }

    /// Smallest eigenvalue of the covariance.
    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.covariance_matrix())
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim;
        if self.mean.len() != n
            || self.covariance.len() != n * n
            || self.path_sigma.len() != n
            || self.path_c.len() != n
        {
            return Err(Error::Parse("CMA-ES state has inconsistent dimensions".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Parse(format!("CMA-ES step size {} is not positive", self.sigma)));
        }
        if self.constants != CmaConstants::new(n, self.constants.popsize) {
            return Err(Error::Parse("CMA-ES strategy constants do not match dimension".into()));
        }
        self.rng.restore()?;
        Ok(())
    }
}

/// Draws `popsize` samples `mean + σ B D z`. Advances the stored RNG.
pub fn cmaes_ask(state: &mut CmaState) -> Result<Vec<Vec<f64>>> {
    let n = state.dim;
    let mut rng = state.rng.restore()?;
    let eig = state.eigen();
    let mut out = Vec::with_capacity(state.popsize());
    for _ in 0..state.popsize() {
        let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let y = &eig.basis * z.component_mul(&eig.scales);
        out.push((0..n).map(|i| state.mean[i] + state.sigma * y[i]).collect());
    }
    state.rng = RngState::capture(state.rng.seed, &rng);
    Ok(out)
}

/// Indices of `fitness` from best to worst. Ties keep sample order.
fn ranking(fitness: &[f64], maximize: bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..fitness.len()).collect();
    idx.sort_by(|&a, &b| {
        let ord = fitness[a].partial_cmp(&fitness[b]).expect("finite fitness");
        if maximize {
            ord.reverse()
        } else {
            ord
        }
    });
    idx
}

pub fn cmaes_tell(state: &mut CmaState, samples: &[Vec<f64>], fitness: &[f64], maximize: bool) -> Result<()> {
    let n = state.dim;
    let lambda = state.popsize();
    if samples.len() != lambda || fitness.len() != lambda || samples.iter().any(|s| s.len() != n) {
        return Err(Error::PopulationMismatch {
            samples: samples.len(),
            fitnesses: fitness.len(),
            popsize: lambda,
        });
    }
    if let Some(index) = fitness.iter().position(|f| !f.is_finite()) {
        return Err(Error::NonFiniteFitness {
            index,
            value: fitness[index],
        });
    }
    let k = &state.constants;
    let order = ranking(fitness, maximize);
    let old_mean = DVector::from_column_slice(&state.mean);
    let sigma = state.sigma;

    let steps: Vec<DVector<f64>> = order[..k.mu]
        .iter()
        .map(|&i| (DVector::from_column_slice(&samples[i]) - &old_mean) / sigma)
        .collect();
    let mut y_w = DVector::zeros(n);
    for (w, y) in k.weights.iter().zip(&steps) {
        y_w += *w * y;
    }
    let new_mean = &old_mean + sigma * &y_w;

    // C^{-1/2} y_w through the eigendecomposition.
    let eig = state.eigen();
    let mut whitened = eig.basis.transpose() * &y_w;
    for i in 0..n {
        whitened[i] /= eig.scales[i].max(1e-300);
    }
    let c_inv_sqrt_y = &eig.basis * whitened;

    let mut ps = DVector::from_column_slice(&state.path_sigma);
    ps = (1.0 - k.cs) * ps + (k.cs * (2.0 - k.cs) * k.mueff).sqrt() * c_inv_sqrt_y;
    let ps_norm = ps.norm();
    let gen = (state.generation + 1) as f64;
    let hsig = ps_norm / (1.0 - (1.0 - k.cs).powf(2.0 * gen)).sqrt() / k.chi_n < 1.4 + 2.0 / (n as f64 + 1.0);
    let hsig_f = if hsig { 1.0 } else { 0.0 };

    let mut pc = DVector::from_column_slice(&state.path_c);
    pc = (1.0 - k.cc) * pc + hsig_f * (k.cc * (2.0 - k.cc) * k.mueff).sqrt() * &y_w;

    let c_old = state.covariance_matrix();
    let decay = 1.0 - k.c1 - k.cmu + (1.0 - hsig_f) * k.c1 * k.cc * (2.0 - k.cc);
    let mut c = decay * c_old + k.c1 * &pc * pc.transpose();
    for (w, y) in k.weights.iter().zip(&steps) {
        c += (k.cmu * w) * y * y.transpose();
    }
    // Exact symmetry.
    for i in 0..n {
        for j in (i + 1)..n {
            let s = 0.5 * (c[(i, j)] + c[(j, i)]);
            c[(i, j)] = s;
            c[(j, i)] = s;
        }
    }

    let new_sigma = sigma * ((k.cs / k.damps) * (ps_norm / k.chi_n - 1.0)).exp();

    state.mean = new_mean.iter().cloned().collect();
    state.path_sigma = ps.iter().cloned().collect();
    state.path_c = pc.iter().cloned().collect();
    let mut flat = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            flat.push(c[(i, j)]);
        }
    }
    state.covariance = flat;
    state.sigma = new_sigma.clamp(1e-300, 1e300);
    state.generation += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn popsize_formula() {
        assert_eq!(default_popsize(90), 17);
        assert_eq!(default_popsize(1), 4);
        assert_eq!(default_popsize(32), 14);
        assert_eq!(default_popsize(10), 10);
    }

    #[test]
    fn init_state() {
        let s = cmaes_init(&[1.0, 2.0, 3.0], 1e-3, 0).unwrap();
        assert_eq!(s.sigma, 1e-3);
        assert_eq!(s.covariance_matrix(), DMatrix::identity(3, 3));
        assert!(cmaes_init(&[1.0], 0.0, 0).is_err());
        assert!(cmaes_init(&[1.0], -1.0, 0).is_err());
    }

    #[test]
    fn weights_are_normalized_and_decreasing() {
        let k = CmaConstants::new(90, 17);
        assert_eq!(k.mu, 8);
        assert!((k.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(k.weights.windows(2).all(|w| w[0] > w[1]));
        assert!(k.mueff > 1.0 && k.mueff < 8.0);
    }

    #[test]
    fn ask_is_deterministic_and_advances() {
        let mut a = cmaes_init(&[0.0; 4], 1.0, 11).unwrap();
        let mut b = a.clone();
        let sa = cmaes_ask(&mut a).unwrap();
        let sb = cmaes_ask(&mut b).unwrap();
        assert_eq!(sa, sb);
        assert_eq!(sa.len(), default_popsize(4));
        let next = cmaes_ask(&mut a).unwrap();
        assert_ne!(sa, next);
    }

    #[test]
    fn non_finite_fitness_is_reported() {
        let mut s = cmaes_init(&[0.0; 3], 1.0, 0).unwrap();
        let x = cmaes_ask(&mut s).unwrap();
        let mut f = vec![1.0; x.len()];
        f[2] = f64::NAN;
        match cmaes_tell(&mut s, &x, &f, false) {
            Err(Error::NonFiniteFitness { index, .. }) => assert_eq!(index, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            cmaes_tell(&mut s, &x[..2], &f[..2], false),
            Err(Error::PopulationMismatch { .. })
        ));
    }
}

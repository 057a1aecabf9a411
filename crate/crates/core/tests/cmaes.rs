mod support;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use romshaper::cmaes::{cmaes_ask, cmaes_init, cmaes_init_with, cmaes_tell, CmaState};
use support::{minimize, rosenbrock, sphere};

#[test]
fn sphere_10d() {
    let mut ok = 0;
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let opt: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        if minimize(|x| sphere(x, &opt), &[0.0; 10], 0.5, seed, 1e-9, 2000).is_some() {
            ok += 1;
        }
    }
    assert!(ok >= 9, "{ok}/10 runs reached 1e-9");
}

#[test]
fn rosenbrock_10d() {
    let mut ok = 0;
    for seed in 0..10 {
        if minimize(rosenbrock, &[0.0; 10], 0.5, seed, 1e-6, 50_000).is_some() {
            ok += 1;
        }
    }
    assert!(ok >= 9, "{ok}/10 runs reached 1e-6");
}

#[test]
fn first_samples_centre_on_the_mean() {
    let theta0 = [0.3, -1.2, 5.0];
    let sigma = 0.7;
    let mut s = cmaes_init_with(&theta0, sigma, 5, 100).unwrap();
    let draws = 100_000;
    let mut sum = [0.0; 3];
    for _ in 0..draws / 100 {
        for x in cmaes_ask(&mut s).unwrap() {
            for i in 0..3 {
                sum[i] += x[i];
            }
        }
    }
    let tol = 3.0 * sigma / (draws as f64).sqrt();
    for i in 0..3 {
        assert!((sum[i] / draws as f64 - theta0[i]).abs() < tol);
    }
}

#[test]
fn tiny_sigma_collapses_samples() {
    let mut s = cmaes_init(&[1.0, 2.0], 1e-300, 0).unwrap();
    for x in cmaes_ask(&mut s).unwrap() {
        assert_eq!(x, vec![1.0, 2.0]);
    }
}

#[test]
fn equal_fitness_keeps_state_finite() {
    let mut s = cmaes_init(&[0.0; 5], 0.3, 1).unwrap();
    for _ in 0..50 {
        let xs = cmaes_ask(&mut s).unwrap();
        let fs = vec![1.0; xs.len()];
        cmaes_tell(&mut s, &xs, &fs, false).unwrap();
    }
    assert!(s.sigma.is_finite() && s.sigma > 0.0);
    assert!(s.mean.iter().all(|v| v.is_finite()));
    assert!(s.min_eigenvalue() > 0.0);
}

fn run(mut s: CmaState, f: &dyn Fn(&[f64]) -> f64, transform: &dyn Fn(f64) -> f64, maximize: bool) -> CmaState {
    for _ in 0..20 {
        let xs = cmaes_ask(&mut s).unwrap();
        let fs: Vec<f64> = xs.iter().map(|x| transform(f(x))).collect();
        cmaes_tell(&mut s, &xs, &fs, maximize).unwrap();
    }
    s
}

#[test]
fn maximize_equals_minimizing_the_negation() {
    let s0 = cmaes_init(&[1.0, -1.0, 0.5], 0.2, 9).unwrap();
    let f = |x: &[f64]| rosenbrock(x);
    let a = run(s0.clone(), &f, &|v| v, false);
    let b = run(s0, &f, &|v| -v, true);
    assert_eq!(a, b);
}

#[test]
fn state_survives_serialization() {
    let mut s = cmaes_init(&[0.0; 4], 0.5, 3).unwrap();
    let f = |x: &[f64]| sphere(x, &[1.0; 4]);
    s = run(s, &f, &|v| v, false);
    let json = serde_json::to_string(&s).unwrap();
    let back: CmaState = serde_json::from_str(&json).unwrap();
    assert_eq!(back, s);
    let a = run(s, &f, &|v| v, false);
    let b = run(back, &f, &|v| v, false);
    assert_eq!(a, b);
}

proptest! {
    #[test]
    fn rank_invariance(seed in 0u64..1000, scale in 0.1f64..10.0, shift in -100.0f64..100.0) {
        let s0 = cmaes_init(&[0.5, -0.5, 1.0, 0.0], 0.3, seed).unwrap();
        let f = |x: &[f64]| rosenbrock(x);
        let a = run(s0.clone(), &f, &|v| v, false);
        let b = run(s0.clone(), &f, &|v| scale * v.powi(3) + shift, false);
        let c = run(s0, &f, &|v| (1.0 + v).ln(), false);
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(&a, &c);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]
    #[test]
    fn covariance_stays_symmetric_positive_definite(
        seed in any::<u64>(),
        dim in 2usize..6,
        sigma in 1e-3f64..2.0,
        fitness_seed in any::<u64>(),
    ) {
        let mut s = cmaes_init(&vec![0.0; dim], sigma, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(fitness_seed);
        for _ in 0..3 {
            let xs = cmaes_ask(&mut s).unwrap();
            let fs: Vec<f64> = xs.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
            cmaes_tell(&mut s, &xs, &fs, false).unwrap();
        }
        let c = s.covariance_matrix();
        prop_assert!((&c - c.transpose()).amax() < 1e-12);
        prop_assert!(s.min_eigenvalue() > 0.0);
        prop_assert!(s.sigma > 0.0);
    }
}

mod support;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use romshaper::osc::{osc_solve, solve_qp};
use support::{affine, brute_force_qp, friction_ok, output_map, outputs, scenario, torque_qp_oracle};

#[test]
fn feasible_targets_are_tracked_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut done = 0;
    let mut tries = 0;
    while done < 100 {
        tries += 1;
        assert!(tries < 10_000);
        let s = scenario(&mut rng);
        let limits = s.model.torque_limits();
        let u_star = DVector::from_fn(4, |i, _| rng.random_range(-0.6..0.6) * limits[i]);
        let (gv, v0, gl, l0) = affine(&s);
        let lambda = &gl * &u_star + &l0;
        if !friction_ok(&s.model, &lambda, 1.0) {
            continue;
        }
        let (a, b) = output_map(&s);
        let des = &a * (&gv * &u_star + &v0) + &b;
        let sol = osc_solve(&s.model, &s.x, &outputs(&des, [10.0, 2.0, 0.5]), &s.contact, 0.0).unwrap();
        for (d, got) in sol.desired_accel.iter().zip(&sol.achieved_accel) {
            assert!((d - got).abs() < 1e-6, "desired {d}, achieved {got}");
        }
        assert!(sol.dynamics_residual <= 1e-8, "residual {}", sol.dynamics_residual);
        for i in 0..4 {
            assert!((sol.u.u[i] - u_star[i]).abs() < 1e-6 * (1.0 + u_star[i].abs()));
        }
        done += 1;
    }
}

#[test]
fn saturating_targets_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let reg = 1e-4;
    let weights = [10.0, 2.0, 0.5];
    let mut saturated = 0;
    for _ in 0..60 {
        let s = scenario(&mut rng);
        let limits = s.model.torque_limits();
        // well outside the torque box in at least one coordinate
        let u_far = DVector::from_fn(4, |i, _| rng.random_range(-3.0..3.0) * limits[i]);
        let (gv, v0, _, _) = affine(&s);
        let (a, b) = output_map(&s);
        let des = &a * (&gv * &u_far + &v0) + &b;
        let sol = osc_solve(&s.model, &s.x, &outputs(&des, weights), &s.contact, reg).unwrap();
        let (oracle, active) = torque_qp_oracle(&s, &des, weights, reg);
        if active {
            saturated += 1;
        }
        for i in 0..4 {
            assert!(
                (sol.u.u[i] - oracle[i]).abs() < 1e-6 * (1.0 + oracle[i].abs()),
                "u[{i}] = {} vs oracle {}",
                sol.u.u[i],
                oracle[i]
            );
        }
        assert!(sol.dynamics_residual <= 1e-8);
    }
    assert!(saturated >= 30, "only {saturated} scenarios hit a constraint");
}

#[test]
fn qp_solver_matches_enumeration_on_random_problems() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..200 {
        let l = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let h = &l * l.transpose() + DMatrix::identity(4, 4) * 0.1;
        let f = DVector::from_fn(4, |_, _| rng.random_range(-5.0..5.0));
        let mut c = DMatrix::zeros(8, 4);
        let mut d = DVector::zeros(8);
        for i in 0..4 {
            c[(2 * i, i)] = 1.0;
            c[(2 * i + 1, i)] = -1.0;
            d[2 * i] = -1.0;
            d[2 * i + 1] = -1.0;
        }
        let got = solve_qp(&h, &f, &c, &d).unwrap();
        let want = brute_force_qp(&h, &f, &c, &d);
        assert!((got.x - want).amax() < 1e-9);
    }
}

mod support;

use nalgebra::SymmetricEigen;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use romshaper::biped::{
    impact_map, integrate_step, kinetic_energy, total_energy, BipedModel, ContactMode, FullState, Leg, TorqueCommand,
    Vec7,
};
use romshaper::rollout::{rollout, RolloutSetup};
use romshaper::rom::lip_init;
use romshaper::Task;
use support::{random_q, random_v, synchronized_energy, thrown_state};

#[test]
fn mass_matrix_is_spd() {
    let model = BipedModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let m = model.mass_matrix(&random_q(&mut rng));
        assert!((m - m.transpose()).amax() < 1e-12);
        let min = SymmetricEigen::new(m).eigenvalues.min();
        assert!(min > 0.0, "min eigenvalue {min}");
    }
}

#[test]
fn mass_derivative_minus_twice_coriolis_is_skew() {
    let model = BipedModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let eps = 1e-6;
    for _ in 0..200 {
        let q = random_q(&mut rng);
        let v = random_v(&mut rng, 2.0);
        let mdot = (model.mass_matrix(&(q + v * eps)) - model.mass_matrix(&(q - v * eps))) / (2.0 * eps);
        let n = mdot - 2.0 * model.coriolis_matrix(&q, &v);
        let skew = (n + n.transpose()).amax();
        assert!(skew < 1e-6 * (1.0 + mdot.amax()), "symmetric part {skew}");
    }
}

#[test]
fn flight_energy_is_conserved() {
    let model = BipedModel::default();
    let dt = 1e-3;
    let mut x = thrown_state(&model);
    let e0 = synchronized_energy(&model, &x, dt);
    let flight = ContactMode::flight();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        x = integrate_step(&model, &x, &TorqueCommand::zero(), &flight, dt).unwrap();
        worst = worst.max((synchronized_energy(&model, &x, dt) - e0).abs() / e0.abs());
    }
    assert!(worst < 1e-3, "relative energy drift {worst}");
}

#[test]
fn unsynchronized_energy_loses_the_euler_bias() {
    // With velocities read off the stored state, each step loses exactly
    // m g² dt² / 2 to the first-order position update.
    let model = BipedModel::default();
    let dt = 1e-3;
    let mut x = thrown_state(&model);
    // pure translation, so every body sees exactly gravity
    x.v = Vec7::from_column_slice(&[0.4, 4.9, 0.0, 0.0, 0.0, 0.0, 0.0]);
    let e0 = total_energy(&model, &x);
    for _ in 0..1000 {
        x = integrate_step(&model, &x, &TorqueCommand::zero(), &ContactMode::flight(), dt).unwrap();
    }
    let predicted = -0.5 * model.total_mass() * model.gravity.powi(2) * dt * dt * 1000.0;
    let drift = total_energy(&model, &x) - e0;
    assert!((drift - predicted).abs() < 1e-9, "{drift} vs {predicted}");
}

#[test]
fn impacts_never_add_kinetic_energy() {
    let model = BipedModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for k in 0..1000 {
        let x = FullState::new(random_q(&mut rng), random_v(&mut rng, 2.0), 0.0);
        let leg = if k % 2 == 0 { Leg::Left } else { Leg::Right };
        let before = kinetic_energy(&model, &x);
        let after_state = impact_map(&model, &x, leg).unwrap();
        let after = kinetic_energy(&model, &after_state);
        assert!(after <= before * (1.0 + 1e-12) + 1e-12, "{before} -> {after}");
        let fv = model.foot_velocity(&after_state.q, &after_state.v, leg);
        assert!(fv[0].abs() < 1e-9 && fv[1].abs() < 1e-9);
    }
}

#[test]
fn stance_contact_does_not_add_energy() {
    // Unactuated stance: the contact is workless and limits only dissipate.
    let model = BipedModel::default();
    let mut x = model.standing_state(0.9, 0.1);
    x.v[0] = 0.2;
    let anchor = model.foot(&x.q, Leg::Left);
    let c = ContactMode::single(Leg::Left, anchor);
    let e0 = total_energy(&model, &x);
    for _ in 0..200 {
        x = integrate_step(&model, &x, &TorqueCommand::zero(), &c, 1e-3).unwrap();
        assert!(total_energy(&model, &x) <= e0 * (1.0 + 1e-3));
    }
}

#[test]
fn stance_foot_holds_during_nominal_walk() {
    let setup = RolloutSetup::default();
    let trace = rollout(&lip_init(9.81), Task::new(0.1, 0.0), &setup);
    assert!(trace.completed());
    let model = &setup.model;
    let ticks_per_step = 7;
    let mut worst: f64 = 0.0;
    for step in 0..trace.ticks.len() / ticks_per_step {
        let leg = if step % 2 == 0 { Leg::Left } else { Leg::Right };
        // the step's first snapshot precedes its touchdown
        let lo = step * ticks_per_step + 1;
        let hi = ((step + 1) * ticks_per_step).min(trace.ticks.len() - 1);
        let feet: Vec<[f64; 2]> = (lo..=hi).map(|k| model.foot(&trace.ticks[k].state.q, leg)).collect();
        for a in &feet {
            for b in &feet {
                worst = worst.max(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt());
            }
        }
    }
    assert!(worst < 1e-3, "stance foot moved {worst} m");
}

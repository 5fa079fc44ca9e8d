//! Measurement models against finite differences and closed forms.

mod common;

use std::sync::Arc;

use common::*;
use gbplan_core::factors::{
    dynamics_covariance, dynamics_factor, dynamics_precision, interrobot_factor, obstacle_factor, pose_factor,
    FactorDef,
};
use gbplan_core::sdf::Bounds;
use gbplan_core::{FactorParams, Polygon, RobotState, SdfGrid};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-6;
const TOL: f64 = 1e-5;

fn params(radius: f64) -> FactorParams {
    FactorParams {
        sigma_p: 1e-15,
        sigma_d: 1.0,
        sigma_o: 0.005,
        sigma_r: 0.005,
        robot_radius: radius,
        epsilon: 1.0,
        comm_radius: 50.0,
    }
}

fn check_jacobian(def: &FactorDef, x: &DVector<f64>) {
    let analytic = def.model.jacobian(x);
    let numeric = numeric_jacobian(|p| def.model.measure(p), x, STEP);
    let err = relative_error(&analytic, &numeric);
    assert!(
        err < TOL,
        "jacobian error {err} at {x}\nanalytic {analytic}\nnumeric {numeric}"
    );
}

#[test]
fn pose_jacobian() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let anchor = RobotState::from_slice(random_vector(&mut rng, 4, 50.0).as_slice());
        check_jacobian(&pose_factor(&anchor, 1.0), &random_vector(&mut rng, 4, 50.0));
    }
}

#[test]
fn dynamics_jacobian() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let dt = rng.gen_range(0.01..3.0);
        check_jacobian(&dynamics_factor(dt, 1.0), &random_vector(&mut rng, 8, 50.0));
    }
}

/// Half-plane obstacle `x ≤ 0`: the distance field is linear in the strip
/// used below, so bilinear sampling is exact and the numeric derivative is
/// well defined.
fn wall_field() -> Arc<SdfGrid> {
    let wall = Polygon::rect([-200.0, -200.0], [0.0, 200.0]);
    Arc::new(SdfGrid::build(
        &[wall],
        Bounds {
            min: [-20.0, -20.0],
            max: [20.0, 20.0],
        },
        0.25,
    ))
}

#[test]
fn obstacle_jacobian() {
    let sdf = wall_field();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let radius = 2.0;
    let def = obstacle_factor(sdf, radius, 0.005);
    for _ in 0..100 {
        let x = DVector::from_vec(vec![
            rng.gen_range(0.05..radius - 0.05),
            rng.gen_range(-15.0..15.0),
            rng.gen_range(-10.0..10.0),
            rng.gen_range(-10.0..10.0),
        ]);
        check_jacobian(&def, &x);
    }
    // one metre from the wall with a two metre radius
    let x = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
    assert!((def.model.measure(&x)[0] - 0.5).abs() < 1e-9);
    check_jacobian(&def, &x);
}

#[test]
fn obstacle_jacobian_vanishes_out_of_range() {
    let def = obstacle_factor(wall_field(), 2.0, 0.005);
    let x = DVector::from_vec(vec![5.0, 1.0, 0.0, 0.0]);
    assert_eq!(def.model.jacobian(&x), DMatrix::zeros(1, 4));
    assert_eq!(def.model.measure(&x)[0], 0.0);
}

#[test]
fn interrobot_jacobian() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = params(2.5);
    let def = interrobot_factor(0.5, &p);
    let r_star = p.critical_distance();
    for _ in 0..100 {
        let d = rng.gen_range(0.2..r_star - 0.05);
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let a = random_vector(&mut rng, 4, 30.0);
        let mut x = DVector::zeros(8);
        x.rows_mut(0, 4).copy_from(&a);
        x[4] = a[0] - d * angle.cos();
        x[5] = a[1] - d * angle.sin();
        x[6] = rng.gen_range(-10.0..10.0);
        x[7] = rng.gen_range(-10.0..10.0);
        check_jacobian(&def, &x);
        let expected = 1.0 - d / r_star;
        assert!((def.model.measure(&x)[0] - expected).abs() < 1e-9);
    }
}

#[test]
fn dynamics_precision_inverts_the_process_covariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let dt = rng.gen_range(0.01..5.0);
        let sigma = rng.gen_range(0.05..5.0);
        let product = dynamics_precision(dt, sigma) * dynamics_covariance(dt, sigma);
        let err = (product - DMatrix::<f64>::identity(4, 4)).amax();
        assert!(err < 1e-9, "dt={dt} sigma={sigma}: error {err}");
    }
}

#[test]
fn linear_likelihoods_do_not_depend_on_the_linearization_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let def = dynamics_factor(0.3, 0.5);
    let (eta0, lam0) = def.likelihood_at(&DVector::zeros(8));
    for _ in 0..10 {
        let (eta, lam) = def.likelihood_at(&random_vector(&mut rng, 8, 20.0));
        assert!((eta - &eta0).amax() < 1e-6 * eta0.amax().max(1.0));
        assert!(relative_error(&lam, &lam0) < 1e-12);
    }
}

mod common;

use lanerisk::dynamics::{
    continuous_dynamics, jacobians, linearize, step_affine, step_truth, BicycleParams, ControlInput, VehicleState,
};
use nalgebra::Matrix4;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const P: BicycleParams = BicycleParams { lf: 1.5, lr: 1.5 };

fn random_state(rng: &mut impl Rng) -> VehicleState {
    VehicleState::new(
        rng.gen_range(-50.0..200.0),
        rng.gen_range(0.0..15.75),
        rng.gen_range(-1.2..1.2),
        rng.gen_range(0.0..40.0),
    )
}

#[test]
fn analytic_jacobians_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let state = random_state(&mut rng);
        for input in [ControlInput::ZERO, ControlInput::new(rng.gen_range(-9.0..6.0), rng.gen_range(-0.52..0.52))] {
            let (jx, ju) = jacobians(&state, &input, &P);
            let (fx, fu) = common::fd_jacobians(&state, &input, &P, 1e-6);
            worst = worst.max((jx - fx).amax()).max((ju - fu).amax());
        }
    }
    assert!(worst < 1e-6, "worst deviation {worst:e}");
}

#[test]
fn discrete_matrices_are_euler_of_jacobians() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let state = random_state(&mut rng);
        let lm = linearize(&state, &P, 0.2);
        let (fx, fu) = common::fd_jacobians(&state, &ControlInput::ZERO, &P, 1e-6);
        assert!((lm.a - (Matrix4::identity() + fx * 0.2)).amax() < 1e-6 * 0.2 + 1e-12);
        assert!((lm.b - fu * 0.2).amax() < 1e-6 * 0.2 + 1e-12);
    }
}

#[test]
fn affine_model_error_is_second_order_in_dt() {
    // Acceleration enters linearly, so from the linearization point the
    // affine step is the Euler step and its one-step error scales with dt^2.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let state = VehicleState::new(0.0, 5.0, rng.gen_range(-0.5..0.5), rng.gen_range(5.0..30.0));
        let input = ControlInput::new(rng.gen_range(-3.0..3.0), 0.0);
        let err = |dt: f64| {
            let lm = linearize(&state, &P, dt);
            let a = step_affine(&lm, &state, &input).to_vector();
            let t = step_truth(&state, &input, &P, dt, 8).to_vector();
            (a - t).amax()
        };
        let (e1, e2) = (err(0.02), err(0.01));
        let ratio = e1 / e2;
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio} ({e1:e} vs {e2:e})");
    }
}

#[test]
fn affine_model_error_is_quadratic_in_state_offset() {
    let state = VehicleState::new(10.0, 7.875, 0.1, 20.0);
    let lm = linearize(&state, &P, 0.2);
    let dir = VehicleState::new(0.3, -0.2, 0.05, 1.0).to_vector();
    let err = |eps: f64| {
        let x = VehicleState::from_vector(&(state.to_vector() + dir * eps));
        let euler = x.to_vector() + continuous_dynamics(&x, &ControlInput::ZERO, &P) * 0.2;
        (step_affine(&lm, &x, &ControlInput::ZERO).to_vector() - euler).amax()
    };
    let ratio = err(0.1) / err(0.05);
    assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
}

proptest! {
    #[test]
    fn affine_step_is_exact_at_linearization_point(
        psi in -1.2f64..1.2, v in 0.0f64..70.0, y in 0.0f64..15.0, dt in 0.01f64..0.5,
    ) {
        let state = VehicleState::new(3.0, y, psi, v);
        let lm = linearize(&state, &P, dt);
        let next = step_affine(&lm, &state, &ControlInput::ZERO).to_vector();
        let euler = state.to_vector() + continuous_dynamics(&state, &ControlInput::ZERO, &P) * dt;
        prop_assert!((next - euler).amax() < 1e-9);
    }

    #[test]
    fn truth_step_conserves_speed_without_acceleration(
        psi in -1.2f64..1.2, v in 0.0f64..40.0, steer in -0.52f64..0.52,
    ) {
        let s = step_truth(&VehicleState::new(0.0, 0.0, psi, v), &ControlInput::new(0.0, steer), &P, 0.2, 2);
        prop_assert!((s.v - v).abs() < 1e-12);
        prop_assert!(s.x.hypot(s.y) <= v * 0.2 + 1e-9);
    }
}

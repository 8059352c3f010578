use lanerisk::dynamics::{linearize, step_affine, BicycleParams, ControlInput, VehicleState};
use lanerisk::mpc::{
    assemble_qp, build_reference, ellipse_margin, rollout, solve_ocp, OcpConfig, SafetyEllipse, TvPrediction,
};
use lanerisk::qpsolver::{solve_qp, QpSettings, QpStatus};
use proptest::prelude::*;

const P: BicycleParams = BicycleParams { lf: 1.5, lr: 1.5 };

fn lead_vehicle(x: f64, y: f64, v: f64, lateral: f64) -> TvPrediction {
    TvPrediction { positions: (0..=10).map(|k| (x + v * 0.2 * k as f64, y + lateral * k as f64)).collect() }
}

fn check_solution(
    initial: &VehicleState,
    tv: Option<&TvPrediction>,
    ellipse: &SafetyEllipse,
    cfg: &OcpConfig,
) -> Result<(), TestCaseError> {
    let model = linearize(initial, &P, cfg.dt);
    let reference = build_reference(cfg, 7.875, 20.0, initial.x);
    let sol = solve_ocp(initial, &model, &reference, tv, ellipse, cfg, None).unwrap();
    prop_assert_eq!(sol.states[0], *initial);
    prop_assert_eq!(sol.inputs.len(), cfg.horizon);
    for (k, u) in sol.inputs.iter().enumerate() {
        let next = step_affine(&model, &sol.states[k], u);
        prop_assert!((next.to_vector() - sol.states[k + 1].to_vector()).amax() < 1e-8);
        prop_assert!(u.accel >= cfg.a_bounds[0] && u.accel <= cfg.a_bounds[1]);
        prop_assert!(u.steer >= cfg.delta_bounds[0] && u.steer <= cfg.delta_bounds[1]);
    }
    for s in &sol.states[1..] {
        prop_assert!(s.y >= cfg.y_bounds[0] - 1e-6 && s.y <= cfg.y_bounds[1] + 1e-6, "y {}", s.y);
        prop_assert!(s.psi >= cfg.psi_bounds[0] - 1e-6 && s.psi <= cfg.psi_bounds[1] + 1e-6);
        prop_assert!(s.v >= cfg.v_bounds[0] - 1e-6 && s.v <= cfg.v_bounds[1] + 1e-6);
    }
    if let Some(tv) = tv {
        if sol.converged {
            for k in 1..=cfg.horizon {
                let (dx, dy) = (sol.states[k].x - tv.positions[k].0, sol.states[k].y - tv.positions[k].1);
                let m = ellipse_margin(dx, dy, ellipse);
                prop_assert!(m >= -sol.max_slack - 1e-6, "k={} margin {} slack {}", k, m, sol.max_slack);
            }
        }
    } else {
        prop_assert!(sol.converged && sol.scp_iterations <= 2);
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn solutions_respect_dynamics_boxes_and_safety(
        y in 4.0f64..11.0, psi in -0.2f64..0.2, v in 12.0f64..28.0,
        gap in 9.0f64..30.0, tv_y in 2.625f64..7.875, tv_v in 10.0f64..25.0, lateral in 0.0f64..0.4,
    ) {
        let cfg = OcpConfig::default();
        let initial = VehicleState::new(0.0, y, psi, v);
        let tv = lead_vehicle(gap, tv_y, tv_v, lateral);
        check_solution(&initial, Some(&tv), &SafetyEllipse::default(), &cfg)?;
        check_solution(&initial, None, &SafetyEllipse::default(), &cfg)?;
    }
}

#[test]
fn far_target_matches_unconstrained_qp() {
    let cfg = OcpConfig::default();
    let initial = VehicleState::new(0.0, 5.0, 0.05, 15.0);
    let model = linearize(&initial, &P, cfg.dt);
    let reference = build_reference(&cfg, 7.875, 20.0, initial.x);
    let iterate = rollout(&initial, &model, &[ControlInput::ZERO; 10]);
    let ellipse = SafetyEllipse::default();
    let far = lead_vehicle(1000.0, 7.875, 20.0, 0.0);
    let settings = QpSettings { tolerance: 1e-9, ..Default::default() };
    let with = solve_qp(&assemble_qp(&initial, &model, &reference, Some(&far), &ellipse, &cfg, &iterate).unwrap(), &settings)
        .unwrap();
    let without =
        solve_qp(&assemble_qp(&initial, &model, &reference, None, &ellipse, &cfg, &iterate).unwrap(), &settings).unwrap();
    assert_eq!(with.status, QpStatus::Solved);
    assert_eq!(without.status, QpStatus::Solved);
    assert!((with.z.rows(0, 20) - &without.z).amax() < 1e-6);
    assert!(with.z.rows(20, 10).amax() < 1e-6);
}

#[test]
fn larger_ellipse_still_clears_the_smaller_one() {
    let cfg = OcpConfig::default();
    let initial = VehicleState::new(0.0, 7.875, 0.0, 20.0);
    let model = linearize(&initial, &P, cfg.dt);
    let reference = build_reference(&cfg, 7.875, 20.0, initial.x);
    let tv = lead_vehicle(10.0, 5.0, 17.0, 0.25);
    let small = SafetyEllipse { semi_axis_x: 7.0, semi_axis_y: 2.2 };
    let big = SafetyEllipse { semi_axis_x: 8.0, semi_axis_y: 2.2 };
    let sol = solve_ocp(&initial, &model, &reference, Some(&tv), &big, &cfg, None).unwrap();
    assert!(sol.converged && sol.max_slack < 1e-3);
    for k in 1..=10 {
        let (dx, dy) = (sol.states[k].x - tv.positions[k].0, sol.states[k].y - tv.positions[k].1);
        assert!(ellipse_margin(dx, dy, &big) >= -sol.max_slack - 1e-6);
        assert!(ellipse_margin(dx, dy, &small) >= ellipse_margin(dx, dy, &big));
    }
}

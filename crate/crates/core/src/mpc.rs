//! Finite-horizon tracking MPC with an elliptical keep-out region around a
//! predicted target vehicle.
//!
//! States are eliminated through the affine model (condensing), so the QP
//! decision vector is `[u_0, ..., u_{N-1}, s_1, ..., s_N]`, the slacks only
//! being present when a target-vehicle prediction is supplied. The ellipse
//! constraint is nonconvex; it is linearized about the previous trajectory
//! iterate and the QP re-solved until the trajectory stops moving.

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::dynamics::{linearize, BicycleParams, ControlInput, LinearModel, VehicleState};
use crate::error::{Error, Result};
use crate::qpsolver::{solve_qp, QpSettings, QpStatus, QuadraticProgram};

const NX: usize = 4;
const NU: usize = 2;

pub const LANE_WIDTH: f64 = 5.25;
pub const VEHICLE_MARGIN: f64 = 2.0;

/// `[l_veh, 3 w_lane - l_veh]` for a three-lane road starting at `y = 0`.
pub fn road_y_bounds(lane_width: f64, vehicle_margin: f64) -> [f64; 2] {
    [vehicle_margin, 3.0 * lane_width - vehicle_margin]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OcpConfig {
    pub horizon: usize,
    /// Sampling time (s).
    pub dt: f64,
    /// Diagonal of the stage state weight.
    pub q: [f64; NX],
    /// Diagonal of the input weight.
    pub r: [f64; NU],
    /// Diagonal of the terminal state weight.
    pub s: [f64; NX],
    pub y_bounds: [f64; 2],
    pub psi_bounds: [f64; 2],
    pub v_bounds: [f64; 2],
    pub a_bounds: [f64; 2],
    pub delta_bounds: [f64; 2],
    /// L1 weight on the safety slacks.
    pub slack_weight: f64,
    pub scp_max_iterations: usize,
    /// Largest state change (max-norm) between SCP iterates accepted as converged.
    pub scp_tolerance: f64,
    pub qp_tolerance: f64,
    pub qp_max_iterations: usize,
}

impl Default for OcpConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            dt: 0.2,
            q: [0.0, 0.1, 0.001, 1.0],
            r: [3.0, 0.5],
            s: [0.0, 0.1, 0.001, 1.0],
            y_bounds: road_y_bounds(LANE_WIDTH, VEHICLE_MARGIN),
            psi_bounds: [-1.2, 1.2],
            v_bounds: [0.0, 70.0],
            a_bounds: [-9.0, 6.0],
            delta_bounds: [-0.52, 0.52],
            slack_weight: 1e5,
            scp_max_iterations: 10,
            scp_tolerance: 1e-3,
            qp_tolerance: 1e-8,
            qp_max_iterations: 100,
        }
    }
}

impl OcpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidInput(format!("ocp config: {msg}")));
        if self.horizon == 0 {
            return bad("horizon must be at least 1");
        }
        if !(self.dt > 0.0) {
            return bad("sampling time must be positive");
        }
        if self.q.iter().chain(&self.r).chain(&self.s).any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return bad("weights must be finite and nonnegative");
        }
        for (name, b) in [
            ("y", self.y_bounds),
            ("psi", self.psi_bounds),
            ("v", self.v_bounds),
            ("a", self.a_bounds),
            ("delta", self.delta_bounds),
        ] {
            if !(b[0] <= b[1]) {
                return bad(&format!("{name} bounds out of order: {b:?}"));
            }
        }
        if !(self.slack_weight > 0.0) || !(self.scp_tolerance > 0.0) || self.scp_max_iterations == 0 {
            return bad("slack weight, SCP tolerance and SCP iterations must be positive");
        }
        Ok(())
    }

    pub fn qp_settings(&self) -> QpSettings {
        QpSettings { tolerance: self.qp_tolerance, max_iterations: self.qp_max_iterations, ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SafetyEllipse {
    /// Longitudinal semi-axis (m).
    pub semi_axis_x: f64,
    /// Lateral semi-axis (m).
    pub semi_axis_y: f64,
}

impl Default for SafetyEllipse {
    fn default() -> Self {
        Self { semi_axis_x: 7.0, semi_axis_y: 2.2 }
    }
}

/// `dx^2/a^2 + dy^2/b^2 - 1`; nonnegative outside the ellipse.
pub fn ellipse_margin(dx: f64, dy: f64, ellipse: &SafetyEllipse) -> f64 {
    let (a, b) = (ellipse.semi_axis_x, ellipse.semi_axis_y);
    dx * dx / (a * a) + dy * dy / (b * b) - 1.0
}

fn ellipse_gradient(dx: f64, dy: f64, ellipse: &SafetyEllipse) -> (f64, f64) {
    let (a, b) = (ellipse.semi_axis_x, ellipse.semi_axis_y);
    let dx = if dx == 0.0 && dy == 0.0 { 1e-6 } else { dx };
    (2.0 * dx / (a * a), 2.0 * dy / (b * b))
}

/// Predicted target-vehicle positions at `k = 0..=N` on the MPC grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TvPrediction {
    pub positions: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    pub states: Vec<VehicleState>,
}

/// Constant lane-centre, straight-heading, constant-speed reference.
///
/// The longitudinal entry is filled with `x_now`; it carries no weight.
pub fn build_reference(config: &OcpConfig, lane_center_y: f64, v_ref: f64, x_now: f64) -> ReferenceTrajectory {
    ReferenceTrajectory { states: vec![VehicleState::new(x_now, lane_center_y, 0.0, v_ref); config.horizon + 1] }
}

/// Affine state map `X = offset + gain * U` over the horizon, where `X`
/// stacks `xi_0..xi_N` and `U` stacks `u_0..u_{N-1}`.
#[derive(Debug, Clone)]
pub struct Condensed {
    pub offset: DVector<f64>,
    pub gain: DMatrix<f64>,
}

pub fn condense(initial: &VehicleState, model: &LinearModel, horizon: usize) -> Condensed {
    let nx_all = NX * (horizon + 1);
    let mut offset = DVector::zeros(nx_all);
    let mut gain = DMatrix::zeros(nx_all, NU * horizon);
    let mut p = initial.to_vector();
    offset.fixed_rows_mut::<NX>(0).copy_from(&p);
    for k in 0..horizon {
        p = model.a * p + model.c;
        offset.fixed_rows_mut::<NX>(NX * (k + 1)).copy_from(&p);
        for j in 0..k {
            let prev = gain.fixed_view::<NX, NU>(NX * k, NU * j).into_owned();
            gain.fixed_view_mut::<NX, NU>(NX * (k + 1), NU * j).copy_from(&(model.a * prev));
        }
        gain.fixed_view_mut::<NX, NU>(NX * (k + 1), NU * k).copy_from(&model.b);
    }
    Condensed { offset, gain }
}

/// Rolls the affine model forward from `initial`.
pub fn rollout(initial: &VehicleState, model: &LinearModel, inputs: &[ControlInput]) -> Vec<VehicleState> {
    let mut states = Vec::with_capacity(inputs.len() + 1);
    let mut x = initial.to_vector();
    states.push(*initial);
    for u in inputs {
        x = model.a * x + model.b * u.to_vector() + model.c;
        states.push(VehicleState::from_vector(&x));
    }
    states
}

/// Builds the convexified subproblem about `iterate` (`N + 1` states).
#[allow(clippy::too_many_arguments)]
pub fn assemble_qp(
    initial: &VehicleState,
    model: &LinearModel,
    reference: &ReferenceTrajectory,
    tv: Option<&TvPrediction>,
    ellipse: &SafetyEllipse,
    config: &OcpConfig,
    iterate: &[VehicleState],
) -> Result<QuadraticProgram> {
    let n = config.horizon;
    if iterate.len() != n + 1 || reference.states.len() != n + 1 {
        return Err(Error::InvalidInput(format!(
            "iterate/reference must hold {} states, got {}/{}",
            n + 1,
            iterate.len(),
            reference.states.len()
        )));
    }
    if let Some(tv) = tv {
        if tv.positions.len() != n + 1 {
            return Err(Error::InvalidInput(format!("TV prediction must hold {} points, got {}", n + 1, tv.positions.len())));
        }
    }
    let cond = condense(initial, model, n);
    let nu_all = NU * n;
    let n_slack = if tv.is_some() { n } else { 0 };
    let dim = nu_all + n_slack;

    // Stacked state weights; xi_0 is fixed so its block only adds a constant.
    let mut w = DVector::zeros(NX * (n + 1));
    for k in 1..=n {
        let diag = if k == n { &config.s } else { &config.q };
        for i in 0..NX {
            w[NX * k + i] = diag[i];
        }
    }
    let r_stack = DVector::from_fn(nu_all, |i, _| config.r[i % NU]);
    let x_ref = DVector::from_fn(NX * (n + 1), |i, _| reference.states[i / NX].to_vector()[i % NX]);

    let wg = DMatrix::from_fn(cond.gain.nrows(), nu_all, |r, c| w[r] * cond.gain[(r, c)]);
    let mut h = DMatrix::zeros(dim, dim);
    let huu = cond.gain.tr_mul(&wg) * 2.0 + DMatrix::from_diagonal(&(r_stack * 2.0));
    h.view_mut((0, 0), (nu_all, nu_all)).copy_from(&((&huu + huu.transpose()) * 0.5));
    let mut f = DVector::zeros(dim);
    let err0 = (&cond.offset - &x_ref).component_mul(&w);
    f.rows_mut(0, nu_all).copy_from(&(cond.gain.tr_mul(&err0) * 2.0));
    for i in 0..n_slack {
        f[nu_all + i] = config.slack_weight;
    }

    let mut rows: Vec<(DVector<f64>, f64, f64)> = Vec::new();
    for k in 0..n {
        for (i, b) in [config.a_bounds, config.delta_bounds].iter().enumerate() {
            let mut row = DVector::zeros(dim);
            row[NU * k + i] = 1.0;
            rows.push((row, b[0], b[1]));
        }
    }
    for k in 1..=n {
        for (i, b) in [(1, config.y_bounds), (2, config.psi_bounds), (3, config.v_bounds)] {
            let r = NX * k + i;
            let mut row = DVector::zeros(dim);
            row.rows_mut(0, nu_all).copy_from(&cond.gain.row(r).transpose());
            let base = cond.offset[r];
            rows.push((row, b[0] - base, b[1] - base));
        }
    }
    if let Some(tv) = tv {
        for k in 1..=n {
            let (tx, ty) = tv.positions[k];
            let (px, py) = iterate[k].position();
            let (dx, dy) = (px - tx, py - ty);
            let margin = ellipse_margin(dx, dy, ellipse);
            let (gx, gy) = ellipse_gradient(dx, dy, ellipse);
            let (rx, ry) = (NX * k, NX * k + 1);
            let mut row = DVector::zeros(dim);
            for j in 0..nu_all {
                row[j] = gx * cond.gain[(rx, j)] + gy * cond.gain[(ry, j)];
            }
            row[nu_all + k - 1] = 1.0;
            let lower = -margin + gx * px + gy * py - gx * cond.offset[rx] - gy * cond.offset[ry];
            rows.push((row, lower, f64::INFINITY));
        }
        for k in 0..n {
            let mut row = DVector::zeros(dim);
            row[nu_all + k] = 1.0;
            rows.push((row, 0.0, f64::INFINITY));
        }
    }
    let a_ineq = DMatrix::from_fn(rows.len(), dim, |r, c| rows[r].0[c]);
    let lower = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
    let upper = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.2));
    Ok(QuadraticProgram { h, f, a_ineq, lower, upper })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpSolution {
    pub inputs: Vec<ControlInput>,
    pub states: Vec<VehicleState>,
    /// Largest safety slack; zero without a TV prediction.
    pub max_slack: f64,
    pub scp_iterations: usize,
    pub converged: bool,
    /// Value of the tracking cost (without the slack penalty).
    pub cost: f64,
}

fn tracking_cost(states: &[VehicleState], inputs: &[ControlInput], reference: &ReferenceTrajectory, config: &OcpConfig) -> f64 {
    let n = config.horizon;
    let wq = Matrix4::from_diagonal(&Vector4::from(config.q));
    let ws = Matrix4::from_diagonal(&Vector4::from(config.s));
    let mut cost = 0.0;
    for k in 0..=n {
        let e = states[k].to_vector() - reference.states[k].to_vector();
        cost += e.dot(&((if k == n { ws } else { wq }) * e));
    }
    for u in inputs {
        cost += config.r[0] * u.accel * u.accel + config.r[1] * u.steer * u.steer;
    }
    cost
}

/// Sequential convexification of the optimal control problem.
///
/// `warm_start` holds `N` inputs (typically the previous solution shifted by
/// one step); without it the first iterate is the zero-input rollout.
#[allow(clippy::too_many_arguments)]
pub fn solve_ocp(
    initial: &VehicleState,
    model: &LinearModel,
    reference: &ReferenceTrajectory,
    tv: Option<&TvPrediction>,
    ellipse: &SafetyEllipse,
    config: &OcpConfig,
    warm_start: Option<&[ControlInput]>,
) -> Result<OcpSolution> {
    config.validate()?;
    let n = config.horizon;
    let seed_inputs = match warm_start {
        Some(w) if w.len() == n => w.to_vec(),
        Some(w) => return Err(Error::InvalidInput(format!("warm start holds {} inputs, expected {n}", w.len()))),
        None => vec![ControlInput::ZERO; n],
    };
    let mut iterate = rollout(initial, model, &seed_inputs);
    let mut inputs = seed_inputs;
    let mut max_slack = 0.0;
    let mut converged = false;
    let mut iterations = 0;
    let settings = config.qp_settings();

    while iterations < config.scp_max_iterations {
        iterations += 1;
        let qp = assemble_qp(initial, model, reference, tv, ellipse, config, &iterate)?;
        let sol = solve_qp(&qp, &settings)?;
        if sol.status == QpStatus::Infeasible {
            return Err(Error::Solver(format!(
                "QP infeasible at SCP iteration {iterations} (kkt residual {:e})",
                sol.kkt_residual
            )));
        }
        inputs = (0..n)
            .map(|k| {
                ControlInput::new(
                    sol.z[NU * k].clamp(config.a_bounds[0], config.a_bounds[1]),
                    sol.z[NU * k + 1].clamp(config.delta_bounds[0], config.delta_bounds[1]),
                )
            })
            .collect();
        max_slack = sol.z.rows(NU * n, sol.z.len() - NU * n).iter().fold(0.0_f64, |m, &s| m.max(s));
        let next = rollout(initial, model, &inputs);
        let change = next
            .iter()
            .zip(&iterate)
            .map(|(a, b)| (a.to_vector() - b.to_vector()).amax())
            .fold(0.0, f64::max);
        iterate = next;
        if change < config.scp_tolerance && sol.status == QpStatus::Solved {
            converged = true;
            break;
        }
    }
    let cost = tracking_cost(&iterate, &inputs, reference, config);
    Ok(OcpSolution { inputs, states: iterate, max_slack, scp_iterations: iterations, converged, cost })
}

/// Inputs shifted one step earlier with the last one repeated.
pub fn shift_inputs(inputs: &[ControlInput]) -> Vec<ControlInput> {
    let mut out: Vec<_> = inputs.iter().skip(1).copied().collect();
    if let Some(last) = inputs.last() {
        out.push(*last);
    }
    out
}

/// Lane-change controller for the target vehicle: tracking MPC toward
/// `lane_y` at `v_ref` with no keep-out constraint.
pub fn tv_policy(
    tv_state: &VehicleState,
    params: &BicycleParams,
    config: &OcpConfig,
    lane_y: f64,
    v_ref: f64,
    warm_start: Option<&[ControlInput]>,
) -> Result<(ControlInput, OcpSolution)> {
    let model = linearize(tv_state, params, config.dt);
    let reference = build_reference(config, lane_y, v_ref, tv_state.x);
    let sol = solve_ocp(tv_state, &model, &reference, None, &SafetyEllipse::default(), config, warm_start)?;
    Ok((sol.inputs[0], sol))
}

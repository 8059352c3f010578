//! Kinematic bicycle model.
//!
//! The continuous model is referenced to the centre of gravity with the
//! sideslip angle `beta = atan(lr / (lf + lr) * tan(steer))`. The controller
//! works with the affine discrete-time model obtained by an Euler step of the
//! first-order expansion about `(xi0, u = 0)`:
//!
//! ```text
//! xi[t+1] = xi0 + T f(xi0, 0) + A (xi[t] - xi0) + B u[t]
//! ```
//!
//! `step_truth` integrates the nonlinear model with RK4 and is what the
//! closed-loop simulator treats as reality.

use nalgebra::{Matrix4, Matrix4x2, Vector2, Vector4};
use serde::{Deserialize, Serialize};

/// Planar vehicle state `(x, y, psi, v)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleState {
    /// Longitudinal position (m).
    pub x: f64,
    /// Lateral position (m).
    pub y: f64,
    /// Inertial heading (rad).
    pub psi: f64,
    /// Speed (m/s).
    pub v: f64,
}

impl VehicleState {
    pub const fn new(x: f64, y: f64, psi: f64, v: f64) -> Self {
        Self { x, y, psi, v }
    }

    pub fn to_vector(self) -> Vector4<f64> {
        Vector4::new(self.x, self.y, self.psi, self.v)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn position(&self) -> (f64, f64) {
        (self.x, self.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.psi.is_finite() && self.v.is_finite()
    }
}

/// Control input `(accel, steer)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    /// Acceleration (m/s^2).
    pub accel: f64,
    /// Front steering angle (rad).
    pub steer: f64,
}

impl ControlInput {
    pub const ZERO: ControlInput = ControlInput { accel: 0.0, steer: 0.0 };

    pub const fn new(accel: f64, steer: f64) -> Self {
        Self { accel, steer }
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.accel, self.steer)
    }
}

/// Axle distances from the centre of gravity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BicycleParams {
    /// Front axle to CG (m).
    pub lf: f64,
    /// Rear axle to CG (m).
    pub lr: f64,
}

impl Default for BicycleParams {
    fn default() -> Self {
        Self { lf: 1.5, lr: 1.5 }
    }
}

impl BicycleParams {
    pub fn is_valid(&self) -> bool {
        self.lf > 0.0 && self.lr > 0.0 && self.lf.is_finite() && self.lr.is_finite()
    }

    fn slip_ratio(&self) -> f64 {
        self.lr / (self.lf + self.lr)
    }

    /// Sideslip angle at the CG for a given steering angle.
    pub fn sideslip(&self, steer: f64) -> f64 {
        (self.slip_ratio() * steer.tan()).atan()
    }
}

/// Time derivative of the state under the nonlinear kinematic bicycle model.
pub fn continuous_dynamics(
    state: &VehicleState,
    input: &ControlInput,
    params: &BicycleParams,
) -> Vector4<f64> {
    let beta = params.sideslip(input.steer);
    let heading = state.psi + beta;
    Vector4::new(
        state.v * heading.cos(),
        state.v * heading.sin(),
        state.v / params.lr * beta.sin(),
        input.accel,
    )
}

/// Analytic Jacobians `(df/dxi, df/du)` of [`continuous_dynamics`].
pub fn jacobians(
    state: &VehicleState,
    input: &ControlInput,
    params: &BicycleParams,
) -> (Matrix4<f64>, Matrix4x2<f64>) {
    let k = params.slip_ratio();
    let tan_d = input.steer.tan();
    let beta = (k * tan_d).atan();
    let heading = state.psi + beta;
    let (s, c) = heading.sin_cos();
    let v = state.v;

    // d beta / d steer = k sec^2(d) / (1 + k^2 tan^2(d))
    let sec2 = 1.0 + tan_d * tan_d;
    let dbeta = k * sec2 / (1.0 + k * k * tan_d * tan_d);

    #[rustfmt::skip]
    let jx = Matrix4::new(
        0.0, 0.0, -v * s, c,
        0.0, 0.0,  v * c, s,
        0.0, 0.0,  0.0,   beta.sin() / params.lr,
        0.0, 0.0,  0.0,   0.0,
    );
    #[rustfmt::skip]
    let ju = Matrix4x2::new(
        0.0, -v * s * dbeta,
        0.0,  v * c * dbeta,
        0.0,  v / params.lr * beta.cos() * dbeta,
        1.0,  0.0,
    );
    (jx, ju)
}

/// Affine discrete-time model linearized about `(xi0, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: Matrix4<f64>,
    pub b: Matrix4x2<f64>,
    /// `xi0 + T f(xi0, 0) - A xi0`, so that `xi' = A xi + B u + c`.
    pub c: Vector4<f64>,
    pub dt: f64,
    pub xi0: VehicleState,
}

/// Builds the Euler-discretized linear model about `(xi0, u = 0)`.
///
/// Panics if `dt` is not strictly positive.
pub fn linearize(xi0: &VehicleState, params: &BicycleParams, dt: f64) -> LinearModel {
    assert!(dt > 0.0, "sampling time must be positive, got {dt}");
    let (jx, ju) = jacobians(xi0, &ControlInput::ZERO, params);
    let a = Matrix4::identity() + jx * dt;
    let b = ju * dt;
    let x0 = xi0.to_vector();
    let drift = x0 + continuous_dynamics(xi0, &ControlInput::ZERO, params) * dt;
    let c = drift - a * x0;
    LinearModel { a, b, c, dt, xi0: *xi0 }
}

impl LinearModel {
    /// Next state as a vector; `drift` form keeps the linearization point exact.
    pub fn step_vector(&self, state: &Vector4<f64>, input: &Vector2<f64>) -> Vector4<f64> {
        let x0 = self.xi0.to_vector();
        let drift = self.c + self.a * x0;
        drift + self.a * (state - x0) + self.b * input
    }
}

/// One step of the affine model.
pub fn step_affine(model: &LinearModel, state: &VehicleState, input: &ControlInput) -> VehicleState {
    VehicleState::from_vector(&model.step_vector(&state.to_vector(), &input.to_vector()))
}

/// RK4 integration of the nonlinear model over `dt`, input held constant.
pub fn step_truth(
    state: &VehicleState,
    input: &ControlInput,
    params: &BicycleParams,
    dt: f64,
    substeps: usize,
) -> VehicleState {
    assert!(dt > 0.0, "time step must be positive, got {dt}");
    assert!(substeps >= 1, "need at least one substep");
    let h = dt / substeps as f64;
    let f = |x: &Vector4<f64>| continuous_dynamics(&VehicleState::from_vector(x), input, params);
    let mut x = state.to_vector();
    for _ in 0..substeps {
        let k1 = f(&x);
        let k2 = f(&(x + k1 * (h / 2.0)));
        let k3 = f(&(x + k2 * (h / 2.0)));
        let k4 = f(&(x + k3 * h));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    VehicleState::from_vector(&x)
}

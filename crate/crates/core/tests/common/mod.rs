#![allow(dead_code)]

use lanerisk::qpsolver::QuadraticProgram;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Random strictly convex QP with a known feasible point.
pub fn random_qp(rng: &mut impl Rng, n: usize, m: usize) -> QuadraticProgram {
    let l = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let h = &l * l.transpose() + DMatrix::identity(n, n) * 0.1;
    let h = (&h + h.transpose()) * 0.5;
    let f = DVector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0));
    let a = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
    let z_feas = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let az = &a * &z_feas;
    let mut lower = DVector::zeros(m);
    let mut upper = DVector::zeros(m);
    for i in 0..m {
        lower[i] = if rng.gen_bool(0.2) { f64::NEG_INFINITY } else { az[i] - rng.gen_range(0.05..1.5) };
        upper[i] = if rng.gen_bool(0.2) { f64::INFINITY } else { az[i] + rng.gen_range(0.05..1.5) };
    }
    QuadraticProgram { h, f, a_ineq: a, lower, upper }
}

/// Exhaustive active-set oracle: for every assignment of each row to
/// {inactive, at lower, at upper}, solve the equality-constrained KKT system
/// by LU and keep the feasible candidate of least objective.
pub fn enumeration_oracle(qp: &QuadraticProgram) -> (DVector<f64>, DVector<f64>) {
    let n = qp.f.len();
    let m = qp.lower.len();
    let mut best: Option<(f64, DVector<f64>, DVector<f64>)> = None;
    let total = 3usize.pow(m as u32);
    'sets: for code in 0..total {
        let mut active = Vec::new();
        let mut c = code;
        for i in 0..m {
            let choice = c % 3;
            c /= 3;
            match choice {
                1 if qp.lower[i].is_finite() => active.push((i, qp.lower[i])),
                2 if qp.upper[i].is_finite() => active.push((i, qp.upper[i])),
                0 => {}
                _ => continue 'sets,
            }
        }
        if active.len() > n {
            continue;
        }
        let k = active.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        let mut rhs = DVector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&qp.h);
        for i in 0..n {
            rhs[i] = -qp.f[i];
        }
        for (r, &(row, b)) in active.iter().enumerate() {
            for j in 0..n {
                kkt[(n + r, j)] = qp.a_ineq[(row, j)];
                kkt[(j, n + r)] = qp.a_ineq[(row, j)];
            }
            rhs[n + r] = b;
        }
        let lu = kkt.lu();
        if lu.determinant().abs() < 1e-12 {
            continue;
        }
        let Some(sol) = lu.solve(&rhs) else { continue };
        let z = sol.rows(0, n).into_owned();
        let az = &qp.a_ineq * &z;
        if (0..m).any(|i| az[i] < qp.lower[i] - 1e-9 || az[i] > qp.upper[i] + 1e-9) {
            continue;
        }
        let mut duals = DVector::zeros(m);
        for (r, &(row, _)) in active.iter().enumerate() {
            duals[row] = sol[n + r];
        }
        let obj = qp.objective(&z);
        if best.as_ref().is_none_or(|b| obj < b.0) {
            best = Some((obj, z, duals));
        }
    }
    let (_, z, duals) = best.expect("a feasible point exists by construction");
    (z, duals)
}

/// Central-difference Jacobians of the continuous bicycle dynamics.
pub fn fd_jacobians(
    state: &lanerisk::dynamics::VehicleState,
    input: &lanerisk::dynamics::ControlInput,
    params: &lanerisk::dynamics::BicycleParams,
    step: f64,
) -> (nalgebra::Matrix4<f64>, nalgebra::Matrix4x2<f64>) {
    use lanerisk::dynamics::{continuous_dynamics, ControlInput, VehicleState};
    let mut jx = nalgebra::Matrix4::zeros();
    let mut ju = nalgebra::Matrix4x2::zeros();
    let x = state.to_vector();
    for j in 0..4 {
        let mut xp = x;
        let mut xm = x;
        xp[j] += step;
        xm[j] -= step;
        let d = (continuous_dynamics(&VehicleState::from_vector(&xp), input, params)
            - continuous_dynamics(&VehicleState::from_vector(&xm), input, params))
            / (2.0 * step);
        jx.set_column(j, &d);
    }
    for j in 0..2 {
        let mut up = input.to_vector();
        let mut um = up;
        up[j] += step;
        um[j] -= step;
        let d = (continuous_dynamics(state, &ControlInput::new(up[0], up[1]), params)
            - continuous_dynamics(state, &ControlInput::new(um[0], um[1]), params))
            / (2.0 * step);
        ju.set_column(j, &d);
    }
    (jx, ju)
}

/// Worst relative error between backpropagated and central-difference
/// gradients over every learnable scalar, with denominator
/// `max(|analytic|, |numeric|, 1e-6)`.
pub fn gradient_check(
    model: &lanerisk::neuralnet::ModelParams,
    batch: &[(&lanerisk::neuralnet::SequenceTensor, &lanerisk::neuralnet::SequenceTensor)],
    step: f64,
) -> (f64, usize) {
    use lanerisk::neuralnet::loss_and_gradients;
    let (_, grads) = loss_and_gradients(model, batch).unwrap();
    let analytic: Vec<_> = grads.tensors().into_iter().map(|(_, t)| t.clone()).collect();
    let mut probe = model.clone();
    let names: Vec<_> = model.tensors().into_iter().map(|(n, _)| n).collect();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (t, _) in names.iter().enumerate() {
        let len = analytic[t].len();
        for i in 0..len {
            let original = probe.tensors_mut()[t].1[i];
            probe.tensors_mut()[t].1[i] = original + step;
            let plus = loss_and_gradients(&probe, batch).unwrap().0;
            probe.tensors_mut()[t].1[i] = original - step;
            let minus = loss_and_gradients(&probe, batch).unwrap().0;
            probe.tensors_mut()[t].1[i] = original;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[t][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    (worst, checked)
}

/// Recovers `y = c0 + c1 s + c2 s^2 + c3 s^3` from samples at
/// `s = 0, 1/3, 2/3, 1` by solving the Vandermonde system.
pub fn cubic_coefficients(samples: [f64; 4]) -> [f64; 4] {
    let s: [f64; 4] = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
    let v = nalgebra::Matrix4::from_fn(|r, c| s[r].powi(c as i32));
    let c = v.lu().solve(&nalgebra::Vector4::from(samples)).unwrap();
    [c[0], c[1], c[2], c[3]]
}

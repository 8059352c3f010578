//! Dense convex QP solver.
//!
//! ```text
//! minimize    1/2 z' H z + f' z
//! subject to  lower <= A z <= upper
//! ```
//!
//! Infinite bounds are dropped. The remaining one-sided rows `G z <= h` are
//! handled by a primal-dual interior-point method with Mehrotra's
//! predictor-corrector. Each Newton step solves the augmented system
//! `[H, G'; G, -diag(s / lambda)]` by pivoted LU with one round of iterative
//! refinement; if the system is singular a diagonal shift starting at `1e-9`
//! is added to `H`.
//!
//! A point is accepted once the primal violation is below `tolerance`, each
//! product `s_i lambda_i` is below `tolerance * max(1, lambda_i)` and each
//! stationarity component is below
//! `tolerance * (1 + (|H||z| + |f| + |G|'lambda)_i)`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, LU};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub a_ineq: DMatrix<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl QuadraticProgram {
    /// Problem without constraints.
    pub fn unconstrained(h: DMatrix<f64>, f: DVector<f64>) -> Self {
        let n = f.len();
        Self { h, f, a_ineq: DMatrix::zeros(0, n), lower: DVector::zeros(0), upper: DVector::zeros(0) }
    }

    pub fn num_variables(&self) -> usize {
        self.f.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.a_ineq.nrows()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.h * z)) + self.f.dot(z)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_variables();
        let m = self.num_constraints();
        if self.h.shape() != (n, n) || self.a_ineq.ncols() != n || self.lower.len() != m || self.upper.len() != m {
            return Err(Error::InvalidInput(format!(
                "inconsistent QP dimensions: H {:?}, f {}, A {:?}, bounds {}/{}",
                self.h.shape(),
                n,
                self.a_ineq.shape(),
                self.lower.len(),
                self.upper.len()
            )));
        }
        let asym = (&self.h - self.h.transpose()).amax();
        if asym > 1e-12 * self.h.amax().max(1.0) {
            return Err(Error::InvalidInput(format!("H is not symmetric (max deviation {asym:e})")));
        }
        let finite = |v: f64| !v.is_nan();
        if !self.h.iter().chain(self.f.iter()).chain(self.a_ineq.iter()).all(|v| v.is_finite())
            || !self.lower.iter().chain(self.upper.iter()).all(|&v| finite(v))
        {
            return Err(Error::InvalidInput("QP data contains non-finite entries".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    MaxIterations,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: DVector<f64>,
    /// One multiplier per constraint row; positive when the upper bound
    /// binds, negative when the lower bound binds.
    pub duals: DVector<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub status: QpStatus,
    pub iterations: usize,
    /// Diagonal shift used to factor the Newton system (0 when none was needed).
    pub regularization: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Iterations without a 10% drop in primal infeasibility before the
    /// problem is declared infeasible.
    pub stall_window: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self { tolerance: 1e-9, max_iterations: 100, stall_window: 25 }
    }
}

/// Maximum of stationarity, primal violation and complementarity.
pub fn kkt_residual(qp: &QuadraticProgram, z: &DVector<f64>, duals: &DVector<f64>) -> f64 {
    let stationarity = (&qp.h * z + &qp.f + qp.a_ineq.tr_mul(duals)).amax();
    let az = &qp.a_ineq * z;
    let mut primal: f64 = 0.0;
    let mut comp: f64 = 0.0;
    for i in 0..az.len() {
        let (l, u, lam) = (qp.lower[i], qp.upper[i], duals[i]);
        primal = primal.max(l - az[i]).max(az[i] - u);
        let c = if lam > 0.0 {
            if u.is_finite() {
                lam * (u - az[i]).abs()
            } else {
                lam
            }
        } else if lam < 0.0 {
            if l.is_finite() {
                -lam * (az[i] - l).abs()
            } else {
                -lam
            }
        } else {
            0.0
        };
        comp = comp.max(c);
    }
    stationarity.max(primal).max(comp)
}

/// One-sided form `G z <= h` with the source row and sign of each entry.
struct OneSided {
    g: DMatrix<f64>,
    h: DVector<f64>,
    source: Vec<(usize, f64)>,
}

fn one_sided(qp: &QuadraticProgram) -> OneSided {
    let n = qp.num_variables();
    let mut rows = Vec::new();
    for i in 0..qp.num_constraints() {
        if qp.upper[i].is_finite() {
            rows.push((i, 1.0, qp.upper[i]));
        }
        if qp.lower[i].is_finite() {
            rows.push((i, -1.0, -qp.lower[i]));
        }
    }
    let g = DMatrix::from_fn(rows.len(), n, |r, c| rows[r].1 * qp.a_ineq[(rows[r].0, c)]);
    let h = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.2));
    OneSided { g, h, source: rows.iter().map(|r| (r.0, r.1)).collect() }
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter().zip(dv.iter()).filter(|(_, d)| **d < 0.0).map(|(x, d)| -x / d).fold(1.0, f64::min)
}

fn factor(m: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::Solver("Newton system contains non-finite entries".into()));
    }
    let n = m.nrows();
    let mut reg = 0.0;
    loop {
        let shifted = if reg > 0.0 { m + DMatrix::identity(n, n) * reg } else { m.clone() };
        if let Some(c) = Cholesky::new(shifted) {
            return Ok((c, reg));
        }
        reg = if reg == 0.0 { 1e-9 } else { reg * 10.0 };
        if reg > 1e6 {
            return Err(Error::Solver("Newton system cannot be factored".into()));
        }
    }
}

/// `[H + reg I, G'; G, -diag(w)]`.
fn augmented(h: &DMatrix<f64>, g: &DMatrix<f64>, w: &DVector<f64>, reg: f64) -> DMatrix<f64> {
    let (n, p) = (h.nrows(), g.nrows());
    let mut k = DMatrix::zeros(n + p, n + p);
    k.view_mut((0, 0), (n, n)).copy_from(h);
    for i in 0..n {
        k[(i, i)] += reg;
    }
    k.view_mut((0, n), (n, p)).copy_from(&g.transpose());
    k.view_mut((n, 0), (p, n)).copy_from(g);
    for i in 0..p {
        k[(n + i, n + i)] = -w[i];
    }
    k
}

fn factor_augmented(h: &DMatrix<f64>, g: &DMatrix<f64>, w: &DVector<f64>) -> Result<(LU<f64, Dyn, Dyn>, f64)> {
    if !w.iter().all(|v| v.is_finite()) {
        return Err(Error::Solver("Newton system contains non-finite entries".into()));
    }
    let mut reg = 0.0;
    loop {
        let lu = augmented(h, g, w, reg).lu();
        if lu.is_invertible() {
            return Ok((lu, reg));
        }
        reg = if reg == 0.0 { 1e-9 } else { reg * 10.0 };
        if reg > 1e6 {
            return Err(Error::Solver("Newton system is singular".into()));
        }
    }
}

pub fn solve_qp(qp: &QuadraticProgram, settings: &QpSettings) -> Result<QpSolution> {
    qp.validate()?;
    let n = qp.num_variables();
    let m_rows = qp.num_constraints();
    let finish = |z: DVector<f64>, duals: DVector<f64>, status, iterations, regularization| {
        let kkt = kkt_residual(qp, &z, &duals);
        QpSolution { objective: qp.objective(&z), z, duals, kkt_residual: kkt, status, iterations, regularization }
    };

    if (0..m_rows).any(|i| qp.lower[i] > qp.upper[i]) {
        return Ok(finish(DVector::zeros(n), DVector::zeros(m_rows), QpStatus::Infeasible, 0, 0.0));
    }

    let sys = one_sided(qp);
    let p = sys.h.len();
    let tol = settings.tolerance;
    let duals_of = |lam: &DVector<f64>| {
        let mut d = DVector::zeros(m_rows);
        for (k, &(row, sign)) in sys.source.iter().enumerate() {
            d[row] += sign * lam[k];
        }
        d
    };

    if p == 0 {
        let (chol, reg) = factor(&qp.h)?;
        let z = chol.solve(&(-&qp.f));
        let status = if (&qp.h * &z + &qp.f).amax() <= tol { QpStatus::Solved } else { QpStatus::MaxIterations };
        return Ok(finish(z, DVector::zeros(m_rows), status, 1, reg));
    }

    // Starting point: minimize 1/2 z'Hz + f'z + 1/2 |Gz - h|^2, then push the
    // residual-based slacks and multipliers into the positive orthant.
    let mut start = qp.h.clone();
    start.gemm(1.0, &sys.g.transpose(), &sys.g, 1.0);
    let (chol, _) = factor(&start)?;
    let mut z = chol.solve(&(sys.g.tr_mul(&sys.h) - &qp.f));
    let resid = &sys.h - &sys.g * &z;
    let shift = |v: DVector<f64>| {
        let lowest = v.min();
        if lowest <= 0.0 {
            v.add_scalar(1.0 - lowest)
        } else {
            v
        }
    };
    let mut s = shift(resid.clone());
    let mut lam = shift(-resid);
    let mut reg_used: f64 = 0.0;
    let h_abs = qp.h.abs();
    let g_abs = sys.g.abs();
    let mut best_primal = f64::INFINITY;
    let mut stall = 0usize;

    for iter in 1..=settings.max_iterations {
        let r_d = &qp.h * &z + &qp.f + sys.g.tr_mul(&lam);
        // Stationarity is judged relative to the size of the terms that cancel.
        let scale = &h_abs * z.abs() + qp.f.abs() + g_abs.tr_mul(&lam);
        let stationary = (0..n).all(|i| r_d[i].abs() <= tol * (1.0 + scale[i]));
        let r_p = &sys.g * &z + &s - &sys.h;
        let mu = s.dot(&lam) / p as f64;
        let complementary = s.iter().zip(lam.iter()).all(|(a, b)| a * b <= tol * b.max(1.0));
        if stationary && r_p.amax() <= tol && complementary {
            return Ok(finish(z, duals_of(&lam), QpStatus::Solved, iter - 1, reg_used));
        }

        let primal = r_p.amax();
        if primal < 0.9 * best_primal {
            best_primal = primal;
            stall = 0;
        } else if primal > tol {
            stall += 1;
            if stall >= settings.stall_window {
                return Ok(finish(z, duals_of(&lam), QpStatus::Infeasible, iter, reg_used));
            }
        }

        let w = s.component_div(&lam);
        let (lu, reg) = factor_augmented(&qp.h, &sys.g, &w)?;
        reg_used = reg_used.max(reg);
        let kkt = augmented(&qp.h, &sys.g, &w, reg);

        // Solves the Newton system for complementarity target r_c.
        let newton = |r_c: &DVector<f64>| {
            let mut rhs = DVector::zeros(n + p);
            rhs.rows_mut(0, n).copy_from(&(-&r_d));
            rhs.rows_mut(n, p).copy_from(&(r_c.component_div(&lam) - &r_p));
            let mut x = lu.solve(&rhs).expect("factor is invertible");
            let correction = lu.solve(&(&rhs - &kkt * &x)).expect("factor is invertible");
            x += correction;
            let dz = x.rows(0, n).into_owned();
            let dlam = x.rows(n, p).into_owned();
            let ds = -(r_c + s.component_mul(&dlam)).component_div(&lam);
            (dz, ds, dlam)
        };

        let r_aff = s.component_mul(&lam);
        let (_, ds_a, dl_a) = newton(&r_aff);
        let alpha_a = max_step(&s, &ds_a).min(max_step(&lam, &dl_a));
        let mu_a = (&s + &ds_a * alpha_a).dot(&(&lam + &dl_a * alpha_a)) / p as f64;
        let sigma = (mu_a / mu).powi(3).clamp(0.0, 1.0);

        let r_c = r_aff + ds_a.component_mul(&dl_a) - DVector::from_element(p, sigma * mu);
        let (dz, ds, dl) = newton(&r_c);
        let alpha = (0.99 * max_step(&s, &ds).min(max_step(&lam, &dl))).min(1.0);
        z += &dz * alpha;
        s += &ds * alpha;
        lam += &dl * alpha;
    }
    let duals = duals_of(&lam);
    Ok(finish(z, duals, QpStatus::MaxIterations, settings.max_iterations, reg_used))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn unconstrained_minimum() {
        let qp = QuadraticProgram::unconstrained(DMatrix::identity(2, 2), DVector::zeros(2));
        let sol = solve_qp(&qp, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        assert_abs_diff_eq!(sol.z, DVector::zeros(2), epsilon = 1e-12);
    }

    #[test]
    fn active_lower_bound() {
        let qp = QuadraticProgram {
            h: DMatrix::from_element(1, 1, 2.0),
            f: DVector::zeros(1),
            a_ineq: DMatrix::from_element(1, 1, 1.0),
            lower: DVector::from_element(1, 1.0),
            upper: DVector::from_element(1, f64::INFINITY),
        };
        let sol = solve_qp(&qp, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        assert_abs_diff_eq!(sol.z[0], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(sol.objective, 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(sol.duals[0], -2.0, epsilon = 1e-7);
        assert!(sol.kkt_residual <= 1e-9);
    }

    #[test]
    fn residual_of_hand_solution() {
        // min z^2 - 2z s.t. z <= 0.5: optimum 0.5 with multiplier 1.
        let qp = QuadraticProgram {
            h: DMatrix::from_element(1, 1, 2.0),
            f: DVector::from_element(1, -2.0),
            a_ineq: DMatrix::from_element(1, 1, 1.0),
            lower: DVector::from_element(1, f64::NEG_INFINITY),
            upper: DVector::from_element(1, 0.5),
        };
        let z = DVector::from_element(1, 0.5);
        let lam = DVector::from_element(1, 1.0);
        assert!(kkt_residual(&qp, &z, &lam) < 1e-10);
        let perturbed = DVector::from_element(1, 0.4);
        assert!(kkt_residual(&qp, &perturbed, &lam) >= 0.2 - 1e-12);
    }

    #[test]
    fn semidefinite_linear_term_in_box() {
        // Zero curvature in the second coordinate; its bound decides.
        let qp = QuadraticProgram {
            h: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
            f: DVector::from_row_slice(&[-1.0, 1e5]),
            a_ineq: DMatrix::identity(2, 2),
            lower: DVector::from_row_slice(&[f64::NEG_INFINITY, 0.0]),
            upper: DVector::from_row_slice(&[f64::INFINITY, f64::INFINITY]),
        };
        let sol = solve_qp(&qp, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        assert_abs_diff_eq!(sol.z[0], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(sol.z[1], 0.0, epsilon = 1e-8);
    }

    #[test]
    fn equality_row() {
        let qp = QuadraticProgram {
            h: DMatrix::identity(2, 2),
            f: DVector::zeros(2),
            a_ineq: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            lower: DVector::from_element(1, 2.0),
            upper: DVector::from_element(1, 2.0),
        };
        let sol = solve_qp(&qp, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        assert_abs_diff_eq!(sol.z, DVector::from_element(2, 1.0), epsilon = 1e-7);
    }

    #[test]
    fn detects_infeasibility() {
        let qp = QuadraticProgram {
            h: DMatrix::identity(1, 1),
            f: DVector::zeros(1),
            a_ineq: DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            lower: DVector::from_row_slice(&[1.0, f64::NEG_INFINITY]),
            upper: DVector::from_row_slice(&[f64::INFINITY, 0.0]),
        };
        let sol = solve_qp(&qp, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);

        let crossed = QuadraticProgram { lower: DVector::from_element(2, 1.0), upper: DVector::from_element(2, 0.0), ..qp };
        assert_eq!(solve_qp(&crossed, &QpSettings::default()).unwrap().status, QpStatus::Infeasible);
    }

    #[test]
    fn rejects_asymmetric_hessian() {
        let qp = QuadraticProgram::unconstrained(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]), DVector::zeros(2));
        assert!(solve_qp(&qp, &QpSettings::default()).is_err());
    }
}

//! Frequency-domain bound on the deviation caused by the window truncation.
//!
//! Driving the closed loop with the exact perturbation `e_c(t) = −Δ_N x(t−N)`
//! and transforming both the perturbed and nominal dynamics gives the
//! deviation transfer
//!
//! ```text
//! E(z) = P_N(z)⁻¹ · (−B_cl Δ_N / z^{N−1}) · P(z)⁻¹ x0,
//! P(z) = zI − A_cl,   P_N(z) = zI − A_cl + B_cl Δ_N z^{−N},
//! ```
//!
//! whose supremum over the unit circle bounds `‖x(t) − x̄(t)‖` at every step.
//! Evaluation needs only two complex linear solves per frequency; the solver
//! works on the split real/imaginary representation with partial pivoting
//! and treats a collapsing pivot as the operational sign that `P_N` is
//! singular on the circle (the window is too short for a stable
//! reconstruction loop).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use rayon::prelude::*;

use super::fir::delta_from_gc;
use super::{ClosedLoopLinear, LinearController, LinearError};

type CVector = DVector<Complex<f64>>;

/// Relative pivot threshold below which a solve is declared singular.
const PIVOT_RATIO_TOL: f64 = 1e-12;

/// Minimum admissible frequency-grid size.
pub const MIN_FREQUENCY_GRID: usize = 64;

/// Default frequency-grid size used by the sweep drivers.
pub const DEFAULT_FREQUENCY_GRID: usize = 1024;

/// Solves the complex system `(X + jY) (p + jq) = (br + j bi)` through the
/// equivalent real system `[[X, −Y], [Y, X]] [p; q] = [br; bi]` with
/// partially pivoted Gaussian elimination.
fn solve_complex(
    x_re: &DMatrix<f64>,
    x_im: &DMatrix<f64>,
    rhs: &CVector,
    omega: f64,
) -> Result<CVector, LinearError> {
    let n = x_re.nrows();
    let m = 2 * n;
    let mut a = DMatrix::<f64>::zeros(m, m);
    a.view_mut((0, 0), (n, n)).copy_from(x_re);
    a.view_mut((0, n), (n, n)).copy_from(&(-x_im));
    a.view_mut((n, 0), (n, n)).copy_from(x_im);
    a.view_mut((n, n), (n, n)).copy_from(x_re);
    let mut b = DVector::<f64>::zeros(m);
    for i in 0..n {
        b[i] = rhs[i].re;
        b[n + i] = rhs[i].im;
    }

    for col in 0..m {
        let mut pivot_row = col;
        let mut pivot_abs = a[(col, col)].abs();
        for row in col + 1..m {
            let v = a[(row, col)].abs();
            if v > pivot_abs {
                pivot_abs = v;
                pivot_row = row;
            }
        }
        let row_scale = (col..m)
            .map(|j| a[(pivot_row, j)].abs())
            .fold(0.0_f64, f64::max);
        if pivot_abs <= PIVOT_RATIO_TOL * row_scale || row_scale == 0.0 {
            return Err(LinearError::SingularFrequency {
                omega,
                pivot_ratio: if row_scale > 0.0 {
                    pivot_abs / row_scale
                } else {
                    0.0
                },
            });
        }
        if pivot_row != col {
            a.swap_rows(pivot_row, col);
            b.swap_rows(pivot_row, col);
        }
        for row in col + 1..m {
            let factor = a[(row, col)] / a[(col, col)];
            if factor == 0.0 {
                continue;
            }
            for j in col..m {
                a[(row, j)] -= factor * a[(col, j)];
            }
            b[row] -= factor * b[col];
        }
    }
    for col in (0..m).rev() {
        let mut acc = b[col];
        for j in col + 1..m {
            acc -= a[(col, j)] * b[j];
        }
        b[col] = acc / a[(col, col)];
    }

    Ok(CVector::from_iterator(
        n,
        (0..n).map(|i| Complex::new(b[i], b[n + i])),
    ))
}

/// Evaluates the deviation transfer `E(e^{jω})` at one frequency.
pub fn error_transfer(
    cl: &ClosedLoopLinear,
    ctrl: &LinearController,
    order: usize,
    omega: f64,
) -> Result<CVector, LinearError> {
    if order == 0 {
        return Err(LinearError::ZeroOrder);
    }
    if ctrl.state_dim() != cl.ctrl_dim() {
        return Err(LinearError::Dimension {
            role: "controller vs closed loop",
            rows: ctrl.state_dim(),
            cols: ctrl.state_dim(),
            expected_rows: cl.ctrl_dim(),
            expected_cols: cl.ctrl_dim(),
        });
    }
    let n = cl.plant_dim() + cl.ctrl_dim();
    let z = Complex::from_polar(1.0, omega);
    // B_cl Δ_N injected into the full state (top rows zero)
    let delta = delta_from_gc(ctrl, &cl.gc_block(), order);
    let mut b_delta = DMatrix::<f64>::zeros(n, n);
    b_delta
        .view_mut((cl.plant_dim(), 0), (cl.ctrl_dim(), n))
        .copy_from(&delta);

    // P(z) = zI − A_cl, split into real and imaginary parts
    let p_re = DMatrix::<f64>::identity(n, n) * z.re - cl.a_cl();
    let p_im = DMatrix::<f64>::identity(n, n) * z.im;
    let x0: CVector = CVector::from_iterator(n, cl.x0().iter().map(|v| Complex::new(*v, 0.0)));
    let w = solve_complex(&p_re, &p_im, &x0, omega)?;

    // rhs = −(B_cl Δ_N · w) · z^{1−N}
    let z_m1 = z.inv();
    let z_m_nm1 = z_m1.powu(order as u32 - 1);
    let mut rhs = CVector::zeros(n);
    for i in 0..n {
        let mut acc = Complex::new(0.0, 0.0);
        for j in 0..n {
            acc += b_delta[(i, j)] * w[j];
        }
        rhs[i] = -acc * z_m_nm1;
    }

    // P_N(z) = zI − A_cl + B_cl Δ_N z^{−N}
    let z_m_n = z_m1.powu(order as u32);
    let pn_re = &p_re + &b_delta * z_m_n.re;
    let pn_im = &p_im + &b_delta * z_m_n.im;
    solve_complex(&pn_re, &pn_im, &rhs, omega)
}

fn transfer_norm(
    cl: &ClosedLoopLinear,
    ctrl: &LinearController,
    order: usize,
    omega: f64,
) -> Result<f64, LinearError> {
    let e = error_transfer(cl, ctrl, order, omega)?;
    Ok(e.iter().fold(0.0_f64, |acc, v| acc.max(v.norm())))
}

/// Evaluates `‖E(e^{jω})‖∞` on the uniform grid `ω_k = 2πk/n_grid`,
/// `k = 0..n_grid`. Fails if `P_N` is singular at any grid point.
pub fn frequency_sweep(
    cl: &ClosedLoopLinear,
    ctrl: &LinearController,
    order: usize,
    n_grid: usize,
) -> Result<Vec<(f64, f64)>, LinearError> {
    if n_grid < MIN_FREQUENCY_GRID {
        return Err(LinearError::GridTooCoarse {
            min: MIN_FREQUENCY_GRID,
            got: n_grid,
        });
    }
    (0..n_grid)
        .into_par_iter()
        .map(|k| {
            let omega = 2.0 * std::f64::consts::PI * k as f64 / n_grid as f64;
            transfer_norm(cl, ctrl, order, omega).map(|v| (omega, v))
        })
        .collect()
}

/// Golden-section maximisation of a smooth scalar function on `[lo, hi]`.
fn golden_max(
    mut f: impl FnMut(f64) -> Result<f64, LinearError>,
    mut lo: f64,
    mut hi: f64,
) -> Result<f64, LinearError> {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    let mut best = f1.max(f2);
    for _ in 0..48 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2)?;
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1)?;
        }
        best = best.max(f1.max(f2));
    }
    Ok(best)
}

/// Supremum of `‖E(e^{jω})‖∞` over the unit circle: grid maximum plus one
/// golden-section refinement around the grid maximiser.
///
/// This value bounds the time-domain deviation `‖x(t) − x̄(t)‖∞` of the
/// order-`order` controller at every step.
pub fn frequency_sup_bound(
    cl: &ClosedLoopLinear,
    ctrl: &LinearController,
    order: usize,
    n_grid: usize,
) -> Result<f64, LinearError> {
    let sweep = frequency_sweep(cl, ctrl, order, n_grid)?;
    let (mut best_omega, mut best) = (0.0, f64::NEG_INFINITY);
    for (omega, value) in &sweep {
        if *value > best {
            best = *value;
            best_omega = *omega;
        }
    }
    let half_step = 2.0 * std::f64::consts::PI / n_grid as f64;
    let refined = golden_max(
        |omega| transfer_norm(cl, ctrl, order, omega),
        best_omega - half_step,
        best_omega + half_step,
    )?;
    Ok(best.max(refined))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear::{build_closed_loop, LinearPlant};
    use crate::observer::ArxController;
    use crate::sim::{simulate_closed_loop, simulate_nominal, RealVector};
    use nalgebra::{DMatrix, DVector};

    fn m(rows: usize, cols: usize, vals: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, vals)
    }

    /// Two-state plant and controller with strongly contracting `F − RH`
    /// (spectral radius ≈ 0.32) and a stable loop.
    fn reference_pair() -> (LinearPlant, LinearController) {
        let plant = LinearPlant::new(
            m(2, 2, &[0.5, 0.1, 0.0, 0.3]),
            m(2, 1, &[1.0, 0.5]),
            m(1, 2, &[1.0, 0.0]),
        )
        .unwrap();
        let ctrl = LinearController::new(
            m(2, 2, &[0.31, 0.11, 0.08, 0.18]),
            m(2, 1, &[1.0, 0.5]),
            m(1, 2, &[0.3, -0.2]),
            m(2, 1, &[0.2, 0.1]),
        )
        .unwrap();
        (plant, ctrl)
    }

    fn deadbeat_pair() -> (LinearPlant, LinearController) {
        let plant = LinearPlant::new(
            m(2, 2, &[0.3, 0.1, 0.0, 0.2]),
            m(2, 1, &[1.0, 0.0]),
            m(1, 2, &[0.4, 0.3]),
        )
        .unwrap();
        let ctrl = LinearController::new(
            m(2, 2, &[0.5, 1.0, 0.0, 0.4]),
            m(2, 1, &[0.5, 0.2]),
            m(1, 2, &[1.0, 0.0]),
            m(2, 1, &[0.9, 0.16]),
        )
        .unwrap();
        (plant, ctrl)
    }

    #[test]
    fn deadbeat_transfer_vanishes_everywhere() {
        let (plant, ctrl) = deadbeat_pair();
        let x0 = DVector::from_vec(vec![1.0, -0.5, 0.0, 0.0]);
        let cl = build_closed_loop(&plant, &ctrl, &x0).unwrap();
        for k in 0..16 {
            let omega = 2.0 * std::f64::consts::PI * k as f64 / 16.0;
            let e = error_transfer(&cl, &ctrl, 2, omega).unwrap();
            assert!(e.iter().all(|v| v.norm() < 1e-12), "omega {omega}");
        }
        let bound = frequency_sup_bound(&cl, &ctrl, 2, 64).unwrap();
        assert!(bound < 1e-12);
    }

    #[test]
    fn transfer_is_periodic() {
        let (plant, ctrl) = reference_pair();
        let x0 = DVector::from_vec(vec![1.0, -0.5, 0.0, 0.0]);
        let cl = build_closed_loop(&plant, &ctrl, &x0).unwrap();
        let at0 = error_transfer(&cl, &ctrl, 5, 0.0).unwrap();
        let at2pi = error_transfer(&cl, &ctrl, 5, 2.0 * std::f64::consts::PI).unwrap();
        for i in 0..at0.len() {
            assert!((at0[i] - at2pi[i]).norm() < 1e-10, "component {i}");
        }
    }

    #[test]
    fn inverse_transform_matches_time_domain_deviation() {
        // Simulate the order-5 window controller against the nominal loop and
        // compare x(25) − x̄(25) with the inverse transform of E on a
        // 1024-point grid.
        let (plant, ctrl) = reference_pair();
        let order = 5;
        let horizon = 60;
        let x_p0 = RealVector::from_vec(vec![1.0, -0.5]);
        let x_c0 = RealVector::zeros(2);
        let x0 = DVector::from_vec(vec![1.0, -0.5, 0.0, 0.0]);
        let cl = build_closed_loop(&plant, &ctrl, &x0).unwrap();

        let plant_model = plant.to_plant_model();
        let ctrl_model = ctrl.to_controller_model();
        let nominal = simulate_nominal(&plant_model, &ctrl_model, &x_p0, &x_c0, horizon).unwrap();
        let form = ctrl.certified_observer_form(256, 0.5).unwrap();
        let mut arx = ArxController::new(form, ctrl_model, order, order).unwrap();
        let run = simulate_closed_loop(&plant_model, &mut arx, &x_p0, &x_c0, horizon).unwrap();

        let t = 25usize;
        let mut time_domain = [0.0f64; 4];
        for i in 0..2 {
            time_domain[i] =
                run.plant_traj.get(t).unwrap()[i] - nominal.plant_traj.get(t).unwrap()[i];
            time_domain[2 + i] =
                run.ctrl_state_traj.get(t).unwrap()[i] - nominal.ctrl_state_traj.get(t).unwrap()[i];
        }

        let n_grid = 1024;
        let mut acc = [num_complex::Complex::new(0.0, 0.0); 4];
        for k in 0..n_grid {
            let omega = 2.0 * std::f64::consts::PI * k as f64 / n_grid as f64;
            let e = error_transfer(&cl, &ctrl, order, omega).unwrap();
            let z_t = num_complex::Complex::from_polar(1.0, omega * t as f64);
            for i in 0..4 {
                acc[i] += e[i] * z_t;
            }
        }
        for i in 0..4 {
            let recovered = acc[i] / n_grid as f64;
            assert!(
                (recovered.re - time_domain[i]).abs() < 1e-6,
                "component {i}: {} vs {}",
                recovered.re,
                time_domain[i]
            );
            assert!(recovered.im.abs() < 1e-9);
        }
    }

    #[test]
    fn sup_bound_dominates_grid_and_requires_minimum_grid() {
        let (plant, ctrl) = reference_pair();
        let x0 = DVector::from_vec(vec![1.0, -0.5, 0.0, 0.0]);
        let cl = build_closed_loop(&plant, &ctrl, &x0).unwrap();
        let sweep = frequency_sweep(&cl, &ctrl, 5, 128).unwrap();
        let grid_max = sweep.iter().fold(0.0_f64, |a, (_, v)| a.max(*v));
        let bound = frequency_sup_bound(&cl, &ctrl, 5, 128).unwrap();
        assert!(bound >= grid_max);
        assert!(matches!(
            frequency_sweep(&cl, &ctrl, 5, 32),
            Err(LinearError::GridTooCoarse { .. })
        ));
    }

    #[test]
    fn singular_reconstruction_loop_is_reported() {
        // Tuned so that P_1(z) is exactly singular at z = 1: the order-1
        // reconstruction loop has a closed-loop root on the unit circle even
        // though the nominal loop is Schur.
        let plant = LinearPlant::new(m(1, 1, &[0.1]), m(1, 1, &[0.72]), m(1, 1, &[1.0])).unwrap();
        let ctrl = LinearController::new(
            m(1, 1, &[0.1]),
            m(1, 1, &[1.0]),
            m(1, 1, &[1.0]),
            m(1, 1, &[0.2]),
        )
        .unwrap();
        let cl = build_closed_loop(&plant, &ctrl, &DVector::from_vec(vec![1.0, 0.0])).unwrap();
        match error_transfer(&cl, &ctrl, 1, 0.0) {
            Err(LinearError::SingularFrequency { omega, pivot_ratio }) => {
                assert_eq!(omega, 0.0);
                assert!(pivot_ratio < 1e-12);
            }
            other => panic!("expected singularity report, got {other:?}"),
        }
        // the sweep hits omega = 0 as its first grid point
        assert!(matches!(
            frequency_sup_bound(&cl, &ctrl, 1, 64),
            Err(LinearError::SingularFrequency { .. })
        ));
        // a longer window moves the roots off the circle
        assert!(frequency_sup_bound(&cl, &ctrl, 6, 64).is_ok());
    }
}

//! FIR form of the linear observer composition, the reconstruction-error
//! matrix, and the closed-form window-length bound.
//!
//! For a linear observer the window composition is the finite sum
//!
//! ```text
//! x_c(t) = Σ_{τ=0}^{N-1} (F−RH)^τ ( G y(t−1−τ) + R u(t−1−τ) ),
//! ```
//!
//! so the reconstructed state is a fixed linear combination of the window —
//! evaluable in constant time and, importantly, in constant multiplicative
//! depth. The truncation error relative to the true state is exactly
//! `−Δ_N x(t−N)` with `Δ_N = (F−RH)^N [GC  RH]`, which decays at the
//! contraction rate of `F − RH` and vanishes identically for deadbeat
//! observer gains.

use nalgebra::{DMatrix, DVector};

use super::{LinearController, LinearError};
use crate::norms::mat_inf_norm;
use crate::observer::KLDecay;

/// Window-tap matrices of the linear reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct FirCoefficients {
    y_coeffs: Vec<DMatrix<f64>>,
    u_coeffs: Vec<DMatrix<f64>>,
}

impl FirCoefficients {
    pub fn order(&self) -> usize {
        self.y_coeffs.len()
    }

    /// `y_coeffs[τ] = (F−RH)^τ G`, applied to `y(t−1−τ)`.
    pub fn y_coeffs(&self) -> &[DMatrix<f64>] {
        &self.y_coeffs
    }

    /// `u_coeffs[τ] = (F−RH)^τ R`, applied to `u(t−1−τ)`.
    pub fn u_coeffs(&self) -> &[DMatrix<f64>] {
        &self.u_coeffs
    }

    pub fn state_dim(&self) -> usize {
        self.y_coeffs.first().map_or(0, |m| m.nrows())
    }
}

/// Computes the window taps `(F−RH)^τ G` and `(F−RH)^τ R` for `τ < order`.
pub fn fir_coefficients(
    ctrl: &LinearController,
    order: usize,
) -> Result<FirCoefficients, LinearError> {
    if order == 0 {
        return Err(LinearError::ZeroOrder);
    }
    let s = ctrl.observer_matrix();
    let mut power = DMatrix::<f64>::identity(s.nrows(), s.ncols());
    let mut y_coeffs = Vec::with_capacity(order);
    let mut u_coeffs = Vec::with_capacity(order);
    for tau in 0..order {
        y_coeffs.push(&power * ctrl.g());
        u_coeffs.push(&power * ctrl.r());
        if tau + 1 < order {
            power = &s * &power;
        }
    }
    Ok(FirCoefficients { y_coeffs, u_coeffs })
}

/// Applies the taps to newest-first windows:
/// `Σ_τ y_coeffs[τ]·y_window[τ] + u_coeffs[τ]·u_window[τ]`.
pub fn fir_apply(
    coeffs: &FirCoefficients,
    y_window: &[DVector<f64>],
    u_window: &[DVector<f64>],
) -> Result<DVector<f64>, LinearError> {
    let n = coeffs.order();
    if y_window.len() != n {
        return Err(LinearError::WindowLength {
            expected: n,
            got: y_window.len(),
        });
    }
    if u_window.len() != n {
        return Err(LinearError::WindowLength {
            expected: n,
            got: u_window.len(),
        });
    }
    let mut acc = DVector::<f64>::zeros(coeffs.state_dim());
    for tau in 0..n {
        acc += &coeffs.y_coeffs[tau] * &y_window[tau];
        acc += &coeffs.u_coeffs[tau] * &u_window[tau];
    }
    Ok(acc)
}

const ORDER_SEARCH_LIMIT: usize = 1_000_000;

/// Smallest window length `N` guaranteeing a signal deviation below
/// `epsilon`:
///
/// ```text
/// (‖G‖ + ‖R‖) · (M + ε) · gain · rate^N ≤ ε/γ
/// ```
///
/// The left side bounds the implied state perturbation of the order-`N`
/// reconstruction on any run whose signals stay within `M + ε`; pushing it
/// below the admissible perturbation `ε/γ` closes the loop-deviation
/// argument. Degenerate controllers with `‖G‖ + ‖R‖ = 0` reconstruct the
/// zero state exactly, so `N = 1` suffices.
pub fn order_bound_linear(
    ctrl: &LinearController,
    nominal_bound: f64,
    epsilon: f64,
    gamma: f64,
    decay: &KLDecay,
) -> Result<usize, LinearError> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(LinearError::NonPositiveEpsilon(epsilon));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(LinearError::NonPositiveGamma(gamma));
    }
    let input_gain = mat_inf_norm(ctrl.g()) + mat_inf_norm(ctrl.r());
    if input_gain == 0.0 {
        return Ok(1);
    }
    let target = epsilon / gamma;
    let mut level = input_gain * (nominal_bound + epsilon) * decay.gain();
    for n in 1..=ORDER_SEARCH_LIMIT {
        level *= decay.rate();
        if level <= target {
            return Ok(n);
        }
    }
    Err(LinearError::OrderSearchExhausted {
        limit: ORDER_SEARCH_LIMIT,
        target,
    })
}

/// Reconstruction-error matrix `Δ_N = (F−RH)^N [GC  RH]`.
///
/// On any run of the order-`N` controller past its switch time, the implied
/// perturbation is exactly `e_c(t) = −Δ_N [x_p(t−N); x_c(t−N)]`; its norm
/// decays like the `N`-th power of the contraction and vanishes for
/// nilpotent `F − RH` once `N` reaches the nilpotency index.
pub fn delta_n(
    ctrl: &LinearController,
    plant_c: &DMatrix<f64>,
    order: usize,
) -> Result<DMatrix<f64>, LinearError> {
    if order == 0 {
        return Err(LinearError::ZeroOrder);
    }
    if plant_c.nrows() != ctrl.measurement_dim() {
        return Err(LinearError::Dimension {
            role: "plant C (rows must match controller measurements)",
            rows: plant_c.nrows(),
            cols: plant_c.ncols(),
            expected_rows: ctrl.measurement_dim(),
            expected_cols: plant_c.ncols(),
        });
    }
    Ok(delta_from_gc(ctrl, &(ctrl.g() * plant_c), order))
}

/// Shared core of [`delta_n`]: builds `(F−RH)^N [gc  RH]` from an already
/// multiplied `gc = G·C` block (as stored inside an assembled closed loop).
pub(crate) fn delta_from_gc(
    ctrl: &LinearController,
    gc: &DMatrix<f64>,
    order: usize,
) -> DMatrix<f64> {
    let s = ctrl.observer_matrix();
    let n_c = ctrl.state_dim();
    let n_p = gc.ncols();
    let mut stacked = DMatrix::<f64>::zeros(n_c, n_p + n_c);
    stacked.view_mut((0, 0), (n_c, n_p)).copy_from(gc);
    stacked
        .view_mut((0, n_p), (n_c, n_c))
        .copy_from(&(ctrl.r() * ctrl.h()));
    let mut power = DMatrix::<f64>::identity(n_c, n_c);
    for _ in 0..order {
        power = &s * &power;
    }
    power * stacked
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observer::{compose_observer, KLDecay};

    fn m(rows: usize, cols: usize, vals: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, vals)
    }

    fn v(vals: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(vals)
    }

    fn scalar_ctrl(f: f64, g: f64, h: f64, r: f64) -> LinearController {
        LinearController::new(m(1, 1, &[f]), m(1, 1, &[g]), m(1, 1, &[h]), m(1, 1, &[r])).unwrap()
    }

    fn deadbeat_ctrl() -> LinearController {
        // F − RH = [[-0.4, 1], [-0.16, 0.4]] squares to zero
        LinearController::new(
            m(2, 2, &[0.5, 1.0, 0.0, 0.4]),
            m(2, 1, &[0.5, 0.2]),
            m(1, 2, &[1.0, 0.0]),
            m(2, 1, &[0.9, 0.16]),
        )
        .unwrap()
    }

    #[test]
    fn scalar_geometric_taps() {
        // F = 0.5, R = 0: taps are G, 0.5G, 0.25G and zero u-taps
        let ctrl = scalar_ctrl(0.5, 1.0, 0.7, 0.0);
        let coeffs = fir_coefficients(&ctrl, 3).unwrap();
        let y: Vec<f64> = coeffs.y_coeffs().iter().map(|c| c[(0, 0)]).collect();
        assert_eq!(y, vec![1.0, 0.5, 0.25]);
        assert!(coeffs.u_coeffs().iter().all(|c| c[(0, 0)] == 0.0));
        let us: Vec<DVector<f64>> = (0..3).map(|_| v(&[9.0])).collect();
        let x = fir_apply(&coeffs, &[v(&[1.0]), v(&[1.0]), v(&[1.0])], &us).unwrap();
        assert_eq!(x[0], 1.75);
    }

    #[test]
    fn deadbeat_taps_vanish_beyond_the_nilpotency_index() {
        let ctrl = deadbeat_ctrl();
        let coeffs = fir_coefficients(&ctrl, 4).unwrap();
        for tau in 2..4 {
            assert!(
                mat_inf_norm(&coeffs.y_coeffs()[tau]) < 1e-15,
                "y tap {tau} must vanish"
            );
            assert!(
                mat_inf_norm(&coeffs.u_coeffs()[tau]) < 1e-15,
                "u tap {tau} must vanish"
            );
        }
    }

    #[test]
    fn fir_apply_matches_observer_composition() {
        let ctrl = LinearController::new(
            m(2, 2, &[0.31, 0.11, 0.08, 0.18]),
            m(2, 1, &[1.0, 0.5]),
            m(1, 2, &[0.3, -0.2]),
            m(2, 1, &[0.2, 0.1]),
        )
        .unwrap();
        let n = 7;
        let coeffs = fir_coefficients(&ctrl, n).unwrap();
        let form = ctrl.observer_form(KLDecay::new(1.0, 0.9).unwrap());
        // deterministic pseudo-random windows
        let mut seed = 1u64;
        let mut next = || {
            seed = seed
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((seed >> 33) as f64 / 2.0_f64.powi(31)) - 1.0
        };
        for trial in 0..100 {
            let ys: Vec<DVector<f64>> = (0..n).map(|_| v(&[next()])).collect();
            let us: Vec<DVector<f64>> = (0..n).map(|_| v(&[next()])).collect();
            let via_fir = fir_apply(&coeffs, &ys, &us).unwrap();
            let via_compose = compose_observer(&form, &ys, &us).unwrap();
            let scale = via_compose.amax().max(1e-30);
            assert!(
                (via_fir - &via_compose).amax() / scale < 1e-10,
                "trial {trial}"
            );
        }
    }

    #[test]
    fn window_length_is_enforced() {
        let ctrl = scalar_ctrl(0.5, 1.0, 0.7, 0.0);
        let coeffs = fir_coefficients(&ctrl, 3).unwrap();
        let two: Vec<DVector<f64>> = (0..2).map(|_| v(&[1.0])).collect();
        let three: Vec<DVector<f64>> = (0..3).map(|_| v(&[1.0])).collect();
        assert!(matches!(
            fir_apply(&coeffs, &two, &three),
            Err(LinearError::WindowLength { .. })
        ));
        assert!(matches!(
            fir_coefficients(&ctrl, 0),
            Err(LinearError::ZeroOrder)
        ));
    }

    #[test]
    fn order_bound_reference_value() {
        // ‖G‖+‖R‖ = 1, M+ε = 1, gain 1, rate 0.5, ε/γ = 0.25 → N = 2
        let ctrl = scalar_ctrl(0.5, 1.0, 0.7, 0.0);
        let decay = KLDecay::new(1.0, 0.5).unwrap();
        let n = order_bound_linear(&ctrl, 0.9, 0.1, 0.4, &decay).unwrap();
        assert_eq!(n, 2);
    }

    #[test]
    fn order_bound_degenerate_and_invalid_inputs() {
        let ctrl = scalar_ctrl(0.5, 0.0, 0.7, 0.0);
        let decay = KLDecay::new(1.0, 0.5).unwrap();
        assert_eq!(order_bound_linear(&ctrl, 1.0, 0.1, 1.0, &decay).unwrap(), 1);
        let ctrl = scalar_ctrl(0.5, 1.0, 0.7, 0.0);
        assert!(matches!(
            order_bound_linear(&ctrl, 1.0, 0.0, 1.0, &decay),
            Err(LinearError::NonPositiveEpsilon(_))
        ));
        assert!(matches!(
            order_bound_linear(&ctrl, 1.0, 0.1, 0.0, &decay),
            Err(LinearError::NonPositiveGamma(_))
        ));
    }

    #[test]
    fn delta_matrix_reference_values() {
        // F − RH = 0.5, GC = 1, RH = 1, N = 2 → 0.25·[1  1]
        let ctrl = scalar_ctrl(1.5, 1.0, 1.0, 1.0);
        let d = delta_n(&ctrl, &m(1, 1, &[1.0]), 2).unwrap();
        assert_eq!(d.nrows(), 1);
        assert_eq!(d.ncols(), 2);
        assert!((d[(0, 0)] - 0.25).abs() < 1e-15);
        assert!((d[(0, 1)] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn delta_vanishes_for_deadbeat_at_the_state_dimension() {
        let ctrl = deadbeat_ctrl();
        let c = m(1, 2, &[0.4, 0.3]);
        let d2 = delta_n(&ctrl, &c, 2).unwrap();
        assert!(mat_inf_norm(&d2) < 1e-15);
        let d5 = delta_n(&ctrl, &c, 5).unwrap();
        assert!(mat_inf_norm(&d5) < 1e-15);
        // N = 1 does not vanish yet
        let d1 = delta_n(&ctrl, &c, 1).unwrap();
        assert!(mat_inf_norm(&d1) > 0.01);
    }

    #[test]
    fn delta_norm_decays_with_order() {
        let ctrl = LinearController::new(
            m(2, 2, &[0.31, 0.11, 0.08, 0.18]),
            m(2, 1, &[1.0, 0.5]),
            m(1, 2, &[0.3, -0.2]),
            m(2, 1, &[0.2, 0.1]),
        )
        .unwrap();
        let c = m(1, 2, &[1.0, 0.0]);
        let norms: Vec<f64> = [2usize, 6, 12, 24]
            .iter()
            .map(|n| mat_inf_norm(&delta_n(&ctrl, &c, *n).unwrap()))
            .collect();
        assert!(norms.windows(2).all(|w| w[1] < w[0] * 0.5));
        assert!(norms[3] < 1e-6);
    }
}

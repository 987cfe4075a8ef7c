//! Schur-stability tests and exponential norm envelopes via matrix powers.
//!
//! Nothing here computes eigenvalues. Stability and spectral-radius
//! estimates come from norms of matrix powers (`‖A^k‖^{1/k}` converges to
//! the spectral radius), which keeps the analysis free of an eigensolver
//! dependency and bit-reproducible across platforms. The trade-off is that
//! matrices with spectral radius extremely close to 1 may need more than
//! [`POWER_CHECK_LIMIT`] powers to reveal contraction and are then
//! conservatively reported as not Schur.

use nalgebra::DMatrix;
use serde::Serialize;

use super::LinearError;
use crate::norms::{mat_inf_norm, mat_is_finite};
use crate::observer::KLDecay;

/// Largest matrix power examined by the stability and radius estimates.
pub const POWER_CHECK_LIMIT: usize = 512;

/// Root-test threshold: `‖A^K‖^{1/K}` must fall below `1 - SCHUR_ROOT_TOL`.
const SCHUR_ROOT_TOL: f64 = 1e-9;

fn require_square(a: &DMatrix<f64>, role: &'static str) -> Result<(), LinearError> {
    if a.nrows() != a.ncols() {
        return Err(LinearError::NotSquare {
            role,
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    if !mat_is_finite(a) {
        return Err(LinearError::NonFinite { role });
    }
    Ok(())
}

/// Decides Schur stability (spectral radius < 1) from matrix-power norms.
///
/// `‖A^k‖ < 1` for any `k` is sufficient for stability. If no power up to
/// [`POWER_CHECK_LIMIT`] contracts, the root test `‖A^K‖^{1/K} < 1 − 1e−9`
/// at the final power decides; powers that overflow to non-finite values
/// are treated as divergence.
pub fn is_schur(a: &DMatrix<f64>) -> Result<bool, LinearError> {
    require_square(a, "stability test input")?;
    let n = a.nrows();
    if n == 0 {
        return Ok(true);
    }
    let mut power = a.clone();
    let mut last_norm = f64::INFINITY;
    for k in 1..=POWER_CHECK_LIMIT {
        if !mat_is_finite(&power) {
            return Ok(false);
        }
        last_norm = mat_inf_norm(&power);
        if last_norm < 1.0 {
            return Ok(true);
        }
        if k < POWER_CHECK_LIMIT {
            power *= a;
        }
    }
    Ok(last_norm.powf(1.0 / POWER_CHECK_LIMIT as f64) < 1.0 - SCHUR_ROOT_TOL)
}

/// Spectral-radius estimate `min_k ‖A^k‖^{1/k}` over `k ≤ POWER_CHECK_LIMIT`.
///
/// Always an upper bound on the true spectral radius; the minimum over many
/// powers sharpens the crude `‖A‖` bound considerably for non-normal
/// matrices. Stops early if powers overflow (the bound collected so far
/// remains valid).
pub fn spectral_radius_estimate(a: &DMatrix<f64>) -> Result<f64, LinearError> {
    require_square(a, "spectral-radius input")?;
    if a.nrows() == 0 {
        return Ok(0.0);
    }
    let mut power = a.clone();
    let mut best = f64::INFINITY;
    for k in 1..=POWER_CHECK_LIMIT {
        if !mat_is_finite(&power) {
            break;
        }
        best = best.min(mat_inf_norm(&power).powf(1.0 / k as f64));
        power *= a;
    }
    Ok(best)
}

/// Certified exponential envelope `‖A^t‖ ≤ gain · rate^t` for `t ≤ t_check`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectralEnvelope {
    gain: f64,
    rate: f64,
}

impl SpectralEnvelope {
    /// Packages a user-certified envelope. Requires `gain > 0`,
    /// `rate ∈ (0, 1)`.
    pub fn new(gain: f64, rate: f64) -> Result<Self, LinearError> {
        if !(gain > 0.0 && gain.is_finite() && rate > 0.0 && rate < 1.0) {
            return Err(LinearError::BadEnvelope { gain, rate });
        }
        Ok(Self { gain, rate })
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Envelope value `gain · rate^t`.
    pub fn bound(&self, t: usize) -> f64 {
        self.gain * self.rate.powi(t as i32)
    }

    /// The same envelope as an observer forgetting rate.
    pub fn to_decay(&self) -> KLDecay {
        KLDecay::new(self.gain, self.rate).expect("envelope parameters satisfy decay constraints")
    }
}

/// Default margin placing the certified rate halfway between the radius
/// estimate and 1.
pub const DEFAULT_ENVELOPE_MARGIN: f64 = 0.5;

/// Computes a verified envelope `‖A^t‖ ≤ M λ^t` for all `t ≤ t_check`.
///
/// The rate is `λ = max(ρ̂ + margin·(1 − ρ̂), ‖A^{t_check}‖^{1/t_check})`
/// (clipped below 1) with `ρ̂` the spectral-radius estimate over the same
/// powers; the gain is the smallest `M` making the envelope hold on every
/// checked power. The margin keeps `λ` safely above `ρ̂` so the gain stays
/// moderate; it is exposed because downstream window-length bounds are
/// sensitive to the certified rate.
pub fn spectral_envelope(
    a: &DMatrix<f64>,
    t_check: usize,
    margin: f64,
) -> Result<SpectralEnvelope, LinearError> {
    require_square(a, "envelope input")?;
    if !(margin > 0.0 && margin < 1.0) {
        return Err(LinearError::BadMargin(margin));
    }
    if t_check == 0 {
        return Err(LinearError::BadCheckHorizon);
    }
    if !is_schur(a)? {
        return Err(LinearError::NotSchur {
            role: "envelope input",
            estimate: spectral_radius_estimate(a)?,
        });
    }

    // norms[t] = ‖A^t‖ for t = 0..=t_check
    let n = a.nrows();
    let mut norms = Vec::with_capacity(t_check + 1);
    norms.push(1.0);
    let mut power = DMatrix::<f64>::identity(n, n);
    for _ in 1..=t_check {
        power *= a;
        norms.push(mat_inf_norm(&power));
    }

    let mut rho_hat = f64::INFINITY;
    for (t, nm) in norms.iter().enumerate().skip(1) {
        rho_hat = rho_hat.min(nm.powf(1.0 / t as f64));
    }
    let tail = norms[t_check].powf(1.0 / t_check as f64);
    let rate = (rho_hat + margin * (1.0 - rho_hat))
        .max(tail)
        .min(1.0 - 1e-12);

    let mut gain: f64 = 0.0;
    let mut rate_pow = 1.0;
    for nm in &norms {
        gain = gain.max(nm / rate_pow);
        rate_pow *= rate;
    }

    // Defensive re-verification (guards against overflow or rounding in the
    // gain maximisation); tiny relative slack absorbs re-rounding of M·λ^t.
    let mut rate_pow = 1.0;
    for (t, nm) in norms.iter().enumerate() {
        let bound = gain * rate_pow * (1.0 + 1e-12);
        // a NaN norm must also refute the certificate, hence the negated form
        let holds = *nm <= bound;
        if !holds {
            return Err(LinearError::EnvelopeViolated {
                t,
                norm: *nm,
                bound,
            });
        }
        rate_pow *= rate;
    }
    SpectralEnvelope::new(gain, rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rotation_scaled(theta: f64, scale: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(
            2,
            2,
            &[
                scale * theta.cos(),
                -scale * theta.sin(),
                scale * theta.sin(),
                scale * theta.cos(),
            ],
        )
    }

    #[test]
    fn schur_on_reference_matrices() {
        assert!(!is_schur(&DMatrix::identity(3, 3)).unwrap());
        let d = DMatrix::from_partial_diagonal(2, 2, &[0.9, -0.5]);
        assert!(is_schur(&d).unwrap());
        // scaled rotations have spectral radius exactly equal to the scale
        assert!(is_schur(&rotation_scaled(0.7, 0.999)).unwrap());
        assert!(!is_schur(&rotation_scaled(0.7, 1.001)).unwrap());
    }

    #[test]
    fn schur_rejects_non_square_and_non_finite() {
        let m = DMatrix::<f64>::zeros(2, 3);
        assert!(matches!(is_schur(&m), Err(LinearError::NotSquare { .. })));
        let m = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
        assert!(matches!(is_schur(&m), Err(LinearError::NonFinite { .. })));
    }

    #[test]
    fn radius_estimate_tightens_with_powers() {
        // non-normal: ‖A‖ = 1.5 but the spectral radius is 0.5
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 1.0, 0.0, 0.5]);
        let rho = spectral_radius_estimate(&a).unwrap();
        assert!(rho < 0.6, "estimate {rho} should approach 0.5");
        assert!(rho >= 0.5, "estimate {rho} must stay an upper bound");
    }

    #[test]
    fn scalar_envelope_matches_hand_value() {
        let a = DMatrix::from_row_slice(1, 1, &[0.5]);
        let env = spectral_envelope(&a, 64, 0.5).unwrap();
        assert!((env.rate() - 0.75).abs() < 1e-12);
        assert!((env.gain() - 1.0).abs() < 1e-12);
        assert_eq!(env.bound(0), env.gain());
    }

    #[test]
    fn nilpotent_envelope_is_valid() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let env = spectral_envelope(&a, 32, 0.5).unwrap();
        // A² = 0, so any positive rate works; margin 0.5 gives rate 0.5
        assert!((env.rate() - 0.5).abs() < 1e-12);
        // ‖A^t‖ ≤ M λ^t for t = 0, 1, 2, ...
        assert!(env.gain() >= 2.0 - 1e-12);
    }

    #[test]
    fn envelope_holds_on_all_checked_powers() {
        let a = DMatrix::from_row_slice(3, 3, &[0.4, 0.3, 0.0, -0.2, 0.5, 0.1, 0.0, 0.2, 0.3]);
        let t_check = 200;
        let env = spectral_envelope(&a, t_check, 0.5).unwrap();
        let mut power = DMatrix::<f64>::identity(3, 3);
        for t in 0..=t_check {
            assert!(
                mat_inf_norm(&power) <= env.bound(t) * (1.0 + 1e-12),
                "envelope broken at t = {t}"
            );
            power *= &a;
        }
    }

    #[test]
    fn envelope_requires_stability_and_sane_margin() {
        let unstable = DMatrix::from_row_slice(1, 1, &[1.5]);
        assert!(matches!(
            spectral_envelope(&unstable, 32, 0.5),
            Err(LinearError::NotSchur { .. })
        ));
        let a = DMatrix::from_row_slice(1, 1, &[0.5]);
        assert!(matches!(
            spectral_envelope(&a, 32, 1.5),
            Err(LinearError::BadMargin(_))
        ));
        assert!(matches!(
            spectral_envelope(&a, 0, 0.5),
            Err(LinearError::BadCheckHorizon)
        ));
    }

    #[test]
    fn user_envelope_validation() {
        assert!(SpectralEnvelope::new(1.0, 0.5).is_ok());
        assert!(SpectralEnvelope::new(0.0, 0.5).is_err());
        assert!(SpectralEnvelope::new(1.0, 1.0).is_err());
        let env = SpectralEnvelope::new(2.0, 0.5).unwrap();
        let decay = env.to_decay();
        assert_eq!(decay.gain(), 2.0);
        assert_eq!(decay.rate(), 0.5);
    }
}

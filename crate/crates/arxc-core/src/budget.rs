//! Leveled-operation accounting for encrypted controller evaluation.
//!
//! Homomorphic schemes admit only a bounded number of consecutive
//! multiplications on a ciphertext before decryption fails. This module makes
//! that constraint executable without dragging in a cryptosystem: values are
//! plaintext fixed-point numbers ([`BudgetedValue`]) that carry a
//! remaining-depth counter and a certified quantization-noise bound.
//! Additions are depth-free, multiplication by an encoded coefficient costs
//! one level and rescales back to the working scale, and multiplication by an
//! exact integer is depth-free — the usual accounting of leveled schemes.
//!
//! The payoff is structural: the window reconstruction starts every step from
//! freshly encrypted signals, so each output consumes the same fixed number
//! of levels (one linear combination plus the static output map) no matter
//! how long the loop runs. A recursive state update instead re-multiplies the
//! carried state each step and exhausts any finite budget after
//! `initial_depth` steps, unless the state matrices happen to be exact
//! integers.
//!
//! All operations return new values; nothing here mutates shared state, so
//! independent outputs can be evaluated in parallel.

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::linear::fir::FirCoefficients;
use crate::linear::LinearController;
use crate::sim::{ClosedLoopRecord, RealVector};

/// Errors raised by the fixed-point budget layer.
#[derive(Debug, Error)]
pub enum BudgetError {
    #[error("scale must have between 8 and 30 fractional bits, got {0}")]
    ScaleOutOfRange(u32),
    #[error("value {decoded} outside the fixed-point range")]
    Overflow { decoded: f64 },
    #[error("non-finite value cannot be encoded")]
    NonFinite,
    #[error("operand scales differ: {left} vs {right} fractional bits")]
    ScaleMismatch { left: u32, right: u32 },
    #[error("depth budget exhausted after {op_count} operations")]
    DepthExhausted { op_count: u64 },
    #[error("window entry is not fresh: {depth_left} of {required} levels left")]
    StaleInput { depth_left: u32, required: u32 },
    #[error("{role}: expected {expected} entries, got {got}")]
    WindowShape {
        role: &'static str,
        expected: usize,
        got: usize,
    },
}

/// Evaluation budget: levels granted to a fresh encryption and the number of
/// fractional bits of the fixed-point scale.
///
/// `initial_depth = 0` is deliberately allowed; it models a scheme with no
/// multiplicative headroom, under which any coefficient multiplication fails
/// immediately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct BudgetPolicy {
    pub initial_depth: u32,
    pub scale_bits: u32,
}

impl BudgetPolicy {
    pub fn new(initial_depth: u32, scale_bits: u32) -> Result<Self, BudgetError> {
        if !(8..=30).contains(&scale_bits) {
            return Err(BudgetError::ScaleOutOfRange(scale_bits));
        }
        Ok(Self {
            initial_depth,
            scale_bits,
        })
    }
}

impl Default for BudgetPolicy {
    fn default() -> Self {
        Self {
            initial_depth: 8,
            scale_bits: 16,
        }
    }
}

/// Raw fixed-point magnitudes are kept within the exactly representable
/// integer range of `f64`, so decoding never re-rounds and the tracked noise
/// bounds stay valid.
const MAX_RAW: i64 = 1 << 53;

/// Multiplicative slack applied to every propagated noise bound. The bounds
/// are themselves computed in floating point; the slack absorbs that rounding
/// so the stored value remains a true upper bound.
const NOISE_SLACK: f64 = 1.0 + 1e-12;

fn scale_step(scale_bits: u32) -> f64 {
    2f64.powi(-(scale_bits as i32))
}

fn check_raw(wide: i128, scale_bits: u32) -> Result<i64, BudgetError> {
    if wide.unsigned_abs() > MAX_RAW as u128 {
        return Err(BudgetError::Overflow {
            decoded: wide as f64 * scale_step(scale_bits),
        });
    }
    Ok(wide as i64)
}

/// Rounds `p / 2^s` to the nearest integer, half away from zero.
fn round_shift(p: i128, s: u32) -> i128 {
    let half = 1i128 << (s - 1);
    if p >= 0 {
        (p + half) >> s
    } else {
        -((-p + half) >> s)
    }
}

/// Unencrypted coefficient encoded at a fixed scale, with its encoding error
/// and — when the real value is an exact integer — the integer itself, which
/// admits a depth-free multiplication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlainFixed {
    real: f64,
    value: i64,
    scale_bits: u32,
    encoding_error: f64,
    integer: Option<i64>,
}

impl PlainFixed {
    pub fn encode(real: f64, scale_bits: u32) -> Result<Self, BudgetError> {
        if !(8..=30).contains(&scale_bits) {
            return Err(BudgetError::ScaleOutOfRange(scale_bits));
        }
        if !real.is_finite() {
            return Err(BudgetError::NonFinite);
        }
        if real.abs() >= 2f64.powi(31 - scale_bits as i32) {
            return Err(BudgetError::Overflow { decoded: real });
        }
        let value = (real * 2f64.powi(scale_bits as i32)).round() as i64;
        let encoding_error = (real - value as f64 * scale_step(scale_bits)).abs() * NOISE_SLACK;
        let integer = (real == real.trunc()).then_some(real as i64);
        Ok(Self {
            real,
            value,
            scale_bits,
            encoding_error,
            integer,
        })
    }

    pub fn real(&self) -> f64 {
        self.real
    }

    pub fn is_integer(&self) -> bool {
        self.integer.is_some()
    }
}

/// Fixed-point scalar carrying its remaining multiplicative depth, the number
/// of operations in its history, and a certified bound on
/// `|decoded − exact|`, where `exact` is the same expression evaluated in
/// real arithmetic.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetedValue {
    value: i64,
    scale_bits: u32,
    depth_left: u32,
    op_count: u64,
    noise: f64,
}

/// Encodes `x` at the policy scale with a full depth budget. The rounding of
/// the encoding itself is the only initial noise: half a scale step.
pub fn encrypt_fresh(x: f64, policy: &BudgetPolicy) -> Result<BudgetedValue, BudgetError> {
    if !x.is_finite() {
        return Err(BudgetError::NonFinite);
    }
    if x.abs() >= 2f64.powi(31 - policy.scale_bits as i32) {
        return Err(BudgetError::Overflow { decoded: x });
    }
    Ok(BudgetedValue {
        value: (x * 2f64.powi(policy.scale_bits as i32)).round() as i64,
        scale_bits: policy.scale_bits,
        depth_left: policy.initial_depth,
        op_count: 0,
        noise: 0.5 * scale_step(policy.scale_bits),
    })
}

/// Encodes every entry of a vector as a fresh value.
pub fn encrypt_vector(
    v: &RealVector,
    policy: &BudgetPolicy,
) -> Result<Vec<BudgetedValue>, BudgetError> {
    v.iter().map(|x| encrypt_fresh(*x, policy)).collect()
}

impl BudgetedValue {
    pub fn decode(&self) -> f64 {
        self.value as f64 * scale_step(self.scale_bits)
    }

    pub fn depth_left(&self) -> u32 {
        self.depth_left
    }

    pub fn op_count(&self) -> u64 {
        self.op_count
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn scale_bits(&self) -> u32 {
        self.scale_bits
    }

    /// Depth-free addition; noise bounds add.
    pub fn add(&self, other: &Self) -> Result<Self, BudgetError> {
        if self.scale_bits != other.scale_bits {
            return Err(BudgetError::ScaleMismatch {
                left: self.scale_bits,
                right: other.scale_bits,
            });
        }
        Ok(Self {
            value: check_raw(self.value as i128 + other.value as i128, self.scale_bits)?,
            scale_bits: self.scale_bits,
            depth_left: self.depth_left.min(other.depth_left),
            op_count: self.op_count + other.op_count + 1,
            noise: (self.noise + other.noise) * NOISE_SLACK,
        })
    }

    /// Multiplication by an encoded coefficient: consumes one level, doubles
    /// the scale and rescales back, and propagates the noise as
    /// `|c|·noise + |decoded|·encoding_error + rescale rounding`.
    pub fn mul_plain(&self, c: &PlainFixed) -> Result<Self, BudgetError> {
        if self.scale_bits != c.scale_bits {
            return Err(BudgetError::ScaleMismatch {
                left: self.scale_bits,
                right: c.scale_bits,
            });
        }
        if self.depth_left == 0 {
            return Err(BudgetError::DepthExhausted {
                op_count: self.op_count,
            });
        }
        let wide = round_shift(self.value as i128 * c.value as i128, self.scale_bits);
        let rescale_error = 0.5 * scale_step(self.scale_bits);
        let noise =
            (c.real.abs() * self.noise + self.decode().abs() * c.encoding_error + rescale_error)
                * NOISE_SLACK;
        Ok(Self {
            value: check_raw(wide, self.scale_bits)?,
            scale_bits: self.scale_bits,
            depth_left: self.depth_left - 1,
            op_count: self.op_count + 1,
            noise,
        })
    }

    /// Depth-free multiplication by an exact integer: the scale is unchanged
    /// and the result is exact, so the noise only stretches by `|k|`.
    pub fn mul_int(&self, k: i64) -> Result<Self, BudgetError> {
        Ok(Self {
            value: check_raw(self.value as i128 * k as i128, self.scale_bits)?,
            scale_bits: self.scale_bits,
            depth_left: self.depth_left,
            op_count: self.op_count + 1,
            noise: k.abs() as f64 * self.noise * NOISE_SLACK,
        })
    }

    /// Integer-aware dispatch: multiplies depth-free when the coefficient is
    /// an exact integer, otherwise through one multiplicative level.
    pub fn mul_coeff(&self, c: &PlainFixed) -> Result<Self, BudgetError> {
        match c.integer {
            Some(k) => self.mul_int(k),
            None => self.mul_plain(c),
        }
    }
}

/// Accumulates `acc + Σ_j m[(row, j)]·vals[j]`, counting every performed
/// operation in `ops`.
fn accumulate_row(
    m: &DMatrix<f64>,
    row: usize,
    vals: &[BudgetedValue],
    scale_bits: u32,
    mut acc: Option<BudgetedValue>,
    ops: &mut u64,
) -> Result<Option<BudgetedValue>, BudgetError> {
    for (j, v) in vals.iter().enumerate() {
        let c = PlainFixed::encode(m[(row, j)], scale_bits)?;
        let prod = v.mul_coeff(&c)?;
        *ops += 1;
        acc = Some(match acc.take() {
            None => prod,
            Some(a) => {
                *ops += 1;
                a.add(&prod)?
            }
        });
    }
    Ok(acc)
}

/// One window evaluation under the budget: the control value, the number of
/// levels it consumed, and the number of operations performed.
#[derive(Debug, Clone)]
pub struct EncryptedArxStep {
    pub control: Vec<BudgetedValue>,
    pub depth_used: u32,
    pub op_count: u64,
}

impl EncryptedArxStep {
    pub fn decoded(&self) -> RealVector {
        RealVector::from_iterator(self.control.len(), self.control.iter().map(|v| v.decode()))
    }

    pub fn max_noise(&self) -> f64 {
        self.control.iter().fold(0.0, |a, v| a.max(v.noise))
    }

    pub fn report(&self, step: usize) -> BudgetStepReport {
        BudgetStepReport {
            step,
            depth_used: self.depth_used,
            op_count: self.op_count,
            noise: self.max_noise(),
        }
    }
}

/// Per-step budget report of an encrypted window evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BudgetStepReport {
    pub step: usize,
    pub depth_used: u32,
    pub op_count: u64,
    pub noise: f64,
}

/// Evaluates one controller output from freshly encrypted windows.
///
/// The window state is `Σ_τ Φ_τ y(t−1−τ) + Ψ_τ u(t−1−τ)` (taps in `coeffs`,
/// windows newest first), and the output applies the static map `h`. Both
/// stages touch every input exactly once, so the consumed depth and the
/// operation count depend only on the window length, the signal dimensions,
/// and which coefficients are exact integers — never on the step index.
///
/// Every window entry must be fresh (full depth budget): the evaluation
/// models a loop whose signals are re-encrypted at the sensor and actuator
/// each step.
pub fn evaluate_arx_encrypted(
    coeffs: &FirCoefficients,
    h: &DMatrix<f64>,
    y_window: &[Vec<BudgetedValue>],
    u_window: &[Vec<BudgetedValue>],
    policy: &BudgetPolicy,
) -> Result<EncryptedArxStep, BudgetError> {
    let order = coeffs.order();
    if y_window.len() != order {
        return Err(BudgetError::WindowShape {
            role: "measurement window",
            expected: order,
            got: y_window.len(),
        });
    }
    if u_window.len() != order {
        return Err(BudgetError::WindowShape {
            role: "control window",
            expected: order,
            got: u_window.len(),
        });
    }
    let n_c = coeffs.state_dim();
    if h.ncols() != n_c {
        return Err(BudgetError::WindowShape {
            role: "output-map columns",
            expected: n_c,
            got: h.ncols(),
        });
    }
    for entry in y_window.iter().chain(u_window.iter()).flatten() {
        if entry.scale_bits != policy.scale_bits {
            return Err(BudgetError::ScaleMismatch {
                left: entry.scale_bits,
                right: policy.scale_bits,
            });
        }
        if entry.depth_left != policy.initial_depth {
            return Err(BudgetError::StaleInput {
                depth_left: entry.depth_left,
                required: policy.initial_depth,
            });
        }
    }

    let mut ops = 0u64;
    let mut state: Vec<Option<BudgetedValue>> = vec![None; n_c];
    for tau in 0..order {
        let (yc, uc) = (&coeffs.y_coeffs()[tau], &coeffs.u_coeffs()[tau]);
        if yc.ncols() != y_window[tau].len() {
            return Err(BudgetError::WindowShape {
                role: "measurement entry",
                expected: yc.ncols(),
                got: y_window[tau].len(),
            });
        }
        if uc.ncols() != u_window[tau].len() {
            return Err(BudgetError::WindowShape {
                role: "control entry",
                expected: uc.ncols(),
                got: u_window[tau].len(),
            });
        }
        for (j, slot) in state.iter_mut().enumerate() {
            let acc = accumulate_row(
                yc,
                j,
                &y_window[tau],
                policy.scale_bits,
                slot.take(),
                &mut ops,
            )?;
            *slot = accumulate_row(uc, j, &u_window[tau], policy.scale_bits, acc, &mut ops)?;
        }
    }
    let mut reconstructed = Vec::with_capacity(n_c);
    for slot in state {
        reconstructed.push(match slot {
            Some(v) => v,
            None => encrypt_fresh(0.0, policy)?,
        });
    }

    let mut control = Vec::with_capacity(h.nrows());
    for i in 0..h.nrows() {
        let acc = accumulate_row(h, i, &reconstructed, policy.scale_bits, None, &mut ops)?;
        control.push(match acc {
            Some(v) => v,
            None => encrypt_fresh(0.0, policy)?,
        });
    }
    let min_left = control
        .iter()
        .map(|v| v.depth_left)
        .min()
        .unwrap_or(policy.initial_depth);
    Ok(EncryptedArxStep {
        control,
        depth_used: policy.initial_depth - min_left,
        op_count: ops,
    })
}

/// Replays a recorded closed-loop run through [`evaluate_arx_encrypted`],
/// encrypting each window fresh from the recorded signals. Returns one
/// `(step, evaluation)` pair per step from `max(switch_time, order)` to the
/// end of the record.
pub fn encrypted_arx_trace(
    coeffs: &FirCoefficients,
    h: &DMatrix<f64>,
    record: &ClosedLoopRecord,
    switch_time: usize,
    policy: &BudgetPolicy,
) -> Result<Vec<(usize, EncryptedArxStep)>, BudgetError> {
    let order = coeffs.order();
    let start = switch_time.max(order);
    let mut out = Vec::new();
    for t in start..record.horizon() {
        let mut y_window = Vec::with_capacity(order);
        let mut u_window = Vec::with_capacity(order);
        for tau in 0..order {
            let y = record
                .output_traj
                .get(t - 1 - tau)
                .ok_or(BudgetError::WindowShape {
                    role: "recorded outputs",
                    expected: order,
                    got: tau,
                })?;
            let u = record
                .input_traj
                .get(t - 1 - tau)
                .ok_or(BudgetError::WindowShape {
                    role: "recorded inputs",
                    expected: order,
                    got: tau,
                })?;
            y_window.push(encrypt_vector(y, policy)?);
            u_window.push(encrypt_vector(u, policy)?);
        }
        out.push((
            t,
            evaluate_arx_encrypted(coeffs, h, &y_window, &u_window, policy)?,
        ));
    }
    Ok(out)
}

/// Outcome of carrying an encrypted controller state across steps without
/// re-encryption.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RecursiveRunReport {
    /// Steps fully evaluated before the budget ran out (or the stream ended).
    pub steps_completed: usize,
    /// 1-based index of the step at which the depth budget was exhausted, if
    /// it was.
    pub failed_at: Option<usize>,
    /// Largest noise bound attached to the carried state at exit.
    pub final_state_noise: f64,
}

/// Runs the recursive update `x ← F x + G y`, `u = H x` with the state kept
/// as budgeted values across steps. Fresh measurements arrive every step, but
/// the carried state is never re-encrypted, so each non-integer coefficient
/// multiplication peels a level off it: with any non-integer entry acting on
/// the state, exhaustion is reported at a step no later than
/// `initial_depth + 1`. Exhaustion is the expected outcome and lands in the
/// report; only encoding failures surface as errors.
pub fn evaluate_recursive_encrypted(
    ctrl: &LinearController,
    y_stream: &[RealVector],
    policy: &BudgetPolicy,
) -> Result<RecursiveRunReport, BudgetError> {
    let n_c = ctrl.state_dim();
    let mut state: Vec<BudgetedValue> = (0..n_c)
        .map(|_| encrypt_fresh(0.0, policy))
        .collect::<Result<_, _>>()?;
    let mut steps_completed = 0usize;
    let mut failed_at = None;
    let mut ops = 0u64;

    'run: for (idx, y) in y_stream.iter().enumerate() {
        let step = idx + 1;
        let y_enc = encrypt_vector(y, policy)?;
        for i in 0..ctrl.control_dim() {
            match accumulate_row(ctrl.h(), i, &state, policy.scale_bits, None, &mut ops) {
                Ok(_) => {}
                Err(BudgetError::DepthExhausted { .. }) => {
                    failed_at = Some(step);
                    break 'run;
                }
                Err(e) => return Err(e),
            }
        }
        let mut next = Vec::with_capacity(n_c);
        for j in 0..n_c {
            let through_state =
                match accumulate_row(ctrl.f(), j, &state, policy.scale_bits, None, &mut ops) {
                    Ok(v) => v,
                    Err(BudgetError::DepthExhausted { .. }) => {
                        failed_at = Some(step);
                        break 'run;
                    }
                    Err(e) => return Err(e),
                };
            let entry = match accumulate_row(
                ctrl.g(),
                j,
                &y_enc,
                policy.scale_bits,
                through_state,
                &mut ops,
            ) {
                Ok(v) => v,
                Err(BudgetError::DepthExhausted { .. }) => {
                    failed_at = Some(step);
                    break 'run;
                }
                Err(e) => return Err(e),
            };
            next.push(match entry {
                Some(v) => v,
                None => encrypt_fresh(0.0, policy)?,
            });
        }
        state = next;
        steps_completed = step;
    }

    Ok(RecursiveRunReport {
        steps_completed,
        failed_at,
        final_state_noise: state.iter().fold(0.0, |a, v| a.max(v.noise)),
    })
}

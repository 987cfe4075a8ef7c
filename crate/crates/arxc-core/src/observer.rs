//! Observer-form representation of a controller and its finite-window (ARX)
//! realisation.
//!
//! A dynamic controller `x_c⁺ = f_c(x_c, y)`, `u = h_c(x_c)` admits an
//! *observer form* when there is a continuous map `f_o(x_c, y, u)` that
//! reproduces the controller along its own output,
//!
//! ```text
//! f_o(x_c, y, h_c(x_c)) = f_c(x_c, y),
//! ```
//!
//! and forgets its initial condition at a certified exponential rate
//! (see [`KLDecay`]). Composing such a map `N` times from the zero state over
//! the last `N` measurements and controls reconstructs the controller state
//! up to a decaying error, which turns the controller into a static function
//! of a sliding window — an ARX controller. This module builds that
//! controller, measures the state perturbation it induces, and selects the
//! window length needed to meet a prescribed closed-loop error budget.

use std::collections::VecDeque;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::norms::{vec_inf_norm, vec_is_finite};
use crate::sim::{ClosedLoopRecord, Controller, ControllerModel, RealVector, SimError, Trajectory};

/// Map `(x_c, y, u) -> x_c⁺` defining an observer form.
pub type ObserverMap =
    Arc<dyn Fn(&RealVector, &RealVector, &RealVector) -> RealVector + Send + Sync>;

/// Errors raised by observer-form construction and analysis.
#[derive(Debug, Error)]
pub enum ArxError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("window order must be at least 1")]
    ZeroOrder,
    #[error("switch time {switch_time} precedes the window order {order}")]
    SwitchBeforeOrder { switch_time: usize, order: usize },
    #[error("window has {got} entries but the order is {expected}")]
    WindowLength { expected: usize, got: usize },
    #[error(
        "decay parameters out of range: gain {gain}, rate {rate} (need gain > 0 and rate in (0,1))"
    )]
    InvalidDecay { gain: f64, rate: f64 },
    #[error("invalid gamma inverse: {reason}")]
    InvalidGammaInverse { reason: &'static str },
    #[error("epsilon must be positive, got {0}")]
    NonPositiveEpsilon(f64),
    #[error("sample box is invalid: {reason}")]
    InvalidSampleBox { reason: String },
    #[error("grid search would visit {cells} cells (limit {limit}); lower the resolution or the signal dimension")]
    GridTooLarge { cells: u128, limit: u128 },
    #[error("observer map produced a non-finite value during grid maximisation")]
    NonFiniteObserver,
    #[error("no order up to {limit} meets the decay target {target:e}")]
    OrderSearchExhausted { limit: usize, target: f64 },
}

/// Exponential forgetting envelope `β(s, t) = gain · rate^t · s`.
///
/// The envelope certifies how fast the observer map forgets its initial
/// state. Restricting to the exponential family keeps the order-selection
/// inequality solvable in closed form; more general decay profiles must be
/// majorised by an exponential before use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KLDecay {
    gain: f64,
    rate: f64,
}

impl KLDecay {
    /// Requires `gain > 0` and `rate ∈ (0, 1)`.
    pub fn new(gain: f64, rate: f64) -> Result<Self, ArxError> {
        if !(gain > 0.0 && gain.is_finite() && rate > 0.0 && rate < 1.0) {
            return Err(ArxError::InvalidDecay { gain, rate });
        }
        Ok(Self { gain, rate })
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Evaluates `β(s, t) = gain · rate^t · s`.
    pub fn eval(&self, s: f64, t: usize) -> f64 {
        self.gain * self.rate.powi(t as i32) * s
    }
}

/// An observer form `f_o` together with its dimensions and certified decay.
#[derive(Clone)]
pub struct ObserverForm {
    map: ObserverMap,
    state_dim: usize,
    measurement_dim: usize,
    control_dim: usize,
    decay: KLDecay,
}

impl ObserverForm {
    /// Builds an observer form, probing the map once at the origin to verify
    /// the declared state dimension.
    pub fn new(
        map: ObserverMap,
        state_dim: usize,
        measurement_dim: usize,
        control_dim: usize,
        decay: KLDecay,
    ) -> Result<Self, ArxError> {
        let x = RealVector::zeros(state_dim);
        let y = RealVector::zeros(measurement_dim);
        let u = RealVector::zeros(control_dim);
        let got = map(&x, &y, &u).len();
        if got != state_dim {
            return Err(SimError::DimensionMismatch {
                role: "observer map output",
                expected: state_dim,
                got,
            }
            .into());
        }
        Ok(Self {
            map,
            state_dim,
            measurement_dim,
            control_dim,
            decay,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn measurement_dim(&self) -> usize {
        self.measurement_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn decay(&self) -> KLDecay {
        self.decay
    }

    /// One application `f_o(x_c, y, u)`.
    pub fn apply(&self, x_c: &RealVector, y: &RealVector, u: &RealVector) -> RealVector {
        (self.map)(x_c, y, u)
    }
}

/// `N`-fold composition of the observer map from the zero state.
///
/// Windows are stored newest-first (`window[0]` is the most recent sample)
/// and consumed oldest-first, so the composition replays the last `N` steps
/// in chronological order.
pub fn compose_observer(
    observer: &ObserverForm,
    y_window: &[RealVector],
    u_window: &[RealVector],
) -> Result<RealVector, ArxError> {
    if y_window.len() != u_window.len() {
        return Err(ArxError::WindowLength {
            expected: y_window.len(),
            got: u_window.len(),
        });
    }
    if y_window.is_empty() {
        return Err(ArxError::ZeroOrder);
    }
    let mut x = RealVector::zeros(observer.state_dim());
    for (y, u) in y_window.iter().rev().zip(u_window.iter().rev()) {
        x = observer.apply(&x, y, u);
    }
    Ok(x)
}

/// Axis-aligned box used for deterministic sampling of state/signal spaces.
#[derive(Debug, Clone)]
pub struct SampleBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl SampleBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, ArxError> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(ArxError::InvalidSampleBox {
                reason: format!("bound lengths {} vs {}", lo.len(), hi.len()),
            });
        }
        for (l, h) in lo.iter().zip(&hi) {
            if !(l.is_finite() && h.is_finite() && l <= h) {
                return Err(ArxError::InvalidSampleBox {
                    reason: format!("bad interval [{l}, {h}]"),
                });
            }
        }
        Ok(Self { lo, hi })
    }

    /// Symmetric box `[-radius, radius]^dim`.
    pub fn symmetric(dim: usize, radius: f64) -> Result<Self, ArxError> {
        Self::new(vec![-radius; dim], vec![radius; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    fn point(&self, unit: &[f64]) -> Vec<f64> {
        unit.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(u, (l, h))| l + u * (h - l))
            .collect()
    }
}

/// Radical-inverse function in the given base (one Halton coordinate).
fn radical_inverse(mut index: usize, base: usize) -> f64 {
    let mut result = 0.0;
    let mut frac = 1.0 / base as f64;
    while index > 0 {
        result += (index % base) as f64 * frac;
        index /= base;
        frac /= base as f64;
    }
    result
}

/// First `n` primes, used as Halton bases.
fn first_primes(n: usize) -> Vec<usize> {
    let mut primes = Vec::with_capacity(n);
    let mut candidate = 2usize;
    while primes.len() < n {
        if primes.iter().all(|p| !candidate.is_multiple_of(*p)) {
            primes.push(candidate);
        }
        candidate += 1;
    }
    primes
}

/// Verifies the defining identity `f_o(x, y, h_c(x)) = f_c(x, y)` on a
/// deterministic low-discrepancy (Halton) sample of the given box.
///
/// The box lives in the stacked `(x_c, y)` space, so its dimension must be
/// `state_dim + measurement_dim`. Returns `true` iff the identity holds to
/// within `tol` (infinity norm) at every sampled point. A sampled check can
/// only ever refute the identity on the tested compact set; it is not a
/// global certificate.
pub fn check_observer_consistency(
    controller: &ControllerModel,
    observer: &ObserverForm,
    sample_box: &SampleBox,
    n_samples: usize,
    tol: f64,
) -> Result<bool, ArxError> {
    let (n_c, n_y) = (controller.state_dim(), controller.measurement_dim());
    if observer.state_dim() != n_c
        || observer.measurement_dim() != n_y
        || observer.control_dim() != controller.control_dim()
    {
        return Err(SimError::DimensionMismatch {
            role: "observer vs controller dimensions",
            expected: n_c,
            got: observer.state_dim(),
        }
        .into());
    }
    if sample_box.dim() != n_c + n_y {
        return Err(ArxError::InvalidSampleBox {
            reason: format!(
                "box dim {} != state + measurement {}",
                sample_box.dim(),
                n_c + n_y
            ),
        });
    }
    let bases = first_primes(sample_box.dim());
    let mut unit = vec![0.0; sample_box.dim()];
    for k in 1..=n_samples {
        for (d, base) in bases.iter().enumerate() {
            unit[d] = radical_inverse(k, *base);
        }
        let p = sample_box.point(&unit);
        let x = RealVector::from_column_slice(&p[..n_c]);
        let y = RealVector::from_column_slice(&p[n_c..]);
        let u = controller.output(&x);
        let lhs = observer.apply(&x, &y, &u);
        let rhs = controller.dynamics(&x, &y);
        if vec_inf_norm(&(lhs - rhs)) > tol {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Finite-window realisation of a dynamic controller.
///
/// Before `switch_time` the original recursive controller runs verbatim
/// (warm-up). From `switch_time` on, the controller state is reconstructed
/// each step as the `order`-fold observer composition over the last `order`
/// measurements and controls, and the control is `h_c` of that
/// reconstruction. The warm-up recursion keeps absorbing measurements
/// throughout, so the warm-up branch is always well defined.
pub struct ArxController {
    observer: ObserverForm,
    warmup: ControllerModel,
    order: usize,
    switch_time: usize,
    warm_state: RealVector,
    y_window: VecDeque<RealVector>,
    u_window: VecDeque<RealVector>,
    next_time: usize,
}

impl ArxController {
    /// Requires `order ≥ 1` and `switch_time ≥ order` (the windows must be
    /// full before the first reconstruction), plus matching dimensions
    /// between the observer form and the warm-up controller.
    pub fn new(
        observer: ObserverForm,
        warmup: ControllerModel,
        order: usize,
        switch_time: usize,
    ) -> Result<Self, ArxError> {
        if order == 0 {
            return Err(ArxError::ZeroOrder);
        }
        if switch_time < order {
            return Err(ArxError::SwitchBeforeOrder { switch_time, order });
        }
        if observer.state_dim() != warmup.state_dim()
            || observer.measurement_dim() != warmup.measurement_dim()
            || observer.control_dim() != warmup.control_dim()
        {
            return Err(SimError::DimensionMismatch {
                role: "observer vs warm-up controller dimensions",
                expected: warmup.state_dim(),
                got: observer.state_dim(),
            }
            .into());
        }
        let warm_state = RealVector::zeros(warmup.state_dim());
        Ok(Self {
            observer,
            warmup,
            order,
            switch_time,
            warm_state,
            y_window: VecDeque::new(),
            u_window: VecDeque::new(),
            next_time: 0,
        })
    }

    /// Default switch time `max(order, 20)`: windows are always full at the
    /// handoff, and short-window controllers still warm up long enough for
    /// transients to develop.
    pub fn with_default_switch(
        observer: ObserverForm,
        warmup: ControllerModel,
        order: usize,
    ) -> Result<Self, ArxError> {
        let switch_time = order.max(20);
        Self::new(observer, warmup, order, switch_time)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn switch_time(&self) -> usize {
        self.switch_time
    }

    pub fn observer(&self) -> &ObserverForm {
        &self.observer
    }

    /// One controller step: returns `u(t)` and advances the windows.
    ///
    /// Equivalent to the [`Controller`] trait sequence `state`/`control`/
    /// `absorb`; must be called with strictly increasing `t` starting at 0.
    pub fn step(&mut self, t: usize, y_t: &RealVector) -> Result<RealVector, SimError> {
        let x_c = self.state(t)?;
        let u_t = self.control(&x_c);
        self.absorb(t, y_t, &u_t)?;
        Ok(u_t)
    }

    fn reconstruct(&self) -> Result<RealVector, ArxError> {
        if self.y_window.len() != self.order {
            return Err(ArxError::WindowLength {
                expected: self.order,
                got: self.y_window.len(),
            });
        }
        let y: Vec<RealVector> = self.y_window.iter().cloned().collect();
        let u: Vec<RealVector> = self.u_window.iter().cloned().collect();
        compose_observer(&self.observer, &y, &u)
    }
}

impl Controller for ArxController {
    fn state_dim(&self) -> usize {
        self.warmup.state_dim()
    }

    fn control_dim(&self) -> usize {
        self.warmup.control_dim()
    }

    fn reset(&mut self, x_c0: &RealVector) -> Result<(), SimError> {
        if x_c0.len() != self.warmup.state_dim() {
            return Err(SimError::DimensionMismatch {
                role: "controller initial state",
                expected: self.warmup.state_dim(),
                got: x_c0.len(),
            });
        }
        self.warm_state = x_c0.clone();
        self.y_window.clear();
        self.u_window.clear();
        self.next_time = 0;
        Ok(())
    }

    fn state(&mut self, t: usize) -> Result<RealVector, SimError> {
        if t != self.next_time {
            return Err(SimError::OutOfOrder {
                expected: self.next_time,
                got: t,
            });
        }
        if t < self.switch_time {
            Ok(self.warm_state.clone())
        } else {
            // Windows hold exactly `order` samples here because
            // switch_time ≥ order and absorb ran once per past step.
            self.reconstruct().map_err(|e| match e {
                ArxError::Sim(s) => s,
                other => SimError::Misaligned {
                    reason: other.to_string(),
                },
            })
        }
    }

    fn control(&self, x_c: &RealVector) -> RealVector {
        self.warmup.output(x_c)
    }

    fn nominal_next(&self, x_c: &RealVector, y: &RealVector) -> RealVector {
        self.warmup.dynamics(x_c, y)
    }

    fn absorb(&mut self, t: usize, y_t: &RealVector, u_t: &RealVector) -> Result<(), SimError> {
        if t != self.next_time {
            return Err(SimError::OutOfOrder {
                expected: self.next_time,
                got: t,
            });
        }
        self.y_window.push_front(y_t.clone());
        self.u_window.push_front(u_t.clone());
        self.y_window.truncate(self.order);
        self.u_window.truncate(self.order);
        self.warm_state = self.warmup.dynamics(&self.warm_state, y_t);
        self.next_time = t + 1;
        Ok(())
    }
}

/// Implied state perturbation of a closed-loop run, with the bound it is
/// measured against.
#[derive(Debug, Clone, Serialize)]
pub struct PerturbationReport {
    /// `e_c(t) = x_c(t+1) - f_c(x_c(t), y(t))`, one sample per recorded step.
    pub e_c_traj: Trajectory,
    /// `sup_t ‖e_c(t)‖∞`.
    pub sup_e_c: f64,
    /// Perturbation budget the run is checked against.
    pub bound_delta: f64,
    /// `sup_e_c ≤ bound_delta`.
    pub satisfied: bool,
}

/// Recomputes the implied perturbation of a recorded run against the nominal
/// update of `controller` and compares it with the budget `bound_delta`.
///
/// Pass `f64::INFINITY` as the budget when only the perturbation trajectory
/// is of interest.
pub fn implied_perturbation(
    record: &ClosedLoopRecord,
    controller: &ControllerModel,
    bound_delta: f64,
) -> Result<PerturbationReport, ArxError> {
    if record.ctrl_state_traj.is_empty() {
        return Err(SimError::EmptyTrajectory.into());
    }
    if record.ctrl_state_traj.dim() != controller.state_dim() {
        return Err(SimError::DimensionMismatch {
            role: "recorded controller state",
            expected: controller.state_dim(),
            got: record.ctrl_state_traj.dim(),
        }
        .into());
    }
    let horizon = record.horizon();
    let mut e_c_traj = Trajectory::new(0, controller.state_dim());
    for t in 0..horizon {
        let x_c = record.ctrl_state_traj.get(t).expect("aligned record");
        let y_t = record.output_traj.get(t).expect("aligned record");
        let next = record
            .ctrl_state_traj
            .get(t + 1)
            .unwrap_or(&record.final_ctrl_state);
        e_c_traj.push(next - controller.dynamics(x_c, y_t))?;
    }
    let sup_e_c = crate::sim::sup_norm(&e_c_traj)?;
    Ok(PerturbationReport {
        e_c_traj,
        sup_e_c,
        bound_delta,
        satisfied: sup_e_c <= bound_delta,
    })
}

/// Default per-axis resolution of the deterministic grid maximisation.
pub const DEFAULT_GRID_POINTS: usize = 33;

const GRID_CELL_LIMIT: u128 = 10_000_000;
const ORDER_SEARCH_LIMIT: usize = 1_000_000;

/// Window length needed to push the reconstruction error below the budget
/// implied by `epsilon`, using the default grid resolution.
///
/// See [`select_order_with_grid`] for the selection rule.
pub fn select_order(
    decay: &KLDecay,
    observer: &ObserverForm,
    nominal_bound: f64,
    epsilon: f64,
    gamma_inverse: &dyn Fn(f64) -> f64,
) -> Result<usize, ArxError> {
    select_order_with_grid(
        decay,
        observer,
        nominal_bound,
        epsilon,
        gamma_inverse,
        DEFAULT_GRID_POINTS,
    )
}

/// Smallest `N ≥ 1` with `gain · rate^N · F̄ ≤ gamma_inverse(epsilon)`.
///
/// `F̄` bounds the state reached by one observer step from zero; it is the
/// maximum of `‖f_o(0, y, u)‖∞` over the box `‖[y; u]‖∞ ≤ nominal_bound +
/// epsilon`, maximised on a deterministic grid with `grid_points` points per
/// axis (endpoints included). `gamma_inverse` is the inverse of the
/// closed-loop gain: it converts the admissible signal deviation `epsilon`
/// into an admissible state perturbation.
pub fn select_order_with_grid(
    decay: &KLDecay,
    observer: &ObserverForm,
    nominal_bound: f64,
    epsilon: f64,
    gamma_inverse: &dyn Fn(f64) -> f64,
    grid_points: usize,
) -> Result<usize, ArxError> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(ArxError::NonPositiveEpsilon(epsilon));
    }
    if gamma_inverse(0.0) != 0.0 {
        return Err(ArxError::InvalidGammaInverse {
            reason: "gamma_inverse(0) must be 0",
        });
    }
    let delta = gamma_inverse(epsilon);
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(ArxError::InvalidGammaInverse {
            reason: "gamma_inverse(epsilon) must be positive and finite",
        });
    }
    if gamma_inverse(epsilon / 2.0) >= delta {
        return Err(ArxError::InvalidGammaInverse {
            reason: "gamma_inverse must be strictly increasing",
        });
    }
    let f_bar = max_first_step_norm(observer, nominal_bound + epsilon, grid_points)?;

    let mut level = decay.gain() * f_bar;
    for n in 1..=ORDER_SEARCH_LIMIT {
        level *= decay.rate();
        if level <= delta {
            return Ok(n);
        }
    }
    Err(ArxError::OrderSearchExhausted {
        limit: ORDER_SEARCH_LIMIT,
        target: delta,
    })
}

/// Grid maximisation of `‖f_o(0, y, u)‖∞` over `‖[y; u]‖∞ ≤ radius`.
fn max_first_step_norm(
    observer: &ObserverForm,
    radius: f64,
    grid_points: usize,
) -> Result<f64, ArxError> {
    let dims = observer.measurement_dim() + observer.control_dim();
    let per_axis = grid_points.max(2);
    let cells = (per_axis as u128).pow(dims as u32);
    if cells > GRID_CELL_LIMIT {
        return Err(ArxError::GridTooLarge {
            cells,
            limit: GRID_CELL_LIMIT,
        });
    }
    let zero = RealVector::zeros(observer.state_dim());
    let mut index = vec![0usize; dims];
    let mut point = vec![0.0f64; dims];
    let mut best = 0.0f64;
    loop {
        for (d, i) in index.iter().enumerate() {
            point[d] = -radius + 2.0 * radius * (*i as f64) / (per_axis - 1) as f64;
        }
        let y = RealVector::from_column_slice(&point[..observer.measurement_dim()]);
        let u = RealVector::from_column_slice(&point[observer.measurement_dim()..]);
        let value = observer.apply(&zero, &y, &u);
        if !vec_is_finite(&value) {
            return Err(ArxError::NonFiniteObserver);
        }
        best = best.max(vec_inf_norm(&value));

        // odometer increment over the grid indices
        let mut d = 0;
        loop {
            if d == dims {
                return Ok(best);
            }
            index[d] += 1;
            if index[d] < per_axis {
                break;
            }
            index[d] = 0;
            d += 1;
        }
    }
}

/// Finite-window controller built from the controller's own update map,
/// with no observer correction: the composition replays `f_c` alone and
/// ignores the control window.
///
/// Only sound when `f_c` is contractive in its state argument with the given
/// envelope — the caller certifies this. For non-contractive controllers the
/// construction is permitted but the reconstruction error does not decay,
/// which is exactly the failure the observer form exists to repair.
pub fn fir_direct(
    controller: &ControllerModel,
    decay: KLDecay,
    order: usize,
) -> Result<ArxController, ArxError> {
    let dynamics_observer: ObserverMap = {
        let model = controller.clone();
        Arc::new(move |x: &RealVector, y: &RealVector, _u: &RealVector| model.dynamics(x, y))
    };
    let observer = ObserverForm::new(
        dynamics_observer,
        controller.state_dim(),
        controller.measurement_dim(),
        controller.control_dim(),
        decay,
    )?;
    ArxController::with_default_switch(observer, controller.clone(), order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate_closed_loop, simulate_nominal, PlantModel};
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn decay_half() -> KLDecay {
        KLDecay::new(1.0, 0.5).unwrap()
    }

    fn scalar_sum_observer() -> ObserverForm {
        ObserverForm::new(
            Arc::new(|x: &RealVector, y: &RealVector, u: &RealVector| x + y + u),
            1,
            1,
            1,
            decay_half(),
        )
        .unwrap()
    }

    #[test]
    fn decay_validation() {
        assert!(KLDecay::new(1.0, 0.5).is_ok());
        assert!(matches!(
            KLDecay::new(0.0, 0.5),
            Err(ArxError::InvalidDecay { .. })
        ));
        assert!(matches!(
            KLDecay::new(1.0, 1.0),
            Err(ArxError::InvalidDecay { .. })
        ));
        assert!(matches!(
            KLDecay::new(1.0, -0.1),
            Err(ArxError::InvalidDecay { .. })
        ));
        let d = decay_half();
        assert_eq!(d.eval(8.0, 3), 1.0);
    }

    #[test]
    fn single_composition_from_zero() {
        let obs = scalar_sum_observer();
        let y = vec![RealVector::from_vec(vec![2.0])];
        let u = vec![RealVector::from_vec(vec![3.0])];
        let x = compose_observer(&obs, &y, &u).unwrap();
        assert_eq!(x[0], 5.0);
    }

    #[test]
    fn composition_matches_manual_iteration() {
        // nonlinear map, window of 6, newest-first storage
        let obs = ObserverForm::new(
            Arc::new(|x: &RealVector, y: &RealVector, u: &RealVector| {
                RealVector::from_vec(vec![
                    0.4 * x[0] + 0.1 * x[1].sin() + y[0],
                    0.3 * x[1] + 0.2 * u[0],
                ])
            }),
            2,
            1,
            1,
            decay_half(),
        )
        .unwrap();
        let n = 6;
        let ys: Vec<RealVector> = (0..n)
            .map(|k| RealVector::from_vec(vec![0.1 * k as f64 - 0.2]))
            .collect();
        let us: Vec<RealVector> = (0..n)
            .map(|k| RealVector::from_vec(vec![0.05 * k as f64]))
            .collect();
        // ys[0] is newest; manual iteration runs oldest (index n-1) first
        let mut x = RealVector::zeros(2);
        for k in (0..n).rev() {
            x = obs.apply(&x, &ys[k], &us[k]);
        }
        let composed = compose_observer(&obs, &ys, &us).unwrap();
        assert_eq!(composed, x);
    }

    #[test]
    fn window_length_mismatch_is_rejected() {
        let obs = scalar_sum_observer();
        let y = vec![RealVector::from_vec(vec![1.0]); 2];
        let u = vec![RealVector::from_vec(vec![1.0]); 3];
        assert!(matches!(
            compose_observer(&obs, &y, &u),
            Err(ArxError::WindowLength { .. })
        ));
    }

    fn linear_controller_model(f: f64, g: f64, h: f64) -> ControllerModel {
        ControllerModel::new(
            1,
            1,
            1,
            Arc::new(move |x: &RealVector, y: &RealVector| x * f + y * g),
            Arc::new(move |x: &RealVector| x * h),
        )
        .unwrap()
    }

    #[test]
    fn consistency_holds_for_exact_observer_and_fails_for_perturbed() {
        // f_c = 0.8x + y, h_c = 0.5x, R = 0.6 → f_o = (0.8 - 0.3)x + y + 0.6u
        let ctrl = linear_controller_model(0.8, 1.0, 0.5);
        let exact = ObserverForm::new(
            Arc::new(|x: &RealVector, y: &RealVector, u: &RealVector| x * 0.5 + y + u * 0.6),
            1,
            1,
            1,
            decay_half(),
        )
        .unwrap();
        let boxed = SampleBox::symmetric(2, 3.0).unwrap();
        assert!(check_observer_consistency(&ctrl, &exact, &boxed, 256, 1e-12).unwrap());

        let off = ObserverForm::new(
            Arc::new(|x: &RealVector, y: &RealVector, u: &RealVector| {
                x * 0.5 + y + u * 0.6 + RealVector::from_vec(vec![0.1])
            }),
            1,
            1,
            1,
            decay_half(),
        )
        .unwrap();
        assert!(!check_observer_consistency(&ctrl, &off, &boxed, 256, 1e-12).unwrap());
    }

    #[test]
    fn construction_rejects_bad_order_and_switch() {
        let obs = scalar_sum_observer();
        let warm = linear_controller_model(0.5, 1.0, 1.0);
        assert!(matches!(
            ArxController::new(obs.clone(), warm.clone(), 0, 5),
            Err(ArxError::ZeroOrder)
        ));
        assert!(matches!(
            ArxController::new(obs, warm, 5, 3),
            Err(ArxError::SwitchBeforeOrder { .. })
        ));
    }

    #[test]
    fn warm_branch_and_monotone_time() {
        let warm = linear_controller_model(0.5, 1.0, 1.0);
        let obs = ObserverForm::new(
            Arc::new(|x: &RealVector, y: &RealVector, _u: &RealVector| x * 0.5 + y),
            1,
            1,
            1,
            decay_half(),
        )
        .unwrap();
        let mut arx = ArxController::new(obs, warm, 2, 4).unwrap();
        arx.reset(&RealVector::from_vec(vec![0.7])).unwrap();
        // t = 0: warm branch outputs h_c(x_c0) regardless of y
        let u0 = arx.step(0, &RealVector::from_vec(vec![9.0])).unwrap();
        assert_eq!(u0[0], 0.7);
        // repeating or skipping a step is rejected
        assert!(matches!(
            arx.step(0, &RealVector::from_vec(vec![0.0])),
            Err(SimError::OutOfOrder { .. })
        ));
        assert!(matches!(
            arx.step(2, &RealVector::from_vec(vec![0.0])),
            Err(SimError::OutOfOrder { .. })
        ));
    }

    fn scalar_plant() -> PlantModel {
        PlantModel::new(
            1,
            1,
            1,
            Arc::new(|x: &RealVector, u: &RealVector| x * 0.6 + u * 0.2),
            Arc::new(|x: &RealVector| x.clone()),
        )
        .unwrap()
    }

    #[test]
    fn warmup_phase_equals_nominal_exactly() {
        let plant = scalar_plant();
        let model = linear_controller_model(0.7, 0.3, -0.4);
        // exact observer form with R = 0.5: f_o = (0.7 + 0.2)x + 0.3y + 0.5u
        let obs = ObserverForm::new(
            Arc::new(|x: &RealVector, y: &RealVector, u: &RealVector| x * 0.9 + y * 0.3 + u * 0.5),
            1,
            1,
            1,
            KLDecay::new(1.0, 0.95).unwrap(),
        )
        .unwrap();
        let x_p0 = RealVector::from_vec(vec![1.0]);
        let x_c0 = RealVector::from_vec(vec![0.0]);
        let nominal = simulate_nominal(&plant, &model, &x_p0, &x_c0, 40).unwrap();
        let mut arx = ArxController::new(obs, model.clone(), 4, 12).unwrap();
        let run = simulate_closed_loop(&plant, &mut arx, &x_p0, &x_c0, 40).unwrap();
        for t in 0..12 {
            assert_eq!(
                run.plant_traj.get(t).unwrap(),
                nominal.plant_traj.get(t).unwrap(),
                "warm-up diverged at {t}"
            );
            assert_eq!(
                run.input_traj.get(t).unwrap(),
                nominal.input_traj.get(t).unwrap()
            );
        }
        // perturbation is exactly zero strictly before the handoff step
        let report = implied_perturbation(&run, &model, f64::INFINITY).unwrap();
        for t in 0..11 {
            assert_eq!(report.e_c_traj.get(t).unwrap()[0], 0.0, "t = {t}");
        }
    }

    #[test]
    fn window_discipline_constant_evaluations_per_step() {
        let counter = Arc::new(AtomicUsize::new(0));
        let c = counter.clone();
        let obs = ObserverForm::new(
            Arc::new(move |x: &RealVector, y: &RealVector, u: &RealVector| {
                c.fetch_add(1, Ordering::Relaxed);
                x * 0.5 + y * 0.1 + u * 0.1
            }),
            1,
            1,
            1,
            decay_half(),
        )
        .unwrap();
        let model = linear_controller_model(0.5, 0.1, 0.3);
        let order = 5;
        let mut arx = ArxController::new(obs, model, order, 8).unwrap();
        arx.reset(&RealVector::zeros(1)).unwrap();
        counter.store(0, Ordering::Relaxed);
        for t in 0..30 {
            let before = counter.load(Ordering::Relaxed);
            arx.step(t, &RealVector::from_vec(vec![0.1])).unwrap();
            let used = counter.load(Ordering::Relaxed) - before;
            // construction probes aside: warm steps evaluate the observer
            // never, post-switch steps exactly `order` times
            let expected = if t < 8 { 0 } else { order };
            assert_eq!(used, expected, "step {t}");
        }
    }

    #[test]
    fn perturbed_run_is_not_satisfied_under_tight_bound() {
        let plant = scalar_plant();
        let model = linear_controller_model(0.7, 0.3, -0.4);
        let disturbance = vec![RealVector::from_vec(vec![0.05]); 10];
        let mut ctrl = crate::sim::PerturbedController::new(model.clone(), disturbance);
        let run = simulate_closed_loop(
            &plant,
            &mut ctrl,
            &RealVector::from_vec(vec![1.0]),
            &RealVector::zeros(1),
            20,
        )
        .unwrap();
        let report = implied_perturbation(&run, &model, 1e-6).unwrap();
        assert!(!report.satisfied);
        assert!((report.sup_e_c - 0.05).abs() < 1e-15);
        let loose = implied_perturbation(&run, &model, 0.1).unwrap();
        assert!(loose.satisfied);
    }

    #[test]
    fn order_selection_matches_closed_form() {
        // identity-like observer: ‖f_o(0, y, u)‖ maxes at 1 on the unit box
        let obs = ObserverForm::new(
            Arc::new(|_x: &RealVector, y: &RealVector, _u: &RealVector| y.clone()),
            1,
            1,
            1,
            decay_half(),
        )
        .unwrap();
        // box radius M + ε = 0.5 + 0.5 = 1, F̄ = 1, δ = 0.25 → N = 2
        let n = select_order(&decay_half(), &obs, 0.5, 0.5, &|e| e / 2.0).unwrap();
        assert_eq!(n, 2);

        // F̄ = 10 on the unit box, gain 2, rate 0.9, δ = 0.01 → N = 73
        let obs10 = ObserverForm::new(
            Arc::new(|_x: &RealVector, y: &RealVector, _u: &RealVector| y * 10.0),
            1,
            1,
            1,
            decay_half(),
        )
        .unwrap();
        let decay = KLDecay::new(2.0, 0.9).unwrap();
        let n = select_order(&decay, &obs10, 0.9, 0.1, &|e| e / 10.0).unwrap();
        assert_eq!(n, 73);
    }

    #[test]
    fn order_selection_validates_gamma_inverse() {
        let obs = scalar_sum_observer();
        let d = decay_half();
        assert!(matches!(
            select_order(&d, &obs, 1.0, 0.1, &|_| 1.0),
            Err(ArxError::InvalidGammaInverse { .. })
        ));
        assert!(matches!(
            select_order(&d, &obs, 1.0, 0.1, &|e| -e),
            Err(ArxError::InvalidGammaInverse { .. })
        ));
        assert!(matches!(
            select_order(&d, &obs, 1.0, 0.0, &|e| e),
            Err(ArxError::NonPositiveEpsilon(_))
        ));
    }

    #[test]
    fn fir_direct_replays_the_update_map() {
        // f_c = 0.5x + y over window (1, 1, 1): 1 + 0.5 + 0.25 = 1.75
        let model = linear_controller_model(0.5, 1.0, 1.0);
        let arx = fir_direct(&model, decay_half(), 3).unwrap();
        let y = vec![RealVector::from_vec(vec![1.0]); 3];
        let u = vec![RealVector::from_vec(vec![0.0]); 3];
        let x = compose_observer(arx.observer(), &y, &u).unwrap();
        assert_eq!(x[0], 1.75);
        assert_eq!(arx.switch_time(), 20);
    }

    #[test]
    fn fir_direct_on_expansive_update_is_permitted_but_inaccurate() {
        // f_c = 2x + y is expansive: construction succeeds, but the windowed
        // replay does not converge to the true state, so the implied
        // perturbation stays large no matter the order.
        let model = linear_controller_model(2.0, 1.0, -0.9);
        // plant x⁺ = 0.1x + 0.1u keeps signals bounded despite the bad controller
        let plant = PlantModel::new(
            1,
            1,
            1,
            Arc::new(|x: &RealVector, u: &RealVector| x * 0.1 + u * 0.1),
            Arc::new(|x: &RealVector| x.clone()),
        )
        .unwrap();
        let mut arx = fir_direct(&model, KLDecay::new(1.0, 0.99).unwrap(), 8).unwrap();
        let run = simulate_closed_loop(
            &plant,
            &mut arx,
            &RealVector::from_vec(vec![1.0]),
            &RealVector::zeros(1),
            40,
        );
        // either the run diverges or the perturbation dwarfs any sane budget
        match run {
            Err(SimError::Diverged { .. }) => {}
            Ok(rec) => {
                let report = implied_perturbation(&rec, &model, 1e-3).unwrap();
                assert!(!report.satisfied);
                assert!(report.sup_e_c > 1.0);
            }
            Err(other) => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn halton_sampling_is_deterministic_and_in_box() {
        let boxed = SampleBox::new(vec![-1.0, 2.0], vec![1.0, 3.0]).unwrap();
        let bases = first_primes(2);
        assert_eq!(bases, vec![2, 3]);
        for k in 1..100 {
            let unit: Vec<f64> = bases.iter().map(|b| radical_inverse(k, *b)).collect();
            let p = boxed.point(&unit);
            assert!((-1.0..=1.0).contains(&p[0]));
            assert!((2.0..=3.0).contains(&p[1]));
        }
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(2, 2), 0.25);
        assert_eq!(radical_inverse(3, 2), 0.75);
    }
}

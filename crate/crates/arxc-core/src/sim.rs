//! Discrete-time closed-loop simulation of a plant and a dynamic controller.
//!
//! The simulator advances the interconnection
//!
//! ```text
//! y(t) = h_p(x_p(t))          plant output
//! u(t) = h_c(x_c(t))          controller output
//! x_p(t+1) = f_p(x_p(t), u(t))
//! x_c(t+1) = f_c(x_c(t), y(t))
//! ```
//!
//! for `t = 0, 1, …, horizon-1` and records every signal. Controllers are
//! abstracted behind the [`Controller`] trait so that the same engine drives
//! both the ordinary recursive state update and window-based reformulations
//! whose internal state is reconstructed from recent inputs and outputs. The
//! engine also records the *implied perturbation*
//!
//! ```text
//! e_c(t) = x_c(t+1) - f_c(x_c(t), y(t)),
//! ```
//!
//! the amount by which the realised controller state deviates from one step
//! of the nominal update; it is identically zero for a nominal run and is the
//! quantity the approximation certificates bound.

use std::sync::Arc;

use nalgebra::DVector;
use serde::ser::{Serialize, SerializeStruct, Serializer};
use thiserror::Error;

use crate::norms::{vec_inf_norm, vec_is_finite};

/// Dense column vector of `f64`; the state and signal type used throughout.
pub type RealVector = DVector<f64>;

/// Shared map taking two vector arguments, e.g. `(x, u) -> x⁺`.
pub type Map2 = Arc<dyn Fn(&RealVector, &RealVector) -> RealVector + Send + Sync>;
/// Shared map taking one vector argument, e.g. `x -> y`.
pub type Map1 = Arc<dyn Fn(&RealVector) -> RealVector + Send + Sync>;

/// Errors surfaced by the simulation layer.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("dimension mismatch for {role}: expected {expected}, got {got}")]
    DimensionMismatch {
        role: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("signal {signal} diverged (non-finite value) at step {step}")]
    Diverged { signal: &'static str, step: usize },
    #[error("operation on an empty trajectory")]
    EmptyTrajectory,
    #[error("trajectories are not aligned: {reason}")]
    Misaligned { reason: String },
    #[error("horizon must be at least 1")]
    EmptyHorizon,
    #[error("record is not a nominal run: perturbation is nonzero at step {step}")]
    NotNominal { step: usize },
    #[error("controller stepped out of order: expected time {expected}, got {got}")]
    OutOfOrder { expected: usize, got: usize },
}

/// A finite sequence of equi-dimensional samples indexed by discrete time.
///
/// A trajectory starting at `start_time` with `len()` samples covers the time
/// window `start_time .. start_time + len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    start_time: usize,
    dim: usize,
    samples: Vec<RealVector>,
}

impl Trajectory {
    /// Empty trajectory with a fixed sample dimension.
    pub fn new(start_time: usize, dim: usize) -> Self {
        Self {
            start_time,
            dim,
            samples: Vec::new(),
        }
    }

    /// Builds a trajectory from samples, enforcing uniform dimension.
    pub fn from_samples(start_time: usize, samples: Vec<RealVector>) -> Result<Self, SimError> {
        let dim = samples.first().map_or(0, |s| s.len());
        for s in &samples {
            if s.len() != dim {
                return Err(SimError::DimensionMismatch {
                    role: "trajectory sample",
                    expected: dim,
                    got: s.len(),
                });
            }
        }
        Ok(Self {
            start_time,
            dim,
            samples,
        })
    }

    /// Appends a sample, enforcing the trajectory's dimension.
    pub fn push(&mut self, sample: RealVector) -> Result<(), SimError> {
        if sample.len() != self.dim {
            return Err(SimError::DimensionMismatch {
                role: "trajectory sample",
                expected: self.dim,
                got: sample.len(),
            });
        }
        self.samples.push(sample);
        Ok(())
    }

    pub fn start_time(&self) -> usize {
        self.start_time
    }

    /// One past the last covered time index.
    pub fn end_time(&self) -> usize {
        self.start_time + self.samples.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sample at absolute time `t`, if covered.
    pub fn get(&self, t: usize) -> Option<&RealVector> {
        t.checked_sub(self.start_time)
            .and_then(|i| self.samples.get(i))
    }

    pub fn samples(&self) -> &[RealVector] {
        &self.samples
    }

    /// Iterates over `(absolute time, sample)` pairs.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &RealVector)> {
        self.samples
            .iter()
            .enumerate()
            .map(move |(i, s)| (self.start_time + i, s))
    }
}

impl Serialize for Trajectory {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut st = serializer.serialize_struct("Trajectory", 2)?;
        st.serialize_field("start_time", &self.start_time)?;
        let rows: Vec<Vec<f64>> = self
            .samples
            .iter()
            .map(|s| s.iter().copied().collect())
            .collect();
        st.serialize_field("samples", &rows)?;
        st.end()
    }
}

/// Largest infinity norm attained along a trajectory.
///
/// Errors on an empty trajectory rather than returning 0.0, so a missing
/// signal can never masquerade as a benign bound.
pub fn sup_norm(traj: &Trajectory) -> Result<f64, SimError> {
    if traj.is_empty() {
        return Err(SimError::EmptyTrajectory);
    }
    Ok(traj
        .samples
        .iter()
        .fold(0.0_f64, |acc, s| acc.max(vec_inf_norm(s))))
}

/// Largest pointwise infinity-norm difference between two aligned trajectories.
pub fn max_deviation(a: &Trajectory, b: &Trajectory) -> Result<f64, SimError> {
    if a.is_empty() || b.is_empty() {
        return Err(SimError::EmptyTrajectory);
    }
    if a.start_time != b.start_time || a.len() != b.len() || a.dim != b.dim {
        return Err(SimError::Misaligned {
            reason: format!(
                "start {} vs {}, len {} vs {}, dim {} vs {}",
                a.start_time,
                b.start_time,
                a.len(),
                b.len(),
                a.dim,
                b.dim
            ),
        });
    }
    Ok(a.samples
        .iter()
        .zip(&b.samples)
        .fold(0.0_f64, |acc, (x, y)| acc.max(vec_inf_norm(&(x - y)))))
}

/// Largest pointwise Euclidean-norm difference between two aligned
/// trajectories — the per-step distance metric used by the benchmark sweeps.
pub fn max_deviation_euclidean(a: &Trajectory, b: &Trajectory) -> Result<f64, SimError> {
    if a.is_empty() || b.is_empty() {
        return Err(SimError::EmptyTrajectory);
    }
    if a.start_time != b.start_time || a.len() != b.len() || a.dim != b.dim {
        return Err(SimError::Misaligned {
            reason: format!(
                "start {} vs {}, len {} vs {}, dim {} vs {}",
                a.start_time,
                b.start_time,
                a.len(),
                b.len(),
                a.dim,
                b.dim
            ),
        });
    }
    Ok(a.samples
        .iter()
        .zip(&b.samples)
        .fold(0.0_f64, |acc, (x, y)| acc.max((x - y).norm())))
}

/// Plant `x_p(t+1) = f_p(x_p, u)`, `y = h_p(x_p)` with declared dimensions.
#[derive(Clone)]
pub struct PlantModel {
    state_dim: usize,
    input_dim: usize,
    output_dim: usize,
    dynamics: Map2,
    output: Map1,
}

impl PlantModel {
    /// Builds a plant and probes both maps once (at the origin) to verify
    /// that they produce the declared dimensions.
    pub fn new(
        state_dim: usize,
        input_dim: usize,
        output_dim: usize,
        dynamics: Map2,
        output: Map1,
    ) -> Result<Self, SimError> {
        let x = RealVector::zeros(state_dim);
        let u = RealVector::zeros(input_dim);
        let got = dynamics(&x, &u).len();
        if got != state_dim {
            return Err(SimError::DimensionMismatch {
                role: "plant dynamics output",
                expected: state_dim,
                got,
            });
        }
        let got = output(&x).len();
        if got != output_dim {
            return Err(SimError::DimensionMismatch {
                role: "plant output map",
                expected: output_dim,
                got,
            });
        }
        Ok(Self {
            state_dim,
            input_dim,
            output_dim,
            dynamics,
            output,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// One step of the plant dynamics.
    pub fn step(&self, x_p: &RealVector, u: &RealVector) -> RealVector {
        (self.dynamics)(x_p, u)
    }

    /// Plant output `y = h_p(x_p)`.
    pub fn measure(&self, x_p: &RealVector) -> RealVector {
        (self.output)(x_p)
    }
}

/// Dynamic controller `x_c(t+1) = f_c(x_c, y)`, `u = h_c(x_c)`.
#[derive(Clone)]
pub struct ControllerModel {
    state_dim: usize,
    measurement_dim: usize,
    control_dim: usize,
    dynamics: Map2,
    output: Map1,
}

impl ControllerModel {
    /// Builds a controller and probes both maps once (at the origin) to
    /// verify that they produce the declared dimensions.
    pub fn new(
        state_dim: usize,
        measurement_dim: usize,
        control_dim: usize,
        dynamics: Map2,
        output: Map1,
    ) -> Result<Self, SimError> {
        let x = RealVector::zeros(state_dim);
        let y = RealVector::zeros(measurement_dim);
        let got = dynamics(&x, &y).len();
        if got != state_dim {
            return Err(SimError::DimensionMismatch {
                role: "controller dynamics output",
                expected: state_dim,
                got,
            });
        }
        let got = output(&x).len();
        if got != control_dim {
            return Err(SimError::DimensionMismatch {
                role: "controller output map",
                expected: control_dim,
                got,
            });
        }
        Ok(Self {
            state_dim,
            measurement_dim,
            control_dim,
            dynamics,
            output,
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

    /// Nominal state update `f_c(x_c, y)`.
    pub fn dynamics(&self, x_c: &RealVector, y: &RealVector) -> RealVector {
        (self.dynamics)(x_c, y)
    }

    /// Static output map `u = h_c(x_c)`.
    pub fn output(&self, x_c: &RealVector) -> RealVector {
        (self.output)(x_c)
    }
}

/// Interface the simulation engine drives once per step.
///
/// The engine calls, in order: [`Controller::state`] to obtain `x_c(t)`,
/// [`Controller::control`] to form `u(t)`, then [`Controller::absorb`] with
/// the signals of step `t`. `state(horizon)` is queried once more after the
/// final step so the perturbation `e_c(horizon-1)` can be formed.
pub trait Controller {
    fn state_dim(&self) -> usize;

    fn control_dim(&self) -> usize;

    /// Resets the internal history; `x_c0` seeds the state at time 0.
    fn reset(&mut self, x_c0: &RealVector) -> Result<(), SimError>;

    /// Controller state `x_c(t)` implied by the history absorbed so far.
    fn state(&mut self, t: usize) -> Result<RealVector, SimError>;

    /// Static output map `u = h_c(x_c)`.
    fn control(&self, x_c: &RealVector) -> RealVector;

    /// One step of the underlying nominal update `f_c(x_c, y)`.
    fn nominal_next(&self, x_c: &RealVector, y: &RealVector) -> RealVector;

    /// Records the measurement and control of step `t`.
    fn absorb(&mut self, t: usize, y_t: &RealVector, u_t: &RealVector) -> Result<(), SimError>;
}

/// The ordinary recursive realisation of a [`ControllerModel`].
pub struct RecursiveController {
    model: ControllerModel,
    state: RealVector,
    next_time: usize,
}

impl RecursiveController {
    pub fn new(model: ControllerModel) -> Self {
        let state = RealVector::zeros(model.state_dim());
        Self {
            model,
            state,
            next_time: 0,
        }
    }
}

impl Controller for RecursiveController {
    fn state_dim(&self) -> usize {
        self.model.state_dim()
    }

    fn control_dim(&self) -> usize {
        self.model.control_dim()
    }

    fn reset(&mut self, x_c0: &RealVector) -> Result<(), SimError> {
        if x_c0.len() != self.model.state_dim() {
            return Err(SimError::DimensionMismatch {
                role: "controller initial state",
                expected: self.model.state_dim(),
                got: x_c0.len(),
            });
        }
        self.state = x_c0.clone();
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
        Ok(self.state.clone())
    }

    fn control(&self, x_c: &RealVector) -> RealVector {
        self.model.output(x_c)
    }

    fn nominal_next(&self, x_c: &RealVector, y: &RealVector) -> RealVector {
        self.model.dynamics(x_c, y)
    }

    fn absorb(&mut self, t: usize, y_t: &RealVector, _u_t: &RealVector) -> Result<(), SimError> {
        if t != self.next_time {
            return Err(SimError::OutOfOrder {
                expected: self.next_time,
                got: t,
            });
        }
        self.state = self.model.dynamics(&self.state, y_t);
        self.next_time = t + 1;
        Ok(())
    }
}

/// A [`RecursiveController`] with an additive state disturbance injected at
/// each step: `x_c(t+1) = f_c(x_c, y) + d(t)`. Useful for exercising the
/// perturbation accounting with a known ground truth.
pub struct PerturbedController {
    inner: RecursiveController,
    disturbance: Vec<RealVector>,
}

impl PerturbedController {
    /// `disturbance[t]` is added to the state update of step `t`; steps past
    /// the end of the table are unperturbed.
    pub fn new(model: ControllerModel, disturbance: Vec<RealVector>) -> Self {
        Self {
            inner: RecursiveController::new(model),
            disturbance,
        }
    }
}

impl Controller for PerturbedController {
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }

    fn control_dim(&self) -> usize {
        self.inner.control_dim()
    }

    fn reset(&mut self, x_c0: &RealVector) -> Result<(), SimError> {
        self.inner.reset(x_c0)
    }

    fn state(&mut self, t: usize) -> Result<RealVector, SimError> {
        self.inner.state(t)
    }

    fn control(&self, x_c: &RealVector) -> RealVector {
        self.inner.control(x_c)
    }

    fn nominal_next(&self, x_c: &RealVector, y: &RealVector) -> RealVector {
        self.inner.nominal_next(x_c, y)
    }

    fn absorb(&mut self, t: usize, y_t: &RealVector, u_t: &RealVector) -> Result<(), SimError> {
        self.inner.absorb(t, y_t, u_t)?;
        if let Some(d) = self.disturbance.get(t) {
            self.inner.state += d;
        }
        Ok(())
    }
}

/// Complete signal record of one closed-loop run over `0 .. horizon`.
#[derive(Debug, Clone)]
pub struct ClosedLoopRecord {
    pub plant_traj: Trajectory,
    pub ctrl_state_traj: Trajectory,
    pub input_traj: Trajectory,
    pub output_traj: Trajectory,
    /// Implied perturbation `e_c(t) = x_c(t+1) - f_c(x_c(t), y(t))`, one
    /// sample per step (the final sample uses [`Self::final_ctrl_state`]).
    pub perturbation_traj: Trajectory,
    /// Controller state `x_c(horizon)` reached after the final absorbed step.
    pub final_ctrl_state: RealVector,
}

impl ClosedLoopRecord {
    /// Number of recorded steps.
    pub fn horizon(&self) -> usize {
        self.plant_traj.len()
    }

    /// Stacked signal `[x_c; x_p; u; y]` per step, the aggregate whose sup
    /// norm defines the nominal bound used by the order-selection rules.
    pub fn stacked(&self) -> Trajectory {
        let dim = self.ctrl_state_traj.dim()
            + self.plant_traj.dim()
            + self.input_traj.dim()
            + self.output_traj.dim();
        let mut traj = Trajectory::new(self.plant_traj.start_time(), dim);
        for t in 0..self.horizon() {
            let mut v = Vec::with_capacity(dim);
            let at = self.plant_traj.start_time() + t;
            for src in [
                &self.ctrl_state_traj,
                &self.plant_traj,
                &self.input_traj,
                &self.output_traj,
            ] {
                v.extend(src.get(at).expect("aligned record").iter().copied());
            }
            traj.push(RealVector::from_vec(v)).expect("uniform dim");
        }
        traj
    }
}

fn ensure_finite(v: &RealVector, signal: &'static str, step: usize) -> Result<(), SimError> {
    if vec_is_finite(v) {
        Ok(())
    } else {
        Err(SimError::Diverged { signal, step })
    }
}

/// Runs the closed loop for `horizon` steps and records every signal.
///
/// Divergence (any non-finite signal entry) is reported as an error naming
/// the offending signal and step, never as a panic or a silent NaN record.
pub fn simulate_closed_loop(
    plant: &PlantModel,
    controller: &mut dyn Controller,
    x_p0: &RealVector,
    x_c0: &RealVector,
    horizon: usize,
) -> Result<ClosedLoopRecord, SimError> {
    if horizon == 0 {
        return Err(SimError::EmptyHorizon);
    }
    if x_p0.len() != plant.state_dim() {
        return Err(SimError::DimensionMismatch {
            role: "plant initial state",
            expected: plant.state_dim(),
            got: x_p0.len(),
        });
    }
    if controller.control_dim() != plant.input_dim() {
        return Err(SimError::DimensionMismatch {
            role: "controller output vs plant input",
            expected: plant.input_dim(),
            got: controller.control_dim(),
        });
    }
    controller.reset(x_c0)?;

    let mut plant_traj = Trajectory::new(0, plant.state_dim());
    let mut ctrl_traj = Trajectory::new(0, controller.state_dim());
    let mut input_traj = Trajectory::new(0, plant.input_dim());
    let mut output_traj = Trajectory::new(0, plant.output_dim());

    let mut x_p = x_p0.clone();
    ensure_finite(&x_p, "x_p", 0)?;
    for t in 0..horizon {
        let y_t = plant.measure(&x_p);
        ensure_finite(&y_t, "y", t)?;
        let x_c = controller.state(t)?;
        ensure_finite(&x_c, "x_c", t)?;
        let u_t = controller.control(&x_c);
        ensure_finite(&u_t, "u", t)?;

        plant_traj.push(x_p.clone())?;
        ctrl_traj.push(x_c)?;
        output_traj.push(y_t.clone())?;
        input_traj.push(u_t.clone())?;

        x_p = plant.step(&x_p, &u_t);
        ensure_finite(&x_p, "x_p", t + 1)?;
        controller.absorb(t, &y_t, &u_t)?;
    }
    let final_ctrl_state = controller.state(horizon)?;
    ensure_finite(&final_ctrl_state, "x_c", horizon)?;

    let mut perturbation_traj = Trajectory::new(0, controller.state_dim());
    for t in 0..horizon {
        let x_c = ctrl_traj.get(t).expect("recorded");
        let y_t = output_traj.get(t).expect("recorded");
        let next = ctrl_traj.get(t + 1).unwrap_or(&final_ctrl_state);
        let e = next - controller.nominal_next(x_c, y_t);
        perturbation_traj.push(e)?;
    }

    Ok(ClosedLoopRecord {
        plant_traj,
        ctrl_state_traj: ctrl_traj,
        input_traj,
        output_traj,
        perturbation_traj,
        final_ctrl_state,
    })
}

/// Convenience wrapper: simulates the nominal recursive controller.
pub fn simulate_nominal(
    plant: &PlantModel,
    controller: &ControllerModel,
    x_p0: &RealVector,
    x_c0: &RealVector,
    horizon: usize,
) -> Result<ClosedLoopRecord, SimError> {
    let mut ctrl = RecursiveController::new(controller.clone());
    simulate_closed_loop(plant, &mut ctrl, x_p0, x_c0, horizon)
}

/// Uniform bound on every signal of a nominal run: the sup norm of the
/// stacked `[x_c; x_p; u; y]` trajectory.
///
/// Rejects records whose implied perturbation is not identically zero, since
/// the bound is only meaningful for nominal runs.
pub fn nominal_bound(record: &ClosedLoopRecord) -> Result<f64, SimError> {
    for (t, e) in record.perturbation_traj.iter() {
        if e.iter().any(|x| *x != 0.0) {
            return Err(SimError::NotNominal { step: t });
        }
    }
    sup_norm(&record.stacked())
}

//! Flexible-joint robot benchmark: a four-state single-link arm regulated by
//! an observer-based state-feedback controller with gains stored to four
//! significant digits.
//!
//! The controller carries a full copy of the plant model, corrected by the
//! output injection `L(y − C x_c)` and closed by `u = K x_c`. Because the
//! model copy is driven by the realized control, the controller is its own
//! observer form: substituting `u = h_c(x_c)` back into the observer map
//! reproduces the controller update exactly, and the contraction of
//! `A − LC` (plus the sine term's Jacobian) certifies the decay envelope.
//! That makes this benchmark the end-to-end exercise for the window
//! reconstruction: build the observer form, pick a window length `N`, and
//! compare the windowed loop against the nominal one over a 300-step
//! regulation transient.
//!
//! The sweep reports three deviation metrics per order. `max_plant_deviation`
//! is the largest per-step Euclidean distance between the windowed and
//! nominal plant states — the headline benchmark figure; the per-step
//! infinity-norm and stacked-signal variants are recorded alongside for
//! comparison.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::linear::{
    spectral_envelope, LinearController, LinearError, LinearPlant, DEFAULT_ENVELOPE_MARGIN,
    POWER_CHECK_LIMIT,
};
use crate::observer::{ArxController, ArxError, ObserverForm, ObserverMap};
use crate::sim::{
    max_deviation, max_deviation_euclidean, simulate_closed_loop, simulate_nominal, sup_norm,
    ClosedLoopRecord, ControllerModel, Map1, Map2, PlantModel, RealVector, SimError,
};

/// Smallest window length admitted by the per-order figure runs.
pub const FIGURE_ORDER_MIN: usize = 5;
/// Largest window length admitted by the per-order figure runs.
pub const FIGURE_ORDER_MAX: usize = 15;

/// Gain of the joint-coupling sine term.
const SINE_GAIN: f64 = -0.0333;

/// Errors raised by the benchmark drivers.
#[derive(Debug, Error)]
pub enum RobotError {
    #[error("figure orders must lie in [{FIGURE_ORDER_MIN}, {FIGURE_ORDER_MAX}], got {got}")]
    OrderRange { got: usize },
    #[error("order sweep {min}..={max} is empty or exceeds the switch time {switch}")]
    BadSweepRange {
        min: usize,
        max: usize,
        switch: usize,
    },
    #[error(transparent)]
    Arx(#[from] ArxError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Linear(#[from] LinearError),
}

/// Joint-coupling nonlinearity `x ↦ [0, 0, 0, −0.0333·sin(x_3)]` on the
/// four-dimensional arm state (link angle, link velocity, motor angle, motor
/// velocity).
pub fn flexible_joint_sine(x: &RealVector) -> RealVector {
    let mut v = RealVector::zeros(x.len());
    v[3] = SINE_GAIN * x[2].sin();
    v
}

/// Jacobian of [`flexible_joint_sine`] at the origin.
pub fn flexible_joint_sine_jacobian0() -> DMatrix<f64> {
    let mut j = DMatrix::zeros(4, 4);
    j[(3, 2)] = SINE_GAIN;
    j
}

/// Benchmark scenario: plant and controller matrices, the initial plant
/// state, and the run schedule. [`Default`] holds the reference values; the
/// matrices are already quantized to four significant digits, so they are
/// stored verbatim.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotConfig {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub x_p0: RealVector,
    pub horizon: usize,
    pub switch_time: usize,
}

impl Default for RobotConfig {
    fn default() -> Self {
        Self {
            a: DMatrix::from_row_slice(
                4,
                4,
                &[
                    1.0, 0.01, 0.0, 0.0, //
                    -0.486, 0.9875, 0.486, 0.0, //
                    0.0, 0.0, 1.0, 0.01, //
                    0.195, 0.0, -0.195, 1.0,
                ],
            ),
            b: DMatrix::from_row_slice(4, 1, &[0.0, 0.216, 0.0, 0.0]),
            c: DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
            k: DMatrix::from_row_slice(1, 4, &[-20.4547, -6.0923, 14.3017, -2.1379]),
            l: DMatrix::from_row_slice(
                4,
                2,
                &[
                    0.9994, 0.0047, //
                    -0.5037, 1.2477, //
                    -0.0492, 0.5631, //
                    0.1986, 0.4025,
                ],
            ),
            x_p0: RealVector::from_vec(vec![-2.0, 0.0, 0.0, 0.0]),
            horizon: 300,
            switch_time: 20,
        }
    }
}

impl RobotConfig {
    /// Builds the simulator triple: plant, nominal controller, and the
    /// controller's observer form with a certified decay envelope.
    ///
    /// Plant: `x_p⁺ = A x_p + f(x_p) + B u`, `y = C x_p`. Controller:
    /// `x_c⁺ = A x_c + f(x_c) + B u + L(y − C x_c)` with `u = K x_c`. The
    /// observer form is the same update with the control left free; its
    /// envelope comes from the powers of `A − LC` plus the sine Jacobian at
    /// the origin, which is where the regulated loop settles.
    pub fn build(&self) -> Result<(PlantModel, ControllerModel, ObserverForm), RobotError> {
        let (a, b) = (self.a.clone(), self.b.clone());
        let plant_dynamics: Map2 = Arc::new(move |x: &RealVector, u: &RealVector| {
            &a * x + flexible_joint_sine(x) + &b * u
        });
        let c = self.c.clone();
        let plant_output: Map1 = Arc::new(move |x: &RealVector| &c * x);
        let plant =
            PlantModel::new(4, 1, 2, plant_dynamics, plant_output).map_err(RobotError::Sim)?;

        let (a, b, c, l, k) = (
            self.a.clone(),
            self.b.clone(),
            self.c.clone(),
            self.l.clone(),
            self.k.clone(),
        );
        let ctrl_dynamics: Map2 = Arc::new(move |x: &RealVector, y: &RealVector| {
            let u = &k * x;
            &a * x + flexible_joint_sine(x) + &b * &u + &l * (y - &c * x)
        });
        let k = self.k.clone();
        let ctrl_output: Map1 = Arc::new(move |x: &RealVector| &k * x);
        let controller =
            ControllerModel::new(4, 2, 1, ctrl_dynamics, ctrl_output).map_err(RobotError::Sim)?;

        let observer_matrix = &self.a - &self.l * &self.c + flexible_joint_sine_jacobian0();
        let envelope =
            spectral_envelope(&observer_matrix, POWER_CHECK_LIMIT, DEFAULT_ENVELOPE_MARGIN)?;
        let (a, b, c, l) = (
            self.a.clone(),
            self.b.clone(),
            self.c.clone(),
            self.l.clone(),
        );
        let observer_map: ObserverMap =
            Arc::new(move |x: &RealVector, y: &RealVector, u: &RealVector| {
                &a * x + flexible_joint_sine(x) + &b * u + &l * (y - &c * x)
            });
        let observer = ObserverForm::new(observer_map, 4, 2, 1, envelope.to_decay())
            .map_err(RobotError::Arx)?;
        Ok((plant, controller, observer))
    }

    /// Linearization at the origin: the sine term contributes its Jacobian to
    /// the plant matrix, and the controller is packaged through the
    /// observer-based form `(A' − LC + BK, L, K, B)` with `A' = A + Jf(0)`.
    pub fn linearized(&self) -> Result<(LinearPlant, LinearController), LinearError> {
        let a_lin = &self.a + flexible_joint_sine_jacobian0();
        let plant = LinearPlant::new(a_lin.clone(), self.b.clone(), self.c.clone())?;
        let ctrl = crate::linear::observer_based_map(&a_lin, &self.l, &self.c, &self.b, &self.k)?;
        Ok((plant, ctrl))
    }

    /// Nominal closed loop: the recursive controller over the full horizon.
    pub fn run_nominal(&self) -> Result<ClosedLoopRecord, RobotError> {
        let (plant, controller, _) = self.build()?;
        let x_c0 = RealVector::zeros(4);
        Ok(simulate_nominal(
            &plant,
            &controller,
            &self.x_p0,
            &x_c0,
            self.horizon,
        )?)
    }

    /// Windowed closed loop of the given order, switching at
    /// `self.switch_time`.
    pub fn run_arxc(&self, order: usize) -> Result<ClosedLoopRecord, RobotError> {
        let (plant, controller, observer) = self.build()?;
        let mut arx = ArxController::new(observer, controller, order, self.switch_time)?;
        let x_c0 = RealVector::zeros(4);
        Ok(simulate_closed_loop(
            &plant,
            &mut arx,
            &self.x_p0,
            &x_c0,
            self.horizon,
        )?)
    }

    /// Output-trajectory comparison data: the nominal run plus one windowed
    /// run per requested order (orders restricted to
    /// `[FIGURE_ORDER_MIN, FIGURE_ORDER_MAX]`).
    pub fn run_figure1(&self, orders: &[usize]) -> Result<Figure1Data, RobotError> {
        for &n in orders {
            if !(FIGURE_ORDER_MIN..=FIGURE_ORDER_MAX).contains(&n) {
                return Err(RobotError::OrderRange { got: n });
            }
        }
        let nominal = self.run_nominal()?;
        let runs = orders
            .par_iter()
            .map(|&n| Ok((n, self.run_arxc(n)?)))
            .collect::<Result<Vec<_>, RobotError>>()?;
        Ok(Figure1Data { nominal, runs })
    }

    /// Deviation sweep over a contiguous order range. Each order is simulated
    /// independently (in parallel) and compared against the shared nominal
    /// run.
    pub fn run_figure2(&self, n_min: usize, n_max: usize) -> Result<SweepResult, RobotError> {
        if n_min == 0 || n_min > n_max || n_max > self.switch_time {
            return Err(RobotError::BadSweepRange {
                min: n_min,
                max: n_max,
                switch: self.switch_time,
            });
        }
        let nominal = self.run_nominal()?;
        let nominal_stacked = nominal.stacked();
        let records = (n_min..=n_max)
            .into_par_iter()
            .map(|order| {
                let started = Instant::now();
                let run = self.run_arxc(order)?;
                Ok(SweepRecord {
                    order,
                    max_plant_deviation: max_deviation_euclidean(
                        &run.plant_traj,
                        &nominal.plant_traj,
                    )?,
                    max_plant_deviation_inf: max_deviation(&run.plant_traj, &nominal.plant_traj)?,
                    max_stacked_deviation: max_deviation(&run.stacked(), &nominal_stacked)?,
                    sup_e_c: sup_norm(&run.perturbation_traj)?,
                    runtime_s: started.elapsed().as_secs_f64(),
                })
            })
            .collect::<Result<Vec<_>, RobotError>>()?;
        Ok(SweepResult { records })
    }
}

/// Nominal and per-order records backing the output-trajectory figure.
#[derive(Debug, Clone)]
pub struct Figure1Data {
    pub nominal: ClosedLoopRecord,
    pub runs: Vec<(usize, ClosedLoopRecord)>,
}

/// One row of the order sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRecord {
    pub order: usize,
    /// Largest per-step Euclidean plant-state deviation from nominal.
    pub max_plant_deviation: f64,
    /// Largest per-step infinity-norm plant-state deviation from nominal.
    pub max_plant_deviation_inf: f64,
    /// Largest per-step infinity-norm deviation of the stacked signal
    /// `[x_c; x_p; u; y]`.
    pub max_stacked_deviation: f64,
    /// Largest implied perturbation over the run.
    pub sup_e_c: f64,
    pub runtime_s: f64,
}

/// Ordered sweep records over a contiguous order range.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub records: Vec<SweepRecord>,
}

impl SweepResult {
    pub fn record(&self, order: usize) -> Option<&SweepRecord> {
        self.records.iter().find(|r| r.order == order)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear::{build_closed_loop, is_schur};
    use crate::observer::{check_observer_consistency, SampleBox};
    use nalgebra::DVector;

    #[test]
    fn output_map_selects_link_coordinates() {
        let (plant, _, _) = RobotConfig::default().build().unwrap();
        let y = plant.measure(&RealVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]));
        assert_eq!(y, RealVector::from_vec(vec![1.0, 2.0]));
    }

    #[test]
    fn sine_term_reference_value() {
        let x = RealVector::from_vec(vec![0.0, 0.0, std::f64::consts::FRAC_PI_2, 0.0]);
        let f = flexible_joint_sine(&x);
        assert_eq!(f[0], 0.0);
        assert_eq!(f[1], 0.0);
        assert_eq!(f[2], 0.0);
        assert!((f[3] - (-0.0333)).abs() < 1e-15);
    }

    #[test]
    fn control_gain_first_entry() {
        let (_, controller, _) = RobotConfig::default().build().unwrap();
        let u = controller.output(&RealVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]));
        assert_eq!(u[0], -20.4547);
    }

    #[test]
    fn plant_is_marginal_but_observer_matrix_contracts() {
        let cfg = RobotConfig::default();
        assert!(!is_schur(&cfg.a).unwrap(), "open-loop arm must not certify");
        let observer_matrix = &cfg.a - &cfg.l * &cfg.c + flexible_joint_sine_jacobian0();
        assert!(is_schur(&observer_matrix).unwrap());
    }

    #[test]
    fn observer_form_is_consistent_at_tight_tolerance() {
        let (_, controller, observer) = RobotConfig::default().build().unwrap();
        let boxed = SampleBox::symmetric(6, 3.0).unwrap();
        assert!(check_observer_consistency(&controller, &observer, &boxed, 512, 1e-12).unwrap());
    }

    #[test]
    fn linearized_loop_is_stable_and_matches_structure() {
        let cfg = RobotConfig::default();
        let (plant, ctrl) = cfg.linearized().unwrap();
        let expected = &cfg.a - &cfg.l * &cfg.c + flexible_joint_sine_jacobian0();
        assert!(crate::norms::mat_inf_norm(&(ctrl.observer_matrix() - expected)) < 1e-14);
        let mut x0 = DVector::zeros(8);
        x0[0] = -2.0;
        let cl = build_closed_loop(&plant, &ctrl, &x0).unwrap();
        assert!(cl.spectral().rate() < 1.0);
        assert!(cl.gamma().is_finite());
    }

    #[test]
    fn warm_segments_identical_and_longer_windows_track_closer() {
        let data = RobotConfig::default().run_figure1(&[5, 15]).unwrap();
        assert_eq!(data.nominal.output_traj.get(0).unwrap()[0], -2.0);
        for (_, run) in &data.runs {
            for t in 0..20 {
                assert_eq!(
                    run.output_traj.get(t).unwrap(),
                    data.nominal.output_traj.get(t).unwrap(),
                    "warm-up step {t}"
                );
            }
        }
        let sup_dev = |record: &ClosedLoopRecord, component: usize| {
            (0..record.horizon()).fold(0.0_f64, |acc, t| {
                acc.max(
                    (record.output_traj.get(t).unwrap()[component]
                        - data.nominal.output_traj.get(t).unwrap()[component])
                        .abs(),
                )
            })
        };
        for component in 0..2 {
            assert!(
                sup_dev(&data.runs[1].1, component) < sup_dev(&data.runs[0].1, component),
                "component {component}"
            );
        }
    }

    #[test]
    fn figure_order_range_is_enforced() {
        let cfg = RobotConfig::default();
        assert!(matches!(
            cfg.run_figure1(&[4]),
            Err(RobotError::OrderRange { got: 4 })
        ));
        assert!(matches!(
            cfg.run_figure1(&[16]),
            Err(RobotError::OrderRange { got: 16 })
        ));
        assert!(matches!(
            cfg.run_figure2(0, 5),
            Err(RobotError::BadSweepRange { .. })
        ));
        assert!(matches!(
            cfg.run_figure2(5, 21),
            Err(RobotError::BadSweepRange { .. })
        ));
        assert!(matches!(
            cfg.run_arxc(21),
            Err(RobotError::Arx(ArxError::SwitchBeforeOrder { .. }))
        ));
    }

    #[test]
    fn sweep_reproduces_reference_deviations() {
        let cfg = RobotConfig::default();
        let sweep = cfg.run_figure2(5, 15).unwrap();
        assert_eq!(sweep.records.len(), 11);
        let targets = [
            (5, 2.41072397775405),
            (10, 1.43728012815873),
            (15, 1.12818058955329),
        ];
        for (order, target) in targets {
            let got = sweep.record(order).unwrap().max_plant_deviation;
            assert!(
                ((got - target) / target).abs() < 0.02,
                "order {order}: {got} vs {target}"
            );
        }
        for pair in sweep.records.windows(2) {
            assert!(
                pair[1].max_plant_deviation < pair[0].max_plant_deviation,
                "orders {} -> {}",
                pair[0].order,
                pair[1].order
            );
        }
        // deterministic re-run
        let again = cfg.run_figure2(5, 15).unwrap();
        for (a, b) in sweep.records.iter().zip(&again.records) {
            assert_eq!(a.max_plant_deviation, b.max_plant_deviation);
            assert_eq!(a.sup_e_c, b.sup_e_c);
        }
    }
}

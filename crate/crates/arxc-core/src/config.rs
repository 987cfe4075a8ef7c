//! JSON system ingestion: plant and controller matrices (row-major, explicit
//! dimensions), an optional named nonlinearity from a small registry, and an
//! optional window-controller block `{order, switch_time, decay}`.
//!
//! A parsed configuration is compiled into a [`BuiltSystem`]: simulator
//! models, the controller's observer form with a certified (or explicitly
//! supplied) decay envelope, and — when the system is linear — the matrix
//! pair feeding the closed-form analysis. Builtins cover the two systems the
//! command-line tool exercises most: the flexible-joint arm benchmark and a
//! two-state deadbeat pair whose window reconstruction is exact.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linear::{LinearController, LinearError, LinearPlant};
use crate::observer::{ArxError, KLDecay, ObserverForm, ObserverMap};
use crate::robot::{self, RobotConfig};
use crate::sim::{ControllerModel, Map1, Map2, PlantModel, RealVector, SimError};

/// Errors raised while parsing or compiling a system configuration.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("configuration parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{field}: expected {expected} entries, got {got}")]
    Shape {
        field: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("unknown builtin system {name:?} (available: flexible_joint, deadbeat)")]
    UnknownSystem { name: String },
    #[error("unknown nonlinearity {name:?} (available: flexible_joint_sine)")]
    UnknownNonlinearity { name: String },
    #[error("nonlinearity {name:?} is defined on dimension {expected}, got {got}")]
    NonlinearityDim {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("a state-space controller block cannot carry a nonlinearity")]
    StateSpaceNonlinearity,
    #[error(transparent)]
    Arx(#[from] ArxError),
    #[error(transparent)]
    Linear(#[from] LinearError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Robot(#[from] robot::RobotError),
}

/// Named state nonlinearity available to configurations.
pub struct Nonlinearity {
    pub name: &'static str,
    pub dim: usize,
    pub map: fn(&RealVector) -> RealVector,
    pub jacobian0: fn() -> DMatrix<f64>,
}

static REGISTRY: [Nonlinearity; 1] = [Nonlinearity {
    name: "flexible_joint_sine",
    dim: 4,
    map: robot::flexible_joint_sine,
    jacobian0: robot::flexible_joint_sine_jacobian0,
}];

/// Looks up a registered nonlinearity by name.
pub fn lookup_nonlinearity(name: &str) -> Option<&'static Nonlinearity> {
    REGISTRY.iter().find(|n| n.name == name)
}

fn resolve_nonlinearity(
    name: &Option<String>,
    dim: usize,
) -> Result<Option<&'static Nonlinearity>, ConfigError> {
    match name {
        None => Ok(None),
        Some(name) => {
            let nl = lookup_nonlinearity(name)
                .ok_or_else(|| ConfigError::UnknownNonlinearity { name: name.clone() })?;
            if nl.dim != dim {
                return Err(ConfigError::NonlinearityDim {
                    name: name.clone(),
                    expected: nl.dim,
                    got: dim,
                });
            }
            Ok(Some(nl))
        }
    }
}

fn matrix(
    field: &'static str,
    rows: usize,
    cols: usize,
    entries: &[f64],
) -> Result<DMatrix<f64>, ConfigError> {
    if entries.len() != rows * cols {
        return Err(ConfigError::Shape {
            field,
            expected: rows * cols,
            got: entries.len(),
        });
    }
    Ok(DMatrix::from_row_slice(rows, cols, entries))
}

fn vector(field: &'static str, dim: usize, entries: &[f64]) -> Result<RealVector, ConfigError> {
    if entries.len() != dim {
        return Err(ConfigError::Shape {
            field,
            expected: dim,
            got: entries.len(),
        });
    }
    Ok(RealVector::from_column_slice(entries))
}

/// Plant block: `x⁺ = A x + f(x) + B u`, `y = C x` with row-major matrices
/// and an optional registered nonlinearity `f`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlantConfig {
    pub state_dim: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    #[serde(default)]
    pub nonlinearity: Option<String>,
    pub x0: Vec<f64>,
}

/// Controller block, either a direct state-space form or an observer-based
/// design packaged from `(A, L, C, B, K)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ControllerConfig {
    /// `x_c⁺ = F x_c + G y`, `u = H x_c`, with observer gain `R`.
    StateSpace {
        state_dim: usize,
        f: Vec<f64>,
        g: Vec<f64>,
        h: Vec<f64>,
        r: Vec<f64>,
        #[serde(default)]
        x0: Option<Vec<f64>>,
        #[serde(default)]
        nonlinearity: Option<String>,
    },
    /// `x_c⁺ = A x_c + f(x_c) + B u + L(y − C x_c)`, `u = K x_c`.
    ObserverBased {
        state_dim: usize,
        a: Vec<f64>,
        l: Vec<f64>,
        c: Vec<f64>,
        b: Vec<f64>,
        k: Vec<f64>,
        #[serde(default)]
        x0: Option<Vec<f64>>,
        #[serde(default)]
        nonlinearity: Option<String>,
    },
}

/// Explicit decay envelope `β(s, t) = M_o · λ_o^t · s` for the observer form.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DecaySettings {
    #[serde(rename = "M_o")]
    pub gain: f64,
    #[serde(rename = "lambda_o")]
    pub rate: f64,
}

/// Window-controller block of the configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ArxSettings {
    #[serde(default)]
    pub order: Option<usize>,
    #[serde(default)]
    pub switch_time: Option<usize>,
    #[serde(default)]
    pub decay: Option<DecaySettings>,
}

/// Top-level system configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub plant: PlantConfig,
    pub controller: ControllerConfig,
    #[serde(default)]
    pub arx: Option<ArxSettings>,
}

impl SystemConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }
}

/// A configuration compiled into executable models.
pub struct BuiltSystem {
    pub name: String,
    pub plant: PlantModel,
    pub controller: ControllerModel,
    pub observer: ObserverForm,
    /// Matrix pair for closed-form analysis; present only when both plant
    /// and controller are linear (or were linearized, for the builtin arm).
    pub linear: Option<(LinearPlant, LinearController)>,
    pub x_p0: RealVector,
    pub x_c0: RealVector,
    pub order: Option<usize>,
    pub switch_time: Option<usize>,
}

fn linear_plant_models(
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    nonlinearity: Option<&'static Nonlinearity>,
) -> Result<PlantModel, ConfigError> {
    let (n, m, p) = (a.nrows(), b.ncols(), c.nrows());
    let dynamics: Map2 = match nonlinearity {
        None => Arc::new(move |x: &RealVector, u: &RealVector| &a * x + &b * u),
        Some(nl) => {
            let f = nl.map;
            Arc::new(move |x: &RealVector, u: &RealVector| &a * x + f(x) + &b * u)
        }
    };
    let output: Map1 = Arc::new(move |x: &RealVector| &c * x);
    Ok(PlantModel::new(n, m, p, dynamics, output)?)
}

/// Compiles a parsed configuration into simulator models and an observer
/// form. The decay envelope is taken from the configuration when present and
/// otherwise certified from the powers of the controller's contraction
/// matrix (plus the nonlinearity's Jacobian at the origin, if any).
pub fn build_system(cfg: &SystemConfig) -> Result<BuiltSystem, ConfigError> {
    let plant_cfg = &cfg.plant;
    let (n_p, m, p) = (
        plant_cfg.state_dim,
        plant_cfg.input_dim,
        plant_cfg.output_dim,
    );
    let a_p = matrix("plant.a", n_p, n_p, &plant_cfg.a)?;
    let b_p = matrix("plant.b", n_p, m, &plant_cfg.b)?;
    let c_p = matrix("plant.c", p, n_p, &plant_cfg.c)?;
    let x_p0 = vector("plant.x0", n_p, &plant_cfg.x0)?;
    let plant_nl = resolve_nonlinearity(&plant_cfg.nonlinearity, n_p)?;
    let plant = linear_plant_models(a_p.clone(), b_p.clone(), c_p.clone(), plant_nl)?;
    let linear_plant = match plant_nl {
        None => Some(LinearPlant::new(a_p, b_p, c_p)?),
        Some(nl) => Some(LinearPlant::new(
            &a_p + (nl.jacobian0)(),
            b_p.clone(),
            c_p.clone(),
        )?),
    };

    let explicit_decay = match cfg.arx.as_ref().and_then(|s| s.decay) {
        Some(d) => Some(KLDecay::new(d.gain, d.rate)?),
        None => None,
    };

    let built = match &cfg.controller {
        ControllerConfig::StateSpace {
            state_dim,
            f,
            g,
            h,
            r,
            x0,
            nonlinearity,
        } => {
            if nonlinearity.is_some() {
                return Err(ConfigError::StateSpaceNonlinearity);
            }
            let n_c = *state_dim;
            let f = matrix("controller.f", n_c, n_c, f)?;
            let g = matrix("controller.g", n_c, p, g)?;
            let h = matrix("controller.h", m, n_c, h)?;
            let r = matrix("controller.r", n_c, m, r)?;
            let ctrl = LinearController::new(f, g, h, r)?;
            let x_c0 = match x0 {
                Some(v) => vector("controller.x0", n_c, v)?,
                None => RealVector::zeros(n_c),
            };
            let observer = match explicit_decay {
                Some(decay) => ctrl.observer_form(decay),
                None => ctrl.certified_observer_form(
                    crate::linear::POWER_CHECK_LIMIT,
                    crate::linear::DEFAULT_ENVELOPE_MARGIN,
                )?,
            };
            BuiltSystem {
                name: cfg.name.clone().unwrap_or_else(|| "state_space".into()),
                plant,
                controller: ctrl.to_controller_model(),
                observer,
                linear: linear_plant.map(|lp| (lp, ctrl)),
                x_p0,
                x_c0,
                order: cfg.arx.as_ref().and_then(|s| s.order),
                switch_time: cfg.arx.as_ref().and_then(|s| s.switch_time),
            }
        }
        ControllerConfig::ObserverBased {
            state_dim,
            a,
            l,
            c,
            b,
            k,
            x0,
            nonlinearity,
        } => {
            let n_c = *state_dim;
            let a = matrix("controller.a", n_c, n_c, a)?;
            let l = matrix("controller.l", n_c, p, l)?;
            let c = matrix("controller.c", p, n_c, c)?;
            let b = matrix("controller.b", n_c, m, b)?;
            let k = matrix("controller.k", m, n_c, k)?;
            let ctrl_nl = resolve_nonlinearity(nonlinearity, n_c)?;
            let a_lin = match ctrl_nl {
                None => a.clone(),
                Some(nl) => &a + (nl.jacobian0)(),
            };
            let linear_ctrl = crate::linear::observer_based_map(&a_lin, &l, &c, &b, &k)?;

            let x_c0 = match x0 {
                Some(v) => vector("controller.x0", n_c, v)?,
                None => RealVector::zeros(n_c),
            };
            let decay = match explicit_decay {
                Some(decay) => decay,
                None => crate::linear::spectral_envelope(
                    &linear_ctrl.observer_matrix(),
                    crate::linear::POWER_CHECK_LIMIT,
                    crate::linear::DEFAULT_ENVELOPE_MARGIN,
                )?
                .to_decay(),
            };
            let (controller, observer) = match ctrl_nl {
                None => (
                    linear_ctrl.to_controller_model(),
                    linear_ctrl.observer_form(decay),
                ),
                Some(nl) => {
                    let fmap = nl.map;
                    let (ad, bd, cd, ld, kd) =
                        (a.clone(), b.clone(), c.clone(), l.clone(), k.clone());
                    let dynamics: Map2 = Arc::new(move |x: &RealVector, y: &RealVector| {
                        let u = &kd * x;
                        &ad * x + fmap(x) + &bd * &u + &ld * (y - &cd * x)
                    });
                    let kd = k.clone();
                    let output: Map1 = Arc::new(move |x: &RealVector| &kd * x);
                    let model = ControllerModel::new(n_c, p, m, dynamics, output)?;
                    let (ad, bd, cd, ld) = (a, b, c, l);
                    let map: ObserverMap =
                        Arc::new(move |x: &RealVector, y: &RealVector, u: &RealVector| {
                            &ad * x + fmap(x) + &bd * u + &ld * (y - &cd * x)
                        });
                    let observer = ObserverForm::new(map, n_c, p, m, decay)?;
                    (model, observer)
                }
            };
            BuiltSystem {
                name: cfg.name.clone().unwrap_or_else(|| "observer_based".into()),
                plant,
                controller,
                observer,
                linear: linear_plant.map(|lp| (lp, linear_ctrl)),
                x_p0,
                x_c0,
                order: cfg.arx.as_ref().and_then(|s| s.order),
                switch_time: cfg.arx.as_ref().and_then(|s| s.switch_time),
            }
        }
    };
    Ok(built)
}

/// Builds one of the named builtin systems.
///
/// `flexible_joint` is the arm benchmark with its reference matrices and
/// schedule; `deadbeat` is a two-state linear pair whose observer gain is
/// deadbeat, making the order-2 window reconstruction exact.
pub fn builtin_system(name: &str) -> Result<BuiltSystem, ConfigError> {
    match name {
        "flexible_joint" => {
            let cfg = RobotConfig::default();
            let (plant, controller, observer) = cfg.build()?;
            let linear = cfg.linearized()?;
            Ok(BuiltSystem {
                name: "flexible_joint".into(),
                plant,
                controller,
                observer,
                linear: Some(linear),
                x_p0: cfg.x_p0.clone(),
                x_c0: RealVector::zeros(4),
                order: None,
                switch_time: Some(cfg.switch_time),
            })
        }
        "deadbeat" => {
            let plant = LinearPlant::new(
                DMatrix::from_row_slice(2, 2, &[0.3, 0.1, 0.0, 0.2]),
                DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
                DMatrix::from_row_slice(1, 2, &[0.4, 0.3]),
            )?;
            let ctrl = LinearController::new(
                DMatrix::from_row_slice(2, 2, &[0.5, 1.0, 0.0, 0.4]),
                DMatrix::from_row_slice(2, 1, &[0.5, 0.2]),
                DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
                DMatrix::from_row_slice(2, 1, &[0.9, 0.16]),
            )?;
            let observer = ctrl.certified_observer_form(
                crate::linear::POWER_CHECK_LIMIT,
                crate::linear::DEFAULT_ENVELOPE_MARGIN,
            )?;
            Ok(BuiltSystem {
                name: "deadbeat".into(),
                plant: plant.to_plant_model(),
                controller: ctrl.to_controller_model(),
                observer,
                linear: Some((plant, ctrl)),
                x_p0: RealVector::from_vec(vec![1.0, -0.5]),
                x_c0: RealVector::zeros(2),
                order: Some(2),
                switch_time: Some(2),
            })
        }
        other => Err(ConfigError::UnknownSystem {
            name: other.to_string(),
        }),
    }
}

//! Subcommand implementations, output emission, and exit-code mapping.
//!
//! Every command resolves a system (builtin name or JSON file), runs the
//! requested experiment through `arxc-core`, writes its artifacts atomically
//! into the output directory, and returns a JSON summary for stdout.
//!
//! Errors carry one of three process exit codes: 2 for configuration and
//! validation failures, 3 for numerical diagnostics (instability, singular
//! transfer matrices, exhausted searches, exhausted depth budgets), and 4
//! for runtime divergence (non-finite signals, fixed-point overflow).

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::Path;
use std::time::Instant;

use arxc_core::budget::{
    encrypted_arx_trace, evaluate_recursive_encrypted, BudgetError, BudgetPolicy,
};
use arxc_core::config::{build_system, builtin_system, BuiltSystem, ConfigError, SystemConfig};
use arxc_core::csvio::{write_table_csv, write_trajectory_csv, CsvError};
use arxc_core::linear::{
    build_closed_loop, fir_apply, fir_coefficients, frequency_sup_bound, frequency_sweep,
    gamma_linear, order_bound_linear, LinearError, DEFAULT_ENVELOPE_MARGIN, POWER_CHECK_LIMIT,
};
use arxc_core::observer::{implied_perturbation, ArxController, ArxError};
use arxc_core::robot::RobotError;
use arxc_core::sim::{
    max_deviation, max_deviation_euclidean, nominal_bound, simulate_closed_loop, simulate_nominal,
    ClosedLoopRecord, RealVector, SimError, Trajectory,
};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::svg::LineChart;
use crate::{EncryptedDemoArgs, OutputFormat, SimulateArgs, SpectralArgs, SweepArgs};

/// Window order used when neither the flag nor the system schedule fixes one.
const DEFAULT_ORDER: usize = 10;
/// Warm-up floor for the default switch time.
const DEFAULT_WARMUP: usize = 20;

/// A command failure with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        let code = match &e {
            SimError::Diverged { .. } => 4,
            _ => 2,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<LinearError> for CliError {
    fn from(e: LinearError) -> Self {
        let code = match &e {
            LinearError::NotSchur { .. }
            | LinearError::EnvelopeViolated { .. }
            | LinearError::OrderSearchExhausted { .. }
            | LinearError::SingularFrequency { .. } => 3,
            _ => 2,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<ArxError> for CliError {
    fn from(e: ArxError) -> Self {
        match e {
            ArxError::Sim(s) => s.into(),
            ArxError::OrderSearchExhausted { .. }
            | ArxError::NonFiniteObserver
            | ArxError::GridTooLarge { .. } => Self {
                code: 3,
                message: e.to_string(),
            },
            other => Self::config(other.to_string()),
        }
    }
}

impl From<RobotError> for CliError {
    fn from(e: RobotError) -> Self {
        match e {
            RobotError::Arx(a) => a.into(),
            RobotError::Sim(s) => s.into(),
            RobotError::Linear(l) => l.into(),
            other => Self::config(other.to_string()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Arx(a) => a.into(),
            ConfigError::Linear(l) => l.into(),
            ConfigError::Sim(s) => s.into(),
            ConfigError::Robot(r) => r.into(),
            other => Self::config(other.to_string()),
        }
    }
}

impl From<BudgetError> for CliError {
    fn from(e: BudgetError) -> Self {
        let code = match &e {
            BudgetError::DepthExhausted { .. } | BudgetError::StaleInput { .. } => 3,
            BudgetError::Overflow { .. } | BudgetError::NonFinite => 4,
            _ => 2,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<CsvError> for CliError {
    fn from(e: CsvError) -> Self {
        match e {
            CsvError::Sim(s) => s.into(),
            other => Self::config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::config(e.to_string())
    }
}

/// Loads a system: a value that names an existing path (or looks like a JSON
/// file path) is read and parsed, anything else is treated as a builtin name.
fn resolve_system(selector: &str) -> Result<BuiltSystem, CliError> {
    let path = Path::new(selector);
    let looks_like_file = path.exists()
        || selector.ends_with(".json")
        || selector.contains(std::path::MAIN_SEPARATOR);
    if looks_like_file {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read system file {selector:?}: {e}")))?;
        let cfg = SystemConfig::from_json(&text)?;
        Ok(build_system(&cfg)?)
    } else {
        Ok(builtin_system(selector)?)
    }
}

fn validate_schedule(order: usize, switch: usize, horizon: usize) -> Result<(), CliError> {
    if order == 0 {
        return Err(CliError::config("window order must be at least 1"));
    }
    if switch < order {
        return Err(CliError::config(format!(
            "switch time {switch} precedes the window order {order}; \
             the windows would not be full at the handoff"
        )));
    }
    if horizon < switch {
        return Err(CliError::config(format!(
            "horizon {horizon} is shorter than the switch time {switch}"
        )));
    }
    Ok(())
}

fn stack(a: &RealVector, b: &RealVector) -> RealVector {
    RealVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

/// Runs the window-form controller against the system's plant.
fn arxc_run(
    sys: &BuiltSystem,
    order: usize,
    switch: usize,
    horizon: usize,
) -> Result<ClosedLoopRecord, CliError> {
    let mut ctrl = ArxController::new(sys.observer.clone(), sys.controller.clone(), order, switch)?;
    Ok(simulate_closed_loop(
        &sys.plant, &mut ctrl, &sys.x_p0, &sys.x_c0, horizon,
    )?)
}

/// Writes `bytes` to `dir/name` via a dotted sibling temp file and a rename,
/// so readers never observe a partially written artifact.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| CliError::config(format!("invalid output path {}", path.display())))?;
    let mut tmp_name = OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Tracks the artifacts a command has emitted.
struct Emitted {
    files: Vec<String>,
}

impl Emitted {
    fn new() -> Self {
        Self { files: Vec::new() }
    }

    fn write(&mut self, dir: &Path, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = dir.join(name);
        write_atomic(&path, bytes)?;
        self.files.push(path.display().to_string());
        Ok(())
    }

    fn into_json(self) -> Value {
        json!(self.files)
    }
}

fn trajectory_csv(name: &str, traj: &Trajectory) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    write_trajectory_csv(&mut buf, name, traj)?;
    Ok(buf)
}

fn table_csv(headers: &[&str], rows: &[(usize, Vec<f64>)]) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    write_table_csv(&mut buf, headers, rows)?;
    Ok(buf)
}

/// Output-channel series of a recorded run, as (t, value) point lists.
fn output_series(record: &ClosedLoopRecord, channel: usize) -> Vec<(f64, f64)> {
    record
        .output_traj
        .iter()
        .map(|(t, y)| (t as f64, y[channel]))
        .collect()
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

/// Runs the nominal and window-form loops side by side, writes both sets of
/// trajectories, and reports the worst-case deviations plus the implied
/// perturbation. For systems with a linear description and an `--epsilon`,
/// the perturbation is also checked against the loop-gain budget `ε/γ`.
pub fn cmd_simulate(args: &SimulateArgs) -> Result<Value, CliError> {
    let sys = resolve_system(&args.common.system)?;
    let order = args.order.or(sys.order).unwrap_or(DEFAULT_ORDER);
    let switch = args
        .switch
        .or(sys.switch_time)
        .unwrap_or_else(|| order.max(DEFAULT_WARMUP));
    validate_schedule(order, switch, args.horizon)?;

    let nominal = simulate_nominal(
        &sys.plant,
        &sys.controller,
        &sys.x_p0,
        &sys.x_c0,
        args.horizon,
    )?;
    let arxc = arxc_run(&sys, order, switch, args.horizon)?;

    let max_dev = max_deviation_euclidean(&nominal.plant_traj, &arxc.plant_traj)?;
    let max_dev_inf = max_deviation(&nominal.plant_traj, &arxc.plant_traj)?;
    let max_stacked = max_deviation(&nominal.stacked(), &arxc.stacked())?;
    let bound_delta = match (args.epsilon, &sys.linear) {
        (Some(eps), Some((plant, ctrl))) => {
            let x0 = stack(&sys.x_p0, &sys.x_c0);
            let cl = build_closed_loop(plant, ctrl, &x0)?;
            cl.delta_from_epsilon(eps)
        }
        _ => f64::INFINITY,
    };
    let perturbation = implied_perturbation(&arxc, &sys.controller, bound_delta)?;

    let dir = &args.common.out;
    let mut emitted = Emitted::new();
    emitted.write(
        dir,
        "nominal_output.csv",
        &trajectory_csv("y", &nominal.output_traj)?,
    )?;
    emitted.write(
        dir,
        "nominal_state.csv",
        &trajectory_csv("xp", &nominal.plant_traj)?,
    )?;
    emitted.write(
        dir,
        "nominal_controller.csv",
        &trajectory_csv("xc", &nominal.ctrl_state_traj)?,
    )?;
    emitted.write(
        dir,
        "nominal_input.csv",
        &trajectory_csv("u", &nominal.input_traj)?,
    )?;
    emitted.write(
        dir,
        "arxc_output.csv",
        &trajectory_csv("y", &arxc.output_traj)?,
    )?;
    emitted.write(
        dir,
        "arxc_state.csv",
        &trajectory_csv("xp", &arxc.plant_traj)?,
    )?;
    emitted.write(
        dir,
        "arxc_controller.csv",
        &trajectory_csv("xc", &arxc.ctrl_state_traj)?,
    )?;
    emitted.write(
        dir,
        "arxc_input.csv",
        &trajectory_csv("u", &arxc.input_traj)?,
    )?;

    let mut summary = json!({
        "command": "simulate",
        "system": sys.name,
        "order": order,
        "switch_time": switch,
        "horizon": args.horizon,
        "max_plant_deviation": max_dev,
        "max_plant_deviation_inf": max_dev_inf,
        "max_stacked_deviation": max_stacked,
        "sup_e_c": perturbation.sup_e_c,
        "bound_delta": if bound_delta.is_finite() { json!(bound_delta) } else { Value::Null },
        "bound_satisfied": perturbation.satisfied,
    });

    match args.common.format {
        OutputFormat::Csv => {}
        OutputFormat::Json => {
            let mut run = summary.clone();
            run["nominal"] = record_json(&nominal);
            run["arxc"] = record_json(&arxc);
            emitted.write(dir, "run.json", &to_pretty(&run)?)?;
        }
        OutputFormat::Svg => {
            for k in 0..nominal.output_traj.dim() {
                let mut chart = LineChart::new(
                    format!("{}: output y{}", sys.name, k + 1),
                    "t",
                    format!("y{}", k + 1),
                );
                chart.add_series("nominal", output_series(&nominal, k));
                chart.add_series(format!("N = {order}"), output_series(&arxc, k));
                emitted.write(
                    dir,
                    &format!("simulate_y{}.svg", k + 1),
                    chart.render().as_bytes(),
                )?;
            }
        }
    }

    summary["files"] = emitted.into_json();
    Ok(summary)
}

fn record_json(record: &ClosedLoopRecord) -> Value {
    json!({
        "plant": record.plant_traj,
        "controller": record.ctrl_state_traj,
        "input": record.input_traj,
        "output": record.output_traj,
    })
}

fn to_pretty(value: &Value) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| CliError::config(format!("cannot serialize summary: {e}")))?;
    bytes.push(b'\n');
    Ok(bytes)
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

struct SweepRow {
    order: usize,
    max_dev: f64,
    max_dev_inf: f64,
    max_stacked: f64,
    sup_e_c: f64,
    runtime_s: f64,
}

impl SweepRow {
    fn to_json(&self) -> Value {
        json!({
            "order": self.order,
            "max_dev": self.max_dev,
            "max_dev_inf": self.max_dev_inf,
            "max_stacked_dev": self.max_stacked,
            "sup_ec": self.sup_e_c,
            "runtime_s": self.runtime_s,
        })
    }
}

/// Representative orders plotted in the per-order trajectory figure: the
/// endpoints and the midpoint of the sweep range.
fn representatives(lo: usize, hi: usize) -> Vec<usize> {
    let mut reps = vec![lo, lo.midpoint(hi), hi];
    reps.dedup();
    reps
}

/// Sweeps the window order over an inclusive range against a shared nominal
/// run. Emits `figure1.csv` (output trajectories at representative orders),
/// `figure2.csv` (worst-case plant deviation and implied perturbation per
/// order), and `sweep_full.csv` with every recorded metric. The per-order
/// runs are independent and evaluated in parallel; the defaults reproduce
/// the bundled arm benchmark sweep.
pub fn cmd_sweep(args: &SweepArgs) -> Result<Value, CliError> {
    let sys = resolve_system(&args.common.system)?;
    let (lo, hi) = (args.order_range.lo, args.order_range.hi);
    let switch = args
        .switch
        .or(sys.switch_time)
        .unwrap_or_else(|| hi.max(DEFAULT_WARMUP));
    validate_schedule(hi, switch, args.horizon)?;

    let started = Instant::now();
    let nominal = simulate_nominal(
        &sys.plant,
        &sys.controller,
        &sys.x_p0,
        &sys.x_c0,
        args.horizon,
    )?;
    let runs: Vec<(usize, ClosedLoopRecord, f64)> = (lo..=hi)
        .into_par_iter()
        .map(|order| {
            let t0 = Instant::now();
            let record = arxc_run(&sys, order, switch, args.horizon)?;
            Ok((order, record, t0.elapsed().as_secs_f64()))
        })
        .collect::<Result<_, CliError>>()?;

    let mut rows = Vec::with_capacity(runs.len());
    for (order, record, runtime_s) in &runs {
        rows.push(SweepRow {
            order: *order,
            max_dev: max_deviation_euclidean(&nominal.plant_traj, &record.plant_traj)?,
            max_dev_inf: max_deviation(&nominal.plant_traj, &record.plant_traj)?,
            max_stacked: max_deviation(&nominal.stacked(), &record.stacked())?,
            sup_e_c: implied_perturbation(record, &sys.controller, f64::INFINITY)?.sup_e_c,
            runtime_s: *runtime_s,
        });
    }

    let reps = representatives(lo, hi);
    let dir = &args.common.out;
    let mut emitted = Emitted::new();

    let outputs = nominal.output_traj.dim();
    let mut headers = vec!["t".to_string()];
    for k in 0..outputs {
        headers.push(format!("nominal_y{}", k + 1));
    }
    for rep in &reps {
        for k in 0..outputs {
            headers.push(format!("n{}_y{}", rep, k + 1));
        }
    }
    let mut figure1 = headers.join(",");
    figure1.push('\n');
    for (t, y) in nominal.output_traj.iter() {
        let mut cells = vec![t.to_string()];
        cells.extend(y.iter().map(|v| v.to_string()));
        for rep in &reps {
            let (_, record, _) = runs
                .iter()
                .find(|(order, _, _)| order == rep)
                .expect("representative order lies inside the sweep range");
            let y_rep = record.output_traj.get(t).expect("aligned horizons");
            cells.extend(y_rep.iter().map(|v| v.to_string()));
        }
        figure1.push_str(&cells.join(","));
        figure1.push('\n');
    }
    emitted.write(dir, "figure1.csv", figure1.as_bytes())?;

    let figure2_rows: Vec<(usize, Vec<f64>)> = rows
        .iter()
        .map(|r| (r.order, vec![r.max_dev, r.sup_e_c]))
        .collect();
    emitted.write(
        dir,
        "figure2.csv",
        &table_csv(&["N", "max_dev", "sup_ec"], &figure2_rows)?,
    )?;

    let full_rows: Vec<(usize, Vec<f64>)> = rows
        .iter()
        .map(|r| {
            (
                r.order,
                vec![
                    r.max_dev,
                    r.max_dev_inf,
                    r.max_stacked,
                    r.sup_e_c,
                    r.runtime_s,
                ],
            )
        })
        .collect();
    emitted.write(
        dir,
        "sweep_full.csv",
        &table_csv(
            &[
                "N",
                "max_dev",
                "max_dev_inf",
                "max_stacked_dev",
                "sup_ec",
                "runtime_s",
            ],
            &full_rows,
        )?,
    )?;

    match args.common.format {
        OutputFormat::Csv => {}
        OutputFormat::Json => {
            let doc = json!({
                "system": sys.name,
                "switch_time": switch,
                "horizon": args.horizon,
                "records": rows.iter().map(SweepRow::to_json).collect::<Vec<_>>(),
            });
            emitted.write(dir, "sweep.json", &to_pretty(&doc)?)?;
        }
        OutputFormat::Svg => {
            for k in 0..outputs {
                let mut chart = LineChart::new(
                    format!("{}: output y{} by window order", sys.name, k + 1),
                    "t",
                    format!("y{}", k + 1),
                );
                chart.add_series("nominal", output_series(&nominal, k));
                for rep in &reps {
                    let (_, record, _) = runs
                        .iter()
                        .find(|(order, _, _)| order == rep)
                        .expect("representative order lies inside the sweep range");
                    chart.add_series(format!("N = {rep}"), output_series(record, k));
                }
                emitted.write(
                    dir,
                    &format!("figure1_y{}.svg", k + 1),
                    chart.render().as_bytes(),
                )?;
            }
            let mut chart = LineChart::new(
                format!("{}: worst-case deviation by window order", sys.name),
                "N",
                "max deviation",
            );
            chart.add_series(
                "max plant deviation",
                rows.iter().map(|r| (r.order as f64, r.max_dev)).collect(),
            );
            chart.add_series(
                "sup perturbation",
                rows.iter().map(|r| (r.order as f64, r.sup_e_c)).collect(),
            );
            emitted.write(dir, "figure2.svg", chart.render().as_bytes())?;
        }
    }

    Ok(json!({
        "command": "sweep",
        "system": sys.name,
        "order_range": format!("{lo}..{hi}"),
        "horizon": args.horizon,
        "switch_time": switch,
        "runtime_s": started.elapsed().as_secs_f64(),
        "records": rows.iter().map(SweepRow::to_json).collect::<Vec<_>>(),
        "files": emitted.into_json(),
    }))
}

// ---------------------------------------------------------------------------
// spectral
// ---------------------------------------------------------------------------

/// Frequency-domain analysis of a linear (or linearized) system: sweeps the
/// reconstruction-error transfer norm over the unit circle, reports its
/// supremum next to the time-domain deviation of a matching run, derives the
/// window order needed for a deviation budget `ε`, and dumps the window
/// coefficients. The comparison run switches at `t = N`, the schedule the
/// transfer model describes.
pub fn cmd_spectral(args: &SpectralArgs) -> Result<Value, CliError> {
    let sys = resolve_system(&args.common.system)?;
    let Some((plant, ctrl)) = &sys.linear else {
        return Err(CliError::config(format!(
            "system {:?} has no linear description; spectral analysis needs explicit matrices",
            sys.name
        )));
    };
    let order = args.order.or(sys.order).unwrap_or(DEFAULT_ORDER);
    validate_schedule(order, order, args.horizon)?;
    if !(args.epsilon > 0.0 && args.epsilon.is_finite()) {
        return Err(CliError::config(format!(
            "epsilon must be positive and finite, got {}",
            args.epsilon
        )));
    }

    let x0 = stack(&sys.x_p0, &sys.x_c0);
    let cl = build_closed_loop(plant, ctrl, &x0)?;
    let sweep = frequency_sweep(&cl, ctrl, order, args.omega_grid)?;
    let sup_bound = frequency_sup_bound(&cl, ctrl, order, args.omega_grid)?;

    let observer = ctrl.certified_observer_form(POWER_CHECK_LIMIT, DEFAULT_ENVELOPE_MARGIN)?;
    let decay = observer.decay();
    let gamma = gamma_linear(&cl, plant.c(), ctrl.h());

    let plant_model = plant.to_plant_model();
    let ctrl_model = ctrl.to_controller_model();
    let nominal = simulate_nominal(
        &plant_model,
        &ctrl_model,
        &sys.x_p0,
        &sys.x_c0,
        args.horizon,
    )?;
    let m_bound = nominal_bound(&nominal)?;
    let order_bound = order_bound_linear(ctrl, m_bound, args.epsilon, gamma, &decay)?;

    let mut window_ctrl = ArxController::new(observer.clone(), ctrl_model.clone(), order, order)?;
    let arxc = simulate_closed_loop(
        &plant_model,
        &mut window_ctrl,
        &sys.x_p0,
        &sys.x_c0,
        args.horizon,
    )?;
    let max_stacked = max_deviation(&nominal.stacked(), &arxc.stacked())?;

    let fir = fir_coefficients(ctrl, order)?;

    let dir = &args.common.out;
    let mut emitted = Emitted::new();

    let mut sweep_csv = String::from("omega,norm_e\n");
    for (omega, norm) in &sweep {
        sweep_csv.push_str(&format!("{omega},{norm}\n"));
    }
    emitted.write(dir, "spectral_sweep.csv", sweep_csv.as_bytes())?;

    let mut fir_csv = String::from("tau,matrix,row,col,value\n");
    for (tau, m) in fir.y_coeffs().iter().enumerate() {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                fir_csv.push_str(&format!("{tau},y,{i},{j},{}\n", m[(i, j)]));
            }
        }
    }
    for (tau, m) in fir.u_coeffs().iter().enumerate() {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                fir_csv.push_str(&format!("{tau},u,{i},{j},{}\n", m[(i, j)]));
            }
        }
    }
    emitted.write(dir, "fir_coeffs.csv", fir_csv.as_bytes())?;

    let summary_core = json!({
        "command": "spectral",
        "system": sys.name,
        "order": order,
        "epsilon": args.epsilon,
        "omega_grid": args.omega_grid,
        "sup_bound": sup_bound,
        "time_domain_max_stacked": max_stacked,
        "bound_holds": sup_bound >= max_stacked,
        "gamma": gamma,
        "delta": args.epsilon / gamma,
        "nominal_bound": m_bound,
        "order_bound": order_bound,
        "decay": { "gain": decay.gain(), "rate": decay.rate() },
    });

    match args.common.format {
        OutputFormat::Csv => {}
        OutputFormat::Json => {
            emitted.write(dir, "spectral.json", &to_pretty(&summary_core)?)?;
        }
        OutputFormat::Svg => {
            let mut chart = LineChart::new(
                format!(
                    "{}: reconstruction-error transfer norm (N = {order})",
                    sys.name
                ),
                "omega",
                "norm",
            );
            chart.add_series("‖E‖∞ on the unit circle", sweep.clone());
            emitted.write(dir, "spectral_sweep.svg", chart.render().as_bytes())?;
        }
    }

    let mut summary = summary_core;
    summary["files"] = emitted.into_json();
    Ok(summary)
}

// ---------------------------------------------------------------------------
// encrypted-demo
// ---------------------------------------------------------------------------

/// Budget-mock demonstration on a linear (or linearized) system: evaluates
/// the window controller over recorded windows — consuming the same number
/// of levels at every step — and contrasts it with the recursive update,
/// whose carried state exhausts the same budget after at most
/// `initial_depth + 1` steps unless the dynamics are integer.
pub fn cmd_encrypted_demo(args: &EncryptedDemoArgs) -> Result<Value, CliError> {
    let sys = resolve_system(&args.common.system)?;
    let Some((plant, ctrl)) = &sys.linear else {
        return Err(CliError::config(format!(
            "system {:?} has no linear description; the budget demo evaluates explicit matrices",
            sys.name
        )));
    };
    let order = args.order.or(sys.order).unwrap_or(DEFAULT_ORDER);
    let switch = args
        .switch
        .or(sys.switch_time)
        .unwrap_or_else(|| order.max(DEFAULT_WARMUP));
    validate_schedule(order, switch, args.horizon)?;
    if args.horizon == switch {
        return Err(CliError::config(format!(
            "horizon {} equals the switch time; no window evaluation would run",
            args.horizon
        )));
    }
    let policy = BudgetPolicy::new(args.depth, args.scale_bits)?;

    let plant_model = plant.to_plant_model();
    let ctrl_model = ctrl.to_controller_model();
    let record = simulate_nominal(
        &plant_model,
        &ctrl_model,
        &sys.x_p0,
        &sys.x_c0,
        args.horizon,
    )?;
    let fir = fir_coefficients(ctrl, order)?;
    let trace = encrypted_arx_trace(&fir, ctrl.h(), &record, switch, &policy)?;

    let reports: Vec<_> = trace.iter().map(|(t, step)| step.report(*t)).collect();
    let mut depth_levels: Vec<u32> = reports.iter().map(|r| r.depth_used).collect();
    depth_levels.sort_unstable();
    depth_levels.dedup();
    let mut op_levels: Vec<u64> = reports.iter().map(|r| r.op_count).collect();
    op_levels.sort_unstable();
    op_levels.dedup();
    let max_noise = reports.iter().fold(0.0_f64, |a, r| a.max(r.noise));
    // Decode error against the plaintext evaluation of the same windows
    // isolates the encoding noise; the deviation from the recorded input is
    // the window form's truncation error and is reported separately.
    let mut max_decode_error = 0.0_f64;
    let mut max_truncation_dev = 0.0_f64;
    for (t, step) in &trace {
        let window = |traj: &Trajectory| -> Vec<RealVector> {
            (0..order)
                .map(|tau| {
                    traj.get(t - 1 - tau)
                        .expect("trace steps lie inside the recorded horizon")
                        .clone()
                })
                .collect()
        };
        let y_window = window(&record.output_traj);
        let u_window = window(&record.input_traj);
        let plain = ctrl.h() * fir_apply(&fir, &y_window, &u_window)?;
        max_decode_error = max_decode_error.max((step.decoded() - &plain).amax());
        let recorded = record
            .input_traj
            .get(*t)
            .expect("trace steps lie inside the recorded horizon");
        max_truncation_dev = max_truncation_dev.max((plain - recorded).amax());
    }

    let recursive = evaluate_recursive_encrypted(ctrl, record.output_traj.samples(), &policy)?;

    let dir = &args.common.out;
    let mut emitted = Emitted::new();
    let report_doc = json!({
        "system": sys.name,
        "order": order,
        "switch_time": switch,
        "horizon": args.horizon,
        "policy": { "initial_depth": args.depth, "scale_bits": args.scale_bits },
        "window_path": {
            "steps": trace.len(),
            "first_step": trace.first().map(|(t, _)| *t),
            "depth_used": depth_levels,
            "constant_depth": depth_levels.len() == 1,
            "op_count_per_step": op_levels,
            "max_noise": max_noise,
            "max_decode_error": max_decode_error,
            "max_truncation_deviation": max_truncation_dev,
            "trace": reports,
        },
        "recursive_path": recursive,
    });
    emitted.write(dir, "budget_report.json", &to_pretty(&report_doc)?)?;

    match args.common.format {
        OutputFormat::Json => {}
        OutputFormat::Csv => {
            let rows: Vec<(usize, Vec<f64>)> = reports
                .iter()
                .map(|r| {
                    (
                        r.step,
                        vec![r.depth_used as f64, r.op_count as f64, r.noise],
                    )
                })
                .collect();
            emitted.write(
                dir,
                "budget_trace.csv",
                &table_csv(&["step", "depth_used", "op_count", "noise"], &rows)?,
            )?;
        }
        OutputFormat::Svg => {
            let mut chart = LineChart::new(
                format!("{}: levels consumed per window evaluation", sys.name),
                "t",
                "levels",
            );
            chart.add_series(
                format!("window path (N = {order})"),
                reports
                    .iter()
                    .map(|r| (r.step as f64, r.depth_used as f64))
                    .collect(),
            );
            emitted.write(dir, "budget_trace.svg", chart.render().as_bytes())?;
        }
    }

    Ok(json!({
        "command": "encrypted-demo",
        "system": sys.name,
        "order": order,
        "switch_time": switch,
        "horizon": args.horizon,
        "policy": { "initial_depth": args.depth, "scale_bits": args.scale_bits },
        "window_path": {
            "steps": trace.len(),
            "depth_used": depth_levels,
            "constant_depth": depth_levels.len() == 1,
            "op_count_per_step": op_levels,
            "max_noise": max_noise,
            "max_decode_error": max_decode_error,
            "max_truncation_deviation": max_truncation_dev,
        },
        "recursive_path": recursive,
        "files": emitted.into_json(),
    }))
}

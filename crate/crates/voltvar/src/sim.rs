//! Closed-loop simulation.
//!
//! The loop alternates grid and controller: the grid maps set points to
//! voltages, each DER reads only its own bus and moves its set point by the
//! configured law. Two grid models are available as feedback:
//!
//! * `Linear`: the sensitivity model, exact for the dispatch the curves
//!   were trained against;
//! * `ZBus`: the nonlinear fixed-point solve, standing in for the physical
//!   feeder. Running the controller designed on the linear model against
//!   this feedback is the honest end-to-end check.
//!
//! Three drivers: `run_fixed_load` iterates one operating point until the
//! set points settle (or a budget runs out; non-convergence is a recorded
//! outcome, not an error), `run_fixed_load_batch` fans independent
//! operating points out across threads, `run_time_varying` replays a
//! profile with a fixed iteration budget per step, carrying set points
//! across steps.

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::admittance::build_admittance;
use crate::control::{incremental_step, ControlConfig, ControlMode};
use crate::dataset::Scenario;
use crate::error::{Error, Result};
use crate::linear::{loss_coefficients, voltage_offset, LinearModel};
use crate::network::FeederNetwork;
use crate::nn::MonotoneNn;
use crate::powerflow::ZbusSolver;
use crate::profiles::TimeSeriesProfiles;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeedbackModel {
    Linear,
    ZBus,
}

#[derive(Debug, Clone)]
pub struct SimOptions {
    pub control: ControlConfig,
    pub feedback: FeedbackModel,
    /// Initial set points; zeros when absent.
    pub q0: Option<DVector<f64>>,
    /// Keep every iteration in the trace instead of just each step's last.
    pub record_iterations: bool,
}

#[derive(Debug, Clone)]
pub struct IterRecord {
    pub q_c: DVector<f64>,
    /// Interior bus voltage magnitudes.
    pub v: DVector<f64>,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct StepRecord {
    pub minute: f64,
    /// All iterations, oldest first; empty unless requested.
    pub iterations: Vec<IterRecord>,
    /// State after the step's final iteration.
    pub last: IterRecord,
    pub iterations_run: usize,
    /// First iteration at which the update stayed under tolerance for the
    /// required consecutive count.
    pub converged_at: Option<usize>,
    /// Band violations over every (iteration, bus) sample of this step.
    pub violation_samples: usize,
    /// Lowest voltage seen at any bus in any iteration of this step.
    pub min_v_seen: f64,
}

#[derive(Debug, Clone)]
pub struct SimTrace {
    pub mode: ControlMode,
    pub epsilon: f64,
    pub feedback: FeedbackModel,
    pub v_min: DVector<f64>,
    pub v_max: DVector<f64>,
    pub der_buses: Vec<usize>,
    pub steps: Vec<StepRecord>,
}

/// Per-step aggregates, all taken at each step's final iteration unless
/// stated otherwise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimMetrics {
    pub minutes: Vec<f64>,
    pub min_v: Vec<f64>,
    pub max_v: Vec<f64>,
    /// max_b |v_b - 1|.
    pub max_deviation: Vec<f64>,
    pub loss: Vec<f64>,
    pub converged_at: Vec<Option<usize>>,
    /// Steps whose final voltage profile leaves the band.
    pub violation_steps: usize,
    /// Violations over every (iteration, bus) sample of the whole run.
    pub violation_samples: usize,
}

pub struct Simulator<'a> {
    model: &'a LinearModel,
    network: &'a FeederNetwork,
    /// Voltage sensitivity to the DER vector, cached off the model.
    s_cols: DMatrix<f64>,
    zbus: Option<ZbusSolver>,
}

/// Per-step cache of everything that depends only on the exogenous load.
struct StepContext {
    scenario: Scenario,
    v_hat: DVector<f64>,
    w: DVector<f64>,
    l_hat: f64,
}

impl<'a> Simulator<'a> {
    pub fn new(
        model: &'a LinearModel,
        network: &'a FeederNetwork,
        feedback: FeedbackModel,
    ) -> Result<Self> {
        let zbus = match feedback {
            FeedbackModel::Linear => None,
            FeedbackModel::ZBus => {
                let adm = build_admittance(network)?;
                Some(ZbusSolver::new(&adm)?)
            }
        };
        Ok(Self { model, network, s_cols: model.der_columns(), zbus })
    }

    fn context(&self, scenario: Scenario) -> Result<StepContext> {
        let v_hat = voltage_offset(self.model, &scenario.p, &scenario.q_l)?;
        let (w, l_hat) = loss_coefficients(self.model, &scenario.p, &scenario.q_l)?;
        Ok(StepContext { scenario, v_hat, w, l_hat })
    }

    /// Grid response to the current set points: interior voltage magnitudes
    /// and total loss, under the configured feedback model.
    fn evaluate(&self, ctx: &StepContext, q_c: &DVector<f64>) -> Result<IterRecord> {
        match &self.zbus {
            None => {
                let v = &ctx.v_hat + &self.s_cols * q_c;
                let loss = (q_c.transpose() * &self.model.r_cc * q_c)[(0, 0)]
                    + q_c.dot(&ctx.w)
                    + ctx.l_hat;
                Ok(IterRecord { q_c: q_c.clone(), v, loss })
            }
            Some(solver) => {
                let q_full = self.model.assemble_q(q_c, &ctx.scenario.q_l)?;
                let s = DVector::from_fn(self.model.n_interior(), |i, _| {
                    Complex::new(ctx.scenario.p[i], q_full[i])
                });
                let pf = solver.solve(&s, crate::powerflow::DEFAULT_TOL, crate::powerflow::DEFAULT_MAX_ITER)?;
                let v = pf.u.map(|c| c.norm());
                let loss = solver.total_loss(&pf.u);
                Ok(IterRecord { q_c: q_c.clone(), v, loss })
            }
        }
    }

    fn curve_outputs(&self, curves: &[MonotoneNn], v: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(curves.len(), |j, _| {
            curves[j].evaluate(v[self.model.der_idx[j]])
        })
    }
}

fn count_violations(v: &DVector<f64>, v_min: &DVector<f64>, v_max: &DVector<f64>) -> usize {
    (0..v.len()).filter(|&b| v[b] < v_min[b] || v[b] > v_max[b]).count()
}

fn validate_run_inputs(
    sim: &Simulator,
    curves: &[MonotoneNn],
    options: &SimOptions,
) -> Result<DVector<f64>> {
    options.control.validate()?;
    let c = sim.model.n_der();
    if options.control.mode != ControlMode::Uncontrolled && curves.len() != c {
        return Err(Error::Dimension(format!("{} curves for {c} DERs", curves.len())));
    }
    let q0 = options.q0.clone().unwrap_or_else(|| DVector::zeros(c));
    if q0.len() != c {
        return Err(Error::Dimension(format!("q0 has length {}, need {c}", q0.len())));
    }
    let (q_min, q_max) = sim.network.der_box();
    for j in 0..c {
        if q0[j] < q_min[j] - 1e-12 || q0[j] > q_max[j] + 1e-12 {
            return Err(Error::InvalidInput(format!(
                "q0[{j}] = {} outside the DER box [{}, {}]",
                q0[j], q_min[j], q_max[j]
            )));
        }
    }
    Ok(q0)
}

/// Run one step of the control loop over `ctx`, mutating `q`. Returns the
/// step record. `budget` caps iterations; `early_stop` ends the step once
/// convergence is established (fixed-load semantics).
fn run_step(
    sim: &Simulator,
    curves: &[MonotoneNn],
    ctx: &StepContext,
    q: &mut DVector<f64>,
    options: &SimOptions,
    minute: f64,
    budget: usize,
    early_stop: bool,
    v_min: &DVector<f64>,
    v_max: &DVector<f64>,
) -> Result<StepRecord> {
    let mut record = sim.evaluate(ctx, q)?;
    let mut iterations = Vec::new();
    if options.record_iterations {
        iterations.push(record.clone());
    }
    let mut violation_samples = count_violations(&record.v, v_min, v_max);
    let mut min_v_seen = record.v.min();
    let mut converged_at = None;
    let mut small_streak = 0usize;
    let mut iterations_run = 0usize;

    if options.control.mode != ControlMode::Uncontrolled {
        for iter in 1..=budget {
            let phi = sim.curve_outputs(curves, &record.v);
            let q_next = match options.control.mode {
                ControlMode::Incremental => incremental_step(q, &phi, options.control.epsilon),
                ControlMode::NonIncremental => phi,
                ControlMode::Uncontrolled => unreachable!(),
            };
            let delta = (&q_next - &*q).amax();
            *q = q_next;
            record = sim.evaluate(ctx, q)?;
            iterations_run = iter;
            if options.record_iterations {
                iterations.push(record.clone());
            }
            violation_samples += count_violations(&record.v, v_min, v_max);
            min_v_seen = min_v_seen.min(record.v.min());

            if delta <= options.control.tol {
                small_streak += 1;
                if small_streak >= options.control.consecutive && converged_at.is_none() {
                    converged_at = Some(iter);
                    if early_stop {
                        break;
                    }
                }
            } else {
                small_streak = 0;
            }
        }
    }

    Ok(StepRecord {
        minute,
        iterations,
        last: record,
        iterations_run,
        converged_at,
        violation_samples,
        min_v_seen,
    })
}

/// Iterate one operating point until the set points settle. Non-convergence
/// within `control.max_iter` is reported in the trace, not as an error.
pub fn run_fixed_load(
    model: &LinearModel,
    network: &FeederNetwork,
    curves: &[MonotoneNn],
    scenario: &Scenario,
    options: &SimOptions,
) -> Result<SimTrace> {
    let sim = Simulator::new(model, network, options.feedback)?;
    let mut q = validate_run_inputs(&sim, curves, options)?;
    let (v_min, v_max) = network.voltage_band();
    let v_min = DVector::from_vec(v_min);
    let v_max = DVector::from_vec(v_max);
    let ctx = sim.context(scenario.clone())?;
    let step = run_step(
        &sim,
        curves,
        &ctx,
        &mut q,
        options,
        0.0,
        options.control.max_iter,
        true,
        &v_min,
        &v_max,
    )?;
    Ok(SimTrace {
        mode: options.control.mode,
        epsilon: options.control.epsilon,
        feedback: options.feedback,
        v_min,
        v_max,
        der_buses: network.der_buses(),
        steps: vec![step],
    })
}

/// [`run_fixed_load`] over many independent operating points, sharing one
/// grid solver and fanning the points out across threads. Trace `k` is
/// bit-identical to a sequential run on `scenarios[k]`.
pub fn run_fixed_load_batch(
    model: &LinearModel,
    network: &FeederNetwork,
    curves: &[MonotoneNn],
    scenarios: &[Scenario],
    options: &SimOptions,
) -> Result<Vec<SimTrace>> {
    let sim = Simulator::new(model, network, options.feedback)?;
    let q0 = validate_run_inputs(&sim, curves, options)?;
    let (v_min, v_max) = network.voltage_band();
    let v_min = DVector::from_vec(v_min);
    let v_max = DVector::from_vec(v_max);

    crate::par::map_collect(scenarios, |scenario| {
        let mut q = q0.clone();
        let ctx = sim.context(scenario.clone())?;
        let step = run_step(
            &sim,
            curves,
            &ctx,
            &mut q,
            options,
            0.0,
            options.control.max_iter,
            true,
            &v_min,
            &v_max,
        )?;
        Ok(SimTrace {
            mode: options.control.mode,
            epsilon: options.control.epsilon,
            feedback: options.feedback,
            v_min: v_min.clone(),
            v_max: v_max.clone(),
            der_buses: network.der_buses(),
            steps: vec![step],
        })
    })
    .into_iter()
    .collect()
}

/// Replay a profile: `iters_per_step` control iterations at each row, set
/// points carried across rows.
pub fn run_time_varying(
    model: &LinearModel,
    network: &FeederNetwork,
    curves: &[MonotoneNn],
    profiles: &TimeSeriesProfiles,
    iters_per_step: usize,
    options: &SimOptions,
) -> Result<SimTrace> {
    if iters_per_step == 0 && !matches!(options.control.mode, ControlMode::Uncontrolled) {
        return Err(Error::InvalidInput("need at least one iteration per step".into()));
    }
    let sim = Simulator::new(model, network, options.feedback)?;
    let mut q = validate_run_inputs(&sim, curves, options)?;
    let (v_min, v_max) = network.voltage_band();
    let v_min = DVector::from_vec(v_min);
    let v_max = DVector::from_vec(v_max);

    let mut steps = Vec::with_capacity(profiles.len());
    for t in 0..profiles.len() {
        let ctx = sim.context(profiles.scenario_at(t, network)?)?;
        let step = run_step(
            &sim,
            curves,
            &ctx,
            &mut q,
            options,
            profiles.minutes[t],
            iters_per_step,
            false,
            &v_min,
            &v_max,
        )?;
        steps.push(step);
    }
    Ok(SimTrace {
        mode: options.control.mode,
        epsilon: options.control.epsilon,
        feedback: options.feedback,
        v_min,
        v_max,
        der_buses: network.der_buses(),
        steps,
    })
}

pub fn extract_metrics(trace: &SimTrace) -> SimMetrics {
    let mut metrics = SimMetrics {
        minutes: Vec::with_capacity(trace.steps.len()),
        min_v: Vec::with_capacity(trace.steps.len()),
        max_v: Vec::with_capacity(trace.steps.len()),
        max_deviation: Vec::with_capacity(trace.steps.len()),
        loss: Vec::with_capacity(trace.steps.len()),
        converged_at: Vec::with_capacity(trace.steps.len()),
        violation_steps: 0,
        violation_samples: 0,
    };
    for step in &trace.steps {
        let v = &step.last.v;
        metrics.minutes.push(step.minute);
        metrics.min_v.push(v.min());
        metrics.max_v.push(v.max());
        metrics.max_deviation.push(v.iter().map(|x| (x - 1.0).abs()).fold(0.0, f64::max));
        metrics.loss.push(step.last.loss);
        metrics.converged_at.push(step.converged_at);
        if count_violations(v, &trace.v_min, &trace.v_max) > 0 {
            metrics.violation_steps += 1;
        }
        metrics.violation_samples += step.violation_samples;
    }
    metrics
}

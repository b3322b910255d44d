//! Discrete-time closed-loop simulation with per-step gain scheduling.

use std::fmt;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::hierarchy::{build_state, check_gains, clik_velocity, TaskStack};
use crate::kinematics::{JointState, ManipulatorModel};
use crate::lmi::{formulate, GainProblemParams};
use crate::sdp::{SdpSolver, SolverOptions, SolverStatus};
use crate::stability::{assemble_a, lyapunov_value, stability_margin, ErrorDynamics};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlMode {
    /// Gains from the stability SDP at every step.
    SdpTuned,
    /// Constant gains (baseline).
    FixedGains,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerParams {
    pub mode: ControlMode,
    pub fixed_gains: Option<DVector<f64>>,
    pub beta_tilde: f64,
    pub delta: f64,
    pub eps_beta: f64,
    pub solver: SolverOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub model: ManipulatorModel,
    pub stack: TaskStack,
    pub controller: ControllerParams,
    pub dt: f64,
    pub duration: f64,
    pub q0: DVector<f64>,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "duration must be nonnegative, got {}",
                self.duration
            )));
        }
        if self.q0.len() != self.model.dof() {
            return Err(Error::DimensionMismatch {
                context: "initial configuration",
                expected: self.model.dof(),
                found: self.q0.len(),
            });
        }
        let n = self.stack.total_dim();
        match self.controller.mode {
            ControlMode::FixedGains => {
                let gains = self
                    .controller
                    .fixed_gains
                    .as_ref()
                    .ok_or_else(|| Error::InvalidParameter("fixed-gain mode needs fixed gains".into()))?;
                check_gains(gains, n)?;
                if gains.iter().any(|g| *g <= 0.0) {
                    return Err(Error::InvalidParameter("fixed gains must be positive".into()));
                }
            }
            ControlMode::SdpTuned => {
                let c = &self.controller;
                if !(c.beta_tilde.is_finite() && c.beta_tilde > 0.0) {
                    return Err(Error::InvalidParameter("beta_tilde must be positive".into()));
                }
                if !(c.delta.is_finite() && c.delta > 0.0) {
                    return Err(Error::InvalidParameter("delta must be positive".into()));
                }
                if !(c.eps_beta.is_finite() && c.eps_beta >= 0.0) {
                    return Err(Error::InvalidParameter("eps_beta must be nonnegative".into()));
                }
            }
        }
        Ok(())
    }

    /// Number of Euler steps, `floor(duration / dt)`.
    pub fn steps(&self) -> usize {
        let ratio = self.duration / self.dt;
        // absorb representation error such as 5.0 / 0.01 = 499.99999999999994
        (ratio + 1e-9 * ratio.max(1.0)).floor() as usize
    }

    pub fn gain_params(&self) -> GainProblemParams {
        GainProblemParams {
            beta_tilde: self.controller.beta_tilde,
            delta: self.controller.delta,
            eps_beta: self.controller.eps_beta,
            dt: self.dt,
        }
    }
}

/// Where the gains applied at a step came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GainSource {
    Solved(SolverStatus),
    /// The solver failed with this status; the previous step's gains were reused.
    Fallback(SolverStatus),
    Fixed,
}

impl fmt::Display for GainSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GainSource::Solved(s) => write!(f, "{s}"),
            GainSource::Fallback(s) => write!(f, "fallback_{s}"),
            GainSource::Fixed => f.write_str("fixed"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    pub err_norms: Vec<f64>,
    pub lambda: DVector<f64>,
    /// NaN in fixed-gain mode.
    pub beta: f64,
    /// NaN in fixed-gain mode.
    pub gamma: f64,
    /// Margin of the gains actually applied; negative means stable.
    pub stab_margin: f64,
    pub lyapunov: f64,
    pub source: GainSource,
    pub solve_time: f64,
    /// Smallest LMI block eigenvalue at the applied solution (NaN without a solve).
    pub min_block_eig: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub scenario: String,
    pub dof: usize,
    pub levels: usize,
    pub n_gains: usize,
    pub dt: f64,
    pub records: Vec<TraceRecord>,
}

impl SimTrace {
    /// Record closest to time `t`.
    pub fn at_time(&self, t: f64) -> &TraceRecord {
        let k = ((t / self.dt).round() as usize).min(self.records.len() - 1);
        &self.records[k]
    }

    pub fn last(&self) -> &TraceRecord {
        self.records.last().expect("a trace has at least one record")
    }

    pub fn max_margin(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.stab_margin)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_margin(&self) -> f64 {
        self.records.iter().map(|r| r.stab_margin).fold(f64::INFINITY, f64::min)
    }

    /// Time average of `beta_tilde - beta` over records with a finite `beta`.
    pub fn mean_beta_deficit(&self, beta_tilde: f64) -> f64 {
        let vals: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.beta.is_finite())
            .map(|r| beta_tilde - r.beta)
            .collect();
        if vals.is_empty() {
            f64::NAN
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    }

    /// Largest `|qd_j| / bound_j` over the trace, using the bound on the side
    /// of the velocity's sign.
    pub fn max_velocity_ratio(&self, model: &ManipulatorModel) -> f64 {
        self.records
            .iter()
            .flat_map(|r| {
                r.qd.iter().enumerate().map(|(j, v)| {
                    if *v >= 0.0 {
                        v / model.qd_upper()[j]
                    } else {
                        v / model.qd_lower()[j]
                    }
                })
            })
            .fold(0.0, f64::max)
    }
}

/// Runs one scenario step by step; owns the solver instance.
#[derive(Debug)]
pub struct Simulator<'a> {
    scenario: &'a Scenario,
    solver: SdpSolver,
    previous: Option<AppliedGains>,
    step_index: usize,
}

#[derive(Debug, Clone)]
struct AppliedGains {
    lambda: DVector<f64>,
    beta: f64,
    gamma: f64,
    min_block_eig: f64,
}

impl<'a> Simulator<'a> {
    pub fn new(scenario: &'a Scenario) -> Result<Self> {
        scenario.validate()?;
        Ok(Self {
            scenario,
            solver: SdpSolver::new(scenario.controller.solver),
            previous: None,
            step_index: 0,
        })
    }

    /// One control step: build the hierarchy at `state`, choose gains, compute
    /// the CLIK velocity and integrate it with a forward Euler step.
    pub fn step(&mut self, state: &JointState) -> Result<(JointState, TraceRecord)> {
        let k = self.step_index;
        self.step_inner(state).map_err(|e| e.at_step(k))
    }

    fn step_inner(&mut self, state: &JointState) -> Result<(JointState, TraceRecord)> {
        let sc = self.scenario;
        let hstate = build_state(&sc.stack, &sc.model, &state.q)?;

        let (gains, source, solve_time) = match sc.controller.mode {
            ControlMode::FixedGains => {
                let lambda = sc.controller.fixed_gains.clone().expect("validated");
                let g = AppliedGains {
                    lambda,
                    beta: f64::NAN,
                    gamma: f64::NAN,
                    min_block_eig: f64::NAN,
                };
                (g, GainSource::Fixed, 0.0)
            }
            ControlMode::SdpTuned => {
                let problem = formulate(&hstate, sc.model.qd_upper(), sc.model.qd_lower(), &sc.gain_params())?;
                let sol = self.solver.solve(&problem);
                if sol.status == SolverStatus::Optimal {
                    let g = AppliedGains {
                        // the nonnegativity block holds up to feas_tol
                        lambda: sol.lambda.map(|v| v.max(0.0)),
                        beta: sol.beta,
                        gamma: sol.gamma,
                        min_block_eig: sol.min_block_eig,
                    };
                    (g, GainSource::Solved(sol.status), sol.solve_time)
                } else {
                    match &self.previous {
                        Some(prev) => (prev.clone(), GainSource::Fallback(sol.status), sol.solve_time),
                        None => return Err(Error::SolverFailed(sol.status)),
                    }
                }
            }
        };

        let qd = clik_velocity(&hstate, &gains.lambda)?;
        if source == GainSource::Solved(SolverStatus::Optimal) {
            let slack = 1.0 + 1e-6;
            for (j, v) in qd.iter().enumerate() {
                let bound = if *v >= 0.0 {
                    sc.model.qd_upper()[j]
                } else {
                    sc.model.qd_lower()[j]
                };
                if v.abs() > bound.abs() * slack {
                    return Err(Error::VelocityBound {
                        joint: j + 1,
                        value: *v,
                        bound,
                    });
                }
            }
        }

        let dynamics = ErrorDynamics::from_state(&hstate, sc.dt)?;
        let a = assemble_a(&dynamics, &gains.lambda)?;
        let record = TraceRecord {
            t: state.t,
            q: state.q.clone(),
            qd: qd.clone(),
            err_norms: hstate.errors().iter().map(|e| e.norm()).collect(),
            lambda: gains.lambda.clone(),
            beta: gains.beta,
            gamma: gains.gamma,
            stab_margin: stability_margin(&a, sc.dt),
            lyapunov: lyapunov_value(&hstate.stacked_error()),
            source,
            solve_time,
            min_block_eig: gains.min_block_eig,
        };
        self.previous = Some(gains);
        self.step_index += 1;
        let next = JointState {
            q: &state.q + qd * sc.dt,
            t: (self.step_index as f64) * sc.dt,
        };
        Ok((next, record))
    }
}

/// Simulates `floor(duration / dt)` steps and records `steps + 1` rows; the
/// last row reports the gains and velocity at the final configuration.
pub fn run(scenario: &Scenario) -> Result<SimTrace> {
    let mut sim = Simulator::new(scenario)?;
    let steps = scenario.steps();
    let mut state = JointState::new(scenario.q0.clone(), 0.0)?;
    let mut records = Vec::with_capacity(steps + 1);
    for _ in 0..=steps {
        let (next, record) = sim.step(&state)?;
        records.push(record);
        state = next;
    }
    Ok(SimTrace {
        scenario: scenario.name.clone(),
        dof: scenario.model.dof(),
        levels: scenario.stack.levels(),
        n_gains: scenario.stack.total_dim(),
        dt: scenario.dt,
        records,
    })
}

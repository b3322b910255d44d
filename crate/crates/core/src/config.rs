//! Scenario files (TOML) and the builtin scenarios.
//!
//! ```toml
//! name = "planar3"
//!
//! [robot]
//! kind = "planar"                 # or "dh"
//! lengths = [0.5, 0.3, 0.2]       # planar only
//! # dh_rows = [{ a = 0.0, alpha = 1.5707963267948966, d = 0.089159, theta_offset = 0.0 }, ...]
//! qd_upper = [3.0, 3.0, 3.0]
//! qd_lower = [-3.0, -3.0, -3.0]
//!
//! [[tasks]]
//! kind = "planar_ee_position"     # planar_ee_orientation | dh_frame_position | dh_frame_coordinate
//! target = [0.76, 0.18]
//! # frame_index = 4               # dh kinds
//! # coordinate = "y"              # dh_frame_coordinate
//!
//! [controller]
//! mode = "sdp"                    # or "fixed"
//! fixed_gains = [1.0, 1.0, 10.0]
//! beta_tilde = 8.0
//! delta = 2e-5
//! eps_beta = 1e-9
//!
//! [controller.solver]
//! feas_tol = 1e-7
//! obj_tol = 1e-6
//! max_iterations = 200
//!
//! [sim]
//! dt = 0.01
//! duration = 5.0
//! initial_task_values = [[0.5, 0.0], [-1.134]]   # or q0 = [...] in rad
//! ```
//!
//! Unknown keys are rejected. Angles are in radians, lengths in meters,
//! velocities in rad/s.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::{Axis, TaskKind, TaskSpec, TaskStack};
use crate::kinematics::{task_jacobian, task_value, wrap_angle, DhRow, Geometry, ManipulatorModel, UR5_DH};
use crate::sdp::SolverOptions;
use crate::sim::{ControlMode, ControllerParams, Scenario};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("`{path}`: {message}")]
    Invalid { path: String, message: String },
    #[error("unknown builtin scenario `{0}` (expected one of: planar3, ur5)")]
    UnknownBuiltin(String),
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RobotKind {
    Planar,
    Dh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotConfig {
    pub kind: RobotKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lengths: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dh_rows: Option<Vec<DhRow>>,
    pub qd_upper: Vec<f64>,
    pub qd_lower: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKindConfig {
    PlanarEePosition,
    PlanarEeOrientation,
    DhFramePosition,
    DhFrameCoordinate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub kind: TaskKindConfig,
    pub target: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coordinate: Option<Axis>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeConfig {
    Sdp,
    Fixed,
}

fn default_eps_beta() -> f64 {
    1e-9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub mode: ModeConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_gains: Option<Vec<f64>>,
    pub beta_tilde: f64,
    pub delta: f64,
    #[serde(default = "default_eps_beta")]
    pub eps_beta: f64,
    #[serde(default)]
    pub solver: SolverOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub duration: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_task_values: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub robot: RobotConfig,
    pub tasks: Vec<TaskConfig>,
    pub controller: ControllerConfig,
    pub sim: SimConfig,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    /// Normalized document: every defaulted field written out explicitly.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config always serializes")
    }

    pub fn builtin(name: &str) -> Result<Self, ConfigError> {
        match name {
            "planar3" => Ok(planar3_config()),
            "ur5" => Ok(ur5_config()),
            other => Err(ConfigError::UnknownBuiltin(other.to_string())),
        }
    }

    /// Sets symmetric bounds `±limit` on every joint.
    pub fn set_velocity_limit(&mut self, limit: f64) {
        let dof = self.robot.qd_upper.len();
        self.robot.qd_upper = vec![limit; dof];
        self.robot.qd_lower = vec![-limit; dof];
    }

    /// Validates the document and resolves it into a runnable scenario.
    pub fn to_scenario(&self) -> Result<Scenario, ConfigError> {
        let model = self.build_model()?;
        let stack = self.build_stack(&model)?;
        let n = stack.total_dim();

        let c = &self.controller;
        positive("controller.beta_tilde", c.beta_tilde)?;
        positive("controller.delta", c.delta)?;
        if !(c.eps_beta.is_finite() && c.eps_beta >= 0.0) {
            return Err(invalid("controller.eps_beta", "must be a nonnegative number"));
        }
        positive("controller.solver.feas_tol", c.solver.feas_tol)?;
        positive("controller.solver.obj_tol", c.solver.obj_tol)?;
        if c.solver.max_iterations == 0 {
            return Err(invalid("controller.solver.max_iterations", "must be at least 1"));
        }
        let fixed_gains = match &c.fixed_gains {
            Some(g) => {
                if g.len() != n {
                    return Err(invalid(
                        "controller.fixed_gains",
                        format!("expected {n} gains (one per task dimension), found {}", g.len()),
                    ));
                }
                if let Some(i) = g.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(invalid(
                        format!("controller.fixed_gains[{i}]"),
                        "gains must be positive",
                    ));
                }
                Some(DVector::from_vec(g.clone()))
            }
            None => None,
        };
        let mode = match c.mode {
            ModeConfig::Sdp => ControlMode::SdpTuned,
            ModeConfig::Fixed => {
                if fixed_gains.is_none() {
                    return Err(invalid("controller.fixed_gains", "required when mode = \"fixed\""));
                }
                ControlMode::FixedGains
            }
        };

        positive("sim.dt", self.sim.dt)?;
        if !(self.sim.duration.is_finite() && self.sim.duration >= 0.0) {
            return Err(invalid("sim.duration", "must be a nonnegative number"));
        }
        let q0 = match (&self.sim.q0, &self.sim.initial_task_values) {
            (Some(q0), None) => {
                if q0.len() != model.dof() {
                    return Err(invalid(
                        "sim.q0",
                        format!("expected {} joint values, found {}", model.dof(), q0.len()),
                    ));
                }
                if q0.iter().any(|v| !v.is_finite()) {
                    return Err(invalid("sim.q0", "must be finite"));
                }
                DVector::from_vec(q0.clone())
            }
            (None, Some(values)) => {
                if values.len() != stack.levels() {
                    return Err(invalid(
                        "sim.initial_task_values",
                        format!(
                            "expected {} entries (one per task), found {}",
                            stack.levels(),
                            values.len()
                        ),
                    ));
                }
                for (i, (v, t)) in values.iter().zip(stack.tasks()).enumerate() {
                    if v.len() != t.dim() {
                        return Err(invalid(
                            format!("sim.initial_task_values[{i}]"),
                            format!("expected {} values, found {}", t.dim(), v.len()),
                        ));
                    }
                }
                solve_initial_configuration(&model, &stack, values)
                    .map_err(|m| invalid("sim.initial_task_values", m))?
            }
            (Some(_), Some(_)) => {
                return Err(invalid("sim", "give either `q0` or `initial_task_values`, not both"));
            }
            (None, None) => return Err(invalid("sim", "missing `q0` or `initial_task_values`")),
        };

        Ok(Scenario {
            name: self.name.clone(),
            model,
            stack,
            controller: ControllerParams {
                mode,
                fixed_gains,
                beta_tilde: c.beta_tilde,
                delta: c.delta,
                eps_beta: c.eps_beta,
                solver: c.solver,
            },
            dt: self.sim.dt,
            duration: self.sim.duration,
            q0,
        })
    }

    fn build_model(&self) -> Result<ManipulatorModel, ConfigError> {
        let r = &self.robot;
        let geometry = match r.kind {
            RobotKind::Planar => {
                if r.dh_rows.is_some() {
                    return Err(invalid("robot.dh_rows", "not allowed for kind = \"planar\""));
                }
                let lengths = r
                    .lengths
                    .clone()
                    .ok_or_else(|| invalid("robot.lengths", "required for kind = \"planar\""))?;
                Geometry::Planar { link_lengths: lengths }
            }
            RobotKind::Dh => {
                if r.lengths.is_some() {
                    return Err(invalid("robot.lengths", "not allowed for kind = \"dh\""));
                }
                let rows = r
                    .dh_rows
                    .clone()
                    .ok_or_else(|| invalid("robot.dh_rows", "required for kind = \"dh\""))?;
                Geometry::DhChain { rows }
            }
        };
        ManipulatorModel::new(
            geometry,
            DVector::from_vec(r.qd_upper.clone()),
            DVector::from_vec(r.qd_lower.clone()),
        )
        .map_err(|e| invalid("robot", e.to_string()))
    }

    fn build_stack(&self, model: &ManipulatorModel) -> Result<TaskStack, ConfigError> {
        if self.tasks.is_empty() {
            return Err(invalid("tasks", "at least one task is required"));
        }
        let dof = model.dof();
        let mut specs = Vec::with_capacity(self.tasks.len());
        for (i, t) in self.tasks.iter().enumerate() {
            let path = |field: &str| format!("tasks[{i}].{field}");
            let frame = |t: &TaskConfig| -> Result<usize, ConfigError> {
                let f = t
                    .frame_index
                    .ok_or_else(|| invalid(path("frame_index"), "required for DH tasks"))?;
                if f == 0 || f > dof {
                    return Err(invalid(path("frame_index"), format!("must lie in 1..={dof}")));
                }
                Ok(f)
            };
            let kind = match t.kind {
                TaskKindConfig::PlanarEePosition => TaskKind::PlanarEePosition,
                TaskKindConfig::PlanarEeOrientation => TaskKind::PlanarEeOrientation,
                TaskKindConfig::DhFramePosition => TaskKind::DhFramePosition { frame: frame(t)? },
                TaskKindConfig::DhFrameCoordinate => TaskKind::DhFrameCoordinate {
                    frame: frame(t)?,
                    axis: t
                        .coordinate
                        .ok_or_else(|| invalid(path("coordinate"), "required for dh_frame_coordinate"))?,
                },
            };
            let planar_kind = matches!(kind, TaskKind::PlanarEePosition | TaskKind::PlanarEeOrientation);
            if planar_kind != (self.robot.kind == RobotKind::Planar) {
                return Err(invalid(
                    path("kind"),
                    format!("task `{}` does not fit robot kind {:?}", kind.name(), self.robot.kind),
                ));
            }
            if planar_kind && t.frame_index.is_some() {
                return Err(invalid(path("frame_index"), "only DH tasks take a frame index"));
            }
            if !matches!(kind, TaskKind::DhFrameCoordinate { .. }) && t.coordinate.is_some() {
                return Err(invalid(
                    path("coordinate"),
                    "only dh_frame_coordinate takes a coordinate",
                ));
            }
            let spec = TaskSpec::new(kind, t.target.clone()).map_err(|e| invalid(path("target"), e.to_string()))?;
            specs.push(spec);
        }
        TaskStack::new(specs).map_err(|e| invalid("tasks", e.to_string()))
    }
}

fn positive(path: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(path, format!("must be a positive number, got {v}")))
    }
}

/// Finds a configuration whose task values equal `values` with a damped
/// Gauss-Newton iteration on the stacked tasks, from a fixed seed.
pub fn solve_initial_configuration(
    model: &ManipulatorModel,
    stack: &TaskStack,
    values: &[Vec<f64>],
) -> Result<DVector<f64>, String> {
    let dof = model.dof();
    let n = stack.total_dim();
    // Fixed seeds keep the chosen branch reproducible.
    let seeds = [0.5, -0.5, 1.0, -1.0];
    for seed in seeds {
        let mut q = DVector::from_fn(dof, |j, _| if j % 2 == 0 { seed } else { -seed });
        for _ in 0..200 {
            let mut residual = DVector::zeros(n);
            let mut jac = DMatrix::zeros(n, dof);
            let mut row = 0;
            for (task, target) in stack.tasks().iter().zip(values) {
                let value = task_value(model, task, &q).map_err(|e| e.to_string())?;
                let j = task_jacobian(model, task, &q).map_err(|e| e.to_string())?;
                for d in 0..task.dim() {
                    let mut r = target[d] - value[d];
                    if task.kind.is_angular() {
                        r = wrap_angle(r);
                    }
                    residual[row + d] = r;
                }
                jac.rows_mut(row, task.dim()).copy_from(&j);
                row += task.dim();
            }
            if residual.amax() < 1e-13 {
                return Ok(q.map(wrap_angle));
            }
            // damped least squares: J^T (J J^T + mu I)^-1 r
            let mu = 1e-10;
            let jjt = &jac * jac.transpose() + DMatrix::identity(n, n) * mu;
            let Some(step) = jjt.lu().solve(&residual) else { break };
            let dq = jac.transpose() * step;
            let scale = (0.5 / dq.amax().max(1e-300)).min(1.0);
            q += dq * scale;
        }
    }
    Err("no configuration reproduces the requested initial task values".into())
}

fn planar3_config() -> ScenarioConfig {
    ScenarioConfig {
        name: "planar3".into(),
        robot: RobotConfig {
            kind: RobotKind::Planar,
            lengths: Some(vec![0.5, 0.3, 0.2]),
            dh_rows: None,
            qd_upper: vec![3.0; 3],
            qd_lower: vec![-3.0; 3],
        },
        tasks: vec![
            TaskConfig {
                kind: TaskKindConfig::PlanarEePosition,
                target: vec![0.76, 0.18],
                frame_index: None,
                coordinate: None,
            },
            TaskConfig {
                kind: TaskKindConfig::PlanarEeOrientation,
                target: vec![-1.22],
                frame_index: None,
                coordinate: None,
            },
        ],
        controller: ControllerConfig {
            mode: ModeConfig::Sdp,
            fixed_gains: Some(vec![1.0, 1.0, 10.0]),
            beta_tilde: 8.0,
            delta: 2e-5,
            eps_beta: default_eps_beta(),
            solver: SolverOptions::default(),
        },
        sim: SimConfig {
            dt: 0.01,
            duration: 5.0,
            q0: None,
            initial_task_values: Some(vec![vec![0.5, 0.0], vec![-1.134]]),
        },
    }
}

fn ur5_config() -> ScenarioConfig {
    let q0_deg = [135.0_f64, 0.0, -90.0, 0.0, 90.0, 0.0];
    ScenarioConfig {
        name: "ur5".into(),
        robot: RobotConfig {
            kind: RobotKind::Dh,
            lengths: None,
            dh_rows: Some(UR5_DH.to_vec()),
            qd_upper: vec![6.0; 6],
            qd_lower: vec![-6.0; 6],
        },
        tasks: vec![
            TaskConfig {
                kind: TaskKindConfig::DhFramePosition,
                target: vec![-0.5, -0.4, 0.6],
                frame_index: Some(6),
                coordinate: None,
            },
            TaskConfig {
                kind: TaskKindConfig::DhFrameCoordinate,
                target: vec![-0.3],
                frame_index: Some(4),
                coordinate: Some(Axis::Y),
            },
        ],
        controller: ControllerConfig {
            mode: ModeConfig::Sdp,
            fixed_gains: Some(vec![2.0, 2.0, 2.0, 1.0]),
            beta_tilde: 8.0,
            delta: 5e-5,
            eps_beta: default_eps_beta(),
            solver: SolverOptions::default(),
        },
        sim: SimConfig {
            dt: 0.01,
            duration: 4.0,
            q0: Some(q0_deg.iter().map(|d| d.to_radians()).collect()),
            initial_task_values: None,
        },
    }
}

/// The two reference scenarios: `planar3` and `ur5`, both in SDP mode.
pub fn builtin_scenarios() -> Vec<Scenario> {
    ["planar3", "ur5"]
        .iter()
        .map(|n| {
            ScenarioConfig::builtin(n)
                .and_then(|c| c.to_scenario())
                .expect("builtin scenarios are valid")
        })
        .collect()
}

/// Looks up a builtin scenario by name.
pub fn builtin_scenario(name: &str) -> Result<Scenario, ConfigError> {
    ScenarioConfig::builtin(name)?.to_scenario()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_dimensions() {
        let all = builtin_scenarios();
        assert_eq!(all[0].name, "planar3");
        assert_eq!((all[0].stack.total_dim(), all[0].model.dof()), (3, 3));
        assert_eq!((all[1].stack.total_dim(), all[1].model.dof()), (4, 6));
    }

    #[test]
    fn planar3_initial_configuration_reproduces_task_values() {
        let sc = builtin_scenario("planar3").unwrap();
        let pos = task_value(&sc.model, &sc.stack.tasks()[0], &sc.q0).unwrap();
        let ori = task_value(&sc.model, &sc.stack.tasks()[1], &sc.q0).unwrap();
        assert!((pos - DVector::from_vec(vec![0.5, 0.0])).norm() < 1e-6);
        assert!((wrap_angle(ori[0]) + 1.134).abs() < 1e-6);
    }

    #[test]
    fn ur5_initial_configuration() {
        let sc = builtin_scenario("ur5").unwrap();
        let deg: Vec<f64> = sc.q0.iter().map(|q| q.to_degrees()).collect();
        for (a, b) in deg.iter().zip([135.0, 0.0, -90.0, 0.0, 90.0, 0.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(sc.controller.delta, 5e-5);
    }

    #[test]
    fn unknown_builtin() {
        assert!(matches!(
            ScenarioConfig::builtin("puma"),
            Err(ConfigError::UnknownBuiltin(_))
        ));
    }

    #[test]
    fn normalized_document_round_trips() {
        for name in ["planar3", "ur5"] {
            let text = ScenarioConfig::builtin(name).unwrap().to_toml();
            let again = ScenarioConfig::from_toml(&text).unwrap().to_toml();
            assert_eq!(text, again);
        }
    }

    #[test]
    fn defaults_are_filled_in() {
        let mut text = ScenarioConfig::builtin("planar3").unwrap().to_toml();
        text = text.replace("eps_beta = 1e-9\n", "");
        let cut = text.find("[controller.solver]").unwrap();
        let end = text[cut..].find("\n\n").map(|e| cut + e + 1).unwrap_or(text.len());
        text.replace_range(cut..end, "");
        let cfg = ScenarioConfig::from_toml(&text).unwrap();
        assert_eq!(cfg.controller.eps_beta, 1e-9);
        assert_eq!(cfg.controller.solver, SolverOptions::default());
    }

    fn path_of(err: ConfigError) -> String {
        match err {
            ConfigError::Invalid { path, .. } => path,
            other => panic!("expected a validation error, got {other}"),
        }
    }

    #[test]
    fn validation_errors_carry_paths() {
        let mut cfg = ScenarioConfig::builtin("planar3").unwrap();
        cfg.sim.dt = 0.0;
        assert_eq!(path_of(cfg.to_scenario().unwrap_err()), "sim.dt");

        let mut cfg = ScenarioConfig::builtin("ur5").unwrap();
        cfg.tasks[1].coordinate = None;
        assert_eq!(path_of(cfg.to_scenario().unwrap_err()), "tasks[1].coordinate");

        let mut cfg = ScenarioConfig::builtin("ur5").unwrap();
        cfg.tasks[0].frame_index = Some(9);
        assert_eq!(path_of(cfg.to_scenario().unwrap_err()), "tasks[0].frame_index");

        let mut cfg = ScenarioConfig::builtin("planar3").unwrap();
        cfg.tasks[0].kind = TaskKindConfig::DhFramePosition;
        cfg.tasks[0].frame_index = Some(1);
        assert_eq!(path_of(cfg.to_scenario().unwrap_err()), "tasks[0].kind");

        let mut cfg = ScenarioConfig::builtin("planar3").unwrap();
        cfg.controller.fixed_gains = Some(vec![1.0, 1.0]);
        assert_eq!(path_of(cfg.to_scenario().unwrap_err()), "controller.fixed_gains");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = ScenarioConfig::builtin("planar3")
            .unwrap()
            .to_toml()
            .replace("[sim]\n", "[sim]\nspeed = 2\n");
        let err = ScenarioConfig::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("speed"), "{err}");

        let text = ScenarioConfig::builtin("planar3")
            .unwrap()
            .to_toml()
            .replace("planar_ee_orientation", "planar_ee_heading");
        let err = ScenarioConfig::from_toml(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 14") && msg.contains("planar_ee_heading"), "{msg}");
    }
}

//! Hierarchical closed-loop inverse kinematics (CLIK) for redundant serial
//! manipulators, with task gains scheduled online by a semidefinite program
//! that certifies discrete-time stability of the whole task stack while
//! respecting joint-velocity limits.

pub mod config;
pub mod error;
pub mod hierarchy;
pub mod kinematics;
pub mod lmi;
pub mod sdp;
pub mod sim;
pub mod stability;

pub use config::{builtin_scenario, builtin_scenarios, ConfigError, ScenarioConfig};
pub use error::{Error, Result};
pub use hierarchy::{build_state, clik_velocity, task_error, Axis, HierarchyState, TaskKind, TaskSpec, TaskStack};
pub use kinematics::{pinv, task_jacobian, task_value, DhRow, Geometry, JointState, ManipulatorModel};
pub use lmi::{GainProblemParams, LmiBlock, SdpProblem};
pub use sdp::{check_certificate, solve_sdp, GainSolution, SdpSolver, SolverOptions, SolverStatus};
pub use sim::{run, ControlMode, ControllerParams, GainSource, Scenario, SimTrace, Simulator, TraceRecord};
pub use stability::{assemble_a, lyapunov_value, stability_margin, ErrorDynamics};

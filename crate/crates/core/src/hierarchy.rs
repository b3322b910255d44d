//! Prioritized task stacks and the h-level closed-loop inverse kinematics law.
//!
//! Level 1 is the highest priority. Lower levels act only through the null
//! space of the augmented Jacobian of every level above them:
//!
//! ```text
//! qd = J1+ L1 e1 + N1 J2+ L2 e2 + ... + N(h-1) Jh+ Lh eh
//! ```
//!
//! where `Ni = I - J(1..i)+ J(1..i)` and `Li = diag(lambda_i)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{self, pinv, wrap_angle, ManipulatorModel, DEFAULT_RANK_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    /// End-effector `(x, y)` of a planar chain.
    PlanarEePosition,
    /// End-effector heading of a planar chain (sum of joint angles).
    PlanarEeOrientation,
    /// Base-frame position of the origin of DH frame `frame` (1-based).
    DhFramePosition { frame: usize },
    /// A single base-frame coordinate of the origin of DH frame `frame`.
    DhFrameCoordinate { frame: usize, axis: Axis },
}

impl TaskKind {
    pub fn dim(&self) -> usize {
        match self {
            TaskKind::PlanarEePosition => 2,
            TaskKind::PlanarEeOrientation | TaskKind::DhFrameCoordinate { .. } => 1,
            TaskKind::DhFramePosition { .. } => 3,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::PlanarEePosition => "planar_ee_position",
            TaskKind::PlanarEeOrientation => "planar_ee_orientation",
            TaskKind::DhFramePosition { .. } => "dh_frame_position",
            TaskKind::DhFrameCoordinate { .. } => "dh_frame_coordinate",
        }
    }

    /// Whether the task value is an angle (errors wrap to `(-pi, pi]`).
    pub fn is_angular(&self) -> bool {
        matches!(self, TaskKind::PlanarEeOrientation)
    }
}

/// A task together with its constant set-point.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub target: DVector<f64>,
}

impl TaskSpec {
    pub fn new(kind: TaskKind, target: Vec<f64>) -> Result<Self> {
        if target.len() != kind.dim() {
            return Err(Error::DimensionMismatch {
                context: "task target",
                expected: kind.dim(),
                found: target.len(),
            });
        }
        if target.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("task target must be finite".into()));
        }
        Ok(Self {
            kind,
            target: DVector::from_vec(target),
        })
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }
}

/// Ordered task list; index 0 holds the highest priority.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskStack {
    tasks: Vec<TaskSpec>,
}

impl TaskStack {
    pub fn new(tasks: Vec<TaskSpec>) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::EmptyStack);
        }
        Ok(Self { tasks })
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    /// Number of priority levels.
    pub fn levels(&self) -> usize {
        self.tasks.len()
    }

    /// Total task dimension, i.e. the length of the stacked error and gain vectors.
    pub fn total_dim(&self) -> usize {
        self.tasks.iter().map(TaskSpec::dim).sum()
    }

    /// Offset of each level inside the stacked vectors.
    pub fn offsets(&self) -> Vec<usize> {
        self.tasks
            .iter()
            .scan(0, |acc, t| {
                let start = *acc;
                *acc += t.dim();
                Some(start)
            })
            .collect()
    }

    /// True when the stack asks for more task dimensions than the robot has joints.
    pub fn exceeds_dof(&self, dof: usize) -> bool {
        self.total_dim() > dof
    }
}

/// Task error `target - value`, angle components wrapped.
pub fn task_error(task: &TaskSpec, model: &ManipulatorModel, q: &DVector<f64>) -> Result<DVector<f64>> {
    let value = kinematics::task_value(model, task, q)?;
    let mut err = &task.target - value;
    if task.kind.is_angular() {
        err.apply(|e| *e = wrap_angle(*e));
    }
    Ok(err)
}

/// Everything the controller needs about the stack at one configuration.
#[derive(Debug, Clone)]
pub struct HierarchyState {
    dims: Vec<usize>,
    offsets: Vec<usize>,
    jacobians: Vec<DMatrix<f64>>,
    errors: Vec<DVector<f64>>,
    /// `N0 = I, N1, ..., N(h-1)`.
    projectors: Vec<DMatrix<f64>>,
    /// `N(i-1) Ji+` for each level.
    projected_pinvs: Vec<DMatrix<f64>>,
    /// Gain-free error dynamics: the `(i, rho)` block is `-Ji N(rho-1) Jrho+`.
    dynamics: DMatrix<f64>,
}

impl HierarchyState {
    /// Builds the state from explicit per-level Jacobians and errors.
    pub fn from_parts(jacobians: Vec<DMatrix<f64>>, errors: Vec<DVector<f64>>) -> Result<Self> {
        Self::from_parts_with_tol(jacobians, errors, DEFAULT_RANK_TOL)
    }

    pub fn from_parts_with_tol(jacobians: Vec<DMatrix<f64>>, errors: Vec<DVector<f64>>, rank_tol: f64) -> Result<Self> {
        let h = jacobians.len();
        if h == 0 {
            return Err(Error::EmptyStack);
        }
        if errors.len() != h {
            return Err(Error::DimensionMismatch {
                context: "task errors",
                expected: h,
                found: errors.len(),
            });
        }
        let dof = jacobians[0].ncols();
        for (j, e) in jacobians.iter().zip(&errors) {
            if j.ncols() != dof {
                return Err(Error::DimensionMismatch {
                    context: "Jacobian columns",
                    expected: dof,
                    found: j.ncols(),
                });
            }
            if e.len() != j.nrows() {
                return Err(Error::DimensionMismatch {
                    context: "task error length",
                    expected: j.nrows(),
                    found: e.len(),
                });
            }
        }
        let dims: Vec<usize> = jacobians.iter().map(|j| j.nrows()).collect();
        let offsets: Vec<usize> = dims
            .iter()
            .scan(0, |acc, d| {
                let s = *acc;
                *acc += d;
                Some(s)
            })
            .collect();
        let n: usize = dims.iter().sum();

        let with_level = |level: usize| {
            move |e: Error| match e {
                Error::RankDeficient { rank, rows, .. } => Error::RankDeficient {
                    level: Some(level),
                    rank,
                    rows,
                },
                other => other,
            }
        };

        let pinvs = jacobians
            .iter()
            .enumerate()
            .map(|(i, j)| pinv(j, rank_tol).map_err(with_level(i + 1)))
            .collect::<Result<Vec<_>>>()?;

        let mut projectors = Vec::with_capacity(h);
        projectors.push(DMatrix::identity(dof, dof));
        let mut augmented = DMatrix::zeros(0, dof);
        for (i, j) in jacobians.iter().enumerate().take(h - 1) {
            augmented = stack_rows(&augmented, j);
            let aug_pinv = pinv(&augmented, rank_tol).map_err(with_level(i + 1))?;
            projectors.push(DMatrix::identity(dof, dof) - aug_pinv * &augmented);
        }

        let projected_pinvs: Vec<DMatrix<f64>> = projectors.iter().zip(&pinvs).map(|(p, jp)| p * jp).collect();

        let mut dynamics = DMatrix::zeros(n, n);
        for (i, ji) in jacobians.iter().enumerate() {
            for (rho, pp) in projected_pinvs.iter().enumerate() {
                let block = -(ji * pp);
                dynamics
                    .view_mut((offsets[i], offsets[rho]), (dims[i], dims[rho]))
                    .copy_from(&block);
            }
        }

        Ok(Self {
            dims,
            offsets,
            jacobians,
            errors,
            projectors,
            projected_pinvs,
            dynamics,
        })
    }

    pub fn levels(&self) -> usize {
        self.dims.len()
    }

    pub fn total_dim(&self) -> usize {
        self.dims.iter().sum()
    }

    pub fn dof(&self) -> usize {
        self.jacobians[0].ncols()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn jacobian(&self, level: usize) -> &DMatrix<f64> {
        &self.jacobians[level]
    }

    pub fn error(&self, level: usize) -> &DVector<f64> {
        &self.errors[level]
    }

    pub fn errors(&self) -> &[DVector<f64>] {
        &self.errors
    }

    /// Stacked error of all levels.
    pub fn stacked_error(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.total_dim());
        for (e, &off) in self.errors.iter().zip(&self.offsets) {
            out.rows_mut(off, e.len()).copy_from(e);
        }
        out
    }

    /// Null-space projector `N_i` of the augmented Jacobian of levels `1..=i`
    /// (`i = 0` gives the identity).
    pub fn projector(&self, i: usize) -> &DMatrix<f64> {
        &self.projectors[i]
    }

    /// `N(i-1) Ji+` for the 0-based `level`.
    pub fn projected_pinv(&self, level: usize) -> &DMatrix<f64> {
        &self.projected_pinvs[level]
    }

    /// Gain-free error-dynamics matrix; scaling its column `l` by `lambda_l`
    /// yields the closed-loop error-velocity map.
    pub fn dynamics(&self) -> &DMatrix<f64> {
        &self.dynamics
    }

    /// Block `A_{i,rho}` for 0-based levels.
    pub fn block(&self, i: usize, rho: usize) -> DMatrix<f64> {
        self.dynamics
            .view((self.offsets[i], self.offsets[rho]), (self.dims[i], self.dims[rho]))
            .into_owned()
    }
}

fn stack_rows(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.rows_mut(0, top.nrows()).copy_from(top);
    out.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    out
}

/// Evaluates Jacobians and errors of every level at `q`.
pub fn build_state(stack: &TaskStack, model: &ManipulatorModel, q: &DVector<f64>) -> Result<HierarchyState> {
    let jacobians = stack
        .tasks()
        .iter()
        .map(|t| kinematics::task_jacobian(model, t, q))
        .collect::<Result<Vec<_>>>()?;
    let errors = stack
        .tasks()
        .iter()
        .map(|t| task_error(t, model, q))
        .collect::<Result<Vec<_>>>()?;
    HierarchyState::from_parts(jacobians, errors)
}

pub(crate) fn check_gains(lambda: &DVector<f64>, n: usize) -> Result<()> {
    if lambda.len() != n {
        return Err(Error::DimensionMismatch {
            context: "gain vector",
            expected: n,
            found: lambda.len(),
        });
    }
    if lambda.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(Error::InvalidParameter("gains must be finite and nonnegative".into()));
    }
    Ok(())
}

/// Joint velocity of the prioritized CLIK law for stacked diagonal gains `lambda`.
pub fn clik_velocity(state: &HierarchyState, lambda: &DVector<f64>) -> Result<DVector<f64>> {
    check_gains(lambda, state.total_dim())?;
    let mut qd = DVector::zeros(state.dof());
    for level in 0..state.levels() {
        let (off, dim) = (state.offsets[level], state.dims[level]);
        let scaled = lambda.rows(off, dim).component_mul(&state.errors[level]);
        qd += &state.projected_pinvs[level] * scaled;
    }
    Ok(qd)
}

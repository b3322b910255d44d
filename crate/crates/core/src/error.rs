use thiserror::Error;

use crate::sdp::SolverStatus;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("task kind `{task}` is not supported by a {model} model")]
    TaskModelMismatch { task: &'static str, model: &'static str },

    /// A Jacobian (or an augmented Jacobian) lost row rank. `level` is the
    /// 1-based priority level when the failure is tied to a task stack.
    #[error("{} has row rank {rank}, expected {rows}", level_name(*.level))]
    RankDeficient {
        level: Option<usize>,
        rank: usize,
        rows: usize,
    },

    #[error("the task stack is empty")]
    EmptyStack,

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid manipulator model: {0}")]
    InvalidModel(String),

    #[error("gain solver failed with status {0}")]
    SolverFailed(SolverStatus),

    #[error("joint {joint} velocity {value} rad/s exceeds its bound {bound} rad/s")]
    VelocityBound { joint: usize, value: f64, bound: f64 },

    #[error("simulation aborted at step {step}: {source}")]
    AtStep { step: usize, source: Box<Error> },
}

fn level_name(level: Option<usize>) -> String {
    match level {
        Some(l) => format!("priority level {l}"),
        None => "matrix".to_string(),
    }
}

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Self {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }
}

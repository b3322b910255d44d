//! Closed-loop error dynamics and the discrete-time Lyapunov test.
//!
//! With `V = 0.5 |e|^2` and a first-order error update `e+ = e + A e dt`, the
//! one-step change of `V` is `0.5 e^T (A^T dt + A dt + A^T A dt^2) e`. The
//! stability margin reported here is the largest eigenvalue of that matrix, so
//! a negative margin certifies a decrease of `V` at this step.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::hierarchy::{check_gains, HierarchyState};

/// Gain-free error dynamics at one configuration plus the control period.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorDynamics {
    gain_free: DMatrix<f64>,
    dt: f64,
}

impl ErrorDynamics {
    pub fn new(gain_free: DMatrix<f64>, dt: f64) -> Result<Self> {
        if !gain_free.is_square() {
            return Err(Error::DimensionMismatch {
                context: "error dynamics",
                expected: gain_free.nrows(),
                found: gain_free.ncols(),
            });
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        Ok(Self { gain_free, dt })
    }

    pub fn from_state(state: &HierarchyState, dt: f64) -> Result<Self> {
        Self::new(state.dynamics().clone(), dt)
    }

    pub fn dim(&self) -> usize {
        self.gain_free.nrows()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn gain_free(&self) -> &DMatrix<f64> {
        &self.gain_free
    }
}

/// Closed-loop matrix `A(lambda)`: column `l` of the gain-free grid scaled by `lambda_l`.
pub fn assemble_a(dynamics: &ErrorDynamics, lambda: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_gains(lambda, dynamics.dim())?;
    let mut a = dynamics.gain_free.clone();
    for (mut col, l) in a.column_iter_mut().zip(lambda.iter()) {
        col *= *l;
    }
    Ok(a)
}

/// The symmetric matrix `A^T dt + A dt + A^T A dt^2`.
pub fn lyapunov_difference_matrix(a: &DMatrix<f64>, dt: f64) -> DMatrix<f64> {
    let at = a.transpose();
    let x = (&at + a) * dt + (&at * a) * (dt * dt);
    (&x + x.transpose()) * 0.5
}

/// Largest eigenvalue of `A^T dt + A dt + A^T A dt^2`; negative means stable.
pub fn stability_margin(a: &DMatrix<f64>, dt: f64) -> f64 {
    assert!(a.is_square(), "stability margin needs a square matrix");
    if a.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    max_eigenvalue(lyapunov_difference_matrix(a, dt))
}

pub(crate) fn max_eigenvalue(sym: DMatrix<f64>) -> f64 {
    SymmetricEigen::new(sym).eigenvalues.max()
}

pub(crate) fn min_eigenvalue(sym: DMatrix<f64>) -> f64 {
    SymmetricEigen::new(sym).eigenvalues.min()
}

/// `V = 0.5 |e|^2`.
pub fn lyapunov_value(error: &DVector<f64>) -> f64 {
    0.5 * error.norm_squared()
}

//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use clik_sdp::hierarchy::HierarchyState;
use clik_sdp::kinematics::{task_jacobian, task_value};
use clik_sdp::lmi::{build_f1, build_f2, build_f3, build_s, formulate, GainProblemParams};
use clik_sdp::stability::ErrorDynamics;
use clik_sdp::{clik_velocity, Axis, ManipulatorModel, TaskKind, TaskSpec};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(lo..hi))
}

pub fn uniform_mat(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(lo..hi))
}

pub fn min_eig(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new((m + m.transpose()) * 0.5).eigenvalues.min()
}

/// Pseudo-inverse through nalgebra's own routine, not the crate's.
pub fn reference_pinv(j: &DMatrix<f64>) -> DMatrix<f64> {
    j.clone().pseudo_inverse(1e-13).expect("svd converged")
}

pub fn planar3() -> ManipulatorModel {
    ManipulatorModel::planar(vec![0.5, 0.3, 0.2], 3.0).unwrap()
}

pub fn ur5() -> ManipulatorModel {
    ManipulatorModel::ur5(6.0).unwrap()
}

pub fn central_difference(model: &ManipulatorModel, task: &TaskSpec, q: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let m = task.dim();
    let mut jac = DMatrix::zeros(m, q.len());
    for j in 0..q.len() {
        let mut qp = q.clone();
        let mut qm = q.clone();
        qp[j] += h;
        qm[j] -= h;
        let d = (task_value(model, task, &qp).unwrap() - task_value(model, task, &qm).unwrap()) / (2.0 * h);
        jac.set_column(j, &d);
    }
    jac
}

/// Every task kind on both robot models.
pub fn all_tasks() -> Vec<(ManipulatorModel, TaskSpec)> {
    let p = planar3();
    let u = ur5();
    let mut out = vec![
        (
            p.clone(),
            TaskSpec::new(TaskKind::PlanarEePosition, vec![0.0; 2]).unwrap(),
        ),
        (p, TaskSpec::new(TaskKind::PlanarEeOrientation, vec![0.0]).unwrap()),
    ];
    for frame in 1..=6 {
        out.push((
            u.clone(),
            TaskSpec::new(TaskKind::DhFramePosition { frame }, vec![0.0; 3]).unwrap(),
        ));
    }
    for axis in [Axis::X, Axis::Y, Axis::Z] {
        out.push((
            u.clone(),
            TaskSpec::new(TaskKind::DhFrameCoordinate { frame: 4, axis }, vec![0.0]).unwrap(),
        ));
    }
    out
}

/// Largest gap between analytic and finite-difference Jacobians over
/// `configs` random configurations of every task.
pub fn jacobian_fd_error(seed: u64, configs: usize) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..configs {
        for (model, task) in all_tasks() {
            let q = uniform_vec(&mut r, model.dof(), -3.1, 3.1);
            let analytic = task_jacobian(&model, &task, &q).unwrap();
            let numeric = central_difference(&model, &task, &q, 1e-6);
            worst = worst.max((analytic - numeric).amax());
        }
    }
    worst
}

/// Random well-conditioned stack with the given level dimensions.
pub fn random_state(r: &mut ChaCha8Rng, dof: usize, dims: &[usize]) -> HierarchyState {
    loop {
        let jacobians: Vec<DMatrix<f64>> = dims.iter().map(|d| uniform_mat(r, *d, dof, -1.0, 1.0)).collect();
        let total: usize = dims.iter().sum();
        let mut stacked = DMatrix::zeros(total, dof);
        let mut off = 0;
        for j in &jacobians {
            stacked.rows_mut(off, j.nrows()).copy_from(j);
            off += j.nrows();
        }
        let sv = stacked.singular_values();
        if sv.min() < 0.1 * sv.max() {
            continue;
        }
        let errors = dims.iter().map(|d| uniform_vec(r, *d, -1.0, 1.0)).collect();
        return HierarchyState::from_parts(jacobians, errors).unwrap();
    }
}

/// Largest violation of symmetry, idempotency and annulment over every projector.
pub fn projector_residual(state: &HierarchyState) -> f64 {
    let mut worst: f64 = 0.0;
    let mut augmented = DMatrix::zeros(0, state.dof());
    for i in 0..state.levels() {
        let n = state.projector(i);
        worst = worst.max((n - n.transpose()).amax());
        worst = worst.max((n * n - n).amax());
        if i > 0 {
            worst = worst.max((&augmented * n).amax());
        }
        let j = state.jacobian(i);
        let mut next = DMatrix::zeros(augmented.nrows() + j.nrows(), state.dof());
        next.rows_mut(0, augmented.nrows()).copy_from(&augmented);
        next.rows_mut(augmented.nrows(), j.nrows()).copy_from(j);
        augmented = next;
    }
    worst
}

/// CLIK velocity recomputed summand by summand from raw Jacobians.
pub fn clik_by_terms(jacobians: &[DMatrix<f64>], errors: &[DVector<f64>], lambda: &DVector<f64>) -> DVector<f64> {
    let dof = jacobians[0].ncols();
    let mut qd = DVector::zeros(dof);
    let mut off = 0;
    for i in 0..jacobians.len() {
        let projector = if i == 0 {
            DMatrix::identity(dof, dof)
        } else {
            let rows: usize = jacobians[..i].iter().map(|j| j.nrows()).sum();
            let mut aug = DMatrix::zeros(rows, dof);
            let mut r = 0;
            for j in &jacobians[..i] {
                aug.rows_mut(r, j.nrows()).copy_from(j);
                r += j.nrows();
            }
            DMatrix::identity(dof, dof) - reference_pinv(&aug) * aug
        };
        let d = errors[i].len();
        let gain = DMatrix::from_diagonal(&lambda.rows(off, d).into_owned());
        qd += projector * reference_pinv(&jacobians[i]) * gain * &errors[i];
        off += d;
    }
    qd
}

/// Largest `|S lambda - clik_velocity|` over random instances.
pub fn s_lambda_error(seed: u64, trials: usize) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for k in 0..trials {
        let dims: &[usize] = [&[2, 1][..], &[3, 1, 1], &[1, 2], &[2, 2, 1]][k % 4];
        let dof = 6;
        let state = random_state(&mut r, dof, dims);
        let lambda = uniform_vec(&mut r, state.total_dim(), 0.0, 50.0);
        let via_s = build_s(&state) * &lambda;
        let direct = clik_velocity(&state, &lambda).unwrap();
        worst = worst.max((via_s - direct).amax());
    }
    worst
}

/// Outcome of comparing a block's PSD test against an independent criterion.
#[derive(Debug, Default, Clone, Copy)]
pub struct Agreement {
    pub mismatches: usize,
    pub feasible: usize,
    pub infeasible: usize,
}

impl Agreement {
    fn record(&mut self, block_psd: f64, oracle: f64) {
        // samples within round-off of the boundary carry no information
        if block_psd.abs() < 1e-9 || oracle.abs() < 1e-9 {
            return;
        }
        if (block_psd >= 0.0) != (oracle >= 0.0) {
            self.mismatches += 1;
        }
        if oracle >= 0.0 {
            self.feasible += 1;
        } else {
            self.infeasible += 1;
        }
    }

    pub fn ok(&self) -> bool {
        self.mismatches == 0 && self.feasible > 0 && self.infeasible > 0
    }
}

/// F1 against `min eig(-A^T - A - beta I - A^T A dt)` on random gains.
pub fn f1_agreement(seed: u64, samples: usize) -> Agreement {
    let mut r = rng(seed);
    let state = random_state(&mut r, 5, &[2, 1, 1]);
    let dt = 0.01;
    let dynamics = ErrorDynamics::from_state(&state, dt).unwrap();
    let f1 = build_f1(&dynamics);
    let n = state.total_dim();
    let mut out = Agreement::default();
    for _ in 0..samples {
        let lambda = uniform_vec(&mut r, n, 0.0, 120.0);
        let beta = r.random_range(-2.0..4.0);
        let a = state.dynamics() * DMatrix::from_diagonal(&lambda);
        let schur = -a.transpose() - &a - DMatrix::identity(n, n) * beta - a.transpose() * &a * dt;
        let x = DVector::from_iterator(n + 2, lambda.iter().copied().chain([beta, 0.0]));
        out.record(f1.min_eigenvalue(&x), min_eig(&schur));
    }
    out
}

/// F2 against the elementwise bound check of `qd = S lambda`.
pub fn f2_agreement(seed: u64, samples: usize) -> Agreement {
    let mut r = rng(seed);
    let (dof, n) = (4, 3);
    let mut out = Agreement::default();
    for _ in 0..samples {
        let s = uniform_mat(&mut r, dof, n, -1.0, 1.0);
        let upper = uniform_vec(&mut r, dof, 0.5, 3.0);
        let lower = -uniform_vec(&mut r, dof, 0.5, 3.0);
        let (fu, fl) = build_f2(&s, &upper, &lower).unwrap();
        let lambda = uniform_vec(&mut r, n, 0.0, 2.5);
        let x = DVector::from_iterator(n + 2, lambda.iter().copied().chain([0.0, 0.0]));
        let qd = &s * &lambda;
        let slack = (0..dof)
            .map(|j| (upper[j] - qd[j]).min(qd[j] - lower[j]))
            .fold(f64::INFINITY, f64::min);
        out.record(fu.min_eigenvalue(&x).min(fl.min_eigenvalue(&x)), slack);
    }
    out
}

/// F3 against `gamma - (beta - beta_t)^2 - delta |lambda|^2`.
pub fn f3_agreement(seed: u64, samples: usize) -> Agreement {
    let mut r = rng(seed);
    let n = 3;
    let mut out = Agreement::default();
    for _ in 0..samples {
        let beta_tilde = r.random_range(0.5..10.0);
        let delta = r.random_range(1e-3..1.0);
        let f3 = build_f3(beta_tilde, delta, n).unwrap();
        let lambda = uniform_vec(&mut r, n, 0.0, 5.0);
        let beta = r.random_range(0.0..10.0);
        let q = (beta - beta_tilde).powi(2) + delta * lambda.norm_squared();
        let gamma = q + r.random_range(-0.5..0.5) * (1.0 + q);
        let x = DVector::from_iterator(n + 2, lambda.iter().copied().chain([beta, gamma]));
        out.record(f3.min_eigenvalue(&x), gamma - q);
    }
    out
}

pub const GRID_BETA_TILDE: f64 = 8.0;
pub const GRID_DELTA: f64 = 2e-5;

/// Brute-force minimum of `(beta - beta_t)^2 + delta |lambda|^2` over
/// `[0, lambda_max]^n x [0, beta_max]`. Gains are gridded and the grid is
/// zoomed around the incumbent (half the width per round) until its spacing falls below `1e-5`; for each
/// gain vector the best `beta` is found by bisection, since shrinking `beta`
/// only relaxes the stability condition. Feasibility is the Schur form of the
/// stability condition and the elementwise velocity check, never the blocks.
pub fn grid_optimum(
    g: &DMatrix<f64>,
    s: &DMatrix<f64>,
    upper: &DVector<f64>,
    lower: &DVector<f64>,
    dt: f64,
    lambda_max: f64,
    beta_max: f64,
) -> (DVector<f64>, f64, f64) {
    let n = g.nrows();
    let stable = |lambda: &DVector<f64>, beta: f64| {
        let a = g * DMatrix::from_diagonal(lambda);
        let m = -a.transpose() - &a - DMatrix::identity(n, n) * beta - a.transpose() * &a * dt;
        min_eig(&m) >= 0.0
    };
    let within_bounds = |lambda: &DVector<f64>| {
        let qd = s * lambda;
        (0..qd.len()).all(|j| qd[j] <= upper[j] && qd[j] >= lower[j])
    };
    // best feasible beta for fixed gains, or None
    let best_beta = |lambda: &DVector<f64>| -> Option<f64> {
        if !within_bounds(lambda) || !stable(lambda, 0.0) {
            return None;
        }
        let top = beta_max.min(GRID_BETA_TILDE);
        if stable(lambda, top) {
            return Some(top);
        }
        let (mut lo, mut hi) = (0.0, top);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if stable(lambda, mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(lo)
    };

    let points: usize = if n == 1 { 2001 } else { 41 };
    let mut lo = DVector::from_element(n, 0.0);
    let mut hi = DVector::from_element(n, lambda_max);
    let mut best: Option<(DVector<f64>, f64, f64)> = None;
    loop {
        let step = (&hi - &lo) / (points as f64 - 1.0);
        for idx in 0..points.pow(n as u32) {
            let mut rem = idx;
            let lambda = DVector::from_fn(n, |k, _| {
                let v = lo[k] + step[k] * (rem % points) as f64;
                rem /= points;
                v
            });
            let Some(beta) = best_beta(&lambda) else { continue };
            let c = (beta - GRID_BETA_TILDE).powi(2) + GRID_DELTA * lambda.norm_squared();
            if best.as_ref().is_none_or(|b| c < b.2) {
                best = Some((lambda, beta, c));
            }
        }
        let incumbent = best.clone().expect("grid contains a feasible point");
        if step.max() < 1e-5 {
            return incumbent;
        }
        // halve the box each round; valleys of the objective can be long and thin
        for k in 0..n {
            let half = (hi[k] - lo[k]) * 0.25;
            lo[k] = (incumbent.0[k] - half).max(0.0);
            hi[k] = (incumbent.0[k] + half).min(lambda_max);
        }
    }
}

/// The scalar gain problem: `J = 1`, error 1, symmetric velocity bound.
pub fn scalar_state() -> HierarchyState {
    HierarchyState::from_parts(
        vec![DMatrix::from_element(1, 1, 1.0)],
        vec![DVector::from_element(1, 1.0)],
    )
    .unwrap()
}

pub fn grid_params(dt: f64) -> GainProblemParams {
    GainProblemParams {
        beta_tilde: GRID_BETA_TILDE,
        delta: GRID_DELTA,
        eps_beta: 1e-9,
        dt,
    }
}

/// Gap between `solve_sdp` and the grid oracle on one instance, relative to `1 + |objective|`.
pub fn grid_gap(state: &HierarchyState, upper: &DVector<f64>, lower: &DVector<f64>, dt: f64, lambda_max: f64) -> f64 {
    let problem = formulate(state, upper, lower, &grid_params(dt)).unwrap();
    let sol = clik_sdp::solve_sdp(&problem, &Default::default());
    assert_eq!(sol.status, clik_sdp::SolverStatus::Optimal, "{:?}", sol.detail);
    let (_, _, grid) = grid_optimum(state.dynamics(), &build_s(state), upper, lower, dt, lambda_max, 10.0);
    (sol.objective - grid).abs() / (1.0 + grid.abs())
}

/// Random two-gain instances (two scalar tasks on a 2-joint robot) plus the
/// scalar problem. Instances whose velocity constraints leave only a sliver
/// of gains feasible are skipped.
pub fn grid_instances(seed: u64, count: usize) -> Vec<(HierarchyState, DVector<f64>, DVector<f64>)> {
    let mut r = rng(seed);
    let mut out = vec![(
        scalar_state(),
        DVector::from_element(1, 3.0),
        DVector::from_element(1, -3.0),
    )];
    while out.len() < count + 1 {
        let state = random_state(&mut r, 2, &[1, 1]);
        // a thin feasible strip would slip between grid points
        let sv = build_s(&state).singular_values();
        if sv.min() < 0.2 * sv.max() {
            continue;
        }
        let upper = uniform_vec(&mut r, 2, 1.0, 3.0);
        let lower = -uniform_vec(&mut r, 2, 1.0, 3.0);
        out.push((state, upper, lower));
    }
    out
}

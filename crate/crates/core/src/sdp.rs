//! Dense log-det barrier solver for the small SDPs produced by [`crate::lmi`].
//!
//! Phase I searches for a strictly feasible point by minimizing an auxiliary
//! shift `s` with `F_j(x) + s I > 0`; phase II follows the central path of
//! `t c^T x - sum_j log det F_j(x)` until `m / t` (an upper bound on the
//! duality gap, `m` the total block size) drops below the objective
//! tolerance. A last step along `-c` moves the iterate onto the boundary of
//! the feasible set, which makes the epigraph variable tight.
//!
//! Every choice is a fixed function of the input, so repeated solves of the
//! same problem produce identical iterates.

use std::fmt;
use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::lmi::{BlockKind, LmiBlock, SdpProblem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    /// Smallest block eigenvalue accepted at the returned point.
    pub feas_tol: f64,
    /// Accepted bound on the objective suboptimality.
    pub obj_tol: f64,
    /// Newton-step budget over both phases.
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            feas_tol: 1e-7,
            obj_tol: 1e-6,
            max_iterations: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverStatus {
    Optimal,
    Infeasible,
    MaxIterations,
    NumericalFailure,
}

impl SolverStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolverStatus::Optimal => "optimal",
            SolverStatus::Infeasible => "infeasible",
            SolverStatus::MaxIterations => "max_iterations",
            SolverStatus::NumericalFailure => "numerical_failure",
        }
    }
}

impl fmt::Display for SolverStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Solver output. `x` is the full decision vector `[lambda, beta, gamma]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSolution {
    pub x: DVector<f64>,
    pub lambda: DVector<f64>,
    pub beta: f64,
    pub gamma: f64,
    pub status: SolverStatus,
    /// Smallest eigenvalue over all blocks at `x`.
    pub min_block_eig: f64,
    /// Per-block smallest eigenvalue, in problem order.
    pub block_min_eigs: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Wall-clock seconds.
    pub solve_time: f64,
    /// Human-readable reason for a non-optimal status.
    pub detail: Option<String>,
}

/// Per-block feasibility of a candidate point.
#[derive(Debug, Clone, PartialEq)]
pub struct CertificateReport {
    pub blocks: Vec<(BlockKind, f64)>,
    pub min_eig: f64,
    pub objective: f64,
    pub feasible: bool,
}

impl CertificateReport {
    /// First block whose smallest eigenvalue is below `-feas_tol`.
    pub fn violated_block(&self, feas_tol: f64) -> Option<BlockKind> {
        self.blocks.iter().find(|(_, e)| *e < -feas_tol).map(|(k, _)| *k)
    }
}

/// Evaluates every block of `problem` at `x`.
pub fn check_certificate(problem: &SdpProblem, x: &DVector<f64>, feas_tol: f64) -> CertificateReport {
    let blocks: Vec<(BlockKind, f64)> = problem.blocks.iter().map(|b| (b.kind, b.min_eigenvalue(x))).collect();
    let min_eig = blocks.iter().map(|(_, e)| *e).fold(f64::INFINITY, f64::min);
    CertificateReport {
        feasible: min_eig >= -feas_tol,
        min_eig,
        objective: problem.c.dot(x),
        blocks,
    }
}

/// Solver instance; holds options only, so one instance per simulation is enough.
#[derive(Debug, Clone, Default)]
pub struct SdpSolver {
    opts: SolverOptions,
}

pub fn solve_sdp(problem: &SdpProblem, opts: &SolverOptions) -> GainSolution {
    SdpSolver::new(*opts).solve(problem)
}

// Stop phase I once every block clears this margin.
const PHASE1_MARGIN: f64 = 1e-2;
// Weight of the real objective during phase I; keeps recession directions
// of the barrier (e.g. an epigraph variable growing forever) bounded.
const PHASE1_OBJECTIVE_WEIGHT: f64 = 1e-3;
const BARRIER_GROWTH: f64 = 10.0;
const CENTERING_TOL: f64 = 1e-9;
const ARMIJO: f64 = 0.25;
const MIN_STEP: f64 = 1e-14;
const STALL_RTOL: f64 = 1e-15;
// Phase II stops once m / t is below this fraction of the objective tolerance.
const GAP_FRACTION: f64 = 0.1;

impl SdpSolver {
    pub fn new(opts: SolverOptions) -> Self {
        Self { opts }
    }

    pub fn options(&self) -> &SolverOptions {
        &self.opts
    }

    pub fn solve(&mut self, problem: &SdpProblem) -> GainSolution {
        let start = Instant::now();
        let n = problem.n_vars();
        let mut budget = self.opts.max_iterations;
        let mut iterations = 0;

        let finish = |x: DVector<f64>, status, iterations, detail: Option<String>| {
            let residuals = Packed::new(&problem.blocks, n).min_eigenvalues(&x);
            let min_block_eig = residuals.iter().copied().fold(f64::INFINITY, f64::min);
            let layout = problem.layout;
            GainSolution {
                lambda: x.rows(0, layout.n_gains).into_owned(),
                beta: x[layout.beta()],
                gamma: x[layout.gamma()],
                objective: problem.c.dot(&x),
                x,
                status,
                min_block_eig,
                block_min_eigs: residuals,
                iterations,
                solve_time: start.elapsed().as_secs_f64(),
                detail,
            }
        };

        // Phase I on y = [x, s].
        let shifted = Packed::with_shift(&problem.blocks, n);
        let x0 = DVector::zeros(n);
        let s0 = (1.0 - Packed::new(&problem.blocks, n).min_eigenvalue(&x0)).max(1.0);
        let mut y0 = DVector::zeros(n + 1);
        y0[n] = s0;
        let mut c1 = DVector::zeros(n + 1);
        c1.rows_mut(0, n).copy_from(&(&problem.c * PHASE1_OBJECTIVE_WEIGHT));
        c1[n] = 1.0;
        let phase1 = shifted.minimize(&c1, y0, 1.0, self.opts.obj_tol * 1e-2, budget, |y| {
            y[n] <= -PHASE1_MARGIN
        });
        iterations += phase1.iterations;
        budget = budget.saturating_sub(phase1.iterations);
        let y = phase1.point;
        let x_feas = y.rows(0, n).into_owned();
        match phase1.end {
            PathEnd::Stopped => {}
            PathEnd::Converged if y[n] < 0.0 => {}
            PathEnd::Converged => {
                return finish(
                    x_feas,
                    SolverStatus::Infeasible,
                    iterations,
                    Some(format!(
                        "no strictly feasible point: smallest achievable shift {:.3e} >= 0",
                        y[n]
                    )),
                );
            }
            PathEnd::Budget => {
                return finish(
                    x_feas,
                    SolverStatus::MaxIterations,
                    iterations,
                    Some("iteration budget spent while searching for a feasible point".into()),
                )
            }
            PathEnd::Numerical(why) => {
                return finish(
                    x_feas,
                    SolverStatus::NumericalFailure,
                    iterations,
                    Some(format!("phase I: {why}")),
                )
            }
        }

        // Phase II.
        let packed = Packed::new(&problem.blocks, n);
        let t0 = packed.initial_barrier_weight(&problem.c, &x_feas);
        let phase2 = packed.minimize(&problem.c, x_feas, t0, self.opts.obj_tol * GAP_FRACTION, budget, |_| {
            false
        });
        iterations += phase2.iterations;
        let reached_gap = packed.total_size() as f64 / phase2.t;
        let (status, detail) = match phase2.end {
            PathEnd::Converged | PathEnd::Stopped => (SolverStatus::Optimal, None),
            PathEnd::Budget => (
                SolverStatus::MaxIterations,
                Some(format!("iteration budget spent at gap bound {reached_gap:.3e}")),
            ),
            PathEnd::Numerical(_) if reached_gap * BARRIER_GROWTH <= self.opts.obj_tol => (SolverStatus::Optimal, None),
            PathEnd::Numerical(why) => (SolverStatus::NumericalFailure, Some(why)),
        };
        let x = packed.step_to_boundary(&phase2.point, &problem.c);

        let mut solution = finish(x, status, iterations, detail);
        if solution.status == SolverStatus::Optimal && solution.min_block_eig < -self.opts.feas_tol {
            solution.status = SolverStatus::NumericalFailure;
            solution.detail = Some(format!(
                "returned point violates a block by {:.3e}",
                -solution.min_block_eig
            ));
        }
        solution
    }
}

enum PathEnd {
    Converged,
    Stopped,
    Budget,
    Numerical(String),
}

struct PathResult {
    point: DVector<f64>,
    iterations: usize,
    t: f64,
    end: PathEnd,
}

struct PackedBlock {
    constant: DMatrix<f64>,
    coeffs: Vec<(usize, DMatrix<f64>)>,
}

impl PackedBlock {
    fn evaluate(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let mut f = self.constant.clone();
        for (v, m) in &self.coeffs {
            let w = y[*v];
            if w != 0.0 {
                f += m * w;
            }
        }
        f
    }

    fn direction(&self, dy: &DVector<f64>) -> DMatrix<f64> {
        let mut f = DMatrix::zeros(self.constant.nrows(), self.constant.ncols());
        for (v, m) in &self.coeffs {
            f += m * dy[*v];
        }
        f
    }
}

/// Blocks in the solver's own layout over `n_vars` variables.
struct Packed {
    blocks: Vec<PackedBlock>,
    n_vars: usize,
}

impl Packed {
    fn new(blocks: &[LmiBlock], n: usize) -> Self {
        Self {
            blocks: blocks
                .iter()
                .map(|b| PackedBlock {
                    constant: b.constant.clone(),
                    coeffs: b.coeffs.clone(),
                })
                .collect(),
            n_vars: n,
        }
    }

    /// Adds a variable `s` (index `n`) entering every block as `s I`.
    fn with_shift(blocks: &[LmiBlock], n: usize) -> Self {
        let mut packed = Self::new(blocks, n);
        for b in &mut packed.blocks {
            let size = b.constant.nrows();
            b.coeffs.push((n, DMatrix::identity(size, size)));
        }
        packed.n_vars = n + 1;
        packed
    }

    fn total_size(&self) -> usize {
        self.blocks.iter().map(|b| b.constant.nrows()).sum()
    }

    fn min_eigenvalues(&self, x: &DVector<f64>) -> Vec<f64> {
        self.blocks
            .iter()
            .map(|b| {
                let f = b.evaluate(x);
                SymmetricEigen::new((&f + f.transpose()) * 0.5).eigenvalues.min()
            })
            .collect()
    }

    fn min_eigenvalue(&self, x: &DVector<f64>) -> f64 {
        self.min_eigenvalues(x).into_iter().fold(f64::INFINITY, f64::min)
    }

    fn factor(&self, y: &DVector<f64>) -> Option<Vec<Cholesky<f64, Dyn>>> {
        self.blocks.iter().map(|b| Cholesky::new(b.evaluate(y))).collect()
    }

    fn barrier_value(factors: &[Cholesky<f64, Dyn>]) -> f64 {
        // -log det F = -2 sum log diag(L)
        factors
            .iter()
            .map(|ch| -2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
            .sum()
    }

    /// Gradient and Hessian of `-sum log det F_j(y)`.
    fn barrier_derivatives(&self, factors: &[Cholesky<f64, Dyn>]) -> (DVector<f64>, DMatrix<f64>) {
        let mut grad = DVector::zeros(self.n_vars);
        let mut hess = DMatrix::zeros(self.n_vars, self.n_vars);
        for (b, ch) in self.blocks.iter().zip(factors) {
            let inv = ch.inverse();
            let scaled: Vec<(usize, DMatrix<f64>)> = b.coeffs.iter().map(|(v, m)| (*v, &inv * m)).collect();
            for (a, (va, ga)) in scaled.iter().enumerate() {
                grad[*va] -= ga.trace();
                for (vb, gb) in scaled.iter().skip(a) {
                    // tr(Ga Gb) without forming the product
                    let h = ga.component_mul(&gb.transpose()).sum();
                    hess[(*va, *vb)] += h;
                    if va != vb {
                        hess[(*vb, *va)] += h;
                    }
                }
            }
        }
        (grad, hess)
    }

    /// Barrier weight that best balances objective and centrality at `x`.
    fn initial_barrier_weight(&self, c: &DVector<f64>, x: &DVector<f64>) -> f64 {
        let Some(factors) = self.factor(x) else { return 1.0 };
        let (g, h) = self.barrier_derivatives(&factors);
        let Some(hinv_c) = solve_spd(&h, c) else { return 1.0 };
        let denom = c.dot(&hinv_c);
        let t = -g.dot(&hinv_c) / denom;
        if t.is_finite() && t > 0.0 {
            t.clamp(1e-3, 1e3)
        } else {
            1.0
        }
    }

    fn minimize(
        &self,
        c: &DVector<f64>,
        mut y: DVector<f64>,
        mut t: f64,
        gap_tol: f64,
        budget: usize,
        stop: impl Fn(&DVector<f64>) -> bool,
    ) -> PathResult {
        let m = self.total_size() as f64;
        let mut iterations = 0;
        let result = |point, iterations, t, end| PathResult {
            point,
            iterations,
            t,
            end,
        };
        let Some(mut factors) = self.factor(&y) else {
            return result(y, 0, t, PathEnd::Numerical("starting point is not interior".into()));
        };
        loop {
            // centering
            loop {
                if iterations >= budget {
                    return result(y, iterations, t, PathEnd::Budget);
                }
                let (g_bar, hess) = self.barrier_derivatives(&factors);
                let grad = c * t + g_bar;
                let Some(step) = solve_spd(&hess, &(-&grad)) else {
                    return result(y, iterations, t, PathEnd::Numerical("singular Newton system".into()));
                };
                let decrement = -grad.dot(&step);
                if !decrement.is_finite() {
                    return result(
                        y,
                        iterations,
                        t,
                        PathEnd::Numerical("non-finite Newton decrement".into()),
                    );
                }
                if decrement * 0.5 <= CENTERING_TOL {
                    break;
                }
                let f0 = t * c.dot(&y) + Self::barrier_value(&factors);
                let mut alpha = 1.0;
                let accepted = loop {
                    if alpha < MIN_STEP {
                        break None;
                    }
                    let trial = &y + &step * alpha;
                    if let Some(fs) = self.factor(&trial) {
                        let f1 = t * c.dot(&trial) + Self::barrier_value(&fs);
                        if f1 <= f0 - ARMIJO * alpha * decrement {
                            break Some((trial, fs));
                        }
                    }
                    alpha *= 0.5;
                };
                iterations += 1;
                match accepted {
                    Some((trial, fs)) => {
                        let f1 = t * c.dot(&trial) + Self::barrier_value(&fs);
                        y = trial;
                        factors = fs;
                        // decrease lost in round-off: as centered as this precision allows
                        if f0 - f1 <= STALL_RTOL * f0.abs().max(1.0) {
                            break;
                        }
                    }
                    None => {
                        // no further progress possible at this precision
                        if decrement * 0.5 <= 1e-6 {
                            break;
                        }
                        return result(y, iterations, t, PathEnd::Numerical("line search stalled".into()));
                    }
                }
                if stop(&y) {
                    return result(y, iterations, t, PathEnd::Stopped);
                }
            }
            if m / t <= gap_tol {
                return result(y, iterations, t, PathEnd::Converged);
            }
            t *= BARRIER_GROWTH;
        }
    }

    /// Moves from the interior point `x` along `-c` to the boundary of the
    /// feasible set (largest step keeping every block PSD).
    fn step_to_boundary(&self, x: &DVector<f64>, c: &DVector<f64>) -> DVector<f64> {
        let d = -c;
        let mut alpha = f64::INFINITY;
        for b in &self.blocks {
            let dir = b.direction(&d);
            if dir.iter().all(|v| *v == 0.0) {
                continue;
            }
            let Some(ch) = Cholesky::new(b.evaluate(x)) else {
                return x.clone();
            };
            // F + a D >= 0  <=>  I + a L^-1 D L^-T >= 0
            let l = ch.l();
            let Some(linv) = l.clone().try_inverse() else {
                return x.clone();
            };
            let w = &linv * dir * linv.transpose();
            let lo = SymmetricEigen::new((&w + w.transpose()) * 0.5).eigenvalues.min();
            if lo < 0.0 {
                alpha = alpha.min(-1.0 / lo);
            }
        }
        if !alpha.is_finite() {
            return x.clone();
        }
        x + d * (alpha * (1.0 - 1e-12))
    }
}

fn solve_spd(h: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = Cholesky::new(h.clone()) {
        let sol = ch.solve(rhs);
        if sol.iter().all(|v| v.is_finite()) {
            return Some(sol);
        }
    }
    // tiny ridge relative to the diagonal scale
    let scale = h.diagonal().amax().max(1.0);
    let ridged = h + DMatrix::identity(h.nrows(), h.ncols()) * (scale * 1e-12);
    Cholesky::new(ridged)
        .map(|ch| ch.solve(rhs))
        .filter(|s| s.iter().all(|v| v.is_finite()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmi::{assemble_problem, build_f3, build_f4_beta_positive, VarLayout};
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    #[test]
    fn unconstrained_quadratic_minimum() {
        let problem = assemble_problem(
            vec![build_f3(2.0, 1.0, 1).unwrap(), build_f4_beta_positive(1e-9, 1).unwrap()],
            1,
        )
        .unwrap();
        let sol = solve_sdp(&problem, &SolverOptions::default());
        assert_eq!(sol.status, SolverStatus::Optimal, "{:?}", sol.detail);
        assert_abs_diff_eq!(sol.lambda[0], 0.0, epsilon = 1e-4);
        assert_abs_diff_eq!(sol.beta, 2.0, epsilon = 1e-4);
        assert_abs_diff_eq!(sol.gamma, 0.0, epsilon = 1e-6);
    }

    #[test]
    fn infeasible_problem_is_reported() {
        // beta >= 3 and beta <= 1
        let n = 1;
        let layout = VarLayout { n_gains: n };
        let ge3 = build_f4_beta_positive(3.0, n).unwrap();
        let mut le1 = build_f4_beta_positive(0.0, n).unwrap();
        le1.constant[(0, 0)] = 1.0;
        le1.coeffs = vec![(layout.beta(), DMatrix::from_element(1, 1, -1.0))];
        let problem = assemble_problem(vec![build_f3(2.0, 1.0, n).unwrap(), ge3, le1], n).unwrap();
        let sol = solve_sdp(&problem, &SolverOptions::default());
        assert_eq!(sol.status, SolverStatus::Infeasible);
        assert!(sol.detail.is_some());
    }

    #[test]
    fn tiny_budget_reports_max_iterations() {
        let problem = assemble_problem(
            vec![build_f3(2.0, 1.0, 1).unwrap(), build_f4_beta_positive(1e-9, 1).unwrap()],
            1,
        )
        .unwrap();
        let opts = SolverOptions {
            max_iterations: 2,
            ..SolverOptions::default()
        };
        assert_eq!(solve_sdp(&problem, &opts).status, SolverStatus::MaxIterations);
    }

    #[test]
    fn certificate_flags_violated_block() {
        let problem = assemble_problem(
            vec![build_f3(2.0, 1.0, 1).unwrap(), build_f4_beta_positive(1e-9, 1).unwrap()],
            1,
        )
        .unwrap();
        let bad = problem.layout.pack(&DVector::zeros(1), -1.0, 100.0);
        let report = check_certificate(&problem, &bad, 1e-7);
        assert!(!report.feasible);
        assert_eq!(report.violated_block(1e-7), Some(BlockKind::BetaPositive));
        let good = problem.layout.pack(&DVector::zeros(1), 2.0, 1.0);
        assert!(check_certificate(&problem, &good, 1e-7).feasible);
    }

    #[test]
    fn repeated_solves_are_identical() {
        let problem = assemble_problem(
            vec![build_f3(5.0, 0.1, 2).unwrap(), build_f4_beta_positive(1e-9, 2).unwrap()],
            2,
        )
        .unwrap();
        let a = solve_sdp(&problem, &SolverOptions::default());
        let b = solve_sdp(&problem, &SolverOptions::default());
        assert_eq!(a.x, b.x);
        assert_eq!(a.iterations, b.iterations);
    }
}

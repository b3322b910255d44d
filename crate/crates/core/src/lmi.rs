//! Linear matrix inequalities of the gain-scheduling problem.
//!
//! The decision vector is `x = [lambda_1..lambda_n, beta, gamma]`. Every block
//! is affine in `x`: `F(x) = F0 + sum_l F_l x_l`, and the problem asks for all
//! blocks to be positive semidefinite while minimizing `gamma`.

use std::fmt;
use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hierarchy::HierarchyState;
use crate::stability::{min_eigenvalue, ErrorDynamics};

/// Which constraint a block encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Stability,
    VelocityUpper,
    VelocityLower,
    BetaSoft,
    BetaPositive,
    GainNonnegative,
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BlockKind::Stability => "stability",
            BlockKind::VelocityUpper => "velocity_upper",
            BlockKind::VelocityLower => "velocity_lower",
            BlockKind::BetaSoft => "beta_soft",
            BlockKind::BetaPositive => "beta_positive",
            BlockKind::GainNonnegative => "gain_nonnegative",
        })
    }
}

/// Index helpers for `x = [lambda, beta, gamma]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarLayout {
    pub n_gains: usize,
}

impl VarLayout {
    pub fn len(&self) -> usize {
        self.n_gains + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn beta(&self) -> usize {
        self.n_gains
    }

    pub fn gamma(&self) -> usize {
        self.n_gains + 1
    }

    pub fn pack(&self, lambda: &DVector<f64>, beta: f64, gamma: f64) -> DVector<f64> {
        let mut x = DVector::zeros(self.len());
        x.rows_mut(0, self.n_gains).copy_from(lambda);
        x[self.beta()] = beta;
        x[self.gamma()] = gamma;
        x
    }
}

/// One affine symmetric block `F0 + sum_l F_l x_l`; variables with a zero
/// coefficient matrix are not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct LmiBlock {
    pub kind: BlockKind,
    pub constant: DMatrix<f64>,
    /// `(variable index into x, coefficient matrix)`
    pub coeffs: Vec<(usize, DMatrix<f64>)>,
}

impl LmiBlock {
    fn new(kind: BlockKind, constant: DMatrix<f64>) -> Self {
        Self {
            kind,
            constant,
            coeffs: Vec::new(),
        }
    }

    fn push(&mut self, var: usize, m: DMatrix<f64>) {
        if m.iter().any(|v| *v != 0.0) {
            self.coeffs.push((var, m));
        }
    }

    pub fn size(&self) -> usize {
        self.constant.nrows()
    }

    pub fn evaluate(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut out = self.constant.clone();
        for (var, m) in &self.coeffs {
            out += m * x[*var];
        }
        out
    }

    pub fn min_eigenvalue(&self, x: &DVector<f64>) -> f64 {
        let f = self.evaluate(x);
        min_eigenvalue((&f + f.transpose()) * 0.5)
    }

    fn max_var(&self) -> Option<usize> {
        self.coeffs.iter().map(|(v, _)| *v).max()
    }

    /// Largest deviation from symmetry over the constant and every coefficient.
    pub fn asymmetry(&self) -> f64 {
        std::iter::once(&self.constant)
            .chain(self.coeffs.iter().map(|(_, m)| m))
            .map(|m| (m - m.transpose()).amax())
            .fold(0.0, f64::max)
    }
}

/// Stability block `[[-(A^T + A) - beta I, A^T sqrt(dt)], [A sqrt(dt), I]]`,
/// whose Schur complement is `-(A^T + A) - beta I - A^T A dt`.
pub fn build_f1(dynamics: &ErrorDynamics) -> LmiBlock {
    let n = dynamics.dim();
    let layout = VarLayout { n_gains: n };
    let sqrt_dt = dynamics.dt().sqrt();
    let g = dynamics.gain_free();

    let mut constant = DMatrix::zeros(2 * n, 2 * n);
    constant.view_mut((n, n), (n, n)).fill_with_identity();
    let mut block = LmiBlock::new(BlockKind::Stability, constant);

    for l in 0..n {
        // A(lambda) = sum_l lambda_l * G e_l e_l^T
        let mut a_l = DMatrix::zeros(n, n);
        a_l.set_column(l, &g.column(l));
        let mut f = DMatrix::zeros(2 * n, 2 * n);
        f.view_mut((0, 0), (n, n)).copy_from(&(-(&a_l + a_l.transpose())));
        f.view_mut((0, n), (n, n)).copy_from(&(a_l.transpose() * sqrt_dt));
        f.view_mut((n, 0), (n, n)).copy_from(&(&a_l * sqrt_dt));
        block.push(l, f);
    }

    let mut f_beta = DMatrix::zeros(2 * n, 2 * n);
    f_beta.view_mut((0, 0), (n, n)).fill_with_identity();
    block.push(layout.beta(), -f_beta);
    block
}

/// Matrix `S` with `qd = S lambda`: level `i` contributes `N(i-1) Ji+ diag(e_i)`.
pub fn build_s(state: &HierarchyState) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(state.dof(), state.total_dim());
    for level in 0..state.levels() {
        let cols = state.projected_pinv(level) * DMatrix::from_diagonal(state.error(level));
        s.view_mut((0, state.offsets()[level]), (state.dof(), state.dims()[level]))
            .copy_from(&cols);
    }
    s
}

/// Joint-velocity bounds as two diagonal blocks: `diag(upper - S lambda)` and
/// `diag(S lambda - lower)`.
pub fn build_f2(s: &DMatrix<f64>, qd_upper: &DVector<f64>, qd_lower: &DVector<f64>) -> Result<(LmiBlock, LmiBlock)> {
    let dof = s.nrows();
    for b in [qd_upper, qd_lower] {
        if b.len() != dof {
            return Err(Error::DimensionMismatch {
                context: "velocity bounds",
                expected: dof,
                found: b.len(),
            });
        }
    }
    let mut upper = LmiBlock::new(BlockKind::VelocityUpper, DMatrix::from_diagonal(qd_upper));
    let mut lower = LmiBlock::new(BlockKind::VelocityLower, DMatrix::from_diagonal(&(-qd_lower)));
    for (l, col) in s.column_iter().enumerate() {
        let d = DMatrix::from_diagonal(&col.into_owned());
        upper.push(l, -&d);
        lower.push(l, d);
    }
    Ok((upper, lower))
}

/// Epigraph block `[[gamma, lambda^T, beta - beta_t], [lambda, I/delta, 0], [beta - beta_t, 0, 1]]`,
/// PSD exactly when `gamma >= (beta - beta_t)^2 + delta |lambda|^2`.
pub fn build_f3(beta_tilde: f64, delta: f64, n: usize) -> Result<LmiBlock> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::InvalidParameter(format!("delta must be positive, got {delta}")));
    }
    if !(beta_tilde.is_finite() && beta_tilde > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "beta_tilde must be positive, got {beta_tilde}"
        )));
    }
    let layout = VarLayout { n_gains: n };
    let size = n + 2;
    let last = n + 1;
    let mut constant = DMatrix::zeros(size, size);
    for i in 1..=n {
        constant[(i, i)] = 1.0 / delta;
    }
    constant[(last, last)] = 1.0;
    constant[(0, last)] = -beta_tilde;
    constant[(last, 0)] = -beta_tilde;
    let mut block = LmiBlock::new(BlockKind::BetaSoft, constant);

    let sym_unit = |i: usize, j: usize| {
        let mut m = DMatrix::zeros(size, size);
        m[(i, j)] = 1.0;
        m[(j, i)] = 1.0;
        m
    };
    for l in 0..n {
        block.push(l, sym_unit(0, l + 1));
    }
    block.push(layout.beta(), sym_unit(0, last));
    let mut g = DMatrix::zeros(size, size);
    g[(0, 0)] = 1.0;
    block.push(layout.gamma(), g);
    Ok(block)
}

/// `beta - eps_beta >= 0` as a 1x1 block.
pub fn build_f4_beta_positive(eps_beta: f64, n: usize) -> Result<LmiBlock> {
    if !(eps_beta.is_finite() && eps_beta >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "eps_beta must be nonnegative, got {eps_beta}"
        )));
    }
    let mut block = LmiBlock::new(BlockKind::BetaPositive, DMatrix::from_element(1, 1, -eps_beta));
    block.push(VarLayout { n_gains: n }.beta(), DMatrix::from_element(1, 1, 1.0));
    Ok(block)
}

/// `lambda >= 0` as a diagonal block.
pub fn build_gain_nonnegative(n: usize) -> LmiBlock {
    let mut block = LmiBlock::new(BlockKind::GainNonnegative, DMatrix::zeros(n, n));
    for l in 0..n {
        let mut m = DMatrix::zeros(n, n);
        m[(l, l)] = 1.0;
        block.push(l, m);
    }
    block
}

/// `min c^T x` subject to every block being PSD.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    pub layout: VarLayout,
    pub c: DVector<f64>,
    pub blocks: Vec<LmiBlock>,
}

pub fn assemble_problem(blocks: Vec<LmiBlock>, n: usize) -> Result<SdpProblem> {
    let layout = VarLayout { n_gains: n };
    for b in &blocks {
        if let Some(v) = b.max_var() {
            if v >= layout.len() {
                return Err(Error::DimensionMismatch {
                    context: "LMI variable index",
                    expected: layout.len(),
                    found: v + 1,
                });
            }
        }
        for (_, m) in &b.coeffs {
            if m.shape() != b.constant.shape() {
                return Err(Error::DimensionMismatch {
                    context: "LMI coefficient size",
                    expected: b.size(),
                    found: m.nrows(),
                });
            }
        }
    }
    let mut c = DVector::zeros(layout.len());
    c[layout.gamma()] = 1.0;
    Ok(SdpProblem { layout, c, blocks })
}

/// Parameters of the gain-scheduling problem that do not change between steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainProblemParams {
    pub beta_tilde: f64,
    pub delta: f64,
    pub eps_beta: f64,
    pub dt: f64,
}

/// Complete problem at one configuration: stability, both velocity bounds,
/// the soft constraint on `beta`, `beta > 0` and nonnegative gains.
pub fn formulate(
    state: &HierarchyState,
    qd_upper: &DVector<f64>,
    qd_lower: &DVector<f64>,
    params: &GainProblemParams,
) -> Result<SdpProblem> {
    let n = state.total_dim();
    let dynamics = ErrorDynamics::from_state(state, params.dt)?;
    let (upper, lower) = build_f2(&build_s(state), qd_upper, qd_lower)?;
    let blocks = vec![
        build_f1(&dynamics),
        upper,
        lower,
        build_f3(params.beta_tilde, params.delta, n)?,
        build_f4_beta_positive(params.eps_beta, n)?,
        build_gain_nonnegative(n),
    ];
    assemble_problem(blocks, n)
}

impl SdpProblem {
    pub fn n_vars(&self) -> usize {
        self.layout.len()
    }

    /// Block-diagonal `F(x)`.
    pub fn evaluate(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let total: usize = self.blocks.iter().map(LmiBlock::size).sum();
        let mut out = DMatrix::zeros(total, total);
        let mut off = 0;
        for b in &self.blocks {
            let s = b.size();
            out.view_mut((off, off), (s, s)).copy_from(&b.evaluate(x));
            off += s;
        }
        out
    }

    /// Writes the problem in SDPA sparse format.
    ///
    /// SDPA reads `min c^T x s.t. sum_i F_i x_i - F_0 >= 0`, so the constant
    /// matrices are written negated. Entries are `mat block i j value` with
    /// 1-based indices, upper triangle only; `mat = 0` is the constant.
    pub fn write_sdpa<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(
            w,
            "\"gain scheduling SDP: x = [lambda(1..{}), beta, gamma]\"",
            self.layout.n_gains
        )?;
        writeln!(w, "{} = mDIM", self.n_vars())?;
        writeln!(w, "{} = nBLOCK", self.blocks.len())?;
        let sizes: Vec<String> = self.blocks.iter().map(|b| b.size().to_string()).collect();
        writeln!(w, "{} = bLOCKsTRUCT", sizes.join(" "))?;
        let c: Vec<String> = self.c.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", c.join(" "))?;
        let mut emit = |mat: usize, blk: usize, m: &DMatrix<f64>, sign: f64| -> io::Result<()> {
            for j in 0..m.ncols() {
                for i in 0..=j {
                    let v = m[(i, j)];
                    if v != 0.0 {
                        writeln!(w, "{mat} {blk} {} {} {:.17e}", i + 1, j + 1, sign * v)?;
                    }
                }
            }
            Ok(())
        };
        for (b_idx, b) in self.blocks.iter().enumerate() {
            emit(0, b_idx + 1, &b.constant, -1.0)?;
        }
        for var in 0..self.n_vars() {
            for (b_idx, b) in self.blocks.iter().enumerate() {
                for (v, m) in &b.coeffs {
                    if *v == var {
                        emit(var + 1, b_idx + 1, m, 1.0)?;
                    }
                }
            }
        }
        Ok(())
    }
}

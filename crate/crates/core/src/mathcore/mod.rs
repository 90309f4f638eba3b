//! Algebra of the transportation and Birkhoff polytopes.
//!
//! Plans come in three flavours: a [`TransportPlan`] with arbitrary positive
//! marginals, its margin-free [`RowStochasticMatrix`] carrier, and the
//! [`DoublyStochasticMatrix`] a circuit emits. The functions here convert
//! between them and recover valid matrices from sampled frequencies.

pub mod io;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::Matrix;

/// Tolerance for invariants that hold in exact arithmetic.
pub const EXACT_TOL: f64 = 1e-9;
/// Tolerance for marginals of iteratively solved plans.
pub const PLAN_TOL: f64 = 1e-6;

/// Strictly positive weight vector over `d` entities.
#[derive(Debug, Clone, PartialEq)]
pub struct QuasiDistribution(Vec<f64>);

impl QuasiDistribution {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return invalid("distribution must have at least one entry");
        }
        if let Some((i, w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !(w.is_finite() && **w > 0.0))
        {
            return invalid(format!("weight {i} is {w}; all weights must be strictly positive"));
        }
        Ok(Self(weights))
    }

    /// Like [`new`](Self::new) but additionally requires unit mass.
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        let q = Self::new(weights)?;
        if (q.total() - 1.0).abs() > EXACT_TOL {
            return invalid(format!("distribution sums to {}, expected 1", q.total()));
        }
        Ok(q)
    }

    pub fn uniform(d: usize) -> Self {
        Self(vec![1.0 / d as f64; d])
    }

    pub fn ones(d: usize) -> Self {
        Self(vec![1.0; d])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Non-negative square cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix(Matrix);

impl CostMatrix {
    pub fn new(entries: Matrix) -> Result<Self> {
        check_square(&entries)?;
        if entries.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return invalid("cost entries must be finite and non-negative");
        }
        Ok(Self(entries))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }
}

/// Non-negative plan together with its declared marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    plan: Matrix,
    mu: QuasiDistribution,
    nu: QuasiDistribution,
}

impl TransportPlan {
    /// Validates that `plan` has marginals `mu` and `nu` within [`PLAN_TOL`].
    pub fn new(plan: Matrix, mu: QuasiDistribution, nu: QuasiDistribution) -> Result<Self> {
        check_square(&plan)?;
        let d = plan.nrows();
        expect_dim(d, mu.len())?;
        expect_dim(d, nu.len())?;
        check_nonnegative(&plan)?;
        let rows = row_sums(&plan);
        let cols = col_sums(&plan);
        let row_err = max_abs_diff(&rows, mu.as_slice());
        let col_err = max_abs_diff(&cols, nu.as_slice());
        if row_err > PLAN_TOL || col_err > PLAN_TOL {
            return invalid(format!(
                "plan marginals deviate from declared ones (rows {row_err:.3e}, cols {col_err:.3e})"
            ));
        }
        Ok(Self { plan, mu, nu })
    }

    /// Builds a plan whose marginals are read off the matrix itself.
    pub fn from_matrix(plan: Matrix) -> Result<Self> {
        check_square(&plan)?;
        check_nonnegative(&plan)?;
        let mu = QuasiDistribution::new(row_sums(&plan))?;
        let nu = QuasiDistribution::new(col_sums(&plan))?;
        Ok(Self { plan, mu, nu })
    }

    pub fn dim(&self) -> usize {
        self.plan.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.plan
    }

    pub fn mu(&self) -> &QuasiDistribution {
        &self.mu
    }

    pub fn nu(&self) -> &QuasiDistribution {
        &self.nu
    }

    pub fn into_matrix(self) -> Matrix {
        self.plan
    }
}

/// Non-negative matrix with unit row sums.
#[derive(Debug, Clone, PartialEq)]
pub struct RowStochasticMatrix(Matrix);

impl RowStochasticMatrix {
    pub fn new(entries: Matrix) -> Result<Self> {
        check_square(&entries)?;
        check_nonnegative(&entries)?;
        let err = row_sums(&entries)
            .iter()
            .map(|s| (s - 1.0).abs())
            .fold(0.0, f64::max);
        if err > EXACT_TOL {
            return invalid(format!("rows do not sum to 1 (max deviation {err:.3e})"));
        }
        Ok(Self(entries))
    }

    pub fn identity(d: usize) -> Self {
        Self(Matrix::identity(d, d))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

/// Non-negative matrix with unit row and column sums.
#[derive(Debug, Clone, PartialEq)]
pub struct DoublyStochasticMatrix(Matrix);

impl DoublyStochasticMatrix {
    pub fn new(entries: Matrix) -> Result<Self> {
        check_square(&entries)?;
        check_nonnegative(&entries)?;
        let err = dsm_residual(&entries);
        if err > EXACT_TOL {
            return invalid(format!(
                "rows/columns do not sum to 1 (max deviation {err:.3e})"
            ));
        }
        Ok(Self(entries))
    }

    pub fn identity(d: usize) -> Self {
        Self(Matrix::identity(d, d))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    /// Every DSM is row-stochastic.
    pub fn to_row_stochastic(&self) -> RowStochasticMatrix {
        RowStochasticMatrix(self.0.clone())
    }
}

/// Shot counts indexed by (row, column) outcome.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyMatrix {
    d: usize,
    counts: Vec<u64>,
    total_shots: u64,
}

impl FrequencyMatrix {
    /// `counts` is row-major of length `d * d`.
    pub fn new(d: usize, counts: Vec<u64>) -> Result<Self> {
        expect_dim(d * d, counts.len())?;
        let total_shots: u64 = counts.iter().sum();
        if total_shots == 0 {
            return invalid("frequency matrix needs at least one shot");
        }
        Ok(Self {
            d,
            counts,
            total_shots,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn total_shots(&self) -> u64 {
        self.total_shots
    }

    pub fn count(&self, row: usize, col: usize) -> u64 {
        self.counts[row * self.d + col]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn row_total(&self, row: usize) -> u64 {
        self.counts[row * self.d..(row + 1) * self.d].iter().sum()
    }

    /// Relative frequencies `F`, total mass 1.
    pub fn relative(&self) -> Matrix {
        let n = self.total_shots as f64;
        Matrix::from_fn(self.d, self.d, |i, j| self.count(i, j) as f64 / n)
    }
}

/// `|U_ij|^2` of a unitary.
pub fn unistochastic(u: &DMatrix<Complex64>) -> Result<DoublyStochasticMatrix> {
    if u.nrows() != u.ncols() {
        return invalid(format!("unitary must be square, got {}x{}", u.nrows(), u.ncols()));
    }
    let residual = unitarity_residual(u);
    if residual > 1e-6 {
        return Err(Error::NotUnitary { residual });
    }
    DoublyStochasticMatrix::new(u.map(|z| z.norm_sqr()))
}

/// Max-norm of `U†U − I`.
pub fn unitarity_residual(u: &DMatrix<Complex64>) -> f64 {
    let gram = u.adjoint() * u;
    let n = u.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - Complex64::new(target, 0.0)).norm());
        }
    }
    worst
}

/// `D_μ⁻¹ T`: divide each row by its mass.
pub fn normalize_rows(plan: &TransportPlan) -> Result<RowStochasticMatrix> {
    let m = plan.matrix();
    let sums = row_sums(m);
    if let Some(i) = sums.iter().position(|s| *s <= 0.0) {
        return invalid(format!("row {i} of the plan has no mass"));
    }
    let mut out = m.clone();
    for (i, s) in sums.iter().enumerate() {
        out.row_mut(i).unscale_mut(*s);
    }
    Ok(RowStochasticMatrix(out))
}

/// `D_μ T̂`: rescale a row-stochastic pattern to the source marginal `mu`.
pub fn rescale_rows(pattern: &RowStochasticMatrix, mu: &QuasiDistribution) -> Result<TransportPlan> {
    expect_dim(pattern.dim(), mu.len())?;
    let mut out = pattern.matrix().clone();
    for (i, w) in mu.as_slice().iter().enumerate() {
        out.row_mut(i).scale_mut(*w);
    }
    let nu = QuasiDistribution(col_sums(&out));
    Ok(TransportPlan {
        plan: out,
        mu: mu.clone(),
        nu,
    })
}

/// Sum of the two top `d×d` quadrants of an order-`2d` DSM.
pub fn atop_aggregate(q: &DoublyStochasticMatrix) -> Result<RowStochasticMatrix> {
    half_aggregate(q.matrix(), 0).map(RowStochasticMatrix)
}

/// Sum of the two bottom quadrants; the counterpart of [`atop_aggregate`].
pub fn bottom_aggregate(q: &DoublyStochasticMatrix) -> Result<RowStochasticMatrix> {
    half_aggregate(q.matrix(), 1).map(RowStochasticMatrix)
}

fn half_aggregate(q: &Matrix, half: usize) -> Result<Matrix> {
    let n = q.nrows();
    if n % 2 != 0 {
        return invalid(format!("aggregation needs an even order, got {n}"));
    }
    let d = n / 2;
    let r0 = half * d;
    Ok(Matrix::from_fn(d, d, |i, j| q[(r0 + i, j)] + q[(r0 + i, d + j)]))
}

/// KL projection onto row-stochastic matrices: `diag(F·1)⁻¹ F`.
pub fn kl_project_rowstochastic(freq: &FrequencyMatrix) -> Result<RowStochasticMatrix> {
    let d = freq.dim();
    let mut out = Matrix::zeros(d, d);
    for i in 0..d {
        let total = freq.row_total(i);
        if total == 0 {
            return Err(Error::EmptyRow {
                row: i,
                d,
                min_shots: min_shots(d, 0.99).unwrap_or(u64::MAX),
            });
        }
        for j in 0..d {
            out[(i, j)] = freq.count(i, j) as f64 / total as f64;
        }
    }
    Ok(RowStochasticMatrix(out))
}

const BIRKHOFF_STEP_TOL: f64 = 1e-10;
const BIRKHOFF_MAX_SWEEPS: usize = 10_000;

/// Frobenius-nearest DSM to a non-negative matrix, by Dykstra's alternating
/// projections between the affine set of unit row and column sums and the
/// non-negative orthant.
pub fn birkhoff_project(m: &Matrix) -> Result<DoublyStochasticMatrix> {
    check_square(m)?;
    if m.iter().any(|v| !v.is_finite()) {
        return invalid("matrix entries must be finite");
    }
    let d = m.nrows();
    let mut x = m.clone();
    let mut p = Matrix::zeros(d, d);
    let mut q = Matrix::zeros(d, d);
    let mut residual = f64::INFINITY;
    for _ in 0..BIRKHOFF_MAX_SWEEPS {
        let y = project_unit_margins(&(&x + &p));
        p = &x + &p - &y;
        let shifted = &y + &q;
        let next = shifted.map(|v| v.max(0.0));
        q = shifted - &next;
        let step = (&next - &x).amax();
        x = next;
        residual = dsm_residual(&x);
        if step < BIRKHOFF_STEP_TOL && residual < BIRKHOFF_STEP_TOL {
            return DoublyStochasticMatrix::new(x);
        }
    }
    Err(Error::NotConverged {
        iterations: BIRKHOFF_MAX_SWEEPS,
        residual,
    })
}

/// Orthogonal projection onto `{X : X1 = 1, Xᵀ1 = 1}`.
fn project_unit_margins(x: &Matrix) -> Matrix {
    let d = x.nrows() as f64;
    let r: Vec<f64> = row_sums(x).iter().map(|s| s - 1.0).collect();
    let c: Vec<f64> = col_sums(x).iter().map(|s| s - 1.0).collect();
    let s: f64 = x.sum() - d;
    Matrix::from_fn(x.nrows(), x.ncols(), |i, j| {
        x[(i, j)] - r[i] / d - c[j] / d + s / (d * d)
    })
}

/// Coupon-collector shot count `⌈d ln(d / (1 − p))⌉`.
pub fn min_shots(d: usize, p: f64) -> Result<u64> {
    if d == 0 {
        return invalid("d must be at least 1");
    }
    if !(p > 0.0 && p < 1.0) {
        return invalid(format!("probability must lie in (0, 1), got {p}"));
    }
    let d = d as f64;
    Ok((d * (d / (1.0 - p)).ln()).ceil() as u64)
}

pub fn row_sums(m: &Matrix) -> Vec<f64> {
    m.row_iter().map(|r| r.sum()).collect()
}

pub fn col_sums(m: &Matrix) -> Vec<f64> {
    m.column_iter().map(|c| c.sum()).collect()
}

/// Largest deviation of any row or column sum from 1.
pub fn dsm_residual(m: &Matrix) -> f64 {
    row_sums(m)
        .iter()
        .chain(col_sums(m).iter())
        .map(|s| (s - 1.0).abs())
        .fold(0.0, f64::max)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn check_square(m: &Matrix) -> Result<()> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return invalid(format!("expected a non-empty square matrix, got {}x{}", m.nrows(), m.ncols()));
    }
    Ok(())
}

fn check_nonnegative(m: &Matrix) -> Result<()> {
    if m.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return invalid("entries must be finite and non-negative");
    }
    Ok(())
}

pub(crate) fn expect_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

//! Entropic optimal transport, centroid costs and evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mathcore::{col_sums, expect_dim, row_sums, CostMatrix, QuasiDistribution, TransportPlan};
use crate::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    pub gamma: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_tol() -> f64 {
    1e-9
}

fn default_max_iter() -> usize {
    10_000
}

impl SinkhornConfig {
    pub fn new(gamma: f64) -> Self {
        Self { gamma, tol: default_tol(), max_iter: default_max_iter() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return invalid(format!("gamma must be positive, got {}", self.gamma));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return invalid("tol must be positive and max_iter at least 1");
        }
        Ok(())
    }
}

fn col_residual(p: &Matrix, nu: &[f64]) -> f64 {
    col_sums(p).iter().zip(nu).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

struct Duals {
    f: Vec<f64>,
    g: Vec<f64>,
}

impl Duals {
    fn plan(&self, c: &Matrix, gamma: f64) -> Matrix {
        Matrix::from_fn(c.nrows(), c.ncols(), |i, j| ((self.f[i] + self.g[j] - c[(i, j)]) / gamma).exp())
    }

    /// One pair of dual updates; columns are exact afterwards, returns the row residual.
    fn sweep(&mut self, c: &Matrix, log_mu: &[f64], log_nu: &[f64], mu: &[f64], gamma: f64) -> f64 {
        let d = c.nrows();
        for i in 0..d {
            let g = &self.g;
            self.f[i] = gamma * (log_mu[i] - log_sum_exp((0..d).map(|j| (g[j] - c[(i, j)]) / gamma)));
        }
        for j in 0..d {
            let f = &self.f;
            self.g[j] = gamma * (log_nu[j] - log_sum_exp((0..d).map(|i| (f[i] - c[(i, j)]) / gamma)));
        }
        (0..d)
            .map(|i| {
                let s: f64 = (0..d).map(|j| ((self.f[i] + self.g[j] - c[(i, j)]) / gamma).exp()).sum();
                (s - mu[i]).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Row potentials that make every row sum exact for the current `g`.
    fn fit_rows(&mut self, c: &Matrix, log_mu: &[f64], gamma: f64) {
        let d = c.nrows();
        for i in 0..d {
            let g = &self.g;
            self.f[i] = gamma * (log_mu[i] - log_sum_exp((0..d).map(|j| (g[j] - c[(i, j)]) / gamma)));
        }
    }

    /// Semi-dual objective `Σ μ_i f_i(g) + Σ ν_j g_j`, concave in `g`.
    fn semi_dual(&self, mu: &[f64], nu: &[f64]) -> f64 {
        let a: f64 = self.f.iter().zip(mu).map(|(f, m)| f * m).sum();
        let b: f64 = self.g.iter().zip(nu).map(|(g, n)| g * n).sum();
        a + b
    }

    /// Armijo backtracking on the semi-dual along `dir`; false if no step is accepted.
    #[allow(clippy::too_many_arguments)]
    fn line_search(
        &mut self,
        c: &Matrix,
        log_mu: &[f64],
        mu: &[f64],
        nu: &[f64],
        gamma: f64,
        mut dir: nalgebra::DVector<f64>,
        grad: &nalgebra::DVector<f64>,
        cap: f64,
    ) -> bool {
        let largest = dir.amax();
        if largest > cap {
            dir *= cap / largest;
        }
        let slope = dir.dot(grad);
        let mut alpha = 1.0;
        for _ in 0..200 {
            let mut trial = Duals { f: self.f.clone(), g: self.g.clone() };
            for (g, step) in trial.g.iter_mut().zip(dir.iter()) {
                *g += alpha * step;
            }
            trial.fit_rows(c, log_mu, gamma);
            if self.accepts(&trial, c, mu, nu, gamma, alpha * slope) {
                *self = trial;
                return true;
            }
            alpha *= 0.5;
        }
        false
    }

    /// Accepts the full step along `dir` if it passes the line-search test.
    #[allow(clippy::too_many_arguments)]
    fn try_step(
        &mut self,
        c: &Matrix,
        log_mu: &[f64],
        mu: &[f64],
        nu: &[f64],
        gamma: f64,
        dir: &nalgebra::DVector<f64>,
        grad: &nalgebra::DVector<f64>,
        cap: f64,
    ) -> bool {
        if dir.amax() > cap || dir.dot(grad) <= 0.0 {
            return false;
        }
        let mut trial = Duals { f: self.f.clone(), g: self.g.clone() };
        for (g, step) in trial.g.iter_mut().zip(dir.iter()) {
            *g += step;
        }
        trial.fit_rows(c, log_mu, gamma);
        if self.accepts(&trial, c, mu, nu, gamma, dir.dot(grad)) {
            *self = trial;
            return true;
        }
        false
    }

    fn accepts(&self, trial: &Duals, c: &Matrix, mu: &[f64], nu: &[f64], gamma: f64, slope: f64) -> bool {
        let base = self.semi_dual(mu, nu);
        let value = trial.semi_dual(mu, nu);
        if !value.is_finite() {
            return false;
        }
        if value > base && value >= base + 1e-4 * slope {
            return true;
        }
        // Near the optimum the objective gain drops below rounding; the
        // residual still certifies progress there.
        let current = col_residual(&self.plan(c, gamma), nu);
        current < 1e-6 && col_residual(&trial.plan(c, gamma), nu) < current
    }

    /// Damped Newton ascent on the semi-dual with `g_{d−1}` fixed.
    ///
    /// Rows stay exact throughout; keeps the potentials with the smallest
    /// column residual seen and returns that residual.
    fn newton(&mut self, c: &Matrix, log_mu: &[f64], mu: &[f64], nu: &[f64], gamma: f64, steps: usize, tol: f64) -> (f64, usize) {
        let d = c.nrows();
        let k = d - 1;
        self.fit_rows(c, log_mu, gamma);
        let step_cap = 10.0 * c.max().max(gamma) + 100.0 * gamma;
        let mut best = (f64::INFINITY, self.f.clone(), self.g.clone());
        let mut used = 0;
        let mut lambda = 1e-10;
        for _ in 0..=steps {
            let p = self.plan(c, gamma);
            let cols = col_sums(&p);
            let grad: Vec<f64> = nu.iter().zip(&cols).map(|(n, s)| n - s).collect();
            let residual = grad.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            if residual < best.0 {
                best = (residual, self.f.clone(), self.g.clone());
            }
            if residual < tol || k == 0 || used == steps {
                break;
            }
            used += 1;
            // Negated Hessian: (diag(colsum) − Σ_i P_i P_iᵀ / μ_i) / γ.
            let mut m = Matrix::zeros(k, k);
            for a in 0..k {
                m[(a, a)] = cols[a];
                for b in 0..k {
                    let s: f64 = (0..d).map(|i| p[(i, a)] * p[(i, b)] / mu[i]).sum();
                    m[(a, b)] -= s;
                }
            }
            m /= gamma;
            let rhs = nalgebra::DVector::from_column_slice(&grad[..k]);
            let scale = m.trace().abs().max(f64::MIN_POSITIVE) / k as f64;
            // Levenberg-Marquardt damping: a rejected step raises the ridge,
            // which suppresses nearly flat directions of the Hessian.
            let mut moved = false;
            while lambda < 1e3 {
                let shifted = &m + Matrix::identity(k, k) * (lambda * scale);
                let dir = shifted.cholesky().map(|ch| ch.solve(&rhs));
                if let Some(dir) = dir.filter(|v| v.iter().all(|x| x.is_finite())) {
                    if self.try_step(c, log_mu, mu, nu, gamma, &dir, &rhs, step_cap) {
                        lambda = (lambda / 4.0).max(1e-14);
                        moved = true;
                        break;
                    }
                }
                lambda *= 4.0;
            }
            if !moved {
                // Along a decoupled block the semi-dual is nearly linear, so a
                // long gradient step with backtracking finds the reconnecting shift.
                lambda = 1e-6;
                let grad_dir = &rhs * (step_cap / rhs.amax());
                moved = self.line_search(c, log_mu, mu, nu, gamma, grad_dir, &rhs, step_cap);
            }
            if !moved {
                break;
            }
        }
        let (residual, f, g) = best;
        self.f = f;
        self.g = g;
        (residual, used)
    }
}

/// Entropically regularized plan `diag(u)·exp(−C/γ)·diag(v)` computed in the log domain.
///
/// Small `gamma` is reached by annealing from the cost scale, warm-starting
/// each stage from the previous potentials and finishing every stage with
/// Newton steps on the semi-dual.
pub fn sinkhorn(
    mu: &QuasiDistribution,
    nu: &QuasiDistribution,
    cost: &CostMatrix,
    cfg: &SinkhornConfig,
) -> Result<TransportPlan> {
    cfg.validate()?;
    let d = cost.dim();
    expect_dim(d, mu.len())?;
    expect_dim(d, nu.len())?;
    if (mu.total() - nu.total()).abs() > 1e-9 {
        return invalid(format!("mass mismatch: {} vs {}", mu.total(), nu.total()));
    }
    let c = cost.matrix();
    let log_mu: Vec<f64> = mu.as_slice().iter().map(|x| x.ln()).collect();
    let log_nu: Vec<f64> = nu.as_slice().iter().map(|x| x.ln()).collect();
    let mut duals = Duals { f: vec![0.0; d], g: vec![0.0; d] };

    // Path following in gamma: every stage is solved by Newton to tight
    // tolerance, warm-started from the previous stage. A stage that fails is
    // retried closer to the last solved one.
    let mut gamma = c.max().max(cfg.gamma);
    let mut solved: Option<f64> = None;
    let mut ratio: f64 = 0.5;
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    loop {
        let last = gamma <= cfg.gamma;
        let saved = (duals.f.clone(), duals.g.clone());
        for _ in 0..10 {
            duals.sweep(c, &log_mu, &log_nu, mu.as_slice(), gamma);
        }
        let target = if last { (1e-15 * mu.total()).min(cfg.tol) } else { 1e-10 * mu.total() };
        let budget = cfg.max_iter.saturating_sub(iterations).max(1);
        let (r, used) = duals.newton(c, &log_mu, mu.as_slice(), nu.as_slice(), gamma, budget.min(100), target);
        iterations += 10 + used;
        let ok = if last { r < cfg.tol } else { r < target };
        if last && (ok || iterations >= cfg.max_iter) {
            residual = r;
            break;
        }
        if iterations >= cfg.max_iter {
            break;
        }
        if ok {
            solved = Some(gamma);
            ratio = (ratio * ratio).max(0.5);
            gamma = (gamma * ratio).max(cfg.gamma);
        } else if let Some(prev) = solved {
            (duals.f, duals.g) = saved;
            ratio = ratio.sqrt();
            if ratio > 0.999 {
                residual = r;
                break;
            }
            gamma = (prev * ratio).max(cfg.gamma);
        } else {
            // The starting stage is well conditioned; keep iterating on it.
            continue;
        }
    }
    if !(residual < cfg.tol) {
        return Err(Error::NotConverged { iterations, residual });
    }
    let plan = duals.plan(c, cfg.gamma);
    TransportPlan::new(plan, mu.clone(), nu.clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Euclidean,
    Cosine,
}

/// Pairwise distances between centroids (rows of `centroids`).
pub fn cost_from_centroids(centroids: &Matrix, metric: Metric) -> Result<CostMatrix> {
    let k = centroids.nrows();
    if k == 0 {
        return invalid("need at least one centroid");
    }
    let norms: Vec<f64> = centroids.row_iter().map(|r| r.norm()).collect();
    if metric == Metric::Cosine {
        if let Some(i) = norms.iter().position(|n| *n == 0.0) {
            return invalid(format!("centroid {i} is the zero vector; cosine distance undefined"));
        }
    }
    let mut c = Matrix::zeros(k, k);
    for i in 0..k {
        for j in (i + 1)..k {
            let v = match metric {
                Metric::Euclidean => (centroids.row(i) - centroids.row(j)).norm(),
                Metric::Cosine => {
                    let cos = centroids.row(i).dot(&centroids.row(j)) / (norms[i] * norms[j]);
                    (1.0 - cos).max(0.0)
                }
            };
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    CostMatrix::new(c)
}

/// Per-sample comparison of a predicted plan with the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub sae: f64,
    pub rel_frob: f64,
    /// Plain Frobenius distance `‖pred − truth‖_F`.
    pub frob: f64,
    pub l2: f64,
    /// Missing when the true column marginal has zero variance.
    pub r2: Option<f64>,
}

pub fn evaluate_pair(pred: &Matrix, truth: &Matrix) -> Result<Metrics> {
    if pred.shape() != truth.shape() {
        return Err(Error::DimensionMismatch { expected: truth.nrows(), found: pred.nrows() });
    }
    let diff = pred - truth;
    let sae = diff.iter().map(|x| x.abs()).sum();
    let frob = diff.norm();
    let pred_norm = pred.norm();
    let rel_frob = if pred_norm > 0.0 { frob / pred_norm } else { f64::INFINITY };
    let nu_hat = col_sums(pred);
    let nu = col_sums(truth);
    let l2 = nu_hat.iter().zip(&nu).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    Ok(Metrics { sae, rel_frob, frob, l2, r2: r_squared(&nu_hat, &nu) })
}

fn r_squared(pred: &[f64], truth: &[f64]) -> Option<f64> {
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    if ss_tot <= 1e-300 {
        return None;
    }
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    Some(1.0 - ss_res / ss_tot)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum R2Pooling {
    #[default]
    PerSample,
    Pooled,
}

/// Mean metrics over a test set together with the per-sample values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sae: f64,
    pub rel_frob: f64,
    pub frob: f64,
    pub l2: f64,
    pub r2: Option<f64>,
    pub per_sample: Vec<Metrics>,
}

/// Evaluates `(prediction, truth)` pairs and averages the metrics.
pub fn evaluate_batch(pairs: &[(Matrix, Matrix)], pooling: R2Pooling) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return invalid("cannot evaluate an empty test set");
    }
    let per_sample = pairs.iter().map(|(p, t)| evaluate_pair(p, t)).collect::<Result<Vec<_>>>()?;
    let n = per_sample.len() as f64;
    let mean = |f: fn(&Metrics) -> f64| per_sample.iter().map(f).sum::<f64>() / n;
    let r2 = match pooling {
        R2Pooling::PerSample => {
            let present: Vec<f64> = per_sample.iter().filter_map(|m| m.r2).collect();
            (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
        }
        R2Pooling::Pooled => {
            let (pred, truth): (Vec<f64>, Vec<f64>) = pairs
                .iter()
                .flat_map(|(p, t)| col_sums(p).into_iter().zip(col_sums(t)))
                .unzip();
            r_squared(&pred, &truth)
        }
    };
    Ok(MetricsReport {
        sae: mean(|m| m.sae),
        rel_frob: mean(|m| m.rel_frob),
        frob: mean(|m| m.frob),
        l2: mean(|m| m.l2),
        r2,
        per_sample,
    })
}

/// Transport cost `Σ_ij Q_ij C_ij`.
pub fn plan_cost(plan: &Matrix, cost: &CostMatrix) -> f64 {
    plan.component_mul(cost.matrix()).sum()
}

/// Largest deviation of the plan's row and column sums from the given marginals.
pub fn marginal_residual(plan: &Matrix, mu: &[f64], nu: &[f64]) -> f64 {
    let r = row_sums(plan).iter().zip(mu).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let c = col_sums(plan).iter().zip(nu).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    r.max(c)
}

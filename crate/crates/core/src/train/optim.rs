//! Derivative-free minimizers with a shared evaluation budget.
//!
//! Every objective call goes through [`Budget`], which records the trace,
//! keeps the best point seen, and aborts on non-finite values.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    NelderMead,
    Spsa,
    BfgsNumeric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub eval: usize,
    pub value: f64,
    /// Best value up to and including this evaluation.
    pub best: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shots: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub trace: Vec<TraceEntry>,
}

/// Why an optimizer loop stopped early.
enum Halt {
    Budget,
    Failed(Error),
}

impl From<Error> for Halt {
    fn from(e: Error) -> Self {
        Halt::Failed(e)
    }
}

type Step<T> = std::result::Result<T, Halt>;

struct Budget<F> {
    f: F,
    max_evals: usize,
    trace: Vec<TraceEntry>,
    best: Option<(f64, Vec<f64>)>,
}

impl<F: FnMut(&[f64]) -> Result<f64>> Budget<F> {
    fn eval(&mut self, x: &[f64]) -> Step<f64> {
        if self.trace.len() >= self.max_evals {
            return Err(Halt::Budget);
        }
        let value = (self.f)(x)?;
        if !value.is_finite() {
            return Err(Halt::Failed(Error::NonFinite { value, theta: x.to_vec() }));
        }
        let improved = self.best.as_ref().is_none_or(|(b, _)| value < *b);
        if improved {
            self.best = Some((value, x.to_vec()));
        }
        let best = self.best.as_ref().map(|b| b.0).unwrap_or(value);
        self.trace.push(TraceEntry { eval: self.trace.len(), value, best, shots: None });
        Ok(value)
    }
}

/// Initial simplex edge.
const NM_STEP: f64 = 0.1;

/// Minimizes `f` from `x0` with at most `max_evals` calls; returns the best
/// point seen. Running out of budget is not an error.
pub fn minimize<F>(optimizer: Optimizer, x0: &[f64], max_evals: usize, seed: u64, f: F) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if max_evals == 0 {
        return invalid("max_evals must be at least 1");
    }
    if x0.is_empty() {
        return invalid("nothing to optimize: empty parameter vector");
    }
    let mut budget = Budget { f, max_evals, trace: Vec::new(), best: None };
    let outcome = match optimizer {
        Optimizer::NelderMead => nelder_mead(&mut budget, x0),
        Optimizer::Spsa => spsa(&mut budget, x0, seed),
        Optimizer::BfgsNumeric => bfgs(&mut budget, x0),
    };
    if let Err(Halt::Failed(e)) = outcome {
        return Err(e);
    }
    let (value, x) = budget.best.expect("at least one evaluation");
    Ok(Minimum { x, value, trace: budget.trace })
}

fn axpy(a: f64, x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(xi, yi)| a * xi + yi).collect()
}

/// Adaptive Nelder-Mead (dimension-dependent coefficients), restarted around
/// the best vertex until a restart no longer improves.
fn nelder_mead<F: FnMut(&[f64]) -> Result<f64>>(b: &mut Budget<F>, x0: &[f64]) -> Step<()> {
    let n = x0.len();
    let nf = n as f64;
    let (alpha, gamma, rho, sigma) = (1.0, 1.0 + 2.0 / nf, 0.75 - 1.0 / (2.0 * nf), 1.0 - 1.0 / nf);
    let (alpha, gamma, rho, sigma) = if n == 1 { (1.0, 2.0, 0.5, 0.5) } else { (alpha, gamma, rho, sigma) };
    let mut start = x0.to_vec();
    let mut previous = f64::INFINITY;
    loop {
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        simplex.push((start.clone(), b.eval(&start)?));
        for i in 0..n {
            let mut v = start.clone();
            v[i] += NM_STEP;
            let fv = b.eval(&v)?;
            simplex.push((v, fv));
        }
        loop {
            simplex.sort_by(|a, c| a.1.total_cmp(&c.1));
            let spread = simplex[n].1 - simplex[0].1;
            let diameter = simplex[1..]
                .iter()
                .map(|(v, _)| v.iter().zip(&simplex[0].0).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max))
                .fold(0.0, f64::max);
            if diameter < 1e-10 || (spread <= 1e-15 * simplex[0].1.abs() && diameter < 1e-6) {
                break;
            }
            let mut centroid = vec![0.0; n];
            for (v, _) in &simplex[..n] {
                for (c, x) in centroid.iter_mut().zip(v) {
                    *c += x / nf;
                }
            }
            let worst = simplex[n].clone();
            let toward = |t: f64| -> Vec<f64> {
                centroid.iter().zip(&worst.0).map(|(c, w)| c + t * (c - w)).collect()
            };
            let xr = toward(alpha);
            let fr = b.eval(&xr)?;
            if fr < simplex[0].1 {
                let xe = toward(alpha * gamma);
                let fe = b.eval(&xe)?;
                simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else if fr < simplex[n - 1].1 {
                simplex[n] = (xr, fr);
            } else {
                let (xc, fc) = if fr < worst.1 {
                    let xc = toward(alpha * rho);
                    let fc = b.eval(&xc)?;
                    (xc, fc)
                } else {
                    let xc = toward(-rho);
                    let fc = b.eval(&xc)?;
                    (xc, fc)
                };
                if fc < fr.min(worst.1) {
                    simplex[n] = (xc, fc);
                } else {
                    let best = simplex[0].0.clone();
                    for vertex in simplex.iter_mut().skip(1) {
                        let v: Vec<f64> = best.iter().zip(&vertex.0).map(|(x, y)| x + sigma * (y - x)).collect();
                        let fv = b.eval(&v)?;
                        *vertex = (v, fv);
                    }
                }
            }
        }
        let (value, best) = b.best.clone().expect("evaluated");
        if !(value < previous - 1e-12 * previous.abs().max(1e-300)) {
            return Ok(());
        }
        previous = value;
        start = best;
    }
}

/// Simultaneous-perturbation stochastic approximation with standard gain
/// exponents. The step gain is calibrated so the first move has size 0.1;
/// a step that worsens the objective beyond its noise level is rejected and
/// halves the gain.
fn spsa<F: FnMut(&[f64]) -> Result<f64>>(b: &mut Budget<F>, x0: &[f64], seed: u64) -> Step<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = x0.len();
    let (c, target) = (0.1, 0.1);
    let iterations = (b.max_evals / 3).max(1) as f64;
    let big_a = 0.1 * iterations;
    let mut x = x0.to_vec();
    let repeats = [b.eval(&x)?, b.eval(&x)?, b.eval(&x)?];
    let mean = repeats.iter().sum::<f64>() / 3.0;
    let spread = (repeats.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
    let tolerance = 2.0 * spread;
    let mut fx = mean;
    let delta = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect() };
    let mut magnitude = 0.0;
    for _ in 0..4 {
        let d = delta(&mut rng);
        let plus = b.eval(&axpy(c, &d, &x))?;
        let minus = b.eval(&axpy(-c, &d, &x))?;
        magnitude += ((plus - minus) / (2.0 * c)).abs() / 4.0;
    }
    let mut a = if magnitude > 0.0 { target * (big_a + 1.0).powf(0.602) / magnitude } else { target };
    for k in 0.. {
        let ak = a / (k as f64 + 1.0 + big_a).powf(0.602);
        let ck = c / (k as f64 + 1.0).powf(0.101);
        let d = delta(&mut rng);
        let plus = b.eval(&axpy(ck, &d, &x))?;
        let minus = b.eval(&axpy(-ck, &d, &x))?;
        let g = (plus - minus) / (2.0 * ck);
        let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi - ak * g * di).collect();
        let ft = b.eval(&trial)?;
        if ft <= fx + tolerance {
            x = trial;
            fx = ft;
        } else {
            a *= 0.5;
        }
    }
    Ok(())
}

/// Central-difference gradient with step `h`.
pub fn numeric_gradient<F>(f: &mut F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe)?;
        probe[i] = x[i] - h;
        let down = f(&probe)?;
        probe[i] = x[i];
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

const FD_STEP: f64 = 1e-5;

fn budget_gradient<F: FnMut(&[f64]) -> Result<f64>>(b: &mut Budget<F>, x: &[f64]) -> Step<Vec<f64>> {
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + FD_STEP;
        let up = b.eval(&probe)?;
        probe[i] = x[i] - FD_STEP;
        let down = b.eval(&probe)?;
        probe[i] = x[i];
        grad.push((up - down) / (2.0 * FD_STEP));
    }
    Ok(grad)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// BFGS on central-difference gradients with Armijo backtracking.
fn bfgs<F: FnMut(&[f64]) -> Result<f64>>(b: &mut Budget<F>, x0: &[f64]) -> Step<()> {
    let n = x0.len();
    let identity = |scale: f64| -> Vec<Vec<f64>> {
        (0..n).map(|i| (0..n).map(|j| if i == j { scale } else { 0.0 }).collect()).collect()
    };
    let mut h = identity(1.0);
    let mut x = x0.to_vec();
    let mut fx = b.eval(&x)?;
    let mut g = budget_gradient(b, &x)?;
    let mut first = true;
    loop {
        if g.iter().all(|v| v.abs() < 1e-12) {
            return Ok(());
        }
        let mut p: Vec<f64> = h.iter().map(|row| -dot(row, &g)).collect();
        if dot(&p, &g) >= 0.0 {
            h = identity(1.0);
            p = g.iter().map(|v| -v).collect();
        }
        let slope = dot(&p, &g);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial = axpy(t, &p, &x);
            let ft = b.eval(&trial)?;
            if ft <= fx + 1e-4 * t * slope {
                accepted = Some((trial, ft));
                break;
            }
            t *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            return Ok(());
        };
        let g_new = budget_gradient(b, &x_new)?;
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, c)| a - c).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, c)| a - c).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if first {
                // Rescale the initial guess to the observed curvature.
                h = identity(sy / dot(&y, &y));
                first = false;
            }
            let hy: Vec<f64> = h.iter().map(|row| dot(row, &y)).collect();
            let yhy = dot(&y, &hy);
            let rho = 1.0 / sy;
            for i in 0..n {
                for j in 0..n {
                    h[i][j] += rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
                }
            }
        }
        x = x_new;
        fx = f_new;
        g = g_new;
    }
}

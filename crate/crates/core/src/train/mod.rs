//! Losses, circuit-parameter optimization, baselines and evaluation.

mod optim;

pub use optim::{minimize, numeric_gradient, Minimum, Optimizer, TraceEntry};

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ansatz::{param_count, AnsatzKind};
use crate::datagen::{Dataset, Sample, Task};
use crate::encoder::{predict_dsm, predict_rowstochastic, EncodingSpec, Mode, Target};
use crate::error::{invalid, Error, Result};
use crate::mathcore::{normalize_rows, rescale_rows, QuasiDistribution, RowStochasticMatrix, TransportPlan};
use crate::neucot::MlpModel;
use crate::otsolve::{evaluate_batch, sinkhorn, MetricsReport, R2Pooling, SinkhornConfig};
use crate::{parallel, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// `Σ ‖D_μ f(p) − T‖²_F`.
    Transport,
    /// `Σ ‖(D_μ f(p))ᵀ 1 − ν‖²`.
    Marginal,
    /// `Σ ‖Q(p) − Q‖²_F`.
    Dsm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Init {
    Zeros,
    Uniform { lo: f64, hi: f64 },
}

impl Init {
    /// Zeros for the simple ansatz (an identity start), a small uniform
    /// spread for the checkerboard one.
    pub fn default_for(kind: AnsatzKind) -> Self {
        match kind {
            AnsatzKind::Simple => Init::Zeros,
            AnsatzKind::Checkerboard => Init::Uniform { lo: -0.1, hi: 0.1 },
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<f64>> {
        match *self {
            Init::Zeros => Ok(vec![0.0; n]),
            Init::Uniform { lo, hi } if lo < hi && lo.is_finite() && hi.is_finite() => {
                Ok((0..n).map(|_| rng.random_range(lo..hi)).collect())
            }
            Init::Uniform { lo, hi } => invalid(format!("empty init range [{lo}, {hi})")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: Loss,
    pub optimizer: Optimizer,
    pub max_evals: usize,
    pub init: Init,
    pub mode: Mode,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(loss: Loss, kind: AnsatzKind) -> Self {
        Self {
            loss,
            optimizer: Optimizer::NelderMead,
            max_evals: 3000,
            init: Init::default_for(kind),
            mode: Mode::Exact,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_evals == 0 {
            return invalid("max_evals must be at least 1");
        }
        if let Mode::Shots(0) = self.mode {
            return invalid("shot count must be at least 1");
        }
        Ok(())
    }
}

/// SplitMix64 finalizer; derives independent stream seeds.
fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream(seed: u64, eval: u64, sample: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(seed, eval), sample))
}

/// Batch loss of a circuit model; samples sharing a context share one
/// exact simulation.
pub struct Objective<'a> {
    spec: EncodingSpec,
    loss: Loss,
    samples: &'a [Sample],
    /// Distinct contexts and the samples that carry each.
    groups: Vec<Vec<usize>>,
    seed: u64,
}

impl<'a> Objective<'a> {
    pub fn new(spec: EncodingSpec, loss: Loss, samples: &'a [Sample], seed: u64) -> Result<Self> {
        spec.validate()?;
        let needed = match loss {
            Loss::Transport | Loss::Marginal => Target::Transport,
            Loss::Dsm => Target::Dsm,
        };
        if spec.target != needed {
            return invalid(format!("{loss:?} loss needs a {needed:?} encoding"));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.mu.len() != spec.d() {
                return invalid(format!("sample {i} has d = {}, the encoding has d = {}", s.mu.len(), spec.d()));
            }
            let ok = match loss {
                Loss::Transport => s.plan.is_some(),
                Loss::Marginal => true,
                Loss::Dsm => s.dsm.is_some(),
            };
            if !ok {
                return invalid(format!("sample {i} lacks the target required by the {loss:?} loss"));
            }
        }
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for (i, s) in samples.iter().enumerate() {
            match groups.iter_mut().find(|g| samples[g[0]].context == s.context) {
                Some(g) => g.push(i),
                None => groups.push(vec![i]),
            }
        }
        Ok(Self { spec, loss, samples, groups, seed })
    }

    fn sample_loss(&self, predicted: &Matrix, s: &Sample) -> f64 {
        let d = predicted.nrows();
        let mu = s.mu.as_slice();
        match self.loss {
            Loss::Transport => {
                let t = s.plan.as_ref().expect("checked in new").matrix();
                (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| (mu[i] * predicted[(i, j)] - t[(i, j)]).powi(2)).sum()
            }
            Loss::Marginal => {
                let nu = s.nu.as_slice();
                (0..d).map(|j| ((0..d).map(|i| mu[i] * predicted[(i, j)]).sum::<f64>() - nu[j]).powi(2)).sum()
            }
            Loss::Dsm => (predicted - s.dsm.as_ref().expect("checked in new").matrix()).norm_squared(),
        }
    }

    /// Row-stochastic pattern (transport) or DSM (dsm) for one context.
    fn predict(&self, theta: &[f64], context: &[f64], rng: &mut ChaCha8Rng) -> Result<Matrix> {
        match self.spec.target {
            Target::Transport => Ok(predict_rowstochastic(&self.spec, theta, context, rng)?.into_matrix()),
            Target::Dsm => Ok(predict_dsm(&self.spec, theta, context, rng)?.into_matrix()),
        }
    }

    /// Loss at `theta`; `eval` indexes the shot-noise stream in sampling mode.
    pub fn value(&self, theta: &[f64], eval: u64) -> Result<f64> {
        let parts: Vec<f64> = match self.spec.mode {
            Mode::Exact => parallel::try_map(self.groups.len(), |g| {
                let members = &self.groups[g];
                let mut rng = stream(self.seed, eval, g as u64);
                let predicted = self.predict(theta, &self.samples[members[0]].context, &mut rng)?;
                Ok(members.iter().map(|&i| self.sample_loss(&predicted, &self.samples[i])).sum())
            })?,
            Mode::Shots(_) => parallel::try_map(self.samples.len(), |i| {
                let mut rng = stream(self.seed, eval, i as u64);
                let predicted = self.predict(theta, &self.samples[i].context, &mut rng)?;
                Ok(self.sample_loss(&predicted, &self.samples[i]))
            })?,
        };
        Ok(parts.iter().sum())
    }
}

/// `Σ ‖D_μ f(p) − T‖²_F` over `batch` (sampling mode uses stream 0).
pub fn loss_transport(spec: &EncodingSpec, theta: &[f64], batch: &[Sample]) -> Result<f64> {
    Objective::new(*spec, Loss::Transport, batch, 0)?.value(theta, 0)
}

pub fn loss_marginal(spec: &EncodingSpec, theta: &[f64], batch: &[Sample]) -> Result<f64> {
    Objective::new(*spec, Loss::Marginal, batch, 0)?.value(theta, 0)
}

pub fn loss_dsm(spec: &EncodingSpec, theta: &[f64], batch: &[Sample]) -> Result<f64> {
    Objective::new(*spec, Loss::Dsm, batch, 0)?.value(theta, 0)
}

/// Trained circuit parameters plus everything needed to reproduce them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QontotModel {
    pub spec: EncodingSpec,
    pub theta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_config: Option<TrainConfig>,
    #[serde(default)]
    pub trace: Vec<TraceEntry>,
}

#[derive(Serialize, Deserialize)]
struct QontotFile {
    kind: String,
    #[serde(flatten)]
    model: QontotModel,
}

impl QontotModel {
    pub fn untrained(spec: EncodingSpec, theta: Vec<f64>) -> Result<Self> {
        let model = Self { spec, theta, train_config: None, trace: Vec::new() };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let expected = param_count(&self.spec.ansatz);
        if self.theta.len() != expected {
            return Err(Error::DimensionMismatch { expected, found: self.theta.len() });
        }
        if self.theta.iter().any(|t| !t.is_finite()) {
            return invalid("parameters must be finite");
        }
        Ok(())
    }

    /// Lowest objective value in the trace.
    pub fn best_objective(&self) -> Option<f64> {
        self.trace.last().map(|e| e.best)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&QontotFile { kind: "qontot".into(), model: self.clone() })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: QontotFile = serde_json::from_str(text)?;
        if file.kind != "qontot" {
            return invalid(format!("expected a qontot model, found kind {:?}", file.kind));
        }
        file.model.validate()?;
        Ok(file.model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Fits circuit parameters on the whole training set; returns the best
/// parameters seen and the evaluation trace.
pub fn optimize(cfg: &TrainConfig, spec: &EncodingSpec, train: &Dataset) -> Result<QontotModel> {
    cfg.validate()?;
    if train.is_empty() {
        return invalid("training set is empty");
    }
    let task_ok = matches!((cfg.loss, train.meta.task), (Loss::Transport | Loss::Marginal, Task::Transport) | (Loss::Dsm, Task::Dsm));
    if !task_ok {
        return invalid(format!("{:?} loss does not fit a {:?} dataset", cfg.loss, train.meta.task));
    }
    let spec = spec.with_mode(cfg.mode);
    let objective = Objective::new(spec, cfg.loss, &train.samples, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let theta0 = cfg.init.draw(param_count(&spec.ansatz), &mut rng)?;
    let mut eval = 0u64;
    let result = minimize(cfg.optimizer, &theta0, cfg.max_evals, mix(cfg.seed, u64::MAX), |theta: &[f64]| {
        let v = objective.value(theta, eval);
        eval += 1;
        v
    })?;
    // Shots spent per prediction in every evaluation.
    let shots = match cfg.mode {
        Mode::Exact => None,
        Mode::Shots(s) => Some(s),
    };
    let trace = result.trace.into_iter().map(|e| TraceEntry { shots, ..e }).collect();
    Ok(QontotModel { spec, theta: result.x, train_config: Some(*cfg), trace })
}

/// How the context-free average baseline pools the training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AverageMode {
    /// One Sinkhorn plan between the mean source and mean target marginals.
    #[default]
    MeanMarginals,
    /// The mean of the training plans.
    MeanOfPlans,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Predictor {
    Qontot(QontotModel),
    Identity,
    /// A fixed row pattern, rescaled to each queried `μ`.
    Average(RowStochasticMatrix),
    Neucot(MlpModel),
}

pub fn baseline_identity() -> Predictor {
    Predictor::Identity
}

pub fn baseline_average(train: &Dataset, mode: AverageMode) -> Result<Predictor> {
    if train.is_empty() {
        return invalid("cannot average an empty training set");
    }
    if train.meta.task != Task::Transport {
        return invalid("the average baseline needs a transport dataset");
    }
    let d = train.meta.d;
    let n = train.len() as f64;
    let plan = match mode {
        AverageMode::MeanMarginals => {
            let (Some(cost), Some(gamma)) = (&train.meta.cost, train.meta.gamma) else {
                return invalid("dataset carries no cost matrix or gamma for the average baseline");
            };
            let mean = |pick: fn(&Sample) -> &QuasiDistribution| {
                let mut acc = vec![0.0; d];
                for s in &train.samples {
                    for (a, v) in acc.iter_mut().zip(pick(s).as_slice()) {
                        *a += v / n;
                    }
                }
                let total: f64 = acc.iter().sum();
                QuasiDistribution::new(acc.into_iter().map(|v| v / total).collect())
            };
            let (mu, nu) = (mean(|s| &s.mu)?, mean(|s| &s.nu)?);
            sinkhorn(&mu, &nu, cost, &SinkhornConfig::new(gamma))?
        }
        AverageMode::MeanOfPlans => {
            let mut acc = Matrix::zeros(d, d);
            for (i, s) in train.samples.iter().enumerate() {
                let Some(p) = &s.plan else {
                    return invalid(format!("sample {i} has no plan"));
                };
                acc += p.matrix() / n;
            }
            TransportPlan::from_matrix(acc)?
        }
    };
    Ok(Predictor::Average(normalize_rows(&plan)?))
}

impl Predictor {
    pub fn name(&self) -> &'static str {
        match self {
            Predictor::Qontot(_) => "qontot",
            Predictor::Identity => "identity",
            Predictor::Average(_) => "average",
            Predictor::Neucot(_) => "neucot",
        }
    }

    fn pattern<R: Rng + ?Sized>(&self, context: &[f64], d: usize, rng: &mut R) -> Result<RowStochasticMatrix> {
        match self {
            Predictor::Qontot(m) => predict_rowstochastic(&m.spec, &m.theta, context, rng),
            Predictor::Identity => Ok(RowStochasticMatrix::identity(d)),
            Predictor::Average(p) => Ok(p.clone()),
            Predictor::Neucot(m) => m.predict(context),
        }
    }

    /// The plan `D_μ T̂(p)`; its row marginal is `μ` exactly.
    pub fn predict_plan<R: Rng + ?Sized>(&self, context: &[f64], mu: &QuasiDistribution, rng: &mut R) -> Result<TransportPlan> {
        let pattern = self.pattern(context, mu.len(), rng)?;
        if pattern.dim() != mu.len() {
            return Err(Error::DimensionMismatch { expected: pattern.dim(), found: mu.len() });
        }
        rescale_rows(&pattern, mu)
    }

    /// The matrix compared with a sample's target: a plan for transport
    /// data, the predicted DSM for DSM data.
    pub fn predict_target<R: Rng + ?Sized>(&self, s: &Sample, task: Task, rng: &mut R) -> Result<Matrix> {
        match task {
            Task::Transport => Ok(self.predict_plan(&s.context, &s.mu, rng)?.into_matrix()),
            Task::Dsm => match self {
                Predictor::Qontot(m) => Ok(predict_dsm(&m.spec, &m.theta, &s.context, rng)?.into_matrix()),
                Predictor::Identity => Ok(Matrix::identity(s.mu.len(), s.mu.len())),
                Predictor::Average(_) => invalid("the average baseline only predicts transport plans"),
                Predictor::Neucot(m) => Ok(m.predict(&s.context)?.into_matrix()),
            },
        }
    }
}

/// Per-sample metrics averaged over `test`; sampling models draw from a
/// stream derived from `seed` and the sample index.
pub fn evaluate(predictor: &Predictor, test: &Dataset, seed: u64) -> Result<MetricsReport> {
    if let Predictor::Qontot(m) = predictor {
        let needed = match test.meta.task {
            Task::Transport => Target::Transport,
            Task::Dsm => Target::Dsm,
        };
        if m.spec.target != needed {
            return invalid(format!("model targets {:?}, dataset is {:?}", m.spec.target, test.meta.task));
        }
    }
    let pairs = parallel::try_map(test.len(), |i| {
        let s = &test.samples[i];
        let mut rng = stream(seed, 0, i as u64);
        let pred = predictor.predict_target(s, test.meta.task, &mut rng)?;
        let truth = s.target().ok_or_else(|| Error::Invalid(format!("sample {i} has no target")))?;
        Ok((pred, truth.clone()))
    })?;
    evaluate_batch(&pairs, R2Pooling::PerSample)
}

//! Feed-forward baseline whose row-softmax output is always row-stochastic.
//!
//! `context → h₁ → h₂ → d²` with ReLU and dropout on the hidden layers; the
//! logits are reshaped to `d × d` and each row goes through a softmax.
//! Gradients are derived by hand.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{Dataset, Sample, Task};
use crate::error::{invalid, Error, Result};
use crate::mathcore::io::{matrix_from_rows, matrix_to_rows};
use crate::mathcore::{col_sums, RowStochasticMatrix};
use crate::Matrix;

/// Width ladder for the hidden layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Size {
    Xs,
    S,
    #[default]
    M,
    L,
}

impl Size {
    pub fn widths(self) -> [usize; 2] {
        match self {
            Size::Xs => [16, 32],
            Size::S => [32, 64],
            Size::M => [64, 128],
            Size::L => [512, 1024],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub context_dim: usize,
    pub d: usize,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    /// Feed the context into the last affine map alongside the last hidden layer.
    pub residual: bool,
}

impl Architecture {
    pub fn new(context_dim: usize, d: usize, size: Size) -> Self {
        Self { context_dim, d, hidden: size.widths().to_vec(), dropout: 0.4, residual: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.context_dim == 0 || self.d == 0 {
            return invalid("context_dim and d must be positive");
        }
        if self.hidden.contains(&0) {
            return invalid("hidden widths must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return invalid(format!("dropout rate must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    /// `(inputs, outputs)` of every affine map.
    fn shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        let mut input = self.context_dim;
        for &h in &self.hidden {
            shapes.push((input, h));
            input = h;
        }
        if self.residual {
            input += self.context_dim;
        }
        shapes.push((input, self.d * self.d));
        shapes
    }
}

/// Affine map `W x + b` with `W` stored `outputs × inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub arch: Architecture,
    pub layers: Vec<Layer>,
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    kind: String,
    architecture: Architecture,
    layers: Vec<LayerFile>,
}

/// Activations kept for the backward pass of one sample.
struct Tape {
    /// Input to every affine map.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Vec<f64>>,
    /// Inverted-dropout multipliers of the hidden layers.
    masks: Vec<Vec<f64>>,
    softmax: Matrix,
}

fn affine(layer: &Layer, x: &[f64]) -> Vec<f64> {
    (0..layer.weights.nrows())
        .map(|o| layer.bias[o] + (0..x.len()).map(|i| layer.weights[(o, i)] * x[i]).sum::<f64>())
        .collect()
}

fn row_softmax(logits: &[f64], d: usize) -> Matrix {
    let mut s = Matrix::zeros(d, d);
    for i in 0..d {
        let row = &logits[i * d..(i + 1) * d];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        for j in 0..d {
            s[(i, j)] = exps[j] / total;
        }
    }
    s
}

impl MlpModel {
    /// Uniform He initialization.
    pub fn new<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let layers = arch
            .shapes()
            .into_iter()
            .map(|(input, output)| {
                let bound = (6.0 / input as f64).sqrt();
                Layer {
                    weights: Matrix::from_fn(output, input, |_, _| rng.random_range(-bound..bound)),
                    bias: vec![0.0; output],
                }
            })
            .collect();
        Ok(Self { arch, layers })
    }

    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let layers = arch
            .shapes()
            .into_iter()
            .map(|(input, output)| Layer { weights: Matrix::zeros(output, input), bias: vec![0.0; output] })
            .collect();
        Ok(Self { arch, layers })
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// All weights flattened layer by layer: weights row-major, then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            for o in 0..l.weights.nrows() {
                out.extend(l.weights.row(o).iter());
            }
            out.extend(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::DimensionMismatch { expected: self.param_count(), found: flat.len() });
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            for o in 0..l.weights.nrows() {
                for i in 0..l.weights.ncols() {
                    l.weights[(o, i)] = it.next().expect("length checked");
                }
            }
            for b in &mut l.bias {
                *b = it.next().expect("length checked");
            }
        }
        Ok(())
    }

    fn check_context(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.arch.context_dim {
            return Err(Error::DimensionMismatch { expected: self.arch.context_dim, found: p.len() });
        }
        Ok(())
    }

    /// Dropout is drawn from `rng` when it is given; `None` is inference mode.
    fn run<'r>(&self, p: &[f64], mut rng: Option<&mut (dyn rand::RngCore + 'r)>) -> Tape {
        let hidden = self.arch.hidden.len();
        let keep = 1.0 - self.arch.dropout;
        let mut tape = Tape { inputs: Vec::new(), pre: Vec::new(), masks: Vec::new(), softmax: Matrix::zeros(0, 0) };
        let mut x = p.to_vec();
        for layer in &self.layers[..hidden] {
            let z = affine(layer, &x);
            let mask: Vec<f64> = match rng.as_deref_mut() {
                Some(r) if self.arch.dropout > 0.0 => {
                    z.iter().map(|_| if r.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect()
                }
                _ => vec![1.0; z.len()],
            };
            tape.inputs.push(x);
            x = z.iter().zip(&mask).map(|(v, m)| v.max(0.0) * m).collect();
            tape.pre.push(z);
            tape.masks.push(mask);
        }
        if self.arch.residual {
            x.extend_from_slice(p);
        }
        let logits = affine(&self.layers[hidden], &x);
        tape.inputs.push(x);
        tape.softmax = row_softmax(&logits, self.arch.d);
        tape
    }

    /// Row-stochastic output for context `p`; dropout only when `train_mode`.
    pub fn forward<R: Rng>(&self, p: &[f64], train_mode: bool, rng: &mut R) -> Result<RowStochasticMatrix> {
        self.check_context(p)?;
        let tape = if train_mode { self.run(p, Some(rng)) } else { self.run(p, None) };
        RowStochasticMatrix::new(tape.softmax)
    }

    /// Inference-mode output.
    pub fn predict(&self, p: &[f64]) -> Result<RowStochasticMatrix> {
        self.check_context(p)?;
        RowStochasticMatrix::new(self.run(p, None).softmax)
    }

    /// Accumulates the parameter gradient for upstream `d_softmax` into `grad`.
    fn backward(&self, tape: &Tape, d_softmax: &Matrix, grad: &mut [f64]) {
        let d = self.arch.d;
        let s = &tape.softmax;
        let mut upstream: Vec<f64> = Vec::with_capacity(d * d);
        for i in 0..d {
            let dot: f64 = (0..d).map(|k| d_softmax[(i, k)] * s[(i, k)]).sum();
            upstream.extend((0..d).map(|j| s[(i, j)] * (d_softmax[(i, j)] - dot)));
        }
        let offsets: Vec<usize> = self
            .layers
            .iter()
            .scan(0, |acc, l| {
                let start = *acc;
                *acc += l.weights.len() + l.bias.len();
                Some(start)
            })
            .collect();
        let hidden = self.arch.hidden.len();
        for k in (0..=hidden).rev() {
            let layer = &self.layers[k];
            let input = &tape.inputs[k];
            let (outs, ins) = layer.weights.shape();
            let base = offsets[k];
            for o in 0..outs {
                let u = upstream[o];
                if u == 0.0 {
                    continue;
                }
                let row = &mut grad[base + o * ins..base + (o + 1) * ins];
                for (g, x) in row.iter_mut().zip(input) {
                    *g += u * x;
                }
                grad[base + outs * ins + o] += u;
            }
            if k == 0 {
                break;
            }
            // Only the hidden part of a residual input propagates further.
            let width = self.arch.hidden[k - 1];
            let mut down = vec![0.0; width];
            for (o, u) in upstream.iter().enumerate() {
                if *u == 0.0 {
                    continue;
                }
                for (i, dv) in down.iter_mut().enumerate() {
                    *dv += layer.weights[(o, i)] * u;
                }
            }
            let (z, mask) = (&tape.pre[k - 1], &tape.masks[k - 1]);
            upstream = down
                .iter()
                .zip(z.iter().zip(mask))
                .map(|(dv, (zv, m))| if *zv > 0.0 { dv * m } else { 0.0 })
                .collect();
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            kind: "neucot".into(),
            architecture: self.arch.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerFile { weights: matrix_to_rows(&l.weights), bias: l.bias.clone() })
                .collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.kind != "neucot" {
            return invalid(format!("expected a neucot model, found kind {:?}", file.kind));
        }
        file.architecture.validate()?;
        let shapes = file.architecture.shapes();
        if shapes.len() != file.layers.len() {
            return invalid(format!("architecture has {} layers, file has {}", shapes.len(), file.layers.len()));
        }
        let layers = file
            .layers
            .into_iter()
            .zip(shapes)
            .map(|(l, (ins, outs))| {
                let weights = matrix_from_rows(&l.weights)?;
                if weights.shape() != (outs, ins) || l.bias.len() != outs {
                    return invalid(format!("layer is {:?}, expected {outs}x{ins}", weights.shape()));
                }
                if weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                    return invalid("weights must be finite");
                }
                Ok(Layer { weights, bias: l.bias })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { arch: file.architecture, layers })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeuLoss {
    /// `‖D_μ S − T‖²_F`.
    Transport,
    /// `‖(D_μ S)ᵀ 1 − ν‖²`.
    Marginal,
    /// `‖S − Q‖²_F`.
    DsmFrobenius,
}

impl NeuLoss {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Transport => NeuLoss::Transport,
            Task::Dsm => NeuLoss::DsmFrobenius,
        }
    }
}

/// Batch objective: mean per-sample loss plus an optional penalty on
/// column sums of `S` away from 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub loss: NeuLoss,
    #[serde(default)]
    pub dsm_penalty: f64,
}

impl Objective {
    /// Loss of one output and its derivative with respect to `S`.
    fn sample(&self, s: &Matrix, sample: &Sample) -> Result<(f64, Matrix)> {
        let d = s.nrows();
        let mu = sample.mu.as_slice();
        let (mut value, mut ds) = match self.loss {
            NeuLoss::Transport => {
                let Some(plan) = &sample.plan else {
                    return invalid("transport loss needs samples with plans");
                };
                let diff = Matrix::from_fn(d, d, |i, j| mu[i] * s[(i, j)] - plan.matrix()[(i, j)]);
                let ds = Matrix::from_fn(d, d, |i, j| 2.0 * mu[i] * diff[(i, j)]);
                (diff.norm_squared(), ds)
            }
            NeuLoss::Marginal => {
                let nu = sample.nu.as_slice();
                let gap: Vec<f64> = (0..d).map(|j| (0..d).map(|i| mu[i] * s[(i, j)]).sum::<f64>() - nu[j]).collect();
                let ds = Matrix::from_fn(d, d, |i, j| 2.0 * mu[i] * gap[j]);
                (gap.iter().map(|g| g * g).sum(), ds)
            }
            NeuLoss::DsmFrobenius => {
                let Some(q) = &sample.dsm else {
                    return invalid("DSM loss needs samples with DSM targets");
                };
                let diff = s - q.matrix();
                (diff.norm_squared(), diff * 2.0)
            }
        };
        if self.dsm_penalty > 0.0 {
            let cols = col_sums(s);
            for (j, c) in cols.iter().enumerate() {
                value += self.dsm_penalty * (c - 1.0).powi(2);
                for i in 0..d {
                    ds[(i, j)] += 2.0 * self.dsm_penalty * (c - 1.0);
                }
            }
        }
        Ok((value, ds))
    }
}

/// Mean batch loss and its exact gradient (flattened like [`MlpModel::params`]).
///
/// With `rng` the forward passes use dropout masks drawn from it.
pub fn loss_and_grad(
    model: &MlpModel,
    batch: &[Sample],
    objective: &Objective,
    mut rng: Option<&mut dyn rand::RngCore>,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return invalid("batch is empty");
    }
    let mut grad = vec![0.0; model.param_count()];
    let mut total = 0.0;
    for s in batch {
        model.check_context(&s.context)?;
        if s.mu.len() != model.arch.d {
            return Err(Error::DimensionMismatch { expected: model.arch.d, found: s.mu.len() });
        }
        let tape = model.run(&s.context, rng.as_deref_mut());
        let (value, ds) = objective.sample(&tape.softmax, s)?;
        total += value;
        model.backward(&tape, &ds, &mut grad);
    }
    let scale = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((total * scale, grad))
}

/// Mean batch loss in inference mode.
pub fn loss(model: &MlpModel, batch: &[Sample], objective: &Objective) -> Result<f64> {
    let mut total = 0.0;
    for s in batch {
        model.check_context(&s.context)?;
        total += objective.sample(&model.run(&s.context, None).softmax, s)?.0;
    }
    Ok(total / batch.len().max(1) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: usize, lr: f64) -> Self {
        Self { m: vec![0.0; params], v: vec![0.0; params], t: 0, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for k in 0..params.len() {
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * grad[k];
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * grad[k] * grad[k];
            params[k] -= self.lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeucotConfig {
    pub size: Size,
    pub residual: bool,
    pub dropout: f64,
    pub lr: f64,
    pub epochs: usize,
    /// Share of the training set held out for checkpoint selection.
    pub val_frac: f64,
    pub dsm_penalty: f64,
    /// Defaults to the loss matching the dataset task.
    pub loss: Option<NeuLoss>,
    pub seed: u64,
}

impl Default for NeucotConfig {
    fn default() -> Self {
        Self {
            size: Size::M,
            residual: false,
            dropout: 0.4,
            lr: 5e-4,
            epochs: 500,
            val_frac: 0.1,
            dsm_penalty: 0.0,
            loss: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Inference-mode loss on the fitting part of the training set.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeucotFit {
    /// Checkpoint with the lowest validation loss (training loss without a validation part).
    pub model: MlpModel,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Full-batch Adam; epoch 0 records the initial model.
pub fn train_neucot(ds: &Dataset, cfg: &NeucotConfig) -> Result<NeucotFit> {
    if ds.is_empty() {
        return invalid("training set is empty");
    }
    if !(0.0..1.0).contains(&cfg.val_frac) {
        return invalid(format!("val_frac must lie in [0, 1), got {}", cfg.val_frac));
    }
    if !(cfg.lr >= 0.0 && cfg.lr.is_finite()) {
        return invalid(format!("learning rate must be non-negative, got {}", cfg.lr));
    }
    let loss_kind = cfg.loss.unwrap_or(NeuLoss::for_task(ds.meta.task));
    if (loss_kind == NeuLoss::DsmFrobenius) != (ds.meta.task == Task::Dsm) {
        return invalid(format!("loss {loss_kind:?} does not fit a {:?} dataset", ds.meta.task));
    }
    let objective = Objective { loss: loss_kind, dsm_penalty: cfg.dsm_penalty };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut arch = Architecture::new(ds.meta.context_dim, ds.meta.d, cfg.size);
    arch.dropout = cfg.dropout;
    arch.residual = cfg.residual;
    let mut model = MlpModel::new(arch, &mut rng)?;

    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng);
    let n_val = if cfg.val_frac > 0.0 && ds.len() >= 2 {
        ((cfg.val_frac * ds.len() as f64).round() as usize).clamp(1, ds.len() - 1)
    } else {
        0
    };
    let (val_idx, fit_idx) = order.split_at(n_val);
    let fit: Vec<Sample> = fit_idx.iter().map(|&i| ds.samples[i].clone()).collect();
    let val: Vec<Sample> = val_idx.iter().map(|&i| ds.samples[i].clone()).collect();

    let mut params = model.params();
    let mut adam = AdamState::new(params.len(), cfg.lr);
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    let mut best = (f64::INFINITY, 0, model.clone());
    for epoch in 0..=cfg.epochs {
        if epoch > 0 {
            let (value, grad) = loss_and_grad(&model, &fit, &objective, Some(&mut rng))?;
            if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!("non-finite training loss {value} at epoch {epoch}")));
            }
            adam.step(&mut params, &grad);
            model.set_params(&params)?;
        }
        let train_loss = loss(&model, &fit, &objective)?;
        let val_loss = if val.is_empty() { None } else { Some(loss(&model, &val, &objective)?) };
        let score = val_loss.unwrap_or(train_loss);
        if !score.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {score} at epoch {epoch}")));
        }
        if score < best.0 {
            best = (score, epoch, model.clone());
        }
        history.push(EpochRecord { epoch, train_loss, val_loss });
    }
    Ok(NeucotFit { model: best.2, best_epoch: best.1, history })
}

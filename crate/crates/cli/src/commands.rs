use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use qontot::ansatz::AnsatzKind;
use qontot::datagen::{build_dataset, gen_dsm_dataset, marginal_shift, split, Dataset, GenConfig, SplitStrategy, Task};
use qontot::encoder::{EncodingSpec, Mode, Target};
use qontot::mathcore::io::{matrix_to_csv, matrix_to_json, rows_from_csv};
use qontot::mathcore::{col_sums, QuasiDistribution};
use qontot::neucot::{train_neucot, MlpModel, NeuLoss, NeucotConfig, Size};
use qontot::train::{baseline_average, baseline_identity, evaluate, optimize, Init, Loss, Optimizer, Predictor, QontotModel, TrainConfig};

use crate::args::{EvalArgs, Format, GenArgs, ModeKind, ModelKind, PredictArgs, PredictorKind, Preset, SplitArgs, TrainArgs};
use crate::output::{cell, manifest, opt_cell, read, sibling, to_json, write, Table};

fn qubits_for(d: usize) -> Result<usize> {
    if d < 2 || !d.is_power_of_two() {
        bail!("matrix size must be a power of two of at least 2, got {d}");
    }
    Ok(d.trailing_zeros() as usize)
}

/// Settings of a teacher-generated DSM dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DsmGen {
    pub count: usize,
    pub d: usize,
    pub ansatz: AnsatzKind,
    pub layers: usize,
    pub aux: Option<usize>,
    pub context_dim: usize,
    pub param_range: (f64, f64),
    pub seed: u64,
}

impl Default for DsmGen {
    fn default() -> Self {
        Self {
            count: 40,
            d: 8,
            ansatz: AnsatzKind::Simple,
            layers: 1,
            aux: None,
            context_dim: 1,
            param_range: (-0.8 * std::f64::consts::PI, 0.8 * std::f64::consts::PI),
            seed: 0,
        }
    }
}

impl DsmGen {
    pub fn spec(&self) -> Result<EncodingSpec> {
        let n = qubits_for(self.d)?;
        Ok(EncodingSpec::dsm(self.ansatz, n, self.aux.unwrap_or(n + 1), self.layers, self.context_dim))
    }
}

#[derive(Serialize)]
#[serde(rename_all = "snake_case", tag = "task")]
enum GenRun {
    Transport(GenConfig),
    Dsm(DsmGen),
}

pub fn gen_data(a: GenArgs) -> Result<()> {
    let task = match (a.task, a.preset) {
        (Some(t), _) => t,
        (None, Some(Preset::DsmAssign)) => Task::Dsm,
        _ => Task::Transport,
    };
    if a.preset == Some(Preset::DsmAssign) && task != Task::Dsm {
        bail!("the dsm-assign preset generates DSM data");
    }
    let run = match task {
        Task::Transport => {
            let mut cfg = match (&a.config, a.preset) {
                (Some(path), _) => serde_json::from_str(&read(path)?).context("parsing generator config")?,
                (None, Some(Preset::NonlinearD8)) => GenConfig::nonlinear_d8(),
                (None, Some(Preset::FourgroupsD8)) => GenConfig::fourgroups_d8(),
                _ => GenConfig::linear_d8(),
            };
            if a.count.is_some() || a.ansatz.is_some() || a.layers.is_some() {
                bail!("--count, --ansatz and --layers only apply to DSM data");
            }
            if let Some(d) = a.d {
                cfg.clusters = d;
            }
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            GenRun::Transport(cfg)
        }
        Task::Dsm => {
            let mut cfg: DsmGen = match &a.config {
                Some(path) => serde_json::from_str(&read(path)?).context("parsing generator config")?,
                None => DsmGen::default(),
            };
            cfg.count = a.count.unwrap_or(cfg.count);
            cfg.d = a.d.unwrap_or(cfg.d);
            cfg.ansatz = a.ansatz.unwrap_or(cfg.ansatz);
            cfg.layers = a.layers.unwrap_or(cfg.layers);
            cfg.seed = a.seed.unwrap_or(cfg.seed);
            GenRun::Dsm(cfg)
        }
    };
    let ds = match &run {
        GenRun::Transport(cfg) => build_dataset(cfg)?,
        GenRun::Dsm(cfg) => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            gen_dsm_dataset(&cfg.spec()?, cfg.count, cfg.param_range, cfg.seed, &mut rng)?
        }
    };
    ds.save(&a.out)?;
    let summary = sibling(&a.out, "summary.csv");
    write(&summary, &shift_table(&ds))?;
    println!("{} samples, d = {}", ds.len(), ds.meta.d);
    manifest("gen-data", &run, &[], &[&a.out, &summary])
}

/// Mean `‖μ − ν‖₁` per distinct context, sorted by context.
fn shift_table(ds: &Dataset) -> String {
    let mut groups: Vec<(Vec<f64>, usize, f64)> = Vec::new();
    for s in &ds.samples {
        let shift = marginal_shift(s);
        match groups.iter_mut().find(|g| g.0 == s.context) {
            Some(g) => {
                g.1 += 1;
                g.2 += shift;
            }
            None => groups.push((s.context.clone(), 1, shift)),
        }
    }
    groups.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite contexts"));
    let mut header: Vec<String> = (0..ds.meta.context_dim).map(|k| format!("context_{k}")).collect();
    header.extend(["samples".into(), "mean_l1_shift".into()]);
    let mut table = Table::new(&header);
    for (context, count, total) in groups {
        let mut row: Vec<String> = context.iter().copied().map(cell).collect();
        row.push(count.to_string());
        row.push(cell(total / count as f64));
        table.row(&row);
    }
    table.into_string()
}

/// Train/test sides of a dataset; without a test fraction both are the
/// whole dataset.
fn sides(ds: &Dataset, split_args: SplitArgs, seed: u64) -> Result<(Dataset, Dataset)> {
    match split_args.test_frac {
        None => Ok((ds.clone(), ds.clone())),
        Some(f) => {
            let mut rng = ChaCha8Rng::seed_from_u64(split_args.split_seed.unwrap_or(seed));
            Ok(split(ds, SplitStrategy::Random { test_frac: f }, &mut rng)?)
        }
    }
}

/// Fully resolved training settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRun {
    pub model: ModelKind,
    pub loss: Option<Loss>,
    pub ansatz: AnsatzKind,
    pub layers: usize,
    pub aux: Option<usize>,
    pub mode: ModeKind,
    pub shots: u64,
    pub optimizer: Optimizer,
    pub max_evals: usize,
    /// Defaults to zeros for the simple ansatz and a small spread otherwise.
    pub init: Option<Init>,
    pub seed: u64,
    pub test_frac: Option<f64>,
    pub split_seed: Option<u64>,
    pub size: Size,
    pub epochs: usize,
    pub lr: f64,
    pub dropout: f64,
    pub residual: bool,
    pub dsm_penalty: f64,
}

impl Default for TrainRun {
    fn default() -> Self {
        let neu = NeucotConfig::default();
        Self {
            model: ModelKind::Qontot,
            loss: None,
            ansatz: AnsatzKind::Simple,
            layers: 1,
            aux: None,
            mode: ModeKind::Exact,
            shots: 8192,
            optimizer: Optimizer::NelderMead,
            max_evals: 3000,
            init: None,
            seed: 0,
            test_frac: None,
            split_seed: None,
            size: neu.size,
            epochs: neu.epochs,
            lr: neu.lr,
            dropout: neu.dropout,
            residual: neu.residual,
            dsm_penalty: neu.dsm_penalty,
        }
    }
}

impl TrainRun {
    fn resolve(a: &TrainArgs) -> Result<Self> {
        let mut r: TrainRun = match &a.config {
            Some(path) => serde_json::from_str(&read(path)?).context("parsing training config")?,
            None => TrainRun::default(),
        };
        macro_rules! take {
            ($($field:ident),*) => { $( if let Some(v) = a.$field { r.$field = v; } )* };
        }
        take!(model, ansatz, layers, mode, shots, optimizer, max_evals, seed, size, epochs, lr, dropout, dsm_penalty);
        if a.loss.is_some() {
            r.loss = a.loss;
        }
        if a.aux.is_some() {
            r.aux = a.aux;
        }
        match a.init_spread {
            Some(s) if s == 0.0 => r.init = Some(Init::Zeros),
            Some(s) => r.init = Some(Init::Uniform { lo: -s.abs(), hi: s.abs() }),
            None => {}
        }
        if a.split.test_frac.is_some() {
            r.test_frac = a.split.test_frac;
        }
        if a.split.split_seed.is_some() {
            r.split_seed = a.split.split_seed;
        }
        r.residual |= a.residual;
        Ok(r)
    }

    fn split_args(&self) -> SplitArgs {
        SplitArgs { test_frac: self.test_frac, split_seed: self.split_seed }
    }
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut run = TrainRun::resolve(&a)?;
    let ds = Dataset::load(&a.data)?;
    let (train_side, _) = sides(&ds, run.split_args(), run.seed)?;
    let loss = run.loss.unwrap_or(match ds.meta.task {
        Task::Transport => Loss::Transport,
        Task::Dsm => Loss::Dsm,
    });
    run.loss = Some(loss);
    let extra = match run.model {
        ModelKind::Qontot => {
            let n = qubits_for(ds.meta.d)?;
            let aux = *run.aux.get_or_insert(n + 1);
            let target = match ds.meta.task {
                Task::Transport => Target::Transport,
                Task::Dsm => Target::Dsm,
            };
            let spec = EncodingSpec::new(target, run.ansatz, n, aux, run.layers, ds.meta.context_dim);
            let mut cfg = TrainConfig::new(loss, run.ansatz);
            cfg.init = *run.init.get_or_insert(cfg.init);
            cfg.optimizer = run.optimizer;
            cfg.max_evals = run.max_evals;
            cfg.mode = match run.mode {
                ModeKind::Exact => Mode::Exact,
                ModeKind::Shots => Mode::Shots(run.shots),
            };
            cfg.seed = run.seed;
            let model = optimize(&cfg, &spec, &train_side)?;
            model.save(&a.out)?;
            let best = model.best_objective().ok_or_else(|| anyhow!("optimizer recorded no evaluations"))?;
            println!("best objective: {best}");
            let mut table = Table::new(&["eval".into(), "value".into(), "best".into(), "shots".into()]);
            for e in &model.trace {
                table.row(&[e.eval.to_string(), cell(e.value), cell(e.best), e.shots.map(|s| s.to_string()).unwrap_or_default()]);
            }
            table
        }
        ModelKind::Neucot => {
            let cfg = NeucotConfig {
                size: run.size,
                residual: run.residual,
                dropout: run.dropout,
                lr: run.lr,
                epochs: run.epochs,
                dsm_penalty: run.dsm_penalty,
                loss: Some(match loss {
                    Loss::Transport => NeuLoss::Transport,
                    Loss::Marginal => NeuLoss::Marginal,
                    Loss::Dsm => NeuLoss::DsmFrobenius,
                }),
                seed: run.seed,
                ..NeucotConfig::default()
            };
            let fit = train_neucot(&train_side, &cfg)?;
            fit.model.save(&a.out)?;
            let best = &fit.history[fit.best_epoch];
            println!("best validation loss: {} (epoch {})", opt_cell(best.val_loss), best.epoch);
            let mut table = Table::new(&["epoch".into(), "train_loss".into(), "val_loss".into()]);
            for r in &fit.history {
                table.row(&[r.epoch.to_string(), cell(r.train_loss), opt_cell(r.val_loss)]);
            }
            table
        }
    };
    let history = sibling(&a.out, "trace.csv");
    write(&history, &extra.into_string())?;
    manifest("train", &run, &[&a.data], &[&a.out, &history])
}

/// Reads a model file of either kind.
fn load_predictor(path: &Path) -> Result<Predictor> {
    let text = read(path)?;
    let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    match value.get("kind").and_then(|k| k.as_str()) {
        Some("qontot") => Ok(Predictor::Qontot(QontotModel::from_json(&text)?)),
        Some("neucot") => Ok(Predictor::Neucot(MlpModel::from_json(&text)?)),
        other => bail!("{} is not a model file (kind {other:?})", path.display()),
    }
}

#[derive(Serialize)]
struct EvalRun {
    predictor: PredictorKind,
    model: Option<String>,
    average_mode: qontot::train::AverageMode,
    test_frac: Option<f64>,
    split_seed: Option<u64>,
    seed: u64,
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    predictor: &'a str,
    samples: usize,
    sae: f64,
    rel_frob: f64,
    frob: f64,
    l2: f64,
    r2: Option<f64>,
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let ds = Dataset::load(&a.data)?;
    let (train_side, test_side) = sides(&ds, a.split, a.seed)?;
    let predictor = match a.predictor {
        PredictorKind::Identity => baseline_identity(),
        PredictorKind::Average => baseline_average(&train_side, a.average_mode)?,
        PredictorKind::Qontot | PredictorKind::Neucot => {
            let path = a.model.as_deref().ok_or_else(|| anyhow!("--model is required for the {:?} predictor", a.predictor))?;
            let p = load_predictor(path)?;
            let expected = match a.predictor {
                PredictorKind::Qontot => "qontot",
                _ => "neucot",
            };
            if p.name() != expected {
                bail!("{} holds a {} model, not {expected}", path.display(), p.name());
            }
            p
        }
    };
    let report = evaluate(&predictor, &test_side, a.seed)?;
    let metrics = MetricsFile {
        predictor: predictor.name(),
        samples: test_side.len(),
        sae: report.sae,
        rel_frob: report.rel_frob,
        frob: report.frob,
        l2: report.l2,
        r2: report.r2,
    };
    write(&a.out, &to_json(&metrics)?)?;

    let mut header: Vec<String> = vec!["sample".into()];
    header.extend((0..test_side.meta.context_dim).map(|k| format!("context_{k}")));
    header.extend(["sae", "rel_frob", "frob", "l2", "r2"].map(String::from));
    let mut table = Table::new(&header);
    for (i, (s, m)) in test_side.samples.iter().zip(&report.per_sample).enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(s.context.iter().copied().map(cell));
        row.extend([cell(m.sae), cell(m.rel_frob), cell(m.frob), cell(m.l2), opt_cell(m.r2)]);
        table.row(&row);
    }
    let per_sample = sibling(&a.out, "samples.csv");
    write(&per_sample, &table.into_string())?;
    println!("{}: sae {} rel_frob {} l2 {}", predictor.name(), report.sae, report.rel_frob, report.l2);

    let run = EvalRun {
        predictor: a.predictor,
        model: a.model.as_ref().map(|p| p.display().to_string()),
        average_mode: a.average_mode,
        test_frac: a.split.test_frac,
        split_seed: a.split.split_seed,
        seed: a.seed,
    };
    let mut inputs: Vec<&Path> = vec![&a.data];
    inputs.extend(a.model.as_deref());
    manifest("eval", &run, &inputs, &[&a.out, &per_sample])
}

#[derive(Serialize)]
struct PredictRun<'a> {
    context: &'a [f64],
    mu: &'a [f64],
    format: Format,
    seed: u64,
}

pub fn predict(a: PredictArgs) -> Result<()> {
    let predictor = load_predictor(&a.model)?;
    let weights = match (&a.mu, &a.mu_file) {
        (Some(mu), _) => mu.clone(),
        (None, Some(path)) => {
            let rows: Vec<Vec<f64>> = rows_from_csv(&read(path)?)?;
            rows.into_iter().flatten().collect()
        }
        (None, None) => bail!("either --mu or --mu-file is required"),
    };
    let mu = QuasiDistribution::new(weights)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let plan = predictor.predict_plan(&a.context, &mu, &mut rng)?;
    let body = match a.format {
        Format::Csv => matrix_to_csv(plan.matrix()),
        Format::Json => matrix_to_json(plan.matrix()) + "\n",
    };
    write(&a.out, &body)?;
    let nu_path = sibling(&a.out, "nu.json");
    write(&nu_path, &(serde_json::to_string(&col_sums(plan.matrix()))? + "\n"))?;
    let run = PredictRun { context: &a.context, mu: mu.as_slice(), format: a.format, seed: a.seed };
    let mut inputs: Vec<&Path> = vec![&a.model];
    inputs.extend(a.mu_file.as_deref());
    manifest("predict", &run, &inputs, &[&a.out, &nu_path])
}

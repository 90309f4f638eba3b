//! End-to-end acceptance checks. Each check prints one `PASS`/`FAIL` line
//! (written to the raw stderr handle so it shows up under the test
//! harness's output capture) and then asserts.

use std::f64::consts::PI;
use std::io::Write as _;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qontot::ansatz::{build_ansatz, param_count, AnsatzKind, AnsatzSpec};
use qontot::datagen::{build_dataset, gen_dsm_dataset, split, Dataset, GenConfig, SplitStrategy};
use qontot::encoder::{exact_dsm, predict_rowstochastic, sampled_frequency, EncodingSpec, Mode, RowSampling};
use qontot::mathcore::{col_sums, kl_project_rowstochastic, min_shots, row_sums, CostMatrix, QuasiDistribution};
use qontot::neucot::{loss, loss_and_grad, train_neucot, Architecture, MlpModel, NeuLoss, NeucotConfig, Objective, Size};
use qontot::otsolve::{marginal_residual, sinkhorn, SinkhornConfig};
use qontot::qsim::dense_unitary;
use qontot::train::{baseline_average, baseline_identity, evaluate, optimize, AverageMode, Init, Loss, Optimizer, Predictor, QontotModel, TrainConfig};
use qontot::Matrix;

fn report(id: u32, name: &str, pass: bool, detail: &str, started: Instant) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("[{verdict}] criterion {id:>2} {name}: {detail} ({:.1}s)\n", started.elapsed().as_secs_f64());
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {id} failed: {detail}");
}

fn random_theta(spec: &AnsatzSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..param_count(spec)).map(|_| rng.random_range(-PI..PI)).collect()
}

fn random_context(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..dim).map(|_| rng.random::<f64>()).collect()
}

#[test]
fn criterion_01_dsm_structure() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    let mut negative = 0;
    for _ in 0..100 {
        let n = rng.random_range(1..=3);
        let m = rng.random_range(2..=4);
        let kind = if rng.random::<bool>() { AnsatzKind::Checkerboard } else { AnsatzKind::Simple };
        let layers = rng.random_range(1..=2);
        let spec = EncodingSpec::dsm(kind, n, m, layers, 2);
        let theta = random_theta(&spec.ansatz, &mut rng);
        let q = exact_dsm(&spec, &theta, &random_context(2, &mut rng)).unwrap().into_matrix();
        negative += q.iter().filter(|v| **v < 0.0).count();
        for s in row_sums(&q).into_iter().chain(col_sums(&q)) {
            worst = worst.max((s - 1.0).abs());
        }
    }
    let pass = negative == 0 && worst < 1e-9;
    report(1, "DSM structure", pass, &format!("100 instances, {negative} negative entries, max sum error {worst:.2e}"), started);
}

/// `Q_ij = 2^{-m} Σ_{a,b} |U_{(j,b),(i,a)}|²`, data wires most significant.
fn brute_force_dsm(spec: &EncodingSpec, theta: &[f64], context: &[f64]) -> Matrix {
    let u = dense_unitary(&build_ansatz(&spec.ansatz, theta, context).unwrap()).unwrap();
    let (w, m) = (spec.data_wires(), spec.m);
    let aux = 1usize << m;
    Matrix::from_fn(1 << w, 1 << w, |i, j| {
        let mut s = 0.0;
        for a in 0..aux {
            for b in 0..aux {
                s += u[((j << m) | b, (i << m) | a)].norm_sqr();
            }
        }
        s / aux as f64
    })
}

#[test]
fn criterion_02_brute_force_oracle() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for _ in 0..25 {
        let n = rng.random_range(1..=2);
        let m = rng.random_range(1..=3);
        let kind = if rng.random::<bool>() { AnsatzKind::Checkerboard } else { AnsatzKind::Simple };
        let spec = EncodingSpec::dsm(kind, n, m, rng.random_range(1..=2), 1);
        let theta = random_theta(&spec.ansatz, &mut rng);
        let p = random_context(1, &mut rng);
        let q = exact_dsm(&spec, &theta, &p).unwrap().into_matrix();
        worst = worst.max((q - brute_force_dsm(&spec, &theta, &p)).amax());
    }
    report(2, "brute-force oracle", worst < 1e-10, &format!("25 instances, max deviation {worst:.2e}"), started);
}

#[test]
fn criterion_03_checkerboard_pattern() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0f64;
    for k in 0..50 {
        let data = 2 + k % 3;
        let spec = AnsatzSpec::new(AnsatzKind::Checkerboard, data, 1 + k % 2, 1).with_aux(1 + k % 2);
        let theta = random_theta(&spec, &mut rng);
        let u = dense_unitary(&build_ansatz(&spec, &theta, &random_context(1, &mut rng)).unwrap()).unwrap();
        let q = u.map(|z| z.norm_sqr());
        let h = q.nrows() / 2;
        let quad = |r: usize, c: usize| q.view((r, c), (h, h)).into_owned();
        worst = worst.max((quad(0, 0) - quad(h, h)).amax()).max((quad(0, h) - quad(h, 0)).amax());
    }
    report(3, "checkerboard quadrants", worst < 1e-9, &format!("50 parameterizations, max |Q1-Q4|,|Q2-Q3| {worst:.2e}"), started);
}

#[test]
fn criterion_04_sampling_recovery() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst = 0.0f64;
    for (n, m) in [(1, 2), (2, 3), (3, 2)] {
        let spec = EncodingSpec::dsm(AnsatzKind::Checkerboard, n, m, 1, 1);
        let theta = random_theta(&spec.ansatz, &mut rng);
        let p = random_context(1, &mut rng);
        let exact = exact_dsm(&spec, &theta, &p).unwrap().into_matrix();
        let freq = sampled_frequency(&spec, &theta, &p, 1_000_000, &mut rng).unwrap();
        let recovered = kl_project_rowstochastic(&freq).unwrap().into_matrix();
        worst = worst.max((recovered - exact).amax());

        let tspec = EncodingSpec::transport(AnsatzKind::Checkerboard, n, m, 1, 1);
        let theta = random_theta(&tspec.ansatz, &mut rng);
        let exact = predict_rowstochastic(&tspec, &theta, &p, &mut rng).unwrap().into_matrix();
        let sampled = predict_rowstochastic(&tspec.with_mode(Mode::Shots(1_000_000)), &theta, &p, &mut rng).unwrap();
        worst = worst.max((sampled.into_matrix() - exact).amax());
    }

    let mut spec = EncodingSpec::transport(AnsatzKind::Checkerboard, 3, 1, 1, 1);
    spec.row_sampling = RowSampling::Uniform;
    let theta = random_theta(&spec.ansatz, &mut rng);
    let shots = min_shots(8, 0.99).unwrap();
    let full = (0..200u64)
        .filter(|seed| {
            let f = sampled_frequency(&spec, &theta, &[0.5], shots, &mut ChaCha8Rng::seed_from_u64(4040 + seed)).unwrap();
            (0..8).all(|i| f.row_total(i) > 0)
        })
        .count();
    let pass = worst <= 5e-3 && full >= 190;
    let detail = format!("1e6-shot max error {worst:.2e}; {full}/200 trials at {shots} shots had no empty row");
    report(4, "sampling recovery", pass, &detail, started);
}

#[test]
fn criterion_05_sinkhorn() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let points: Vec<(f64, f64)> = (0..8).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect();
        let cost = Matrix::from_fn(8, 8, |i, j| ((points[i].0 - points[j].0).powi(2) + (points[i].1 - points[j].1).powi(2)).sqrt());
        let draw = |rng: &mut ChaCha8Rng| {
            let w: Vec<f64> = (0..8).map(|_| rng.random_range(0.05..1.0)).collect();
            let t: f64 = w.iter().sum();
            QuasiDistribution::new(w.into_iter().map(|x| x / t).collect()).unwrap()
        };
        let (mu, nu) = (draw(&mut rng), draw(&mut rng));
        let plan = sinkhorn(&mu, &nu, &CostMatrix::new(cost).unwrap(), &SinkhornConfig::new(1e-3)).unwrap();
        worst = worst.max(marginal_residual(plan.matrix(), mu.as_slice(), nu.as_slice()));
    }
    // LP vertex for μ = (0.6, 0.4), ν = (0.3, 0.7) with a cheap diagonal:
    // T = [[0.3, 0.3], [0, 0.4]].
    let mu = QuasiDistribution::new(vec![0.6, 0.4]).unwrap();
    let nu = QuasiDistribution::new(vec![0.3, 0.7]).unwrap();
    let cost = CostMatrix::new(Matrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
    let plan = sinkhorn(&mu, &nu, &cost, &SinkhornConfig::new(1e-3)).unwrap();
    let vertex = Matrix::from_row_slice(2, 2, &[0.3, 0.3, 0.0, 0.4]);
    let lp = (plan.matrix() - vertex).amax();
    let pass = worst < 1e-9 && lp <= 1e-3;
    report(5, "Sinkhorn", pass, &format!("d=8 max residual {worst:.2e} over 20 instances; 2x2 vertex error {lp:.2e}"), started);
}

/// Mean (sae, rel_frob) of a predictor on the test side.
fn scores(p: &Predictor, test: &Dataset) -> (f64, f64) {
    let r = evaluate(p, test, 0).unwrap();
    (r.sae, r.rel_frob)
}

#[test]
fn criterion_06_end_to_end_ordering() {
    let started = Instant::now();
    let mut totals = [(0.0, 0.0); 3];
    let mut lines = Vec::new();
    for seed in 0..3u64 {
        let ds = build_dataset(&GenConfig { seed, ..GenConfig::linear_d8() }).unwrap();
        let (train, test) = split(&ds, SplitStrategy::Random { test_frac: 0.2 }, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let spec = EncodingSpec::transport(AnsatzKind::Simple, 3, 1, 4, 1);
        let cfg = TrainConfig {
            optimizer: Optimizer::BfgsNumeric,
            max_evals: 120_000,
            init: Init::Uniform { lo: -0.1, hi: 0.1 },
            seed,
            ..TrainConfig::new(Loss::Transport, AnsatzKind::Simple)
        };
        let model = optimize(&cfg, &spec, &train).unwrap();
        let predictors = [Predictor::Qontot(model), baseline_identity(), baseline_average(&train, AverageMode::MeanMarginals).unwrap()];
        let mut row = Vec::new();
        for (k, p) in predictors.iter().enumerate() {
            let (sae, rel) = scores(p, &test);
            totals[k].0 += sae / 3.0;
            totals[k].1 += rel / 3.0;
            row.push(format!("{} {sae:.3}/{rel:.3}", p.name()));
        }
        lines.push(format!("seed {seed}: {}", row.join(", ")));
    }
    let [q, id, avg] = totals;
    let pass = q.0 < id.0 && q.0 < avg.0 && q.1 < id.1 && q.1 < avg.1;
    let detail = format!(
        "mean SAE qontot {:.3} identity {:.3} average {:.3}; rel-Frobenius {:.3} {:.3} {:.3} [{}]",
        q.0, id.0, avg.0, q.1, id.1, avg.1, lines.join("; ")
    );
    report(6, "end-to-end ordering", pass, &detail, started);
}

#[test]
fn criterion_07_stationarity() {
    let started = Instant::now();
    let spec = EncodingSpec::transport(AnsatzKind::Simple, 2, 3, 2, 1);
    let model = QontotModel::untrained(spec, vec![0.0; param_count(&spec.ansatz)]).unwrap();
    let mu = QuasiDistribution::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
    let plan = Predictor::Qontot(model).predict_plan(&[0.0], &mu, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let diag = Matrix::from_fn(4, 4, |i, j| if i == j { mu.as_slice()[i] } else { 0.0 });
    let err = (plan.matrix() - diag).amax();
    report(7, "stationarity", err < 1e-12, &format!("max deviation from diag(mu) {err:.2e}"), started);
}

#[test]
fn criterion_08_teacher_student_dsm() {
    let started = Instant::now();
    let spec = EncodingSpec::dsm(AnsatzKind::Simple, 3, 4, 1, 1);
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ds = gen_dsm_dataset(&spec, 40, (-0.8 * PI, 0.8 * PI), seed, &mut rng).unwrap();
        let (train, test) = split(&ds, SplitStrategy::Random { test_frac: 0.2 }, &mut rng).unwrap();
        let cfg = TrainConfig {
            optimizer: Optimizer::BfgsNumeric,
            max_evals: 4500,
            init: Init::Uniform { lo: -2.5, hi: 2.5 },
            seed,
            ..TrainConfig::new(Loss::Dsm, AnsatzKind::Simple)
        };
        let model = optimize(&cfg, &spec, &train).unwrap();
        let neu = train_neucot(&train, &NeucotConfig { size: Size::M, epochs: 500, seed, ..Default::default() }).unwrap();
        let frob = |p: &Predictor| evaluate(p, &test, 0).unwrap().frob;
        let (q, id, nc) = (frob(&Predictor::Qontot(model)), frob(&baseline_identity()), frob(&Predictor::Neucot(neu.model)));
        if q < id && q < nc {
            wins += 1;
        }
        lines.push(format!("seed {seed}: qontot {q:.4} identity {id:.4} neucot-m {nc:.4}"));
    }
    report(8, "teacher-student DSM", wins >= 2, &format!("{wins}/3 seeds won [{}]", lines.join("; ")), started);
}

#[test]
fn criterion_09_neucot_gradient() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let spec = EncodingSpec::dsm(AnsatzKind::Simple, 3, 1, 1, 1);
    let ds = gen_dsm_dataset(&spec, 6, (-0.8 * PI, 0.8 * PI), 9, &mut rng).unwrap();
    let mut arch = Architecture::new(1, 8, Size::M);
    arch.residual = true;
    let mut model = MlpModel::new(arch, &mut rng).unwrap();
    let jittered: Vec<f64> = model.params().iter().map(|p| p + rng.random_range(-0.1..0.1)).collect();
    model.set_params(&jittered).unwrap();
    let objective = Objective { loss: NeuLoss::DsmFrobenius, dsm_penalty: 0.5 };
    let (_, grad) = loss_and_grad(&model, &ds.samples, &objective, None).unwrap();
    let params = model.params();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let k = rng.random_range(0..params.len());
        let at = |delta: f64| {
            let mut p = params.clone();
            p[k] += delta;
            let mut m = model.clone();
            m.set_params(&p).unwrap();
            loss(&m, &ds.samples, &objective).unwrap()
        };
        let numeric = (at(h) - at(-h)) / (2.0 * h);
        let scale = grad[k].abs().max(numeric.abs()).max(1e-7);
        worst = worst.max((grad[k] - numeric).abs() / scale);
    }
    report(9, "NeuCOT gradient", worst <= 1e-4, &format!("50 coordinates, max relative error {worst:.2e}"), started);
}

fn qontot(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_qontot")).current_dir(dir).args(args).output().unwrap();
    assert!(out.status.success(), "qontot {args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn criterion_10_cli_determinism() {
    let started = Instant::now();
    let script: &[&[&str]] = &[
        &["gen-data", "--preset", "linear-d8", "--seed", "3", "--out", "ds.json"],
        &["gen-data", "--task", "dsm", "--count", "8", "--d", "4", "--seed", "5", "--out", "dsm.json"],
        &["train", "--data", "ds.json", "--max-evals", "20", "--aux", "1", "--test-frac", "0.2", "--seed", "1", "--out", "q.json"],
        &["train", "--data", "dsm.json", "--mode", "shots", "--shots", "256", "--optimizer", "spsa", "--max-evals", "15", "--seed", "2", "--out", "qs.json"],
        &["train", "--data", "dsm.json", "--model", "neucot", "--size", "xs", "--epochs", "15", "--seed", "3", "--out", "n.json"],
        &["eval", "--data", "ds.json", "--predictor", "qontot", "--model", "q.json", "--test-frac", "0.2", "--split-seed", "1", "--out", "eq.json"],
        &["eval", "--data", "ds.json", "--predictor", "average", "--test-frac", "0.2", "--split-seed", "1", "--out", "ea.json"],
        &["eval", "--data", "dsm.json", "--predictor", "neucot", "--model", "n.json", "--out", "en.json"],
        &["eval", "--data", "dsm.json", "--predictor", "qontot", "--model", "qs.json", "--seed", "4", "--out", "es.json"],
        &["predict", "--model", "q.json", "--context", "0.4", "--mu", "0.1,0.1,0.1,0.1,0.1,0.1,0.2,0.2", "--out", "plan.csv"],
        &["predict", "--model", "n.json", "--context", "0.4", "--mu", "0.25,0.25,0.25,0.25", "--format", "json", "--out", "plan.json"],
    ];
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        for args in script {
            qontot(d.path(), args);
        }
    }
    let (a, b) = (files(dirs[0].path()), files(dirs[1].path()));
    let differing: Vec<&str> = a.iter().zip(&b).filter(|(x, y)| x != y).map(|(x, _)| x.0.as_str()).collect();
    let pass = a.len() == b.len() && differing.is_empty();
    let detail = format!("{} commands, {} output files, differing: {differing:?}", script.len(), a.len());
    report(10, "CLI determinism", pass, &detail, started);
}

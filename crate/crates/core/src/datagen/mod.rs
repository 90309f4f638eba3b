//! Synthetic dosage-perturbation data: zero-inflated counts, perturbation,
//! cell typing by k-means, and assembly into contextual OT datasets.

mod dataset;
mod kmeans;

pub use dataset::{marginal_shift, Dataset, DatasetMeta, Sample, Task};
pub use kmeans::{assign, kmeans, Clustering, KMeansConfig};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, LogNormal, Poisson};
use serde::{Deserialize, Serialize};

use crate::ansatz::param_count;
use crate::encoder::{exact_dsm, EncodingSpec, Target};
use crate::error::{invalid, Result};
use crate::mathcore::{CostMatrix, QuasiDistribution, TransportPlan};
use crate::otsolve::{cost_from_centroids, sinkhorn, Metric, SinkhornConfig};
use crate::Matrix;

/// Floor applied to cluster frequencies before renormalization.
pub const FREQ_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZinbConfig {
    /// Gamma shape of the per-gene mean.
    pub mean_shape: f64,
    /// Gamma rate of the per-gene mean.
    pub mean_rate: f64,
    /// Log-mean at which half of the entries drop out.
    pub dropout_midpoint: f64,
    pub dropout_slope: f64,
    /// Spread of the per-cell library-size factor (log scale, mean one).
    pub library_sdlog: f64,
}

impl Default for ZinbConfig {
    fn default() -> Self {
        Self { mean_shape: 2.0, mean_rate: 0.5, dropout_midpoint: 1.0, dropout_slope: -1.0, library_sdlog: 0.3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Perturbation {
    /// `a·x + b`
    Linear { a: f64, b: f64 },
    /// `a·x^(−b)`, evaluated at `max(x, 1)`.
    Recroot { a: f64, b: f64 },
}

impl Perturbation {
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            Self::Linear { a, b } => a * x + b,
            Self::Recroot { a, b } => a * x.max(1.0).powf(-b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub genes: usize,
    /// Cells in the shared unperturbed population.
    pub base_cells: usize,
    /// Cells per perturbed batch.
    pub batch_cells: usize,
    pub batches: usize,
    pub dosages: Vec<f64>,
    pub responsive_gene_frac: f64,
    pub unresponsive_cell_frac: f64,
    pub amplitude: (f64, f64),
    pub perturbation: Perturbation,
    pub zinb: ZinbConfig,
    /// Number of cell groups with distinct gene means.
    pub groups: usize,
    /// Draw a fresh base population for every sample instead of sharing one.
    pub resample_base: bool,
    pub clusters: usize,
    pub metric: Metric,
    pub gamma: f64,
    pub seed: u64,
}

pub fn dosage_grid(count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..count).map(|i| i as f64 / (count - 1) as f64).collect(),
    }
}

impl GenConfig {
    pub fn linear_d8() -> Self {
        Self {
            genes: 300,
            base_cells: 1000,
            batch_cells: 500,
            batches: 4,
            dosages: dosage_grid(50),
            responsive_gene_frac: 0.15,
            unresponsive_cell_frac: 0.10,
            amplitude: (0.3, 1.0),
            perturbation: Perturbation::Linear { a: 3.0, b: 1.0 },
            zinb: ZinbConfig::default(),
            groups: 1,
            resample_base: false,
            clusters: 8,
            metric: Metric::Euclidean,
            gamma: 1e-3,
            seed: 0,
        }
    }

    pub fn nonlinear_d8() -> Self {
        Self { perturbation: Perturbation::Recroot { a: 100.0, b: 0.2 }, ..Self::linear_d8() }
    }

    pub fn fourgroups_d8() -> Self {
        Self {
            genes: 100,
            base_cells: 2000,
            batch_cells: 2000,
            batches: 1,
            dosages: dosage_grid(100),
            unresponsive_cell_frac: 0.02,
            groups: 4,
            resample_base: true,
            ..Self::nonlinear_d8()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let frac = |x: f64| (0.0..=1.0).contains(&x);
        if !frac(self.responsive_gene_frac) || !frac(self.unresponsive_cell_frac) {
            return invalid("gene and cell fractions must lie in [0, 1]");
        }
        if self.dosages.is_empty() || !self.dosages.iter().all(|p| frac(*p)) {
            return invalid("dosages must be a non-empty list of values in [0, 1]");
        }
        if self.clusters < 2 {
            return invalid("need at least 2 clusters");
        }
        if self.genes == 0 || self.base_cells < self.clusters || self.batch_cells == 0 || self.batches == 0 {
            return invalid("genes, cells and batches must be positive, with at least k base cells");
        }
        if self.groups == 0 {
            return invalid("need at least one cell group");
        }
        let (lo, hi) = self.amplitude;
        if !(lo <= hi && lo >= 0.0) {
            return invalid("amplitude range must satisfy 0 <= lo <= hi");
        }
        if !(self.zinb.mean_shape > 0.0 && self.zinb.mean_rate > 0.0 && self.zinb.library_sdlog >= 0.0) {
            return invalid("ZINB shape and rate must be positive");
        }
        if !(self.gamma > 0.0) {
            return invalid("gamma must be positive");
        }
        Ok(())
    }

    /// Order of the transport problem: clusters padded to a power of two.
    pub fn d(&self) -> usize {
        self.clusters.next_power_of_two()
    }
}

/// Gene means per cell group.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneMeans(pub Vec<Vec<f64>>);

pub fn sample_gene_means<R: Rng + ?Sized>(cfg: &GenConfig, rng: &mut R) -> Result<GeneMeans> {
    let gamma = Gamma::new(cfg.zinb.mean_shape, 1.0 / cfg.zinb.mean_rate).map_err(|e| crate::Error::Invalid(e.to_string()))?;
    let base: Vec<f64> = (0..cfg.genes).map(|_| gamma.sample(rng)).collect();
    if cfg.groups == 1 {
        return Ok(GeneMeans(vec![base]));
    }
    let fold = LogNormal::new(0.5, 0.4).expect("valid lognormal");
    let groups = (0..cfg.groups)
        .map(|_| {
            base.iter()
                .map(|&m| {
                    if rng.random::<f64>() < 0.2 {
                        let f = fold.sample(rng);
                        if rng.random::<bool>() { m * f } else { m / f }
                    } else {
                        m
                    }
                })
                .collect()
        })
        .collect();
    Ok(GeneMeans(groups))
}

pub fn dropout_probability(zinb: &ZinbConfig, mean: f64) -> f64 {
    let x = mean.max(1e-300).ln();
    1.0 / (1.0 + (-zinb.dropout_slope * (x - zinb.dropout_midpoint)).exp())
}

/// Zero-inflated Gamma-Poisson counts, cells × genes.
pub fn sample_expression<R: Rng + ?Sized>(cfg: &GenConfig, means: &GeneMeans, cells: usize, rng: &mut R) -> Matrix {
    let sd = cfg.zinb.library_sdlog;
    let library = LogNormal::new(-0.5 * sd * sd, sd).expect("valid lognormal");
    let mut x = Matrix::zeros(cells, cfg.genes);
    for c in 0..cells {
        let group = &means.0[rng.random_range(0..means.0.len())];
        let lib = if sd > 0.0 { library.sample(rng) } else { 1.0 };
        for g in 0..cfg.genes {
            let mean = group[g] * lib;
            let count = if mean > 0.0 { Poisson::new(mean).map(|p| p.sample(rng)).unwrap_or(0.0) } else { 0.0 };
            let dropped = rng.random::<f64>() < dropout_probability(&cfg.zinb, mean);
            x[(c, g)] = if dropped { 0.0 } else { count };
        }
    }
    x
}

/// Genes that respond to the perturbation and their amplitudes; fixed per dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseProfile {
    pub genes: Vec<usize>,
    pub amplitudes: Vec<f64>,
}

pub fn sample_response<R: Rng + ?Sized>(cfg: &GenConfig, rng: &mut R) -> ResponseProfile {
    let count = (cfg.responsive_gene_frac * cfg.genes as f64).round() as usize;
    let mut all: Vec<usize> = (0..cfg.genes).collect();
    all.shuffle(rng);
    let mut genes = all[..count].to_vec();
    genes.sort_unstable();
    let (lo, hi) = cfg.amplitude;
    let amplitudes = genes.iter().map(|_| if hi > lo { rng.random_range(lo..hi) } else { lo }).collect();
    ResponseProfile { genes, amplitudes }
}

/// Applies the dosage-scaled effect to a freshly sampled population.
pub fn perturb<R: Rng + ?Sized>(
    fresh: &Matrix,
    dosage: f64,
    profile: &ResponseProfile,
    cfg: &GenConfig,
    rng: &mut R,
) -> Matrix {
    let mut y = fresh.clone();
    for c in 0..y.nrows() {
        if rng.random::<f64>() < cfg.unresponsive_cell_frac {
            continue;
        }
        for (&g, &amp) in profile.genes.iter().zip(&profile.amplitudes) {
            let x = y[(c, g)];
            y[(c, g)] = (x + dosage * amp * (cfg.perturbation.apply(x) - x)).max(0.0);
        }
    }
    y
}

fn log1p(m: &Matrix) -> Matrix {
    m.map(|v| v.ln_1p())
}

fn frequencies(labels: &[usize], k: usize, d: usize) -> QuasiDistribution {
    let mut w = vec![0.0; d];
    for &l in labels {
        w[l] += 1.0;
    }
    let n = labels.len() as f64;
    let floored: Vec<f64> = (0..d).map(|i| if i < k { (w[i] / n).max(FREQ_FLOOR) } else { FREQ_FLOOR }).collect();
    let total: f64 = floored.iter().sum();
    QuasiDistribution::new(floored.into_iter().map(|x| x / total).collect()).expect("positive after flooring")
}

/// Entropic plan on the first `k` entries, diagonal on the padding.
fn padded_plan(mu: &QuasiDistribution, nu: &QuasiDistribution, k: usize, real_cost: &CostMatrix, gamma: f64) -> Result<TransportPlan> {
    let d = mu.len();
    let head = |q: &QuasiDistribution| QuasiDistribution::new(q.as_slice()[..k].to_vec());
    let (mu_k, nu_k) = (head(mu)?, head(nu)?);
    // Flooring can leave the two heads with masses differing by rounding only.
    let nu_k = QuasiDistribution::new(nu_k.as_slice().iter().map(|x| x * mu_k.total() / nu_k.total()).collect())?;
    let core = sinkhorn(&mu_k, &nu_k, real_cost, &SinkhornConfig::new(gamma))?;
    let mut plan = Matrix::zeros(d, d);
    plan.view_mut((0, 0), (k, k)).copy_from(core.matrix());
    for i in k..d {
        plan[(i, i)] = mu.as_slice()[i];
    }
    TransportPlan::new(plan, mu.clone(), nu.clone())
}

fn padded_cost(real: &CostMatrix, d: usize) -> Result<CostMatrix> {
    let k = real.dim();
    let big = real.matrix().max();
    let mut c = Matrix::from_element(d, d, big);
    c.view_mut((0, 0), (k, k)).copy_from(real.matrix());
    for i in k..d {
        c[(i, i)] = 0.0;
    }
    CostMatrix::new(c)
}

/// Generates a transport dataset: one sample per (dosage, batch).
pub fn build_dataset(cfg: &GenConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let means = sample_gene_means(cfg, &mut rng)?;
    let profile = sample_response(cfg, &mut rng);
    let base = sample_expression(cfg, &means, cfg.base_cells, &mut rng);
    let clustering = kmeans(&log1p(&base), cfg.clusters, KMeansConfig::default(), &mut rng)?;
    let k = cfg.clusters;
    let d = cfg.d();
    let real_cost = cost_from_centroids(&clustering.centroids, cfg.metric)?;
    let shared_mu = frequencies(&clustering.labels, k, d);

    let mut samples = Vec::with_capacity(cfg.dosages.len() * cfg.batches);
    for &dosage in &cfg.dosages {
        for _ in 0..cfg.batches {
            let mu = if cfg.resample_base {
                let x = sample_expression(cfg, &means, cfg.base_cells, &mut rng);
                frequencies(&assign(&log1p(&x), &clustering.centroids), k, d)
            } else {
                shared_mu.clone()
            };
            let fresh = sample_expression(cfg, &means, cfg.batch_cells, &mut rng);
            let y = perturb(&fresh, dosage, &profile, cfg, &mut rng);
            let nu = frequencies(&assign(&log1p(&y), &clustering.centroids), k, d);
            let plan = padded_plan(&mu, &nu, k, &real_cost, cfg.gamma)?;
            samples.push(Sample::transport(vec![dosage], plan));
        }
    }
    let meta = DatasetMeta {
        d,
        task: Task::Transport,
        gamma: Some(cfg.gamma),
        cost: Some(padded_cost(&real_cost, d)?),
        seed: cfg.seed,
        context_dim: 1,
        teacher: None,
    };
    Dataset::new(meta, samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SplitStrategy {
    /// Hold out a random fraction of the distinct contexts.
    Random { test_frac: f64 },
    /// Hold out the largest contexts.
    Extrapolation { top_frac: f64 },
}

/// Splits by distinct context so all batches of a dosage land on one side.
pub fn split<R: Rng + ?Sized>(ds: &Dataset, strategy: SplitStrategy, rng: &mut R) -> Result<(Dataset, Dataset)> {
    let frac = match strategy {
        SplitStrategy::Random { test_frac } => test_frac,
        SplitStrategy::Extrapolation { top_frac } => top_frac,
    };
    if !(frac > 0.0 && frac < 1.0) {
        return invalid(format!("split fraction must lie in (0, 1), got {frac}"));
    }
    let mut groups: Vec<Vec<f64>> = Vec::new();
    for s in &ds.samples {
        if !groups.iter().any(|g| g == &s.context) {
            groups.push(s.context.clone());
        }
    }
    let n_test = (frac * groups.len() as f64).round() as usize;
    if n_test == 0 || n_test >= groups.len() {
        return invalid(format!("split of {} contexts at {frac} leaves one side empty", groups.len()));
    }
    match strategy {
        SplitStrategy::Random { .. } => groups.shuffle(rng),
        SplitStrategy::Extrapolation { .. } => {
            groups.sort_by(|a, b| b.partial_cmp(a).expect("finite contexts"));
        }
    }
    let test_ctx = &groups[..n_test];
    let (test, train): (Vec<usize>, Vec<usize>) =
        (0..ds.len()).partition(|&i| test_ctx.iter().any(|g| g == &ds.samples[i].context));
    Ok((ds.subset(&train), ds.subset(&test)))
}

/// DSM targets from a teacher circuit with uniformly drawn parameters.
pub fn gen_dsm_dataset<R: Rng + ?Sized>(
    spec: &EncodingSpec,
    count: usize,
    param_range: (f64, f64),
    seed: u64,
    rng: &mut R,
) -> Result<Dataset> {
    if count < 2 {
        return invalid("a DSM dataset needs at least 2 samples");
    }
    if spec.target != Target::Dsm {
        return invalid("teacher spec must target DSMs");
    }
    spec.validate()?;
    let (lo, hi) = param_range;
    let teacher: Vec<f64> =
        (0..param_count(&spec.ansatz)).map(|_| if hi > lo { rng.random_range(lo..hi) } else { lo }).collect();
    let s = spec.context_dim();
    let samples = (0..count)
        .map(|_| {
            let context: Vec<f64> = (0..s).map(|_| rng.random::<f64>()).collect();
            exact_dsm(spec, &teacher, &context).map(|q| Sample::dsm(context, q))
        })
        .collect::<Result<Vec<_>>>()?;
    let meta = DatasetMeta {
        d: spec.d(),
        task: Task::Dsm,
        gamma: None,
        cost: None,
        seed,
        context_dim: s,
        teacher: Some(teacher),
    };
    Dataset::new(meta, samples)
}

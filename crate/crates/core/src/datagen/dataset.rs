//! Contextual OT datasets and their JSON form.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::mathcore::io::{matrix_from_rows, matrix_to_rows};
use crate::mathcore::{
    CostMatrix, DoublyStochasticMatrix, QuasiDistribution, TransportPlan, PLAN_TOL,
};
use crate::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Transport,
    Dsm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub d: usize,
    pub task: Task,
    pub gamma: Option<f64>,
    pub cost: Option<CostMatrix>,
    pub seed: u64,
    pub context_dim: usize,
    /// Parameters of the circuit that generated a DSM dataset.
    pub teacher: Option<Vec<f64>>,
}

/// One `(context, μ, ν, target)` tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub context: Vec<f64>,
    pub mu: QuasiDistribution,
    pub nu: QuasiDistribution,
    pub plan: Option<TransportPlan>,
    pub dsm: Option<DoublyStochasticMatrix>,
}

impl Sample {
    pub fn transport(context: Vec<f64>, plan: TransportPlan) -> Self {
        Self { context, mu: plan.mu().clone(), nu: plan.nu().clone(), plan: Some(plan), dsm: None }
    }

    pub fn dsm(context: Vec<f64>, dsm: DoublyStochasticMatrix) -> Self {
        let d = dsm.dim();
        Self { context, mu: QuasiDistribution::ones(d), nu: QuasiDistribution::ones(d), plan: None, dsm: Some(dsm) }
    }

    /// The supervision target: the plan for transport samples, the DSM otherwise.
    pub fn target(&self) -> Option<&Matrix> {
        self.plan.as_ref().map(|p| p.matrix()).or(self.dsm.as_ref().map(|q| q.matrix()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub samples: Vec<Sample>,
}

#[derive(Serialize, Deserialize)]
struct MetaFile {
    d: usize,
    task: Task,
    #[serde(default)]
    gamma: Option<f64>,
    #[serde(default)]
    cost: Option<Vec<Vec<f64>>>,
    seed: u64,
    context_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    teacher: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct SampleFile {
    context: Vec<f64>,
    mu: Vec<f64>,
    nu: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    plan: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dsm: Option<Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    meta: MetaFile,
    samples: Vec<SampleFile>,
}

impl Dataset {
    pub fn new(meta: DatasetMeta, samples: Vec<Sample>) -> Result<Self> {
        let ds = Self { meta, samples };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Same metadata, chosen samples.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self { meta: self.meta.clone(), samples: indices.iter().map(|&i| self.samples[i].clone()).collect() }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.meta.d;
        if d == 0 {
            return invalid("dataset dimension must be positive");
        }
        if let Some(c) = &self.meta.cost {
            if c.dim() != d {
                return invalid(format!("cost is {}x{}, dataset d is {d}", c.dim(), c.dim()));
            }
        }
        for (i, s) in self.samples.iter().enumerate() {
            if s.context.len() != self.meta.context_dim {
                return invalid(format!("sample {i}: context has {} entries, expected {}", s.context.len(), self.meta.context_dim));
            }
            if s.mu.len() != d || s.nu.len() != d {
                return invalid(format!("sample {i}: marginals must have {d} entries"));
            }
            match self.meta.task {
                Task::Transport => {
                    for (name, q) in [("mu", &s.mu), ("nu", &s.nu)] {
                        if (q.total() - 1.0).abs() > PLAN_TOL {
                            return invalid(format!("sample {i}: {name} sums to {}", q.total()));
                        }
                    }
                    if s.dsm.is_some() {
                        return invalid(format!("sample {i}: transport sample carries a DSM"));
                    }
                    if let Some(p) = &s.plan {
                        if p.dim() != d || p.mu() != &s.mu || p.nu() != &s.nu {
                            return invalid(format!("sample {i}: plan does not match its marginals"));
                        }
                    }
                }
                Task::Dsm => match &s.dsm {
                    Some(q) if q.dim() == d => {}
                    _ => return invalid(format!("sample {i}: DSM sample needs a {d}x{d} target")),
                },
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = DatasetFile {
            meta: MetaFile {
                d: self.meta.d,
                task: self.meta.task,
                gamma: self.meta.gamma,
                cost: self.meta.cost.as_ref().map(|c| matrix_to_rows(c.matrix())),
                seed: self.meta.seed,
                context_dim: self.meta.context_dim,
                teacher: self.meta.teacher.clone(),
            },
            samples: self
                .samples
                .iter()
                .map(|s| SampleFile {
                    context: s.context.clone(),
                    mu: s.mu.as_slice().to_vec(),
                    nu: s.nu.as_slice().to_vec(),
                    plan: s.plan.as_ref().map(|p| matrix_to_rows(p.matrix())),
                    dsm: s.dsm.as_ref().map(|q| matrix_to_rows(q.matrix())),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    /// Parses and validates every invariant: positive marginals, plan
    /// marginals within tolerance, DSM sums, shared dimension and cost.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: DatasetFile = serde_json::from_str(text)?;
        let meta = DatasetMeta {
            d: file.meta.d,
            task: file.meta.task,
            gamma: file.meta.gamma,
            cost: file.meta.cost.map(|rows| matrix_from_rows(&rows).and_then(CostMatrix::new)).transpose()?,
            seed: file.meta.seed,
            context_dim: file.meta.context_dim,
            teacher: file.meta.teacher,
        };
        let samples = file
            .samples
            .into_iter()
            .enumerate()
            .map(|(i, s)| -> Result<Sample> {
                let wrap = |e: crate::Error| crate::Error::Invalid(format!("sample {i}: {e}"));
                let mu = QuasiDistribution::new(s.mu).map_err(wrap)?;
                let nu = QuasiDistribution::new(s.nu).map_err(wrap)?;
                let plan = s
                    .plan
                    .map(|rows| matrix_from_rows(&rows).and_then(|m| TransportPlan::new(m, mu.clone(), nu.clone())))
                    .transpose()
                    .map_err(wrap)?;
                let dsm = s
                    .dsm
                    .map(|rows| matrix_from_rows(&rows).and_then(DoublyStochasticMatrix::new))
                    .transpose()
                    .map_err(wrap)?;
                Ok(Sample { context: s.context, mu, nu, plan, dsm })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(meta, samples)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// `‖μ − ν‖₁` of a sample.
pub fn marginal_shift(s: &Sample) -> f64 {
    s.mu.as_slice().iter().zip(s.nu.as_slice()).map(|(a, b)| (a - b).abs()).sum()
}

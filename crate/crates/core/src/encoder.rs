//! Circuit-to-matrix semantics.
//!
//! Register layout on `2m + w` qubits (`w` data wires):
//!
//! ```text
//! [ aux first halves (m) | aux second halves (m) | data (w) ]
//! ```
//!
//! Aux qubit `k` is Bell-paired with aux qubit `m + k`; the ansatz acts on
//! the second halves and the data wires. Row `i` of the matrix is the
//! outcome distribution over the data wires when they start in `|i⟩`, so
//!
//! ```text
//! Q_ij = 2^{-m} Σ_{a,b} |U_{(j,b),(i,a)}|²
//! ```
//!
//! which is doubly stochastic for every unitary `U`. Rows are simulated one
//! at a time on `2m + w` qubits (the input register is replaced by classical
//! row selection).
//!
//! For transport prediction the ansatz gets one extra data wire, the
//! quadrant selector. Feeding it `|0⟩` selects the top half of the order-`2d`
//! matrix; leaving it unmeasured sums the two top quadrants ("atop").

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ansatz::{build_ansatz, AnsatzKind, AnsatzSpec};
use crate::error::{invalid, Error, Result};
use crate::mathcore::{
    birkhoff_project, kl_project_rowstochastic, rescale_rows, DoublyStochasticMatrix,
    FrequencyMatrix, QuasiDistribution, RowStochasticMatrix, TransportPlan,
};
use crate::qsim::{self, marginal_probs, prepare_bell_pairs, ParamCircuit, StateVector, MAX_QUBITS};
use crate::{parallel, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// `Q1 + Q2`: marginalize the selector output.
    Atop,
    /// `Q1` with each row renormalized.
    Asis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Exact,
    Shots(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// Row-stochastic transport patterns through a quadrant selector.
    Transport,
    /// The doubly stochastic matrix itself.
    Dsm,
}

/// How shots are distributed over rows when sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowSampling {
    /// Even split; the remainder goes to the lowest row indices.
    #[default]
    Stratified,
    /// Each shot picks its row uniformly at random.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingSpec {
    /// Entities are `d = 2^n`.
    pub n: usize,
    /// Aux Bell pairs.
    pub m: usize,
    pub target: Target,
    pub ansatz: AnsatzSpec,
    pub aggregation: Aggregation,
    pub mode: Mode,
    #[serde(default)]
    pub row_sampling: RowSampling,
}

impl EncodingSpec {
    pub fn new(target: Target, kind: AnsatzKind, n: usize, m: usize, layers: usize, context_dim: usize) -> Self {
        let data = n + usize::from(target == Target::Transport);
        Self {
            n,
            m,
            target,
            ansatz: AnsatzSpec::new(kind, data, layers, context_dim).with_aux(m),
            aggregation: Aggregation::Atop,
            mode: Mode::Exact,
            row_sampling: RowSampling::Stratified,
        }
    }

    pub fn transport(kind: AnsatzKind, n: usize, m: usize, layers: usize, context_dim: usize) -> Self {
        Self::new(Target::Transport, kind, n, m, layers, context_dim)
    }

    pub fn dsm(kind: AnsatzKind, n: usize, m: usize, layers: usize, context_dim: usize) -> Self {
        Self::new(Target::Dsm, kind, n, m, layers, context_dim)
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    /// Number of entities of the predicted matrix.
    pub fn d(&self) -> usize {
        1 << self.n
    }

    pub fn data_wires(&self) -> usize {
        self.n + usize::from(self.target == Target::Transport)
    }

    pub fn total_qubits(&self) -> usize {
        2 * self.m + self.data_wires()
    }

    pub fn context_dim(&self) -> usize {
        self.ansatz.encoding.context_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return invalid("at least one aux qubit is required (Schmidt rank > 1)");
        }
        self.validate_shape()
    }

    fn validate_shape(&self) -> Result<()> {
        self.ansatz.validate()?;
        if self.ansatz.data_qubits != self.data_wires() || self.ansatz.aux_qubits != self.m {
            return invalid(format!(
                "ansatz wires ({} data, {} aux) do not match the encoding ({} data, {} aux)",
                self.ansatz.data_qubits,
                self.ansatz.aux_qubits,
                self.data_wires(),
                self.m
            ));
        }
        if self.total_qubits() > MAX_QUBITS {
            return Err(Error::Capacity {
                requested: self.total_qubits(),
                limit: MAX_QUBITS,
            });
        }
        if let Mode::Shots(0) = self.mode {
            return invalid("shot count must be at least 1");
        }
        Ok(())
    }
}

/// A bound circuit ready for row simulation.
struct Encoded {
    circuit: ParamCircuit,
    m: usize,
    w: usize,
}

impl Encoded {
    /// Bell pairs on the aux halves followed by `unitary` on
    /// (aux second halves ⊗ data); `unitary` numbers data wires first.
    fn new(unitary: &ParamCircuit, m: usize, w: usize) -> Result<Self> {
        let total = 2 * m + w;
        let mut circuit = ParamCircuit::new(total);
        circuit.append_mapped(&prepare_bell_pairs(m), &(0..2 * m).collect::<Vec<_>>())?;
        let wires: Vec<usize> = (2 * m..total).chain(m..2 * m).collect();
        circuit.append_mapped(unitary, &wires)?;
        Ok(Self { circuit, m, w })
    }

    fn data_wires(&self) -> Vec<usize> {
        (2 * self.m..2 * self.m + self.w).collect()
    }

    fn state_for_row(&self, input: usize) -> Result<StateVector> {
        qsim::run_circuit(&self.circuit, input)
    }

    fn full_row(&self, input: usize) -> Result<Vec<f64>> {
        marginal_probs(&self.state_for_row(input)?, &self.data_wires())
    }

    fn dsm(&self) -> Result<Matrix> {
        let dim = 1 << self.w;
        let rows = parallel::try_map(dim, |i| self.full_row(i))?;
        Ok(Matrix::from_fn(dim, dim, |i, j| rows[i][j]))
    }
}

fn encode(spec: &EncodingSpec, theta: &[f64], context: &[f64]) -> Result<Encoded> {
    spec.validate()?;
    let u = build_ansatz(&spec.ansatz, theta, context)?;
    Encoded::new(&u, spec.m, spec.data_wires())
}

/// The doubly stochastic matrix of order `2^w` encoded by the circuit.
pub fn exact_dsm(spec: &EncodingSpec, theta: &[f64], context: &[f64]) -> Result<DoublyStochasticMatrix> {
    DoublyStochasticMatrix::new(encode(spec, theta, context)?.dsm()?)
}

/// Transport-mode helpers: where the selector sits among the data wires.
fn selector_bit(spec: &EncodingSpec) -> usize {
    spec.data_wires() - 1 - spec.ansatz.selector_qubit
}

/// Data-register index of pattern index `j` with a zero inserted at bit `b`
/// (the selector at `|0⟩`).
fn insert_zero_bit(b: usize, j: usize) -> usize {
    ((j >> b) << (b + 1)) | (j & ((1 << b) - 1))
}

fn transport_input(spec: &EncodingSpec, row: usize) -> usize {
    insert_zero_bit(selector_bit(spec), row)
}

fn check_row(spec: &EncodingSpec, row: usize) -> Result<()> {
    if row >= spec.d() {
        return invalid(format!("row {row} out of range for d = {}", spec.d()));
    }
    Ok(())
}

fn conditional(spec: &EncodingSpec, enc: &Encoded, row: usize) -> Result<Vec<f64>> {
    match spec.target {
        Target::Dsm => enc.full_row(row),
        Target::Transport => {
            let state = enc.state_for_row(transport_input(spec, row))?;
            match spec.aggregation {
                Aggregation::Atop => {
                    let sel = enc.data_wires()[spec.ansatz.selector_qubit];
                    let wires: Vec<usize> = enc.data_wires().into_iter().filter(|w| *w != sel).collect();
                    marginal_probs(&state, &wires)
                }
                Aggregation::Asis => {
                    let full = marginal_probs(&state, &enc.data_wires())?;
                    let b = selector_bit(spec);
                    let top: Vec<f64> = (0..spec.d()).map(|j| full[insert_zero_bit(b, j)]).collect();
                    let mass: f64 = top.iter().sum();
                    if mass <= 0.0 {
                        return invalid(format!("row {row} has no mass in the selected quadrant"));
                    }
                    Ok(top.into_iter().map(|v| v / mass).collect())
                }
            }
        }
    }
}

/// Output distribution over the measured data wires for input row `row`.
///
/// In transport mode the selector input is `|0⟩` and the aggregation flag
/// decides how the selector output is handled.
pub fn row_conditional(spec: &EncodingSpec, theta: &[f64], context: &[f64], row: usize) -> Result<Vec<f64>> {
    check_row(spec, row)?;
    let enc = encode(spec, theta, context)?;
    conditional(spec, &enc, row)
}

/// Samples `shots` (row, column) pairs.
pub fn sampled_frequency<R: Rng + ?Sized>(
    spec: &EncodingSpec,
    theta: &[f64],
    context: &[f64],
    shots: u64,
    rng: &mut R,
) -> Result<FrequencyMatrix> {
    if shots == 0 {
        return invalid("shots must be at least 1");
    }
    let enc = encode(spec, theta, context)?;
    let d = spec.d();
    let per_row: Vec<u64> = match spec.row_sampling {
        RowSampling::Stratified => {
            let base = shots / d as u64;
            let extra = (shots % d as u64) as usize;
            (0..d).map(|i| base + u64::from(i < extra)).collect()
        }
        RowSampling::Uniform => qsim::multinomial(&vec![1.0 / d as f64; d], shots, rng),
    };
    let mut counts = vec![0u64; d * d];
    for (row, k) in per_row.iter().enumerate() {
        if *k == 0 {
            continue;
        }
        let probs = match (spec.target, spec.aggregation) {
            (Target::Transport, Aggregation::Asis) => {
                // Measure everything; keep only selector-0 outcomes.
                let state = enc.state_for_row(transport_input(spec, row))?;
                let full = marginal_probs(&state, &enc.data_wires())?;
                let drawn = qsim::multinomial(&full, *k, rng);
                let b = selector_bit(spec);
                for j in 0..d {
                    counts[row * d + j] += drawn[insert_zero_bit(b, j)];
                }
                continue;
            }
            _ => conditional(spec, &enc, row)?,
        };
        let drawn = qsim::multinomial(&probs, *k, rng);
        for (j, c) in drawn.into_iter().enumerate() {
            counts[row * d + j] += c;
        }
    }
    FrequencyMatrix::new(d, counts)
}

/// The row-stochastic transport pattern `T̂(p)`.
pub fn predict_rowstochastic<R: Rng + ?Sized>(
    spec: &EncodingSpec,
    theta: &[f64],
    context: &[f64],
    rng: &mut R,
) -> Result<RowStochasticMatrix> {
    if spec.target != Target::Transport {
        return invalid("row-stochastic prediction needs a transport encoding");
    }
    match spec.mode {
        Mode::Exact => {
            let enc = encode(spec, theta, context)?;
            let d = spec.d();
            let rows = parallel::try_map(d, |i| conditional(spec, &enc, i))?;
            RowStochasticMatrix::new(Matrix::from_fn(d, d, |i, j| rows[i][j]))
        }
        Mode::Shots(shots) => kl_project_rowstochastic(&sampled_frequency(spec, theta, context, shots, rng)?),
    }
}

/// The doubly stochastic prediction for the relaxed assignment task;
/// sampled estimates are projected back onto the Birkhoff polytope.
pub fn predict_dsm<R: Rng + ?Sized>(
    spec: &EncodingSpec,
    theta: &[f64],
    context: &[f64],
    rng: &mut R,
) -> Result<DoublyStochasticMatrix> {
    if spec.target != Target::Dsm {
        return invalid("DSM prediction needs a dsm encoding");
    }
    match spec.mode {
        Mode::Exact => exact_dsm(spec, theta, context),
        Mode::Shots(shots) => {
            let f = sampled_frequency(spec, theta, context, shots, rng)?;
            birkhoff_project(&(f.relative() * spec.d() as f64))
        }
    }
}

/// `D_μ T̂(p)`.
pub fn predict_plan<R: Rng + ?Sized>(
    spec: &EncodingSpec,
    theta: &[f64],
    context: &[f64],
    mu: &QuasiDistribution,
    rng: &mut R,
) -> Result<TransportPlan> {
    if mu.len() != spec.d() {
        return Err(Error::DimensionMismatch {
            expected: spec.d(),
            found: mu.len(),
        });
    }
    rescale_rows(&predict_rowstochastic(spec, theta, context, rng)?, mu)
}

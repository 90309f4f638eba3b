//! Exact statevector simulation.
//!
//! Bit order: qubit 0 is the most significant bit of a basis index, so on
//! `q` qubits qubit `k` lives at bit `q - 1 - k`. Every routine here
//! (`run_circuit`, `marginal_probs`, `sample`, `dense_unitary`) uses that
//! convention; subsets of qubits likewise list their most significant
//! member first.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Largest register the simulator will allocate.
pub const MAX_QUBITS: usize = 26;
/// Largest register for which a dense unitary is built.
pub const MAX_DENSE_QUBITS: usize = 12;

type C = Complex64;
type Mat2 = [[C; 2]; 2];
type Mat4 = [[C; 4]; 4];

const ZERO: C = C::new(0.0, 0.0);
const ONE: C = C::new(1.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateKind {
    H,
    X,
    /// Targets `[control, target]`.
    CX,
    RZ,
    RY,
    /// z-y-z Euler rotation: `RZ(p2)·RY(p1)·RZ(p0)`, identity at zero.
    SU2,
    /// Two-qubit Pauli rotations `exp(−iθ/2 P⊗P)`.
    XX,
    YY,
    ZZ,
}

impl GateKind {
    pub fn arity(self) -> usize {
        match self {
            GateKind::CX | GateKind::XX | GateKind::YY | GateKind::ZZ => 2,
            _ => 1,
        }
    }

    pub fn param_count(self) -> usize {
        match self {
            GateKind::H | GateKind::X | GateKind::CX => 0,
            GateKind::SU2 => 3,
            _ => 1,
        }
    }
}

/// One gate of a circuit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateOp {
    pub kind: GateKind,
    pub targets: Vec<usize>,
    #[serde(default)]
    pub params: Vec<f64>,
}

impl GateOp {
    fn new(kind: GateKind, targets: Vec<usize>, params: Vec<f64>) -> Self {
        Self {
            kind,
            targets,
            params,
        }
    }

    pub fn h(q: usize) -> Self {
        Self::new(GateKind::H, vec![q], vec![])
    }

    pub fn x(q: usize) -> Self {
        Self::new(GateKind::X, vec![q], vec![])
    }

    pub fn cx(control: usize, target: usize) -> Self {
        Self::new(GateKind::CX, vec![control, target], vec![])
    }

    pub fn rz(q: usize, angle: f64) -> Self {
        Self::new(GateKind::RZ, vec![q], vec![angle])
    }

    pub fn ry(q: usize, angle: f64) -> Self {
        Self::new(GateKind::RY, vec![q], vec![angle])
    }

    pub fn su2(q: usize, euler: [f64; 3]) -> Self {
        Self::new(GateKind::SU2, vec![q], euler.to_vec())
    }

    pub fn pauli_rot(axis: GateKind, a: usize, b: usize, angle: f64) -> Self {
        debug_assert!(matches!(axis, GateKind::XX | GateKind::YY | GateKind::ZZ));
        Self::new(axis, vec![a, b], vec![angle])
    }

    pub fn validate(&self, qubit_count: usize) -> Result<()> {
        if self.targets.len() != self.kind.arity() {
            return invalid(format!(
                "{:?} takes {} target(s), got {}",
                self.kind,
                self.kind.arity(),
                self.targets.len()
            ));
        }
        if self.params.len() != self.kind.param_count() {
            return invalid(format!(
                "{:?} takes {} parameter(s), got {}",
                self.kind,
                self.kind.param_count(),
                self.params.len()
            ));
        }
        if let Some(q) = self.targets.iter().find(|q| **q >= qubit_count) {
            return invalid(format!("qubit {q} out of range for a {qubit_count}-qubit register"));
        }
        if self.targets.len() == 2 && self.targets[0] == self.targets[1] {
            return invalid(format!("{:?} targets must be distinct", self.kind));
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return invalid(format!("{:?} has a non-finite angle", self.kind));
        }
        Ok(())
    }

    fn matrix1(&self) -> Mat2 {
        match self.kind {
            GateKind::H => {
                let h = C::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
                [[h, h], [h, -h]]
            }
            GateKind::X => [[ZERO, ONE], [ONE, ZERO]],
            GateKind::RZ => rz(self.params[0]),
            GateKind::RY => ry(self.params[0]),
            GateKind::SU2 => {
                let p = &self.params;
                mul2(&rz(p[2]), &mul2(&ry(p[1]), &rz(p[0])))
            }
            _ => unreachable!("not a single-qubit gate"),
        }
    }

    fn matrix2(&self) -> Mat4 {
        let half = self.params[0] / 2.0;
        let (c, s) = (half.cos(), half.sin());
        let pauli = match self.kind {
            GateKind::XX => [[ZERO, ONE], [ONE, ZERO]],
            GateKind::YY => [[ZERO, C::new(0.0, -1.0)], [C::new(0.0, 1.0), ZERO]],
            GateKind::ZZ => [[ONE, ZERO], [ZERO, -ONE]],
            _ => unreachable!("not a Pauli rotation"),
        };
        let mut m = [[ZERO; 4]; 4];
        for (r, row) in m.iter_mut().enumerate() {
            for (col, v) in row.iter_mut().enumerate() {
                let pp = pauli[r >> 1][col >> 1] * pauli[r & 1][col & 1];
                *v = C::new(0.0, -s) * pp + if r == col { C::new(c, 0.0) } else { ZERO };
            }
        }
        m
    }
}

fn rz(angle: f64) -> Mat2 {
    let h = angle / 2.0;
    [[C::from_polar(1.0, -h), ZERO], [ZERO, C::from_polar(1.0, h)]]
}

fn ry(angle: f64) -> Mat2 {
    let (s, c) = (angle / 2.0).sin_cos();
    [[C::new(c, 0.0), C::new(-s, 0.0)], [C::new(s, 0.0), C::new(c, 0.0)]]
}

fn mul2(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[ZERO; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

/// An ordered gate program on a fixed register.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamCircuit {
    qubit_count: usize,
    gates: Vec<GateOp>,
}

impl ParamCircuit {
    pub fn new(qubit_count: usize) -> Self {
        Self {
            qubit_count,
            gates: Vec::new(),
        }
    }

    pub fn from_gates(qubit_count: usize, gates: Vec<GateOp>) -> Result<Self> {
        let mut c = Self::new(qubit_count);
        for g in gates {
            c.push(g)?;
        }
        Ok(c)
    }

    pub fn qubit_count(&self) -> usize {
        self.qubit_count
    }

    pub fn gates(&self) -> &[GateOp] {
        &self.gates
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }

    pub fn push(&mut self, gate: GateOp) -> Result<()> {
        gate.validate(self.qubit_count)?;
        self.gates.push(gate);
        Ok(())
    }

    /// Appends `fragment` with its qubit `k` placed on `wires[k]` of `self`.
    pub fn append_mapped(&mut self, fragment: &ParamCircuit, wires: &[usize]) -> Result<()> {
        if wires.len() != fragment.qubit_count {
            return Err(Error::DimensionMismatch {
                expected: fragment.qubit_count,
                found: wires.len(),
            });
        }
        for g in &fragment.gates {
            let targets = g.targets.iter().map(|t| wires[*t]).collect();
            self.push(GateOp::new(g.kind, targets, g.params.clone()))?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("circuits always serialize")
    }

    /// Parses and validates a circuit.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: ParamCircuit = serde_json::from_str(text)?;
        Self::from_gates(raw.qubit_count, raw.gates)
    }
}

/// Normalized amplitudes of a `q`-qubit register.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    qubits: usize,
    amps: Vec<C>,
}

impl StateVector {
    pub fn basis(qubits: usize, index: usize) -> Result<Self> {
        check_capacity(qubits)?;
        let dim = 1usize << qubits;
        if index >= dim {
            return invalid(format!("basis index {index} out of range for {qubits} qubits"));
        }
        let mut amps = vec![ZERO; dim];
        amps[index] = ONE;
        Ok(Self { qubits, amps })
    }

    pub fn from_amplitudes(amps: Vec<C>) -> Result<Self> {
        let dim = amps.len();
        if dim == 0 || !dim.is_power_of_two() {
            return invalid(format!("amplitude count {dim} is not a power of two"));
        }
        let qubits = dim.trailing_zeros() as usize;
        check_capacity(qubits)?;
        let s = Self { qubits, amps };
        if (s.norm_sqr() - 1.0).abs() > 1e-9 {
            return invalid(format!("state has squared norm {}", s.norm_sqr()));
        }
        Ok(s)
    }

    pub fn qubit_count(&self) -> usize {
        self.qubits
    }

    pub fn amplitudes(&self) -> &[C] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    fn mask(&self, qubit: usize) -> usize {
        1 << (self.qubits - 1 - qubit)
    }

    /// Applies a gate validated against this register.
    pub fn apply(&mut self, gate: &GateOp) -> Result<()> {
        gate.validate(self.qubits)?;
        self.apply_unchecked(gate);
        Ok(())
    }

    fn apply_unchecked(&mut self, gate: &GateOp) {
        match gate.kind {
            GateKind::CX => {
                let cm = self.mask(gate.targets[0]);
                let tm = self.mask(gate.targets[1]);
                for i in 0..self.amps.len() {
                    if i & cm != 0 && i & tm == 0 {
                        self.amps.swap(i, i | tm);
                    }
                }
            }
            GateKind::XX | GateKind::YY | GateKind::ZZ => {
                let m0 = self.mask(gate.targets[0]);
                let m1 = self.mask(gate.targets[1]);
                self.apply_two(m0, m1, &gate.matrix2());
            }
            _ => {
                let m = self.mask(gate.targets[0]);
                self.apply_one(m, &gate.matrix1());
            }
        }
    }

    fn apply_one(&mut self, mask: usize, u: &Mat2) {
        let n = self.amps.len();
        let mut base = 0;
        while base < n {
            for i in base..base + mask {
                let j = i | mask;
                let (a, b) = (self.amps[i], self.amps[j]);
                self.amps[i] = u[0][0] * a + u[0][1] * b;
                self.amps[j] = u[1][0] * a + u[1][1] * b;
            }
            base += 2 * mask;
        }
    }

    /// `m0` is the more significant bit of the local two-qubit basis.
    fn apply_two(&mut self, m0: usize, m1: usize, u: &Mat4) {
        for i in 0..self.amps.len() {
            if i & (m0 | m1) != 0 {
                continue;
            }
            let idx = [i, i | m1, i | m0, i | m0 | m1];
            let v = idx.map(|k| self.amps[k]);
            for (r, k) in idx.iter().enumerate() {
                self.amps[*k] = u[r][0] * v[0] + u[r][1] * v[1] + u[r][2] * v[2] + u[r][3] * v[3];
            }
        }
    }

    pub fn run(&mut self, circuit: &ParamCircuit) -> Result<()> {
        if circuit.qubit_count != self.qubits {
            return Err(Error::DimensionMismatch {
                expected: self.qubits,
                found: circuit.qubit_count,
            });
        }
        // Gates were validated on insertion into the circuit.
        for g in &circuit.gates {
            self.apply_unchecked(g);
        }
        Ok(())
    }
}

fn check_capacity(qubits: usize) -> Result<()> {
    if qubits > MAX_QUBITS {
        return Err(Error::Capacity {
            requested: qubits,
            limit: MAX_QUBITS,
        });
    }
    Ok(())
}

/// Applies `circuit` to the computational basis state `init`.
pub fn run_circuit(circuit: &ParamCircuit, init: usize) -> Result<StateVector> {
    let mut state = StateVector::basis(circuit.qubit_count, init)?;
    state.run(circuit)?;
    Ok(state)
}

/// Fragment on `2n` qubits preparing `2^{-n/2} Σ_i |i⟩|i⟩` from `|0…0⟩`:
/// qubit `k` of the first half is paired with qubit `n + k`.
pub fn prepare_bell_pairs(n: usize) -> ParamCircuit {
    let mut c = ParamCircuit::new(2 * n);
    for k in 0..n {
        c.gates.push(GateOp::h(k));
        c.gates.push(GateOp::cx(k, n + k));
    }
    c
}

fn check_subset(state: &StateVector, qubits: &[usize]) -> Result<()> {
    if qubits.is_empty() {
        return invalid("qubit subset must be non-empty");
    }
    for (i, q) in qubits.iter().enumerate() {
        if *q >= state.qubits {
            return invalid(format!("qubit {q} out of range for {} qubits", state.qubits));
        }
        if qubits[..i].contains(q) {
            return invalid(format!("qubit {q} listed twice"));
        }
    }
    Ok(())
}

/// Outcome distribution of measuring `qubits` (first listed = most
/// significant outcome bit), i.e. the diagonal of the reduced density matrix.
pub fn marginal_probs(state: &StateVector, qubits: &[usize]) -> Result<Vec<f64>> {
    check_subset(state, qubits)?;
    let masks: Vec<usize> = qubits.iter().map(|q| state.mask(*q)).collect();
    let k = masks.len();
    let mut probs = vec![0.0; 1 << k];
    for (i, a) in state.amps.iter().enumerate() {
        let mut outcome = 0;
        for (t, m) in masks.iter().enumerate() {
            if i & m != 0 {
                outcome |= 1 << (k - 1 - t);
            }
        }
        probs[outcome] += a.norm_sqr();
    }
    Ok(probs)
}

/// Measures `qubits` `shots` times; returns counts per outcome.
pub fn sample<R: Rng + ?Sized>(
    state: &StateVector,
    qubits: &[usize],
    shots: u64,
    rng: &mut R,
) -> Result<Vec<u64>> {
    if shots == 0 {
        return invalid("shots must be at least 1");
    }
    let probs = marginal_probs(state, qubits)?;
    Ok(multinomial(&probs, shots, rng))
}

/// Multinomial draw by sequential conditional binomials.
pub(crate) fn multinomial<R: Rng + ?Sized>(probs: &[f64], shots: u64, rng: &mut R) -> Vec<u64> {
    let mut counts = vec![0; probs.len()];
    let mut remaining = shots;
    let mut mass: f64 = probs.iter().sum();
    for (k, p) in probs.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if k + 1 == probs.len() {
            counts[k] = remaining;
            break;
        }
        let q = if mass > 0.0 { (p / mass).clamp(0.0, 1.0) } else { 0.0 };
        let n = Binomial::new(remaining, q)
            .expect("probability clamped to [0, 1]")
            .sample(rng);
        counts[k] = n;
        remaining -= n;
        mass -= p;
    }
    counts
}

/// The full `2^q × 2^q` unitary of a circuit, column `j` = image of `|j⟩`.
pub fn dense_unitary(circuit: &ParamCircuit) -> Result<DMatrix<C>> {
    let q = circuit.qubit_count;
    if q > MAX_DENSE_QUBITS {
        return Err(Error::Capacity {
            requested: q,
            limit: MAX_DENSE_QUBITS,
        });
    }
    let dim = 1 << q;
    let mut u = DMatrix::zeros(dim, dim);
    for j in 0..dim {
        let state = run_circuit(circuit, j)?;
        u.column_mut(j).copy_from_slice(&state.amps);
    }
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mathcore::unitarity_residual;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    const S: f64 = std::f64::consts::FRAC_1_SQRT_2;

    fn close(a: C, b: C) -> bool {
        (a - b).norm() < 1e-12
    }

    fn random_circuit(q: usize, len: usize, rng: &mut ChaCha8Rng) -> ParamCircuit {
        let mut c = ParamCircuit::new(q);
        for _ in 0..len {
            let a = rng.random_range(0..q);
            let mut b = rng.random_range(0..q);
            if q > 1 {
                while b == a {
                    b = rng.random_range(0..q);
                }
            }
            let t: f64 = rng.random_range(-3.0..3.0);
            let g = match rng.random_range(0..if q > 1 { 9 } else { 5 }) {
                0 => GateOp::h(a),
                1 => GateOp::x(a),
                2 => GateOp::rz(a, t),
                3 => GateOp::ry(a, t),
                4 => GateOp::su2(a, [t, 0.5 * t, -t]),
                5 => GateOp::cx(a, b),
                6 => GateOp::pauli_rot(GateKind::XX, a, b, t),
                7 => GateOp::pauli_rot(GateKind::YY, a, b, t),
                _ => GateOp::pauli_rot(GateKind::ZZ, a, b, t),
            };
            c.push(g).unwrap();
        }
        c
    }

    fn random_state(q: usize, rng: &mut ChaCha8Rng) -> StateVector {
        let mut amps: Vec<C> = (0..1 << q)
            .map(|_| C::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        let n: f64 = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        amps.iter_mut().for_each(|a| *a /= n);
        StateVector::from_amplitudes(amps).unwrap()
    }

    #[test]
    fn empty_circuit_keeps_basis_state() {
        let s = run_circuit(&ParamCircuit::new(3), 0).unwrap();
        assert_eq!(s.amplitudes()[0], ONE);
        assert!(s.amplitudes()[1..].iter().all(|a| *a == ZERO));
    }

    #[test]
    fn hadamard_on_single_qubit() {
        let c = ParamCircuit::from_gates(1, vec![GateOp::h(0)]).unwrap();
        let s = run_circuit(&c, 0).unwrap();
        assert!(close(s.amplitudes()[0], C::new(S, 0.0)));
        assert!(close(s.amplitudes()[1], C::new(S, 0.0)));
    }

    #[test]
    fn double_x_is_identity() {
        let c = ParamCircuit::from_gates(2, vec![GateOp::x(1), GateOp::x(1)]).unwrap();
        for init in 0..4 {
            let s = run_circuit(&c, init).unwrap();
            assert_eq!(s, StateVector::basis(2, init).unwrap());
        }
    }

    #[test]
    fn out_of_range_qubit_is_rejected() {
        let mut c = ParamCircuit::new(2);
        assert!(c.push(GateOp::h(2)).is_err());
        assert!(c.push(GateOp::cx(1, 1)).is_err());
        assert!(c.push(GateOp::rz(0, f64::NAN)).is_err());
        assert!(run_circuit(&c, 4).is_err());
    }

    #[test]
    fn register_cap_is_enforced() {
        assert!(matches!(
            StateVector::basis(MAX_QUBITS + 1, 0),
            Err(Error::Capacity { .. })
        ));
        assert!(matches!(
            dense_unitary(&ParamCircuit::new(MAX_DENSE_QUBITS + 1)),
            Err(Error::Capacity { .. })
        ));
    }

    #[test]
    fn bell_pairs() {
        let s = run_circuit(&prepare_bell_pairs(1), 0).unwrap();
        let a = s.amplitudes();
        assert!(close(a[0], C::new(S, 0.0)) && close(a[3], C::new(S, 0.0)));
        assert!(close(a[1], ZERO) && close(a[2], ZERO));

        let s = run_circuit(&prepare_bell_pairs(2), 0).unwrap();
        for (idx, a) in s.amplitudes().iter().enumerate() {
            let expected = if idx >> 2 == idx & 3 { 0.5 } else { 0.0 };
            assert!(close(*a, C::new(expected, 0.0)), "index {idx}: {a}");
        }

        let s = run_circuit(&prepare_bell_pairs(1), 0).unwrap();
        for q in 0..2 {
            let p = marginal_probs(&s, &[q]).unwrap();
            assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);
        }
        let p = marginal_probs(&s, &[0, 1]).unwrap();
        let expected = [0.5, 0.0, 0.0, 0.5];
        assert!(p.iter().zip(expected).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn marginal_of_product_state() {
        // |01⟩: qubit 0 in |0⟩, qubit 1 in |1⟩.
        let s = StateVector::basis(2, 0b01).unwrap();
        assert_eq!(marginal_probs(&s, &[1]).unwrap(), vec![0.0, 1.0]);
        assert_eq!(marginal_probs(&s, &[0]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(marginal_probs(&s, &[1, 0]).unwrap(), vec![0.0, 0.0, 1.0, 0.0]);
        assert!(marginal_probs(&s, &[]).is_err());
        assert!(marginal_probs(&s, &[2]).is_err());
        assert!(marginal_probs(&s, &[0, 0]).is_err());
    }

    /// Diagonal of `Tr_{rest}(|ψ⟩⟨ψ|)` from the dense density matrix.
    fn partial_trace_diagonal(s: &StateVector, keep: &[usize]) -> Vec<f64> {
        let q = s.qubit_count();
        let dim = 1 << q;
        let a = s.amplitudes();
        let rho = DMatrix::from_fn(dim, dim, |i, j| a[i] * a[j].conj());
        let rest: Vec<usize> = (0..q).filter(|k| !keep.contains(k)).collect();
        let k = keep.len();
        let mut out = vec![0.0; 1 << k];
        for (o, slot) in out.iter_mut().enumerate() {
            for r in 0..1usize << rest.len() {
                let mut idx = 0;
                for (t, qb) in keep.iter().enumerate() {
                    if o >> (k - 1 - t) & 1 == 1 {
                        idx |= 1 << (q - 1 - qb);
                    }
                }
                for (t, qb) in rest.iter().enumerate() {
                    if r >> (rest.len() - 1 - t) & 1 == 1 {
                        idx |= 1 << (q - 1 - qb);
                    }
                }
                *slot += rho[(idx, idx)].re;
            }
        }
        out
    }

    #[test]
    fn marginals_match_dense_partial_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let s = random_state(3, &mut rng);
            for keep in [vec![0, 1], vec![2, 0], vec![1]] {
                let fast = marginal_probs(&s, &keep).unwrap();
                let slow = partial_trace_diagonal(&s, &keep);
                let diff = fast.iter().zip(&slow).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(diff < 1e-12, "{keep:?}: {diff}");
                assert!((fast.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sampling_deterministic_state() {
        let s = StateVector::basis(3, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let counts = sample(&s, &[0, 1, 2], 1000, &mut rng).unwrap();
        assert_eq!(counts[5], 1000);
        assert!(sample(&s, &[0], 0, &mut rng).is_err());
    }

    #[test]
    fn sampling_bell_state_is_binomial() {
        let s = run_circuit(&prepare_bell_pairs(1), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let counts = sample(&s, &[0, 1], 100_000, &mut rng).unwrap();
        assert_eq!(counts.iter().sum::<u64>(), 100_000);
        assert_eq!(counts[1] + counts[2], 0);
        // σ = sqrt(n p (1 − p)) ≈ 158.1
        let sigma = (100_000f64 * 0.25).sqrt();
        for k in [0, 3] {
            assert!((counts[k] as f64 - 50_000.0).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = random_state(4, &mut rng);
        let a = sample(&s, &[0, 2, 3], 5000, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let b = sample(&s, &[0, 2, 3], 5000, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dense_hadamard() {
        let u = dense_unitary(&ParamCircuit::from_gates(1, vec![GateOp::h(0)]).unwrap()).unwrap();
        let expected = [S, S, S, -S];
        for (k, e) in expected.iter().enumerate() {
            assert!(close(u[(k / 2, k % 2)], C::new(*e, 0.0)));
        }
    }

    #[test]
    fn dense_cx_uses_big_endian_order() {
        // Control qubit 1 (least significant), target qubit 0: swaps |01⟩ and |11⟩.
        let u = dense_unitary(&ParamCircuit::from_gates(2, vec![GateOp::cx(1, 0)]).unwrap()).unwrap();
        let perm = [0, 3, 2, 1];
        for (col, row) in perm.iter().enumerate() {
            for r in 0..4 {
                let expected = if r == *row { ONE } else { ZERO };
                assert_eq!(u[(r, col)], expected);
            }
        }
        // The same convention through run_circuit and marginals.
        let s = run_circuit(&ParamCircuit::from_gates(2, vec![GateOp::cx(1, 0)]).unwrap(), 0b01).unwrap();
        assert_eq!(marginal_probs(&s, &[0]).unwrap(), vec![0.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample(&s, &[0, 1], 10, &mut rng).unwrap(), vec![0, 0, 0, 10]);
    }

    #[test]
    fn generator_shape_at_zero_is_identity() {
        // (I⊗H)·CX·CX·(I⊗H) with control on qubit 1.
        let c = ParamCircuit::from_gates(
            2,
            vec![GateOp::h(1), GateOp::cx(1, 0), GateOp::rz(0, 0.0), GateOp::cx(1, 0), GateOp::h(1)],
        )
        .unwrap();
        let u = dense_unitary(&c).unwrap();
        assert!((u - DMatrix::<C>::identity(4, 4)).iter().all(|z| z.norm() < 1e-15));
    }

    #[test]
    fn pauli_rotations_match_closed_form() {
        // exp(−iθ/2 Z⊗Z) is diagonal with phases e^{∓iθ/2}.
        let t = 0.7;
        let u = dense_unitary(
            &ParamCircuit::from_gates(2, vec![GateOp::pauli_rot(GateKind::ZZ, 0, 1, t)]).unwrap(),
        )
        .unwrap();
        let phases = [-1.0, 1.0, 1.0, -1.0];
        for (k, s) in phases.iter().enumerate() {
            assert!(close(u[(k, k)], C::from_polar(1.0, s * t / 2.0)));
        }
        // XX couples |00⟩ with |11⟩.
        let u = dense_unitary(
            &ParamCircuit::from_gates(2, vec![GateOp::pauli_rot(GateKind::XX, 0, 1, t)]).unwrap(),
        )
        .unwrap();
        assert!(close(u[(3, 0)], C::new(0.0, -(t / 2.0).sin())));
        assert!(close(u[(0, 0)], C::new((t / 2.0).cos(), 0.0)));
    }

    #[test]
    fn circuit_json_roundtrip_and_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = random_circuit(3, 20, &mut rng);
        assert_eq!(ParamCircuit::from_json(&c.to_json()).unwrap(), c);
        let bad = r#"{"qubit_count":2,"gates":[{"kind":"CX","targets":[0,2],"params":[]}]}"#;
        assert!(ParamCircuit::from_json(bad).is_err());
        let bad = r#"{"qubit_count":2,"gates":[{"kind":"CCX","targets":[0,1],"params":[]}]}"#;
        assert!(ParamCircuit::from_json(bad).is_err());
        let bad = r#"{"qubit_count":2,"gates":[{"kind":"RZ","targets":[0],"params":[]}]}"#;
        assert!(ParamCircuit::from_json(bad).is_err());
    }

    proptest! {
        #[test]
        fn norm_is_preserved(seed in any::<u64>(), q in 1usize..7, len in 0usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = random_circuit(q, len, &mut rng);
            let init = rng.random_range(0..1usize << q);
            let s = run_circuit(&c, init).unwrap();
            prop_assert!((s.norm_sqr() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn statevector_agrees_with_dense(seed in any::<u64>(), q in 1usize..=8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = random_circuit(q, 25, &mut rng);
            let u = dense_unitary(&c).unwrap();
            prop_assert!(unitarity_residual(&u) < 1e-9);
            let init = rng.random_range(0..1usize << q);
            let s = run_circuit(&c, init).unwrap();
            let diff = s.amplitudes().iter().enumerate()
                .map(|(r, a)| (a - u[(r, init)]).norm())
                .fold(0.0, f64::max);
            prop_assert!(diff < 1e-10);
        }
    }
}

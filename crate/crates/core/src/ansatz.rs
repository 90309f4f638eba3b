//! Parameterized circuit families `U(p, θ)`.
//!
//! Two families share one brickwork layout over the ansatz wires:
//!
//! - **checkerboard**: every block is the two-qubit generator
//!   `(A ⊗ H)·CX·(RZ(α) ⊗ I)·CX·(C ⊗ H)`, which commutes with `X` on its
//!   Hadamard wire. Placing the quadrant-selector wire on the Hadamard side
//!   of every block it touches keeps the whole unitary of the form
//!   `I ⊗ A + X ⊗ B` with respect to the selector.
//! - **simple**: single-qubit `RZ`/`RY` on every wire followed by `XX`,
//!   `YY`, `ZZ` rotations on each brickwork pair; the identity when every
//!   bound angle is zero.
//!
//! Ansatz wire numbering: data wires `0..data_qubits` first, then aux wires.
//! The brickwork walks the wires starting at the selector, pairing positions
//! (0,1), (2,3), … then (1,2), (3,4), … within each layer.
//!
//! Every angle slot `k` carries a `(base, scale)` pair in `θ` and binds to
//! `base + scale · p[k mod s]`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::qsim::{GateKind, GateOp, ParamCircuit};
use crate::Matrix;

/// Angles of one checkerboard block: gate C, the RZ angle, gate A.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GeneratorParams {
    pub c_euler: [f64; 3],
    pub alpha: f64,
    pub a_euler: [f64; 3],
}

impl GeneratorParams {
    pub const LEN: usize = 7;

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            c_euler: [v[0], v[1], v[2]],
            alpha: v[3],
            a_euler: [v[4], v[5], v[6]],
        }
    }
}

/// Two-qubit generator fragment. Local qubit 0 carries the Hadamards and the
/// CX controls (the wire the pattern refers to); qubit 1 carries C, RZ, A.
pub fn checkerboard_generator(g: &GeneratorParams) -> ParamCircuit {
    let mut c = ParamCircuit::new(2);
    push_generator(&mut c, g, 0, 1);
    c
}

fn push_generator(c: &mut ParamCircuit, g: &GeneratorParams, pattern: usize, rot: usize) {
    let gates = [
        GateOp::su2(rot, g.c_euler),
        GateOp::h(pattern),
        GateOp::cx(pattern, rot),
        GateOp::rz(rot, g.alpha),
        GateOp::cx(pattern, rot),
        GateOp::su2(rot, g.a_euler),
        GateOp::h(pattern),
    ];
    for gate in gates {
        c.push(gate).expect("generator wires are validated by the layout");
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnsatzKind {
    Checkerboard,
    Simple,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingMode {
    Affine,
}

/// How the context vector enters the bound angles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextEncoding {
    pub mode: EncodingMode,
    pub context_dim: usize,
}

impl ContextEncoding {
    pub fn affine(context_dim: usize) -> Self {
        Self {
            mode: EncodingMode::Affine,
            context_dim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnsatzSpec {
    pub kind: AnsatzKind,
    pub data_qubits: usize,
    pub aux_qubits: usize,
    pub layers: usize,
    /// Reuse one layer's parameters in every layer.
    pub shared: bool,
    pub selector_qubit: usize,
    pub encoding: ContextEncoding,
}

impl AnsatzSpec {
    /// Unshared spec with `aux_qubits = data_qubits + 1` and the selector on
    /// data wire 0.
    pub fn new(kind: AnsatzKind, data_qubits: usize, layers: usize, context_dim: usize) -> Self {
        Self {
            kind,
            data_qubits,
            aux_qubits: data_qubits + 1,
            layers,
            shared: false,
            selector_qubit: 0,
            encoding: ContextEncoding::affine(context_dim),
        }
    }

    pub fn with_aux(mut self, aux_qubits: usize) -> Self {
        self.aux_qubits = aux_qubits;
        self
    }

    pub fn with_shared(mut self, shared: bool) -> Self {
        self.shared = shared;
        self
    }

    pub fn wires(&self) -> usize {
        self.data_qubits + self.aux_qubits
    }

    pub fn validate(&self) -> Result<()> {
        if self.data_qubits == 0 {
            return invalid("ansatz needs at least one data wire");
        }
        if self.layers == 0 {
            return invalid("ansatz needs at least one layer");
        }
        if self.selector_qubit >= self.data_qubits {
            return invalid(format!(
                "selector wire {} is not a data wire (data wires: {})",
                self.selector_qubit, self.data_qubits
            ));
        }
        if self.encoding.context_dim == 0 {
            return invalid("context dimension must be at least 1");
        }
        Ok(())
    }

    /// Wires in brickwork order: the selector first, then the rest ascending.
    fn wire_order(&self) -> Vec<usize> {
        std::iter::once(self.selector_qubit)
            .chain((0..self.wires()).filter(|w| *w != self.selector_qubit))
            .collect()
    }

    /// `(even, odd)` sublayer pairs as `(first, second)` wire indices.
    fn pairs(&self) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
        let order = self.wire_order();
        let even = order.chunks_exact(2).map(|p| (p[0], p[1])).collect();
        let odd = order[1..].chunks_exact(2).map(|p| (p[0], p[1])).collect();
        (even, odd)
    }

    fn angles_per_layer(&self) -> usize {
        let w = self.wires();
        let pairs = w.saturating_sub(1);
        match self.kind {
            AnsatzKind::Checkerboard => GeneratorParams::LEN * pairs,
            AnsatzKind::Simple => 2 * w + 3 * pairs,
        }
    }

    fn angle_slots(&self) -> usize {
        let per = self.angles_per_layer();
        if self.shared {
            per
        } else {
            per * self.layers
        }
    }
}

/// Number of learnable reals: a `(base, scale)` pair per angle slot.
pub fn param_count(spec: &AnsatzSpec) -> usize {
    2 * spec.angle_slots()
}

/// Learnable parameters `θ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterVector(pub Vec<f64>);

impl ParameterVector {
    pub fn zeros(spec: &AnsatzSpec) -> Self {
        Self(vec![0.0; param_count(spec)])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn bind_angles(spec: &AnsatzSpec, theta: &[f64], context: &[f64]) -> Result<Vec<f64>> {
    spec.validate()?;
    if theta.len() != param_count(spec) {
        return Err(Error::DimensionMismatch {
            expected: param_count(spec),
            found: theta.len(),
        });
    }
    if context.len() != spec.encoding.context_dim {
        return Err(Error::DimensionMismatch {
            expected: spec.encoding.context_dim,
            found: context.len(),
        });
    }
    if theta.iter().chain(context).any(|v| !v.is_finite()) {
        return invalid("parameters and context must be finite");
    }
    let s = context.len();
    let slots = spec.angle_slots();
    let per_layer = spec.angles_per_layer();
    let bound: Vec<f64> = (0..slots)
        .map(|k| theta[2 * k] + theta[2 * k + 1] * context[k % s])
        .collect();
    Ok((0..per_layer * spec.layers)
        .map(|i| if spec.shared { bound[i % per_layer] } else { bound[i] })
        .collect())
}

/// Builds `U(p, θ)` on `spec.wires()` qubits.
pub fn build_ansatz(spec: &AnsatzSpec, theta: &[f64], context: &[f64]) -> Result<ParamCircuit> {
    let angles = bind_angles(spec, theta, context)?;
    let mut circuit = ParamCircuit::new(spec.wires());
    let (even, odd) = spec.pairs();
    let mut next = angles.iter().copied();
    let mut take = || next.next().expect("angle count matches the layout");
    for _ in 0..spec.layers {
        match spec.kind {
            AnsatzKind::Checkerboard => {
                for &(h, r) in even.iter().chain(&odd) {
                    let mut g = [0.0; GeneratorParams::LEN];
                    g.iter_mut().for_each(|v| *v = take());
                    push_generator(&mut circuit, &GeneratorParams::from_slice(&g), h, r);
                }
            }
            AnsatzKind::Simple => {
                for w in spec.wire_order() {
                    circuit.push(GateOp::rz(w, take()))?;
                    circuit.push(GateOp::ry(w, take()))?;
                }
                for &(a, b) in even.iter().chain(&odd) {
                    for axis in [GateKind::XX, GateKind::YY, GateKind::ZZ] {
                        circuit.push(GateOp::pauli_rot(axis, a, b, take()))?;
                    }
                }
            }
        }
    }
    Ok(circuit)
}

/// Max of `|U_ij − U_{i⊕s, j⊕s}|` where `s` flips the selector bit; zero iff
/// `U = I ⊗ A + X ⊗ B` with respect to that wire.
pub fn selector_pattern_residual(u: &DMatrix<Complex64>, qubits: usize, selector: usize) -> f64 {
    let flip = 1 << (qubits - 1 - selector);
    let mut worst = 0.0f64;
    for i in 0..u.nrows() {
        for j in 0..u.ncols() {
            worst = worst.max((u[(i, j)] - u[(i ^ flip, j ^ flip)]).norm());
        }
    }
    worst
}

/// `max|Q1 − Q4| + max|Q2 − Q3|` for the quadrants of an even-order matrix.
pub fn quadrant_residual(q: &Matrix) -> f64 {
    let d = q.nrows() / 2;
    let q1 = q.view((0, 0), (d, d));
    let q2 = q.view((0, d), (d, d));
    let q3 = q.view((d, 0), (d, d));
    let q4 = q.view((d, d), (d, d));
    (q1 - q4).amax() + (q2 - q3).amax()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mathcore::unistochastic;
    use crate::qsim::{dense_unitary, run_circuit, StateVector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    type C = Complex64;

    fn random_theta(spec: &AnsatzSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..param_count(spec)).map(|_| rng.random_range(-PI..PI)).collect()
    }

    fn random_context(spec: &AnsatzSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..spec.encoding.context_dim).map(|_| rng.random()).collect()
    }

    fn max_norm(a: &DMatrix<C>, b: &DMatrix<C>) -> f64 {
        (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn generator_at_zero_is_identity() {
        let u = dense_unitary(&checkerboard_generator(&GeneratorParams::default())).unwrap();
        assert!(max_norm(&u, &DMatrix::identity(4, 4)) < 1e-15);
    }

    #[test]
    fn generator_with_pi_rotation_has_offdiagonal_blocks() {
        let g = GeneratorParams {
            alpha: PI,
            ..Default::default()
        };
        let u = dense_unitary(&checkerboard_generator(&g)).unwrap();
        assert!(selector_pattern_residual(&u, 2, 0) < 1e-12);
        let b = u.view((0, 2), (2, 2));
        assert!(b.iter().any(|z| z.norm() > 0.5), "B' vanished:\n{u}");
    }

    #[test]
    fn generator_pattern_for_random_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let v: Vec<f64> = (0..7).map(|_| rng.random_range(-PI..PI)).collect();
            let u = dense_unitary(&checkerboard_generator(&GeneratorParams::from_slice(&v))).unwrap();
            let q = unistochastic(&u).unwrap();
            assert!(quadrant_residual(q.matrix()) < 1e-10);
        }
    }

    #[test]
    fn pattern_is_not_automatic_on_the_rotation_wire() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v: Vec<f64> = (0..7).map(|_| rng.random_range(-PI..PI)).collect();
        let u = dense_unitary(&checkerboard_generator(&GeneratorParams::from_slice(&v))).unwrap();
        assert!(selector_pattern_residual(&u, 2, 1) > 1e-3);
    }

    #[test]
    fn simple_ansatz_at_zero_is_identity() {
        let spec = AnsatzSpec::new(AnsatzKind::Simple, 2, 2, 1).with_aux(2);
        let theta = ParameterVector::zeros(&spec);
        let c = build_ansatz(&spec, theta.as_slice(), &[0.8]).unwrap();
        let u = dense_unitary(&c).unwrap();
        assert!(max_norm(&u, &DMatrix::identity(16, 16)) < 1e-15);
        for i in 0..16 {
            assert_eq!(run_circuit(&c, i).unwrap(), StateVector::basis(4, i).unwrap());
        }
    }

    #[test]
    fn checkerboard_respects_selector_pattern() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (data, aux, sel) in [(2, 2, 0), (3, 2, 0), (3, 1, 1), (2, 3, 1)] {
            let mut spec = AnsatzSpec::new(AnsatzKind::Checkerboard, data, 2, 2).with_aux(aux);
            spec.selector_qubit = sel;
            let theta = random_theta(&spec, &mut rng);
            let p = random_context(&spec, &mut rng);
            let u = dense_unitary(&build_ansatz(&spec, &theta, &p).unwrap()).unwrap();
            let r = selector_pattern_residual(&u, spec.wires(), sel);
            assert!(r < 1e-10, "data {data} aux {aux} sel {sel}: {r}");
        }
    }

    #[test]
    fn shared_layers_reuse_parameters() {
        let spec = AnsatzSpec::new(AnsatzKind::Checkerboard, 2, 2, 1)
            .with_aux(2)
            .with_shared(true);
        let one = AnsatzSpec { layers: 1, ..spec };
        assert_eq!(param_count(&spec), param_count(&one));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let theta = random_theta(&spec, &mut rng);
        let c2 = build_ansatz(&spec, &theta, &[0.3]).unwrap();
        let c1 = build_ansatz(&one, &theta, &[0.3]).unwrap();
        // 4 wires: 2 even + 1 odd block per layer, 7 gates per block.
        assert_eq!(c2.len(), 2 * 3 * 7);
        assert_eq!(&c2.gates()[..c1.len()], c1.gates());
        assert_eq!(&c2.gates()[c1.len()..], c1.gates());
    }

    #[test]
    fn param_count_examples() {
        let spec = AnsatzSpec::new(AnsatzKind::Checkerboard, 1, 1, 1).with_aux(1);
        assert_eq!(param_count(&spec), 14);
        let spec = AnsatzSpec::new(AnsatzKind::Checkerboard, 3, 3, 1);
        let shared = spec.with_shared(true);
        assert_eq!(param_count(&shared), param_count(&AnsatzSpec { layers: 1, ..spec }));
        assert_eq!(
            param_count(&AnsatzSpec { layers: 6, ..spec }),
            2 * param_count(&spec)
        );
        // Simple: 2 rotations per wire + 3 Pauli rotations per pair.
        let simple = AnsatzSpec::new(AnsatzKind::Simple, 2, 1, 1).with_aux(1);
        assert_eq!(param_count(&simple), 2 * (2 * 3 + 3 * 2));
    }

    #[test]
    fn build_rejects_bad_lengths() {
        let spec = AnsatzSpec::new(AnsatzKind::Simple, 2, 1, 2);
        let theta = ParameterVector::zeros(&spec);
        assert!(matches!(
            build_ansatz(&spec, &theta.0[1..], &[0.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(build_ansatz(&spec, theta.as_slice(), &[0.0]).is_err());
        let mut bad = spec;
        bad.selector_qubit = 2;
        assert!(build_ansatz(&bad, theta.as_slice(), &[0.0, 0.0]).is_err());
    }

    #[test]
    fn context_enters_affinely() {
        let spec = AnsatzSpec::new(AnsatzKind::Simple, 1, 1, 2).with_aux(0);
        // One wire: RZ and RY slots, contexts assigned round-robin.
        let theta = [0.1, 2.0, 0.2, -1.0];
        let c = build_ansatz(&spec, &theta, &[0.5, 0.25]).unwrap();
        assert_eq!(c.gates()[0].params, vec![0.1 + 2.0 * 0.5]);
        assert_eq!(c.gates()[1].params, vec![0.2 - 0.25]);
    }

    #[test]
    fn unitary_is_lipschitz_in_context() {
        let spec = AnsatzSpec::new(AnsatzKind::Checkerboard, 2, 2, 1).with_aux(1);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let theta = random_theta(&spec, &mut rng);
        let u0 = dense_unitary(&build_ansatz(&spec, &theta, &[0.4]).unwrap()).unwrap();
        let ks: Vec<f64> = [1e-2, 1e-3, 1e-4]
            .iter()
            .map(|eps| {
                let u = dense_unitary(&build_ansatz(&spec, &theta, &[0.4 + eps]).unwrap()).unwrap();
                max_norm(&u, &u0) / eps
            })
            .collect();
        println!("empirical Lipschitz constants: {ks:?}");
        let bound: f64 = theta.iter().skip(1).step_by(2).map(|s| s.abs()).sum();
        assert!(ks.iter().all(|k| *k <= bound), "{ks:?} > {bound}");
        assert!((ks[1] - ks[2]).abs() < 0.05 * ks[2] + 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn checkerboard_group_is_closed(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spec = AnsatzSpec::new(AnsatzKind::Checkerboard, 2, 1, 1).with_aux(2);
            let u1 = dense_unitary(&build_ansatz(&spec, &random_theta(&spec, &mut rng), &[rng.random()]).unwrap()).unwrap();
            let u2 = dense_unitary(&build_ansatz(&spec, &random_theta(&spec, &mut rng), &[rng.random()]).unwrap()).unwrap();
            prop_assert!(selector_pattern_residual(&(u1 * u2), 4, 0) < 1e-9);
        }

        #[test]
        fn checkerboard_unistochastic_quadrants(seed in any::<u64>(), layers in 1usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spec = AnsatzSpec::new(AnsatzKind::Checkerboard, 3, layers, 2).with_aux(1);
            let theta = random_theta(&spec, &mut rng);
            let p = random_context(&spec, &mut rng);
            let u = dense_unitary(&build_ansatz(&spec, &theta, &p).unwrap()).unwrap();
            let q = unistochastic(&u).unwrap();
            prop_assert!(quadrant_residual(q.matrix()) < 1e-9);
        }
    }
}

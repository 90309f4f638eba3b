//! Quantum-circuit encoding of doubly stochastic matrices and contextual
//! optimal-transport plans.
//!
//! A parameterized circuit `U(p, θ)` acting on data wires plus half of a set
//! of auxiliary Bell pairs yields, after tracing out the auxiliaries, a
//! doubly stochastic matrix. Embedding a row-stochastic matrix in the top
//! half of such a matrix and rescaling by a source marginal turns the circuit
//! into a predictor of transport plans conditioned on a context `p`.
//!
//! Modules:
//! - [`mathcore`]: plan classes, projections, shot-count bound, matrix IO.
//! - [`qsim`]: exact statevector simulator.
//! - [`ansatz`]: checkerboard and simple circuit families.
//! - [`encoder`]: circuit-to-matrix semantics and the prediction pipeline.
//! - [`otsolve`]: Sinkhorn ground truth, costs, metrics.
//! - [`datagen`]: synthetic dosage-perturbation data and DSM task data.
//! - [`train`]: losses, derivative-free optimizers, baselines, evaluation.
//! - [`neucot`]: feed-forward row-softmax baseline.

pub mod ansatz;
pub mod datagen;
pub mod encoder;
mod error;
pub mod mathcore;
pub mod neucot;
pub mod otsolve;
pub mod parallel;
pub mod qsim;
pub mod train;

pub use error::{Error, Result};

/// Dense real matrix used throughout (row-major semantics at the IO layer).
pub type Matrix = nalgebra::DMatrix<f64>;

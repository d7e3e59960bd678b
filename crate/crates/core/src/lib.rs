//! Quantum-annealing simulator and benchmark harness for small (N ≤ 14)
//! mean-variance portfolio instances.
//!
//! The pipeline is: random [`instances::PortfolioSpec`] → QUBO → normalized
//! [`instances::IsingProblem`] → time-dependent [`hamiltonian::Hamiltonian`]
//! for one annealing variant → fourth-order state-vector propagation
//! ([`evolution`]) → success probability, TTS and scaling fits
//! ([`metrics`]). [`experiments`] orchestrates the batch studies and the CLI.

pub mod error;
pub mod evolution;
pub mod exact;
pub mod experiments;
pub mod hamiltonian;
pub mod instances;
pub mod metrics;
pub mod schedules;

pub use error::{Error, Result};

use num_complex::Complex64;

/// Complex amplitude type used throughout.
pub type C64 = Complex64;

/// Largest qubit count supported by dense state vectors.
pub const MAX_STATE_QUBITS: usize = 14;

/// Largest spin count supported by classical enumeration.
pub const MAX_ENUM_SPINS: usize = 24;

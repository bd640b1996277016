//! Simulation of central-spin decoherence in nuclear spin baths.
//!
//! The crate models a single electron-spin qubit (an `S >= 1/2` defect with
//! zero-field splitting) coupled to a bath of lattice nuclear spins, and
//! computes its coherence and population dynamics under free evolution and
//! ideal pulse sequences. Two methods are provided:
//!
//! * cluster-correlation expansion with projected (level-conditioned) bath
//!   Hamiltonians — pure dephasing only,
//! * generalized cluster expansion in which every cluster contains the
//!   central spin explicitly, with mean-field corrections from the rest of
//!   the bath and Monte-Carlo sampling of pure bath states — valid through
//!   level anticrossings and clock transitions.
//!
//! Downstream analysis (decay fits, Ramsey spectra, hyperbola extraction,
//! anticrossing scans) lives in [`analysis`]; reproducible experiment
//! orchestration in [`experiment`] and [`runner`].

pub mod analysis;
pub mod cce;
pub mod constants;
pub mod dense;
pub mod error;
pub mod experiment;
pub mod hamiltonian;
pub mod linalg;
pub mod rng;
pub mod runner;
pub mod spin_model;
pub mod propagation;


pub use error::Error;
pub use hamiltonian::{Operator, QubitLevels};
pub use propagation::{DensityMatrix, PulseSequence, SequenceTemplate};
pub use spin_model::{BathSpin, CentralSpin, SpinSystem};

